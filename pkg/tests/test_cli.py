import json

import numpy as np
import pytest

from aronsson.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    ConfigError,
    build_config,
    main,
    parse_config_text,
)
from aronsson.grid import read_csv, to_csv

ZERO_DATA = """\
# g = 0 on (-1, 1)
domain.kind = interval
domain.x0 = -1
domain.x1 = 1
g.expr = 0
tau = 1
game.eps = 0.05
solver = both
"""


def _cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_comments_and_types():
    vals = parse_config_text(ZERO_DATA)
    assert vals["domain.kind"] == "interval" and vals["tau"] == 1.0 and vals["game.eps"] == 0.05
    cfg = build_config(vals)
    assert cfg.domain.h == pytest.approx(0.01)
    assert cfg.solver == "both"


@pytest.mark.parametrize(
    "text, match",
    [
        ("tau = abc", "tau"),
        ("bogus = 1", "unknown key"),
        ("tau 1", "expected 'key = value'"),
        ("tau = 1\ntau = 2", "duplicate"),
        ("game.shrink = maybe", "game.shrink"),
        ("tau = inf", "tau"),
    ],
)
def test_parse_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


@pytest.mark.parametrize(
    "extra, match",
    [
        ("", "give h or game.eps"),
        ("game.eps = 0.05\nsolver = magic", "solver"),
        ("game.eps = 0.05\nh = 0.1", "eps"),
        ("game.eps = -1", "positive"),
        ("game.eps = 0.05\nlp.schedule = 4,2", "p_schedule"),
        ("game.eps = 0.05\nlp.schedule = a,b", "lp.schedule"),
        ("game.eps = 0.05\ngame.max_iter = 0", "at least 1"),
        ("game.eps = 0.05\nseed = -3", "seed"),
    ],
)
def test_build_errors(extra, match):
    base = "domain.kind = interval\ng.expr = 0\ntau = 1\n"
    with pytest.raises(ConfigError, match=match):
        build_config(parse_config_text(base + extra))


def test_build_rejects_y_on_interval():
    with pytest.raises(ConfigError, match="g.expr"):
        build_config(parse_config_text("domain.kind = interval\ng.expr = x+y\ntau = 1\nh = 0.1"))


def test_build_rejects_bad_expression():
    with pytest.raises(ConfigError, match="g.expr"):
        build_config(parse_config_text("domain.kind = interval\ng.expr = x +\ntau = 1\nh = 0.1"))


def test_disc_needs_radius():
    with pytest.raises(ConfigError, match="radius"):
        build_config(parse_config_text("domain.kind = disc\ng.expr = 0\ntau = 1\nh = 0.1"))


def test_invalid_tau_exit_code(tmp_path, capsys):
    path = _cfg(tmp_path, ZERO_DATA.replace("tau = 1", "tau = abc"))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "tau" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_zero_data_both(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(_cfg(tmp_path, ZERO_DATA)), "--out", str(out)]) == EXIT_OK
    for name in ("game.csv", "game.json", "game_analysis.json", "variational.csv",
                 "variational.json", "variational_analysis.json", "ordering.json"):
        assert (out / name).exists(), name
    order = json.loads((out / "ordering.json").read_text())
    assert order["ok"]
    assert order["max_gap"] == pytest.approx(0.5, abs=0.05)
    assert order["max_gap_at"] == pytest.approx([0.0], abs=0.05)
    assert order["min_gap"] == pytest.approx(0.0, abs=1e-12)
    rep = json.loads((out / "game.json").read_text())
    assert rep["spec_version"] and rep["converged"]
    assert json.loads((out / "game_analysis.json").read_text())["verdict"] == "ValueFunctionOnly"
    assert json.loads((out / "variational_analysis.json").read_text())["verdict"] == "AbsoluteMinimizerOnly"


def test_csv_outputs_round_trip(tmp_path):
    out = tmp_path / "o"
    main(["solve-game", "--config", str(_cfg(tmp_path, ZERO_DATA)), "--out", str(out)])
    text = (out / "game.csv").read_text()
    u = read_csv(out / "game.csv")
    x = u.grid.axes[0]
    assert np.max(np.abs(u.values - (x**2 / 2 - 0.5))) <= 0.05
    assert to_csv(u) == text


def test_exact1d_endpoints(tmp_path):
    out = tmp_path / "o"
    assert main(["exact1d", "--config", str(_cfg(tmp_path, ZERO_DATA)), "--out", str(out)]) == EXIT_OK
    data = json.loads((out / "exact1d.json").read_text())
    assert data["c_min"] == pytest.approx(-0.5)
    assert data["c_max"] == pytest.approx(0.0)
    assert all({"l", "r", "m1", "m2", "c"} <= set(m) for m in data["members"])


def test_exact1d_needs_interval(tmp_path):
    text = "domain.kind = rectangle\ng.expr = x\ntau = 1\nh = 0.1\n"
    assert main(["exact1d", "--config", str(_cfg(tmp_path, text))]) == EXIT_CONFIG


def test_not_converged_exit_code(tmp_path):
    path = _cfg(tmp_path, ZERO_DATA + "game.max_iter = 2\n")
    out = tmp_path / "o"
    assert main(["solve-game", "--config", str(path), "--out", str(out)]) == EXIT_NOT_CONVERGED
    # artifacts are still written
    assert (out / "game.csv").exists()
    assert json.loads((out / "game.json").read_text())["converged"] is False


def test_failed_ordering_exit_code(tmp_path):
    # a variational run stopped after a handful of steps can sit below the
    # game value; the ordering check must then fail the run
    path = _cfg(tmp_path, ZERO_DATA.replace("g.expr = 0", "g.expr = 0.89 + 0.14*(x+1)")
                + "lp.max_steps = 1\n")
    code = main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code in (EXIT_NOT_CONVERGED, EXIT_CHECK_FAILED)
    assert code != EXIT_OK


def test_classify(tmp_path, capsys):
    out = tmp_path / "o"
    main(["solve-variational", "--config", str(_cfg(tmp_path, ZERO_DATA)), "--out", str(out)])
    capsys.readouterr()
    assert main(["classify", str(out / "variational.csv"), "--out", str(out)]) == EXIT_OK
    assert "AbsoluteMinimizerOnly" in capsys.readouterr().out
    assert (out / "variational_analysis.json").exists()


def test_seed_flag_overrides(tmp_path):
    path = _cfg(tmp_path, ZERO_DATA)
    assert main(["solve-game", "--config", str(path), "--seed", "-1"]) == EXIT_CONFIG


def test_verify_fixture_directory(tmp_path):
    fx = tmp_path / "fx"
    fx.mkdir()
    (fx / "flat.cfg").write_text(ZERO_DATA)
    out = tmp_path / "v"
    assert main(["verify", str(fx), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "verify.json").read_text())
    assert "flat" in json.dumps(summary)
    assert (out / "flat" / "checks.json").exists()


def test_verify_empty_directory(tmp_path):
    assert main(["verify", str(tmp_path)]) == EXIT_CONFIG


def test_exact1d_tau_zero(tmp_path):
    text = "domain.kind = interval\ng.expr = 2*x\ntau = 0\nh = 0.1\n"
    out = tmp_path / "nested" / "o"
    assert main(["exact1d", "--config", str(_cfg(tmp_path, text)), "--out", str(out)]) == EXIT_OK
    u = read_csv(out / "exact1d_unique.csv")
    np.testing.assert_allclose(u.values, 2 * u.grid.axes[0], atol=1e-12)
