"""Command-line driver.

Configs are flat ``key = value`` files (``#`` starts a comment)::

    domain.kind = interval
    domain.x0 = -1
    domain.x1 = 1
    g.expr = 0
    tau = 1
    game.eps = 0.02
    game.ratio = 5        # h = eps / ratio unless h is given
    solver = both
    out.dir = out/zero_data

Exit codes: 0 success, 1 solver failure, 2 bad configuration or input,
3 a solver did not converge, 4 a requested check failed.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import analysis, exact1d
from .expr import ExprError, parse_expr
from .game import GameParams, dpp_operator, supersolution_residual, value_iteration
from .grid import DomainSpec, GridError, GridFunction, Problem, read_csv, write_csv
from .report import SCHEMA_VERSION, SolverError, dump_json
from .variational import LpParams, minimize_lp

logger = logging.getLogger("aronsson")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_CHECK_FAILED = 0, 1, 2, 3, 4
SOLVERS = ("game", "variational", "exact1d", "both")
ORDER_TOL = 0.05

KEYS = {
    "domain.kind": str,
    "domain.x0": float,
    "domain.x1": float,
    "domain.y0": float,
    "domain.y1": float,
    "domain.cx": float,
    "domain.cy": float,
    "domain.radius": float,
    "h": float,
    "g.expr": str,
    "tau": float,
    "solver": str,
    "game.eps": float,
    "game.ratio": float,
    "game.tol": float,
    "game.max_iter": int,
    "game.sweep": str,
    "game.shrink": bool,
    "lp.schedule": str,
    "lp.tol": float,
    "lp.max_steps": int,
    "check.trials": int,
    "check.batch": int,
    "out.dir": str,
    "seed": int,
    "threads": int,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    domain: DomainSpec
    g_expr: str
    tau: float
    solver: str = "both"
    game: GameParams | None = None
    lp: LpParams = field(default_factory=LpParams)
    out_dir: Path = Path("out")
    seed: int = 0
    threads: int | None = None
    check_trials: int = 20
    check_batch: int = 10
    source: str = ""

    def problem(self) -> Problem:
        return Problem.make(self.domain, self.g_expr, self.tau)

    def to_dict(self) -> dict:
        d = self.domain
        return {
            "domain": {"kind": d.kind, "extents": [list(e) for e in d.extents], "h": d.h,
                       "center": list(d.center) if d.center else None, "radius": d.radius},
            "g": self.g_expr,
            "tau": self.tau,
            "solver": self.solver,
            "game": None if self.game is None else {
                "eps": self.game.eps, "tol": self.game.tol, "max_iter": self.game.max_iter,
                "sweep": self.game.sweep, "shrink": self.game.shrink},
            "lp": {"schedule": list(self.lp.p_schedule), "tol": self.lp.tol,
                   "max_steps": self.lp.max_steps},
            "seed": self.seed,
        }


def _convert(key: str, raw: str):
    kind = KEYS[key]
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    return values


def _positive(values: dict, key: str):
    v = values.get(key)
    if v is not None and not v > 0:
        raise ConfigError(f"{key} must be positive, got {v}")
    return v


def build_config(values: dict, source: str = "<config>") -> RunConfig:
    for key in ("domain.kind", "g.expr", "tau"):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    solver = values.get("solver", "both")
    if solver not in SOLVERS:
        raise ConfigError(f"solver must be one of {SOLVERS}, got {solver!r}")
    for key in ("h", "game.eps", "game.ratio", "game.tol", "lp.tol", "domain.radius"):
        _positive(values, key)
    for key in ("game.max_iter", "lp.max_steps", "check.trials", "check.batch", "threads"):
        if key in values and values[key] < 1:
            raise ConfigError(f"{key} must be at least 1, got {values[key]}")
    if values.get("seed", 0) < 0:
        raise ConfigError("seed must be nonnegative")

    eps, h = values.get("game.eps"), values.get("h")
    ratio = values.get("game.ratio", 5.0)
    if h is None and eps is None:
        raise ConfigError("give h or game.eps")
    if h is None:
        h = eps / ratio
    if eps is None:
        eps = ratio * h

    kind = values["domain.kind"]
    try:
        if kind == "interval":
            ext = [(values.get("domain.x0", -1.0), values.get("domain.x1", 1.0))]
            domain = DomainSpec(kind, ext, h)
        elif kind in ("rectangle", "disc"):
            ext = [(values.get("domain.x0", 0.0 if kind == "rectangle" else -1.0),
                    values.get("domain.x1", 1.0)),
                   (values.get("domain.y0", 0.0 if kind == "rectangle" else -1.0),
                    values.get("domain.y1", 1.0))]
            if kind == "disc":
                center = None
                if "domain.cx" in values or "domain.cy" in values:
                    center = (values.get("domain.cx", 0.5 * sum(ext[0])),
                              values.get("domain.cy", 0.5 * sum(ext[1])))
                if "domain.radius" not in values:
                    raise ConfigError("disc domain needs domain.radius")
                domain = DomainSpec(kind, ext, h, center, values["domain.radius"])
            else:
                domain = DomainSpec(kind, ext, h)
        else:
            raise ConfigError(f"domain.kind must be interval, rectangle or disc, got {kind!r}")
    except GridError as exc:
        raise ConfigError(f"domain: {exc}") from None

    try:
        expr = parse_expr(values["g.expr"])
    except ExprError as exc:
        raise ConfigError(f"g.expr: {exc}") from None
    extra = set(expr.variables) - set("xy"[: domain.ndim])
    if extra:
        raise ConfigError(f"g.expr uses {sorted(extra)} on a {domain.ndim}D domain")

    game = GameParams(eps=eps, tol=values.get("game.tol", 1e-9),
                      max_iter=values.get("game.max_iter", 500_000),
                      sweep=values.get("game.sweep", "gauss-seidel"),
                      shrink=values.get("game.shrink", True))
    try:
        game.validate(h)
    except (GridError, ValueError) as exc:
        raise ConfigError(f"game: {exc}") from None

    lp = LpParams()
    if "lp.schedule" in values:
        try:
            lp.p_schedule = tuple(float(s) for s in values["lp.schedule"].split(","))
        except ValueError:
            raise ConfigError(f"lp.schedule: expected comma-separated numbers, got {values['lp.schedule']!r}") from None
    if "lp.tol" in values:
        lp.tol = values["lp.tol"]
    if "lp.max_steps" in values:
        lp.max_steps = values["lp.max_steps"]
    try:
        lp.validate()
    except ValueError as exc:
        raise ConfigError(f"lp: {exc}") from None

    if solver == "exact1d" and kind != "interval":
        raise ConfigError("solver exact1d needs an interval domain")

    return RunConfig(
        domain=domain,
        g_expr=values["g.expr"],
        tau=values["tau"],
        solver=solver,
        game=game,
        lp=lp,
        out_dir=Path(values.get("out.dir", "out")),
        seed=values.get("seed", 0),
        threads=values.get("threads"),
        check_trials=values.get("check.trials", 20),
        check_batch=values.get("check.batch", 10),
        source=source,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return build_config(parse_config_text(text, str(path)), str(path))


# runs ------------------------------------------------------------------------

@dataclass
class Outcome:
    converged: bool = True
    checks_ok: bool = True
    messages: list = field(default_factory=list)

    def merge(self, other: "Outcome"):
        self.converged &= other.converged
        self.checks_ok &= other.checks_ok
        self.messages += other.messages

    @property
    def code(self) -> int:
        if not self.converged:
            return EXIT_NOT_CONVERGED
        if not self.checks_ok:
            return EXIT_CHECK_FAILED
        return EXIT_OK


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _analysis_dict(u: GridFunction) -> dict:
    c = analysis.classify(u)
    return {"spec_version": SCHEMA_VERSION, **c.to_dict(u.grid)}


def _solve(cfg: RunConfig, which: str, out: Path, timing: bool, outcome: Outcome, problem=None):
    problem = problem or cfg.problem()
    out.mkdir(parents=True, exist_ok=True)
    if which == "game":
        u, rep = value_iteration(problem, cfg.game)
    else:
        u, rep = minimize_lp(problem, cfg.lp)
    write_csv(u, out / f"{which}.csv")
    _write(out, f"{which}.json", rep.to_json(timing))
    _write(out, f"{which}_analysis.json", dump_json(_analysis_dict(u)))
    if not rep.converged:
        outcome.converged = False
        outcome.messages.append(f"{which} solver did not converge")
    return u, rep


def _ordering(u_game, u_var, tau: float) -> tuple[dict, bool]:
    """Game value below the variational output (reversed for tau < 0)."""
    lo, hi = (u_game, u_var) if tau >= 0 else (u_var, u_game)
    res = analysis.check_ordering(lo, hi, ORDER_TOL)
    d = {
        "spec_version": SCHEMA_VERSION,
        "lower": "game" if tau >= 0 else "variational",
        "upper": "variational" if tau >= 0 else "game",
        "tol": ORDER_TOL,
        "ok": res.ok,
        "worst_violation": res.worst_violation,
        "max_gap": res.max_gap,
        "max_gap_at": list(res.max_gap_at),
        "min_gap": res.min_gap,
    }
    if tau == 0:
        # unique solution: the two should agree both ways
        back = analysis.check_ordering(hi, lo, ORDER_TOL)
        d["reverse_worst_violation"] = back.worst_violation
        d["ok"] = res.ok and back.ok
    return d, d["ok"]


def _exact1d(cfg: RunConfig, out: Path, outcome: Outcome):
    problem = cfg.problem()
    out.mkdir(parents=True, exist_ok=True)
    (l, r), = cfg.domain.extents
    expr = parse_expr(cfg.g_expr)
    gl, gr = float(expr(x=np.float64(l))), float(expr(x=np.float64(r)))
    if cfg.tau == 0:
        d = {"spec_version": SCHEMA_VERSION, "tau": 0.0, "unique": True,
             "note": "tau = 0: the linear interpolant is the only solution",
             "g_l": gl, "g_r": gr}
        lin = GridFunction.from_callable(problem.grid, lambda x: gl + (gr - gl) * (x - l) / (r - l))
        write_csv(lin, out / "exact1d_unique.csv")
        _write(out, "exact1d.json", dump_json(d))
        return d
    fam = exact1d.family(l, r, gl, gr, cfg.tau)
    lo, hi = exact1d.minimal(l, r, gl, gr, cfg.tau), exact1d.maximal(l, r, gl, gr, cfg.tau)
    d = {
        "spec_version": SCHEMA_VERSION,
        "tau": cfg.tau,
        "g_l": gl,
        "g_r": gr,
        "c_min": fam.c_min,
        "c_max": fam.c_max,
        "vertex": fam.vertex,
        "single": fam.is_single,
        "minimal": lo.to_dict(),
        "maximal": hi.to_dict(),
        "members": [m.to_dict() for m in fam.enumerate()],
    }
    write_csv(exact1d.sample(lo, problem.grid), out / "exact1d_minimal.csv")
    write_csv(exact1d.sample(hi, problem.grid), out / "exact1d_maximal.csv")
    _write(out, "exact1d.json", dump_json(d))
    return d


def run(cfg: RunConfig, solver: str | None = None, out: Path | None = None, timing: bool = True) -> Outcome:
    """Execute the requested solver(s) and write artifacts under ``out``."""
    solver = solver or cfg.solver
    out = Path(out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outcome = Outcome()
    _write(out, "config.json", dump_json({"spec_version": SCHEMA_VERSION, **cfg.to_dict()}))
    if solver == "exact1d":
        _exact1d(cfg, out, outcome)
        return outcome
    problem = cfg.problem()
    results = {}
    if solver in ("game", "both"):
        results["game"] = _solve(cfg, "game", out, timing, outcome, problem)[0]
    if solver in ("variational", "both"):
        results["variational"] = _solve(cfg, "variational", out, timing, outcome, problem)[0]
    if solver == "both":
        d, ok = _ordering(results["game"], results["variational"], cfg.tau)
        _write(out, "ordering.json", dump_json(d))
        if not ok:
            outcome.checks_ok = False
            outcome.messages.append(f"ordering violated by {d['worst_violation']:.3g}")
    return outcome


# verify battery ------------------------------------------------------------

BUILTIN_FIXTURES = {
    "interval_flat": """
domain.kind = interval
domain.x0 = -1
domain.x1 = 1
g.expr = 0
tau = 1
game.eps = 0.02
""",
    "interval_pair": """
domain.kind = interval
domain.x0 = -1
domain.x1 = 1
g.expr = 0.89 + 0.14*(x+1)
tau = 1
game.eps = 0.02
""",
    "square_linear": """
domain.kind = rectangle
domain.x0 = 0
domain.x1 = 1
domain.y0 = 0
domain.y1 = 1
g.expr = x
tau = 0
game.eps = 0.1
h = 0.02
""",
    "disc_flat": """
domain.kind = disc
domain.x0 = -1.1
domain.x1 = 1.1
domain.y0 = -1.1
domain.y1 = 1.1
domain.radius = 1
g.expr = 0
tau = 1
game.eps = 0.1
h = 0.02
""",
}


def _check(checks: dict, name: str, ok: bool, **info):
    checks[name] = {"ok": bool(ok), **info}


def _dpp_checks(u: GridFunction, eps: float, tau: float, rng, pairs: int = 20) -> dict:
    grid = u.grid
    worst_mono, worst_shift = 0.0, 0.0
    for _ in range(pairs):
        a = np.where(grid.active, rng.normal(size=grid.shape), np.nan)
        b = a + np.where(grid.active, rng.uniform(0, 1, size=grid.shape), np.nan)
        ta = dpp_operator(GridFunction(grid, a), eps, tau).values
        tb = dpp_operator(GridFunction(grid, b), eps, tau).values
        worst_mono = max(worst_mono, float(np.nanmax(ta - tb)))
        c = float(rng.uniform(-3, 3))
        tc = dpp_operator(GridFunction(grid, a + c), eps, tau).values
        worst_shift = max(worst_shift, float(np.nanmax(np.abs(tc[grid.interior] - ta[grid.interior] - c))))
    return {"monotone_violation": worst_mono, "shift_error": worst_shift}


def verify_fixture(name: str, cfg: RunConfig, out: Path) -> tuple[dict, Outcome]:
    outcome = Outcome()
    fx_out = out / name
    problem = cfg.problem()
    u_g, rep_g = _solve(cfg, "game", fx_out, False, outcome, problem)
    u_v, rep_v = _solve(cfg, "variational", fx_out, False, outcome, problem)
    rng = np.random.default_rng(cfg.seed)
    checks = {}
    sign = 1.0 if cfg.tau >= 0 else -1.0

    _check(checks, "game_converged", rep_g.converged, iterations=rep_g.iterations)
    _check(checks, "variational_converged", rep_v.converged, iterations=rep_v.iterations)
    flats = analysis.detect_flat_pieces(u_g)
    _check(checks, "game_no_flat_pieces", not flats, count=len(flats))
    wells = analysis.detect_wells(u_v)
    _check(checks, "variational_no_wells", not wells, count=len(wells))
    for label, u in (("game", u_g), ("variational", u_v)):
        mp = analysis.check_max_principle(u * sign)
        _check(checks, f"{label}_max_principle", mp.ok, margin=mp.margin)
    d, ok = _ordering(u_g, u_v, cfg.tau)
    _check(checks, "ordering", ok, worst_violation=d["worst_violation"], max_gap=d["max_gap"])

    eps = cfg.game.eps
    res = supersolution_residual(u_g * sign, eps, sign * cfg.tau, cfg.game.shrink)
    floor = float(np.nanmin(res.values[problem.grid.interior]))
    _check(checks, "game_supersolution", floor >= -0.01 * eps**2, min_residual=floor)

    dpp = _dpp_checks(u_g, eps, cfg.tau, rng)
    _check(checks, "dpp_monotone", dpp["monotone_violation"] <= 1e-12, **dpp)
    _check(checks, "dpp_shift", dpp["shift_error"] <= 1e-12)

    am = analysis.check_absolute_minimizing(
        u_v * sign, trials=cfg.check_trials, seed=int(rng.integers(2**31)),
        tau=sign * cfg.tau, slack=0.05, batch=cfg.check_batch,
    )
    _check(checks, "variational_absolute_minimizing", am.passed,
           perturbations=am.perturbations, worst_margin=am.worst_margin)

    if cfg.domain.kind == "interval" and cfg.tau != 0:
        ex = _exact1d(cfg, fx_out, Outcome())
        grid = problem.grid
        lo = exact1d.sample(exact1d.ParabolaFlatSolution(**ex["minimal"]), grid)
        hi = exact1d.sample(exact1d.ParabolaFlatSolution(**ex["maximal"]), grid)
        eg, ev = u_g.sup_distance(lo), u_v.sup_distance(hi)
        _check(checks, "game_matches_exact", eg <= 0.05, error=eg)
        _check(checks, "variational_matches_exact", ev <= 0.05, error=ev)

    failed = [k for k, v in checks.items() if not v["ok"]]
    if failed:
        outcome.checks_ok = False
        outcome.messages.append(f"{name}: failed {', '.join(failed)}")
    summary = {"fixture": name, "config": cfg.to_dict(), "checks": checks, "ok": not failed}
    _write(fx_out, "checks.json", dump_json({"spec_version": SCHEMA_VERSION, **summary}))
    return summary, outcome


def verify(fixtures: dict[str, RunConfig], out: Path) -> Outcome:
    total = Outcome()
    summaries = []
    for name in sorted(fixtures):
        logger.info("verify: %s", name)
        summary, outcome = verify_fixture(name, fixtures[name], out)
        summaries.append({"fixture": name, "ok": summary["ok"],
                          "failed": [k for k, v in summary["checks"].items() if not v["ok"]]})
        total.merge(outcome)
    _write(out, "verify.json", dump_json({
        "spec_version": SCHEMA_VERSION,
        "fixtures": summaries,
        "ok": all(s["ok"] for s in summaries),
    }))
    return total


def load_fixtures(directory: Path | None, seed: int) -> dict[str, RunConfig]:
    if directory is None:
        return {k: _with_seed(build_config(parse_config_text(v, k), k), seed)
                for k, v in BUILTIN_FIXTURES.items()}
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"fixture directory {directory} does not exist")
    files = sorted(directory.glob("*.cfg"))
    if not files:
        raise ConfigError(f"no *.cfg fixtures in {directory}")
    return {f.stem: _with_seed(load_config(f), seed) for f in files}


def _with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is not None:
        cfg.seed = seed
    return cfg


# entry point -------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="output directory (overrides out.dir)")
    common.add_argument("--threads", type=int, help="worker threads for the parallel kernels")
    common.add_argument("--seed", type=int, help="seed for randomized checks")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="aronsson", description="Game-value and absolute-minimizer solvers")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run the solver named in the config"),
        ("solve-game", "tug-of-war value iteration"),
        ("solve-variational", "L^p absolute-minimizer approximation"),
        ("exact1d", "closed-form solution family on an interval"),
    ):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--config", type=Path, required=True)
    sp = sub.add_parser("classify", parents=[common], help="wells and flat pieces of a CSV field")
    sp.add_argument("field", type=Path)
    sp = sub.add_parser("verify", parents=[common], help="invariant battery on a fixture directory")
    sp.add_argument("fixtures", type=Path, nargs="?", help="directory of *.cfg files (default: built-in)")
    return p


def _set_threads(n: int | None):
    if n is None:
        return
    if n < 1:
        raise ConfigError("threads must be at least 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if args.command == "classify":
            _set_threads(args.threads)
            u = read_csv(args.field)
            d = _analysis_dict(u)
            text = dump_json(d)
            if args.out:
                _write(args.out, args.field.stem + "_analysis.json", text)
            print(f"{args.field}: {d['verdict']} ({len(d['wells'])} wells, {len(d['flat_pieces'])} flat pieces)")
            return EXIT_OK
        if args.command == "verify":
            _set_threads(args.threads)
            fixtures = load_fixtures(args.fixtures, args.seed if args.seed is not None else 0)
            out = args.out or Path("verify_out")
            outcome = verify(fixtures, out)
        else:
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            _set_threads(args.threads if args.threads is not None else cfg.threads)
            solver = {"run": None, "solve-game": "game", "solve-variational": "variational",
                      "exact1d": "exact1d"}[args.command]
            if solver == "exact1d" and cfg.domain.kind != "interval":
                raise ConfigError("exact1d needs an interval domain")
            out = args.out or cfg.out_dir
            outcome = run(cfg, solver, out)
    except (ConfigError, GridError, ExprError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FloatingPointError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for msg in outcome.messages:
        print(msg, file=sys.stderr)
    status = {EXIT_OK: "ok", EXIT_NOT_CONVERGED: "not converged", EXIT_CHECK_FAILED: "check failed"}
    print(f"{args.command}: {status[outcome.code]} -> {out} ({time.perf_counter() - t0:.1f} s)")
    return outcome.code


if __name__ == "__main__":
    sys.exit(main())
