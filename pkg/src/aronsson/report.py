from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

SCHEMA_VERSION = "1.0"


class SolverError(RuntimeError):
    """Hard failure: NaN or overflow during an iteration."""


@dataclass
class SolveReport:
    solver: str
    iterations: int = 0
    residual: float = float("nan")
    change: float = float("nan")
    converged: bool = False
    wall_time: float = 0.0
    details: dict = field(default_factory=dict)

    def to_dict(self, timing: bool = True) -> dict:
        d = {"spec_version": SCHEMA_VERSION, **asdict(self)}
        if not timing:
            d.pop("wall_time")
            _strip_timing(d["details"])
        return d

    def to_json(self, timing: bool = True) -> str:
        return dump_json(self.to_dict(timing))


def _strip_timing(obj):
    if isinstance(obj, dict):
        for k in [k for k in obj if k.endswith("wall_time")]:
            obj.pop(k)
        for v in obj.values():
            _strip_timing(v)
    elif isinstance(obj, list):
        for v in obj:
            _strip_timing(v)


def _clean(obj):
    if isinstance(obj, float):
        if obj != obj or obj in (float("inf"), float("-inf")):
            return repr(obj)
        return obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def dump_json(obj) -> str:
    """Deterministic JSON (sorted keys, non-finite floats as strings)."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"
