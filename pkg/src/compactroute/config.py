"""Build and evaluation constants, loadable from a ``key=value`` file.

Every report produced by the CLI echoes the active configuration so that a
result can be traced back to the constants that produced it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass(frozen=True)
class Config:
    # cut-matching game: round cap N_max = ceil(kappa * log2(|V'|)^2)
    kappa: float = 10.0
    # stop the game once every source is within (1 +- mix_slack/n) of c-bar
    mix_slack: float = 1.0
    # random projections tried by the cut player per round
    cut_candidates: int = 1
    # randomized rounding retry limit
    rounding_retries: int = 100
    # path-system sample budget: M = sample_factor * Nclass * ln(n + 4)
    sample_factor: float = 64.0
    # flow-TS table budget constant (bits <= c1 (deg+1) ceil(log2(nW ceil(cong))))
    c1: float = 24.0
    # helper storage budget constant for the graph embedding
    c2: float = 64.0
    # oracle tolerance and exact-LP threshold on n * |demand pairs|
    epsilon: float = 0.05
    lp_threshold: int = 200_000
    # packets that take more than step_factor * n * (header_bits + 1) hops fault
    step_factor: int = 64
    seed: int = 0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)


def load_config(path: str | Path | None) -> Config:
    """Read a ``key=value`` file; unknown keys are an error."""
    if path is None:
        return Config()
    types = {f.name: f.type for f in fields(Config)}
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            values[key] = int(val) if kind in ("int", int) else float(val)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad value {val!r} for {key}") from None
    return Config(**values)


DEFAULT = Config()
