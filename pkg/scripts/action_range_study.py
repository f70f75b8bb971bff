"""Momentum oscillation of perturbed orbits at horizons T and 2T, for several T.

A ratio near 1 at the longest horizon is the numerical signature of bounded
actions.  The acceptance run uses 100 orbits at T = 1e4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from _common import Stopwatch, parse_config, save
from dbgtorus.acceptance import metric_for
from dbgtorus.returnmap import action_range, section_sample


@dataclass
class Config:
    a: float = 5.0
    eps: float = 1e-2
    n_orbits: int = 20
    horizons: list = field(default_factory=lambda: [1e2, 1e3])
    seed: int = 3


def run(cfg: Config) -> dict:
    m = metric_for(cfg.a)
    Z = section_sample(cfg.n_orbits, cfg.seed)
    rows = []
    for T in cfg.horizons:
        with Stopwatch() as sw:
            rep = action_range(m, cfg.eps, Z, T)
        rows.append({"T": T, "osc_T": rep.osc_T, "osc_2T": rep.osc_2T, "ratio": rep.ratio,
                     "seconds": sw.seconds})
        print(rows[-1], flush=True)
    return {"rows": rows}


if __name__ == "__main__":
    cfg, out = parse_config(Config, __doc__.split("\n")[0])
    print(save(out, "action_range_study", cfg, run(cfg)))
