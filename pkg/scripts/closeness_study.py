"""Distance between the perturbed and free return maps over a grid of eps.

    python scripts/closeness_study.py --eps-grid 0.1 0.03 0.01 0.003 0.001 --n 2000
"""

from __future__ import annotations

from dataclasses import dataclass, field

from _common import Stopwatch, parse_config, save
from dbgtorus.acceptance import metric_for
from dbgtorus.returnmap import PerturbedMap, closeness_scan, reversibility_residual, section_sample


@dataclass
class Config:
    a: float = 5.0
    eps_grid: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    n: int = 2000
    c1_n: int = 500
    seed: int = 0
    potential: str = "unit"


def run(cfg: Config) -> dict:
    m = metric_for(cfg.a)
    with Stopwatch() as sw:
        rep = closeness_scan(m, cfg.eps_grid, cfg.n, 1, c1_n=cfg.c1_n, seed=cfg.seed, potential=cfg.potential)
    Z = section_sample(256, cfg.seed)
    rev = {str(e): reversibility_residual(PerturbedMap(m, e, cfg.potential), Z) for e in cfg.eps_grid}
    return {**rep.to_dict(), "reversibility": rev, "seconds": sw.seconds}


if __name__ == "__main__":
    cfg, out = parse_config(Config, __doc__.split("\n")[0])
    res = run(cfg)
    print({"order_c0": res["order_c0"], "order_c1": res["order_c1"]})
    print(save(out, "closeness_study", cfg, res))
