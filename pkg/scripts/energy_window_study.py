"""Positivity indicators across the energy window around H = eps.

Each level of the perturbed kinetic Hamiltonian is run as a geodesic ensemble
of the equivalent shifted metric; the flat case is included as a control.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from _common import parse_config, save
from dbgtorus.acceptance import metric_for
from dbgtorus.returnmap import energy_window_scan


@dataclass
class Config:
    a: float = 5.0
    eps: float = 1e-2
    n_levels: int = 3
    n_orbits: int = 50
    T: float = 200.0
    seed: int = 0


def run(cfg: Config) -> dict:
    m = metric_for(cfg.a)
    dbg = energy_window_scan(m, cfg.eps, cfg.n_levels, n_orbits=cfg.n_orbits, T=cfg.T, seed=cfg.seed)
    flat = energy_window_scan(None, 0.0, cfg.n_levels, n_orbits=cfg.n_orbits, T=cfg.T, seed=cfg.seed)
    return {"dbg": [asdict(w) for w in dbg], "flat": [asdict(w) for w in flat]}


if __name__ == "__main__":
    cfg, out = parse_config(Config, __doc__.split("\n")[0])
    res = run(cfg)
    for w in res["dbg"]:
        print(w)
    print(save(out, "energy_window_study", cfg, res))
