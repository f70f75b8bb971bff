"""Flat versus DBG Lyapunov ensembles at a chosen scale.

The defaults reproduce the acceptance setting (N = 1000, T = 1e4, about
25 minutes on one core); use --n and --T to run smaller versions.

    python scripts/lyapunov_separation.py --n 200 --T 2000
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from _common import Stopwatch, parse_config, save
from dbgtorus.acceptance import metric_for
from dbgtorus.flow import HamiltonianSpec
from dbgtorus.lyapunov import SampleSpec, recurrence_stats, run_ensemble


@dataclass
class Config:
    a: float = 5.0
    n: int = 1000
    T: float = 1e4
    seed: int = 1
    stability: bool = True


def run(cfg: Config) -> dict:
    with Stopwatch() as sw_flat:
        flat = run_ensemble(SampleSpec(HamiltonianSpec("Flat"), cfg.n, cfg.T, seed=cfg.seed), keep_entries=False)
    base = flat.pesin[0]
    with Stopwatch() as sw_dbg:
        dbg = run_ensemble(SampleSpec(HamiltonianSpec("ConformalKinetic", metric_for(cfg.a)), cfg.n, cfg.T,
                                      seed=cfg.seed), stability=cfg.stability, baseline=base)
    flagged = [o for o in dbg.orbits if o.chi_2T is not None]
    ratios = np.array([o.chi_2T / o.chi for o in flagged]) if flagged else np.zeros(0)
    rec = recurrence_stats(dbg)
    T = dbg.horizon
    return {
        "flat": {"max_chi": float(flat.chis.max()), "ceiling": 2 * math.log(T) / T, "pesin": flat.pesin,
                 "seconds": sw_flat.seconds},
        "dbg": {"positive_fraction": dbg.positive_fraction, "lower95": dbg.positive_lower_bound(),
                "pesin": dbg.pesin, "pesin_over_flat": dbg.pesin[0] / base if base > 0 else math.inf,
                "ratio_2T_range": [float(ratios.min()), float(ratios.max())] if ratios.size else None,
                "mean_entries": rec.mean_count, "mean_return_time": rec.mean_return_time,
                "chi_quartiles": np.percentile(dbg.chis, [25, 50, 75]).tolist(), "seconds": sw_dbg.seconds},
    }


if __name__ == "__main__":
    cfg, out = parse_config(Config, __doc__.split("\n")[0])
    res = run(cfg)
    print(res)
    print(save(out, "lyapunov_separation", cfg, res))
