"""Step size and level projection for the Lyapunov ensembles.

For a handful of DBG orbits, runs the second-order midpoint scheme at several
steps, with and without rescaling the momentum back onto the energy level at
every disc exit, and records the final energy error, the exponent and the
cost.  The rescaling only reparametrises time because H is quadratic in p.

    python scripts/lyapunov_step_study.py --steps 0.01 0.007 0.005 --T 2000
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from _common import Stopwatch, parse_config, save
from dbgtorus.acceptance import metric_for
from dbgtorus.flow import HamiltonianSpec, hamiltonian_value
from dbgtorus.lyapunov import SampleSpec, _run_batch, _draw


@dataclass
class Config:
    a: float = 5.0
    n_orbits: int = 8
    T: float = 2000.0
    seed: int = 11
    steps: list = field(default_factory=lambda: [1e-2, 7e-3, 5e-3])


def run(cfg: Config) -> dict:
    spec_h = HamiltonianSpec("ConformalKinetic", metric_for(cfg.a))
    rows = []
    for h in cfg.steps:
        for project in (False, True):
            spec = SampleSpec(spec_h, cfg.n_orbits, cfg.T, seed=cfg.seed, h=h, project=project)
            draws = [_draw(spec, i) for i in range(cfg.n_orbits)]
            try:
                with Stopwatch() as sw:
                    out, counts, _, finals, _ = _run_batch(spec, [d[0] for d in draws],
                                                           [d[1] for d in draws], spec.n_chunks,
                                                           spec.n_chunks)
            except Exception as exc:  # an orbit leaving the admissible energy range is a result here
                rows.append({"h": h, "project": project, "error": type(exc).__name__})
                continue
            energies = np.array([hamiltonian_value(spec_h, s) for s in finals])
            rows.append({"h": h, "project": project,
                         "max_energy_error": float(np.abs(energies - spec.energy_level).max()),
                         "chi_mean": float(np.mean(out[:, 1]) / spec.horizon),
                         "us_per_orbit_time": 1e6 * sw.seconds / (cfg.n_orbits * spec.horizon)})
            print(rows[-1], flush=True)
    return {"rows": rows}


if __name__ == "__main__":
    cfg, out = parse_config(Config, __doc__.split("\n")[0])
    print(save(out, "lyapunov_step_study", cfg, run(cfg)))
