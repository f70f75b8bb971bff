"""Exit value of u for Jacobi fields entering a cap chord on the cone boundary.

Scans Clairaut values across the deep and shallow ranges and compares the
transfer-matrix computation (closed-form metric) with propagation through the
tabulated flow kernels.  Deep chords should exit at u = 0 exactly; the
difference between the two methods grows as the Clairaut value approaches
the critical parallel r1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from _common import parse_config, save
from dbgtorus import jacobi as J
from dbgtorus.acceptance import metric_for


@dataclass
class Config:
    a: float = 5.0
    n: int = 60
    u_entry: float = 0.0


def run(cfg: Config) -> dict:
    m = metric_for(cfg.a)
    c_deep = float(J.rG(m, m.r1))
    c_max = float(J.rG(m, m.r2))
    # cluster samples near the critical value from both sides
    s = np.linspace(-1.0, 1.0, cfg.n)
    cs = c_deep + np.sign(s) * np.abs(s) ** 3 * np.where(s < 0, c_deep, c_max - c_deep) * 0.999
    rows = []
    for c in cs:
        ch = J.chord_from_clairaut(m, float(c))
        rows.append({"clairaut": float(c), "deep": ch.deep, "T1": ch.T1,
                     "u_transfer": J.cone_transit(ch, cfg.u_entry),
                     "u_trace": J.cone_transit(ch, cfg.u_entry, method="trace")})
    deep = [r for r in rows if r["deep"]]
    return {"critical_clairaut": c_deep, "rows": rows,
            "deep_max_abs_u_transfer": max(abs(r["u_transfer"]) for r in deep),
            "deep_max_abs_u_trace": max(abs(r["u_trace"]) for r in deep),
            "shallow_min_u": min(r["u_transfer"] for r in rows if not r["deep"])}


if __name__ == "__main__":
    cfg, out = parse_config(Config, __doc__.split("\n")[0])
    res = run(cfg)
    print({k: v for k, v in res.items() if k != "rows"})
    print(save(out, "cone_boundary_study", cfg, res))
