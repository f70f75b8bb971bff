"""Cap geometry and certificates as the cap parameter a varies.

Records r0, r1, r2, the lens shadow limit and the exclusion count of the
lens decomposition, which tells which a values let the ball shadow cover the
support region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from _common import parse_config, save
from dbgtorus.conformal import build_metric, dbg_certificate
from dbgtorus.lens import ball_shadow_radius_limit, decomposition_check, support_sample
from dbgtorus.profile import CapParams, build_profile


@dataclass
class Config:
    a_values: list = field(default_factory=lambda: [5.0, 8.0, 10.0, 15.0, 25.0])
    n: int = 1000
    seed: int = 0


def run(cfg: Config) -> dict:
    rows = []
    for a in cfg.a_values:
        m = build_metric(build_profile(CapParams(a=a)))
        dec = decomposition_check(support_sample(m, cfg.n, cfg.seed), a)
        rows.append({"a": a, "r0": m.r0, "r1": m.r1, "r2": m.r2, "g_inf": m.g_inf,
                     "certified": dbg_certificate(m).passed, "excluded": dec.excluded,
                     "decomposition_residual": dec.max_residual})
        print(rows[-1], flush=True)
    return {"shadow_radius_limit": ball_shadow_radius_limit(), "rows": rows}


if __name__ == "__main__":
    cfg, out = parse_config(Config, __doc__.split("\n")[0])
    print(save(out, "cap_scan", cfg, run(cfg)))
