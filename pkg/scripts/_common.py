"""Shared plumbing for the experiment scripts: dataclass configs become CLI flags."""

from __future__ import annotations

import argparse
import dataclasses
import json
import time
from pathlib import Path

from dbgtorus.cli import canonical


def parse_config(cls, description: str):
    """Build a parser whose flags mirror the fields of dataclass ``cls``; return an instance."""
    ap = argparse.ArgumentParser(description=description)
    for f in dataclasses.fields(cls):
        flag = "--" + f.name.replace("_", "-")
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if isinstance(default, bool):
            ap.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=default)
        elif isinstance(default, (list, tuple)):
            kind = type(default[0]) if default else float
            ap.add_argument(flag, dest=f.name, type=kind, nargs="+", default=list(default))
        else:
            ap.add_argument(flag, dest=f.name, type=type(default), default=default)
    ap.add_argument("--out", default="results", help="directory for the JSON result")
    ns = vars(ap.parse_args())
    out = Path(ns.pop("out"))
    return cls(**ns), out


def save(out: Path, name: str, cfg, result: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.json"
    path.write_text(canonical({"config": dataclasses.asdict(cfg), "result": result}) + "\n")
    return path


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0
