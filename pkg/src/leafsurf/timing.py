"""Wall-clock accounting for pipeline stages."""

from __future__ import annotations

import json
import time
from contextlib import contextmanager

# stage labels in report order
STAGES = (
    "Fit micro-scale interpolant",
    "Fit leaf coordinate system",
    "Use world to leaf transform",
    "Fit macro-scale interpolant",
    "α-shape exclusion of exterior points",
    "Evaluating implicit function at interior points",
    "Polygonizing with marching tetrahedra",
    "Sample height map",
    "Transform triangles back to world coords",
)


@contextmanager
def clock(timings: dict | None, key: str):
    """Add the elapsed time of the block to ``timings[key]`` (no-op for None)."""
    if timings is None:
        yield
        return
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[key] = timings.get(key, 0.0) + time.perf_counter() - t0


class StageTimer:
    """Accumulates per-stage seconds and item counts."""

    def __init__(self):
        self.seconds: dict[str, float] = {}
        self.notes: dict[str, str] = {}
        self._t0 = time.perf_counter()

    def stage(self, key: str):
        return clock(self.seconds, key)

    def note(self, key: str, text: str):
        self.notes[key] = text

    def merge(self, timings: dict):
        for k, v in timings.items():
            self.seconds[k] = self.seconds.get(k, 0.0) + v

    @property
    def total(self) -> float:
        return time.perf_counter() - self._t0

    def rows(self):
        order = [s for s in STAGES if s in self.seconds]
        order += sorted(k for k in self.seconds if k not in STAGES)
        return [(k, self.notes.get(k, ""), self.seconds[k]) for k in order]

    def report(self) -> str:
        rows = self.rows()
        w0 = max([len("Stage")] + [len(r[0]) for r in rows])
        w1 = max([len("Size")] + [len(r[1]) for r in rows])
        lines = [f"{'Stage':<{w0}}  {'Size':<{w1}}  {'Time (s)':>9}",
                 "-" * (w0 + w1 + 13)]
        for k, note, sec in rows:
            lines.append(f"{k:<{w0}}  {note:<{w1}}  {sec:9.2f}")
        lines.append("-" * (w0 + w1 + 13))
        lines.append(f"{'Total wall time':<{w0}}  {'':<{w1}}  {self.total:9.2f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"stages": [{"stage": k, "size": n, "seconds": s}
                                      for k, n, s in self.rows()],
                           "total_seconds": self.total}, indent=2, ensure_ascii=False)
