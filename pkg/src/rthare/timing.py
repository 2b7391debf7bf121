"""Per-job timing records shared by the live pipeline and the simulator.

One row per clip job. The CSV column set is fixed:
clip_index, arrival_ms, start_ms, motion_ms, rgb_ms, recog_ms, post_ms,
end_ms, deadline_ms, missed (0/1).

Stage columns hold each stage's own duration; ``end_ms - start_ms`` is the
job's critical-path time (parallel stage groups overlap) plus any fixed
overhead, so stage columns need not sum to it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np

__all__ = ["JobRecord", "TimingLog"]

_COLUMNS = ("clip_index", "arrival_ms", "start_ms", "motion_ms", "rgb_ms",
            "recog_ms", "post_ms", "end_ms", "deadline_ms", "missed")


@dataclass
class JobRecord:
    clip_index: int
    arrival_ms: float
    start_ms: float
    motion_ms: float
    rgb_ms: float
    recog_ms: float
    post_ms: float
    end_ms: float
    deadline_ms: float
    missed: int
    failed: bool = False  # in-memory only, not a CSV column

    @property
    def latency_ms(self) -> float:
        return self.end_ms - self.arrival_ms


class TimingLog:
    """Columnar log of job records with CSV round-tripping."""

    def __init__(self):
        self._cols = {name: [] for name in _COLUMNS}
        self._failed: List[bool] = []

    def __len__(self) -> int:
        return len(self._cols["clip_index"])

    def append(self, rec: JobRecord) -> None:
        for name in _COLUMNS:
            self._cols[name].append(getattr(rec, name))
        self._failed.append(rec.failed)

    def extend_columns(self, clip_index, arrival_ms, start_ms, motion_ms, rgb_ms,
                       recog_ms, post_ms, end_ms, deadline_ms, missed) -> None:
        """Bulk append from parallel arrays (simulator path)."""
        cols = dict(clip_index=clip_index, arrival_ms=arrival_ms, start_ms=start_ms,
                    motion_ms=motion_ms, rgb_ms=rgb_ms, recog_ms=recog_ms,
                    post_ms=post_ms, end_ms=end_ms, deadline_ms=deadline_ms,
                    missed=missed)
        n = len(cols["clip_index"])
        for name, values in cols.items():
            values = list(np.asarray(values).tolist())
            if len(values) != n:
                raise ValueError(f"column {name} has {len(values)} rows, expected {n}")
            self._cols[name].extend(values)
        self._failed.extend([False] * n)

    def column(self, name: str) -> np.ndarray:
        if name not in self._cols:
            raise KeyError(f"unknown timing column {name!r}")
        return np.asarray(self._cols[name], dtype=np.float64)

    def records(self) -> Iterator[JobRecord]:
        for i in range(len(self)):
            yield JobRecord(
                clip_index=int(self._cols["clip_index"][i]),
                arrival_ms=float(self._cols["arrival_ms"][i]),
                start_ms=float(self._cols["start_ms"][i]),
                motion_ms=float(self._cols["motion_ms"][i]),
                rgb_ms=float(self._cols["rgb_ms"][i]),
                recog_ms=float(self._cols["recog_ms"][i]),
                post_ms=float(self._cols["post_ms"][i]),
                end_ms=float(self._cols["end_ms"][i]),
                deadline_ms=float(self._cols["deadline_ms"][i]),
                missed=int(self._cols["missed"][i]),
                failed=self._failed[i],
            )

    def latencies_ms(self) -> np.ndarray:
        return self.column("end_ms") - self.column("arrival_ms")

    def summary(self) -> dict:
        lat = self.latencies_ms()
        return {
            "jobs": len(self),
            "mean_ms": float(lat.mean()) if len(self) else float("nan"),
            "std_ms": float(lat.std(ddof=0)) if len(self) else float("nan"),
            "missed": int(self.column("missed").sum()) if len(self) else 0,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(_COLUMNS)
            for i in range(len(self)):
                writer.writerow([
                    int(self._cols["clip_index"][i]),
                    *(f"{float(self._cols[name][i]):.6f}" for name in _COLUMNS[1:-1]),
                    int(self._cols["missed"][i]),
                ])

    @classmethod
    def read_csv(cls, path) -> "TimingLog":
        log = cls()
        with open(path, newline="") as fp:
            reader = csv.DictReader(fp)
            if reader.fieldnames is None or tuple(reader.fieldnames) != _COLUMNS:
                raise ValueError(f"{path}: unexpected timing log columns {reader.fieldnames}")
            for row in reader:
                log.append(JobRecord(
                    clip_index=int(row["clip_index"]),
                    arrival_ms=float(row["arrival_ms"]),
                    start_ms=float(row["start_ms"]),
                    motion_ms=float(row["motion_ms"]),
                    rgb_ms=float(row["rgb_ms"]),
                    recog_ms=float(row["recog_ms"]),
                    post_ms=float(row["post_ms"]),
                    end_ms=float(row["end_ms"]),
                    deadline_ms=float(row["deadline_ms"]),
                    missed=int(row["missed"]),
                ))
        return log
