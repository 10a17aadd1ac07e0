"""CSV output: comma separated, LF line endings, header row, floats at 17 digits."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .model import format_float


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def trajectory_rows(thetas, clamped, v=None):
    """Rows ``iter, theta..., V, clamped_coords``; ``clamped[n-1]`` belongs to iter ``n``."""
    for n, th in enumerate(thetas):
        c = 0 if n == 0 else int(clamped[n - 1])
        yield [n, *th.tolist(), None if v is None else v[n], c]


def theta_header(n: int, first: str = "iter") -> list[str]:
    return [first, *(f"theta_{j}" for j in range(n)), "V", "clamped_coords"]
