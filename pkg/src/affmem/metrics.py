"""Concordance correlation, Pearson correlation and small error metrics.

All moments are population moments (divide by n).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least two points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("series contain non-finite values")
    return x, y


def ccc(x, y) -> float:
    """Concordance correlation ``2 cov / (var_x + var_y + (mu_x - mu_y)^2)``.

    Two equal constant series score 1; zero covariance with a positive
    denominator scores 0.
    """
    x, y = _pair(x, y)
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    cov = np.mean(dx * dy)
    den = np.mean(dx * dx) + np.mean(dy * dy) + (mx - my) ** 2
    if den == 0.0:
        return 1.0
    if cov == 0.0:
        return 0.0
    return float(np.clip(2.0 * cov / den, -1.0, 1.0))


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.mean(dx * dx)), np.sqrt(np.mean(dy * dy))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson correlation undefined for a constant series")
    return float(np.clip(np.mean(dx * dy) / (sx * sy), -1.0, 1.0))


def mse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean((x - y) ** 2))


def mae(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean(np.abs(x - y)))


def ccc_pairwise_report(arousal: tuple, valence: tuple) -> tuple[float, float]:
    """``(ccc_arousal, ccc_valence)`` from ``(predictions, truths)`` pairs."""
    return ccc(*arousal), ccc(*valence)


def ccc_av(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Same as :func:`ccc_pairwise_report` for ``(n, 2)`` arrays."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    return ccc_pairwise_report((pred[:, 0], truth[:, 0]), (pred[:, 1], truth[:, 1]))


@dataclass
class StreamingCCC:
    """Running CCC over an unbounded stream (Welford-style co-moments)."""

    n: int = 0
    mean_x: float = 0.0
    mean_y: float = 0.0
    m2_x: float = 0.0
    m2_y: float = 0.0
    c_xy: float = 0.0

    def update(self, x: float, y: float) -> None:
        self.n += 1
        dx = x - self.mean_x
        self.mean_x += dx / self.n
        dy = y - self.mean_y
        self.mean_y += dy / self.n
        self.m2_x += dx * (x - self.mean_x)
        self.m2_y += dy * (y - self.mean_y)
        self.c_xy += dx * (y - self.mean_y)

    def extend(self, xs, ys) -> None:
        for x, y in zip(xs, ys):
            self.update(float(x), float(y))

    def value(self) -> float:
        if self.n < 2:
            raise ValueError("need at least two points")
        den = (self.m2_x + self.m2_y) / self.n + (self.mean_x - self.mean_y) ** 2
        if den == 0.0:
            return 1.0
        if self.c_xy == 0.0:
            return 0.0
        return float(np.clip(2.0 * self.c_xy / self.n / den, -1.0, 1.0))


REPORT_COLUMNS = ("model_id", "ccc_arousal", "ccc_valence", "n_frames")


def write_report_csv(path, rows: list[tuple[str, float, float, int]], header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for model_id, a, v, n in rows:
            w.writerow([model_id, f"{a:.6f}", f"{v:.6f}", n])
