"""Pure-numpy versions of the compiled GWR kernels (same arithmetic order)."""
from __future__ import annotations

import math

import numpy as np


def sq_distances(W: np.ndarray, n: int, x: np.ndarray, out: np.ndarray) -> None:
    # accumulate per dimension so rounding matches a sequential scan
    acc = np.zeros(n)
    block = W[:n]
    for k in range(x.shape[0]):
        diff = x[k] - block[:, k]
        acc += diff * diff
    out[:n] = acc


def bmu2(W: np.ndarray, n: int, x: np.ndarray) -> tuple[int, int, float, float]:
    if n < 1:
        raise ValueError("memory has no neurons")
    if W.shape[1] != x.shape[0]:
        raise ValueError("input dimension does not match neuron weights")
    d = np.empty(n)
    sq_distances(W, n, x, d)
    b = int(np.argmin(d))  # argmin returns the first minimum
    if n == 1:
        return b, -1, float(d[b]), math.inf
    db = d[b]
    d[b] = math.inf
    s = int(np.argmin(d))
    return b, s, float(db), float(d[s])


def adapt(W: np.ndarray, j: int, x: np.ndarray, rate: float, h: float, a: float) -> None:
    W[j] = W[j] + (rate * h) * (x - W[j]) * (1.0 - a)


def habituate(h: float, tau: float, kappa: float) -> float:
    return min(max(h + (tau * kappa * (1.0 - h) - tau), 0.0), 1.0)


def activity(sq_dist: float) -> float:
    return math.exp(-sq_dist)
