"""Grow-When-Required affective memory.

Neurons carry a prototype ``w``, a habituation counter ``h`` in [0, 1] and an
(arousal, valence) label. Only the best-matching unit adapts, with a step
scaled by ``(1 - activity)`` so familiar inputs barely move the prototypes.

The BMU scan and per-neuron updates run in a compiled extension when it is
available; set ``AFFMEM_PURE_PYTHON=1`` to force the numpy fallback.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .numerics import ContractError

log = logging.getLogger(__name__)

if os.environ.get("AFFMEM_PURE_PYTHON"):
    from . import _gwr_fallback as _k

    BACKEND = "python"
else:
    try:
        from . import _gwr_kernels as _k  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        from . import _gwr_fallback as _k

        BACKEND = "python"


@dataclass
class GwrParams:
    t_a: float = 0.4
    t_h: float = 0.2
    tau: float = 0.087
    kappa: float = 0.032
    epsilon_b: float = 0.1
    gamma: float = 0.4
    epochs: int = 10
    max_edge_age: int = 50
    update_neighbors: bool = False
    epsilon_n: float = 0.01

    def __post_init__(self):
        if not 0 < self.t_a < 1:
            raise ContractError("activity threshold must lie in (0, 1)")
        if not 0 < self.t_h < 1:
            raise ContractError("habituation threshold must lie in (0, 1)")
        if not 0 < self.epsilon_b <= 1:
            raise ContractError("epsilon_b must lie in (0, 1]")
        if self.epochs < 1 or self.max_edge_age < 1:
            raise ContractError("epochs and max_edge_age must be positive")


@dataclass
class Neuron:
    w: np.ndarray
    h: float
    label: tuple[float, float]
    label_set: bool


@dataclass(frozen=True)
class Event:
    kind: str  # "inserted" | "updated"
    index: int


def habituate(h: float, params: GwrParams) -> float:
    """``h + tau * kappa * (1 - h) - tau``, clamped to [0, 1]."""
    return _k.habituate(float(h), params.tau, params.kappa)


class GwrMemory:
    """Growable prototype memory; storage is preallocated and doubled on demand."""

    def __init__(self, dim: int, params: GwrParams | None = None, capacity: int = 256):
        self.dim = int(dim)
        self.params = params or GwrParams()
        self._W = np.zeros((capacity, self.dim))
        self._h = np.ones(capacity)
        self._labels = np.zeros((capacity, 2))
        self._label_set = np.zeros(capacity, dtype=bool)
        self.n = 0
        self.edges: dict[int, dict[int, int]] = {}
        self.step_count = 0

    # -- construction ---------------------------------------------------------------

    @classmethod
    def from_two(
        cls,
        w0: np.ndarray,
        w1: np.ndarray,
        params: GwrParams | None = None,
        labels: Sequence | None = None,
    ) -> "GwrMemory":
        w0 = np.asarray(w0, dtype=np.float64)
        mem = cls(w0.size, params)
        y0, y1 = labels if labels is not None else (None, None)
        mem.add_neuron(w0, label=y0)
        mem.add_neuron(np.asarray(w1, dtype=np.float64), label=y1)
        return mem

    def add_neuron(self, w: np.ndarray, h: float = 1.0, label=None, label_set: bool | None = None) -> int:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.dim,) or not np.all(np.isfinite(w)):
            raise ContractError("neuron weight must be a finite vector of the memory dimension")
        if self.n == self._W.shape[0]:
            self._grow()
        i = self.n
        self._W[i] = w
        self._h[i] = h
        if label is not None:
            self._labels[i] = np.asarray(label, dtype=np.float64)
        self._label_set[i] = label is not None if label_set is None else label_set
        self.edges[i] = {}
        self.n += 1
        return i

    def _grow(self) -> None:
        cap = 2 * self._W.shape[0]
        for name, fill in (("_W", 0.0), ("_h", 1.0), ("_labels", 0.0), ("_label_set", False)):
            old = getattr(self, name)
            new = np.full((cap,) + old.shape[1:], fill, dtype=old.dtype)
            new[: self.n] = old[: self.n]
            setattr(self, name, new)

    # -- views ---------------------------------------------------------------------------

    @property
    def weights(self) -> np.ndarray:
        return self._W[: self.n]

    @property
    def habituation(self) -> np.ndarray:
        return self._h[: self.n]

    @property
    def labels(self) -> np.ndarray:
        return self._labels[: self.n]

    @property
    def label_set(self) -> np.ndarray:
        return self._label_set[: self.n]

    def neuron(self, i: int) -> Neuron:
        return Neuron(
            self._W[i].copy(), float(self._h[i]), tuple(self._labels[i].tolist()), bool(self._label_set[i])
        )

    def __len__(self) -> int:
        return self.n

    def edge_list(self) -> list[tuple[int, int, int]]:
        return sorted((i, j, age) for i, nb in self.edges.items() for j, age in nb.items() if i < j)

    # -- edges --------------------------------------------------------------------------

    def _connect(self, i: int, j: int, age: int = 0) -> None:
        self.edges[i][j] = age
        self.edges[j][i] = age

    def _age_edges(self, b: int, keep: int) -> None:
        limit = self.params.max_edge_age
        for j in list(self.edges[b]):
            if j == keep:
                continue
            age = self.edges[b][j] + 1
            if age > limit:
                del self.edges[b][j]
                del self.edges[j][b]
            else:
                self.edges[b][j] = age
                self.edges[j][b] = age

    # -- operations ---------------------------------------------------------------------

    def _as_input(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ContractError(f"input shape {x.shape} != ({self.dim},)")
        return x

    def bmu(self, x) -> tuple[int, int, float]:
        """``(best, second, activity)`` with ``activity = exp(-|x - w_best|^2)``."""
        if self.n == 0:
            raise ContractError("memory is empty")
        b, s, db, _ = _k.bmu2(self._W, self.n, self._as_input(x))
        return b, s, _k.activity(db)

    def label_update(self, b: int, y) -> None:
        y = np.asarray(y, dtype=np.float64)
        self._labels[b] = self._labels[b] + self.params.gamma * (y - self._labels[b])
        self._label_set[b] = True

    def grow_or_update(self, x, label=None) -> Event:
        """Present one input. A new neuron appears when both the activity and
        the BMU's habituation are below their thresholds; otherwise the BMU
        moves toward ``x`` and habituates. A label, when given, also pulls the
        BMU's label toward it in both cases."""
        x = self._as_input(x)
        if self.n < 2:
            raise ContractError("memory needs at least two neurons")
        p = self.params
        b, s, db, _ = _k.bmu2(self._W, self.n, x)
        a = _k.activity(db)
        self.step_count += 1
        if a < p.t_a and self._h[b] < p.t_h:
            if label is not None:
                r = self.add_neuron(0.5 * (self._W[b] + x), 1.0, label, True)
            else:
                r = self.add_neuron(0.5 * (self._W[b] + x), 1.0, self._labels[b].copy(), False)
            self._connect(r, b)
            self._connect(r, s)
            if label is not None:
                self.label_update(b, label)
            return Event("inserted", r)

        _k.adapt(self._W, b, x, p.epsilon_b, float(self._h[b]), a)
        if p.update_neighbors:
            for j in self.edges[b]:
                _k.adapt(self._W, j, x, p.epsilon_n, float(self._h[j]), a)
        self._connect(b, s, 0)
        self._age_edges(b, keep=s)
        self._h[b] = _k.habituate(float(self._h[b]), p.tau, p.kappa)
        if label is not None:
            self.label_update(b, label)
        return Event("updated", b)

    def predict(self, x) -> tuple[float, float]:
        """Label of the BMU, or of the nearest labelled neuron if the BMU has none."""
        x = self._as_input(x)
        if self.n == 0 or not self._label_set[: self.n].any():
            raise ContractError("memory has no labelled neuron")
        b, _, _, _ = _k.bmu2(self._W, self.n, x)
        if not self._label_set[b]:
            d = np.empty(self.n)
            _k.sq_distances(self._W, self.n, x, d)
            d[~self._label_set[: self.n]] = np.inf
            b = int(np.argmin(d))
        return tuple(self._labels[b].tolist())

    def train_epochs(self, samples: Iterable, labels: Iterable | None = None, epochs: int | None = None) -> list[Event]:
        """Present ``samples`` in order, ``epochs`` times (default from params)."""
        samples = list(samples)
        labels = [None] * len(samples) if labels is None else list(labels)
        if len(labels) != len(samples):
            raise ContractError("one label (or None) per sample")
        events = []
        for _ in range(epochs or self.params.epochs):
            for x, y in zip(samples, labels):
                events.append(self.grow_or_update(x, y))
        return events

    # -- persistence -----------------------------------------------------------------------

    def copy(self) -> "GwrMemory":
        return GwrMemory.from_dict(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "params": asdict(self.params),
            "step_count": self.step_count,
            "neurons": [
                {
                    "w": self._W[i].tolist(),
                    "h": float(self._h[i]),
                    "label": self._labels[i].tolist(),
                    "label_set": bool(self._label_set[i]),
                }
                for i in range(self.n)
            ],
            "edges": [list(e) for e in self.edge_list()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GwrMemory":
        mem = cls(int(d["dim"]), GwrParams(**d["params"]), capacity=max(4, len(d["neurons"])))
        for nd in d["neurons"]:
            i = mem.add_neuron(np.array(nd["w"]), nd["h"], nd["label"], nd["label_set"])
            mem._labels[i] = nd["label"]
        for i, j, age in d["edges"]:
            mem._connect(int(i), int(j), int(age))
        mem.step_count = int(d.get("step_count", 0))
        return mem

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "GwrMemory":
        return cls.from_dict(json.loads(text))

    def same_as(self, other: "GwrMemory") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.habituation, other.habituation)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.label_set, other.label_set)
            and self.edge_list() == other.edge_list()
        )
