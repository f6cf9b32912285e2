"""Synthetic expression world: observations are an affine image of (arousal,
valence) plus a per-person style offset and isotropic noise."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .pk import AffectLabel, ExpressionSample


@dataclass
class SynthWorld:
    input_dim: int = 24
    style_dim: int = 4
    noise_scale: float = 0.05
    walk_step: float = 0.02
    style_scale: float = 1.0
    seed: int = 0
    affect_map: np.ndarray = field(init=False, repr=False)
    style_map: np.ndarray = field(init=False, repr=False)
    offset: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, 1013])
        d = self.input_dim
        # columns ~ unit norm so one label unit moves the observation by ~1
        self.affect_map = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, 2))
        self.style_map = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, self.style_dim))
        self.offset = rng.normal(0.0, 0.1, size=d)
        if np.linalg.matrix_rank(self.affect_map) < 2:  # pragma: no cover - measure-zero event
            raise ValueError("degenerate affect map; choose another seed")

    def mix(self, labels: np.ndarray, style: np.ndarray | None, rng: np.random.Generator) -> np.ndarray:
        labels = np.atleast_2d(labels)
        x = labels @ self.affect_map.T + self.offset
        if style is not None and self.style_dim:
            x = x + self.style_map @ style
        if self.noise_scale:
            x = x + rng.normal(0.0, self.noise_scale, size=x.shape)
        return x

    def person_style(self, person_seed: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 2027, person_seed])
        return rng.normal(0.0, self.style_scale, size=self.style_dim)


def sample_arrays(
    world: SynthWorld, n: int, seed: int, many_people: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """``(X, Y)`` for ``n`` samples with uniform labels.

    By default samples carry no style. ``many_people=True`` gives every sample
    its own random style vector (one picture each of ``n`` different people).
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng([world.seed, 3001, seed])
    Y = rng.uniform(-1.0, 1.0, size=(n, 2))
    X = world.mix(Y, None, rng)
    if many_people and world.style_dim:
        styles = rng.normal(0.0, world.style_scale, size=(n, world.style_dim))
        X = X + styles @ world.style_map.T
    return X, Y


def sample_dataset(
    world: SynthWorld, n: int, seed: int, many_people: bool = False
) -> list[ExpressionSample]:
    X, Y = sample_arrays(world, n, seed, many_people)
    return [
        ExpressionSample(x, AffectLabel(*y), person_id="", frame_index=i)
        for i, (x, y) in enumerate(zip(X, Y))
    ]


def person_arrays(world: SynthWorld, person_seed: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    """One person's stream: constant style, labels on a clipped Gaussian random walk."""
    if length <= 0:
        raise ValueError("length must be positive")
    rng = np.random.default_rng([world.seed, 4003, person_seed])
    start = rng.uniform(-0.8, 0.8, size=2)
    steps = rng.normal(0.0, world.walk_step, size=(length, 2))
    steps[0] = 0.0
    Y = np.empty((length, 2))
    cur = start
    for t in range(length):
        cur = np.clip(cur + steps[t], -1.0, 1.0)
        Y[t] = cur
    style = world.person_style(person_seed)
    return world.mix(Y, style, rng), Y


def sample_person_stream(world: SynthWorld, person_seed: int, length: int) -> list[ExpressionSample]:
    X, Y = person_arrays(world, person_seed, length)
    pid = f"person{person_seed}"
    return [
        ExpressionSample(x, AffectLabel(*y), person_id=pid, frame_index=t)
        for t, (x, y) in enumerate(zip(X, Y))
    ]


def write_stream_csv(path, samples: Sequence[ExpressionSample]) -> None:
    if not samples:
        raise ValueError("nothing to write")
    d = samples[0].x.size
    labelled = all(s.y is not None for s in samples)
    header = ["person_id", "frame_index"] + [f"x_{i}" for i in range(d)]
    if labelled:
        header += ["arousal", "valence"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in samples:
            row = [s.person_id, s.frame_index] + [repr(float(v)) for v in s.x]
            if labelled:
                row += [repr(float(s.y.arousal)), repr(float(s.y.valence))]
            w.writerow(row)


def read_stream_csv(path) -> list[ExpressionSample]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return []
    xcols = sorted((k for k in rows[0] if k.startswith("x_")), key=lambda k: int(k[2:]))
    has_y = "arousal" in rows[0] and "valence" in rows[0]
    out = []
    for r in rows:
        y = None
        if has_y and r["arousal"] not in ("", None):
            y = AffectLabel(float(r["arousal"]), float(r["valence"]))
        out.append(
            ExpressionSample(
                np.array([float(r[k]) for k in xcols]), y, r["person_id"], int(r["frame_index"])
            )
        )
    return out


def group_by_person(samples: Iterable[ExpressionSample]) -> dict[str, list[ExpressionSample]]:
    streams: dict[str, list[ExpressionSample]] = {}
    for s in samples:
        streams.setdefault(s.person_id, []).append(s)
    for pid, frames in streams.items():
        frames.sort(key=lambda s: s.frame_index)
        idx = [s.frame_index for s in frames]
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate frame_index in stream {pid!r}")
    return streams
