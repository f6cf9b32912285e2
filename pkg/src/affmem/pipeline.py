"""Per-person affective memories seeded from generator-edited samples."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import pk as pkm
from .gwr import GwrMemory, GwrParams
from .metrics import ccc_av
from .numerics import ContractError
from .pk import AffectLabel, ExpressionSample, PkModel


@dataclass
class PipelineConfig:
    seed_count: int = 200
    seed_frame_limit: int = 25
    seed_mode: str = "all_at_once"  # or "replay"
    seeds_per_frame: int = 8
    grid_seed: int = 0
    online_epochs: int = 1
    # memory coordinates: latents centred on the person's seed latents and scaled
    # so those seeds have this RMS radius; None keeps raw latents
    memory_radius: float | None = 8.0
    gwr: GwrParams = field(default_factory=GwrParams)

    def __post_init__(self):
        if isinstance(self.gwr, dict):
            self.gwr = GwrParams(**self.gwr)
        if self.seed_mode not in ("all_at_once", "replay"):
            raise ContractError(f"unknown seed_mode {self.seed_mode!r}")
        if self.seed_count < 2:
            raise ContractError("need at least two seed samples")


def seed_grid(n: int = 200, seed: int = 0) -> np.ndarray:
    """``n`` scrambled-Halton (arousal, valence) points in [-1, 1]^2."""
    pts = qmc.Halton(d=2, scramble=True, seed=seed).random(n)
    return np.clip(2.0 * pts - 1.0, -1.0, 1.0)


@dataclass
class PersonSession:
    person_id: str
    memory: GwrMemory
    config: PipelineConfig
    pending: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    seed_latents: np.ndarray | None = None
    seed_labels: np.ndarray | None = None
    frames_seen: int = 0
    seeds_injected: int = 0
    seeding_active: bool = True
    last_activity: float = float("nan")
    center: np.ndarray | None = None
    gain: float = 1.0

    def to_memory(self, z: np.ndarray) -> np.ndarray:
        if self.center is None:
            return z
        return (z - self.center) * self.gain

    @property
    def seed_budget(self) -> int:
        return self.config.seed_count

    @property
    def seed_frame_limit(self) -> int:
        return self.config.seed_frame_limit


def open_session(
    pk: PkModel, first_frame: ExpressionSample, config: PipelineConfig | None = None
) -> PersonSession:
    """Create a person's memory from edits of their first observed frame."""
    config = config or PipelineConfig()
    if pk is None or not isinstance(pk, PkModel):
        raise ContractError("a prior-knowledge model is required")
    if pk.trained_steps == 0:
        raise ContractError("prior-knowledge model has not been trained")
    labels = seed_grid(config.seed_count, config.grid_seed)
    z_first = pkm.encode(pk, first_frame.x)
    edited = pkm.generate(pk, np.broadcast_to(z_first, (len(labels), z_first.size)), labels)
    latents = pkm.encode(pk, edited)

    center, gain = None, 1.0
    if config.memory_radius is not None:
        center = latents.mean(axis=0)
        rms = np.sqrt(np.mean(np.sum((latents - center) ** 2, axis=1)))
        gain = config.memory_radius / rms if rms > 0 else 1.0
        latents = (latents - center) * gain

    memory = GwrMemory.from_two(latents[0], latents[1], config.gwr, labels=(labels[0], labels[1]))
    session = PersonSession(first_frame.person_id, memory, config, center=center, gain=gain)
    session.seed_latents, session.seed_labels = latents, labels
    if config.seed_mode == "all_at_once":
        memory.train_epochs(latents, labels)
        session.seeds_injected = len(labels)
    else:
        # the first two seeds founded the memory; the rest are replayed per frame
        session.pending = list(zip(latents[2:], labels[2:]))
        session.seeds_injected = 2
    return session


def process_frame(pk: PkModel, session: PersonSession, frame: ExpressionSample) -> AffectLabel:
    """Predict the frame's affect, then adapt the memory to it (no label)."""
    z = session.to_memory(pkm.encode(pk, frame.x))
    mem = session.memory
    _, _, session.last_activity = mem.bmu(z)
    pred = AffectLabel.clamped(*mem.predict(z))
    for _ in range(session.config.online_epochs):
        mem.grow_or_update(z)
    session.frames_seen += 1
    if session.seeding_active and session.pending:
        for _ in range(min(session.config.seeds_per_frame, len(session.pending))):
            zk, yk = session.pending.pop(0)
            mem.grow_or_update(zk, yk)
            session.seeds_injected += 1
    if session.frames_seen >= session.seed_frame_limit:
        session.seeding_active = False
        session.pending.clear()
    return pred


@dataclass
class StreamReport:
    person_id: str
    predictions: np.ndarray  # (n, 2)
    baseline: np.ndarray  # (n, 2) PK-only D_em(E(x))
    truth: np.ndarray | None
    activity: np.ndarray
    neuron_count: np.ndarray
    ccc_paffmem: tuple[float, float] | None
    ccc_pk_only: tuple[float, float] | None

    def to_dict(self) -> dict:
        d = {
            "person_id": self.person_id,
            "n_frames": int(len(self.predictions)),
            "prediction_a": self.predictions[:, 0].tolist(),
            "prediction_v": self.predictions[:, 1].tolist(),
            "baseline_a": self.baseline[:, 0].tolist(),
            "baseline_v": self.baseline[:, 1].tolist(),
            "activity": self.activity.tolist(),
            "neuron_count": self.neuron_count.tolist(),
        }
        if self.truth is not None:
            d["truth_a"] = self.truth[:, 0].tolist()
            d["truth_v"] = self.truth[:, 1].tolist()
            d["summary"] = {
                "p_affmem": {"ccc_arousal": self.ccc_paffmem[0], "ccc_valence": self.ccc_paffmem[1]},
                "pk_only": {"ccc_arousal": self.ccc_pk_only[0], "ccc_valence": self.ccc_pk_only[1]},
            }
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def run_stream(
    pk: PkModel,
    frames: list[ExpressionSample],
    truth: np.ndarray | None = None,
    config: PipelineConfig | None = None,
) -> StreamReport:
    """Replay one person's frames through a fresh session."""
    if not frames:
        raise ContractError("empty stream")
    idx = [f.frame_index for f in frames]
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ContractError("frames must be ordered by strictly increasing frame_index")
    if truth is None and all(f.y is not None for f in frames):
        truth = np.array([f.y.as_array() for f in frames])
    session = open_session(pk, frames[0], config)
    preds, acts, counts = [], [], []
    for frame in frames:
        p = process_frame(pk, session, frame)
        preds.append((p.arousal, p.valence))
        acts.append(session.last_activity)
        counts.append(len(session.memory))
    preds = np.array(preds)
    baseline = pkm.predict_affect(pk, np.array([f.x for f in frames]))
    c_mem = c_pk = None
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        if len(frames) >= 2:
            c_mem, c_pk = ccc_av(preds, truth), ccc_av(baseline, truth)
    return StreamReport(
        frames[0].person_id, preds, baseline, truth, np.array(acts), np.array(counts), c_mem, c_pk
    )
