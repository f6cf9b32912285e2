import json

import numpy as np
import pytest

from affmem import pk
from affmem.gwr import GwrParams
from affmem.numerics import ContractError
from affmem.pipeline import PipelineConfig, open_session, process_frame, run_stream, seed_grid
from affmem.synthdata import sample_person_stream

from .conftest import small_config


@pytest.fixture(scope="module")
def frames(world):
    return sample_person_stream(world, 2, 80)


def test_seed_grid():
    g = seed_grid(200, 0)
    assert g.shape == (200, 2)
    assert np.all(np.abs(g) <= 1)
    assert np.array_equal(g, seed_grid(200, 0))
    assert not np.array_equal(g, seed_grid(200, 1))
    # low discrepancy: every quadrant gets close to its share
    counts = [np.sum((np.sign(g[:, 0]) == a) & (np.sign(g[:, 1]) == b)) for a in (-1, 1) for b in (-1, 1)]
    assert min(counts) >= 40


def test_open_session_requires_trained_model(frames):
    with pytest.raises(ContractError):
        open_session(pk.init_model(small_config(), 0), frames[0])
    with pytest.raises(ContractError):
        open_session(None, frames[0])


def test_open_session_seeds_memory(small_trained, frames):
    s = open_session(small_trained, frames[0])
    assert 2 <= len(s.memory) <= 202
    assert s.seeds_injected == 200
    assert s.seed_latents.shape == (200, small_trained.config.latent_dim)
    # seeds are encodings of edits of the first frame
    z1 = pk.encode(small_trained, frames[0].x)
    edited = pk.generate(small_trained, np.tile(z1, (200, 1)), s.seed_labels)
    assert np.allclose(s.to_memory(pk.encode(small_trained, edited)), s.seed_latents)
    rms = np.sqrt(np.mean(np.sum((s.seed_latents - s.seed_latents.mean(0)) ** 2, axis=1)))
    assert rms == pytest.approx(8.0)


def test_sessions_are_deterministic(small_trained, frames):
    a = open_session(small_trained, frames[0])
    b = open_session(small_trained, frames[0])
    assert a.memory.same_as(b.memory)


def test_prediction_precedes_update(small_trained, frames):
    s = open_session(small_trained, frames[0])
    snapshot = s.memory.copy()
    pred = process_frame(small_trained, s, frames[0])
    z = s.to_memory(pk.encode(small_trained, frames[0].x))
    assert (pred.arousal, pred.valence) == pytest.approx(snapshot.predict(z))
    assert not s.memory.same_as(snapshot)


def test_first_prediction_is_a_seed_label(small_trained, frames):
    s = open_session(small_trained, frames[0])
    pred = process_frame(small_trained, s, frames[0])
    labelled = s.memory.labels[s.memory.label_set]
    assert np.min(np.abs(labelled - pred.as_array()).sum(axis=1)) < 1e-12


def test_replay_mode_stops_at_frame_limit(small_trained, frames):
    cfg = PipelineConfig(seed_mode="replay", seeds_per_frame=8)
    s = open_session(small_trained, frames[0], cfg)
    assert s.seeds_injected == 2 and len(s.pending) == 198
    injected = []
    for t, f in enumerate(frames[:40]):
        process_frame(small_trained, s, f)
        injected.append(s.seeds_injected)
        assert s.seeding_active == (t + 1 < 25)
    assert injected[23] == 2 + 8 * 24
    assert s.seeds_injected == 200
    assert injected[24:] == [200] * 16
    assert not s.pending


def test_unlabelled_frames_do_not_change_labels(small_trained, frames):
    s = open_session(small_trained, frames[0])
    labels = s.memory.labels.copy()
    for f in frames:
        process_frame(small_trained, s, f)
    assert np.array_equal(s.memory.labels[: len(labels)], labels)
    assert len(s.memory) <= 202 + len(frames)


def test_constant_stream_settles(small_trained, frames):
    s = open_session(small_trained, frames[0])
    deltas, acts = [], []
    for _ in range(40):
        before = s.memory.weights.copy()
        process_frame(small_trained, s, frames[5])
        acts.append(s.last_activity)
        if len(s.memory) == len(before):
            deltas.append(np.max(np.abs(s.memory.weights - before)))
    assert all(b >= a - 1e-12 for a, b in zip(acts, acts[1:]))
    assert acts[-1] > acts[0]
    # the BMU habituates to zero, after which its weight steps vanish
    assert deltas[-5:] == [0.0] * 5


def test_no_lookahead(small_trained, frames):
    full = run_stream(small_trained, frames)
    short = run_stream(small_trained, frames[:30])
    assert np.array_equal(full.predictions[:30], short.predictions)


def test_interleaved_sessions_match_separate_runs(small_trained, world):
    a = sample_person_stream(world, 4, 30)
    b = sample_person_stream(world, 5, 30)
    sa, sb = open_session(small_trained, a[0]), open_session(small_trained, b[0])
    pa, pb = [], []
    for fa, fb in zip(a, b):
        pb.append(process_frame(small_trained, sb, fb).as_array())
        pa.append(process_frame(small_trained, sa, fa).as_array())
    assert np.array_equal(np.array(pa), run_stream(small_trained, a).predictions)
    assert np.array_equal(np.array(pb), run_stream(small_trained, b).predictions)


def test_stream_report(small_trained, frames):
    rep = run_stream(small_trained, frames)
    assert rep.predictions.shape == (len(frames), 2)
    direct = pk.predict_affect(small_trained, np.array([f.x for f in frames]))
    assert np.array_equal(rep.baseline, direct)
    assert rep.activity.shape == (len(frames),) and np.all((rep.activity > 0) & (rep.activity <= 1))
    d = json.loads(rep.dumps())
    for key in ("prediction_a", "prediction_v", "activity", "neuron_count", "summary"):
        assert key in d
    assert d["summary"]["p_affmem"]["ccc_arousal"] == rep.ccc_paffmem[0]


def test_report_perfect_when_truth_is_prediction(small_trained, frames):
    rep = run_stream(small_trained, frames)
    again = run_stream(small_trained, frames, truth=rep.predictions)
    assert again.ccc_paffmem == (1.0, 1.0)


def test_stream_contracts(small_trained, frames):
    with pytest.raises(ContractError):
        run_stream(small_trained, [])
    with pytest.raises(ContractError):
        run_stream(small_trained, [frames[1], frames[0]])
    with pytest.raises(ContractError):
        PipelineConfig(seed_mode="sometimes")


def test_raw_latent_mode(small_trained, frames):
    cfg = PipelineConfig(memory_radius=None, gwr=GwrParams(epochs=2))
    s = open_session(small_trained, frames[0], cfg)
    assert s.center is None and s.gain == 1.0
    z = pk.encode(small_trained, frames[3].x)
    assert np.array_equal(s.to_memory(z), z)
