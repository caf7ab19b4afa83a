import numpy as np
import pytest

from repcount import counting, gradcheck, losses, network, similarity
from repcount.data import AnnotationTrack, EmbeddingSequence, SyntheticSpec, generate_dataset, pairs_from
from repcount.network import NetworkConfig, NetworkState, TrainConfig


def small_cfg(**kw):
    base = dict(input_dim=4, agg_dim=5, stages=1, layers_per_stage=2, channels=6, seed=3)
    base.update(kw)
    return NetworkConfig(**base)


def test_zero_head_gives_half():
    state = NetworkState.init(small_cfg(stages=2))
    for s in range(2):
        state.params[f"s{s}.out.w"][:] = 0
        state.params[f"s{s}.out.b"][:] = 0
    _, probs, _ = network.forward(state, np.random.default_rng(0).standard_normal((9, 4)))
    np.testing.assert_array_equal(probs, 0.5)


def test_single_frame():
    state = NetworkState.init(small_cfg())
    emb, probs, _ = network.forward(state, np.ones((1, 4)))
    assert emb.shape == (1, 5) and probs.shape == (1,)
    # with T=1 only the centre tap of every kernel can contribute
    P = state.params
    a = np.tanh(np.ones(4, np.float32) @ P["agg.w"][1] + P["agg.b"])
    np.testing.assert_allclose(emb[0], a, rtol=1e-6)


def test_forward_deterministic():
    x = np.random.default_rng(1).standard_normal((20, 4))
    p1 = network.forward(NetworkState.init(small_cfg()), x)[1]
    p2 = network.forward(NetworkState.init(small_cfg()), x)[1]
    assert p1.tobytes() == p2.tobytes()


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        network.forward(NetworkState.init(small_cfg()), np.ones((5, 3)))


def test_config_validation():
    with pytest.raises(ValueError):
        small_cfg(kernel_size=4)
    with pytest.raises(ValueError):
        small_cfg(stages=0)
    with pytest.raises(ValueError):
        small_cfg(target_mode="density")
    with pytest.raises(ValueError):
        TrainConfig(stride=0)


def test_probs_strictly_inside_unit_interval():
    state = NetworkState.init(NetworkConfig(input_dim=16, seed=5))
    x = np.random.default_rng(2).standard_normal((200, 16)) * 3
    probs = network.forward(state, x)[1]
    assert np.all(probs > 0) and np.all(probs < 1)


def test_zero_upstream_gradient():
    state = NetworkState.init(small_cfg())
    x = np.random.default_rng(3).standard_normal((8, 4))
    _, _, cache = network.forward(state, x)
    grads = network.backward(state, cache, np.zeros(8), np.zeros((8, 5)))
    assert set(grads) == set(state.params)
    assert all(not g.any() for g in grads.values())


def test_stale_cache_rejected():
    state = NetworkState.init(small_cfg())
    x = np.random.default_rng(4).standard_normal((8, 4))
    _, _, cache = network.forward(state, x)
    network.adam_step(state, {k: np.ones_like(p) for k, p in state.params.items()}, TrainConfig())
    with pytest.raises(network.StaleCacheError):
        network.backward(state, cache, np.zeros(8))
    other = NetworkState.init(small_cfg())
    _, _, cache = network.forward(other, x)
    with pytest.raises(network.StaleCacheError):
        network.backward(state, cache, np.zeros(8))


@pytest.mark.parametrize("kind", ["hamming", "euclidean", "correlation"])
def test_gradient_check_small_instance(kind):
    rng = np.random.default_rng(11)
    cfg = small_cfg(similarity=similarity.SimilarityMeasure(kind), lam=0.3)
    state = NetworkState.init(cfg, dtype=np.float64)
    x = rng.standard_normal((12, 4))
    track = AnnotationTrack(((1, 4), (6, 10)), 12)
    report = gradcheck.check_gradients(state, x, counting.make_target(track),
                                       similarity.reference_tsm(track), cfg.lam)
    assert report.max_rel_error < 1e-4, report
    assert report.skipped <= 0.01 * (report.checked + report.skipped)


def test_lambda_zero_matches_sse_only():
    cfg = small_cfg(lam=0.0)
    state = NetworkState.init(cfg, dtype=np.float64)
    x = np.random.default_rng(6).standard_normal((10, 4))
    target = counting.make_target(AnnotationTrack(((2, 5),), 10))
    _, grads = network.sequence_objective(state, x, target, None, 0.0)
    _, probs, cache = network.forward(state, x)
    _, d_probs = losses.sse_loss(target, probs)
    expected = network.backward(state, cache, d_probs)
    for k in ("agg.w", "agg.b"):
        np.testing.assert_array_equal(grads[k], expected[k])


def test_treco_gradient_reaches_only_through_embeddings():
    cfg = small_cfg(lam=1.0)
    state = NetworkState.init(cfg, dtype=np.float64)
    x = np.random.default_rng(7).standard_normal((10, 4))
    track = AnnotationTrack(((1, 3), (5, 8)), 10)
    target = counting.make_target(track)
    _, with_tsm = network.sequence_objective(state, x, target, similarity.reference_tsm(track), 1.0)
    _, without = network.sequence_objective(state, x, target, None, 0.0)
    for k in with_tsm:
        if k.startswith("agg."):
            assert not np.array_equal(with_tsm[k], without[k])
        else:
            np.testing.assert_array_equal(with_tsm[k], without[k])


def test_temporal_locality():
    cfg = NetworkConfig(input_dim=3, agg_dim=4, stages=2, layers_per_stage=3, channels=5, seed=9)
    state = NetworkState.init(cfg, dtype=np.float64)
    R = cfg.receptive_radius
    assert R == 1 + 2 * (1 + 2 + 4)
    x = np.random.default_rng(8).standard_normal((80, 3))
    base = network.forward(state, x)[1]
    t = 40
    x2 = x.copy()
    x2[t] += 5.0
    changed = np.flatnonzero(network.forward(state, x2)[1] != base)
    assert changed.size > 0
    assert changed.min() >= t - R and changed.max() <= t + R


def test_stage_one_matches_single_stage_model():
    two = NetworkState.init(small_cfg(stages=2), dtype=np.float64)
    one = NetworkState.init(small_cfg(stages=1), dtype=np.float64)
    for k in one.params:
        one.params[k] = two.params[k].copy()
    x = np.random.default_rng(10).standard_normal((15, 4))
    _, p2, cache2 = network.forward(two, x)
    _, p1, _ = network.forward(one, x)
    np.testing.assert_array_equal(cache2.stage_probs[0], p1)
    assert not np.array_equal(p2, p1)


# -- Adam ---------------------------------------------------------------------------

def scalar_state(value=0.0):
    return NetworkState(small_cfg(), {"w": np.array([value])})


def test_adam_first_step():
    state = scalar_state()
    network.adam_step(state, {"w": np.array([1.0])}, TrainConfig(learning_rate=0.1))
    # bias-corrected moments are both 1 after one step: w = -lr / (1 + eps)
    assert state.params["w"][0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)
    assert state.step == 1


def test_adam_zero_gradient():
    state = NetworkState.init(small_cfg())
    before = state.copy()
    network.adam_step(state, {k: np.zeros_like(p) for k, p in state.params.items()}, TrainConfig())
    for k in state.params:
        np.testing.assert_array_equal(state.params[k], before.params[k])
    assert state.step == 1
    # existing moments decay by the beta factors
    state.m["agg.b"][:] = 1.0
    state.v["agg.b"][:] = 1.0
    network.adam_step(state, {k: np.zeros_like(p) for k, p in state.params.items()}, TrainConfig())
    np.testing.assert_allclose(state.m["agg.b"], 0.9, rtol=1e-6)
    np.testing.assert_allclose(state.v["agg.b"], 0.999, rtol=1e-6)


def test_adam_deterministic():
    a, b = NetworkState.init(small_cfg()), NetworkState.init(small_cfg())
    g = {k: np.random.default_rng(1).standard_normal(p.shape) for k, p in a.params.items()}
    network.adam_step(a, g, TrainConfig())
    network.adam_step(b, g, TrainConfig())
    assert a.equals(b)


def test_adam_rejects_nonfinite():
    state = NetworkState.init(small_cfg())
    g = {k: np.zeros_like(p) for k, p in state.params.items()}
    g["s0.l1.pw.w"][0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="s0.l1.pw.w"):
        network.adam_step(state, g, TrainConfig())


# -- training --------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_dataset():
    spec = SyntheticSpec(D=4, motif_dim=2, T_range=(30, 50), reps_range=(2, 4), duration_range=(6, 9))
    return pairs_from(generate_dataset(spec, 4, seed=1))


def test_zero_epochs_returns_initial_state(tiny_dataset):
    cfg = small_cfg()
    state, history = network.train(tiny_dataset, cfg, TrainConfig(epochs=0))
    assert history == []
    assert state.equals(NetworkState.init(cfg))


def test_training_is_deterministic(tiny_dataset):
    cfg = small_cfg()
    tc = TrainConfig(epochs=3, batch_size=2, learning_rate=1e-3)
    s1, h1 = network.train(tiny_dataset, cfg, tc)
    s2, h2 = network.train(tiny_dataset, cfg, tc)
    assert h1 == h2
    assert s1.equals(s2)
    assert network.encode_checkpoint(s1) == network.encode_checkpoint(s2)


def test_single_sequence_fits():
    track = AnnotationTrack(((3, 8), (12, 17), (21, 26)), 30)
    x = np.zeros((30, 4))
    for s, e in track.intervals:
        x[s:e + 1, 0] = np.linspace(1, -1, e - s + 1)
    cfg = small_cfg(lam=0.0)
    tc = TrainConfig(epochs=200, batch_size=1, learning_rate=1e-3)
    _, history = network.train([(EmbeddingSequence(x), track)], cfg, tc)
    assert history[-1].sse < history[0].sse
    assert all(r.treco == 0 for r in history)


def test_resume_continues_step_counter(tiny_dataset):
    cfg = small_cfg()
    tc = TrainConfig(epochs=2, batch_size=2)
    state, _ = network.train(tiny_dataset, cfg, tc)
    assert state.step == 4
    restored = network.decode_checkpoint(network.encode_checkpoint(state))
    more, _ = network.train(tiny_dataset, cfg, tc, state=restored)
    assert more.step == 8


def test_nonfinite_loss_aborts(tiny_dataset, monkeypatch):
    monkeypatch.setattr(losses, "sse_loss", lambda a, b: (float("nan"), np.zeros(len(b))))
    with pytest.raises(network.TrainingError, match="epoch 0, sequence"):
        network.train(tiny_dataset, small_cfg(), TrainConfig(epochs=1))


def test_stride_training_runs(tiny_dataset):
    _, history = network.train(tiny_dataset, small_cfg(), TrainConfig(epochs=1, stride=2))
    assert len(history) == 1


def test_periodicity_mode_runs(tiny_dataset):
    _, history = network.train(tiny_dataset, small_cfg(target_mode="periodicity"), TrainConfig(epochs=1))
    assert np.isfinite(history[0].total)


# -- checkpoints -----------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    state = NetworkState.init(NetworkConfig(input_dim=16, seed=4,
                                            similarity=similarity.SimilarityMeasure("correlation")))
    state.step = 17
    path = tmp_path / "w.racw"
    network.save_checkpoint(state, path)
    back = network.load_checkpoint(path)
    assert back.equals(state)
    assert network.encode_checkpoint(back) == path.read_bytes()
    assert path.read_bytes()[:4] == b"RACW"


def test_checkpoint_rejects_garbage():
    buf = network.encode_checkpoint(NetworkState.init(small_cfg()))
    with pytest.raises(network.CheckpointError):
        network.decode_checkpoint(b"XXXX" + buf[4:])
    with pytest.raises(network.CheckpointError):
        network.decode_checkpoint(buf[:-3])
