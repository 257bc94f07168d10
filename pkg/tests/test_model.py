import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqrand.errors import ConfigError, NumericError, StructuralError
from freqrand.freq import spatial_channels
from freqrand.model import (
    AdamConfig,
    ChannelStats,
    ModelConfig,
    backward,
    backward_coeffs,
    cross_entropy,
    forward,
    forward_coeffs,
    init_state,
    learning_rate,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
)


def small_state(rng, kernel1=1, kernel2=3, channels=5):
    cfg = ModelConfig(n_classes=3, in_channels=channels, hidden1=4, hidden2=3, kernel1=kernel1,
                      kernel2=kernel2, head_init_std=0.5)
    state = init_state(cfg, seed=7)
    state.norm_mean = rng.normal(size=channels)
    state.norm_scale = rng.uniform(0.5, 2.0, size=channels)
    # non-zero biases keep every ReLU away from its kink at initialization
    for name in ("b1", "b2", "b3"):
        state.params[name] = rng.normal(scale=0.1, size=state.params[name].shape)
    return state


def finite_difference_check(state, x, y, eps=1e-6, per_tensor=6, seed=0):
    r = np.random.default_rng(seed)
    _, grads = backward(state, x, y)
    worst = 0.0
    for name, value in state.params.items():
        for _ in range(per_tensor):
            idx = tuple(int(r.integers(d)) for d in value.shape)
            old = value[idx]
            value[idx] = old + eps
            up = cross_entropy(forward(state, x), y)
            value[idx] = old - eps
            down = cross_entropy(forward(state, x), y)
            value[idx] = old
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(grads[name][idx]), 1e-7)
            worst = max(worst, abs(numeric - grads[name][idx]) / denom)
    return worst


@pytest.mark.parametrize("kernel1,kernel2", [(1, 3), (3, 3), (1, 1), (3, 5)])
def test_gradients_match_finite_differences(rng, kernel1, kernel2):
    state = small_state(rng, kernel1, kernel2)
    x = rng.normal(size=(3, 5, 6, 7))
    y = np.array([0, 2, 1])
    assert finite_difference_check(state, x, y) < 1e-4


def test_coefficient_path_matches_spatial_path(rng):
    state = init_state(ModelConfig(head_init_std=0.5), seed=3)
    state.norm_mean = rng.normal(size=192) * 0.1
    state.norm_scale = rng.uniform(0.5, 2.0, size=192)
    state.norm_scale[[5, 70]] = 0.0  # muted channels
    coeffs = rng.normal(size=(4, 3, 2, 3, 64))
    y = np.array([0, 1, 2, 3])
    x = spatial_channels(coeffs)
    np.testing.assert_allclose(forward_coeffs(state, coeffs).logits, forward(state, x).logits, atol=1e-10)
    loss_a, grads_a = backward(state, x, y)
    loss_b, grads_b = backward_coeffs(state, coeffs, y)
    assert loss_a == pytest.approx(loss_b, abs=1e-12)
    for name in grads_a:
        np.testing.assert_allclose(grads_a[name], grads_b[name], atol=1e-10)


def test_coefficient_path_falls_back_for_wide_kernels(rng):
    state = init_state(ModelConfig(kernel1=3, head_init_std=0.5), seed=1)
    coeffs = rng.normal(size=(2, 3, 1, 2, 64))
    np.testing.assert_allclose(forward_coeffs(state, coeffs).logits,
                               forward(state, spatial_channels(coeffs)).logits, atol=1e-12)


def test_prediction_outputs(rng):
    state = small_state(rng)
    pred = forward(state, rng.normal(size=(4, 5, 3, 3)))
    np.testing.assert_allclose(pred.probabilities.sum(axis=1), 1.0)
    assert np.all(pred.entropy >= 0) and np.all(pred.entropy <= np.log(3) + 1e-12)
    assert pred.labels.shape == (4,)


def test_uniform_logits_have_log_c_entropy():
    state = init_state(ModelConfig(n_classes=4, in_channels=2, hidden1=2, hidden2=2), seed=0)
    state.params["w3"][:] = 0.0
    pred = forward(state, np.ones((1, 2, 2, 2)))
    assert pred.entropy[0] == pytest.approx(np.log(4))
    assert cross_entropy(pred, [1]) == pytest.approx(np.log(4))


def test_input_channel_count_is_checked(rng):
    state = small_state(rng)
    with pytest.raises(StructuralError):
        forward(state, np.zeros((1, 4, 3, 3)))
    with pytest.raises(StructuralError):
        init_state(ModelConfig(kernel1=2))


def test_non_finite_loss_raises(rng):
    state = small_state(rng)
    x = rng.normal(size=(2, 5, 3, 3))
    x[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        backward(state, x, [0, 1])


def test_initialization_statistics():
    state = init_state(ModelConfig(), seed=0)
    w1 = state.params["w1"]
    assert w1.std() == pytest.approx(np.sqrt(2.0 / 192), rel=0.1)
    assert state.params["w3"].std() == pytest.approx(0.01, rel=0.3)
    assert all(not state.params[b].any() for b in ("b1", "b2", "b3"))
    assert state.n_params == sum(v.size for v in state.params.values())
    again = init_state(ModelConfig(), seed=0)
    assert all(np.array_equal(state.params[k], again.params[k]) for k in state.params)


def test_channel_stats_and_dead_channels(rng):
    x = rng.normal(loc=2.0, scale=3.0, size=(50, 3, 4, 4))
    x[:, 1] = 5.0
    stats = ChannelStats(3)
    stats.update(x[:20])
    stats.update(x[20:])
    mean, scale = stats.finalize()
    np.testing.assert_allclose(mean, x.mean(axis=(0, 2, 3)))
    assert scale[1] == 0.0
    np.testing.assert_allclose(scale[[0, 2]], 1.0 / x[:, [0, 2]].std(axis=(0, 2, 3)))


def test_two_adam_steps_by_hand():
    opt = AdamConfig(lr=0.1, beta1=0.9, beta2=0.99, eps=1e-8, step_size=1000, gamma=0.5)
    state = init_state(ModelConfig(n_classes=2, in_channels=1, hidden1=1, hidden2=1, kernel1=1, kernel2=1), opt)
    start = state.params["w3"].copy()
    g1 = {k: np.full_like(v, 0.5) for k, v in state.params.items()}
    g2 = {k: np.full_like(v, -1.0) for k, v in state.params.items()}
    optimizer_step(state, g1)
    # step 1: m = 0.05, v = 0.0025, bias-corrected m = 0.5, v = 0.25 -> update 0.1 * 0.5 / 0.5
    np.testing.assert_allclose(state.params["w3"], start - 0.1 * 0.5 / (0.5 + 1e-8))
    optimizer_step(state, g2)
    m = 0.9 * 0.05 + 0.1 * -1.0
    v = 0.99 * 0.0025 + 0.01 * 1.0
    m_hat = m / (1 - 0.9**2)
    v_hat = v / (1 - 0.99**2)
    want = start - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_allclose(state.params["w3"], want, rtol=1e-12)
    assert state.step == 2


@given(st.integers(0, 20000))
def test_step_decay_schedule(step):
    state = init_state(ModelConfig(in_channels=1, hidden1=1, hidden2=1), AdamConfig())
    state.step = step
    assert learning_rate(state) == pytest.approx(1e-5 * 0.1 ** (step // 5000))


def test_checkpoint_round_trip(tmp_path, rng):
    state = small_state(rng)
    optimizer_step(state, {k: np.ones_like(v) for k, v in state.params.items()})
    path = tmp_path / "ck.npz"
    save_checkpoint(state, path, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta["note"] == "x" and loaded.step == 1 and loaded.config == state.config
    x = rng.normal(size=(2, 5, 3, 3))
    np.testing.assert_array_equal(forward(loaded, x).logits, forward(state, x).logits)
    for k in state.params:
        np.testing.assert_array_equal(loaded.moment2[k], state.moment2[k])


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, a=np.zeros(2))
    with pytest.raises(ConfigError):
        load_checkpoint(path)


def test_parameter_count_and_input_overhead():
    cfg = ModelConfig()
    assert cfg.param_count() == init_state(cfg).n_params
    rgb = init_state(ModelConfig(in_channels=3)).n_params
    assert cfg.input_overhead() == pytest.approx((init_state(cfg).n_params - rgb) / rgb)
