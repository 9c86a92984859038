import math

import numpy as np
import pytest

from cmcr import tensor as T
from cmcr.gradcheck import gradcheck
from cmcr.optim import Adam
from cmcr.regularizer import EMBED_DIM, CrConfig, FrozenEncoder, cr_loss, mean_abs_distance
from cmcr.tensor import Tensor

pytestmark = pytest.mark.usefixtures("f64")


def test_encoder_shape_and_determinism(rng):
    enc = FrozenEncoder()
    x = rng.standard_normal(16000)
    a, b = enc.encode(Tensor(x)).data, FrozenEncoder().encode(Tensor(x)).data
    assert a.shape == (61, EMBED_DIM)
    np.testing.assert_array_equal(a, b)


def test_silence_embeds_to_floor_times_row_sums():
    enc = FrozenEncoder()
    e = enc.encode(Tensor(np.zeros(1000))).data
    np.testing.assert_allclose(e, np.broadcast_to(math.log(1e-8) * enc.projection.data.sum(axis=0), e.shape), rtol=1e-12)


def test_encoder_rejects_short_input():
    with pytest.raises(ValueError):
        FrozenEncoder().encode(Tensor(np.zeros(100)))


def test_encoder_has_no_trainable_state():
    enc = FrozenEncoder()
    assert enc.parameters() == [] and not enc.projection.requires_grad


def test_encode_gradient_matches_finite_differences(rng):
    enc = FrozenEncoder()
    x = Tensor(0.5 * rng.standard_normal(600), requires_grad=True)
    assert gradcheck(lambda: enc.encode(x).sum(), [x], max_entries=40) < 1e-6


def test_identity_estimate_gives_zero(rng):
    s, y = rng.standard_normal(4000), rng.standard_normal(4000)
    assert cr_loss(s, y, Tensor(s), FrozenEncoder()).item() == 0.0


def test_estimate_equal_to_noisy_hits_eps_guard(rng):
    s, y = rng.standard_normal(4000), rng.standard_normal(4000)
    enc = FrozenEncoder("linear_stub")
    val = cr_loss(s, y, Tensor(y), enc, CrConfig(eps=1e-7)).item()
    assert math.isfinite(val)
    assert val == pytest.approx(np.abs(s - y).mean() / 1e-7, rel=1e-12)


@pytest.mark.parametrize("t", [0.25, 0.5, 0.75])
def test_linear_stub_closed_form(t, rng):
    s, y = rng.standard_normal(2000), rng.standard_normal(2000)
    d = np.abs(s - y).mean()
    eps = 1e-7
    s_hat = (1 - t) * y + t * s
    got = cr_loss(s, y, Tensor(s_hat), FrozenEncoder("linear_stub"), CrConfig(eps=eps)).item()
    assert abs(got - (1 - t) / (t + eps / d)) < 1e-6


def test_linear_stub_loss_decreases_toward_clean(rng):
    s, y = rng.standard_normal(500), rng.standard_normal(500)
    enc = FrozenEncoder("linear_stub")
    vals = [cr_loss(s, y, Tensor((1 - t) * y + t * s), enc).item() for t in np.linspace(0.05, 1.0, 20)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert min(vals) >= 0


def test_ablation_modes(rng):
    s, y, h = rng.standard_normal((3, 3000))
    enc = FrozenEncoder()
    pull = mean_abs_distance(enc.encode(Tensor(s)), enc.encode(Tensor(h))).item()
    push = mean_abs_distance(enc.encode(Tensor(y)), enc.encode(Tensor(h))).item() + 1e-7
    assert cr_loss(s, y, Tensor(h), enc, CrConfig(mode="no_negative")).item() == pytest.approx(pull)
    assert cr_loss(s, y, Tensor(h), enc, CrConfig(mode="no_positive")).item() == pytest.approx(1 / push)
    with pytest.raises(ValueError):
        CrConfig(mode="bogus")
    with pytest.raises(ValueError):
        CrConfig(eps=0)


def test_gradient_reaches_estimate_but_not_encoder(rng):
    s, y = rng.standard_normal((2, 3000))
    enc = FrozenEncoder()
    h = Tensor(rng.standard_normal(3000), requires_grad=True)
    cr_loss(s, y, h, enc).backward()
    assert h.grad is not None and np.abs(h.grad).sum() > 0
    assert enc.projection.grad is None


def test_length_mismatch_rejected(rng):
    with pytest.raises(ValueError):
        cr_loss(np.zeros(500), np.zeros(500), Tensor(np.zeros(501)), FrozenEncoder())


def adam_oracle(grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, x0=0.0):
    x, m, v = x0, 0.0, 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return x


def test_adam_matches_scalar_recurrence():
    p = Tensor(np.array([0.5]), requires_grad=True)
    opt = Adam([("p", p)], lr=1e-3)
    grads = []
    for _ in range(25):
        loss = (p * p * p).sum()
        loss.backward()
        grads.append(float(p.grad[0]))
        opt.step()
    assert p.data[0] == pytest.approx(adam_oracle(grads, x0=0.5), abs=1e-14)


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.01)
    (p * Tensor(np.array([3.0, -0.1]))).sum().backward()
    opt.step()
    np.testing.assert_allclose(p.data, [0.99, -1.99], atol=1e-8)
    assert p.grad is None


def test_adam_names_parameters_without_gradient():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    opt = Adam([("a", a), ("b", b)])
    a.sum().backward()
    with pytest.raises(ValueError, match="b"):
        opt.step()


def test_adam_state_round_trip():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([("p", p)])
    (p * p).sum().backward()
    opt.step()
    other = Adam([("p", Tensor(np.array([1.0]), requires_grad=True))])
    other.load_state_arrays(opt.state_arrays(), opt.step_count)
    assert other.step_count == 1
    np.testing.assert_array_equal(other.m[0], opt.m[0])
    np.testing.assert_array_equal(other.v[0], opt.v[0])


def test_float32_update_stays_float32():
    with T.default_dtype(np.float32):
        p = Tensor(np.ones(3), requires_grad=True)
    opt = Adam([p])
    (p * p).sum().backward()
    opt.step()
    assert p.dtype == np.float32 and opt.m[0].dtype == np.float32
