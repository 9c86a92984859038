import math

import numpy as np
import pytest

from cmcr import tensor as T
from cmcr.attention import (
    CmConfig,
    CmStack,
    CollaborationModule,
    ContrastiveAttention,
    InteractiveAttention,
    contrastive_loss,
    contrastive_scores,
    window_gap,
    window_indices,
)
from cmcr.gradcheck import gradcheck
from cmcr.optim import Adam
from cmcr.tensor import Tensor

pytestmark = pytest.mark.usefixtures("f64")


def attention_oracle(ca: ContrastiveAttention, x: np.ndarray):
    """Explicit loops: scores, masks and weighted sums."""
    b, c, t, f = x.shape
    q = np.einsum("oc,bctf->botf", ca.q_proj.weight.data, x) + ca.q_proj.bias.data[None, :, None, None]
    k = np.einsum("oc,bctf->botf", ca.k_proj.weight.data, x) + ca.k_proj.bias.data[None, :, None, None]
    s = np.zeros((b, c, f, f))
    for bi in range(b):
        for ci in range(c):
            for i in range(f):
                for j in range(f):
                    s[bi, ci, i, j] = ca.amp.data[ci, i, j] * np.dot(q[bi, ci, :, i], k[bi, ci, :, j]) / math.sqrt(t)
    e = np.exp(s - s.max(-1, keepdims=True))
    m_r = e / e.sum(-1, keepdims=True)
    m_i = 1 - m_r
    x_rel = np.einsum("bctj,bcfj->bctf", x, m_r)
    x_irr = np.einsum("bctj,bcfj->bctf", x, m_i) / (f - 1)
    return s, m_r, m_i, x_rel, x_irr


def loss_oracle(s: np.ndarray, cfg: CmConfig) -> float:
    f = s.shape[-1]
    k = max(1, math.ceil(round(cfg.n_r * f, 9)))
    m = math.floor(round(cfg.n_i * f, 9))
    vals = []
    for row in s.reshape(-1, f):
        srt = sorted(row, reverse=True)
        num = sum(math.exp(v) for v in srt[:k])
        den = sum(math.exp(v) for v in srt[m : m + k])
        vals.append(-math.log(num / den) + cfg.r)
    return float(np.mean(vals))


def test_window_indices():
    assert window_indices(16, CmConfig()) == (2, 2)
    assert window_indices(17, CmConfig()) == (2, 2)
    assert window_indices(25, CmConfig()) == (2, 4)  # 0.08 * 25 = 2 exactly
    assert window_indices(2, CmConfig()) == (1, 0)
    with pytest.raises(ValueError, match="overflow"):
        window_indices(4, CmConfig(n_r=1e-12, n_i=1.0))  # k clamps up to 1, m = F
    with pytest.raises(ValueError):
        CmConfig(n_r=0.0)


def test_contrastive_attention_matches_oracle(rng):
    ca = ContrastiveAttention(2, 4, rng)
    ca.amp.data[:] = rng.uniform(0.5, 1.5, ca.amp.shape)
    x = rng.standard_normal((1, 2, 3, 4))
    x_rel, x_irr, s = ca(Tensor(x))
    s_o, m_r, m_i, rel_o, irr_o = attention_oracle(ca, x)
    np.testing.assert_allclose(s.data, s_o, atol=1e-12)
    np.testing.assert_allclose(ca.last_M_r, m_r, atol=1e-12)
    np.testing.assert_allclose(ca.last_M_i, m_i, atol=1e-12)
    np.testing.assert_allclose(x_rel.data, rel_o, atol=1e-12)
    np.testing.assert_allclose(x_irr.data, irr_o, atol=1e-12)


def test_mask_invariants(rng):
    ca = ContrastiveAttention(3, 9, rng)
    ca(Tensor(rng.standard_normal((2, 3, 5, 9))))
    np.testing.assert_allclose(ca.last_M_r.sum(-1), 1.0, atol=1e-6)
    np.testing.assert_array_equal(ca.last_M_i, 1.0 - ca.last_M_r)
    assert ca.last_M_i.min() >= 0 and ca.last_M_i.max() <= 1


def test_amp_starts_at_ones_so_scores_are_plain_scaled_products(rng):
    ca = ContrastiveAttention(2, 5, rng)
    assert np.all(ca.amp.data == 1.0)
    x = Tensor(rng.standard_normal((1, 2, 4, 5)))
    q, k = ca.q_proj(x).data, ca.k_proj(x).data
    np.testing.assert_allclose(ca(x)[2].data, np.swapaxes(q, -1, -2) @ k / 2.0, atol=1e-12)


def test_self_similar_inputs_attend_to_themselves():
    # Q = K with orthonormal frequency columns -> each row peaks at its own index
    f = 6
    q = Tensor(np.eye(f)[None, None] * 10.0)
    s = contrastive_scores(q, q, Tensor(np.ones((1, f, f))))
    m_r = T.softmax_rows(s).data
    assert np.all(np.argmax(m_r[0, 0], axis=-1) == np.arange(f))


def test_constant_input_gives_uniform_masks(rng):
    ca = ContrastiveAttention(2, 5, rng)
    x = np.broadcast_to(np.array([1.5, -0.5])[None, :, None, None], (1, 2, 3, 5)).copy()
    x_rel, x_irr, _ = ca(Tensor(x))
    assert ca.last_M_r.max() - ca.last_M_r.min() < 1e-12 or np.allclose(ca.last_M_r, 1 / 5)
    np.testing.assert_allclose(x_rel.data, x, atol=1e-12)
    np.testing.assert_allclose(x_irr.data, x, atol=1e-12)


def test_single_bin_rejected(rng):
    with pytest.raises(ValueError):
        ContrastiveAttention(2, 1, rng)


def test_hand_computed_row_gives_minus_two():
    row = np.zeros(16)
    row[:4] = [4.0, 3.0, 2.0, 1.0]
    s = Tensor(row[None, None, None, :])
    expected = -math.log((math.e**4 + math.e**3) / (math.e**2 + math.e**1))
    assert expected == pytest.approx(-2.0, abs=1e-12)
    assert abs(contrastive_loss(s, CmConfig()).item() - expected) < 1e-9
    assert abs(contrastive_loss(s, CmConfig(r=0.5)).item() - (expected + 0.5)) < 1e-9


def test_loss_matches_oracle_on_random_scores(rng):
    s = rng.standard_normal((2, 3, 17, 17)) * 2
    for cfg in (CmConfig(), CmConfig(n_r=0.2, n_i=0.3, r=0.1)):
        assert contrastive_loss(Tensor(s), cfg).item() == pytest.approx(loss_oracle(s, cfg), abs=1e-12)


def test_constant_scores_give_r_exactly():
    for r in (0.0, 0.25, 5.0):
        assert contrastive_loss(Tensor(np.full((2, 16, 16), -3.1)), CmConfig(r=r)).item() == r


def test_loss_gradient_through_sort(rng):
    s = Tensor(rng.standard_normal((2, 16, 16)), requires_grad=True)
    assert gradcheck(lambda: contrastive_loss(s, CmConfig()), [s]) < 1e-6


def test_adam_on_amp_widens_every_row_gap(rng):
    s0 = rng.standard_normal((4, 16, 16))
    amp = Tensor(np.ones_like(s0), requires_grad=True)
    cfg = CmConfig()
    gap0 = window_gap(s0, cfg)
    opt = Adam([("amp", amp)], lr=1e-2)
    for _ in range(100):
        contrastive_loss(amp * s0, cfg).backward()
        opt.step()
    gap = window_gap(amp.data * s0, cfg)
    assert np.all(gap > gap0)


def test_interactive_attention_is_identity_at_init_with_zero_irrelevant(rng):
    ia = InteractiveAttention(4, rng)
    x = rng.standard_normal((2, 4, 3, 5))
    y = ia(Tensor(x), Tensor(rng.standard_normal(x.shape)), Tensor(np.zeros(x.shape)))
    np.testing.assert_array_equal(y.data, x)


def test_interactive_attention_rejects_mismatch(rng):
    ia = InteractiveAttention(4, rng)
    with pytest.raises(ValueError):
        ia(Tensor(np.zeros((1, 4, 3, 5))), Tensor(np.zeros((1, 4, 3, 5))), Tensor(np.zeros((1, 4, 3, 4))))


def test_interactive_attention_gradients(rng):
    ia = InteractiveAttention(2, rng, zero_init=False)
    x, rel, irr = (Tensor(rng.standard_normal((1, 2, 3, 4)), requires_grad=True) for _ in range(3))
    w = rng.standard_normal((1, 2, 3, 4))
    assert gradcheck(lambda: (ia(x, rel, irr) * w).sum(), [x, rel, irr] + ia.parameters()) < 1e-6


def test_collaboration_module_gradients(rng):
    cm = CollaborationModule(2, 5, rng, zero_init=False)
    x = Tensor(rng.standard_normal((1, 2, 3, 5)), requires_grad=True)
    w = rng.standard_normal((1, 2, 3, 5))

    def fn():
        y, loss = cm(x, CmConfig(n_r=0.2, n_i=0.4))
        return (y * w).sum() + loss

    assert gradcheck(fn, [x] + cm.parameters()) < 1e-6


def test_stack_of_three_preserves_shape_and_averages_loss(rng):
    stack = CmStack(4, 9, CmConfig(), rng)
    x = Tensor(rng.standard_normal((2, 4, 3, 9)))
    y, loss = stack(x)
    assert y.shape == x.shape and len(stack.blocks) == 3
    manual = np.mean([contrastive_loss(Tensor(b.contrastive.last_S), CmConfig()).item() for b in stack.blocks])
    assert loss.item() == pytest.approx(manual, abs=1e-12)
    assert set(stack.attention_arrays()) == {f"cm{i}.{n}" for i in range(3) for n in ("S", "M_r", "M_i")}


def test_stack_gradients(rng):
    stack = CmStack(2, 9, CmConfig(), rng, zero_init=False)
    # unit-scale inputs leave sorted-score gaps near 1e-5 and attention
    # gradients near 1e-6; scaled inputs keep central differences clear of both
    x = Tensor(3.0 * rng.standard_normal((1, 2, 4, 9)), requires_grad=True)
    w = rng.standard_normal((1, 2, 4, 9))

    def fn():
        y, loss = stack(x)
        return (y * w).sum() + loss

    assert gradcheck(fn, [x] + stack.parameters()) < 1e-6


def test_constant_features_with_r_five_give_loss_five(rng):
    stack = CmStack(2, 9, CmConfig(r=5.0), rng)
    x = np.ones((1, 2, 3, 9))
    _, loss = stack(Tensor(x))
    assert loss.item() == pytest.approx(5.0, abs=1e-12)


def test_batch_permutation_equivariance(rng):
    stack = CmStack(2, 9, CmConfig(), rng, zero_init=False)
    x = rng.standard_normal((3, 2, 4, 9))
    perm = np.array([2, 0, 1])
    y, _ = stack(Tensor(x))
    yp, _ = stack(Tensor(x[perm]))
    np.testing.assert_allclose(yp.data, y.data[perm], atol=1e-12)
