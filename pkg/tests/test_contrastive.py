import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dmmg import tensor as T
from dmmg.contrastive import TripletConfig, game_losses, mi_estimate, mine_hard_pairs, pairwise_sq_dist
from dmmg.errors import ConfigError, DegenerateInputError, DimensionError
from dmmg.tensor import Tensor, check_gradients

RAW = TripletConfig(normalize=False)


def brute_force_info(z1, z2, margin):
    """Exhaustive hardest-negative search and hinge sum in exact integer/float arithmetic."""
    z1, z2 = np.asarray(z1).tolist(), np.asarray(z2).tolist()
    total = 0
    for i, a in enumerate(z1):
        best = None
        for j, b in enumerate(z1):
            if j == i:
                continue
            d = sum((u - v) ** 2 for u, v in zip(a, b))
            if best is None or d < best:
                best = d
        d_pos = sum((u - v) ** 2 for u, v in zip(a, z2[i]))
        total += max(best - d_pos + margin, 0)
    return total


def int_batch(rng, n, p, lo=-6, hi=7):
    return rng.integers(lo, hi, size=(n, p)).astype(np.float32)


# --------------------------------------------------------------- distances


def test_pairwise_hand_value():
    np.testing.assert_array_equal(pairwise_sq_dist([[0.0, 0.0]], [[3.0, 4.0]]).data, [[25]])


def test_pairwise_self_is_zero_diagonal_and_symmetric(rng):
    a = rng.normal(size=(6, 3))
    d = pairwise_sq_dist(a, a).data
    assert not np.diag(d).any() and np.allclose(d, d.T)


def test_pairwise_translation_invariant(rng):
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    v = rng.normal(size=3)
    np.testing.assert_allclose(pairwise_sq_dist(a + v, b + v).data, pairwise_sq_dist(a, b).data, rtol=1e-4, atol=1e-5)


def test_pairwise_dim_mismatch():
    with pytest.raises(DimensionError):
        pairwise_sq_dist(np.zeros((2, 3)), np.zeros((2, 4)))


# ------------------------------------------------------------------ mining


def test_collinear_negatives():
    z = np.array([[0.0], [1.0], [5.0]])
    pos, neg = mine_hard_pairs(z, z)
    assert pos.tolist() == [0, 1, 2]
    assert neg[0] == 1 and neg[2] == 1


def test_tie_goes_to_lower_index():
    z = np.array([[0.0], [-1.0], [1.0]])
    assert mine_hard_pairs(z, z)[1][0] == 1


def test_positive_is_identity(rng):
    z1, z2 = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    assert mine_hard_pairs(z1, z2)[0].tolist() == list(range(7))


def test_needs_two_samples():
    with pytest.raises(DegenerateInputError):
        mine_hard_pairs(np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(DegenerateInputError):
        mi_estimate(np.zeros((1, 2)), np.zeros((1, 2)), RAW)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        mi_estimate(np.zeros((3, 2)), np.zeros((2, 2)), RAW)


def test_margin_must_be_positive():
    with pytest.raises(ConfigError):
        TripletConfig(margin=0).validate()


# --------------------------------------------------------------- estimator


def test_single_anchor_hand_value():
    # anchor (0,0) with positive (0,1); the only other anchor (2,0) is the negative.
    # The second anchor's term is zero here because its positive sits far away.
    z1 = np.array([[0.0, 0.0], [2.0, 0.0]])
    z2 = np.array([[0.0, 1.0], [2.0, 10.0]])
    per_anchor = [max(4 - 1 + 1, 0), max(4 - 100 + 1, 0)]
    assert per_anchor == [4, 0]
    assert mi_estimate(z1, z2, RAW).item() == 4


def test_duplicate_positives_give_dneg_plus_margin():
    z = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 5.0]])
    # nearest negatives: 0->1 (9), 1->0 (9), 2->0 (25)
    assert mi_estimate(z, z, RAW).item() == (9 + 1) + (9 + 1) + (25 + 1)


def test_hinge_clamps_to_zero():
    z1 = np.array([[0.0, 0.0], [0.0, 0.0]])
    z2 = np.array([[3.0, 0.0], [0.0, 3.0]])
    assert mi_estimate(z1, z2, RAW).item() == 0


@pytest.mark.parametrize("seed", range(20))
def test_matches_brute_force_exactly(seed):
    rng = np.random.default_rng(seed)
    n, p = rng.integers(2, 33), rng.integers(2, 17)
    z1, z2 = int_batch(rng, n, p), int_batch(rng, n, p)
    assert mi_estimate(z1, z2, RAW).item() == brute_force_info(z1.astype(int), z2.astype(int), 1)


@pytest.mark.parametrize("seed", range(5))
def test_normalized_matches_oracle_on_unit_rows(seed):
    rng = np.random.default_rng(seed)
    z1, z2 = rng.normal(size=(9, 5)), rng.normal(size=(9, 5))
    u1 = z1 / np.linalg.norm(z1, axis=1, keepdims=True)
    u2 = z2 / np.linalg.norm(z2, axis=1, keepdims=True)
    got = mi_estimate(z1.astype(np.float32), z2.astype(np.float32), TripletConfig()).item()
    assert got == pytest.approx(brute_force_info(u1, u2, 1.0), rel=1e-5)


def test_all_pairs_mode(rng):
    z1, z2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    cfg = TripletConfig(normalize=False, hard_mining=False)
    ref = 0.0
    for i in range(5):
        d_pos = ((z1[i] - z2[i]) ** 2).sum()
        for j in range(5):
            if j != i:
                ref += max(((z1[i] - z1[j]) ** 2).sum() - d_pos + 1, 0)
    assert mi_estimate(z1, z2, cfg).item() == pytest.approx(ref, rel=1e-5)


batches = st.tuples(st.integers(2, 8), st.integers(1, 5)).flatmap(
    lambda s: st.tuples(*[arrays(np.float32, s, elements=st.floats(-5, 5, width=32))] * 2))


@settings(max_examples=100, deadline=None)
@given(batches, st.booleans(), st.booleans())
def test_info_nonnegative(pair, hard, normalize):
    z1, z2 = pair
    assert mi_estimate(z1, z2, TripletConfig(hard_mining=hard, normalize=normalize)).item() >= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(-4, 4))
def test_translation_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    z1, z2 = int_batch(rng, 6, 3), int_batch(rng, 6, 3)
    v = np.float32(shift) * np.array([1, -2, 3], dtype=np.float32)
    assert mi_estimate(z1 + v, z2 + v, RAW).item() == mi_estimate(z1, z2, RAW).item()


def test_gradient_wrt_both_branches(rng):
    z1, z2 = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    for cfg in (RAW, TripletConfig(), TripletConfig(hard_mining=False)):
        assert check_gradients(lambda t: mi_estimate(t, Tensor(z2), cfg), z1) <= 1e-4
        assert check_gradients(lambda t: mi_estimate(Tensor(z1), t, cfg), z2) <= 1e-4


# -------------------------------------------------------------- game losses


def test_losses_sum_to_gamma(rng):
    z1, z2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    for gamma in (0.0, 3.5, 100.0):
        lmin, lmax = game_losses(z1, z2, TripletConfig(gamma=gamma))
        assert lmin.item() + lmax.item() == pytest.approx(gamma, abs=1e-4)


def test_gamma_equal_info_zeroes_max_loss(rng):
    z1, z2 = int_batch(rng, 5, 3), int_batch(rng, 5, 3)
    info = mi_estimate(z1, z2, RAW).item()
    assert game_losses(z1, z2, TripletConfig(gamma=info, normalize=False))[1].item() == 0


def test_max_loss_gradient_independent_of_gamma(rng):
    z1, z2 = rng.normal(size=(6, 4)).astype(np.float32), rng.normal(size=(6, 4)).astype(np.float32)
    grads = []
    for gamma in (0.0, 100.0):
        a, b = Tensor(z1, requires_grad=True), Tensor(z2, requires_grad=True)
        _, lmax = game_losses(a, b, TripletConfig(gamma=gamma))
        grads.append([g.tobytes() for g in T.grad(lmax, [a, b])])
    assert grads[0] == grads[1]
