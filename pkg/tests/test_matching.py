import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dmsynth.diffusion import diffusion_loss, make_schedule
from dmsynth.matching import (
    FeatureBatch, LossConfig, ObjectiveReport, batch_mmd_loss, combined_loss,
    mmd_sq_linear, mmd_sq_rbf, synthesis_objective_report,
)
from dmsynth.nets import NetSpec, net_init
from dmsynth.taskbench import LabeledDataset, PipelineToggles

TWO_MINUS_2_EXP_HALF = 0.78693868057473315279  # 2 - 2 exp(-1/2), mpmath


def naive_linear(a, b):
    n, m = len(a), len(b)
    s_aa = sum(float(a[i] @ a[j]) for i in range(n) for j in range(n)) / n**2
    s_bb = sum(float(b[i] @ b[j]) for i in range(m) for j in range(m)) / m**2
    s_ab = sum(float(a[i] @ b[j]) for i in range(n) for j in range(m)) / (n * m)
    return s_aa + s_bb - 2 * s_ab


def naive_rbf(a, b, h):
    def k(u, v):
        return math.exp(-sum((ui - vi) ** 2 for ui, vi in zip(u, v)) / (2 * h * h))

    n, m = len(a), len(b)
    s_aa = sum(k(a[i], a[j]) for i in range(n) for j in range(n)) / n**2
    s_bb = sum(k(b[i], b[j]) for i in range(m) for j in range(m)) / m**2
    s_ab = sum(k(a[i], b[j]) for i in range(n) for j in range(m)) / (n * m)
    return s_aa + s_bb - 2 * s_ab


def random_pair(rng):
    d = int(rng.integers(1, 6))
    a = rng.standard_normal((int(rng.integers(1, 15)), d))
    b = rng.standard_normal((int(rng.integers(1, 15)), d)) + rng.standard_normal(d)
    return a, b


# ---------------------------------------------------------------- estimators

def test_linear_examples():
    assert mmd_sq_linear([[1.0, 0.0]], [[1.0, 0.0]]) == 0.0
    assert mmd_sq_linear([[1.0, 0.0]], [[0.0, 0.0]]) == 1.0
    assert mmd_sq_linear([[0.0, 0.0], [2.0, 0.0]], [[1.0, 1.0]]) == 1.0


def test_rbf_singletons():
    assert mmd_sq_rbf([[0.0]], [[1.0]], 1.0) == pytest.approx(TWO_MINUS_2_EXP_HALF, rel=1e-15)


def test_rbf_identical_is_zero():
    a = np.random.default_rng(0).standard_normal((20, 3))
    assert abs(mmd_sq_rbf(a, a[::-1], 0.7)) <= 1e-12


def test_rbf_rejects_bad_bandwidth():
    with pytest.raises(ValueError):
        mmd_sq_rbf([[0.0]], [[1.0]], 0.0)


def test_empty_and_mismatched_batches_rejected():
    with pytest.raises(ValueError):
        mmd_sq_linear(np.zeros((0, 2)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        mmd_sq_linear(np.zeros((1, 2)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        FeatureBatch(np.zeros((0, 2)))


def test_estimators_match_double_sum_oracles():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = random_pair(rng)
        h = float(rng.uniform(0.3, 3.0))
        assert mmd_sq_linear(a, b) == pytest.approx(naive_linear(a, b), rel=1e-10, abs=1e-12)
        assert mmd_sq_rbf(a, b, h) == pytest.approx(naive_rbf(a, b, h), rel=1e-10, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_estimators_symmetric_and_nonnegative(seed):
    a, b = random_pair(np.random.default_rng(seed))
    assert mmd_sq_linear(a, b) == pytest.approx(mmd_sq_linear(b, a), rel=1e-12, abs=1e-15)
    assert mmd_sq_rbf(a, b) == pytest.approx(mmd_sq_rbf(b, a), rel=1e-12, abs=1e-15)
    assert mmd_sq_linear(a, b) >= 0
    assert mmd_sq_rbf(a, b) >= -1e-12
    assert mmd_sq_linear(a, a) == 0.0
    assert abs(mmd_sq_rbf(a, a)) <= 1e-12


# ---------------------------------------------------------------- Jensen relation

def test_batch_loss_cancellation_and_singleton():
    assert batch_mmd_loss([[1.0, 0.0], [-1.0, 0.0]]) == 0.0
    r = np.array([[0.3, -1.2, 2.0]])
    assert batch_mmd_loss(r) == pytest.approx(float(np.sum(r * r)), rel=1e-15)


def test_batch_loss_rejects_empty():
    with pytest.raises(ValueError):
        batch_mmd_loss(np.zeros((0, 2)))


def test_jensen_sweep():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n, d = int(rng.integers(1, 257)), int(rng.integers(1, 17))
        r = rng.standard_normal((n, d)) * rng.uniform(0.01, 10)
        mean_sq = float(np.mean(np.sum(r * r, axis=1)))
        assert batch_mmd_loss(r) <= mean_sq + 1e-9


@settings(max_examples=100, deadline=None)
@given(r=arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 4)),
                elements=st.floats(-100, 100, allow_nan=False)))
def test_jensen_property(r):
    mean_sq = float(np.mean(np.sum(r * r, axis=1)))
    lhs = batch_mmd_loss(r)
    assert lhs <= mean_sq + 1e-9 * max(1.0, mean_sq)
    # the gap is exactly the spread around the batch mean
    spread = float(np.mean(np.sum((r - r.mean(axis=0)) ** 2, axis=1)))
    assert mean_sq - lhs == pytest.approx(spread, abs=1e-9 * max(1.0, mean_sq))
    if bool(np.all(r == r[0])):
        assert lhs == pytest.approx(mean_sq, rel=1e-12, abs=1e-12)
    elif spread > 1e-9 * max(1.0, mean_sq):  # strictness only where doubles can resolve it
        assert lhs < mean_sq


# ---------------------------------------------------------------- combined loss

def test_gamma_zero_equals_diffusion_loss():
    s = make_schedule()
    x0 = np.random.default_rng(3).standard_normal((16, 2))
    model = lambda x_t, t, c: 0.3 * x_t
    a = combined_loss(model, s, x0, np.zeros((16, 1)), LossConfig(0.0), np.random.default_rng(9))
    b = diffusion_loss(model, s, x0, np.zeros((16, 1)), np.random.default_rng(9))
    assert a.total == b.loss


def test_perfect_predictor_total_zero():
    s = make_schedule()
    x0 = np.random.default_rng(4).standard_normal((8, 2))
    clone = np.random.default_rng(6)
    clone.integers(1, s.T + 1, size=8)
    eps = clone.standard_normal((8, 2))
    out = combined_loss(lambda x_t, t, c: eps, s, x0, np.zeros((8, 1)), LossConfig(), np.random.default_rng(6))
    assert out.total == 0.0


def test_antisymmetric_residuals_example():
    s = make_schedule()
    clone = np.random.default_rng(8)
    clone.integers(1, s.T + 1, size=2)
    eps = clone.standard_normal((2, 2))
    res = np.array([[1.0, 0.0], [-1.0, 0.0]])
    out = combined_loss(lambda x_t, t, c: eps - res, s, np.zeros((2, 2)), np.zeros((2, 1)), LossConfig(0.05),
                        np.random.default_rng(8))
    assert out.simple == pytest.approx(1.0, rel=1e-15)
    assert out.mmd == pytest.approx(0.0, abs=1e-30)
    assert out.total == pytest.approx(1.0, rel=1e-15)


def test_loss_config_rejects_negative_gamma():
    with pytest.raises(ValueError, match="gamma"):
        LossConfig(-1.0)


@pytest.mark.parametrize("gamma", [0.0, 0.05, 1.0])
def test_combined_gradient_finite_difference(fd_combined, gamma):
    assert fd_combined(gamma=gamma, hidden=(8,)) < 1e-4


# ---------------------------------------------------------------- objective report

def _probe(num_classes, dim, seed=0):
    return net_init(NetSpec(dim, (8,), num_classes, final_activation="softmax"), seed)


def _ds(seed, n=40):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.standard_normal((n, 2)), np.arange(n) % 3, 3, "train")


def test_report_same_set_zero_mmd():
    real = _ds(0)
    rep = synthesis_objective_report(real, real, None, _probe(3, 2))
    assert rep.mmd_sq == 0.0
    assert rep.combined == rep.mmd_sq + rep.conditional_divergence


def test_report_invariant_and_duplication():
    real, syn = _ds(0), _ds(1)
    enc = net_init(NetSpec(2, (5,), 4), 3)
    probe = _probe(3, 2)
    lam = 0.01
    a = synthesis_objective_report(real, syn, enc, probe, lam)
    dup = LabeledDataset(np.vstack([syn.x, syn.x]), np.concatenate([syn.y, syn.y]), 3, "synthetic")
    b = synthesis_objective_report(real, dup, enc, probe, lam)
    assert a.combined == a.mmd_sq + a.conditional_divergence - lam * a.cardinality_term
    assert b.mmd_sq == pytest.approx(a.mmd_sq, rel=1e-12)
    assert b.conditional_divergence == pytest.approx(a.conditional_divergence, rel=1e-12)
    assert b.combined == pytest.approx(a.combined - lam * len(syn.y), rel=1e-12)


def test_report_rejects_class_mismatch():
    real = _ds(0)
    other = LabeledDataset(np.zeros((4, 2)), np.array([0, 1, 2, 3]), 4, "synthetic")
    with pytest.raises(ValueError):
        synthesis_objective_report(real, other, None, _probe(3, 2))


def test_report_row_order():
    rep = ObjectiveReport(1.0, 2.0, 3.0, 0.5, 1.5)
    assert rep.row() == [1.0, 2.0, 3.0, 0.5, 1.5]
    assert ObjectiveReport.CSV_COLUMNS[0] == "mmd_sq"


@pytest.mark.slow
def test_mmd_term_does_not_raise_eval_mmd(ablation_rows):
    # full method trained with gamma = 0.05 against the same rows with the MMD term off (gamma = 0)
    by = {r.toggles: r for r in ablation_rows}
    with_mmd = by[PipelineToggles(finetune=True, latent_prior=True, visual_guidance=True, mmd_loss=True)]
    without = by[PipelineToggles(finetune=True, latent_prior=True, visual_guidance=True, mmd_loss=False)]
    assert np.mean(with_mmd.mmd) <= np.mean(without.mmd)
