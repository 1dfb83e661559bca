import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmsynth.conditioning import (
    ConditionTable, build_condition, condition_matrix, drop_condition, drop_mask, embedding_grads,
    init_condition_table, null_condition, null_matrix, visual_guidance,
)


@pytest.fixture
def table():
    return init_condition_table(3, 4, 2, seed=0)


def test_visual_guidance_examples():
    rng = np.random.default_rng(0)
    assert np.array_equal(visual_guidance(None, [[3.0, -1.0]], 5, rng), [3.0, -1.0])
    assert np.array_equal(visual_guidance(None, [[0.0, 0.0], [2.0, 4.0]], 2, rng), [1.0, 2.0])


def test_visual_guidance_full_mean_when_m_exceeds_class():
    x = np.random.default_rng(1).standard_normal((7, 3))
    got = visual_guidance(None, x, 50, np.random.default_rng(2))
    assert np.allclose(got, x.mean(axis=0), rtol=1e-15, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_visual_guidance_order_invariant_at_full_size(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((int(rng.integers(1, 20)), 3))
    w = rng.standard_normal((3, 2))
    enc = lambda v: np.tanh(v @ w)
    a = visual_guidance(enc, x, len(x), np.random.default_rng(0))
    b = visual_guidance(enc, x[rng.permutation(len(x))], len(x), np.random.default_rng(0))
    assert np.array_equal(a, b)


def test_visual_guidance_subset_deterministic_given_seed():
    x = np.random.default_rng(1).standard_normal((40, 2))
    a = visual_guidance(None, x, 5, np.random.default_rng(3))
    b = visual_guidance(None, x, 5, np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_visual_guidance_rejects_empty_class():
    with pytest.raises(ValueError):
        visual_guidance(None, np.zeros((0, 2)), 3, np.random.default_rng(0))


def test_build_condition_examples(table):
    c = build_condition(table, 0)
    assert np.array_equal(c.class_part, table.class_embeddings[0])
    assert np.array_equal(c.visual_part, np.zeros(2))
    assert not c.is_null
    d = build_condition(table, 0)
    assert np.array_equal(c.vector(), d.vector())
    n = null_condition(table)
    assert n.is_null and np.array_equal(n.class_part, table.null_embedding) and not n.visual_part.any()


def test_build_condition_rejects_bad_label(table):
    with pytest.raises(ValueError):
        build_condition(table, 3)


def test_table_rejects_aliasing_and_non_finite():
    emb = np.zeros((2, 3))
    with pytest.raises(ValueError):
        ConditionTable(2, emb, emb[0], 0)
    with pytest.raises(ValueError):
        ConditionTable(2, np.array([[np.nan] * 3] * 2), np.zeros(3), 0)


def test_drop_condition_extremes(table):
    c = build_condition(table, 1)
    rng = np.random.default_rng(0)
    assert all(drop_condition(c, 0.0, rng, table) is c for _ in range(100))
    assert all(drop_condition(c, 1.0, rng, table).is_null for _ in range(100))


def test_drop_fraction_binomial(table):
    c = build_condition(table, 1)
    rng = np.random.default_rng(4)
    n = 100_000
    hits = sum(drop_condition(c, 0.1, rng, table).is_null for _ in range(n))
    assert abs(hits / n - 0.1) < 3 * math.sqrt(0.1 * 0.9 / n)


def test_drop_mask_extremes():
    rng = np.random.default_rng(0)
    assert not drop_mask(50, 0.0, rng).any()
    assert drop_mask(50, 1.0, rng).all()


def test_condition_matrix_rows(table):
    vis = np.arange(6.0).reshape(3, 2)
    mask = np.array([False, True, False])
    m = condition_matrix(table, np.array([2, 0, 1]), vis, mask)
    assert np.array_equal(m[0], build_condition(table, 2, vis[0]).vector())
    assert np.array_equal(m[1], null_condition(table).vector())
    assert np.array_equal(null_matrix(table, 2)[1], null_condition(table).vector())


def test_embedding_grads_scatter(table):
    labels = np.array([0, 0, 2, 1])
    mask = np.array([False, False, False, True])
    g = np.arange(24.0).reshape(4, 6)
    g_cls, g_null = embedding_grads(table, labels, mask, g)
    assert np.array_equal(g_cls[0], g[0, :4] + g[1, :4])
    assert np.array_equal(g_cls[2], g[2, :4])
    assert not g_cls[1].any()
    assert np.array_equal(g_null, g[3, :4])
