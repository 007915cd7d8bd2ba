import numpy as np
import pytest

from gemproj import adapter_model as am
from gemproj.projector import exact_qp_project
from gemproj.replay import ReplayBuffer, build_constraint_matrix, task_gradient


def make_examples(labels, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((len(labels), dim))
    return X, np.asarray(labels)


def small_model(seed=0):
    model = am.build_model(
        am.ModelConfig(input_dim=4, hidden_dim=3, n_classes=3, rank=2, alpha=8.0), seed=seed
    )
    rng = np.random.default_rng(seed + 50)
    phi = am.get_adapter_params(model).phi
    am.set_adapter_params(model, phi + 0.05 * rng.standard_normal(phi.size))
    return model


# --- insertion and balancing -----------------------------------------------------

def test_balancing_rule_splits_capacity_between_labels():
    buf = ReplayBuffer(capacity_per_task=4, total_cap=100)
    X, y = make_examples([0, 0, 0, 0, 1, 1, 1, 1])
    buf.insert(0, X, y)
    assert dict(buf.label_counts(0)) == {0: 2, 1: 2}


def test_below_capacity_everything_is_retained():
    buf = ReplayBuffer(capacity_per_task=10, total_cap=100)
    X, y = make_examples([0, 1, 2])
    buf.insert(0, X, y)
    assert buf.size(0) == 3


def test_insertion_is_deterministic():
    X, y = make_examples([0, 1, 0, 2, 1, 1, 0, 2, 2, 0], seed=3)
    bufs = []
    for _ in range(2):
        buf = ReplayBuffer(capacity_per_task=5, total_cap=100)
        buf.insert(0, X, y)
        bufs.append(buf)
    a, b = bufs
    assert [yy for _, yy in a.per_task[0]] == [yy for _, yy in b.per_task[0]]
    for (xa, _), (xb, _) in zip(a.per_task[0], b.per_task[0]):
        np.testing.assert_array_equal(xa, xb)


def test_label_counts_balance_at_capacity():
    # once every label keeps arriving, the at-capacity steady state is
    # balanced to +/- 1 (below capacity everything is retained as-is)
    rng = np.random.default_rng(9)
    buf = ReplayBuffer(capacity_per_task=7, total_cap=100)
    labels = rng.integers(0, 3, size=120)
    X = rng.standard_normal((len(labels), 4))
    buf.insert(0, X, labels)
    counts = buf.label_counts(0)
    assert buf.size(0) == 7
    assert max(counts.values()) - min(counts.values()) <= 1


def test_total_cap_evicts_oldest_of_largest_task():
    buf = ReplayBuffer(capacity_per_task=100, total_cap=10)
    X, y = make_examples([0] * 8)
    buf.insert(0, X, y)
    X2, y2 = make_examples([1] * 6, seed=1)
    buf.insert(1, X2, y2)
    # whichever task is largest sheds its oldest entry, so sizes equalize
    assert buf.total_size() == 10
    assert buf.size(0) == 5 and buf.size(1) == 5
    # the survivors in task 0 are the NEWEST zeros (oldest evicted first)
    kept = [tuple(x) for x, _ in buf.per_task[0]]
    np.testing.assert_array_equal(np.array(kept), X[3:])


def test_insert_rejects_negative_labels():
    buf = ReplayBuffer()
    with pytest.raises(ValueError):
        buf.insert(0, np.zeros((1, 4)), np.array([-1]))


# --- task gradients ---------------------------------------------------------------

def test_single_example_buffer_matches_backward():
    model = small_model()
    buf = ReplayBuffer()
    X, y = make_examples([1], seed=4)
    buf.insert(0, X, y)
    _, want = am.backward(model, X, y)
    np.testing.assert_array_equal(task_gradient(buf, 0, model), want)


def test_duplicate_examples_equal_single_example_gradient():
    model = small_model()
    buf = ReplayBuffer()
    X, y = make_examples([2], seed=5)
    buf.insert(0, np.vstack([X, X]), np.concatenate([y, y]))
    _, want = am.backward(model, X, y)
    assert np.abs(task_gradient(buf, 0, model) - want).max() <= 1e-12


def test_two_distinct_examples_average():
    model = small_model()
    buf = ReplayBuffer()
    X, y = make_examples([0, 2], seed=6)
    buf.insert(0, X, y)
    _, g0 = am.backward(model, X[:1], y[:1])
    _, g1 = am.backward(model, X[1:], y[1:])
    assert np.abs(task_gradient(buf, 0, model) - 0.5 * (g0 + g1)).max() <= 1e-12


def test_empty_task_buffer_raises():
    model = small_model()
    with pytest.raises(ValueError, match="empty"):
        task_gradient(ReplayBuffer(), 0, model)


# --- constraint matrix -------------------------------------------------------------

def _filled_buffer(model, tasks=(0, 1), n=6):
    buf = ReplayBuffer()
    for t in tasks:
        X, y = make_examples(list(np.arange(n) % 3), seed=10 + t)
        buf.insert(t, X, y)
    return buf


def test_single_past_task_row_is_normalized_gradient():
    model = small_model()
    buf = _filled_buffer(model, tasks=(0,))
    G = build_constraint_matrix(buf, model, [0], normalize=True)
    raw = task_gradient(buf, 0, model)
    assert G.rows == 1
    np.testing.assert_allclose(G.data[0], raw / np.linalg.norm(raw), rtol=1e-12)


def test_rows_unit_norm_when_normalized():
    model = small_model()
    buf = _filled_buffer(model)
    G = build_constraint_matrix(buf, model, [0, 1], normalize=True)
    np.testing.assert_allclose(np.linalg.norm(G.data, axis=1), np.ones(G.rows), atol=1e-9)


def test_normalization_does_not_move_the_projection():
    # row scaling does not change the cone {v : G v >= 0}
    model = small_model()
    buf = _filled_buffer(model)
    g = np.random.default_rng(0).standard_normal(am.adapter_dim(model))
    G_on = build_constraint_matrix(buf, model, [0, 1], normalize=True)
    G_off = build_constraint_matrix(buf, model, [0, 1], normalize=False)
    a = exact_qp_project(g, G_on).projected_gradient
    b = exact_qp_project(g, G_off).projected_gradient
    assert np.linalg.norm(a - b) <= 1e-9


def test_memory_accounting_matches_m_times_d():
    model = small_model()
    buf = _filled_buffer(model)
    G = build_constraint_matrix(buf, model, [0, 1])
    d_phi = am.adapter_dim(model)
    assert G.data.size == 2 * d_phi
    assert G.data.nbytes == 2 * d_phi * 8


def test_rebuild_after_parameter_step_changes_g():
    model = small_model()
    buf = _filled_buffer(model)
    stale = build_constraint_matrix(buf, model, [0, 1])
    phi = am.get_adapter_params(model).phi
    am.set_adapter_params(model, phi - 0.05 * np.sign(phi))
    fresh = build_constraint_matrix(buf, model, [0, 1])
    assert np.abs(fresh.data - stale.data).max() > 0.0
