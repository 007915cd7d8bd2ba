import numpy as np
import pytest

from gemproj.projector import ConstraintMatrix
from gemproj.spectral import SpectralEstimate, power_iteration, stepsize


def test_identity_matrix_gives_one_in_a_single_step():
    G = ConstraintMatrix(np.eye(2))
    for seed in (0, 1, 2):
        est = power_iteration(G, iters=1, seed=seed)
        assert est.sigma_max_hat == pytest.approx(1.0, abs=1e-12)


def test_aligned_start_vector_hits_top_eigenvalue_immediately():
    # rows deliberately NOT normalized: G G' = diag(2, 1)
    G = ConstraintMatrix(np.array([[np.sqrt(2.0), 0.0], [0.0, 1.0]]))
    est = power_iteration(G, v0=np.array([1.0, 0.0]), iters=1)
    assert est.sigma_max_hat == pytest.approx(2.0, abs=1e-12)


def test_many_iterations_match_dense_eigensolve():
    rng = np.random.default_rng(7)
    G = ConstraintMatrix(rng.standard_normal((4, 32)))
    est = power_iteration(G, iters=50, seed=7)
    truth = np.linalg.eigvalsh(G.data @ G.data.T)[-1]
    assert est.sigma_max_hat == pytest.approx(truth, rel=1e-6)


def test_empty_matrix_reports_zero():
    est = power_iteration(ConstraintMatrix.empty(8))
    assert est.sigma_max_hat == 0.0


def test_rayleigh_never_exceeds_truth_and_is_monotone_in_iters():
    rng = np.random.default_rng(13)
    for _ in range(50):
        m = int(rng.integers(1, 7))
        d = int(rng.integers(2, 40))
        G = ConstraintMatrix(rng.standard_normal((m, d)))
        truth = np.linalg.eigvalsh(G.data @ G.data.T)[-1]
        prev = 0.0
        for iters in (1, 2, 4, 8):
            est = power_iteration(G, iters=iters, seed=3)
            assert est.sigma_max_hat <= truth + 1e-9
            assert est.sigma_max_hat >= prev - 1e-12
            prev = est.sigma_max_hat


def test_start_vector_validation():
    G = ConstraintMatrix(np.eye(3))
    with pytest.raises(ValueError):
        power_iteration(G, v0=np.zeros(3))
    with pytest.raises(ValueError):
        power_iteration(G, v0=np.ones(2))
    with pytest.raises(ValueError):
        power_iteration(G, iters=0)


def test_stepsize_formula():
    assert stepsize(SpectralEstimate(2.0, 3), c=0.7) == pytest.approx(0.35)
    assert stepsize(SpectralEstimate(1.0, 1), c=1.0) == pytest.approx(1.0)
    assert stepsize(SpectralEstimate(4.0, 3), c=0.5) == pytest.approx(0.125)


def test_stepsize_rejects_bad_config():
    est = SpectralEstimate(2.0, 3)
    with pytest.raises(ValueError):
        stepsize(est, c=0.0)
    with pytest.raises(ValueError):
        stepsize(est, c=1.5)
    with pytest.raises(ValueError):
        stepsize(SpectralEstimate(0.0, 3), c=0.7)


def test_default_start_vector_is_deterministic():
    G = ConstraintMatrix(np.random.default_rng(0).standard_normal((5, 9)))
    a = power_iteration(G, iters=3, seed=42).sigma_max_hat
    b = power_iteration(G, iters=3, seed=42).sigma_max_hat
    assert a == b
