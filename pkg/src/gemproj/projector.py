"""Gradient projection rules for replay-constrained continual learning.

Three projectors share one geometry: given the current gradient g and a
matrix G whose rows are averaged past-task gradients, find the point g~
closest to g inside the cone {v : G v >= 0}.

* ``exact_qp_project``   -- exact solution by active-set enumeration (oracle).
* ``pgd_project``        -- fixed-budget projected gradient descent on the
                            dual multipliers (the cheap iterative route).
* ``agem_project``       -- single-constraint closed form against an averaged
                            reference gradient.

The dual of the cone projection is a nonnegative QP over multipliers:

    min_{lam >= 0}  0.5 lam' (G G') lam + (G g)' lam,     g~ = g + G' lam*

All arithmetic is float64.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

logger = logging.getLogger(__name__)

# Tolerances chosen for 64-bit floats.
FEASIBILITY_TOL = 1e-9
DUAL_NONNEG_TOL = 1e-10
COMPLEMENTARITY_TOL = 1e-8
OBJECTIVE_TIE_TOL = 1e-12

DEFAULT_ENUM_LIMIT = 16


class ActiveSetCapacityError(ValueError):
    """Raised when exact enumeration would exceed the subset budget."""


def _as_vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class ConstraintMatrix:
    """Stacked past-task gradients, one row per remembered task.

    ``data`` is dense row-major, shape (m, d_phi). ``normalized`` records
    whether rows were rescaled to unit Euclidean norm; ``dropped_rows``
    records original indices of zero-norm rows removed before scaling.
    """

    data: np.ndarray
    normalized: bool = False
    dropped_rows: tuple[int, ...] = ()

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"constraint matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ValueError("constraint matrix needs dim >= 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values in constraint matrix")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @classmethod
    def empty(cls, dim: int) -> "ConstraintMatrix":
        return cls(np.zeros((0, dim)))

    @classmethod
    def from_rows(cls, rows, normalize: bool = False) -> "ConstraintMatrix":
        """Stack gradient rows, dropping zero rows (logged) and optionally
        scaling the survivors to unit norm."""
        arr = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        norms = np.linalg.norm(arr, axis=1)
        keep = norms > 0.0
        dropped = tuple(int(i) for i in np.flatnonzero(~keep))
        if dropped:
            logger.warning("dropping %d zero-norm constraint row(s): %s", len(dropped), dropped)
            arr = arr[keep]
            norms = norms[keep]
        if normalize and arr.shape[0] > 0:
            arr = arr / norms[:, None]
        return cls(arr, normalized=normalize, dropped_rows=dropped)


@dataclass
class DualState:
    """Nonnegative multiplier vector plus warm-start lifecycle metadata.

    ``origin`` is "cold" when lam was reset to zeros (first step after a
    task boundary) and "warm" when carried over from a previous projection.
    """

    lam: np.ndarray
    origin: str = "cold"
    task_index: int | None = None

    def __post_init__(self):
        self.lam = _as_vector(self.lam, "lam")
        if self.origin not in ("cold", "warm"):
            raise ValueError(f"origin must be 'cold' or 'warm', got {self.origin!r}")
        if self.lam.size and self.lam.min() < 0.0:
            raise ValueError("dual state violates lam >= 0")

    @classmethod
    def cold(cls, m: int, task_index: int | None = None) -> "DualState":
        return cls(np.zeros(m), origin="cold", task_index=task_index)


@dataclass(frozen=True)
class MarginConfig:
    """Optional dual lower bound lam >= memory_strength (disabled by default,
    so the plain dual update is used)."""

    memory_strength: float = 0.3
    enabled: bool = False

    def __post_init__(self):
        if self.memory_strength < 0.0:
            raise ValueError("memory_strength must be >= 0")


@dataclass
class ProjectionResult:
    """Outcome of one projection call.

    ``projected_gradient`` is always reconstructible as
    ``input gradient + G' @ final_lambda.lam``.  ``max_violation`` is
    max_k(-(G g~)_k) clipped at zero, and ``wall_time`` is measured with
    the monotonic clock around the full call.
    """

    projected_gradient: np.ndarray
    final_lambda: DualState
    dual_value: float
    iterations_used: int
    max_violation: float
    wall_time: float = field(repr=False, default=0.0)


def _check_dims(lam: np.ndarray, G: ConstraintMatrix, g: np.ndarray):
    if lam.shape[0] != G.rows:
        raise ValueError(f"lambda has length {lam.shape[0]}, expected m={G.rows}")
    if g.shape[0] != G.dim:
        raise ValueError(f"gradient has length {g.shape[0]}, expected d={G.dim}")


def dual_objective(lam, G: ConstraintMatrix, g) -> float:
    """Dual value F(lam) = 0.5 ||G' lam||^2 + (G g)' lam.

    Uses two matrix-vector products; G G' is never materialized.
    """
    lam = _as_vector(lam, "lam")
    g = _as_vector(g, "g")
    _check_dims(lam, G, g)
    u = G.data.T @ lam
    return float(0.5 * u.dot(u) + (G.data @ g).dot(lam))


def dual_gradient(lam, G: ConstraintMatrix, g) -> np.ndarray:
    """Gradient of the dual: (G G') lam + G g, computed as G (G' lam) + G g."""
    lam = _as_vector(lam, "lam")
    g = _as_vector(g, "g")
    _check_dims(lam, G, g)
    return G.data @ (G.data.T @ lam) + G.data @ g


def _max_violation(G: ConstraintMatrix, g_tilde: np.ndarray) -> float:
    if G.rows == 0:
        return 0.0
    return float(max(0.0, -(G.data @ g_tilde).min()))


def pgd_project(
    g,
    G: ConstraintMatrix,
    warm: DualState,
    eta: float,
    K: int,
    margin: MarginConfig | None = None,
) -> ProjectionResult:
    """Fixed-budget dual projected gradient descent.

    Runs exactly K iterations of lam <- max(0, lam - eta * grad F(lam))
    starting from ``warm.lam`` and returns g~ = g + G' lam_K together with
    the final multipliers for warm-starting the next call.  When a margin
    is enabled the clip floor becomes memory_strength instead of zero.
    """
    t0 = time.perf_counter()
    g = _as_vector(g, "g")
    if eta <= 0.0:
        raise ValueError("eta must be > 0")
    if K < 1:
        raise ValueError("K must be >= 1")
    # G is validated finite at construction; only the fresh gradient needs checking
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite values in gradient")
    if warm.lam.size and warm.lam.min() < 0.0:
        raise ValueError("warm-start lambda has a negative component")
    if warm.lam.shape[0] != G.rows:
        raise ValueError(f"warm lambda length {warm.lam.shape[0]} != m={G.rows}")

    if G.rows == 0:
        return ProjectionResult(
            projected_gradient=g.copy(),
            final_lambda=DualState(np.zeros(0), origin="warm", task_index=warm.task_index),
            dual_value=0.0,
            iterations_used=0,
            max_violation=0.0,
            wall_time=time.perf_counter() - t0,
        )

    floor = margin.memory_strength if (margin is not None and margin.enabled) else 0.0
    A = G.data
    Gg = A @ g
    lam = warm.lam.copy()
    for _ in range(K):
        r = A @ (A.T @ lam) + Gg
        lam = np.maximum(floor, lam - eta * r)

    u = A.T @ lam
    g_tilde = g + u
    dual_value = float(0.5 * u.dot(u) + Gg.dot(lam))
    return ProjectionResult(
        projected_gradient=g_tilde,
        final_lambda=DualState(lam, origin="warm", task_index=warm.task_index),
        dual_value=dual_value,
        iterations_used=K,
        max_violation=_max_violation(G, g_tilde),
        wall_time=time.perf_counter() - t0,
    )


def exact_qp_project(g, G: ConstraintMatrix, enum_limit: int = DEFAULT_ENUM_LIMIT) -> ProjectionResult:
    """Exact cone projection by enumeration of all 2^m active sets.

    For each subset S the equality-constrained system
    (G_S G_S') lam_S = -G_S g is solved (pseudo-inverse fallback when
    singular); candidates must satisfy lam_S >= -1e-10 and G g~ >= -1e-9.
    The feasible candidate with minimal 0.5 ||g~ - g||^2 wins, and ties
    within 1e-12 keep the smaller active set.  The result satisfies the
    KKT conditions of the cone projection.
    """
    t0 = time.perf_counter()
    g = _as_vector(g, "g")
    m = G.rows
    if m > enum_limit:
        raise ActiveSetCapacityError(
            f"m={m} exceeds the active-set enumeration limit {enum_limit}; "
            "use pgd_project for large constraint counts"
        )
    if g.shape[0] != G.dim:
        raise ValueError(f"gradient has length {g.shape[0]}, expected d={G.dim}")
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite values in gradient")

    if m == 0:
        return ProjectionResult(
            projected_gradient=g.copy(),
            final_lambda=DualState(np.zeros(0)),
            dual_value=0.0,
            iterations_used=0,
            max_violation=0.0,
            wall_time=time.perf_counter() - t0,
        )

    A = G.data
    Gg = A @ g
    best_gt = None
    best_lam = None
    best_obj = np.inf
    n_evaluated = 0
    # Subsets ordered by size then lexicographically, so the strict-improvement
    # rule below keeps the smallest active set among near-equal objectives.
    for size in range(m + 1):
        for S in combinations(range(m), size):
            n_evaluated += 1
            lam = np.zeros(m)
            if S:
                idx = list(S)
                M = A[idx] @ A[idx].T
                b = -Gg[idx]
                try:
                    lam_S = np.linalg.solve(M, b)
                    if not np.all(np.isfinite(lam_S)):
                        raise np.linalg.LinAlgError
                except np.linalg.LinAlgError:
                    lam_S = np.linalg.pinv(M) @ b
                lam[idx] = lam_S
            if lam.min() < -DUAL_NONNEG_TOL:
                continue
            g_tilde = g + A.T @ lam
            if (A @ g_tilde).min() < -FEASIBILITY_TOL:
                continue
            diff = g_tilde - g
            obj = 0.5 * diff.dot(diff)
            if obj < best_obj - OBJECTIVE_TIE_TOL:
                best_obj = obj
                best_gt = g_tilde
                best_lam = lam
    if best_gt is None:
        raise ValueError("active-set enumeration found no feasible candidate (numerical breakdown)")

    u = A.T @ best_lam
    dual_value = float(0.5 * u.dot(u) + Gg.dot(best_lam))
    return ProjectionResult(
        projected_gradient=best_gt,
        final_lambda=DualState(np.maximum(best_lam, 0.0)),
        dual_value=dual_value,
        iterations_used=n_evaluated,
        max_violation=_max_violation(G, best_gt),
        wall_time=time.perf_counter() - t0,
    )


def agem_project(g, g_ref) -> np.ndarray:
    """Single-constraint closed-form projection against an averaged reference
    gradient: if g' g_ref >= 0 return g, else remove the violating component.
    """
    g = _as_vector(g, "g")
    g_ref = _as_vector(g_ref, "g_ref")
    if g.shape != g_ref.shape:
        raise ValueError(f"shape mismatch: g {g.shape} vs g_ref {g_ref.shape}")
    if not np.all(np.isfinite(g)) or not np.all(np.isfinite(g_ref)):
        raise ValueError("non-finite values in gradients")
    denom = g_ref.dot(g_ref)
    if denom == 0.0:
        return g.copy()
    dot = g.dot(g_ref)
    if dot >= 0.0:
        return g.copy()
    return g - (dot / denom) * g_ref


def violation_check(g, G: ConstraintMatrix, tol: float = 0.0) -> tuple[bool, float]:
    """Report whether any constraint is violated beyond tol.

    Returns (violated, worst) where worst = min_k (G g)_k, or +inf when
    there are no constraints.
    """
    if tol < 0.0:
        raise ValueError("tol must be >= 0")
    g = _as_vector(g, "g")
    if G.rows == 0:
        return (False, np.inf)
    if g.shape[0] != G.dim:
        raise ValueError(f"gradient has length {g.shape[0]}, expected d={G.dim}")
    worst = float((G.data @ g).min())
    return (worst < -tol, worst)
