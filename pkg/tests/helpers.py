"""Small problem builders shared by the test modules."""

import numpy as np
import scipy.sparse as sp

from gark.systems import GoalFunction, Partition, ProblemInstance, SplitOdeSystem


def sum_goal(dim: int) -> GoalFunction:
    w = np.ones(dim)
    return GoalFunction(evaluate=lambda y: float(w @ y),
                        gradient=lambda y: w.copy(),
                        weights=w, description="component sum")


def wrap(system: SplitOdeSystem, y0, t_final: float, t0: float = 0.0,
         goal: GoalFunction | None = None, exact=None,
         name: str = "test") -> ProblemInstance:
    y0 = np.asarray(y0, dtype=float)
    return ProblemInstance(name=name, system=system, grid=None, y0=y0,
                           t0=t0, t_final=t_final,
                           goal=goal or sum_goal(y0.size),
                           exact_solution=exact)


def _linear_partition(name: str, A: np.ndarray, stiff: bool = False) -> Partition:
    A_sp = sp.csr_matrix(A)
    return Partition(name=name,
                     rhs=lambda t, y, A_sp=A_sp: A_sp @ y,
                     jacobian=lambda t, y, A_sp=A_sp: A_sp,
                     linear=True, stiff=stiff)


def scalar_split(lam_a: float, lam_b: float,
                 stiff=(False, False)) -> SplitOdeSystem:
    """Scalar y' = lam_a*y + lam_b*y as a two-partition system."""
    parts = (_linear_partition("a", np.array([[lam_a]]), stiff[0]),
             _linear_partition("b", np.array([[lam_b]]), stiff[1]))
    return SplitOdeSystem(dim=1, partitions=parts)


def linear_pair(seed: int, dim: int = 6):
    """Random nonstiff matrices A, B; returns (system, A + B)."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((dim, dim)) / dim - 0.5 * np.eye(dim)
    B = rng.standard_normal((dim, dim)) / dim - 0.5 * np.eye(dim)
    system = SplitOdeSystem(dim=dim, partitions=(
        _linear_partition("a", A), _linear_partition("b", B)))
    return system, A + B


def stiff_relaxation(dim: int = 5, rate: float = 40.0) -> SplitOdeSystem:
    """Stiff linear decay plus a mild nonlinear coupling term."""
    L = -rate * np.eye(dim) + 0.5 * np.eye(dim, k=1)
    shift = np.arange(1, dim + 1, dtype=float)

    def soft_rhs(t, y):
        return np.sin(y) + 0.1 * np.cos(t) * shift

    def soft_jac(t, y):
        return sp.diags(np.cos(y)).tocsr()

    parts = (_linear_partition("decay", L, stiff=True),
             Partition(name="soft", rhs=soft_rhs, jacobian=soft_jac))
    return SplitOdeSystem(dim=dim, partitions=parts)


def nonlinear_stiff(dim: int = 4, rate: float = 30.0) -> SplitOdeSystem:
    """Nonlinear stiff partition (needs Newton) plus an explicit drift."""

    def stiff_rhs(t, y):
        return -rate * y - y ** 3

    def stiff_jac(t, y):
        return sp.diags(-rate - 3.0 * y ** 2).tocsr()

    def drift_rhs(t, y):
        return np.cos(y) + np.sin(t) * np.ones_like(y)

    def drift_jac(t, y):
        return sp.diags(-np.sin(y)).tocsr()

    parts = (Partition(name="stiff", rhs=stiff_rhs, jacobian=stiff_jac,
                       stiff=True),
             Partition(name="drift", rhs=drift_rhs, jacobian=drift_jac))
    return SplitOdeSystem(dim=dim, partitions=parts)
