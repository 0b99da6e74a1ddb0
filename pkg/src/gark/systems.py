"""Additively split ODE systems and the finite-difference problem library.

States are nodal vectors over a grid's unknowns, species-major for
multi-species problems.  Every partition exposes its right-hand side and an
assembled sparse Jacobian; the mass matrix is the identity throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from gark.mesh import DIRICHLET, NEUMANN, TensorGrid2D, trapezoid_weights


@dataclass(frozen=True)
class Partition:
    """One term of the additive split y' = sum_q f^(q)(t, y)."""

    name: str
    rhs: Callable[[float, np.ndarray], np.ndarray]
    jacobian: Callable[[float, np.ndarray], sp.spmatrix]
    linear: bool = False
    stiff: bool = False


@dataclass(frozen=True, eq=False)
class SplitOdeSystem:
    dim: int
    partitions: tuple[Partition, ...]

    @property
    def num_partitions(self) -> int:
        return len(self.partitions)

    @property
    def stiff_flags(self) -> tuple[bool, ...]:
        return tuple(p.stiff for p in self.partitions)

    @property
    def linear_flags(self) -> tuple[bool, ...]:
        return tuple(p.linear for p in self.partitions)

    @property
    def partition_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.partitions)

    def f(self, q: int, t: float, y: np.ndarray) -> np.ndarray:
        return self.partitions[q].rhs(t, y)

    def jac(self, q: int, t: float, y: np.ndarray) -> sp.spmatrix:
        return self.partitions[q].jacobian(t, y)

    def jac_action(self, q: int, t: float, y: np.ndarray,
                   v: np.ndarray) -> np.ndarray:
        return self.jac(q, t, y) @ v

    def jac_transpose_action(self, q: int, t: float, y: np.ndarray,
                             v: np.ndarray) -> np.ndarray:
        return self.jac(q, t, y).T @ v


@dataclass(frozen=True)
class GoalFunction:
    """Scalar quantity of interest Q(y) with its gradient."""

    evaluate: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    weights: np.ndarray | None = None
    description: str = ""


@dataclass
class ProblemInstance:
    """A split system bound to a grid, an initial state, and a goal."""

    name: str
    system: SplitOdeSystem
    grid: TensorGrid2D | None
    y0: np.ndarray
    t0: float
    t_final: float
    goal: GoalFunction
    exact_solution: Callable[[float], np.ndarray] | None = None
    num_species: int = 1
    params: dict = field(default_factory=dict)


def discretize_laplacian(grid: TensorGrid2D, coefficient=None) -> sp.csr_matrix:
    """Flux-form div(c grad u) on the grid's unknowns.

    Face coefficients are arithmetic means of the nodal coefficient field;
    Neumann edges carry zero flux, Dirichlet edges hold value zero and their
    nodes are eliminated.  Exact on quadratics over uniform spacing, and the
    all-Neumann operator conserves the trapezoid integral for any state.
    """
    ny, nx = grid.node_shape
    if coefficient is None:
        D = np.ones((ny, nx))
    elif callable(coefficient):
        X, Y = np.meshgrid(grid.xs, grid.ys)
        D = np.broadcast_to(np.asarray(coefficient(X, Y), dtype=float),
                            (ny, nx)).copy()
    else:
        D = np.asarray(coefficient, dtype=float)
        if D.shape != (ny, nx):
            raise ValueError(f"coefficient field must have shape {(ny, nx)}")

    idx = grid.unknown_index()
    hx, hy = np.diff(grid.xs), np.diff(grid.ys)
    wx, wy = trapezoid_weights(grid.xs), trapezoid_weights(grid.ys)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []

    def face(k, neighbor, d_face, h, w):
        coef = d_face / (h * w)
        rows.append(k)
        cols.append(k)
        vals.append(-coef)
        if neighbor >= 0:
            rows.append(k)
            cols.append(neighbor)
            vals.append(coef)

    for r in range(ny):
        for c in range(nx):
            k = idx[r, c]
            if k < 0:
                continue
            if c + 1 < nx:
                face(k, idx[r, c + 1], 0.5 * (D[r, c] + D[r, c + 1]),
                     hx[c], wx[c])
            if c - 1 >= 0:
                face(k, idx[r, c - 1], 0.5 * (D[r, c] + D[r, c - 1]),
                     hx[c - 1], wx[c])
            if r + 1 < ny:
                face(k, idx[r + 1, c], 0.5 * (D[r, c] + D[r + 1, c]),
                     hy[r], wy[r])
            if r - 1 >= 0:
                face(k, idx[r - 1, c], 0.5 * (D[r, c] + D[r - 1, c]),
                     hy[r - 1], wy[r])

    n = grid.num_unknowns
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def integral_goal(grid: TensorGrid2D, num_species: int = 1,
                  species=0) -> GoalFunction:
    """Trapezoid-rule integral of one species (or of all, species='all')."""
    wg = grid.quadrature_weights()
    n = grid.num_unknowns
    w = np.zeros(num_species * n)
    picked = range(num_species) if species == "all" else [int(species)]
    for s in picked:
        w[s * n:(s + 1) * n] = wg
    w.setflags(write=False)
    return GoalFunction(evaluate=lambda y: float(w @ y),
                        gradient=lambda y: w.copy(),
                        weights=w,
                        description=f"trapezoid integral, species={species}")


def _require_domain(grid: TensorGrid2D, x_span, y_span, bc: str, name: str):
    ok = (math.isclose(grid.xs[0], x_span[0], abs_tol=1e-12)
          and math.isclose(grid.xs[-1], x_span[1], abs_tol=1e-12)
          and math.isclose(grid.ys[0], y_span[0], abs_tol=1e-12)
          and math.isclose(grid.ys[-1], y_span[1], abs_tol=1e-12))
    if not ok:
        raise ValueError(f"{name} expects the domain "
                         f"[{x_span[0]},{x_span[1]}]x[{y_span[0]},{y_span[1]}]")
    if any(tag != bc for tag in grid.bc.values()):
        raise ValueError(f"{name} expects {bc} edges everywhere")


# --- manufactured reaction-diffusion problem -------------------------------

def _calvo_g(x: np.ndarray) -> np.ndarray:
    left = (x + 1.0) * (2.0 * x - 21.0 / 4.0)
    right = (3.0 - x) * (x - 23.0 / 4.0)
    return np.where(x <= 2.0, left, right)


def _calvo_gxx(x: np.ndarray) -> np.ndarray:
    # second derivative jumps across x = 2; nodes on the seam take the mean,
    # which is also what the symmetric second difference produces there
    out = np.where(x < 2.0, 4.0, -2.0)
    return np.where(np.abs(x - 2.0) <= 1e-9, 1.0, out)


def make_calvo(grid: TensorGrid2D, nu: float = 0.1) -> ProblemInstance:
    """Reaction-diffusion u_t = nu lap(u) + u - u^3 + f with a known solution.

    The manufactured solution (2 + cos(pi t))/30 * g(x) * (y^2 - 1) is
    piecewise quadratic per direction and C^1 across x = 2, so on uniform
    spacing with a grid line at x = 2 (nx divisible by 4) the nodal samples
    solve the semi-discrete system exactly.  The default nu = 0.1 is a
    conventional choice for this setup, not part of the solution.
    Domain [-1,3]x[-1,1], zero Dirichlet edges, t in [0, 1.5].
    """
    _require_domain(grid, (-1.0, 3.0), (-1.0, 1.0), DIRICHLET, "make_calvo")
    coords = grid.unknown_coords()
    xc, yc = coords[:, 0], coords[:, 1]
    gx, gxxc = _calvo_g(xc), _calvo_gxx(xc)
    qy = yc * yc - 1.0
    gq = gx * qy

    lap = (nu * discretize_laplacian(grid)).tocsr()

    def s(t: float) -> float:
        return (2.0 + math.cos(math.pi * t)) / 30.0

    def s_dot(t: float) -> float:
        return -math.pi * math.sin(math.pi * t) / 30.0

    def forcing(t: float) -> np.ndarray:
        st = s(t)
        u = st * gq
        return (s_dot(t) * gq - nu * st * (gxxc * qy + 2.0 * gx) - u + u ** 3)

    def reaction_rhs(t: float, y: np.ndarray) -> np.ndarray:
        return y - y ** 3 + forcing(t)

    def reaction_jac(t: float, y: np.ndarray) -> sp.spmatrix:
        return sp.diags(1.0 - 3.0 * y ** 2, format="csr")

    system = SplitOdeSystem(
        dim=grid.num_unknowns,
        partitions=(
            Partition("diffusion", lambda t, y: lap @ y,
                      lambda t, y: lap, linear=True, stiff=True),
            Partition("reaction", reaction_rhs, reaction_jac),
        ))

    def exact(t: float) -> np.ndarray:
        return s(t) * gq

    return ProblemInstance(name="calvo", system=system, grid=grid,
                           y0=exact(0.0), t0=0.0, t_final=1.5,
                           goal=integral_goal(grid),
                           exact_solution=exact,
                           params={"nu": nu})


# --- two-species autocatalytic pattern problem -----------------------------

def make_gray_scott(grid: TensorGrid2D, feed: float = 0.024,
                    kill: float = 0.06, du: float = 8.0e-2,
                    dv: float = 4.0e-2, t_final: float = 50.0
                    ) -> ProblemInstance:
    """Two-species problem u_t = du lap(u) - u v^2 + feed (1 - u),
    v_t = dv lap(v) + u v^2 - (feed + kill) v on [0,2]^2, zero-flux edges.

    State is species-major: all u unknowns, then all v unknowns.  The goal
    integrates the u species only.
    """
    _require_domain(grid, (0.0, 2.0), (0.0, 2.0), NEUMANN, "make_gray_scott")
    n = grid.num_unknowns
    lap = discretize_laplacian(grid)
    diff = sp.block_diag((du * lap, dv * lap), format="csr")
    decay = feed + kill

    def reaction_rhs(t: float, y: np.ndarray) -> np.ndarray:
        u, v = y[:n], y[n:]
        uvv = u * v * v
        return np.concatenate([-uvv + feed * (1.0 - u), uvv - decay * v])

    def reaction_jac(t: float, y: np.ndarray) -> sp.spmatrix:
        u, v = y[:n], y[n:]
        return sp.bmat([[sp.diags(-v * v - feed), sp.diags(-2.0 * u * v)],
                        [sp.diags(v * v), sp.diags(2.0 * u * v - decay)]],
                       format="csr")

    system = SplitOdeSystem(
        dim=2 * n,
        partitions=(
            Partition("diffusion", lambda t, y: diff @ y,
                      lambda t, y: diff, linear=True, stiff=True),
            Partition("reaction", reaction_rhs, reaction_jac),
        ))

    coords = grid.unknown_coords()
    x, y_ = coords[:, 0], coords[:, 1]
    strip = (x >= 0.75) & (x <= 1.25)
    v0 = np.where(strip,
                  0.25 * np.sin(4.0 * math.pi * x) ** 2
                  * np.sin(4.0 * math.pi * y_) ** 2,
                  1.0)
    u0 = np.where(strip, 1.0 - 2.0 * v0, 0.0)

    return ProblemInstance(name="gray_scott", system=system, grid=grid,
                           y0=np.concatenate([u0, v0]), t0=0.0,
                           t_final=t_final,
                           goal=integral_goal(grid, num_species=2, species=0),
                           num_species=2,
                           params={"feed": feed, "kill": kill, "du": du,
                                   "dv": dv, "t_final": t_final})


# --- bistable variable-diffusion problem -----------------------------------

_BSVD_CENTERS_Y = (0.6, 0.75, 0.9)


def bsvd_diffusivity(x, y):
    """Three Gaussian bumps of diffusivity along x = 0.5."""
    total = 0.0
    for yc in _BSVD_CENTERS_Y:
        total = total + np.exp(-100.0 * ((x - 0.5) ** 2 + (y - yc) ** 2))
    return 0.1 * total


def make_bsvd(grid: TensorGrid2D, t_final: float = 7.0) -> ProblemInstance:
    """Bistable front u_t = div(D grad u) + 10 (1 - u^2)(u + 0.6) on [0,1]^2
    with zero-flux edges and the diffusivity bumps of ``bsvd_diffusivity``."""
    _require_domain(grid, (0.0, 1.0), (0.0, 1.0), NEUMANN, "make_bsvd")
    lap = discretize_laplacian(grid, bsvd_diffusivity)

    def reaction_rhs(t: float, y: np.ndarray) -> np.ndarray:
        return 10.0 * (1.0 - y * y) * (y + 0.6)

    def reaction_jac(t: float, y: np.ndarray) -> sp.spmatrix:
        return sp.diags(10.0 * (1.0 - 1.2 * y - 3.0 * y * y), format="csr")

    system = SplitOdeSystem(
        dim=grid.num_unknowns,
        partitions=(
            Partition("diffusion", lambda t, y: lap @ y,
                      lambda t, y: lap, linear=True, stiff=True),
            Partition("reaction", reaction_rhs, reaction_jac),
        ))

    coords = grid.unknown_coords()
    x, y_ = coords[:, 0], coords[:, 1]
    y0 = 2.0 * np.exp(-10.0 * ((x - 0.5) ** 2 + (y_ + 0.1) ** 2)) - 1.0

    return ProblemInstance(name="bsvd", system=system, grid=grid, y0=y0,
                           t0=0.0, t_final=t_final,
                           goal=integral_goal(grid),
                           params={"t_final": t_final})


# --- seeded dense systems for verification ---------------------------------

def make_random_nonlinear(seed: int, dim: int = 8, num_partitions: int = 2,
                          t_final: float = 0.5) -> ProblemInstance:
    """Small dense split system with smooth nonlinear partitions and a
    quadratic goal; used by the sensitivity and duality checks."""
    rng = np.random.default_rng(seed)
    partitions = []
    for q in range(num_partitions):
        a = rng.standard_normal((dim, dim)) / math.sqrt(dim)
        a -= 0.8 * np.eye(dim)
        c = 0.5 * rng.standard_normal(dim)
        g = 0.3 * rng.standard_normal(dim)

        def rhs(t, y, a=a, c=c, g=g):
            return a @ y + c * np.sin(y) + g * math.cos(t)

        def jac(t, y, a=a, c=c):
            return sp.csr_matrix(a + np.diag(c * np.cos(y)))

        partitions.append(Partition(f"part{q + 1}", rhs, jac))

    w = rng.standard_normal(dim)
    m = 0.5 * rng.standard_normal(dim)
    goal = GoalFunction(
        evaluate=lambda y: float(w @ y + 0.5 * (m * y) @ y),
        gradient=lambda y: w + m * y,
        description="quadratic test goal")

    return ProblemInstance(name=f"random-{seed}",
                           system=SplitOdeSystem(dim, tuple(partitions)),
                           grid=None,
                           y0=rng.standard_normal(dim),
                           t0=0.0, t_final=t_final, goal=goal,
                           params={"seed": seed, "dim": dim,
                                   "num_partitions": num_partitions})


# --- registry ---------------------------------------------------------------

PROBLEM_DOMAINS = {
    "calvo": ((-1.0, 3.0), (-1.0, 1.0), DIRICHLET),
    "gray_scott": ((0.0, 2.0), (0.0, 2.0), NEUMANN),
    "bsvd": ((0.0, 1.0), (0.0, 1.0), NEUMANN),
}

PROBLEM_BUILDERS = {
    "calvo": make_calvo,
    "gray_scott": make_gray_scott,
    "bsvd": make_bsvd,
}


def default_grid(name: str, nx_cells: int, ny_cells: int) -> TensorGrid2D:
    (x0, x1), (y0, y1), bc = PROBLEM_DOMAINS[name]
    return TensorGrid2D.uniform(x0, x1, nx_cells, y0, y1, ny_cells, bc)


def build_problem(name: str, grid: TensorGrid2D, **params) -> ProblemInstance:
    if name not in PROBLEM_BUILDERS:
        raise KeyError(f"unknown problem {name!r}; "
                       f"choices: {sorted(PROBLEM_BUILDERS)}")
    return PROBLEM_BUILDERS[name](grid, **params)


def rebuild_on(problem: ProblemInstance, grid: TensorGrid2D) -> ProblemInstance:
    """Same problem family and parameters, new grid."""
    return build_problem(problem.name, grid, **problem.params)
