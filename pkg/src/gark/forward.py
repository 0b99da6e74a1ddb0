"""Forward time stepping for additively split systems.

One step evaluates the tableau's stages in schedule order.  A stage with a
nonzero own-diagonal coefficient is solved by Newton iteration on
Y = rhs + h a_ii f^(q)(T_i, Y); everything else is an explicit update.
Factorizations of I - h a_ii J are cached per (partition, h a_ii) for
partitions with constant Jacobians, and the factorization belonging to each
implicit stage is kept so a reversed sweep can reuse it transposed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gark.mesh import TimeGrid
from gark.systems import ProblemInstance, SplitOdeSystem
from gark.tableau import GarkTableau, UnsupportedTableauError


class StepFailureError(RuntimeError):
    """Newton iteration on an implicit stage did not converge."""

    def __init__(self, message: str, iterations: int, residual_norm: float,
                 step_index: int | None = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual_norm = residual_norm
        self.step_index = step_index


@dataclass(frozen=True)
class StageSolverConfig:
    newton_rtol: float = 1e-10
    newton_atol: float = 1e-12
    max_newton_iterations: int = 20
    linear_solver: str = "direct"      # "direct" | "cg"
    cg_tol: float = 1e-12
    jacobian_reuse: str = "per_stage"  # "per_stage" | "per_step"


class _DirectSolver:
    def __init__(self, matrix: sp.spmatrix):
        self.lu = spla.splu(matrix.tocsc())

    def solve(self, b: np.ndarray, transpose: bool = False) -> np.ndarray:
        return self.lu.solve(b, trans="T" if transpose else "N")


class _CgSolver:
    def __init__(self, matrix: sp.spmatrix, tol: float):
        self.matrix = matrix.tocsr()
        self.tol = tol

    def solve(self, b: np.ndarray, transpose: bool = False) -> np.ndarray:
        m = self.matrix.T if transpose else self.matrix
        x, info = spla.cg(m, b, rtol=self.tol, atol=0.0)
        if info != 0:
            raise StepFailureError("conjugate-gradient stage solve failed",
                                   iterations=abs(info),
                                   residual_norm=float("nan"))
        return x


def _build_solver(system: SplitOdeSystem, q: int, t: float, y: np.ndarray,
                  coef: float, cfg: StageSolverConfig):
    jac = system.jac(q, t, y)
    matrix = (sp.identity(system.dim, format="csr") - coef * jac).tocsr()
    if cfg.linear_solver == "direct":
        return _DirectSolver(matrix)
    if cfg.linear_solver == "cg":
        return _CgSolver(matrix, cfg.cg_tol)
    raise ValueError(f"unknown linear solver {cfg.linear_solver!r}")


class LinearStageCache:
    """Shared factorizations of I - coef*J for constant-Jacobian partitions.

    Keys round coef to 12 significant digits so the last-bit jitter of
    nominally uniform step sizes maps onto one factorization.
    """

    def __init__(self):
        self._store: dict[tuple[int, str], object] = {}

    def get(self, system, q, t, y, coef, cfg):
        key = (q, f"{coef:.12e}")
        if key not in self._store:
            self._store[key] = _build_solver(system, q, t, y, coef, cfg)
        return self._store[key]


def align_tableau(tableau: GarkTableau, system: SplitOdeSystem) -> GarkTableau:
    """Permute tableau partitions so implicit schemes treat stiff partitions.

    Problems list their partitions by physics (diffusion first), while a
    tableau lists its schemes by construction (explicit first); the returned
    tableau is reindexed so scheme q applies to system partition q.
    """
    if tableau.num_partitions != system.num_partitions:
        raise UnsupportedTableauError(
            f"tableau has {tableau.num_partitions} partitions, "
            f"system has {system.num_partitions}")
    stiff = system.stiff_flags
    if not any(stiff):
        return tableau
    implicit = [q for q in range(tableau.num_partitions)
                if np.any(np.diag(tableau.coupling[q][q]) != 0.0)]
    explicit = [q for q in range(tableau.num_partitions) if q not in implicit]
    stiff_parts = [q for q, s in enumerate(stiff) if s]
    loose_parts = [q for q, s in enumerate(stiff) if not s]
    if len(implicit) != len(stiff_parts):
        raise UnsupportedTableauError(
            f"{len(stiff_parts)} stiff partitions but {len(implicit)} "
            "implicit schemes; cannot align")
    perm = [0] * tableau.num_partitions
    for part, scheme in zip(stiff_parts + loose_parts, implicit + explicit):
        perm[part] = scheme
    if perm == list(range(tableau.num_partitions)):
        return tableau
    return tableau.permute_partitions(tuple(perm))


def combine_stage_argument(y: np.ndarray, h: float, tableau: GarkTableau,
                           q: int, i: int, slopes: dict,
                           include_self: bool) -> np.ndarray:
    """y + h * sum a^{q,m}_{i,j} k^(m)_j accumulated in schedule order."""
    out = y.copy()
    for m, j in tableau.stage_schedule:
        a = tableau.coupling[q][m][i, j]
        if a == 0.0:
            continue
        if (m, j) == (q, i) and not include_self:
            continue
        if (m, j) not in slopes:
            raise UnsupportedTableauError(
                f"stage ({q + 1},{i + 1}) needs slope ({m + 1},{j + 1}) "
                "which is not available yet")
        out += (h * a) * slopes[(m, j)]
    return out


@dataclass
class StepResult:
    y_next: np.ndarray
    stage_values: dict
    stage_slopes: dict
    stage_times: dict
    factors: dict


def step(system: SplitOdeSystem, tableau: GarkTableau, t: float, h: float,
         y: np.ndarray, cfg: StageSolverConfig | None = None,
         cache: LinearStageCache | None = None) -> StepResult:
    """Advance one step of size h from (t, y); no partition alignment here."""
    cfg = cfg or StageSolverConfig()
    slopes: dict = {}
    values: dict = {}
    times: dict = {}
    factors: dict = {}
    frozen_jac: dict = {}

    for q, i in tableau.stage_schedule:
        c_i = float(tableau.abscissae(q)[i])
        t_i = t + c_i * h
        a_ii = float(tableau.coupling[q][q][i, i])
        rhs = combine_stage_argument(y, h, tableau, q, i, slopes,
                                     include_self=False)
        if a_ii == 0.0:
            y_stage = rhs
            slope = system.f(q, t_i, y_stage)
        else:
            coef = h * a_ii
            linear = system.partitions[q].linear
            if linear:
                solver = (cache.get(system, q, t_i, y, coef, cfg) if cache
                          else _build_solver(system, q, t_i, y, coef, cfg))
                f0 = system.f(q, t_i, rhs)
                y_stage = rhs + solver.solve(coef * f0)
                slope = system.f(q, t_i, y_stage)
                factors[(q, i)] = solver
            else:
                y_stage, slope, solver = _newton_stage(
                    system, q, t_i, coef, rhs, y, cfg, frozen_jac)
                factors[(q, i)] = solver
        values[(q, i)] = y_stage
        slopes[(q, i)] = slope
        times[(q, i)] = t_i

    y_next = y.copy()
    for q, i in tableau.stage_schedule:
        b = tableau.weights[q][i]
        if b != 0.0:
            y_next += (h * b) * slopes[(q, i)]
    return StepResult(y_next, values, slopes, times, factors)


def _newton_stage(system, q, t_i, coef, rhs, predictor, cfg, frozen_jac):
    y = predictor.copy()
    freeze = cfg.jacobian_reuse == "per_step"
    solver = None
    res = float("inf")
    for it in range(cfg.max_newton_iterations + 1):
        f_val = system.f(q, t_i, y)
        residual = y - rhs - coef * f_val
        res = float(np.linalg.norm(residual))
        tol = cfg.newton_atol + cfg.newton_rtol * max(1.0,
                                                      float(np.linalg.norm(y)))
        if res <= tol:
            if not freeze and cfg.linear_solver == "direct":
                # factor at the converged point so a reversed sweep can
                # reuse it transposed
                solver = _build_solver(system, q, t_i, y, coef, cfg)
            elif freeze:
                solver = None
            return y, f_val, solver
        if it == cfg.max_newton_iterations:
            break
        if freeze:
            if q not in frozen_jac:
                frozen_jac[q] = _build_solver(system, q, t_i, predictor,
                                              coef, cfg)
            solver = frozen_jac[q]
        else:
            solver = _build_solver(system, q, t_i, y, coef, cfg)
        y = y + solver.solve(-residual)
    raise StepFailureError(
        f"stage ({q + 1}) Newton stalled at residual {res:.3e}",
        iterations=cfg.max_newton_iterations, residual_norm=res)


@dataclass
class ForwardTrajectory:
    """States and stage data of one forward integration.

    stage_values[q] and stage_slopes[q] have shape (num_steps, s_q, dim);
    they are None when the run was made with store_stages=False.
    """

    problem: ProblemInstance
    tableau: GarkTableau
    time_grid: TimeGrid
    states: np.ndarray
    stage_values: list | None
    stage_slopes: list | None
    config: StageSolverConfig
    factors: dict = field(default_factory=dict)

    @property
    def system(self) -> SplitOdeSystem:
        return self.problem.system

    @property
    def num_steps(self) -> int:
        return self.time_grid.num_steps

    def state(self, n: int) -> np.ndarray:
        return self.states[n]

    def stage_time(self, n: int, q: int, i: int) -> float:
        return float(self.time_grid.nodes[n]
                     + self.tableau.abscissae(q)[i] * self.time_grid.steps[n])

    def step_identity_residual(self) -> float:
        """max_n |y_{n+1} - y_n - h_n sum b k| over the whole trajectory."""
        worst = 0.0
        for n in range(self.num_steps):
            acc = self.states[n].copy()
            h = self.time_grid.steps[n]
            for q, i in self.tableau.stage_schedule:
                b = self.tableau.weights[q][i]
                if b != 0.0:
                    acc += (h * b) * self.stage_slopes[q][n, i]
            worst = max(worst, float(np.max(np.abs(acc - self.states[n + 1]))))
        return worst

    def stage_consistency_residual(self) -> float:
        """max |Y - (y_n + h sum a k)| over all stages; solver-tolerance small."""
        worst = 0.0
        for n in range(self.num_steps):
            h = self.time_grid.steps[n]
            slopes = {(q, i): self.stage_slopes[q][n, i]
                      for q, i in self.tableau.stage_schedule}
            for q, i in self.tableau.stage_schedule:
                rec = combine_stage_argument(self.states[n], h, self.tableau,
                                             q, i, slopes, include_self=True)
                worst = max(worst, float(np.max(
                    np.abs(rec - self.stage_values[q][n, i]))))
        return worst

    def save_npz(self, path) -> None:
        payload = {
            "nodes": self.time_grid.nodes,
            "states": self.states,
            "tableau_json": np.array(json.dumps(self.tableau.to_json_dict())),
        }
        if self.stage_values is not None:
            for q in range(self.tableau.num_partitions):
                payload[f"stage_values_{q}"] = self.stage_values[q]
                payload[f"stage_slopes_{q}"] = self.stage_slopes[q]
        np.savez_compressed(path, **payload)

    @classmethod
    def load_npz(cls, path, problem: ProblemInstance,
                 cfg: StageSolverConfig | None = None) -> "ForwardTrajectory":
        with np.load(path, allow_pickle=False) as data:
            tableau = GarkTableau.from_json_dict(
                json.loads(str(data["tableau_json"])))
            grid = TimeGrid(data["nodes"])
            states = data["states"]
            values = slopes = None
            if f"stage_values_0" in data:
                values = [data[f"stage_values_{q}"]
                          for q in range(tableau.num_partitions)]
                slopes = [data[f"stage_slopes_{q}"]
                          for q in range(tableau.num_partitions)]
        return cls(problem, tableau, grid, states, values, slopes,
                   cfg or StageSolverConfig())


def integrate(problem: ProblemInstance, tableau: GarkTableau,
              time_grid: TimeGrid, cfg: StageSolverConfig | None = None,
              y0: np.ndarray | None = None,
              store_stages: bool = True) -> ForwardTrajectory:
    """Integrate the problem over the time grid.

    The tableau is validated and aligned to the system's partitions first.
    The trajectory keeps every state and (by default) all stage values and
    slopes, plus the implicit-stage factorizations for adjoint reuse.
    """
    cfg = cfg or StageSolverConfig()
    report = tableau.validate()
    if not report.ok:
        raise UnsupportedTableauError(f"invalid tableau: {report}")
    tableau = align_tableau(tableau, problem.system)

    system = problem.system
    y = np.array(problem.y0 if y0 is None else y0, dtype=float)
    if y.shape != (system.dim,):
        raise ValueError(f"initial state has shape {y.shape}, "
                         f"expected ({system.dim},)")

    n_steps = time_grid.num_steps
    states = np.empty((n_steps + 1, system.dim))
    states[0] = y
    counts = tableau.stage_counts
    values = slopes = None
    if store_stages:
        values = [np.empty((n_steps, counts[q], system.dim))
                  for q in range(tableau.num_partitions)]
        slopes = [np.empty((n_steps, counts[q], system.dim))
                  for q in range(tableau.num_partitions)]

    cache = LinearStageCache()
    factors: dict = {}
    for n in range(n_steps):
        t, h = float(time_grid.nodes[n]), float(time_grid.steps[n])
        try:
            result = step(system, tableau, t, h, states[n], cfg, cache)
        except StepFailureError as err:
            err.step_index = n
            raise
        states[n + 1] = result.y_next
        if store_stages:
            for (q, i), val in result.stage_values.items():
                values[q][n, i] = val
            for (q, i), slope in result.stage_slopes.items():
                slopes[q][n, i] = slope
        for (q, i), solver in result.factors.items():
            if solver is not None:
                factors[(n, q, i)] = solver

    return ForwardTrajectory(problem=problem, tableau=tableau,
                             time_grid=time_grid, states=states,
                             stage_values=values, stage_slopes=slopes,
                             config=cfg, factors=factors)
