"""Adjoint-weighted goal-error estimation.

Temporal residuals measure how far a reference path is from satisfying the
coarse step map; weighting them with the adjoint states gives the
time-discretization part of the goal error.  Spatial residuals measure how
far the restricted fine-grid stages are from satisfying the coarse
semi-discrete equations; weighting them with the pre-Jacobian stage
adjoints gives one spatial contribution per partition.  The signed total
estimates Q(reference) - Q(numerical).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from gark.adjoint import AdjointTrajectory, adjoint_sweep
from gark.forward import (ForwardTrajectory, LinearStageCache,
                          StageSolverConfig, combine_stage_argument,
                          integrate, step)
from gark.mesh import GridTransfer, TensorGrid2D, TimeGrid
from gark.systems import ProblemInstance, rebuild_on


def temporal_residuals(trajectory: ForwardTrajectory,
                       reference) -> np.ndarray:
    """r_n = x(t_{n+1}) - onestep(x(t_n)) for the coarse step map.

    reference is either a callable t -> state or a trajectory whose time
    grid contains every node of the coarse grid.  Row n of the result
    pairs with the adjoint state at node n+1.
    """
    if callable(reference):
        lookup = lambda t: np.asarray(reference(t), dtype=float)
    else:
        lookup = lambda t: reference.states[reference.time_grid.locate(t)]

    system = trajectory.system
    grid = trajectory.time_grid
    out = np.empty((grid.num_steps, system.dim))
    cache = LinearStageCache()
    for n in range(grid.num_steps):
        t, h = float(grid.nodes[n]), float(grid.steps[n])
        x_prev = lookup(t)
        if x_prev.shape != (system.dim,):
            raise ValueError("reference state dimension does not match")
        advanced = step(system, trajectory.tableau, t, h, x_prev,
                        trajectory.config, cache).y_next
        out[n] = lookup(float(grid.nodes[n + 1])) - advanced
    return out


def spatial_residuals(coarse: ForwardTrajectory, fine: ForwardTrajectory,
                      transfer: GridTransfer,
                      num_species: int = 1) -> list:
    """Per-partition stage residuals of the restricted fine solution.

    Both trajectories must share the time grid and the (aligned) tableau;
    fine lives on the refined space grid that transfer restricts from.
    Restricted fine slopes are recombined into stage states with the same
    accumulation the forward step uses, so a coarse trajectory checked
    against itself gives bitwise zeros on explicit stages.
    """
    if coarse.num_steps != fine.num_steps:
        raise ValueError("trajectories must share the time grid")
    tableau = coarse.tableau
    system = coarse.system
    counts = tableau.stage_counts
    out = [np.empty((coarse.num_steps, counts[q], system.dim))
           for q in range(tableau.num_partitions)]

    for n in range(coarse.num_steps):
        h = float(coarse.time_grid.steps[n])
        y_nt = transfer.restrict_state(fine.states[n], num_species)
        slopes = {}
        for q, i in tableau.stage_schedule:
            slopes[(q, i)] = transfer.restrict_state(
                fine.stage_slopes[q][n, i], num_species)
        for q, i in tableau.stage_schedule:
            y_stage = combine_stage_argument(y_nt, h, tableau, q, i, slopes,
                                             include_self=True)
            t_i = coarse.stage_time(n, q, i)
            out[q][n, i] = slopes[(q, i)] - system.f(q, t_i, y_stage)
    return out


def _per_cell_map(grid: TensorGrid2D, num_species: int,
                  nodal: np.ndarray) -> np.ndarray:
    """Split per-unknown contributions onto cells via shared corners."""
    per_node = nodal.reshape(num_species, -1).sum(axis=0)
    full = grid.scatter(per_node, fill=0.0)
    ny1, nx1 = full.shape
    cx = np.full(nx1, 2.0)
    cx[0] = cx[-1] = 1.0
    cy = np.full(ny1, 2.0)
    cy[0] = cy[-1] = 1.0
    w = full / (cy[:, None] * cx[None, :])
    return w[:-1, :-1] + w[:-1, 1:] + w[1:, :-1] + w[1:, 1:]


@dataclass
class ErrorReport:
    """Goal-error estimate split into temporal and spatial parts.

    e_total estimates Q(reference) - Q(numerical); accuracy is the signed
    relative gap (e_total - e_ref) / e_ref when a reference value exists.
    per_step localizes the temporal part; per_cell localizes each spatial
    part onto grid cells (None for problems without a grid).
    """

    psi_num: float
    psi_ref: float | None
    e_ref: float | None
    e_temporal: float
    e_spatial: tuple
    e_total: float
    accuracy: float | None
    per_step: np.ndarray
    per_cell: tuple | None
    partition_names: tuple

    def to_json_dict(self) -> dict:
        return {
            "kind": "error_report",
            "psi_num": self.psi_num,
            "psi_ref": self.psi_ref,
            "e_ref": self.e_ref,
            "e_temporal": self.e_temporal,
            "e_spatial": list(self.e_spatial),
            "e_total": self.e_total,
            "accuracy": self.accuracy,
            "per_step": self.per_step.tolist(),
            "per_cell": (None if self.per_cell is None
                         else [m.tolist() for m in self.per_cell]),
            "partition_names": list(self.partition_names),
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_json_dict(), indent=indent)

    @classmethod
    def from_json_dict(cls, data: dict) -> "ErrorReport":
        if data.get("kind") != "error_report":
            raise ValueError("not an error report")
        return cls(
            psi_num=data["psi_num"], psi_ref=data["psi_ref"],
            e_ref=data["e_ref"], e_temporal=data["e_temporal"],
            e_spatial=tuple(data["e_spatial"]), e_total=data["e_total"],
            accuracy=data["accuracy"],
            per_step=np.asarray(data["per_step"], dtype=float),
            per_cell=(None if data["per_cell"] is None else
                      tuple(np.asarray(m, dtype=float)
                            for m in data["per_cell"])),
            partition_names=tuple(data["partition_names"]))

    def write_csv(self, path) -> None:
        header = ["goal_num", "goal_ref", "ref_error", "temporal_error"]
        header += [f"spatial_error_{name}" for name in self.partition_names]
        header += ["total_error", "accuracy"]
        fmt = lambda v: "" if v is None else f"{v:.4e}"
        row = [fmt(self.psi_num), fmt(self.psi_ref), fmt(self.e_ref),
               fmt(self.e_temporal)]
        row += [fmt(v) for v in self.e_spatial]
        row += [fmt(self.e_total), fmt(self.accuracy)]
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            writer.writerow(row)


def assemble_report(trajectory: ForwardTrajectory,
                    adjoint: AdjointTrajectory,
                    temporal: np.ndarray,
                    spatial: list | None = None,
                    psi_ref: float | None = None) -> ErrorReport:
    """Weight residuals with adjoint quantities and localize them."""
    problem = trajectory.problem
    psi_num = float(problem.goal.evaluate(trajectory.states[-1]))

    per_step = np.einsum("nd,nd->n", adjoint.lam[1:], temporal)
    e_temporal = float(np.sum(per_step))

    e_spatial = ()
    per_cell = None
    if spatial is not None:
        if adjoint.mu is None:
            raise ValueError("spatial weighting needs a mu-form adjoint")
        totals = []
        cells = []
        for q, res in enumerate(spatial):
            pointwise = adjoint.mu[q] * res
            totals.append(float(np.sum(pointwise)))
            if problem.grid is not None:
                nodal = pointwise.sum(axis=(0, 1))
                cells.append(_per_cell_map(problem.grid,
                                           problem.num_species, nodal))
        e_spatial = tuple(totals)
        per_cell = tuple(cells) if cells else None

    e_total = e_temporal + float(sum(e_spatial))
    e_ref = None if psi_ref is None else float(psi_ref) - psi_num
    accuracy = None
    if e_ref is not None and e_ref != 0.0:
        accuracy = (e_total - e_ref) / e_ref
    return ErrorReport(psi_num=psi_num, psi_ref=psi_ref, e_ref=e_ref,
                       e_temporal=e_temporal, e_spatial=e_spatial,
                       e_total=e_total, accuracy=accuracy,
                       per_step=per_step, per_cell=per_cell,
                       partition_names=trajectory.system.partition_names)


@dataclass
class EstimateBundle:
    """Everything the four-solution estimate produced."""

    report: ErrorReport
    numerical: ForwardTrajectory
    time_refined: ForwardTrajectory
    space_refined: ForwardTrajectory
    reference: ForwardTrajectory
    adjoint: AdjointTrajectory
    transfer: GridTransfer


def estimate_errors(problem: ProblemInstance, tableau,
                    time_grid: TimeGrid,
                    cfg: StageSolverConfig | None = None) -> EstimateBundle:
    """Run the four solutions and assemble the split goal-error report.

    numerical: given grids; time-refined: halved steps on the coarse space
    grid; space-refined: uniformly refined space grid on the given steps;
    reference: both refinements.  The reference goal value uses the fine
    grid's own quadrature.
    """
    if problem.grid is None:
        raise ValueError("four-solution estimate needs a grid problem")
    cfg = cfg or StageSolverConfig()

    fine_grid = problem.grid.refine_uniform()
    fine_problem = rebuild_on(problem, fine_grid)
    fine_time = time_grid.halve_all_steps()

    numerical = integrate(problem, tableau, time_grid, cfg)
    time_refined = integrate(problem, tableau, fine_time, cfg,
                             store_stages=False)
    space_refined = integrate(fine_problem, tableau, time_grid, cfg)
    reference = integrate(fine_problem, tableau, fine_time, cfg,
                          store_stages=False)

    adjoint = adjoint_sweep(numerical, method="mu")
    transfer = GridTransfer.between(fine_grid, problem.grid)
    temporal = temporal_residuals(numerical, time_refined)
    spatial = spatial_residuals(numerical, space_refined, transfer,
                                problem.num_species)
    psi_ref = float(fine_problem.goal.evaluate(reference.states[-1]))
    report = assemble_report(numerical, adjoint, temporal, spatial, psi_ref)
    return EstimateBundle(report=report, numerical=numerical,
                          time_refined=time_refined,
                          space_refined=space_refined, reference=reference,
                          adjoint=adjoint, transfer=transfer)
