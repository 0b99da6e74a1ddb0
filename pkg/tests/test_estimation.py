import csv
import json

import numpy as np
import pytest
import scipy.sparse as sp

from helpers import linear_pair, nonlinear_stiff, scalar_split, wrap

from gark.adjoint import adjoint_sweep
from gark.estimation import (ErrorReport, assemble_report, estimate_errors,
                             spatial_residuals, temporal_residuals)
from gark.forward import integrate
from gark.mesh import GridTransfer, TensorGrid2D, TimeGrid
from gark.systems import (Partition, ProblemInstance, SplitOdeSystem,
                          default_grid, discretize_laplacian, integral_goal,
                          make_calvo)
from gark.tableau import build_imex22


def explicit_growth(z: float) -> float:
    return 1.0 + z + z * z / 2.0


def linear_heat(grid: TensorGrid2D) -> ProblemInstance:
    """Diffusion plus linear decay; every stage solve is exact."""
    lap = (0.05 * discretize_laplacian(grid)).tocsr()
    n = grid.num_unknowns
    coords = grid.unknown_coords()
    y0 = np.sin(np.pi * coords[:, 0]) * np.sin(np.pi * coords[:, 1])
    eye = sp.identity(n, format="csr")
    parts = (
        Partition(name="diffusion", rhs=lambda t, y: lap @ y,
                  jacobian=lambda t, y: lap, linear=True, stiff=True),
        Partition(name="decay", rhs=lambda t, y: -0.3 * y + 0.2,
                  jacobian=lambda t, y: (-0.3 * eye).tocsr(), linear=True),
    )
    system = SplitOdeSystem(dim=n, partitions=parts)
    return ProblemInstance(name="linear_heat", system=system, grid=grid,
                           y0=y0, t0=0.0, t_final=0.4,
                           goal=integral_goal(grid))


def pointwise_problem(grid: TensorGrid2D) -> ProblemInstance:
    """Uncoupled per-node dynamics; restriction commutes with the rhs."""
    n = grid.num_unknowns
    eye = sp.identity(n, format="csr")
    coords = grid.unknown_coords()
    y0 = 1.5 + np.sin(coords[:, 0]) * np.cos(coords[:, 1])
    parts = (
        Partition(name="decay", rhs=lambda t, y: -y,
                  jacobian=lambda t, y: -eye, linear=True, stiff=True),
        Partition(name="wave", rhs=lambda t, y: np.sin(y),
                  jacobian=lambda t, y: sp.diags(np.cos(y)).tocsr()),
    )
    system = SplitOdeSystem(dim=n, partitions=parts)
    return ProblemInstance(name="pointwise", system=system, grid=grid,
                           y0=y0, t0=0.0, t_final=0.3,
                           goal=integral_goal(grid))


class TestTemporalResiduals:
    def test_self_reference_vanishes_bitwise(self):
        problem = wrap(nonlinear_stiff(), np.full(4, 0.4), t_final=0.3)
        traj = integrate(problem, build_imex22(),
                         TimeGrid.uniform(0.0, 0.3, 0.05))
        res = temporal_residuals(traj, traj)
        assert np.all(res == 0.0)

    def test_exact_reference_gives_truncation_defect(self):
        lam, dt, y0 = -0.8, 0.25, 2.0
        problem = wrap(scalar_split(lam, 0.0), [y0], t_final=1.0)
        traj = integrate(problem, build_imex22(),
                         TimeGrid.uniform(0.0, 1.0, dt))
        res = temporal_residuals(traj,
                                 lambda t: np.array([y0 * np.exp(lam * t)]))
        z = lam * dt
        for n in range(traj.num_steps):
            x_prev = y0 * np.exp(lam * dt * n)
            expected = (np.exp(z) - explicit_growth(z)) * x_prev
            np.testing.assert_allclose(res[n, 0], expected, rtol=1e-12)

    def test_residual_norm_decays_at_third_order(self):
        system = nonlinear_stiff()
        problem = wrap(system, np.full(system.dim, 0.4), t_final=0.4)
        fine = integrate(problem, build_imex22(),
                         TimeGrid.uniform(0.0, 0.4, 0.005 / 16),
                         store_stages=False)
        norms, dts = [], [0.02, 0.01, 0.005]
        for dt in dts:
            traj = integrate(problem, build_imex22(),
                             TimeGrid.uniform(0.0, 0.4, dt))
            res = temporal_residuals(traj, fine)
            norms.append(np.max(np.linalg.norm(res, axis=1)))
        slope = np.polyfit(np.log(dts), np.log(norms), 1)[0]
        assert 2.7 <= slope <= 3.3

    def test_callable_and_trajectory_references_agree(self):
        problem = wrap(nonlinear_stiff(), np.full(4, 0.4), t_final=0.2)
        grid = TimeGrid.uniform(0.0, 0.2, 0.05)
        traj = integrate(problem, build_imex22(), grid)
        fine = integrate(problem, build_imex22(), grid.halve_all_steps(),
                         store_stages=False)
        as_traj = temporal_residuals(traj, fine)
        as_call = temporal_residuals(
            traj, lambda t: fine.states[fine.time_grid.locate(t)])
        np.testing.assert_array_equal(as_traj, as_call)

    def test_dimension_mismatch_rejected(self):
        problem = wrap(scalar_split(-1.0, 0.0), [1.0], t_final=0.1)
        traj = integrate(problem, build_imex22(),
                         TimeGrid.uniform(0.0, 0.1, 0.1))
        with pytest.raises(ValueError, match="dimension"):
            temporal_residuals(traj, lambda t: np.zeros(3))

    def test_reference_missing_nodes_rejected(self):
        problem = wrap(scalar_split(-1.0, 0.0), [1.0], t_final=0.2)
        traj = integrate(problem, build_imex22(),
                         TimeGrid.uniform(0.0, 0.2, 0.05))
        other = integrate(problem, build_imex22(),
                          TimeGrid.uniform(0.0, 0.2, 0.2 / 3))
        with pytest.raises(KeyError):
            temporal_residuals(traj, other)


class TestLinearTelescoping:
    def test_weighted_residual_sum_equals_goal_gap(self):
        # for a linear system and linear goal the estimate telescopes to
        # Q(reference) - Q(numerical) exactly
        system, _ = linear_pair(seed=21, dim=6)
        problem = wrap(system, np.linspace(0.5, 1.1, 6), t_final=0.8)
        grid = TimeGrid.uniform(0.0, 0.8, 0.1)
        traj = integrate(problem, build_imex22(), grid)
        fine = integrate(problem, build_imex22(),
                         grid.halve_all_steps().halve_all_steps(),
                         store_stages=False)
        adj = adjoint_sweep(traj, method="mu")
        res = temporal_residuals(traj, fine)
        report = assemble_report(traj, adj, res,
                                 psi_ref=problem.goal.evaluate(fine.states[-1]))
        gap = float(problem.goal.evaluate(fine.states[-1])
                    - problem.goal.evaluate(traj.states[-1]))
        np.testing.assert_allclose(report.e_temporal, gap, rtol=1e-10)
        np.testing.assert_allclose(report.e_ref, gap, rtol=1e-12)
        assert abs(report.accuracy) < 1e-9

    def test_per_step_entries_sum_to_temporal_total(self):
        system, _ = linear_pair(seed=22, dim=5)
        problem = wrap(system, np.ones(5), t_final=0.5)
        grid = TimeGrid.uniform(0.0, 0.5, 0.1)
        traj = integrate(problem, build_imex22(), grid)
        fine = integrate(problem, build_imex22(), grid.halve_all_steps(),
                         store_stages=False)
        adj = adjoint_sweep(traj, method="mu")
        report = assemble_report(traj, adj, temporal_residuals(traj, fine))
        assert report.per_step.shape == (5,)
        np.testing.assert_allclose(np.sum(report.per_step),
                                   report.e_temporal, rtol=1e-13)


class TestSpatialResiduals:
    def test_self_consistency_on_diffusion_reaction(self):
        problem = make_calvo(default_grid("calvo", 8, 4))
        traj = integrate(problem, build_imex22(),
                         TimeGrid.uniform(0.0, 1.5, 0.15))
        transfer = GridTransfer.between(problem.grid, problem.grid)
        res = spatial_residuals(traj, traj, transfer)
        # explicit reaction stages recombine bitwise; implicit diffusion
        # stages sit at the linear-solve round-off level
        assert np.all(res[1] == 0.0)
        scale = np.max(np.abs(traj.states))
        assert np.max(np.abs(res[0])) < 1e-10 * scale

    def test_pointwise_dynamics_commute_with_restriction(self):
        coarse = TensorGrid2D.uniform(0.0, 1.0, 4, 0.0, 1.0, 4, bc="neumann")
        fine = coarse.refine_uniform()
        grid = TimeGrid.uniform(0.0, 0.3, 0.05)
        traj_c = integrate(pointwise_problem(coarse), build_imex22(), grid)
        traj_f = integrate(pointwise_problem(fine), build_imex22(), grid)
        transfer = GridTransfer.between(fine, coarse)
        res = spatial_residuals(traj_c, traj_f, transfer)
        scale = np.max(np.abs(traj_c.states))
        for q in range(2):
            assert np.max(np.abs(res[q])) < 1e-12 * scale

    def test_step_count_mismatch_rejected(self):
        problem = make_calvo(default_grid("calvo", 8, 4))
        a = integrate(problem, build_imex22(),
                      TimeGrid.uniform(0.0, 1.5, 0.15))
        b = integrate(problem, build_imex22(),
                      TimeGrid.uniform(0.0, 1.5, 0.075))
        transfer = GridTransfer.between(problem.grid, problem.grid)
        with pytest.raises(ValueError, match="time grid"):
            spatial_residuals(a, b, transfer)


class TestAssembleReport:
    def test_spatial_weighting_requires_mu(self):
        problem = make_calvo(default_grid("calvo", 8, 4))
        traj = integrate(problem, build_imex22(),
                         TimeGrid.uniform(0.0, 1.5, 0.15))
        adj = adjoint_sweep(traj, method="theta")
        transfer = GridTransfer.between(problem.grid, problem.grid)
        res = spatial_residuals(traj, traj, transfer)
        temporal = temporal_residuals(traj, traj)
        with pytest.raises(ValueError, match="mu"):
            assemble_report(traj, adj, temporal, res)

    def test_reference_bookkeeping(self):
        system, _ = linear_pair(seed=4, dim=4)
        problem = wrap(system, np.ones(4), t_final=0.4)
        grid = TimeGrid.uniform(0.0, 0.4, 0.1)
        traj = integrate(problem, build_imex22(), grid)
        fine = integrate(problem, build_imex22(), grid.halve_all_steps(),
                         store_stages=False)
        adj = adjoint_sweep(traj, method="mu")
        psi_ref = 12.5
        report = assemble_report(traj, adj, temporal_residuals(traj, fine),
                                 psi_ref=psi_ref)
        psi_num = problem.goal.evaluate(traj.states[-1])
        assert report.e_ref == psi_ref - psi_num
        assert report.accuracy == (report.e_total - report.e_ref) / report.e_ref
        assert report.e_total == report.e_temporal


class TestFourSolutionPipeline:
    def make_bundle(self):
        problem = make_calvo(default_grid("calvo", 8, 4))
        return estimate_errors(problem, build_imex22(),
                               TimeGrid.uniform(0.0, 1.5, 0.15))

    def test_report_structure(self):
        bundle = self.make_bundle()
        report = bundle.report
        assert report.partition_names == ("diffusion", "reaction")
        assert len(report.e_spatial) == 2
        assert report.per_step.shape == (10,)
        assert report.per_cell[0].shape == (4, 8)
        for value in (report.psi_num, report.psi_ref, report.e_temporal,
                      report.e_total, report.accuracy):
            assert np.isfinite(value)

    def test_linear_spatial_weighting_telescopes_exactly(self):
        # linear dynamics + linear goal: the mu-weighted stage residuals
        # sum to Q(restricted fine solution) - Q(coarse solution) exactly
        coarse = TensorGrid2D.uniform(0.0, 1.0, 6, 0.0, 1.0, 6,
                                      bc="dirichlet")
        fine = coarse.refine_uniform()
        grid = TimeGrid.uniform(0.0, 0.4, 0.1)
        traj_c = integrate(linear_heat(coarse), build_imex22(), grid)
        traj_f = integrate(linear_heat(fine), build_imex22(), grid)
        transfer = GridTransfer.between(fine, coarse)
        adj = adjoint_sweep(traj_c, method="mu")
        res = spatial_residuals(traj_c, traj_f, transfer)
        report = assemble_report(traj_c, adj,
                                 temporal_residuals(traj_c, traj_c), res)
        goal = traj_c.problem.goal
        gap = (goal.evaluate(transfer.restrict(traj_f.states[-1]))
               - goal.evaluate(traj_c.states[-1]))
        np.testing.assert_allclose(sum(report.e_spatial), gap, rtol=1e-9)
        assert report.e_temporal == 0.0

    def test_components_estimate_their_proxy_gaps(self):
        # E1 targets the goal gap to the time-refined run; the spatial sum
        # targets the gap to the restricted space-refined run
        bundle = self.make_bundle()
        report = bundle.report
        goal = bundle.numerical.problem.goal
        temporal_gap = (goal.evaluate(bundle.time_refined.states[-1])
                        - report.psi_num)
        spatial_gap = (goal.evaluate(
            bundle.transfer.restrict(bundle.space_refined.states[-1]))
            - report.psi_num)
        assert abs(report.e_temporal - temporal_gap) \
            <= 0.1 * abs(temporal_gap) + 1e-8
        assert abs(sum(report.e_spatial) - spatial_gap) \
            <= 0.1 * abs(spatial_gap) + 1e-8

    def test_per_cell_maps_sum_to_partition_totals(self):
        report = self.make_bundle().report
        scale = max(abs(report.e_total), 1e-30)
        for q in range(2):
            np.testing.assert_allclose(report.per_cell[q].sum(),
                                       report.e_spatial[q],
                                       rtol=1e-10, atol=1e-12 * scale)

    def test_grid_free_problem_rejected(self):
        problem = wrap(nonlinear_stiff(), np.full(4, 0.4), t_final=0.3)
        with pytest.raises(ValueError, match="grid"):
            estimate_errors(problem, build_imex22(),
                            TimeGrid.uniform(0.0, 0.3, 0.05))

    def test_json_round_trip_is_exact(self):
        report = self.make_bundle().report
        recovered = ErrorReport.from_json_dict(
            json.loads(report.to_json()))
        assert recovered.psi_num == report.psi_num
        assert recovered.e_spatial == report.e_spatial
        assert recovered.accuracy == report.accuracy
        np.testing.assert_array_equal(recovered.per_step, report.per_step)
        for q in range(2):
            np.testing.assert_array_equal(recovered.per_cell[q],
                                          report.per_cell[q])

    def test_csv_row(self, tmp_path):
        report = self.make_bundle().report
        path = tmp_path / "report.csv"
        report.write_csv(path)
        with open(path) as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["goal_num", "goal_ref", "ref_error",
                           "temporal_error", "spatial_error_diffusion",
                           "spatial_error_reaction", "total_error",
                           "accuracy"]
        parsed = dict(zip(rows[0], rows[1]))
        np.testing.assert_allclose(float(parsed["temporal_error"]),
                                   report.e_temporal, rtol=1e-3)
        np.testing.assert_allclose(float(parsed["total_error"]),
                                   report.e_total, rtol=1e-3)
