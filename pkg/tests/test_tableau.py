import json
import math

import numpy as np
import pytest

from gark.tableau import (GAMMA_MINUS, GAMMA_PLUS, GarkTableau,
                          InvalidParameterError, UnsupportedTableauError,
                          adjoint_coefficients, build_imex22)

SQRT2 = math.sqrt(2.0)


def test_gamma_branches():
    assert GAMMA_MINUS == pytest.approx(0.2928932188134524, abs=1e-15)
    assert GAMMA_PLUS == pytest.approx(1.7071067811865476, abs=1e-15)
    for g in (GAMMA_MINUS, GAMMA_PLUS):
        assert abs(2.0 * g - g * g - 0.5) < 1e-14


def test_imex22_default_coefficients():
    g = GAMMA_MINUS
    t = build_imex22()
    a_ee, a_ei = t.coupling[0]
    a_ie, a_ii = t.coupling[1]
    np.testing.assert_allclose(a_ee, [[0.0, 0.0], [1.0 / (2.0 * g), 0.0]],
                               rtol=0, atol=1e-15)
    np.testing.assert_allclose(a_ei, a_ee, rtol=0, atol=0)
    np.testing.assert_allclose(a_ie, [[g, 0.0], [1.0 - g, g]], rtol=0, atol=1e-15)
    np.testing.assert_allclose(a_ii, [[g, 0.0], [1.0 - g, g]], rtol=0, atol=1e-15)
    np.testing.assert_allclose(t.weights[0], [1.0 - g, g], rtol=0, atol=1e-15)
    np.testing.assert_allclose(t.weights[1], [1.0 - g, g], rtol=0, atol=1e-15)
    assert t.stage_schedule == ((0, 0), (1, 0), (0, 1), (1, 1))
    # second explicit abscissa sits beyond the step end for this gamma
    assert t.abscissae(0)[1] == pytest.approx(1.0 + SQRT2 / 2.0, abs=1e-14)
    np.testing.assert_allclose(t.abscissae(1), [g, 1.0], rtol=0, atol=1e-15)


def test_imex22_alpha_half():
    t = build_imex22(alpha=0.5)
    assert t.coupling[0][0][1, 0] == pytest.approx(1.0, abs=0.0)
    np.testing.assert_allclose(t.weights[0], [0.5, 0.5], rtol=0, atol=0)


@pytest.mark.parametrize("gamma", [GAMMA_MINUS, GAMMA_PLUS])
@pytest.mark.parametrize("alpha", [None, 0.5, 0.31])
def test_imex22_validates(gamma, alpha):
    t = build_imex22(gamma, alpha)
    report = t.validate(tol=1e-12)
    assert report.ok, str(report)


def test_imex22_order_two_sums():
    t = build_imex22(alpha=0.37)
    for q in range(2):
        assert t.weights[q].sum() == pytest.approx(1.0, abs=1e-14)
        for m in range(2):
            assert t.weights[q] @ t.abscissae(q, m) == pytest.approx(0.5, abs=1e-14)


def test_imex22_stiff_accuracy_row():
    t = build_imex22(alpha=0.41)
    q_last, i_last = t.stage_schedule[-1]
    assert (q_last, i_last) == (1, 1)
    for m in range(2):
        np.testing.assert_allclose(t.coupling[q_last][m][i_last, :],
                                   t.weights[m], rtol=0, atol=1e-14)


def test_imex22_zero_alpha_rejected():
    with pytest.raises(InvalidParameterError):
        build_imex22(alpha=0.0)


def test_imex22_warns_on_order_breaking_gamma():
    with pytest.warns(UserWarning):
        build_imex22(gamma=0.3)


def test_validate_reports_weight_sum_violation():
    t = build_imex22()
    bad = GarkTableau(t.coupling,
                      (t.weights[0] + 0.05, t.weights[1]),
                      t.stage_schedule, declared_order=1)
    report = bad.validate()
    names = {v.name for v in report.violations}
    assert "weight-sum" in names
    resid = next(v.magnitude for v in report.violations if v.name == "weight-sum")
    assert resid == pytest.approx(0.1, abs=1e-12)


def test_validate_reports_schedule_cycle():
    t = build_imex22()
    # (E,2) reads (I,1); scheduling (I,1) after (E,2) breaks the ordering
    bad = GarkTableau(t.coupling, t.weights, ((0, 0), (0, 1), (1, 0), (1, 1)),
                      declared_order=2)
    report = bad.validate()
    assert any(v.name == "schedule-order" for v in report.violations)


def test_validate_reports_incomplete_schedule():
    t = build_imex22()
    bad = GarkTableau(t.coupling, t.weights, ((0, 0), (1, 0), (0, 1), (0, 1)))
    report = bad.validate()
    assert any(v.name == "schedule" for v in report.violations)


def test_adjoint_weights_equal_forward_weights():
    t = build_imex22(alpha=0.45)
    adj = adjoint_coefficients(t)
    for q in range(2):
        np.testing.assert_allclose(adj.weights[q], t.weights[q], rtol=0, atol=0)


def test_adjoint_coefficient_values():
    g = GAMMA_MINUS
    adj = adjoint_coefficients(build_imex22())
    # abar^{E,E}_{1,2} = b^E_2 a^{EE}_{2,1} / b^E_1 = 1 / (2 (1 - gamma))
    assert adj.coupling[0][0][0, 1] == pytest.approx(0.7071067811865475, abs=1e-15)
    # abar^{I,I}_{2,2} keeps the diagonal entry
    assert adj.coupling[1][1][1, 1] == pytest.approx(g, abs=1e-15)
    # reversed evaluation order
    assert adj.stage_schedule == ((1, 1), (0, 1), (1, 0), (0, 0))


def test_adjoint_transform_matches_definition():
    t = build_imex22(alpha=0.39)
    adj = adjoint_coefficients(t)
    for q in range(2):
        for m in range(2):
            for i in range(2):
                for j in range(2):
                    expect = (t.weights[m][j] * t.coupling[m][q][j, i]
                              / t.weights[q][i])
                    assert adj.coupling[q][m][i, j] == pytest.approx(
                        expect, abs=1e-15)


def test_adjoint_transform_is_involutive():
    t = build_imex22(alpha=0.47)
    back = adjoint_coefficients(adjoint_coefficients(t))
    for q in range(2):
        for m in range(2):
            np.testing.assert_allclose(back.coupling[q][m], t.coupling[q][m],
                                       rtol=0, atol=1e-14)
    assert back.stage_schedule == t.stage_schedule


def test_adjoint_rejects_zero_weight():
    t = build_imex22()
    crooked = GarkTableau(t.coupling, (np.array([1.0, 0.0]), t.weights[1]),
                          t.stage_schedule, declared_order=1)
    with pytest.raises(UnsupportedTableauError, match=r"\(1,2\)"):
        adjoint_coefficients(crooked)


def test_json_round_trip(tmp_path):
    t = build_imex22(alpha=0.33)
    path = tmp_path / "tableau.json"
    t.to_json(path)
    back = GarkTableau.from_json(path)
    for q in range(2):
        np.testing.assert_array_equal(back.weights[q], t.weights[q])
        for m in range(2):
            np.testing.assert_array_equal(back.coupling[q][m], t.coupling[q][m])
    assert back.stage_schedule == t.stage_schedule
    assert back.stiffly_accurate == t.stiffly_accurate
    # document is plain JSON
    data = json.loads(path.read_text())
    assert data["kind"] == "gark_tableau"


def test_permute_partitions_round_trip_and_validity():
    t = build_imex22(alpha=0.52)
    p = t.permute_partitions((1, 0))
    assert p.validate().ok
    # the implicit scheme now sits in partition 1
    assert p.is_implicit_stage(0, 0) and not p.is_implicit_stage(1, 0)
    np.testing.assert_array_equal(p.coupling[0][0], t.coupling[1][1])
    np.testing.assert_array_equal(p.coupling[0][1], t.coupling[1][0])
    assert p.stage_schedule == ((1, 0), (0, 0), (1, 1), (0, 1))
    back = p.permute_partitions((1, 0))
    for q in range(2):
        for m in range(2):
            np.testing.assert_array_equal(back.coupling[q][m], t.coupling[q][m])
    assert back.stage_schedule == t.stage_schedule
