import numpy as np
import pytest

from ddewedge.hilbert import HistoryElement, embed_continuous
from ddewedge.exterior import check_antisymmetry, compound_norm, tensor_product, wedge
from ddewedge.models import build_mackey_glass
from ddewedge.transfer import (
    ControlBasis,
    LaplaceRouteError,
    MeasurementBasis,
    TransferAssembly,
    WedgeSum,
    control_embed,
    control_factors,
    dense_resolvent_solve,
    grid_form,
    measurement_project,
    orthonormal_grid_basis,
    resolvent_laplace,
    transfer_matrix,
    transfer_matrix_reference,
)

from conftest import scalar_model

TAU = 1.0
NG = 64


@pytest.fixture(scope="module")
def mg_model():
    model, _ = build_mackey_glass(0.1, 0.2, 10.0, TAU)
    return model


def _smooth_pair(ng):
    f = embed_continuous(lambda t: np.exp(t), TAU, ng)
    g = embed_continuous(lambda t: np.cos(2 * t) + 0.3 * t, TAU, ng)
    return f, g


def test_basis_gram_identity(mg_model):
    basis = orthonormal_grid_basis(TAU, 128, 12)
    gram = np.array([[grid_form(basis[:, i], basis[:, j], TAU).real for j in range(12)] for i in range(12)])
    assert np.max(np.abs(gram - np.eye(12))) < 1e-10


def test_basis_nesting(mg_model):
    b8 = orthonormal_grid_basis(TAU, 128, 8)
    b4 = orthonormal_grid_basis(TAU, 128, 4)
    assert np.allclose(b8[:, :4], b4)


def test_control_embed_m1(mg_model):
    basis = ControlBasis.build(mg_model, 1, NG, 1)
    ce = control_embed(mg_model, basis, 0)
    assert ce.faces[()][0] == pytest.approx(1.0)  # B tilde = 1 at the head slot
    assert np.all(ce.faces[(1,)] == 0.0)


def test_control_embed_m2_structure(mg_model):
    basis = ControlBasis.build(mg_model, 2, NG, 4)
    ce = control_embed(mg_model, basis, 1)
    # supported on the proper (m-1)-faces only
    assert np.all(ce.faces[()] == 0.0)
    assert np.all(ce.faces[(1, 2)] == 0.0)
    assert np.allclose(ce.faces[(1,)], -ce.faces[(2,)])
    # equals coeff * wedge(psi_i, psi_inf) entrywise
    coeff, factors = control_factors(mg_model, basis, 1)
    ref = wedge(*factors).scaled(coeff)
    for face in ce.faces:
        assert np.allclose(ce.faces[face], ref.faces[face], atol=1e-14)
    # exactly antisymmetric
    assert check_antisymmetry(ce).max_violation < 1e-12
    # unit norm in the control space: ||free component||^2 * 2 = 1
    free = ce.faces[(1,)][:, 0] / float(mg_model.b_tilde[0, 0])
    assert 2.0 * grid_form(free, free, TAU).real == pytest.approx(1.0, abs=1e-10)


def test_measurement_project_zero_and_delta0(mg_model):
    basis = MeasurementBasis.build(mg_model, 2, NG, 4)
    from ddewedge.exterior import CompoundGridFunction

    zero = CompoundGridFunction(2, 1, TAU, NG)
    assert np.allclose(measurement_project(zero, mg_model, basis), 0.0)
    # c = delta at 0 reads the lower-face rows (the trace)
    model0 = scalar_model([(0.0, [[-1.0]])], TAU, c_entries=[(0.0, [[1.0]])])
    f, g = _smooth_pair(NG)
    w = wedge(f, g)
    got = measurement_project(w, model0, basis)
    trace = w.faces[(2,)][:, 0]
    from ddewedge.hilbert import extend_left, trapezoid_weights

    wts = trapezoid_weights(TAU, NG)
    expected = np.sqrt(2.0) * (extend_left(basis.functions, axis=0).T @ (wts * extend_left(trace)))
    assert np.allclose(got, expected, atol=1e-12)


def test_measurement_project_delta_tau_hand_expansion(mg_model):
    # c = delta at -tau on a wedge: 1/2 [phi1(-tau) phi2(theta) - phi2(-tau) phi1(theta)]
    basis = MeasurementBasis.build(mg_model, 2, 256, 6)
    f, g = _smooth_pair(256)
    w = wedge(f, g)
    got = measurement_project(w, mg_model, basis)
    from ddewedge.hilbert import extend_left, trapezoid_weights

    # exact endpoint values: agreement at the -tau extrapolation level O(h^2)
    f_tau, g_tau = np.exp(-TAU), np.cos(-2 * TAU) + 0.3 * (-TAU)
    free = 0.5 * (f_tau * g.body[:, 0] - g_tau * f.body[:, 0])
    wts = trapezoid_weights(TAU, 256)
    expected = np.sqrt(2.0) * (extend_left(basis.functions, axis=0).T @ (wts * extend_left(free)))
    assert np.max(np.abs(got - expected)) <= 5e-5 * max(np.max(np.abs(expected)), 1.0)
    # with the same extrapolated endpoint reads the hand expansion is exact
    f_tau_e = 2 * f.body[0, 0] - f.body[1, 0]
    g_tau_e = 2 * g.body[0, 0] - g.body[1, 0]
    free_e = 0.5 * (f_tau_e * g.body[:, 0] - g_tau_e * f.body[:, 0])
    expected_e = np.sqrt(2.0) * (extend_left(basis.functions, axis=0).T @ (wts * extend_left(free_e)))
    assert np.max(np.abs(got - expected_e)) <= 1e-12 * max(np.max(np.abs(expected_e)), 1.0)


def test_resolvent_laplace_m1_closed_form(ode_model):
    # -(A - p)^{-1} of the unit head element at p = 0: head component 1
    unit = HistoryElement([1.0], np.zeros((NG, 1)), TAU)
    res = resolvent_laplace(ode_model, WedgeSum([(1.0, (unit,))]), 0.0, 60.0, spectral_bound=-1.0)
    assert res.value.faces[()][0].real == pytest.approx(1.0, abs=5e-5)
    # dense route solves (A - 0) x = psi directly: head component -1
    dense = dense_resolvent_solve(ode_model, tensor_product(unit), 0.0)
    assert dense.faces[()][0].real == pytest.approx(-1.0, abs=1e-10)


def test_resolvent_laplace_norm_decay(ode_model):
    f, g = _smooth_pair(NG)
    ws = WedgeSum([(1.0, (f, g))])
    norms = []
    for re_p in (0.5, 1.5, 3.0):
        res = resolvent_laplace(ode_model, ws, complex(re_p, 0.4), 40.0, spectral_bound=-2.0)
        norms.append(compound_norm(res.value))
    assert norms[0] > norms[1] > norms[2]


def test_resolvent_laplace_invalid_halfplane(ode_model):
    f, g = _smooth_pair(NG)
    with pytest.raises(LaplaceRouteError, match="dense oracle"):
        resolvent_laplace(ode_model, WedgeSum([(1.0, (f, g))]), complex(-2.5, 0.0), 40.0, spectral_bound=-2.0)


def test_resolvent_horizon_doubling_within_remainder(mg_model):
    f, g = _smooth_pair(NG)
    ws = WedgeSum([(1.0, (f, g))])
    p = complex(-0.05, 1.0)
    r1 = resolvent_laplace(mg_model, ws, p, 60.0, spectral_bound=-0.2)
    r2 = resolvent_laplace(mg_model, ws, p, 120.0, spectral_bound=-0.2)
    change = compound_norm(r2.value - r1.value)
    assert change <= max(r1.remainder, 1e-12)


def test_dense_resolvent_residual_and_antisymmetry(mg_model):
    f, g = _smooth_pair(NG)
    psi = wedge(f, g)
    phi, info = dense_resolvent_solve(mg_model, psi, complex(-0.05, 1.0), return_details=True)
    assert info["residual"] < 1e-10
    assert check_antisymmetry(phi).max_violation < 1e-10


def test_laplace_vs_dense_oracle(mg_model):
    # the module's core two-route check at a desk-scale grid
    f, g = _smooth_pair(NG)
    ws = WedgeSum([(1.0, (f, g))])
    p = complex(-0.05, 1.0)
    lap = resolvent_laplace(mg_model, ws, p, 100.0, spectral_bound=-0.2)
    dense = dense_resolvent_solve(mg_model, ws.materialize(), p)
    diff = compound_norm(lap.value + dense) / compound_norm(dense)
    assert diff < 0.02


def test_transfer_matrix_lambda_independent(mg_model):
    from ddewedge.semigroup import LinearDelayModel

    other = LinearDelayModel(
        mg_model.n, mg_model.tau, mg_model.alpha, mg_model.b_tilde, mg_model.c_kernel, 99.0, mg_model.gain
    )
    c1 = ControlBasis.build(mg_model, 2, NG, 3)
    m1 = MeasurementBasis.build(mg_model, 2, NG, 3)
    p = complex(-0.1, 0.5)
    t1 = transfer_matrix(mg_model, p, c1, m1, 80.0, spectral_bound=-0.2)
    t2 = transfer_matrix(other, p, c1, m1, 80.0, spectral_bound=-0.2)
    assert np.allclose(t1.matrix, t2.matrix)


def test_transfer_matrix_conjugate_symmetry(mg_model):
    control = ControlBasis.build(mg_model, 2, NG, 3)
    measurement = MeasurementBasis.build(mg_model, 2, NG, 3)
    asm = TransferAssembly(mg_model, control, measurement, 80.0, NG, spectral_bound=-0.2)
    a = asm.matrix(complex(-0.1, 0.8)).matrix
    b = asm.matrix(complex(-0.1, -0.8)).matrix
    assert np.max(np.abs(a - np.conj(b))) < 1e-10


def test_transfer_matrix_m1_closed_form(mg_model):
    # W(p) = -e^{-p tau} / (p + gamma) for the scalar decay with delayed read
    ng = 400
    control = ControlBasis.build(mg_model, 1, ng, 1)
    measurement = MeasurementBasis.build(mg_model, 1, ng, 1)
    asm = TransferAssembly(mg_model, control, measurement, 240.0, ng, spectral_bound=-0.1)
    for p in (complex(0.1, 1.0), complex(0.2, 2.0)):
        got = asm.matrix(p).matrix[0, 0]
        exact = -np.exp(-p * TAU) / (p + 0.1)
        assert abs(got - exact) <= 1e-6


def test_transfer_columns_linear(mg_model):
    control = ControlBasis.build(mg_model, 2, NG, 3)
    measurement = MeasurementBasis.build(mg_model, 2, NG, 3)
    p = complex(-0.1, 0.4)
    cols = transfer_matrix_reference(mg_model, p, control, measurement, 60.0, spectral_bound=-0.2)
    # a linear combination of control elements maps to the combination of columns
    coeff, (psi0, psi_inf) = control_factors(mg_model, control, 0)
    _, (psi1, _) = control_factors(mg_model, control, 1)
    combo_body = 2.0 * psi0.body + 3.0 * psi1.body
    combo = HistoryElement(np.zeros(1), combo_body, TAU)
    ws = WedgeSum([(-coeff, (combo, psi_inf))])
    res = resolvent_laplace(mg_model, ws, p, 60.0, spectral_bound=-0.2)
    got = measurement_project(res.value, mg_model, measurement)
    expected = 2.0 * cols[:, 0] + 3.0 * cols[:, 1]
    assert np.max(np.abs(got - expected)) < 1e-10 * max(1.0, np.max(np.abs(expected)))


def test_fused_matches_reference_path(mg_model):
    control = ControlBasis.build(mg_model, 2, NG, 4)
    measurement = MeasurementBasis.build(mg_model, 2, NG, 4)
    p = complex(-0.1, 0.7)
    asm = TransferAssembly(mg_model, control, measurement, 80.0, NG, spectral_bound=-0.2)
    fused = asm.matrix(p).matrix
    ref = transfer_matrix_reference(mg_model, p, control, measurement, 80.0, spectral_bound=-0.2)
    # the paths differ only in how the -tau atom reads the integrated grid
    scale = max(np.max(np.abs(ref)), 1e-12)
    assert np.max(np.abs(fused - ref)) <= 2e-2 * scale


def test_fused_matches_reference_exactly_for_atom_at_zero():
    # with the measurement at theta = 0 both paths read the same head data
    model = scalar_model([(0.0, [[-0.5]]), (-TAU, [[-0.3]])], TAU, c_entries=[(0.0, [[1.0]])])
    control = ControlBasis.build(model, 2, NG, 3)
    measurement = MeasurementBasis.build(model, 2, NG, 3)
    p = complex(0.3, 0.6)
    asm = TransferAssembly(model, control, measurement, 60.0, NG, spectral_bound=-0.2)
    fused = asm.matrix(p).matrix
    ref = transfer_matrix_reference(model, p, control, measurement, 60.0, spectral_bound=-0.2)
    assert np.max(np.abs(fused - ref)) < 1e-10
