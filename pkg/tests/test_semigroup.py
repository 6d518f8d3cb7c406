import numpy as np
import pytest

from ddewedge.hilbert import HistoryElement, StieltjesKernel, embed_continuous
from ddewedge.semigroup import (
    LinearDelayModel,
    characteristic_matrix,
    characteristic_roots,
    cocycle_apply,
    semigroup_apply,
    shift_feedback,
    solve_linear,
    _winding_number,
)

from conftest import atom_kernel, scalar_model

TAU = 1.0
NG = 100


def test_solve_linear_ode_decay(ode_model):
    phi0 = embed_continuous(lambda t: 1.0, TAU, NG)
    traj = solve_linear(ode_model, phi0, 1.0, 1e-3)
    assert abs(traj.x(1.0)[0] - np.exp(-1.0)) < 1e-8


def test_solve_linear_zero_kernel_constant():
    model = scalar_model([], TAU)
    phi0 = embed_continuous(lambda t: 3.0, TAU, NG)
    traj = solve_linear(model, phi0, 2.0, 0.01)
    assert all(abs(traj.x(t)[0] - 3.0) < 1e-13 for t in (0.3, 1.1, 2.0))


def test_solve_linear_method_of_steps(pure_delay_model):
    phi0 = embed_continuous(lambda t: 1.0, TAU, NG)
    traj = solve_linear(pure_delay_model, phi0, 1.0, 0.01)
    for t in np.linspace(0, 1, 11):
        assert abs(traj.x(t)[0] - (1.0 - t)) < 1e-13


def test_solve_linear_requires_gain():
    model = scalar_model([(0.0, [[-1.0]])], TAU)
    phi0 = embed_continuous(lambda t: 1.0, TAU, NG)
    with pytest.raises(ValueError, match="gain"):
        solve_linear(model, phi0, 1.0, 0.01, with_gain=True)


def test_semigroup_identity_and_closed_forms(ode_model, pure_delay_model):
    phi0 = embed_continuous(lambda t: 1.0, TAU, NG)
    assert semigroup_apply(ode_model, phi0, 0.0) is phi0
    w = semigroup_apply(ode_model, phi0, 2.0, dt=1e-3)
    assert abs(w.head[0] - np.exp(-2.0)) < 1e-9
    assert np.max(np.abs(w.body[:, 0] - np.exp(-(2.0 + w.nodes)))) < 1e-9
    # method of steps: the window of x(t) = 1 - t at t = 1 is x(1+theta) = -theta
    w1 = semigroup_apply(pure_delay_model, phi0, 1.0, dt=0.01)
    assert abs(w1.head[0]) < 1e-12
    assert np.max(np.abs(w1.body[:, 0] - (-w1.nodes))) < 1e-12
    with pytest.raises(ValueError):
        semigroup_apply(ode_model, phi0, -0.5)


def test_semigroup_property_order():
    model = scalar_model([(0.0, [[-0.3]]), (-1.0, [[-0.8]])], TAU)
    errs = []
    for ng in (25, 50, 100):
        phi = embed_continuous(lambda t: np.cos(3 * t) + 0.5 * t, TAU, ng)
        dt = TAU / ng
        lhs = semigroup_apply(model, phi, 2.0, dt=dt)
        rhs = semigroup_apply(model, semigroup_apply(model, phi, 1.3, dt=dt), 0.7, dt=dt)
        errs.append((lhs - rhs).norm() / phi.norm())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 2.0)
    assert errs[-1] < 1e-6


def test_cocycle_zero_gain_matches_semigroup():
    model = scalar_model([(0.0, [[-0.5]])], TAU, lam=1.0, gain=lambda t: np.array([[0.0]]))
    phi = embed_continuous(lambda t: np.sin(t), TAU, NG)
    a = cocycle_apply(model, phi, 1.5, dt=0.01)
    b = semigroup_apply(model, phi, 1.5, dt=0.01)
    assert (a - b).norm() < 1e-14


def test_cocycle_constant_gain_matches_shifted_model():
    d = np.array([[0.65]])
    model = scalar_model([(0.0, [[-0.5]])], TAU, c_entries=[(-TAU, [[1.0]])], lam=1.0, gain=lambda t: d)
    shifted = shift_feedback(model, d)
    # the shifted stationary part absorbs the gain, so its pure semigroup
    # equals the original cocycle
    phi = embed_continuous(lambda t: np.cos(2 * t), TAU, NG)
    a = cocycle_apply(model, phi, 1.8, dt=0.01)
    b = semigroup_apply(shifted, phi, 1.8, dt=0.01)
    assert (a - b).norm() < 1e-10


def test_cocycle_property_time_series_gain():
    gain = lambda t: np.array([[0.5 * np.sin(0.7 * t)]])
    errs = []
    for ng in (25, 50, 100):
        model = scalar_model([(0.0, [[-0.3]]), (-1.0, [[-0.8]])], TAU, lam=1.0, gain=gain)
        phi = embed_continuous(lambda t: np.cos(3 * t) + 0.5 * t, TAU, ng)
        dt = TAU / ng
        s_, t_ = 0.9, 0.6
        lhs = cocycle_apply(model, phi, s_ + t_, dt=dt)
        shifted = scalar_model(
            [(0.0, [[-0.3]]), (-1.0, [[-0.8]])], TAU, lam=1.0, gain=lambda t: gain(t + s_)
        )
        rhs = cocycle_apply(shifted, cocycle_apply(model, phi, s_, dt=dt), t_, dt=dt)
        errs.append((lhs - rhs).norm() / phi.norm())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 2.0)
    assert errs[-1] < 1e-6


def test_characteristic_matrix_examples(ode_model, pure_delay_model):
    assert abs(characteristic_matrix(ode_model, -1.0)[0, 0]) < 1e-14
    lam = 0.5j * np.pi
    val = characteristic_matrix(pure_delay_model, lam)[0, 0]
    assert val == pytest.approx(lam + np.exp(-lam), abs=1e-14)
    mg_stationary = scalar_model([(0.0, [[-0.1]])], TAU)
    assert abs(characteristic_matrix(mg_stationary, -0.1)[0, 0]) < 1e-15


def test_characteristic_roots_ode(ode_model):
    roots = characteristic_roots(ode_model, (-2.0, 1.0, -1.0, 1.0))
    assert len(roots) == 1
    root, mult = roots[0]
    assert mult == 1
    assert root == pytest.approx(-1.0, abs=1e-10)


def test_characteristic_roots_delay_leading_pair(pure_delay_model):
    roots = characteristic_roots(pure_delay_model, (-1.0, 1.0, -3.0, 3.0))
    roots = sorted(roots, key=lambda r: r[0].imag)
    assert len(roots) == 2
    lead = roots[1][0]
    # Newton refinement from a coarse seed as an independent check
    lam = complex(-0.3, 1.3)
    for _ in range(60):
        f = lam + np.exp(-lam)
        lam -= f / (1.0 - np.exp(-lam))
    assert abs(lead - lam) < 1e-10
    assert lead.real == pytest.approx(-0.3181, abs=1e-4)
    assert lead.imag == pytest.approx(1.3372, abs=1e-4)


def test_characteristic_roots_suarez_schopf_unshifted():
    model = scalar_model([(0.0, [[1.0]]), (-0.6, [[-0.75]])], 0.6)
    roots = characteristic_roots(model, (1e-4, 1.0, -0.5, 0.5))
    assert len(roots) == 1
    assert roots[0][0].imag == pytest.approx(0.0, abs=1e-10)
    assert 0.0 < roots[0][0].real < 1.0


def test_root_residuals_and_winding_recount(pure_delay_model):
    region = (-2.4, 1.0, -9.0, 9.0)
    roots = characteristic_roots(pure_delay_model, region)
    for root, _ in roots:
        val = characteristic_matrix(pure_delay_model, root)[0, 0]
        assert abs(val) < 1e-10 * max(1.0, abs(root))
    # winding on the same rectangle matches the returned count
    assert _winding_number(pure_delay_model, region) == sum(m for _, m in roots)


def test_shift_feedback_examples():
    model = scalar_model(
        [(0.0, [[-0.1]])], TAU, c_entries=[(-TAU, [[1.0]])], lam=0.4, gain=lambda t: np.array([[-0.4]])
    )
    same = shift_feedback(model, np.array([[0.0]]))
    assert len(same.alpha.atoms) == len(model.alpha.atoms)
    for (t1, m1), (t2, m2) in zip(same.alpha.atoms, model.alpha.atoms):
        assert t1 == t2 and np.array_equal(m1, m2)
    shifted = shift_feedback(model, np.array([[0.3]]), new_lambda=0.7)
    locs = sorted(t for t, _ in shifted.alpha.atoms)
    assert locs == [-TAU, 0.0]
    new_atom = [m for t, m in shifted.alpha.atoms if t == -TAU][0]
    assert new_atom[0, 0] == pytest.approx(0.3)
    assert shifted.lambda_gain == 0.7
    # solution map unchanged
    phi = embed_continuous(lambda t: np.exp(t), TAU, NG)
    a = cocycle_apply(model, phi, 1.2, dt=0.01)
    b = cocycle_apply(shifted, phi, 1.2, dt=0.01)
    assert (a - b).norm() <= 1e-12 * max(a.norm(), 1.0)
