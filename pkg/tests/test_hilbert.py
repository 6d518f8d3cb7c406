import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddewedge.hilbert import (
    HistoryElement,
    StieltjesKernel,
    embed_continuous,
    inner_product,
    stieltjes_apply,
    total_variation,
    body_nodes,
)

from conftest import atom_kernel, random_element

TAU = 1.0
NG = 64


def test_inner_product_head_only():
    phi = HistoryElement([1.0], np.zeros((NG, 1)), TAU)
    assert inner_product(phi, phi) == 1.0


def test_inner_product_body_ones():
    phi = HistoryElement([0.0], np.ones((NG, 1)), TAU)
    assert inner_product(phi, phi) == pytest.approx(1.0, abs=1e-12)


def test_inner_product_theta_squared():
    # <phi, phi> for phi(theta) = theta equals 1/3 + 0^2 up to O(h^2)
    phi = embed_continuous(lambda t: t, TAU, NG)
    h = TAU / NG
    assert inner_product(phi, phi) == pytest.approx(1.0 / 3.0, abs=5 * h**2)


def test_inner_product_shape_error():
    phi = HistoryElement([0.0], np.ones((NG, 1)), TAU)
    psi = HistoryElement([0.0], np.ones((NG + 1, 1)), TAU)
    with pytest.raises(ValueError):
        inner_product(phi, psi)


def test_embed_zero_and_constant():
    zero = embed_continuous(lambda t: 0.0, TAU, NG)
    assert zero.head[0] == 0.0 and np.all(zero.body == 0.0)
    const = embed_continuous(lambda t: 2.5, TAU, NG)
    assert const.head[0] == 2.5 and np.all(const.body == 2.5)


def test_embed_exponential_nodes():
    phi = embed_continuous(lambda t: np.exp(t), TAU, 4)
    assert phi.head[0] == 1.0
    assert phi.body[:, 0] == pytest.approx([np.exp(-0.75), np.exp(-0.5), np.exp(-0.25), 1.0])


def test_embed_rejects_nonfinite():
    with pytest.raises(ValueError):
        embed_continuous(lambda t: np.inf, TAU, NG)


def test_stieltjes_atom_at_zero_reads_head(rng):
    k = atom_kernel([(0.0, [[1.0]])], TAU)
    phi = random_element(rng, TAU, NG)
    assert stieltjes_apply(k, phi)[0] == phi.head[0]


def test_stieltjes_atom_at_minus_tau():
    # Suarez-Schopf stationary delayed atom on the constant history
    k = atom_kernel([(-TAU, [[-0.75]])], TAU)
    phi = HistoryElement([1.0], np.ones((NG, 1)), TAU)
    assert stieltjes_apply(k, phi)[0] == pytest.approx(-0.75, abs=1e-14)


def test_stieltjes_unit_density():
    k = StieltjesKernel((), 1, 1, TAU, density=lambda t: np.array([[1.0]]))
    phi = embed_continuous(lambda t: t, TAU, NG)
    h = TAU / NG
    assert stieltjes_apply(k, phi)[0] == pytest.approx(-0.5, abs=5 * h**2)


def test_total_variation_examples():
    assert total_variation(StieltjesKernel((), 1, 1, TAU)) == 0.0
    assert total_variation(atom_kernel([(0.0, [[-0.75]])], TAU)) == 0.75
    k = StieltjesKernel(((0.0, np.array([[1.0]])),), 1, 1, TAU, density=lambda t: np.array([[1.0]]))
    assert total_variation(k) == pytest.approx(2.0, abs=1e-9)


def test_total_variation_subadditive(rng):
    k1 = atom_kernel([(-0.5, [[rng.normal()]])], TAU)
    k2 = StieltjesKernel((), 1, 1, TAU, density=lambda t: np.array([[np.sin(3 * t)]]))
    assert total_variation(k1 + k2) <= total_variation(k1) + total_variation(k2) + 1e-12


@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_inner_product_symmetric_bilinear_positive(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    phi = random_element(rng, TAU, 16)
    psi = random_element(rng, TAU, 16)
    chi = random_element(rng, TAU, 16)
    a = data.draw(st.floats(-3, 3, allow_nan=False))
    assert inner_product(phi, psi) == pytest.approx(inner_product(psi, phi), rel=1e-12, abs=1e-12)
    lhs = inner_product(phi.scaled(a) + chi, psi)
    rhs = a * inner_product(phi, psi) + inner_product(chi, psi)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
    if np.max(np.abs(phi.body)) + np.max(np.abs(phi.head)) > 1e-12:
        assert inner_product(phi, phi) > 0.0


def test_embed_norm_identity():
    f = lambda t: np.cos(3 * t) + 0.2 * t
    phi = embed_continuous(f, TAU, 256)
    nodes = np.concatenate([[-TAU], body_nodes(TAU, 256)])
    quad = np.trapezoid([f(t) ** 2 for t in nodes], nodes)
    assert inner_product(phi, phi) == pytest.approx(quad + f(0.0) ** 2, abs=1e-6)


def test_stieltjes_linear_and_additive(rng):
    k1 = atom_kernel([(0.0, [[0.7]]), (-0.5, [[-0.2]])], TAU)
    k2 = StieltjesKernel((), 1, 1, TAU, density=lambda t: np.array([[t]]))
    phi = random_element(rng, TAU, NG)
    psi = random_element(rng, TAU, NG)
    lhs = stieltjes_apply(k1, HistoryElement(2 * phi.head + psi.head, 2 * phi.body + psi.body, TAU))
    rhs = 2 * stieltjes_apply(k1, phi) + stieltjes_apply(k1, psi)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
    both = stieltjes_apply(k1 + k2, phi)
    assert both == pytest.approx(stieltjes_apply(k1, phi) + stieltjes_apply(k2, phi), rel=1e-12, abs=1e-12)


def test_atom_snap_warning():
    from ddewedge.hilbert import snap_atom_index

    h = TAU / NG
    # clipped off-grid location moves by more than h/2
    with pytest.warns(UserWarning, match="snapped"):
        snap_atom_index(-TAU - 0.6 * h, TAU, NG)
    # on-interval locations snap silently
    assert snap_atom_index(-0.5 + 0.3 * h, TAU, NG) == round((-0.5 + 0.3 * h + TAU) / h)
