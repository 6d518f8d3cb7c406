import numpy as np
import pytest

from ddewedge.hilbert import HistoryElement, StieltjesKernel, embed_continuous
from ddewedge.semigroup import LinearDelayModel


def atom_kernel(entries, tau, out_dim=1, in_dim=1):
    atoms = tuple((theta, np.atleast_2d(np.asarray(mat, dtype=float))) for theta, mat in entries)
    return StieltjesKernel(atoms, out_dim, in_dim, tau)


def scalar_model(alpha_entries, tau, c_entries=((0.0, [[1.0]]),), lam=0.0, gain=None):
    return LinearDelayModel(
        1,
        tau,
        atom_kernel(alpha_entries, tau),
        np.array([[1.0]]),
        atom_kernel(c_entries, tau),
        lam,
        gain,
    )


@pytest.fixture
def ode_model():
    """x' = -x as a delay-space model."""
    return scalar_model([(0.0, [[-1.0]])], 1.0)


@pytest.fixture
def pure_delay_model():
    """x' = -x(t-1)."""
    return scalar_model([(-1.0, [[-1.0]])], 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def smooth_element(tau, n_grid, coeffs):
    a, b, c, d = coeffs
    return embed_continuous(
        lambda t: a + b * t + c * np.sin(2.0 * t / tau) + d * np.exp(t / tau), tau, n_grid, 1
    )


def random_smooth(rng, tau, n_grid):
    return smooth_element(tau, n_grid, rng.normal(size=4))


def random_element(rng, tau, n_grid, n=1):
    return HistoryElement(rng.normal(size=n), rng.normal(size=(n_grid, n)), tau)
