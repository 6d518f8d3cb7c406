"""The delay Hilbert space H = L2([-tau,0]; mu; R^n), mu = Lebesgue + delta_0.

An element is a head vector (the atom component at theta = 0) plus a body
sampled on the uniform grid theta_i = -tau + i*h, i = 1..N_g, h = tau/N_g.
The last body node sits at theta = 0 and carries the trace of the Lebesgue
part there; it is distinct from the head (they agree for embedded
continuous functions and for elements of the generator domain, but not for
boundary inhomogeneities).

Quadrature over (-tau, 0) is the closed composite trapezoid rule on the
grid extended to -tau, where the missing left endpoint is filled by linear
extrapolation 2*b[0] - b[1].  This keeps second-order accuracy with exactly
N_g stored values and makes face quadratures in tensor powers exact tensor
products of the 1-D rule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "HistoryElement",
    "StieltjesKernel",
    "inner_product",
    "embed_continuous",
    "stieltjes_apply",
    "total_variation",
    "body_nodes",
    "trapezoid_weights",
    "extend_left",
    "body_form",
]


def body_nodes(tau: float, n_grid: int) -> np.ndarray:
    """Grid nodes -tau + i*h for i = 1..N_g (the last node is 0)."""
    h = tau / n_grid
    return -tau + h * np.arange(1, n_grid + 1)


def trapezoid_weights(tau: float, n_grid: int) -> np.ndarray:
    """Closed trapezoid weights on the N_g+1 extended nodes -tau, ..., 0."""
    h = tau / n_grid
    w = np.full(n_grid + 1, h)
    w[0] = w[-1] = h / 2.0
    return w


def extend_left(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Prepend the extrapolated -tau value 2*v[0] - v[1] along ``axis``."""
    first = np.take(values, [0], axis=axis)
    second = np.take(values, [1], axis=axis)
    return np.concatenate([2.0 * first - second, values], axis=axis)


def body_form(a: np.ndarray, b: np.ndarray, tau: float) -> float | complex:
    """Discrete L2(-tau,0) pairing of two node-value arrays (last axis = n)."""
    a = np.atleast_2d(np.asarray(a))
    b = np.atleast_2d(np.asarray(b))
    n_grid = a.shape[0]
    w = trapezoid_weights(tau, n_grid)
    ea = extend_left(a)
    eb = extend_left(b)
    return np.einsum("i,i->", w, np.einsum("ik,ik->i", ea, np.conj(eb)))


@dataclass(frozen=True)
class HistoryElement:
    """One element of H: head value at 0 plus body grid on (-tau, 0]."""

    head: np.ndarray  # shape (n,)
    body: np.ndarray  # shape (N_g, n)
    tau: float

    def __post_init__(self):
        head = np.atleast_1d(np.asarray(self.head, dtype=float))
        body = np.asarray(self.body, dtype=float)
        if body.ndim == 1:
            body = body[:, None]
        object.__setattr__(self, "head", head)
        object.__setattr__(self, "body", body)
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if body.shape[1] != head.shape[0]:
            raise ValueError(f"body value dimension {body.shape[1]} != head dimension {head.shape[0]}")
        if body.shape[0] < 2:
            raise ValueError("need at least two body nodes")
        if not (np.all(np.isfinite(head)) and np.all(np.isfinite(body))):
            raise ValueError("non-finite entries in history element")

    @property
    def n(self) -> int:
        return self.head.shape[0]

    @property
    def n_grid(self) -> int:
        return self.body.shape[0]

    @property
    def h(self) -> float:
        return self.tau / self.n_grid

    @property
    def nodes(self) -> np.ndarray:
        return body_nodes(self.tau, self.n_grid)

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self)))

    def scaled(self, a: float) -> "HistoryElement":
        return HistoryElement(a * self.head, a * self.body, self.tau)

    def __add__(self, other: "HistoryElement") -> "HistoryElement":
        _check_compatible(self, other)
        return HistoryElement(self.head + other.head, self.body + other.body, self.tau)

    def __sub__(self, other: "HistoryElement") -> "HistoryElement":
        _check_compatible(self, other)
        return HistoryElement(self.head - other.head, self.body - other.body, self.tau)


def _check_compatible(a: HistoryElement, b: HistoryElement) -> None:
    if a.n != b.n or a.n_grid != b.n_grid or not np.isclose(a.tau, b.tau):
        raise ValueError("incompatible history elements (n, tau or grid size differ)")


def inner_product(phi: HistoryElement, psi: HistoryElement) -> float:
    """<phi, psi>_H = trapezoid(body . body) over (-tau,0) + head . head."""
    _check_compatible(phi, psi)
    atom = float(np.dot(phi.head, psi.head))
    return float(body_form(phi.body, psi.body, phi.tau).real) + atom


def embed_continuous(f: Callable[[float], np.ndarray | float], tau: float, n_grid: int, n: int = 1) -> HistoryElement:
    """Embed a continuous function on [-tau,0] into H: head = f(0), body = f(nodes)."""
    nodes = body_nodes(tau, n_grid)
    body = np.array([np.atleast_1d(np.asarray(f(t), dtype=float)) for t in nodes])
    head = np.atleast_1d(np.asarray(f(0.0), dtype=float))
    if head.shape[0] != n and n != 1:
        raise ValueError(f"f returns dimension {head.shape[0]}, expected {n}")
    if not np.all(np.isfinite(body)) or not np.all(np.isfinite(head)):
        raise ValueError("embedded function produced non-finite samples")
    return HistoryElement(head, body, tau)


@dataclass(frozen=True)
class StieltjesKernel:
    """Matrix-valued bounded-variation measure on [-tau, 0].

    atoms: list of (theta, matrix) with matrix of shape (out_dim, in_dim);
    density: optional callable theta -> matrix, integrated with the same
    extended trapezoid rule as the inner product.
    """

    atoms: tuple  # tuple of (float, np.ndarray)
    out_dim: int
    in_dim: int
    tau: float
    density: Optional[Callable[[float], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        norm_atoms = []
        for theta, mat in self.atoms:
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
            if mat.shape != (self.out_dim, self.in_dim):
                raise ValueError(f"atom matrix shape {mat.shape} != ({self.out_dim}, {self.in_dim})")
            if theta < -self.tau - 1e-12 or theta > 1e-12:
                raise ValueError(f"atom location {theta} outside [-tau, 0]")
            norm_atoms.append((float(np.clip(theta, -self.tau, 0.0)), mat))
        object.__setattr__(self, "atoms", tuple(norm_atoms))

    def __add__(self, other: "StieltjesKernel") -> "StieltjesKernel":
        if (self.out_dim, self.in_dim) != (other.out_dim, other.in_dim) or not np.isclose(self.tau, other.tau):
            raise ValueError("kernel shapes or delay horizons differ")
        if self.density is None:
            dens = other.density
        elif other.density is None:
            dens = self.density
        else:
            d1, d2 = self.density, other.density
            dens = lambda t: d1(t) + d2(t)
        return StieltjesKernel(self.atoms + other.atoms, self.out_dim, self.in_dim, self.tau, dens)

    def scaled(self, mat_left: np.ndarray) -> "StieltjesKernel":
        """Left-multiply the kernel by a constant matrix; exact-zero atoms
        are dropped so a zero shift leaves kernels structurally unchanged."""
        mat_left = np.atleast_2d(np.asarray(mat_left, dtype=float))
        atoms = tuple((t, mat_left @ m) for t, m in self.atoms if np.any(mat_left @ m))
        dens = None
        if self.density is not None and np.any(mat_left):
            d = self.density
            dens = lambda t: mat_left @ np.atleast_2d(d(t))
        return StieltjesKernel(atoms, mat_left.shape[0], self.in_dim, self.tau, dens)

    def density_samples(self, n_grid: int) -> Optional[np.ndarray]:
        """Density at the N_g+1 extended nodes, shape (N_g+1, out, in)."""
        if self.density is None:
            return None
        h = self.tau / n_grid
        nodes = -self.tau + h * np.arange(0, n_grid + 1)
        return np.array([np.atleast_2d(self.density(t)) for t in nodes], dtype=float)


def snap_atom_index(theta: float, tau: float, n_grid: int) -> int:
    """Snap an atom location to the nearest full-grid index 0..N_g.

    Index 0 is -tau (read via extrapolation), index N_g is 0 (reads the
    head for H elements).  A warning is emitted if the snap moves the atom
    by more than h/2, which only happens for clipped off-interval inputs.
    """
    h = tau / n_grid
    idx = int(round((theta + tau) / h))
    idx = min(max(idx, 0), n_grid)
    dist = abs(theta - (-tau + idx * h))
    if dist > h / 2 + 1e-12:
        warnings.warn(f"atom at {theta} snapped by {dist:.3e} (> h/2) to node {-tau + idx * h}")
    return idx


def _read_node(phi: HistoryElement, idx: int) -> np.ndarray:
    """Value at full-grid index 0..N_g: head at N_g, extrapolated at 0."""
    if idx == phi.n_grid:
        return phi.head
    if idx == 0:
        return 2.0 * phi.body[0] - phi.body[1]
    return phi.body[idx - 1]


def stieltjes_apply(k: StieltjesKernel, phi: HistoryElement) -> np.ndarray:
    """Integrate d k against phi: atoms read grid values (head at 0),
    the density part goes through the extended trapezoid rule."""
    if k.in_dim != phi.n:
        raise ValueError(f"kernel in_dim {k.in_dim} != element dimension {phi.n}")
    out = np.zeros(k.out_dim)
    for theta, mat in k.atoms:
        idx = snap_atom_index(theta, phi.tau, phi.n_grid)
        out += mat @ _read_node(phi, idx)
    dens = k.density_samples(phi.n_grid)
    if dens is not None:
        w = trapezoid_weights(phi.tau, phi.n_grid)
        ext = extend_left(phi.body)
        out += np.einsum("i,ikl,il->k", w, dens, ext)
    return out


def total_variation(k: StieltjesKernel, quad_points: int = 2048) -> float:
    """Sum of atom spectral norms plus the integral of the density norm."""
    tv = sum(float(np.linalg.norm(m, 2)) for _, m in k.atoms)
    if k.density is not None:
        ts = np.linspace(-k.tau, 0.0, quad_points + 1)
        norms = np.array([np.linalg.norm(np.atleast_2d(k.density(t)), 2) for t in ts])
        tv += float(np.trapezoid(norms, ts))
    return tv
