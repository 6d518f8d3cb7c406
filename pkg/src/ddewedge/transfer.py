"""Transfer operator W(p) = C^(A^[wedge m] - pI)^{-1}B^ and its finite
sections.

Two independent resolvent routes are kept side by side: the Laplace route
integrates e^{-pt} G^(t) applied to decomposable wedges (one trajectory
per factor, windows sliced from the stored path), valid right of the
growth bound; the dense route assembles the upwind discretization of the
compound generator with shared-node trace coupling and solves the sparse
complex system, valid anywhere off the discrete spectrum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hilbert import (
    HistoryElement,
    StieltjesKernel,
    extend_left,
    snap_atom_index,
    total_variation,
    trapezoid_weights,
)
from .semigroup import LinearDelayModel, solve_linear
from .exterior import (
    CompoundGridFunction,
    all_faces,
    antisymmetrize,
    apply_kernel_along_axis,
    check_antisymmetry,
    wedge,
    tensor_product,
)

__all__ = [
    "ControlBasis",
    "MeasurementBasis",
    "TransferMatrix",
    "TransferAssembly",
    "WedgeSum",
    "ResolventResult",
    "control_embed",
    "control_factors",
    "measurement_project",
    "resolvent_laplace",
    "dense_resolvent_solve",
    "dense_generator_matrix",
    "transfer_matrix",
    "transfer_matrix_reference",
    "orthonormal_grid_basis",
    "grid_form",
    "LaplaceRouteError",
    "ConditioningError",
]


class LaplaceRouteError(ValueError):
    pass


class ConditioningError(RuntimeError):
    pass


def orthonormal_grid_basis(tau: float, n_grid: int, size: int) -> np.ndarray:
    """Nested orthonormal functions on (-tau, 0): Legendre samples on the
    body nodes, Cholesky-orthonormalized against the discrete L2 form so
    the Gram matrix is the identity to round-off."""
    from numpy.polynomial import legendre

    if size < 1:
        raise ValueError("basis size must be >= 1")
    nodes = -tau + (tau / n_grid) * np.arange(1, n_grid + 1)
    x = 2.0 * nodes / tau + 1.0  # map to [-1, 1]
    v = np.zeros((n_grid, size))
    for k in range(size):
        coeffs = np.zeros(k + 1)
        coeffs[k] = 1.0
        v[:, k] = legendre.legval(x, coeffs) * np.sqrt((2 * k + 1) / tau)
    w = trapezoid_weights(tau, n_grid)
    ev = extend_left(v, axis=0)
    gram = ev.T @ (w[:, None] * ev)
    chol = np.linalg.cholesky(gram)
    return np.linalg.solve(chol, v.T).T


def grid_form(a: np.ndarray, b: np.ndarray, tau: float) -> complex:
    """Discrete L2(-tau, 0) pairing of node-value vectors."""
    w = trapezoid_weights(tau, a.shape[0])
    return complex(np.dot(w * extend_left(a), np.conj(extend_left(b))))


@dataclass(frozen=True)
class ControlBasis:
    """Orthonormal basis of the proper level of the antisymmetric control
    space; for scalar problems (n = r1 = 1, m = 2) the free component lives
    on a single copy of L2(-tau, 0)."""

    m: int
    tau: float
    n_grid: int
    size: int
    functions: Optional[np.ndarray]  # (n_grid, size) or None for m = 1

    @classmethod
    def build(cls, model: LinearDelayModel, m: int, n_grid: int, size: int) -> "ControlBasis":
        if m == 1:
            return cls(1, model.tau, n_grid, model.r1, None)
        if model.n != 1 or model.r1 != 1:
            raise NotImplementedError("antisymmetric control bases are provided for n = r1 = 1 only")
        if m != 2:
            raise NotImplementedError("control bases target m = 2")
        return cls(2, model.tau, n_grid, size, orthonormal_grid_basis(model.tau, n_grid, size))


@dataclass(frozen=True)
class MeasurementBasis:
    m: int
    tau: float
    n_grid: int
    size: int
    functions: Optional[np.ndarray]

    @classmethod
    def build(cls, model: LinearDelayModel, m: int, n_grid: int, size: int) -> "MeasurementBasis":
        if m == 1:
            return cls(1, model.tau, n_grid, model.r2, None)
        if model.n != 1 or model.r2 != 1:
            raise NotImplementedError("antisymmetric measurement bases are provided for n = r2 = 1 only")
        if m != 2:
            raise NotImplementedError("measurement bases target m = 2")
        return cls(2, model.tau, n_grid, size, orthonormal_grid_basis(model.tau, n_grid, size))


def control_factors(model: LinearDelayModel, basis: ControlBasis, index: int) -> Tuple[float, Tuple[HistoryElement, ...]]:
    """B^ applied to basis element ``index`` as coeff * wedge(factors)."""
    if index < 0 or index >= basis.size:
        raise IndexError("control index out of range")
    if basis.m == 1:
        head = model.b_tilde[:, index].copy()
        body = np.zeros((basis.n_grid, model.n))
        return 1.0, (HistoryElement(head, body, model.tau),)
    b = float(model.b_tilde[0, 0])
    e_i = basis.functions[:, index]
    psi_i = HistoryElement(np.zeros(1), e_i[:, None], model.tau)
    psi_inf = HistoryElement(np.array([b]), np.zeros((basis.n_grid, 1)), model.tau)
    return float(np.sqrt(2.0)), (psi_i, psi_inf)


def control_embed(model: LinearDelayModel, basis: ControlBasis, index: int) -> CompoundGridFunction:
    """Image of the ``index``-th orthonormal control element under B^,
    supported on the proper boundary faces only."""
    coeff, factors = control_factors(model, basis, index)
    if basis.m == 1:
        return tensor_product(*factors).scaled(coeff)
    return wedge(*factors).scaled(coeff)


def measurement_project(phi: CompoundGridFunction, model: LinearDelayModel, basis: MeasurementBasis) -> np.ndarray:
    """Coordinates of C^ phi in the orthonormal measurement basis.

    The kernel is applied slotwise along the designated axis of the face
    one level up; atoms at theta = 0 read the shared lower-face row.
    """
    m = phi.m
    if m == 1:
        out = apply_kernel_along_axis(
            model.c_kernel, phi.faces[(1,)], phi.faces[()], axis=0, slot=1, n=phi.n, m=1, tau=phi.tau
        )
        return np.asarray(out)
    if m != 2 or phi.n != 1 or model.r2 != 1:
        raise NotImplementedError("measurement projection targets m = 2 with n = r2 = 1")
    # free component with slot 1 integrated: for a wedge this reads
    # (1/2)[phi1(-tau) phi2(theta) - phi2(-tau) phi1(theta)] under c = delta_{-tau}
    free = apply_kernel_along_axis(
        model.c_kernel, phi.faces[(1, 2)], phi.faces[(2,)], axis=0, slot=1, n=1, m=2, tau=phi.tau
    )[:, 0]
    w = trapezoid_weights(phi.tau, phi.n_grid)
    ext_free = extend_left(free)
    ext_basis = extend_left(basis.functions, axis=0)
    return np.sqrt(2.0) * (ext_basis.T @ (w * ext_free))


@dataclass
class WedgeSum:
    """Short decomposable-sum input for the Laplace route."""

    terms: List[Tuple[complex, Tuple[HistoryElement, ...]]]

    @property
    def m(self) -> int:
        return len(self.terms[0][1])

    def materialize(self) -> CompoundGridFunction:
        acc = None
        for coeff, factors in self.terms:
            cgf = wedge(*factors) if len(factors) > 1 else tensor_product(*factors)
            cgf = cgf.scaled(coeff)
            acc = cgf if acc is None else acc + cgf
        return acc


@dataclass
class ResolventResult:
    value: CompoundGridFunction
    remainder: float
    kappa: float
    horizon: float
    m_fit: float


def _window_matrix(traj, n_grid: int, n_quad: int, stride: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Window bodies (N_t, N_g[, n]), heads and exact -tau lead values at
    quadrature nodes t_k = k * stride * dt, sliced from the stored path.

    When the initial history does not match the head (boundary elements
    like the B image), the path value is double-valued at t = 0; the jump
    travels through the windows on grid nodes, so quadrature reads take
    the average of the one-sided limits there (keeps the trapezoid rule
    second order across the jump).
    """
    ys = traj.ys
    n = ys.shape[1]
    n_hist = int(round(traj.tau / traj.dt))
    idx0 = 1 + stride * np.arange(n_quad)[:, None] + np.arange(n_grid)[None, :]
    ks = stride * np.arange(n_quad)
    left = np.atleast_1d(traj.initial.body[-1])
    right = np.atleast_1d(traj.initial.head)
    avg = 0.5 * (left + right)
    jumpy = float(np.max(np.abs(left - right))) > 1e-14
    if n > 1:
        bodies, heads, leads = ys[idx0, :], ys[ks + n_grid, :], ys[ks, :].copy()
        if jumpy:
            bodies = bodies.copy()
            bodies[idx0 == n_hist] = avg
            leads[ks == n_hist] = avg
        return bodies, heads, leads
    bodies, heads, leads = ys[idx0, 0], ys[ks + n_grid, 0], ys[ks, 0].copy()
    if jumpy:
        bodies = bodies.copy()
        bodies[idx0 == n_hist] = avg[0]
        leads[ks == n_hist] = avg[0]
    return bodies, heads, leads


def _stieltjes_series(
    kernel: StieltjesKernel, bodies: np.ndarray, heads: np.ndarray, leads: np.ndarray, tau: float
) -> np.ndarray:
    """stieltjes_apply of every window at once (scalar n = 1 path); atoms
    at -tau read the exact path lead values rather than extrapolating."""
    n_grid = bodies.shape[1]
    out = np.zeros(bodies.shape[0])
    for theta, mat in kernel.atoms:
        g = snap_atom_index(theta, tau, n_grid)
        if g == n_grid:
            read = heads
        elif g == 0:
            read = leads
        else:
            read = bodies[:, g - 1]
        out = out + float(mat[0, 0]) * read
    dens = kernel.density_samples(n_grid)
    if dens is not None:
        w = trapezoid_weights(tau, n_grid)
        ext = np.concatenate([leads[:, None], bodies], axis=1)
        out = out + ext @ (w * dens[:, 0, 0])
    return out


def _quad_weights(n_quad: int, dt: float) -> np.ndarray:
    w = np.full(n_quad, dt)
    w[0] = w[-1] = dt / 2.0
    return w


def resolvent_laplace(
    model: LinearDelayModel,
    phi: WedgeSum,
    p: complex,
    horizon: float,
    dt: Optional[float] = None,
    spectral_bound: Optional[float] = None,
) -> ResolventResult:
    """-(A^[wedge m] - pI)^{-1} phi by the truncated Laplace transform
    int_0^T e^{-pt} G^(t) phi dt, for Re p above the growth bound.

    Each wedge factor is advanced once; quadrature windows are sliced from
    the stored path.  The attached remainder estimate is M e^{-kappa T}
    with kappa = (Re p - s)/2 and M fitted to the integrand-norm tail.
    """
    m = phi.m
    if m > 2:
        raise NotImplementedError("grid Laplace resolvent targets m <= 2")
    tau = model.tau
    some_factor = phi.terms[0][1][0]
    n_grid = some_factor.n_grid
    n = some_factor.n
    if m == 2 and n != 1:
        raise NotImplementedError("m = 2 Laplace route requires n = 1")
    if spectral_bound is None:
        raise ValueError("pass the compound spectral bound (use compound_spectrum_sums)")
    if p.real <= spectral_bound:
        raise LaplaceRouteError(
            f"Re p = {p.real} is not above the growth bound {spectral_bound}: Laplace route invalid, use the dense oracle"
        )
    h = tau / n_grid
    dt = h if dt is None else dt
    stride = int(round(h / dt))
    n_steps = int(round(horizon / dt))
    n_quad = n_steps // stride + 1
    t_k = (stride * dt) * np.arange(n_quad)
    wq = _quad_weights(n_quad, stride * dt)
    wqe = wq * np.exp(-p * t_k)

    # one trajectory per distinct factor
    cache: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    factors_flat: List[HistoryElement] = []
    for _, factors in phi.terms:
        factors_flat.extend(factors)
    for f in factors_flat:
        key = id(f)
        if key not in cache:
            traj = solve_linear(model, f, horizon + dt, dt, with_gain=False)
            cache[key] = _window_matrix(traj, n_grid, n_quad, stride)

    faces = {fc: None for fc in all_faces(m)}

    def add(face, arr):
        faces[face] = arr if faces[face] is None else faces[face] + arr

    norm_sq_series = np.zeros(n_quad)
    for coeff, factors in phi.terms:
        if m == 1:
            bodies, heads, _ = cache[id(factors[0])]
            if n == 1:
                add((1,), coeff * (wqe @ bodies)[:, None])
                add((), np.atleast_1d(coeff * (wqe @ heads)))
                norm_sq_series += abs(coeff) ** 2 * (_window_sq_norms(bodies, heads, tau))
            else:
                add((1,), coeff * np.einsum("k,kia->ia", wqe, bodies))
                add((), coeff * np.einsum("k,ka->a", wqe, heads))
                norm_sq_series += abs(coeff) ** 2 * _window_sq_norms_nd(bodies, heads, tau)
        else:
            ub, uh, _ = cache[id(factors[0])]
            vb, vh, _ = cache[id(factors[1])]
            half = 0.5 * coeff
            top = half * (np.einsum("k,ki,kj->ij", wqe, ub, vb) - np.einsum("k,ki,kj->ij", wqe, vb, ub))
            add((1, 2), top[:, :, None])
            f1 = half * (np.einsum("k,ki->i", wqe * vh, ub) - np.einsum("k,ki->i", wqe * uh, vb))
            add((1,), f1[:, None])
            f2 = half * (np.einsum("k,kj->j", wqe * uh, vb) - np.einsum("k,kj->j", wqe * vh, ub))
            add((2,), f2[:, None])
            add((), np.zeros(1, dtype=complex))
            nu = _window_sq_norms(ub, uh, tau)
            nv = _window_sq_norms(vb, vh, tau)
            cross = _window_cross(ub, uh, vb, vh, tau)
            norm_sq_series += abs(coeff) ** 2 * 0.5 * np.maximum(nu * nv - cross**2, 0.0)

    value = CompoundGridFunction(m, n, tau, n_grid, {f: a for f, a in faces.items() if a is not None})
    kappa = (p.real - spectral_bound) / 2.0
    decay = np.abs(np.exp(-p * t_k)) * np.sqrt(norm_sq_series)
    tail = decay[int(0.7 * n_quad) :]
    t_tail = t_k[int(0.7 * n_quad) :]
    positive = tail > 0
    if np.any(positive):
        m_fit = float(np.exp(np.median(np.log(tail[positive]) + kappa * t_tail[positive])))
    else:
        m_fit = 0.0
    remainder = m_fit * np.exp(-kappa * horizon) / max(kappa, 1e-12)
    return ResolventResult(value, float(remainder), float(kappa), float(horizon), m_fit)


def _window_sq_norms(bodies: np.ndarray, heads: np.ndarray, tau: float) -> np.ndarray:
    w = trapezoid_weights(tau, bodies.shape[1])
    ext = extend_left(bodies, axis=1)
    return (ext**2) @ w + heads**2


def _window_sq_norms_nd(bodies: np.ndarray, heads: np.ndarray, tau: float) -> np.ndarray:
    w = trapezoid_weights(tau, bodies.shape[1])
    ext = extend_left(bodies, axis=1)
    return np.einsum("i,kia->k", w, ext**2) + np.einsum("ka->k", heads**2)


def _window_cross(ub, uh, vb, vh, tau: float) -> np.ndarray:
    w = trapezoid_weights(tau, ub.shape[1])
    return (extend_left(ub, axis=1) * extend_left(vb, axis=1)) @ w + uh * vh


# -- dense discretization oracle ---------------------------------------------


class _DenseIndex:
    """Unknown numbering over face interiors with shared-node traces."""

    def __init__(self, m: int, n_grid: int):
        self.m = m
        self.n_grid = n_grid
        self.offsets: Dict[Tuple[int, ...], int] = {}
        pos = 0
        for face in all_faces(m):
            self.offsets[face] = pos
            pos += (n_grid - 1) ** len(face)
        self.size = pos

    def column(self, face: Tuple[int, ...], arr_idx: Tuple[int, ...]) -> int:
        base = self.offsets[face]
        stride = 1
        col = 0
        for a in reversed(arr_idx):
            col += a * stride
            stride *= self.n_grid - 1
        return base + col

    def resolve(self, face: Tuple[int, ...], g: Tuple[int, ...]) -> List[Tuple[int, float]]:
        """Full-grid read (g in 0..N_g per axis) as unknown combinations:
        g = N_g drops the axis (trace = lower face), g = 0 expands the
        extrapolated phantom row."""
        for pos, gv in enumerate(g):
            if gv == 0:
                g1 = g[:pos] + (1,) + g[pos + 1 :]
                g2 = g[:pos] + (2,) + g[pos + 1 :]
                return [(c, 2.0 * w) for c, w in self.resolve(face, g1)] + [
                    (c, -w) for c, w in self.resolve(face, g2)
                ]
        keep = [i for i, gv in enumerate(g) if gv < self.n_grid]
        if len(keep) < len(g):
            new_face = tuple(face[i] for i in keep)
            new_g = tuple(g[i] for i in keep)
            return self.resolve(new_face, new_g)
        return [(self.column(face, tuple(gv - 1 for gv in g)), 1.0)]


def _kernel_reads(kernel: StieltjesKernel, n_grid: int, tau: float) -> List[Tuple[int, float]]:
    """Kernel as a list of (full-grid index, scalar weight) reads (n = 1)."""
    reads: List[Tuple[int, float]] = []
    for theta, mat in kernel.atoms:
        g = snap_atom_index(theta, tau, n_grid)
        reads.append((g, float(mat[0, 0])))
    dens = kernel.density_samples(n_grid)
    if dens is not None:
        w = trapezoid_weights(tau, n_grid)
        for g in range(n_grid + 1):
            reads.append((g, float(w[g] * dens[g, 0, 0])))
    return reads


def dense_resolvent_solve(
    model: LinearDelayModel,
    psi: CompoundGridFunction,
    p: complex,
    antisymmetric: bool = True,
    return_details: bool = False,
    scheme: str = "box",
):
    """Solve (A_h^[x m] - pI) Phi = psi on the shared-node upwind grid.

    The sparse system couples each face's interior nodes to the lower-face
    unknowns through the theta = 0 trace rows and to the face one level up
    through the stationary kernel; scalar problems only (n = 1), m <= 2.

    scheme = "upwind" collocates the lower-order terms at the cell's lower
    node (the generator stencil, first order); the default "box" averages
    them over the upwind diagonal cell (second order, same sparsity and
    stability orientation).
    """
    m, n_grid, tau = psi.m, psi.n_grid, psi.tau
    if psi.n != 1:
        raise NotImplementedError("dense resolvent solve supports n = 1")
    if m > 2:
        raise NotImplementedError("dense resolvent solve supports m <= 2")
    if scheme not in ("box", "upwind"):
        raise ValueError("scheme must be 'box' or 'upwind'")
    if antisymmetric and m > 1:
        psi = antisymmetrize(psi)
    index = _DenseIndex(m, n_grid)
    h = tau / n_grid
    alpha_reads = _kernel_reads(model.alpha, n_grid, tau)

    rows: List[int] = []
    cols: List[int] = []
    vals: List[complex] = []
    rhs = np.zeros(index.size, dtype=complex)

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for face in all_faces(m):
        k = len(face)
        arr = psi.faces[face]
        for arr_idx in np.ndindex(*((n_grid - 1,) * k)):
            r = index.column(face, arr_idx)
            g = tuple(a + 1 for a in arr_idx)
            if k > 0:
                g_up = tuple(gv + 1 for gv in g)
                for c, wgt in index.resolve(face, g_up):
                    put(r, c, wgt / h)
                put(r, r, -1.0 / h)
                if scheme == "box":
                    # average the zeroth-order terms over the diagonal cell
                    stencil = [(g, 0.5), (g_up, 0.5)]
                    rhs[r] = 0.5 * (arr[arr_idx + (0,)] + arr[tuple(a + 1 for a in arr_idx) + (0,)])
                    put(r, r, -0.5 * p)
                    for c, wgt in index.resolve(face, g_up):
                        put(r, c, -0.5 * p * wgt)
                else:
                    stencil = [(g, 1.0)]
                    rhs[r] = arr[arr_idx + (0,)]
                    put(r, r, -p)
            else:
                stencil = [(g, 1.0)]
                rhs[r] = arr[0]
                put(r, r, -p)
            for j in range(1, m + 1):
                if j in face:
                    continue
                upper = tuple(sorted(face + (j,)))
                axis = upper.index(j)
                for g_base, cell_w in stencil:
                    for g_read, wgt in alpha_reads:
                        g_full = g_base[:axis] + (g_read,) + g_base[axis:]
                        for c, w2 in index.resolve(upper, g_full):
                            put(r, c, cell_w * wgt * w2)

    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(index.size, index.size), dtype=complex)
    try:
        sol = spla.spsolve(matrix, rhs)
    except Exception as exc:  # pragma: no cover - solver backend specific
        raise ConditioningError(f"sparse solve failed near p = {p}: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise ConditioningError(f"sparse solve produced non-finite values near p = {p}")
    residual = float(np.linalg.norm(matrix @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if residual > 1e-8:
        raise ConditioningError(f"ill-conditioned system at p = {p}: residual {residual:.2e}")

    faces_out: Dict[Tuple[int, ...], np.ndarray] = {}
    for face in all_faces(m):
        k = len(face)
        out = np.zeros((n_grid,) * k + (1,), dtype=complex)
        for arr_idx in np.ndindex(*((n_grid - 1,) * k)):
            out[arr_idx + (0,)] = sol[index.column(face, arr_idx)]
        faces_out[face] = out
    for face in all_faces(m):
        k = len(face)
        for l, j in enumerate(face):
            idx = [slice(None)] * (k + 1)
            idx[l] = n_grid - 1
            faces_out[face][tuple(idx)] = faces_out[tuple(x for x in face if x != j)]
    phi = CompoundGridFunction(m, 1, tau, n_grid, faces_out)
    if antisymmetric and m > 1:
        report = check_antisymmetry(phi, flag_tol=1e-7)
        if report.max_violation > 1e-6 * max(1.0, float(max(np.max(np.abs(a)) for a in phi.faces.values()))):
            warnings.warn(f"dense resolvent output drifted from antisymmetry by {report.max_violation:.2e}")
    if return_details:
        return phi, {"matrix": matrix, "rhs": rhs, "solution": sol, "residual": residual}
    return phi


def dense_generator_matrix(model: LinearDelayModel, n_grid: int, m: int) -> sp.csr_matrix:
    """Upwind discretization matrix of the m-fold compound generator over
    the shared-node unknowns (used for spectral cross-validation)."""
    from .exterior import CompoundGridFunction as _CGF

    zero = _CGF(m, 1, model.tau, n_grid)
    _, details = dense_resolvent_solve(model, zero, 0.0, antisymmetric=False, return_details=True, scheme="upwind")
    return details["matrix"]


# -- finite transfer sections --------------------------------------------------


@dataclass
class TransferMatrix:
    matrix: np.ndarray
    p: complex
    horizon: float
    remainder: float

    @property
    def largest_singular_value(self) -> float:
        from .sweep import max_singular_value

        return max_singular_value(self.matrix)


class TransferAssembly:
    """Shared trajectory/series cache for transfer sections at many p.

    All p-independent work (factor trajectories, measurement series,
    basis projections) happens once; each evaluation is then a single
    weighted sum over the time quadrature.
    """

    def __init__(
        self,
        model: LinearDelayModel,
        control: ControlBasis,
        measurement: MeasurementBasis,
        horizon: float,
        n_grid: int,
        dt: Optional[float] = None,
        spectral_bound: Optional[float] = None,
    ):
        self.model = model
        self.control = control
        self.measurement = measurement
        self.horizon = float(horizon)
        self.n_grid = n_grid
        self.m = control.m
        self.spectral_bound = spectral_bound
        tau = model.tau
        h = tau / n_grid
        self.dt = h if dt is None else dt
        stride = int(round(h / self.dt))
        n_steps = int(round(self.horizon / self.dt))
        self.n_quad = n_steps // stride + 1
        self.t_k = (stride * self.dt) * np.arange(self.n_quad)
        self.wq = _quad_weights(self.n_quad, stride * self.dt)

        if self.m == 1:
            coeff, (psi,) = control_factors(model, control, 0)
            series = []
            for i in range(control.size):
                _, (psi_i,) = control_factors(model, control, i)
                traj = solve_linear(model, psi_i, self.horizon + self.dt, self.dt, with_gain=False)
                bodies, heads, leads = _window_matrix(traj, n_grid, self.n_quad, stride)
                if model.n == 1:
                    s = _stieltjes_series(model.c_kernel, bodies, heads, leads, tau)[None, :]
                else:
                    s = np.stack(
                        [
                            _nd_stieltjes_series(model.c_kernel, bodies, heads, leads, tau, out_row)
                            for out_row in range(model.r2)
                        ]
                    )
                series.append(s)
            # S[j, i, k]
            self.series = np.stack([s for s in series], axis=1)
            self.norm_sq = None
        else:
            b = float(model.b_tilde[0, 0])
            psi_inf = HistoryElement(np.array([b]), np.zeros((n_grid, 1)), tau)
            traj_inf = solve_linear(model, psi_inf, self.horizon + self.dt, self.dt, with_gain=False)
            vb, vh, vl = _window_matrix(traj_inf, n_grid, self.n_quad, stride)
            s_v = _stieltjes_series(model.c_kernel, vb, vh, vl, tau)
            proj_v = self._project(vb, measurement)
            s_mat = np.zeros((measurement.size, control.size, self.n_quad))
            self._col_norm_sq = np.zeros((control.size, self.n_quad))
            nv = _window_sq_norms(vb, vh, tau)
            for i in range(control.size):
                e_i = control.functions[:, i]
                psi_i = HistoryElement(np.zeros(1), e_i[:, None], tau)
                traj_i = solve_linear(model, psi_i, self.horizon + self.dt, self.dt, with_gain=False)
                ub, uh, ul = _window_matrix(traj_i, n_grid, self.n_quad, stride)
                s_u = _stieltjes_series(model.c_kernel, ub, uh, ul, tau)
                proj_u = self._project(ub, measurement)
                # slot-1 measurement of u ^ v: (1/2)[c(u) v(theta) - c(v) u(theta)]
                s_mat[:, i, :] = proj_v.T * s_u[None, :] - proj_u.T * s_v[None, :]
                nu = _window_sq_norms(ub, uh, tau)
                cross = _window_cross(ub, uh, vb, vh, tau)
                self._col_norm_sq[i] = np.maximum(nu * nv - cross**2, 0.0)
            self.series = s_mat
            self.norm_sq = self._col_norm_sq

    def _project(self, bodies: np.ndarray, basis: MeasurementBasis) -> np.ndarray:
        w = trapezoid_weights(self.model.tau, self.n_grid)
        ext_basis = extend_left(basis.functions, axis=0)
        return extend_left(bodies, axis=1) @ (w[:, None] * ext_basis)

    def matrix(self, p: complex) -> TransferMatrix:
        if self.spectral_bound is not None and p.real <= self.spectral_bound:
            raise LaplaceRouteError(
                f"Re p = {p.real} not above growth bound {self.spectral_bound}: Laplace route invalid, use the dense oracle"
            )
        wqe = self.wq * np.exp(-p * self.t_k)
        mat = -np.tensordot(self.series, wqe, axes=(2, 0))
        remainder = self._remainder(p)
        return TransferMatrix(mat, p, self.horizon, remainder)

    def _remainder(self, p: complex) -> float:
        if self.spectral_bound is None:
            return float("nan")
        kappa = (p.real - self.spectral_bound) / 2.0
        if self.norm_sq is None:
            return 0.0
        decay = np.abs(np.exp(-p * self.t_k))[None, :] * np.sqrt(0.5 * self.norm_sq)
        tail = decay[:, int(0.7 * self.n_quad) :]
        t_tail = self.t_k[int(0.7 * self.n_quad) :]
        worst = 0.0
        for row in tail:
            pos = row > 0
            if np.any(pos):
                m_fit = float(np.exp(np.median(np.log(row[pos]) + kappa * t_tail[pos])))
                worst = max(worst, m_fit)
        scale = total_variation(self.model.c_kernel) * np.sqrt(2.0)
        return float(scale * worst * np.exp(-kappa * self.horizon) / max(kappa, 1e-12))


def _nd_stieltjes_series(kernel, bodies, heads, leads, tau, out_row):
    n_grid = bodies.shape[1]
    out = np.zeros(bodies.shape[0])
    for theta, mat in kernel.atoms:
        g = snap_atom_index(theta, tau, n_grid)
        if g == n_grid:
            read = heads
        elif g == 0:
            read = leads
        else:
            read = bodies[:, g - 1]
        out = out + read @ mat[out_row]
    dens = kernel.density_samples(n_grid)
    if dens is not None:
        w = trapezoid_weights(tau, n_grid)
        ext = np.concatenate([leads[:, None, :], bodies], axis=1)
        out = out + np.einsum("i,kia,ia->k", w, ext, dens[:, out_row, :])
    return out


def transfer_matrix(
    model: LinearDelayModel,
    p: complex,
    control: ControlBasis,
    measurement: MeasurementBasis,
    horizon: float,
    n_grid: Optional[int] = None,
    dt: Optional[float] = None,
    spectral_bound: Optional[float] = None,
    assembly: Optional[TransferAssembly] = None,
) -> TransferMatrix:
    """Finite section P2_N W(p) P1_N in the orthonormal bases.

    Column i is the measurement projection of the Laplace resolvent applied
    to -B^ (basis element i); the sign follows the frequency-inequality
    convention F(-(A - p)^{-1} B eta, eta).
    """
    if assembly is None:
        assembly = TransferAssembly(
            model, control, measurement, horizon, n_grid or control.n_grid, dt, spectral_bound
        )
    return assembly.matrix(p)


def transfer_matrix_reference(
    model: LinearDelayModel,
    p: complex,
    control: ControlBasis,
    measurement: MeasurementBasis,
    horizon: float,
    dt: Optional[float] = None,
    spectral_bound: Optional[float] = None,
) -> np.ndarray:
    """Slow cross-check path: full grid resolvent per column, then the
    measurement projection; agrees with the fused path to round-off."""
    cols = []
    for i in range(control.size):
        coeff, factors = control_factors(model, control, i)
        ws = WedgeSum([(-coeff, factors)])
        res = resolvent_laplace(model, ws, p, horizon, dt, spectral_bound)
        cols.append(measurement_project(res.value, model, measurement))
    return np.stack(cols, axis=1)
