"""Integration of the linear(ized) delay equation and its spectra.

The stationary semigroup G(t) solves x'(t) = integral d alpha(theta) x(t+theta);
the perturbed cocycle adds B * gain(t) * integral d c(theta) x(t+theta).
Fixed-step RK4 with cubic Hermite interpolation of the stored path; the
step must divide the body grid spacing so delay atoms land on path nodes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .hilbert import (
    HistoryElement,
    StieltjesKernel,
    body_nodes,
    extend_left,
    snap_atom_index,
    stieltjes_apply,
    trapezoid_weights,
)

__all__ = [
    "LinearDelayModel",
    "Trajectory",
    "solve_linear",
    "semigroup_apply",
    "cocycle_apply",
    "characteristic_matrix",
    "characteristic_roots",
    "shift_feedback",
]


@dataclass(frozen=True)
class LinearDelayModel:
    """x'(t) = alpha * x_t + b_tilde * gain(t) * c_kernel * x_t.

    alpha is the stationary Stieltjes kernel (n x n), c_kernel the
    measurement kernel (r2 x n), b_tilde the input matrix (n x r1) and
    gain an optional time-indexed (r1 x r2) matrix bounded by lambda_gain.
    """

    n: int
    tau: float
    alpha: StieltjesKernel
    b_tilde: np.ndarray
    c_kernel: StieltjesKernel
    lambda_gain: float = 0.0
    gain: Optional[Callable[[float], np.ndarray]] = field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.b_tilde, dtype=float))
        if b.shape[0] != self.n:
            b = b.reshape(self.n, -1)
        object.__setattr__(self, "b_tilde", b)
        if self.alpha.out_dim != self.n or self.alpha.in_dim != self.n:
            raise ValueError("alpha kernel must be n x n")
        if self.c_kernel.in_dim != self.n:
            raise ValueError("c kernel must have in_dim n")
        if self.lambda_gain < 0:
            raise ValueError("lambda_gain must be nonnegative")

    @property
    def r1(self) -> int:
        return self.b_tilde.shape[1]

    @property
    def r2(self) -> int:
        return self.c_kernel.out_dim


@dataclass
class Trajectory:
    """Solution path on [-tau, t_end] at step dt, with one-sided node
    derivatives for cubic Hermite interpolation (the initial instant may
    carry a derivative kink when the history does not match the equation).
    Windows are history segments x_t."""

    dt: float
    tau: float
    n_grid: int
    ys: np.ndarray  # (M, n) values at times -tau + j*dt
    ms_plus: np.ndarray  # (M, n) right-sided derivatives
    ms_minus: np.ndarray  # (M, n) left-sided derivatives
    initial: HistoryElement

    @property
    def t_end(self) -> float:
        return -self.tau + self.dt * (self.ys.shape[0] - 1)

    def _locate(self, t: float) -> int:
        j = int(np.floor((t + self.tau) / self.dt + 1e-9))
        return min(max(j, 0), self.ys.shape[0] - 2)

    def x(self, t: float) -> np.ndarray:
        """Path value at time t in [-tau, t_end] (cubic Hermite off nodes)."""
        j_exact = (t + self.tau) / self.dt
        j_round = int(round(j_exact))
        if abs(j_exact - j_round) < 1e-9 and 0 <= j_round < self.ys.shape[0]:
            return self.ys[j_round]
        j = self._locate(t)
        s = (t - (-self.tau + j * self.dt)) / self.dt
        y0, y1 = self.ys[j], self.ys[j + 1]
        m0, m1 = self.ms_plus[j] * self.dt, self.ms_minus[j + 1] * self.dt
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1

    def window(self, t: float) -> HistoryElement:
        """History segment x_t as an H element (head = x(t))."""
        if t < -1e-12:
            raise ValueError("window time must be nonnegative")
        if abs(t) < 1e-12:
            return self.initial
        nodes = body_nodes(self.tau, self.n_grid) + t
        body = np.array([self.x(s) for s in nodes])
        return HistoryElement(self.x(t), body, self.tau)

    def snapshots(self, times) -> List[HistoryElement]:
        return [self.window(t) for t in times]


def _delayed_terms(kernel: StieltjesKernel, tau: float, n_grid: int):
    """Split a kernel into the instantaneous matrix (mass at theta = 0) and
    a list of (lag, matrix) delayed reads on the aligned grid."""
    h = tau / n_grid
    inst = np.zeros((kernel.out_dim, kernel.in_dim))
    delayed: List[Tuple[float, np.ndarray]] = []
    for theta, mat in kernel.atoms:
        idx = snap_atom_index(theta, tau, n_grid)
        if idx == n_grid:
            inst = inst + mat
        else:
            delayed.append((tau - idx * h, mat))
    dens = kernel.density_samples(n_grid)
    if dens is not None:
        w = trapezoid_weights(tau, n_grid)
        inst = inst + w[-1] * dens[-1]
        for g in range(n_grid):
            delayed.append((tau - g * h, w[g] * dens[g]))
    return inst, delayed


def solve_linear(
    model: LinearDelayModel,
    phi0: HistoryElement,
    t_end: float,
    dt: float,
    with_gain: bool = False,
) -> Trajectory:
    """RK4 integration of the delay equation from history phi0.

    dt must divide the body grid spacing h = tau / N_g so that the delay
    atoms land on stored path nodes; off-node history values (RK stages)
    use cubic Hermite interpolation.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if with_gain and model.gain is None:
        raise ValueError("with_gain set but the model carries no gain")
    tau, n_grid = phi0.tau, phi0.n_grid
    h = tau / n_grid
    ratio = h / dt
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"dt = {dt} must divide the grid spacing h = {h}")

    a_inst, a_delayed = _delayed_terms(model.alpha, tau, n_grid)
    c_inst, c_delayed = _delayed_terms(model.c_kernel, tau, n_grid)
    gain = model.gain if with_gain else None
    b = model.b_tilde

    n_hist = int(round(tau / dt))
    n_steps = int(np.ceil(t_end / dt - 1e-9))
    m_total = n_hist + n_steps + 1
    ys = np.zeros((m_total, phi0.n))
    ms_plus = np.zeros((m_total, phi0.n))
    ms_minus = np.zeros((m_total, phi0.n))

    # initial segment at dt resolution (path value at t=0 is the head)
    ext_nodes = np.concatenate([[-tau], body_nodes(tau, n_grid)])
    ext_vals = extend_left(phi0.body)
    if abs(dt - h) < 1e-12:
        ys[: n_hist + 1] = ext_vals
    else:
        from scipy.interpolate import CubicSpline

        spline = CubicSpline(ext_nodes, ext_vals, axis=0)
        ys[: n_hist + 1] = spline(-tau + dt * np.arange(n_hist + 1))
    ys[n_hist] = phi0.head
    # history-segment derivatives by centered differences; both one-sided
    # slopes agree inside the history
    ms_plus[1:n_hist] = (ys[2 : n_hist + 1] - ys[: n_hist - 1]) / (2 * dt)
    ms_plus[0] = (ys[1] - ys[0]) / dt
    ms_minus[: n_hist + 1] = ms_plus[: n_hist + 1]
    ms_minus[n_hist] = (ys[n_hist] - ys[n_hist - 1]) / dt

    traj = Trajectory(dt, tau, n_grid, ys, ms_plus, ms_minus, phi0)

    def delayed_sum(terms, t):
        acc = np.zeros(phi0.n)
        for lag, mat in terms:
            acc += mat @ traj.x(t - lag)
        return acc

    def rhs(t, y):
        d_alpha = a_inst @ y + delayed_sum(a_delayed, t)
        if gain is None:
            return d_alpha
        meas = c_inst @ y + delayed_sum(c_delayed, t)
        return d_alpha + b @ (np.atleast_2d(gain(t)) @ meas)

    # the right-sided slope at t = 0 comes from the equation (it may differ
    # from the history slope when phi0 is not in the generator domain)
    ms_plus[n_hist] = rhs(0.0, ys[n_hist])
    for k in range(n_steps):
        t = k * dt
        y = ys[n_hist + k]
        k1 = ms_plus[n_hist + k]
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y_next = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[n_hist + k + 1] = y_next
        m_next = rhs(t + dt, y_next)
        ms_plus[n_hist + k + 1] = m_next
        ms_minus[n_hist + k + 1] = m_next
    return traj


def semigroup_apply(model: LinearDelayModel, phi0: HistoryElement, t: float, dt: Optional[float] = None) -> HistoryElement:
    """G(t) phi0 for the stationary part (gain off); G(0) = identity."""
    if t < 0:
        raise ValueError("semigroup time must be nonnegative")
    if t == 0:
        return phi0
    dt = phi0.h if dt is None else dt
    return solve_linear(model, phi0, t, dt, with_gain=False).window(t)


def cocycle_apply(model: LinearDelayModel, phi0: HistoryElement, t: float, dt: Optional[float] = None) -> HistoryElement:
    """Cocycle map with the time-varying gain active."""
    if t < 0:
        raise ValueError("cocycle time must be nonnegative")
    if t == 0:
        return phi0
    dt = phi0.h if dt is None else dt
    return solve_linear(model, phi0, t, dt, with_gain=True).window(t)


def shift_feedback(model: LinearDelayModel, d_matrix: np.ndarray, new_lambda: Optional[float] = None) -> LinearDelayModel:
    """Fold a constant feedback D into the stationary kernel.

    alpha' = alpha + b_tilde D c, gain'(t) = gain(t) - D; the solution map
    is unchanged because the right-hand sides are algebraically equal.
    """
    d_matrix = np.atleast_2d(np.asarray(d_matrix, dtype=float))
    bd = model.b_tilde @ d_matrix
    alpha_new = model.alpha + model.c_kernel.scaled(bd)
    old_gain = model.gain
    if old_gain is None:
        gain_new = lambda t: -d_matrix
    else:
        gain_new = lambda t: np.atleast_2d(old_gain(t)) - d_matrix
    lam = model.lambda_gain if new_lambda is None else new_lambda
    return LinearDelayModel(model.n, model.tau, alpha_new, model.b_tilde, model.c_kernel, lam, gain_new, model.name)


# -- characteristic function ------------------------------------------------

_DENSITY_QUAD = 1024


def characteristic_matrix(model: LinearDelayModel, lam: complex) -> np.ndarray:
    """Delta(lam) = lam I - sum_atoms M e^{lam theta} - int density e^{lam theta}."""
    delta = lam * np.eye(model.n, dtype=complex)
    for theta, mat in model.alpha.atoms:
        delta -= mat * np.exp(lam * theta)
    if model.alpha.density is not None:
        ts = np.linspace(-model.tau, 0.0, _DENSITY_QUAD + 1)
        vals = np.array([np.atleast_2d(model.alpha.density(t)) * np.exp(lam * t) for t in ts])
        delta -= np.trapezoid(vals, ts, axis=0)
    return delta


def _characteristic_derivative(model: LinearDelayModel, lam: complex) -> np.ndarray:
    delta = np.eye(model.n, dtype=complex)
    for theta, mat in model.alpha.atoms:
        delta -= mat * theta * np.exp(lam * theta)
    if model.alpha.density is not None:
        ts = np.linspace(-model.tau, 0.0, _DENSITY_QUAD + 1)
        vals = np.array([np.atleast_2d(model.alpha.density(t)) * t * np.exp(lam * t) for t in ts])
        delta -= np.trapezoid(vals, ts, axis=0)
    return delta


def _det_and_newton_step(model: LinearDelayModel, lam: complex) -> Tuple[complex, complex]:
    """det Delta and the Newton increment det/det' (Jacobi's formula for n>1)."""
    delta = characteristic_matrix(model, lam)
    det = complex(np.linalg.det(delta))
    dprime = _characteristic_derivative(model, lam)
    if model.n == 1:
        dlog = dprime[0, 0] / delta[0, 0] if delta[0, 0] != 0 else np.inf
    else:
        try:
            dlog = complex(np.trace(np.linalg.solve(delta, dprime)))
        except np.linalg.LinAlgError:
            dlog = np.inf
    step = 0.0 if dlog == 0 else 1.0 / dlog
    return det, step


def _char_scale(model: LinearDelayModel, lam: complex) -> float:
    """Magnitude scale of det Delta near lam, for relative tolerances."""
    from .hilbert import total_variation

    per_entry = abs(lam) + total_variation(model.alpha) * np.exp(max(0.0, -lam.real) * model.tau)
    return max(1.0, per_entry) ** model.n


class RegionError(RuntimeError):
    pass


def _winding_number(model: LinearDelayModel, rect: Tuple[float, float, float, float], max_refine: int = 20) -> int:
    """Argument-principle count of characteristic roots inside a rectangle.

    The boundary sampling is refined until consecutive values satisfy
    |v1 - v0| < 0.7 min(|v0|, |v1|); inside that disk the principal-value
    angle increment equals the true one, so no phase wrap can alias away.
    Raises RegionError if the boundary passes too close to a root.
    """
    re0, re1, im0, im1 = rect
    corners = [re0 + 1j * im0, re1 + 1j * im0, re1 + 1j * im1, re0 + 1j * im1, re0 + 1j * im0]
    # seed the sampling finer than the fastest e^{lam theta} oscillation so
    # the ratio refinement cannot lock onto a full phase turn
    rate = max(model.n * model.tau, 1e-6)
    pts: List[complex] = []
    for a, b in zip(corners[:-1], corners[1:]):
        n_seg = max(8, int(np.ceil(abs(b - a) * rate / 0.5)))
        seg = [a + (b - a) * k / n_seg for k in range(n_seg)]
        pts.extend(seg)
    pts.append(corners[0])

    def detval(z):
        return complex(np.linalg.det(characteristic_matrix(model, z)))

    vals = [detval(z) for z in pts]
    for _ in range(max_refine):
        new_pts: List[complex] = []
        new_vals: List[complex] = []
        refined = False
        for (z0, z1), (v0, v1) in zip(zip(pts[:-1], pts[1:]), zip(vals[:-1], vals[1:])):
            new_pts.append(z0)
            new_vals.append(v0)
            if abs(v0) < 1e-13 * _char_scale(model, z0):
                raise RegionError(f"boundary point {z0} lies on (or too close to) a root")
            if abs(v1 - v0) > 0.7 * min(abs(v0), abs(v1)):
                zm = (z0 + z1) / 2
                new_pts.append(zm)
                new_vals.append(detval(zm))
                refined = True
        new_pts.append(pts[-1])
        new_vals.append(vals[-1])
        pts, vals = new_pts, new_vals
        if not refined:
            break
    else:
        raise RegionError("boundary phase did not settle; a root is too close to the rectangle edge")
    total = sum(np.angle(v1 / v0) for v0, v1 in zip(vals[:-1], vals[1:]))
    winding = total / (2 * np.pi)
    if abs(winding - round(winding)) > 0.25:
        raise RegionError(f"non-integer winding number {winding:.3f}")
    return int(round(winding))


def _newton_polish(model: LinearDelayModel, z0: complex, det_tol_scale: float = 1e-12, max_iter: int = 60) -> Optional[complex]:
    z = z0
    for _ in range(max_iter):
        det, step = _det_and_newton_step(model, z)
        if not np.isfinite(step):
            return None
        if abs(det) < det_tol_scale * _char_scale(model, z) and abs(step) < 1e-12 * max(1.0, abs(z)):
            return z
        z = z - step
        if not np.isfinite(z):
            return None
    det, step = _det_and_newton_step(model, z)
    if abs(det) < 1e-10 * _char_scale(model, z):
        return z
    return None


def characteristic_roots(
    model: LinearDelayModel,
    region: Tuple[float, float, float, float],
    max_roots: int = 64,
) -> List[Tuple[complex, int]]:
    """All characteristic roots in a complex rectangle (re0, re1, im0, im1).

    Winding-number isolation by recursive bisection, then Newton refinement
    on det Delta; returns (root, multiplicity) pairs whose total count
    matches the winding number of the full rectangle.
    """
    re0, re1, im0, im1 = region
    if re0 >= re1 or im0 >= im1:
        raise ValueError("degenerate region")

    def try_winding(rect):
        for attempt in range(6):
            try:
                return _winding_number(model, rect), rect
            except RegionError:
                g = 1e-3 * (attempt + 1) * max(rect[1] - rect[0], rect[3] - rect[2])
                rect = (rect[0] - g, rect[1] + g * 1.17, rect[2] - g * 0.93, rect[3] + g)
        raise RegionError(f"could not find a root-free boundary near {rect}")

    total, _ = try_winding(region)
    if total > max_roots:
        raise RegionError(f"{total} roots in region exceeds max_roots = {max_roots}")

    found: List[Tuple[complex, int]] = []

    def recurse(rect, count):
        if count == 0:
            return
        w = max(rect[1] - rect[0], rect[3] - rect[2])
        if w < 1e-4:
            center = complex((rect[0] + rect[1]) / 2, (rect[2] + rect[3]) / 2)
            root = _newton_polish(model, center)
            if root is None:
                raise RegionError(f"Newton failed to converge from {center}")
            found.append((root, count))
            return
        if rect[1] - rect[0] >= rect[3] - rect[2]:
            mid = (rect[0] + rect[1]) / 2
            halves = [(rect[0], mid, rect[2], rect[3]), (mid, rect[1], rect[2], rect[3])]
        else:
            mid = (rect[2] + rect[3]) / 2
            halves = [(rect[0], rect[1], rect[2], mid), (rect[0], rect[1], mid, rect[3])]
        csum = 0
        for half in halves:
            c, actual = try_winding(half)
            csum += c
            recurse(actual, c)
        if csum != count:
            # overlap from perturbed rectangles; dedupe below catches repeats
            pass

    recurse(region, total)

    # dedupe roots found twice through overlapping perturbed rectangles
    unique: List[Tuple[complex, int]] = []
    for root, mult in sorted(found, key=lambda r: (r[0].real, r[0].imag)):
        for i, (r2, m2) in enumerate(unique):
            if abs(root - r2) < 1e-7 * max(1.0, abs(root)):
                unique[i] = (r2, max(m2, mult))
                break
        else:
            unique.append((root, mult))

    for root, _ in unique:
        det = complex(np.linalg.det(characteristic_matrix(model, root)))
        if abs(det) > 1e-10 * _char_scale(model, root):
            raise RegionError(f"root {root} fails residual check: |det| = {abs(det):.3e}")
    n_found = sum(m for _, m in unique)
    if n_found != total:
        warnings.warn(f"found {n_found} roots but rectangle winding is {total}")
    return unique
