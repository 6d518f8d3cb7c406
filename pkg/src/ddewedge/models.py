"""Model presets: Mackey-Glass and Suarez-Schopf delayed oscillator.

Localization sets and gain bounds are computed numerically (grid scan plus
local polish) rather than imported from elsewhere; everything in the
returned report can be overridden from the run configuration.
"""

from __future__ import annotations

from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .hilbert import StieltjesKernel
from .semigroup import LinearDelayModel, shift_feedback

__all__ = ["build_mackey_glass", "build_suarez_schopf", "preset_names", "build_preset"]


def _maximize(f: Callable[[float], float], lo: float, hi: float, n_scan: int = 512) -> Tuple[float, float]:
    """max of f on [lo, hi]: coarse grid scan, then bounded local polish."""
    xs = np.linspace(lo, hi, n_scan)
    vals = np.array([f(x) for x in xs])
    k = int(np.argmax(vals))
    a = xs[max(k - 1, 0)]
    b = xs[min(k + 1, n_scan - 1)]
    if a == b:
        return xs[k], vals[k]
    res = minimize_scalar(lambda x: -f(x), bounds=(a, b), method="bounded", options={"xatol": 1e-14})
    x_best = float(res.x)
    v_best = f(x_best)
    if v_best < vals[k]:
        return float(xs[k]), float(vals[k])
    return x_best, float(v_best)


def _atom_kernel(entries, tau, out_dim=1, in_dim=1) -> StieltjesKernel:
    atoms = tuple((theta, np.atleast_2d(np.asarray(m, dtype=float))) for theta, m in entries)
    return StieltjesKernel(atoms, out_dim, in_dim, tau)


def build_mackey_glass(gamma: float, beta: float, kappa: float, tau: float) -> Tuple[LinearDelayModel, Dict]:
    """x'(t) = -gamma x(t) + beta x(t-tau) / (1 + |x(t-tau)|^kappa).

    Stationary part is the pure decay -gamma x(t); the nonlinearity enters
    through the delayed measurement c = delta at -tau.  The absorbing bound
    X_max = (beta/gamma) max_y y/(1+y^kappa) and the gain bound
    Lambda = max |F'| on [-X_max, X_max] are computed numerically.
    """
    if min(gamma, beta, tau) <= 0 or kappa <= 1:
        raise ValueError("need gamma, beta, tau > 0 and kappa > 1")

    def f_nl(y):
        return beta * y / (1.0 + abs(y) ** kappa)

    def f_prime(y):
        u = abs(y) ** kappa
        return beta * (1.0 + (1.0 - kappa) * u) / (1.0 + u) ** 2

    y_peak, g_peak = _maximize(lambda y: y / (1.0 + y**kappa), 0.0, 10.0)
    x_max = (beta / gamma) * g_peak
    _, lam = _maximize(lambda y: abs(f_prime(y)), 0.0, x_max)
    lam = max(lam, abs(f_prime(0.0)), abs(f_prime(x_max)))

    trivially_stable = beta <= gamma
    if trivially_stable:
        x_star = 0.0
    else:
        # gamma x = F(x) with x > 0, i.e. 1 + x^kappa = beta/gamma
        x_star = float(brentq(lambda x: gamma * x - f_nl(x), 1e-12, max(10.0, 2 * x_max)))

    alpha = _atom_kernel([(0.0, [[-gamma]])], tau)
    c_kernel = _atom_kernel([(-tau, [[1.0]])], tau)
    fp_eq = f_prime(x_star)
    model = LinearDelayModel(
        n=1,
        tau=tau,
        alpha=alpha,
        b_tilde=np.array([[1.0]]),
        c_kernel=c_kernel,
        lambda_gain=float(lam),
        gain=lambda t: np.array([[fp_eq]]),
        name="mackey-glass",
    )
    report = {
        "preset": "mackey-glass",
        "gamma": gamma,
        "beta": beta,
        "kappa": kappa,
        "tau": tau,
        "x_star": x_star,
        "f_prime_at_equilibrium": fp_eq,
        "x_max": x_max,
        "nonlinearity_peak_location": y_peak,
        "lambda_gain": float(lam),
        "trivially_stable": trivially_stable,
    }
    if trivially_stable:
        report["note"] = "beta <= gamma: trivially stable zero equilibrium"
    return model, report


def build_suarez_schopf(alpha_par: float, tau: float, x_max: Optional[float] = None) -> Tuple[LinearDelayModel, Dict]:
    """x'(t) = x(t) - alpha x(t-tau) - x^3(t).

    The unshifted linear part has a positive real root, so the cubic sector
    F'(y) = -3 y^2 in [-3 X_max^2, 0] is centered by the constant feedback
    D = -3 X_max^2 / 2 folded into the stationary kernel; the returned model
    is the shifted one with Lambda = 3 X_max^2 / 2.
    """
    if not (0 < alpha_par < 1) or tau <= 0:
        raise ValueError("need alpha in (0,1) and tau > 0")
    if x_max is None:
        x_max = float(np.sqrt(1.0 + alpha_par))
    lam = 1.5 * x_max**2
    d_shift = -lam

    alpha_kernel = _atom_kernel([(0.0, [[1.0]]), (-tau, [[-alpha_par]])], tau)
    c_kernel = _atom_kernel([(0.0, [[1.0]])], tau)
    eq = float(np.sqrt(1.0 - alpha_par))
    fp_eq = -3.0 * eq**2
    raw = LinearDelayModel(
        n=1,
        tau=tau,
        alpha=alpha_kernel,
        b_tilde=np.array([[1.0]]),
        c_kernel=c_kernel,
        lambda_gain=3.0 * x_max**2,
        gain=lambda t: np.array([[fp_eq]]),
        name="suarez-schopf-raw",
    )
    model = shift_feedback(raw, np.array([[d_shift]]), new_lambda=lam)
    model = LinearDelayModel(
        model.n, model.tau, model.alpha, model.b_tilde, model.c_kernel, model.lambda_gain, model.gain, "suarez-schopf"
    )
    report = {
        "preset": "suarez-schopf",
        "alpha": alpha_par,
        "tau": tau,
        "equilibria": [eq, -eq],
        "x_max": x_max,
        "d_shift": d_shift,
        "lambda_gain": lam,
        "f_prime_at_equilibrium": fp_eq,
        "inside_paper_region": bool(2 * alpha_par * tau < 1),
    }
    return model, report


def mackey_glass_hopf_tau(gamma: float, beta: float, kappa: float, bracket: Tuple[float, float] = (3.0, 6.0)) -> Dict:
    """Delay at which the equilibrium linearization loses stability.

    The root-finder value tracks the leading characteristic root of
    lambda + gamma - F'(x*) e^{-lambda tau} by Newton continuation and
    bisects its real part; the closed-form phase condition
    tau = (pi - atan(w*/gamma))/w*, w* = sqrt(F'^2 - gamma^2) is returned
    alongside for comparison.
    """
    from scipy.optimize import brentq

    _, rep = build_mackey_glass(gamma, beta, kappa, 1.0)
    fp = rep["f_prime_at_equilibrium"]
    if abs(fp) <= gamma:
        raise ValueError("no crossing: |F'(x*)| <= gamma")
    w_star = float(np.sqrt(fp**2 - gamma**2))
    tau_closed = float((np.pi - np.arctan(w_star / gamma)) / w_star)

    def leading_real(tau: float) -> float:
        # Newton on the scalar characteristic function from the crossing seed
        lam = complex(0.0, w_star)
        for _ in range(80):
            f = lam + gamma - fp * np.exp(-lam * tau)
            df = 1.0 + fp * tau * np.exp(-lam * tau)
            step = f / df
            lam = lam - step
            if abs(step) < 1e-15 * max(1.0, abs(lam)):
                break
        return lam.real

    tau_numeric = float(brentq(leading_real, bracket[0], bracket[1], xtol=1e-12, rtol=1e-14))
    return {
        "tau_crossing": tau_numeric,
        "tau_closed_form": tau_closed,
        "omega_star": w_star,
        "difference": abs(tau_numeric - tau_closed),
    }


_PRESETS = {
    "mackey-glass": (build_mackey_glass, {"gamma": 0.1, "beta": 0.2, "kappa": 10.0, "tau": 1.0}),
    "suarez-schopf": (build_suarez_schopf, {"alpha_par": 0.75, "tau": 0.6}),
}

_PRESET_KEY_ALIASES = {"alpha": "alpha_par"}


def preset_names():
    return sorted(_PRESETS)


def build_preset(name: str, **overrides) -> Tuple[LinearDelayModel, Dict]:
    if name not in _PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    builder, defaults = _PRESETS[name]
    params = dict(defaults)
    for key, val in overrides.items():
        key = _PRESET_KEY_ALIASES.get(key, key)
        if key not in defaults and key != "x_max":
            raise KeyError(f"preset {name!r} has no parameter {key!r}")
        params[key] = val
    return builder(**params)
