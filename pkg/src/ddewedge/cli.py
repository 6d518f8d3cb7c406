"""Command-line orchestration: spectrum, verify, sweep, simulate,
structural-check, oracle, models.

Exit codes: 0 verified / all checks pass, 1 violated / any check fails,
2 configuration or numerical error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from . import __version__
from .config import ConfigError, load_config, model_from_config
from .hilbert import HistoryElement, embed_continuous
from .models import build_preset, preset_names, _PRESETS
from .semigroup import LinearDelayModel, characteristic_roots, solve_linear
from .spectrum import (
    SpectrumReport,
    compound_spectrum_sums,
    line_clearance,
    required_root_depth,
    spectral_bound,
    suggest_line,
)
from .sweep import SweepConfig, Verdict, default_omega_max, sweep as run_norm_sweep
from .transfer import ControlBasis, MeasurementBasis, TransferAssembly
from .report import write_csv, write_json
from . import figures

BENDIXSON_LINE = (
    "m = 2 verified: exponential stability of the second compound cocycle excludes "
    "closed invariant contours on the attractor (window-limited certificate)"
)


class PipelineError(RuntimeError):
    pass


def compute_spectrum(cfg: dict, model: LinearDelayModel) -> SpectrumReport:
    """Characteristic roots -> compound sums -> multiplicities -> line report."""
    m = cfg["m"]
    win = cfg["spectrum"]["window"]
    window = (float(win["re_min"]), float(win["re_max"]), -float(win["im_max"]), float(win["im_max"]))
    max_roots = int(cfg["spectrum"]["max_roots"])

    region = (window[0] - 0.25, window[1] + 0.25, window[2] - 0.5, window[3] + 0.5)
    roots = characteristic_roots(model, region, max_roots=max_roots)
    notes = []
    if roots and m > 1:
        depth = required_root_depth(roots, m, window[0])
        if depth < region[0]:
            region = (depth - 0.25, region[1], region[2], region[3])
            roots = characteristic_roots(model, region, max_roots=max_roots)
            notes.append(f"root search deepened to Re >= {region[0]:.3f} to cover all window sums")
        depth_final = required_root_depth(roots, m, window[0])
    else:
        depth_final = window[0]

    eigs = compound_spectrum_sums(roots, m, window)
    s, flag = spectral_bound(eigs)
    floor = float(cfg["spectrum"].get("floor", 0.0))
    nu0_cfg = cfg["sweep"]["nu0"]
    nu0 = suggest_line(eigs, floor) if nu0_cfg == "auto" else float(nu0_cfg)
    j = None
    dist = None
    if nu0 is not None:
        j, dist = line_clearance(eigs, nu0)
    report = SpectrumReport(
        base_roots=roots,
        m=m,
        window=window,
        eigenvalues=eigs,
        spectral_bound_value=s,
        growth_equals_spectral=flag,
        nu0=nu0,
        dichotomy_rank=j,
        line_distance=dist,
        required_depth=depth_final,
        notes=notes,
    )
    return report


def run_spectrum(cfg: dict, out: Path) -> int:
    model, preset_report = model_from_config(cfg)
    report = compute_spectrum(cfg, model)
    if preset_report.get("trivially_stable"):
        report.notes.append("beta <= gamma: trivially stable zero equilibrium")
    payload = {
        "command": "spectrum",
        "version": __version__,
        "preset": preset_report,
        "resolved": {"nu0": report.nu0, "m": report.m, "window": list(report.window)},
        "spectrum": report.to_dict(),
    }
    if cfg["output"]["json"]:
        write_json(out / "spectrum.json", payload)
    if cfg["output"]["csv"]:
        rows = [
            (e.value.real, e.value.imag, e.tensor_mult, e.antisym_mult)
            for e in report.eigenvalues
        ]
        write_csv(out / "spectrum_eigenvalues.csv", ["re", "im", "tensor_mult", "antisym_mult"], rows)
        write_csv(
            out / "spectrum_base_roots.csv",
            ["re", "im", "multiplicity"],
            [(r.real, r.imag, mult) for r, mult in report.base_roots],
        )
    if cfg["output"]["plots"]:
        figures.spectrum_figure(report, out / "spectrum_plane.png")
    return 0


def _resolve_sweep_config(cfg: dict, model: LinearDelayModel, spec_report: SpectrumReport) -> Tuple[SweepConfig, Dict]:
    sw = cfg["sweep"]
    if spec_report.nu0 is None:
        raise PipelineError(
            "no admissible dichotomy line: the compound spectrum reaches the floor; set sweep.nu0 explicitly"
        )
    nu0 = float(spec_report.nu0)
    s = spec_report.spectral_bound_value
    if -nu0 <= s:
        raise PipelineError(f"line Re = {-nu0} is not right of the compound spectral bound {s:.4f}")
    omega_max = sw["omega_max"]
    if omega_max == "auto":
        omega_max = default_omega_max(model.tau, s)
    lam = sw["lambda"]
    if lam == "auto-from-preset":
        lam = model.lambda_gain
    config = SweepConfig(
        nu0=nu0,
        omega_max=float(omega_max),
        delta_omega=float(sw["delta_omega"]),
        n_control=int(sw["n_control"]),
        n_measure=int(sw["n_measure"]),
        horizon=float(sw["horizon"]),
        lambda_gain=float(lam),
        safety_factor=float(sw["safety_factor"]),
        n_grid=int(cfg["discretization"]["n_grid"]),
        dt=cfg["discretization"]["dt"],
        jobs=int(cfg["jobs"]),
    )
    resolved = {
        "nu0": nu0,
        "omega_max": float(omega_max),
        "lambda": float(lam),
        "spectral_bound": s,
        "dichotomy_rank_j": spec_report.dichotomy_rank,
        "n_grid": config.n_grid,
        "horizon": config.horizon,
    }
    return config, resolved


def _nu0_candidates(cfg: dict, spec_report: SpectrumReport) -> list:
    """Candidate dichotomy lines: each j = 0 line right of the spectrum
    gives a sufficient criterion, so verification may pick the most
    favorable one; the largest verifying nu0 gives the strongest decay."""
    if cfg["sweep"]["nu0"] != "auto":
        return [float(cfg["sweep"]["nu0"])]
    s = spec_report.spectral_bound_value
    if not np.isfinite(s):
        # empty compound spectrum in the window (quasinilpotent wedge part)
        return [0.5, 0.25, 0.125]
    if s >= 0:
        raise PipelineError(f"compound spectral bound {s:.4f} >= 0: no stable line exists, set sweep.nu0 manually")
    return [-s * f for f in (0.5, 0.25, 0.125, 0.0625)]


def run_verify(cfg: dict, out: Path, command: str = "verify") -> int:
    model, preset_report = model_from_config(cfg)
    spec_report = compute_spectrum(cfg, model)
    sweep_cfg, resolved = _resolve_sweep_config(cfg, model, spec_report)
    if spec_report.dichotomy_rank not in (0, None):
        raise PipelineError(
            f"dichotomy rank j = {spec_report.dichotomy_rank} > 0: the Laplace sweep serves j = 0 lines only"
        )
    m = cfg["m"]
    control = ControlBasis.build(model, m, sweep_cfg.n_grid, sweep_cfg.n_control)
    measurement = MeasurementBasis.build(model, m, sweep_cfg.n_grid, sweep_cfg.n_measure)
    assembly = TransferAssembly(
        model, control, measurement, sweep_cfg.horizon, sweep_cfg.n_grid, sweep_cfg.dt,
        spec_report.spectral_bound_value,
    )
    candidates = _nu0_candidates(cfg, spec_report)
    report = None
    tried = []
    from dataclasses import replace as _replace

    for nu0 in candidates:
        cand_cfg = _replace(sweep_cfg, nu0=float(nu0))
        cand_report = run_norm_sweep(model, cand_cfg, spec_report.spectral_bound_value, m=m, assembly=assembly)
        tried.append({"nu0": float(nu0), "sup_alpha": cand_report.sup_alpha, "verdict": str(cand_report.verdict.value) if cand_report.verdict else None})
        report = cand_report
        if cand_report.verdict is Verdict.VERIFIED_WINDOW:
            break
    resolved["nu0"] = report.nu0
    resolved["nu0_candidates"] = tried
    spec_report.nu0 = report.nu0
    if spec_report.eigenvalues:
        from .spectrum import line_clearance as _lc

        spec_report.dichotomy_rank, spec_report.line_distance = _lc(spec_report.eigenvalues, report.nu0)
    payload = {
        "command": command,
        "version": __version__,
        "preset": preset_report,
        "resolved": resolved,
        "spectrum": spec_report.to_dict(),
        "sweep": report.to_dict(),
    }
    if report.verdict is Verdict.VERIFIED_WINDOW and cfg["m"] == 2:
        payload["interpretation"] = BENDIXSON_LINE
    if cfg["output"]["json"]:
        write_json(out / f"{command}.json", payload)
    if cfg["output"]["csv"]:
        thr = report.threshold if report.threshold is not None else np.inf
        rows = [
            (w, a, thr - a)
            for w, a in zip(report.omegas, report.alphas)
            if np.isfinite(a)
        ]
        write_csv(out / f"{command}_alpha.csv", ["omega", "alpha", "margin"], rows)
    if cfg["output"]["plots"]:
        figures.sweep_figure(report, out / f"{command}_alpha.png", report.threshold)
        figures.spectrum_figure(spec_report, out / f"{command}_spectrum.png")
    if command == "sweep" and cfg["sweep"]["lambda"] == "auto-from-preset" and model.lambda_gain == 0:
        return 0
    if report.verdict is Verdict.VERIFIED_WINDOW:
        return 0
    if report.verdict is Verdict.VIOLATED:
        return 1
    return 2


def _initial_history(cfg: dict, model: LinearDelayModel, preset_report: dict) -> HistoryElement:
    n_grid = int(cfg["discretization"]["n_grid"])
    mode = cfg["simulate"]["initial"]
    if mode == "equilibrium-offset":
        base = float(preset_report.get("x_star", preset_report.get("equilibria", [0.0])[0]))
        off = float(cfg["simulate"]["offset"])
        return embed_continuous(lambda t: base + off, model.tau, n_grid, model.n)
    return embed_continuous(lambda t: np.ones(model.n), model.tau, n_grid, model.n)


def run_simulate(cfg: dict, out: Path) -> int:
    model, preset_report = model_from_config(cfg)
    phi0 = _initial_history(cfg, model, preset_report)
    t_end = float(cfg["simulate"]["t_end"])
    dt = cfg["discretization"]["dt"] or phi0.h
    with_gain = bool(cfg["simulate"]["with_gain"]) and model.gain is not None
    traj = solve_linear(model, phi0, t_end, dt, with_gain=with_gain)
    times = -model.tau + dt * np.arange(traj.ys.shape[0])
    if cfg["output"]["csv"]:
        header = ["t"] + [f"x{i + 1}" for i in range(model.n)]
        write_csv(out / "trajectory.csv", header, [(t, *row) for t, row in zip(times, traj.ys)])
    if cfg["output"]["json"]:
        write_json(
            out / "simulate.json",
            {
                "command": "simulate",
                "version": __version__,
                "preset": preset_report,
                "resolved": {"dt": dt, "t_end": t_end, "with_gain": with_gain},
                "final_state": traj.ys[-1].tolist(),
            },
        )
    if cfg["output"]["plots"]:
        figures.trajectory_figure(times, traj.ys, out / "trajectory.png", title=model.name or "trajectory")
    return 0


def structural_battery(cfg: dict, model: LinearDelayModel):
    """Reconstruction residual across grid refinement, with fitted order."""
    from .structural import decompose_solution

    grids = [int(g) for g in cfg["structural"]["grids"]]
    t_final = float(cfg["structural"]["t_final"]) * model.tau
    nu = float(cfg["structural"]["nu"])
    m = cfg["m"]
    residuals = []
    for n_grid in grids:
        factors = [
            embed_continuous(lambda t: np.exp(t / model.tau), model.tau, n_grid, 1),
            embed_continuous(lambda t: np.cos(2.0 * t / model.tau) + 0.3 * t / model.tau, model.tau, n_grid, 1),
        ][: max(m, 1)]
        forcing = "closed-feedback" if model.gain is not None else None
        dec = decompose_solution(model, factors, forcing=forcing, nu=nu, t_final=t_final)
        residuals.append(dec.max_relative_residual)
    hs = np.array([model.tau / g for g in grids])
    res = np.array(residuals)
    order = float(np.polyfit(np.log(hs), np.log(np.maximum(res, 1e-300)), 1)[0])
    return grids, hs, res, order


def run_structural(cfg: dict, out: Path) -> int:
    model, preset_report = model_from_config(cfg)
    grids, hs, res, order = structural_battery(cfg, model)
    if cfg["output"]["csv"]:
        write_csv(
            out / "structural_residual.csv",
            ["n_grid", "h", "max_relative_residual"],
            [(g, h, r) for g, h, r in zip(grids, hs, res)],
        )
    if cfg["output"]["json"]:
        write_json(
            out / "structural.json",
            {
                "command": "structural-check",
                "version": __version__,
                "preset": preset_report,
                "grids": grids,
                "residuals": res.tolist(),
                "fitted_order": order,
            },
        )
    if cfg["output"]["plots"]:
        figures.structural_figure(grids, res, order, out / "structural_residual.png")
    return 0


def oracle_battery(cfg: dict) -> list:
    """Cross-route checks: Gram identity, Laplace vs dense resolvent,
    generator finite difference, structural-Cauchy refinement."""
    from .exterior import (
        wedge,
        compound_inner,
        compound_norm,
        compound_semigroup_apply,
        compound_generator_apply,
        TraceCompatibilityError,
    )
    from .hilbert import inner_product
    from .transfer import WedgeSum, dense_resolvent_solve, resolvent_laplace
    from .models import build_mackey_glass

    checks = []
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    n_grid = int(cfg["oracle"]["n_grid"])
    tau = 1.0

    def smooth(n_grid):
        a, b, c, d = rng.normal(size=4)
        return embed_continuous(
            lambda t: a + b * t + c * np.sin(2 * t) + d * np.exp(t), tau, n_grid, 1
        )

    # 1. Gram-determinant identity
    worst = 0.0
    for _ in range(20):
        f, g = smooth(256), smooth(256)
        w = wedge(f, g)
        gram = np.array([[inner_product(x, y) for y in (f, g)] for x in (f, g)])
        lhs = compound_inner(w, w)
        rhs = 0.5 * np.linalg.det(gram)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    checks.append({"name": "gram_identity", "measured": worst, "tolerance": 1e-5, "pass": worst <= 1e-5})

    # 2. Laplace vs dense resolvent (the module's core two-route test)
    model, _ = build_mackey_glass(0.1, 0.2, 10.0, tau)
    p = complex(float(cfg["oracle"]["p_re"]), float(cfg["oracle"]["p_im"]))
    horizon = float(cfg["oracle"]["horizon"])
    f, g = smooth(n_grid), smooth(n_grid)
    ws = WedgeSum([(1.0, (f, g))])
    s_bound = -0.2
    lap = resolvent_laplace(model, ws, p, horizon, spectral_bound=s_bound)
    dense = dense_resolvent_solve(model, ws.materialize(), p)
    diff = compound_norm(lap.value + dense) / max(compound_norm(dense), 1e-300)
    checks.append({"name": "laplace_vs_dense", "measured": diff, "tolerance": 0.02, "pass": diff <= 0.02})

    # 3. generator finite difference vs compound_generator_apply
    def gen_fd_error(n_grid, dt):
        f1 = embed_continuous(lambda t: np.exp(t), tau, n_grid, 1)
        f2 = embed_continuous(lambda t: np.cos(t), tau, n_grid, 1)
        phi = wedge(f1, f2)
        if cfg["oracle"].get("break_trace_coupling"):
            broken = phi.copy()
            broken.faces[(1,)] = broken.faces[(1,)] + 0.5
            phi = broken
        gen = compound_generator_apply(model, phi)
        adv = compound_semigroup_apply(model, [f1, f2], dt)
        fd = (adv - phi).scaled(1.0 / dt)
        return compound_norm(fd - gen) / max(compound_norm(gen), 1e-300)

    try:
        coarse = gen_fd_error(32, 1.0 / 64)
        fine = gen_fd_error(64, 1.0 / 128)
        ok = fine <= 0.25 and fine < coarse
        checks.append(
            {"name": "generator_fd", "measured": fine, "tolerance": 0.25, "pass": bool(ok), "coarse": coarse}
        )
    except TraceCompatibilityError as exc:
        checks.append(
            {"name": "generator_fd", "measured": float("inf"), "tolerance": 0.25, "pass": False, "error": str(exc)}
        )

    # 4. structural-Cauchy refinement trend
    sub_cfg = {
        "structural": {"grids": [32, 64], "t_final": 1.5, "nu": 0.0},
        "m": 2,
        "discretization": cfg["discretization"],
    }
    _, _, res, order = structural_battery(sub_cfg, model)
    ok = order >= 0.9 or res[-1] < 1e-10
    checks.append({"name": "structural_residual", "measured": order, "tolerance": 0.9, "pass": bool(ok)})
    return checks


def run_oracle(cfg: dict, out: Path) -> int:
    checks = oracle_battery(cfg)
    all_pass = all(c["pass"] for c in checks)
    if cfg["output"]["json"]:
        write_json(
            out / "oracle.json",
            {"command": "oracle", "version": __version__, "checks": checks, "all_pass": all_pass},
        )
    if cfg["output"]["csv"]:
        write_csv(
            out / "oracle.csv",
            ["name", "measured", "tolerance", "pass"],
            [(c["name"], c["measured"], c["tolerance"], int(c["pass"])) for c in checks],
        )
    if cfg["output"]["plots"]:
        figures.oracle_figure(
            [c["name"] for c in checks],
            [c["measured"] for c in checks],
            [c["tolerance"] for c in checks],
            out / "oracle_errors.png",
        )
    return 0 if all_pass else 1


def run_models(_cfg, out: Optional[Path]) -> int:
    for name in preset_names():
        builder, defaults = _PRESETS[name]
        model, report = build_preset(name)
        args = ", ".join(f"{k}={v}" for k, v in defaults.items())
        print(f"{name}  ({args})")
        for key, val in report.items():
            if key == "preset":
                continue
            print(f"    {key}: {val}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddewedge",
        description="Frequency-inequality verification for compound delay-equation cocycles",
    )
    parser.add_argument("--version", action="version", version=f"ddewedge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("spectrum", "characteristic roots, compound sums, dichotomy line report"),
        ("verify", "full pipeline with frequency-inequality verdict (exit 0/1/2)"),
        ("sweep", "norm sweep along the chosen line"),
        ("simulate", "integrate the delay equation and dump the trajectory"),
        ("structural-check", "structural Cauchy residual across grid refinement"),
        ("oracle", "cross-route test battery with pass/fail table"),
        ("models", "list model presets"),
    ]:
        p = sub.add_parser(name, help=help_text)
        if name == "models":
            p.add_argument("action", nargs="?", default="list", choices=["list"])
            continue
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--jobs", type=int, default=None, help="parallel sweep workers")
        p.add_argument("--csv", action="store_true", help="force CSV output on")
        p.add_argument("--json", action="store_true", help="force JSON output on")
        p.add_argument("--no-plots", action="store_true", help="disable figure rendering")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "models":
        return run_models({}, None)
    try:
        cfg = load_config(args.config)
        if args.jobs is not None:
            cfg["jobs"] = args.jobs
        if args.csv:
            cfg["output"]["csv"] = True
        if args.json:
            cfg["output"]["json"] = True
        if args.no_plots:
            cfg["output"]["plots"] = False
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        dispatch = {
            "spectrum": run_spectrum,
            "verify": lambda c, o: run_verify(c, o, "verify"),
            "sweep": lambda c, o: run_verify(c, o, "sweep"),
            "simulate": run_simulate,
            "structural-check": run_structural,
            "oracle": run_oracle,
        }
        return dispatch[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, Exception) as exc:
        if isinstance(exc, SystemExit):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
