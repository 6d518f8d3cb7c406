import numpy as np
import pytest

from ddewedge.models import build_mackey_glass
from ddewedge.sweep import (
    SweepConfig,
    SweepReport,
    Verdict,
    alpha_max,
    lipschitz_estimate,
    max_singular_value,
    sweep,
    verdict,
)
from ddewedge.transfer import ControlBasis, MeasurementBasis, TransferAssembly

from conftest import scalar_model

TAU = 1.0
NG = 64


@pytest.fixture(scope="module")
def mg_assembly():
    model, _ = build_mackey_glass(0.1, 0.2, 10.0, TAU)
    control = ControlBasis.build(model, 2, NG, 8)
    measurement = MeasurementBasis.build(model, 2, NG, 8)
    asm = TransferAssembly(model, control, measurement, 80.0, NG, spectral_bound=-0.2)
    return model, asm


def _synthetic_report(omegas, alphas):
    alphas = np.asarray(alphas, dtype=float)
    sup = float(np.max(alphas))
    slopes = np.abs(np.diff(alphas)) / (omegas[1] - omegas[0])
    lip = float(np.max(slopes)) if slopes.size else 0.0
    return SweepReport(
        omegas=np.asarray(omegas, dtype=float),
        alphas=alphas,
        nu0=0.1,
        n_control=1,
        n_measure=1,
        sup_alpha=sup,
        omega_at_sup=float(omegas[int(np.argmax(alphas))]),
        lipschitz_raw=lip,
        lipschitz_safe=2.0 * lip,
        remainder_max=0.0,
    )


def test_svd_helpers_match_lapack(rng):
    for shape in [(1, 1), (3, 5), (16, 16), (64, 64)]:
        mat = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        assert max_singular_value(mat) == pytest.approx(np.linalg.svd(mat, compute_uv=False)[0], rel=1e-12)
    big = rng.normal(size=(96, 96)) + 1j * rng.normal(size=(96, 96))
    assert max_singular_value(big) == pytest.approx(np.linalg.svd(big, compute_uv=False)[0], rel=1e-8)


def test_alpha_zero_measurement():
    model = scalar_model([(0.0, [[-1.0]])], TAU, c_entries=[])
    cfg = SweepConfig(nu0=0.5, omega_max=1.0, delta_omega=0.5, n_control=2, n_measure=2, horizon=40.0, n_grid=NG)
    assert alpha_max(model, 0.7, cfg, spectral_bound=-2.0) == 0.0


def test_alpha_1x1_is_entry_modulus(mg_assembly):
    model, asm = mg_assembly
    tm = asm.matrix(complex(-0.1, 0.4))
    assert max_singular_value(tm.matrix[:1, :1]) == pytest.approx(abs(tm.matrix[0, 0]))


def test_alpha_symmetry(mg_assembly):
    model, asm = mg_assembly
    a_plus = max_singular_value(asm.matrix(complex(-0.05, 1.3)).matrix)
    a_minus = max_singular_value(asm.matrix(complex(-0.05, -1.3)).matrix)
    assert a_plus == pytest.approx(a_minus, abs=1e-10)


def test_sweep_report_and_monotonicity(mg_assembly):
    model, asm = mg_assembly
    cfg = SweepConfig(
        nu0=0.05, omega_max=5.0, delta_omega=0.5, n_control=8, n_measure=8,
        horizon=80.0, lambda_gain=model.lambda_gain, n_grid=NG,
    )
    report = sweep(model, cfg, spectral_bound=-0.2, assembly=asm)
    assert np.all(report.alphas >= 0)
    assert report.verdict is Verdict.VERIFIED_WINDOW
    # basis-size monotonicity on nested sections at every node
    sups = {}
    for size in (2, 4, 8):
        vals = [max_singular_value(asm.matrix(complex(-0.05, w)).matrix[:size, :size]) for w in report.omegas]
        sups[size] = np.asarray(vals)
    assert np.all(sups[2] <= sups[4] + 1e-12)
    assert np.all(sups[4] <= sups[8] + 1e-12)


def test_sweep_parallel_deterministic(mg_assembly):
    model, asm = mg_assembly
    base = dict(nu0=0.05, omega_max=4.0, delta_omega=0.5, n_control=8, n_measure=8, horizon=80.0, n_grid=NG)
    r1 = sweep(model, SweepConfig(**base, jobs=1), spectral_bound=-0.2, assembly=asm)
    r4 = sweep(model, SweepConfig(**base, jobs=4), spectral_bound=-0.2, assembly=asm)
    assert np.array_equal(r1.alphas, r4.alphas)


def test_verdict_lambda_zero_always_verified():
    report = _synthetic_report(np.linspace(0, 5, 11), np.linspace(3, 8, 11))
    v, margin = verdict(report, 0.0)
    assert v is Verdict.VERIFIED_WINDOW and margin == np.inf


def test_verdict_violated_when_threshold_below_sup():
    report = _synthetic_report(np.linspace(0, 5, 11), 1.0 + 0.1 * np.sin(np.linspace(0, 5, 11)))
    v, margin = verdict(report, 1.0)  # threshold 1.0 < sup
    assert v is Verdict.VIOLATED and margin < 0


def test_verdict_inconclusive_and_monotone_in_lambda():
    omegas = np.linspace(0, 5, 11)
    report = _synthetic_report(omegas, np.linspace(0.0, 1.0, 11))
    # steep curve: sup 1.0, safe Lipschitz 0.4, certification adds 0.1
    v_tight, _ = verdict(report, 1.0 / 1.05)
    assert v_tight is Verdict.INCONCLUSIVE
    v_ok, _ = verdict(report, 1.0 / 1.5)
    assert v_ok is Verdict.VERIFIED_WINDOW
    # verified at some lambda implies verified at any smaller lambda
    v_smaller, _ = verdict(report, 0.5 / 1.5)
    assert v_smaller is Verdict.VERIFIED_WINDOW


def test_lipschitz_estimate_examples():
    omegas = np.linspace(0, 5, 26)
    flat = _synthetic_report(omegas, np.full(26, 0.7))
    assert lipschitz_estimate(flat) == 0.0
    slope = 0.3
    linear = _synthetic_report(omegas, 0.1 + slope * omegas)
    assert lipschitz_estimate(linear) == pytest.approx(2 * slope, rel=1e-9)


def test_lipschitz_stable_under_grid_halving(mg_assembly):
    model, asm = mg_assembly
    ests = {}
    for delta in (0.5, 0.25):
        cfg = SweepConfig(nu0=0.05, omega_max=4.0, delta_omega=delta, n_control=4, n_measure=4, horizon=80.0, n_grid=NG)
        report = sweep(model, cfg, spectral_bound=-0.2, assembly=asm)
        ests[delta] = report.lipschitz_safe
    ratio = ests[0.25] / max(ests[0.5], 1e-12)
    assert 0.5 < ratio < 1.5


def test_sweep_refinement_self_consistency(mg_assembly):
    model, asm = mg_assembly
    coarse_cfg = SweepConfig(nu0=0.05, omega_max=4.0, delta_omega=0.5, n_control=8, n_measure=8, horizon=80.0, n_grid=NG)
    fine_cfg = SweepConfig(nu0=0.05, omega_max=4.0, delta_omega=0.25, n_control=8, n_measure=8, horizon=80.0, n_grid=NG)
    coarse = sweep(model, coarse_cfg, spectral_bound=-0.2, assembly=asm)
    fine = sweep(model, fine_cfg, spectral_bound=-0.2, assembly=asm)
    assert abs(fine.sup_alpha - coarse.sup_alpha) <= coarse.lipschitz_safe * 0.5 / 2 + 1e-12
