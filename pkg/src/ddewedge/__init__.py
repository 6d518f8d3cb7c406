"""Numerical verification of frequency-domain stability criteria for
m-fold wedge (compound) cocycles generated by linear delay differential
equations.

The state space is H = L2([-tau, 0]; mu; R^n) with mu = Lebesgue + a unit
atom at 0, so every element carries a head value (the atom component) and
a body function on (-tau, 0).  Compound extensions live on face-indexed
grids over [-tau, 0]^m.  The pipeline: characteristic roots -> compound
spectra -> transfer operator norms on a vertical line -> frequency
inequality verdict.
"""

from .hilbert import HistoryElement, StieltjesKernel, embed_continuous, inner_product, stieltjes_apply, total_variation
from .semigroup import (
    LinearDelayModel,
    Trajectory,
    solve_linear,
    semigroup_apply,
    cocycle_apply,
    characteristic_matrix,
    characteristic_roots,
    shift_feedback,
)
from .models import build_mackey_glass, build_suarez_schopf, preset_names, build_preset
from .exterior import (
    CompoundGridFunction,
    wedge,
    tensor_product,
    compound_inner,
    compound_norm,
    check_antisymmetry,
    diagonal_shift,
    compound_semigroup_apply,
    compound_generator_apply,
)
from .spectrum import SpectrumReport, compound_spectrum_sums, antisym_multiplicity, spectral_bound, line_clearance
from .transfer import (
    ControlBasis,
    MeasurementBasis,
    TransferMatrix,
    TransferAssembly,
    control_embed,
    measurement_project,
    resolvent_laplace,
    dense_resolvent_solve,
    transfer_matrix,
)
from .sweep import SweepConfig, SweepReport, alpha_max, sweep, verdict, lipschitz_estimate
from .structural import AdornedSource, TwistedSource, adorn, twist, decompose_solution, pointwise_measure_series

__version__ = "0.1.0"
