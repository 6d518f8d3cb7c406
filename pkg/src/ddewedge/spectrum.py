"""Compound spectra from characteristic roots.

Eigenvalues of the m-fold additive compound are the m-sums of base roots;
antisymmetric multiplicities follow the binomial rule over repeated
spectral subspaces (a simple root repeated in a sum contributes nothing
to the wedge spectrum).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb, factorial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "Decomposition",
    "CompoundEigenvalue",
    "SpectrumReport",
    "compound_spectrum_sums",
    "antisym_multiplicity",
    "tensor_multiplicity",
    "spectral_bound",
    "line_clearance",
    "suggest_line",
    "LineHitsSpectrumError",
]

_MERGE_TOL = 1e-9


class LineHitsSpectrumError(RuntimeError):
    pass


@dataclass(frozen=True)
class Decomposition:
    """One unordered multiset of base roots summing to a compound eigenvalue.

    entries: tuple of ((root, eigenspace_dim), repetition) over distinct roots.
    """

    entries: Tuple[Tuple[Tuple[complex, int], int], ...]

    @property
    def order(self) -> int:
        return sum(rep for _, rep in self.entries)


def antisym_multiplicity(decomposition: Decomposition | Sequence[Tuple[complex, int]]) -> int:
    """prod over distinct subspaces of binom(dim, repetition); zero when a
    repetition exceeds the subspace dimension."""
    if isinstance(decomposition, Decomposition):
        entries = decomposition.entries
    else:
        counts: Dict[Tuple[complex, int], int] = {}
        for item in decomposition:
            counts[item] = counts.get(item, 0) + 1
        entries = tuple(counts.items())
    out = 1
    for (_, dim), rep in entries:
        out *= comb(dim, rep)
    return out


def tensor_multiplicity(decomposition: Decomposition) -> int:
    """Ordered-tuple count times the product of subspace dimensions."""
    m = decomposition.order
    out = factorial(m)
    for (_, dim), rep in decomposition.entries:
        out //= factorial(rep)
        out *= dim**rep
    return out


@dataclass
class CompoundEigenvalue:
    value: complex
    decompositions: List[Decomposition]

    @property
    def tensor_mult(self) -> int:
        return sum(tensor_multiplicity(d) for d in self.decompositions)

    @property
    def antisym_mult(self) -> int:
        return sum(antisym_multiplicity(d) for d in self.decompositions)


def compound_spectrum_sums(
    roots: Sequence[Tuple[complex, int]],
    m: int,
    window: Tuple[float, float, float, float],
) -> List[CompoundEigenvalue]:
    """All m-multisets of base roots whose sum lies in the window, grouped
    by numerically coincident sums (absolute tolerance 1e-9).

    The input root list must be complete in a half-plane deep enough that
    every contributing combination is available: with s1 = max Re(root),
    combinations reaching Re >= window re_min need roots down to
    re_min - (m-1)*s1.
    """
    re0, re1, im0, im1 = window
    if not roots:
        return []
    order = sorted(range(len(roots)), key=lambda i: (roots[i][0].real, roots[i][0].imag))
    roots = [roots[i] for i in order]
    groups: List[Tuple[complex, List[Decomposition]]] = []
    for combo in combinations_with_replacement(range(len(roots)), m):
        total = sum(roots[i][0] for i in combo)
        if not (re0 - _MERGE_TOL <= total.real <= re1 + _MERGE_TOL and im0 - _MERGE_TOL <= total.imag <= im1 + _MERGE_TOL):
            continue
        counts: Dict[int, int] = {}
        for i in combo:
            counts[i] = counts.get(i, 0) + 1
        dec = Decomposition(tuple(((roots[i][0], roots[i][1]), rep) for i, rep in sorted(counts.items())))
        for j, (val, decs) in enumerate(groups):
            if abs(total - val) <= _MERGE_TOL:
                decs.append(dec)
                break
        else:
            groups.append((total, [dec]))
    groups.sort(key=lambda g: (-g[0].real, abs(g[0].imag)))
    return [CompoundEigenvalue(val, decs) for val, decs in groups]


def required_root_depth(roots: Sequence[Tuple[complex, int]], m: int, re_min: float) -> float:
    """Deepest base real part that can still contribute a sum with
    Re >= re_min (reported so the caller can check its search window)."""
    if not roots:
        return re_min
    s1 = max(r.real for r, _ in roots)
    return re_min - (m - 1) * s1


def spectral_bound(eigs: Sequence[CompoundEigenvalue]) -> Tuple[float, bool]:
    """Max real part over the compound eigenvalues in the window.

    Computed over the tensor-compound set (which dominates the wedge one),
    so it upper-bounds the wedge growth bound; the flag records that
    growth bound = spectral bound is assumed via eventual compactness.
    """
    if not eigs:
        return float("-inf"), True
    return max(e.value.real for e in eigs), True


def line_clearance(eigs: Sequence[CompoundEigenvalue], nu0: float, tol: float = 1e-9) -> Tuple[int, float]:
    """Count j of wedge eigenvalues (with antisymmetric multiplicity) right
    of the line Re = -nu0, and the minimal distance of the computed
    compound spectrum to the line."""
    j = 0
    min_dist = float("inf")
    for e in eigs:
        dist = abs(e.value.real + nu0)
        if e.tensor_mult > 0:
            min_dist = min(min_dist, dist)
        if e.antisym_mult > 0 and e.value.real > -nu0:
            j += e.antisym_mult
    if min_dist < tol:
        raise LineHitsSpectrumError(f"line Re = {-nu0} passes within {min_dist:.3e} of the compound spectrum")
    return j, min_dist


def suggest_line(eigs: Sequence[CompoundEigenvalue], floor: float = 0.0) -> Optional[float]:
    """Auto nu0: midpoint of the gap between the rightmost compound
    eigenvalue left of -floor and the -floor axis; None when the spectrum
    reaches across the floor."""
    lefts = [e.value.real for e in eigs if e.value.real < -floor]
    if not lefts or any(e.value.real >= -floor for e in eigs):
        return None
    s = max(lefts)
    return (floor + (-s)) / 2.0 if s < -floor else None


@dataclass
class SpectrumReport:
    base_roots: List[Tuple[complex, int]]
    m: int
    window: Tuple[float, float, float, float]
    eigenvalues: List[CompoundEigenvalue]
    spectral_bound_value: float
    growth_equals_spectral: bool
    nu0: Optional[float] = None
    dichotomy_rank: Optional[int] = None
    line_distance: Optional[float] = None
    required_depth: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "window": list(self.window),
            "base_roots": [
                {"re": r.real, "im": r.imag, "multiplicity": mult} for r, mult in self.base_roots
            ],
            "compound_eigenvalues": [
                {
                    "re": e.value.real,
                    "im": e.value.imag,
                    "tensor_multiplicity": e.tensor_mult,
                    "antisym_multiplicity": e.antisym_mult,
                    "decompositions": [
                        [
                            {"re": root.real, "im": root.imag, "dim": dim, "repetition": rep}
                            for (root, dim), rep in d.entries
                        ]
                        for d in e.decompositions
                    ],
                }
                for e in self.eigenvalues
            ],
            "spectral_bound": self.spectral_bound_value,
            "growth_equals_spectral_assumed": self.growth_equals_spectral,
            "nu0": self.nu0,
            "dichotomy_rank_j": self.dichotomy_rank,
            "line_distance": self.line_distance,
            "required_root_depth": self.required_depth,
            "notes": self.notes,
        }
