"""Linear inversion of transition frequencies into spin-model parameters.

Every transition frequency is a linear function of the seven parameters
``(omega1, omega2, omega3, J12, J13, J23, K123)``.  Seven transitions with an
invertible design matrix fix the parameters exactly; more transitions are
combined by weighted least squares.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import SingularDesign
from .spin_model import (
    PAIRS,
    BasisState,
    HamiltonianParams,
    TransitionId,
    enumerate_transitions,
    to_mhz,
    transition_frequency,
)

METHOD_EXACT = "exact-7"
METHOD_LSQ = "least-squares"

# Transitions used for the reference measurement set, in measurement order.
REFERENCE_SET = tuple(
    TransitionId.parse(s)
    for s in ("000-001", "000-010", "000-100", "001-011", "100-101", "100-110", "110-111")
)

# Row for 100-110 as it appears in the originally published matrix.  It is
# inconsistent with the published frequencies/parameters and is kept only so
# the two variants can be compared.
PRINTED_ROW_100_110 = (0, 1, 0, 2, -2, 2, 0)


@dataclass(frozen=True)
class FrequencyMeasurement:
    transition: TransitionId
    value: float  # MHz
    sigma: float = 0.0  # MHz, one standard deviation

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("measurement value must be finite")
        if not (self.sigma >= 0):
            raise ValueError("sigma must be non-negative")

    def to_dict(self) -> dict:
        return {
            "lower": self.transition.lower.label,
            "upper": self.transition.upper.label,
            "value_mhz": self.value,
            "sigma_mhz": self.sigma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FrequencyMeasurement":
        t = TransitionId(BasisState.parse(str(data["lower"])), BasisState.parse(str(data["upper"])))
        value = _read_with_unit(data, "value")
        sigma = _read_with_unit(data, "sigma", default=0.0)
        return cls(t, value, sigma)


def _read_with_unit(data: dict, stem: str, default=None) -> float:
    hits = [(k, v) for k, v in data.items() if k.lower().startswith(stem + "_")]
    if not hits:
        if default is not None:
            return default
        raise KeyError(f"missing {stem}_mhz / {stem}_ghz / {stem}_khz")
    if len(hits) > 1:
        raise KeyError(f"ambiguous units for {stem!r}")
    key, value = hits[0]
    return to_mhz(float(value), key.lower()[len(stem) + 1:])


def design_row(t: TransitionId) -> np.ndarray:
    """Coefficients of ``f(t)`` in ``(omega1..3, J12, J13, J23, K123)``."""
    k = t.flipped_qubit
    s = t.lower.spins
    row = np.zeros(7, dtype=int)
    row[k - 1] = 1
    for p, (a, b) in enumerate(PAIRS):
        if k in (a, b):
            other = b if a == k else a
            row[3 + p] = -2 * s[other - 1]
    o1, o2 = (q for q in (1, 2, 3) if q != k)
    row[6] = -2 * s[o1 - 1] * s[o2 - 1]
    return row


@dataclass(frozen=True)
class DesignMatrix:
    transitions: tuple[TransitionId, ...]
    rows: np.ndarray  # integer, shape (n, 7)

    @classmethod
    def build(cls, transitions: Iterable[TransitionId], printed: bool = False) -> "DesignMatrix":
        """Stack design rows.

        ``printed=True`` substitutes the published (inconsistent) row for the
        ``100-110`` transition; use only for documentation/comparison.
        """
        transitions = tuple(transitions)
        rows = np.array([design_row(t) for t in transitions], dtype=int).reshape(-1, 7)
        if printed:
            bad = TransitionId.parse("100-110")
            for i, t in enumerate(transitions):
                if t == bad:
                    rows[i] = PRINTED_ROW_100_110
        return cls(transitions, rows)

    @property
    def float_rows(self) -> np.ndarray:
        return self.rows.astype(float)

    def rank(self) -> int:
        return integer_rank(self.rows)

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.float_rows))


def integer_rank(matrix) -> int:
    """Exact rank of an integer matrix by fraction-free (Bareiss) elimination."""
    a = [[int(x) for x in row] for row in np.asarray(matrix)]
    if not a:
        return 0
    n_rows, n_cols = len(a), len(a[0])
    rank = 0
    prev = 1
    for col in range(n_cols):
        pivot = next((r for r in range(rank, n_rows) if a[r][col] != 0), None)
        if pivot is None:
            continue
        a[rank], a[pivot] = a[pivot], a[rank]
        p = a[rank][col]
        for r in range(rank + 1, n_rows):
            for c in range(col + 1, n_cols):
                a[r][c] = (a[r][c] * p - a[r][col] * a[rank][c]) // prev
            a[r][col] = 0
        prev = p
        rank += 1
        if rank == n_rows:
            break
    return rank


@dataclass(frozen=True)
class EstimationResult:
    params: HamiltonianParams
    covariance: np.ndarray  # 7x7, MHz^2
    residuals: np.ndarray  # measured - model, MHz
    method: str
    transitions: tuple[TransitionId, ...] = field(default=())
    condition_number: float = float("nan")

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "params_mhz": self.params.to_dict(),
            "sigmas_mhz": dict(zip(self.params.to_dict(), (float(x) for x in self.sigmas))),
            "covariance_mhz2": self.covariance.tolist(),
            "residuals_mhz": {t.label: float(r) for t, r in zip(self.transitions, self.residuals)},
            "condition_number": self.condition_number,
        }


def _check_rank(dm: DesignMatrix):
    r = dm.rank()
    if r < 7:
        cond = dm.condition_number() if dm.rows.shape[0] else float("inf")
        raise SingularDesign(
            f"design matrix has rank {r} < 7; transition set "
            f"{[t.label for t in dm.transitions]} is incomplete (cond={cond:.3g})",
            rank=r,
            condition_number=cond,
        )


def solve_exact(measurements: Sequence[FrequencyMeasurement]) -> EstimationResult:
    if len(measurements) != 7:
        raise SingularDesign(f"exact solve needs 7 transitions, got {len(measurements)}", rank=None)
    dm = DesignMatrix.build(m.transition for m in measurements)
    _check_rank(dm)
    a = dm.float_rows
    f = np.array([m.value for m in measurements])
    sig = np.array([m.sigma for m in measurements])
    a_inv = np.linalg.inv(a)
    p = a_inv @ f
    cov = a_inv @ np.diag(sig**2) @ a_inv.T
    return EstimationResult(
        params=HamiltonianParams.from_vector(p),
        covariance=0.5 * (cov + cov.T),
        residuals=np.zeros(7),
        method=METHOD_EXACT,
        transitions=dm.transitions,
        condition_number=dm.condition_number(),
    )


def solve_least_squares(measurements: Sequence[FrequencyMeasurement]) -> EstimationResult:
    """Weighted (1/sigma^2) least squares over seven or more transitions."""
    if len(measurements) < 7:
        raise SingularDesign(f"need at least 7 transitions, got {len(measurements)}", rank=None)
    dm = DesignMatrix.build(m.transition for m in measurements)
    _check_rank(dm)
    sig = np.array([m.sigma for m in measurements])
    if np.any(sig <= 0):
        raise ValueError("least squares needs strictly positive sigmas")
    if len(measurements) == 7:
        res = solve_exact(measurements)
        return EstimationResult(res.params, res.covariance, res.residuals, METHOD_LSQ,
                                res.transitions, res.condition_number)
    a = dm.float_rows
    f = np.array([m.value for m in measurements])
    w = 1.0 / sig
    aw = a * w[:, None]
    p, *_ = np.linalg.lstsq(aw, f * w, rcond=None)
    cov = np.linalg.inv(aw.T @ aw)
    return EstimationResult(
        params=HamiltonianParams.from_vector(p),
        covariance=0.5 * (cov + cov.T),
        residuals=f - a @ p,
        method=METHOD_LSQ,
        transitions=dm.transitions,
        condition_number=dm.condition_number(),
    )


def covers_all_states(subset: Iterable[TransitionId]) -> bool:
    touched = set()
    for t in subset:
        touched.add(t.lower)
        touched.add(t.upper)
    return len(touched) == 8


@lru_cache(maxsize=None)
def _complete_subsets_cached() -> tuple[tuple[TransitionId, ...], ...]:
    transitions = enumerate_transitions()
    rows = {t: design_row(t) for t in transitions}
    return tuple(
        combo
        for combo in itertools.combinations(transitions, 7)
        if integer_rank([rows[t] for t in combo]) == 7
    )


def complete_subsets() -> list[tuple[TransitionId, ...]]:
    """All 7-transition subsets (of the 12) whose design matrix is invertible."""
    return list(_complete_subsets_cached())


@dataclass(frozen=True)
class SubsetCriteriaReport:
    n_total: int
    n_invertible: int
    n_covering: int
    invertible_not_covering: tuple
    covering_not_invertible: tuple


def subset_criteria_report() -> SubsetCriteriaReport:
    """Compare invertibility with the 'every state touched' criterion over all 792 subsets."""
    transitions = enumerate_transitions()
    valid = set(_complete_subsets_cached())
    all_combos = list(itertools.combinations(transitions, 7))
    covering = {c for c in all_combos if covers_all_states(c)}
    return SubsetCriteriaReport(
        n_total=len(all_combos),
        n_invertible=len(valid),
        n_covering=len(covering),
        invertible_not_covering=tuple(sorted(valid - covering)),
        covering_not_invertible=tuple(sorted(covering - valid)),
    )


def _by_transition(measurements: Sequence[FrequencyMeasurement]) -> dict:
    out = {}
    for m in measurements:
        if m.transition in out:
            raise ValueError(f"duplicate measurement for {m.transition}")
        out[m.transition] = m
    return out


def selection_scan(measurements: Sequence[FrequencyMeasurement]):
    """Solve every complete subset; returns ``(subsets, draws)`` with draws shape (384, 7)."""
    lookup = _by_transition(measurements)
    missing = [t.label for t in enumerate_transitions() if t not in lookup]
    if missing:
        raise ValueError(f"selection scan needs all 12 transitions; missing {missing}")
    subsets = complete_subsets()
    if not subsets:
        raise SingularDesign("no complete subsets available")
    f = np.array([lookup[t].value for t in enumerate_transitions()])
    draws = selection_draws(f)
    return subsets, draws


def selection_draws(frequencies: np.ndarray) -> np.ndarray:
    """Parameter vectors from every complete subset for 12 canonical-order frequencies."""
    inverses, index = _subset_inverses()
    f = np.asarray(frequencies, dtype=float)
    # (S, 7, 7) @ (S, 7) -> (S, 7)
    return np.einsum("sij,sj->si", inverses, f[index])


@lru_cache(maxsize=None)
def _subset_inverses():
    transitions = enumerate_transitions()
    pos = {t: i for i, t in enumerate(transitions)}
    subsets = _complete_subsets_cached()
    index = np.array([[pos[t] for t in s] for s in subsets])
    inverses = np.array([np.linalg.inv(DesignMatrix.build(s).float_rows) for s in subsets])
    inverses.setflags(write=False)
    index.setflags(write=False)
    return inverses, index


def selection_error(measurements: Sequence[FrequencyMeasurement]) -> np.ndarray:
    """Per-parameter standard deviation across all complete subsets (MHz)."""
    _, draws = selection_scan(measurements)
    return draws.std(axis=0)


@dataclass(frozen=True)
class Prediction:
    transition: TransitionId
    value: float
    sigma: float


def predict_remaining(result: EstimationResult, held_out: Iterable[TransitionId]) -> list[Prediction]:
    p = result.params.as_vector()
    out = []
    for t in held_out:
        row = design_row(t).astype(float)
        var = float(row @ result.covariance @ row)
        out.append(Prediction(t, float(row @ p), math.sqrt(max(var, 0.0))))
    return out


def synthetic_measurements(
    truth: HamiltonianParams,
    transitions: Iterable[TransitionId] | None = None,
    sigmas=None,
    rng: np.random.Generator | None = None,
) -> list[FrequencyMeasurement]:
    """Forward-model measurements; adds Gaussian noise of ``sigmas`` if ``rng`` is given."""
    transitions = list(enumerate_transitions() if transitions is None else transitions)
    sig = np.broadcast_to(np.asarray(0.0 if sigmas is None else sigmas, dtype=float), (len(transitions),))
    out = []
    for t, s in zip(transitions, sig):
        v = transition_frequency(truth, t)
        if rng is not None and s > 0:
            v += rng.normal(0.0, s)
        out.append(FrequencyMeasurement(t, v, float(s)))
    return out
