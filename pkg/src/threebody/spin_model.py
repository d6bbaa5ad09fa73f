"""Diagonal three-qubit spin model.

The effective Hamiltonian is diagonal in the computational basis,

    E(s) = -1/2 * sum_i omega_i s_i + sum_{i<j} J_ij s_i s_j + K s_1 s_2 s_3,

with spin value ``s = +1`` for bit 0 and ``s = -1`` for bit 1.  All energies
and frequencies are linear frequencies in MHz.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

N_QUBITS = 3
PAIRS = ((1, 2), (1, 3), (2, 3))
PARAM_NAMES = ("omega1", "omega2", "omega3", "j12", "j13", "j23", "k123")

_UNIT_SCALE = {"mhz": 1.0, "ghz": 1e3, "khz": 1e-3}


@dataclass(frozen=True, order=True)
class BasisState:
    """Computational basis state; ``bits[0]`` is qubit 1 (leftmost in labels)."""

    bits: tuple[int, int, int]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) != N_QUBITS or any(b not in (0, 1) for b in bits):
            raise ValueError(f"invalid basis bits {self.bits!r}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def parse(cls, label: str) -> "BasisState":
        label = label.strip()
        if not re.fullmatch(r"[01]{3}", label):
            raise ValueError(f"invalid basis state label {label!r}")
        return cls(tuple(int(c) for c in label))

    @property
    def label(self) -> str:
        return "".join(str(b) for b in self.bits)

    @property
    def spins(self) -> tuple[int, int, int]:
        return tuple(1 - 2 * b for b in self.bits)

    @property
    def index(self) -> int:
        """Integer index with qubit 1 as the most significant bit."""
        return self.bits[0] * 4 + self.bits[1] * 2 + self.bits[2]

    @property
    def excitations(self) -> int:
        return sum(self.bits)

    def flip(self, qubit: int) -> "BasisState":
        bits = list(self.bits)
        bits[qubit - 1] ^= 1
        return BasisState(tuple(bits))

    def __str__(self):
        return self.label


def all_states() -> list[BasisState]:
    return [BasisState(b) for b in itertools.product((0, 1), repeat=N_QUBITS)]


@dataclass(frozen=True)
class HamiltonianParams:
    omega: tuple[float, float, float]
    j: tuple[float, float, float]  # (J12, J13, J23)
    k123: float

    def __post_init__(self):
        omega = tuple(float(x) for x in self.omega)
        j = tuple(float(x) for x in self.j)
        if len(omega) != 3 or len(j) != 3:
            raise ValueError("omega and j must each have three entries")
        k123 = float(self.k123)
        if not all(math.isfinite(x) for x in (*omega, *j, k123)):
            raise ValueError("Hamiltonian parameters must be finite")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "k123", k123)

    @classmethod
    def zero(cls) -> "HamiltonianParams":
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.0)

    @classmethod
    def from_vector(cls, vec) -> "HamiltonianParams":
        v = np.asarray(vec, dtype=float).ravel()
        if v.shape != (7,):
            raise ValueError(f"expected 7 parameters, got shape {v.shape}")
        return cls(tuple(v[:3]), tuple(v[3:6]), v[6])

    def as_vector(self) -> np.ndarray:
        return np.array([*self.omega, *self.j, self.k123])

    def coupling(self, a: int, b: int) -> float:
        """J between 1-based qubits ``a`` and ``b``."""
        return self.j[PAIRS.index(tuple(sorted((a, b))))]

    def scaled(self, c: float) -> "HamiltonianParams":
        return HamiltonianParams.from_vector(c * self.as_vector())

    def to_dict(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES, (float(x) for x in self.as_vector())))

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "HamiltonianParams":
        """Read a flat mapping; bare keys are MHz, ``_mhz``/``_ghz``/``_khz`` suffixes are honoured."""
        values = []
        for name in PARAM_NAMES:
            found = [(k, v) for k, v in data.items() if _strip_unit(k)[0] == name]
            if len(found) != 1:
                raise KeyError(f"expected exactly one entry for {name!r}")
            key, value = found[0]
            values.append(float(value) * _UNIT_SCALE[_strip_unit(key)[1]])
        return cls.from_vector(values)


def _strip_unit(key: str) -> tuple[str, str]:
    m = re.fullmatch(r"(.+?)_(mhz|ghz|khz)", key.lower())
    if m:
        return m.group(1), m.group(2)
    return key.lower(), "mhz"


def to_mhz(value: float, unit: str) -> float:
    return float(value) * _UNIT_SCALE[unit.lower()]


@dataclass(frozen=True, order=True)
class TransitionId:
    """Single-photon transition ``lower -> upper`` flipping one qubit from 0 to 1."""

    lower: BasisState
    upper: BasisState

    def __post_init__(self):
        diff = [i for i in range(N_QUBITS) if self.lower.bits[i] != self.upper.bits[i]]
        if len(diff) != 1:
            raise ValueError(f"{self.lower}->{self.upper} does not flip exactly one qubit")
        if self.lower.bits[diff[0]] != 0:
            raise ValueError(f"{self.lower}->{self.upper}: lower state must hold 0 on the flipped qubit")

    @classmethod
    def from_flip(cls, lower: BasisState | str, qubit: int) -> "TransitionId":
        if isinstance(lower, str):
            lower = BasisState.parse(lower)
        return cls(lower, lower.flip(qubit))

    @classmethod
    def parse(cls, label: str) -> "TransitionId":
        """Parse ``"000-100"`` (also accepts ``->`` as separator)."""
        parts = re.split(r"\s*-+>?\s*", label.strip())
        if len(parts) != 2:
            raise ValueError(f"invalid transition label {label!r}")
        return cls(BasisState.parse(parts[0]), BasisState.parse(parts[1]))

    @cached_property
    def flipped_qubit(self) -> int:
        for i in range(N_QUBITS):
            if self.lower.bits[i] != self.upper.bits[i]:
                return i + 1
        raise AssertionError("unreachable")

    @property
    def label(self) -> str:
        return f"{self.lower.label}-{self.upper.label}"

    def sort_key(self):
        return (self.lower.label, self.flipped_qubit)

    def __str__(self):
        return self.label


def energy(params: HamiltonianParams, state: BasisState) -> float:
    s = state.spins
    e = -0.5 * sum(w * si for w, si in zip(params.omega, s))
    for (a, b), jab in zip(PAIRS, params.j):
        e += jab * s[a - 1] * s[b - 1]
    e += params.k123 * s[0] * s[1] * s[2]
    return e


def energies(params: HamiltonianParams) -> np.ndarray:
    """Energies of all 8 states, indexed by :attr:`BasisState.index`."""
    return np.array([energy(params, st) for st in all_states()])


def transition_frequency(params: HamiltonianParams, t: TransitionId) -> float:
    """Closed form ``E(upper) - E(lower)``."""
    k = t.flipped_qubit
    s = t.lower.spins
    others = [q for q in (1, 2, 3) if q != k]
    f = params.omega[k - 1]
    for q in others:
        f -= 2.0 * params.coupling(k, q) * s[q - 1]
    f -= 2.0 * params.k123 * s[others[0] - 1] * s[others[1] - 1]
    return f


def enumerate_transitions() -> list[TransitionId]:
    """All 12 single-photon transitions, sorted by lower label then flipped qubit."""
    out = [
        TransitionId.from_flip(st, q)
        for st in all_states()
        for q in (1, 2, 3)
        if st.bits[q - 1] == 0
    ]
    return sorted(out, key=TransitionId.sort_key)


def transition_frequencies(
    params: HamiltonianParams, transitions: Iterable[TransitionId] | None = None
) -> np.ndarray:
    if transitions is None:
        transitions = enumerate_transitions()
    return np.array([transition_frequency(params, t) for t in transitions])


def preparation_path(state: BasisState) -> list[TransitionId]:
    """Ladder of transitions climbing from 000 to ``state``, lowest qubit index first."""
    path = []
    current = BasisState((0, 0, 0))
    for q in (1, 2, 3):
        if state.bits[q - 1]:
            t = TransitionId.from_flip(current, q)
            path.append(t)
            current = t.upper
    return path
