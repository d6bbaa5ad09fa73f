"""Circuit-level models of three qubits and a coupler.

A :class:`CompositeSystem` is a list of subsystems (bare Hamiltonian plus
named coupling operators) and a list of product coupling terms.  The full
Hamiltonian can be diagonalized directly or hierarchically (subsystems first,
truncated, then coupled).  The eight computational eigenstates are then
identified by overlap with bare product states and mapped onto the
diagonal spin model through the 12 single-flip transition frequencies.

Energies are in MHz.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import AmbiguousStates, DimensionCap, TruncationError
from .estimator import EstimationResult, FrequencyMeasurement, solve_least_squares
from .spin_model import BasisState, HamiltonianParams, enumerate_transitions

DEFAULT_DIMENSION_CAP = 4096
HERMITIAN_TOL = 1e-10

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]])


@dataclass
class SubsystemSpec:
    name: str
    hamiltonian: np.ndarray
    operators: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        h = np.asarray(self.hamiltonian)
        h = h.astype(complex if np.iscomplexobj(h) else float)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] < 2:
            raise ValueError(f"{self.name}: Hamiltonian must be square with dimension >= 2")
        _check_hermitian(h, f"{self.name} Hamiltonian")
        ops = {}
        for key, op in self.operators.items():
            op = np.asarray(op)
            op = op.astype(complex if np.iscomplexobj(op) else float)
            if op.shape != h.shape:
                raise ValueError(f"{self.name}: operator {key!r} has shape {op.shape}, expected {h.shape}")
            _check_hermitian(op, f"{self.name} operator {key!r}")
            ops[key] = op
        self.hamiltonian = h
        self.operators = ops

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def eigensystem(self):
        return np.linalg.eigh(self.hamiltonian)

    def rotated(self, unitary) -> "SubsystemSpec":
        """Same physics in the basis ``U^dag (.) U``."""
        u = np.asarray(unitary)
        return SubsystemSpec(
            self.name,
            u.conj().T @ self.hamiltonian @ u,
            {k: u.conj().T @ op @ u for k, op in self.operators.items()},
        )


def _check_hermitian(m: np.ndarray, what: str):
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.conj().T).max() > HERMITIAN_TOL * scale:
        raise ValueError(f"{what} is not Hermitian")


def build_flux_qubit(epsilon: float, delta: float, name: str = "qubit") -> SubsystemSpec:
    """Two-level flux qubit in the persistent-current basis, ``H = eps z + delta x``."""
    return SubsystemSpec(name, epsilon * PAULI_Z + delta * PAULI_X, {"z": PAULI_Z, "x": PAULI_X})


def build_multilevel_qubit(frequency: float, anharmonicity: float, eta: float = 1.0,
                           name: str = "qubit") -> SubsystemSpec:
    """Three-level qubit at its symmetry point, written in its eigenbasis.

    Levels ``0, f, 2f + anharmonicity``.  The current operator ``z`` connects
    neighbouring levels (the 1-2 element scaled by ``eta``) and ``x`` is the
    diagonal charge-like operator.
    """
    h = np.diag([0.0, frequency, 2 * frequency + anharmonicity])
    z = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, eta], [0.0, eta, 0.0]])
    x = np.diag([1.0, -1.0, 1.0])
    return SubsystemSpec(name, h, {"z": z, "x": x})


def build_coupler(gap: float, name: str = "coupler") -> SubsystemSpec:
    """Two-level coupler with excitation energy ``gap``; ``z`` flips it."""
    return SubsystemSpec(name, np.diag([0.0, gap]), {"z": PAULI_X.copy(), "x": PAULI_Z.copy()})


def build_oscillator(frequency: float, levels: int, anharmonicity: float = 0.0,
                     name: str = "oscillator") -> SubsystemSpec:
    """Truncated (an)harmonic oscillator with ``x = a + a^dag`` and ``n = a^dag a``."""
    n = np.arange(levels, dtype=float)
    a = np.diag(np.sqrt(n[1:]), 1)
    h = np.diag(frequency * n + 0.5 * anharmonicity * n * (n - 1))
    return SubsystemSpec(name, h, {"x": a + a.T, "n": np.diag(n)})


@dataclass(frozen=True)
class CouplingTerm:
    """``strength * prod_k O_k`` with each factor given as ``(subsystem, operator)``."""

    strength: float
    factors: tuple[tuple[int | str, str], ...]


@dataclass
class CompositeSystem:
    subsystems: list[SubsystemSpec]
    couplings: list[CouplingTerm] = field(default_factory=list)

    def __post_init__(self):
        self.subsystems = list(self.subsystems)
        names = [s.name for s in self.subsystems]
        if len(set(names)) != len(names):
            raise ValueError("subsystem names must be unique")
        terms = []
        for c in self.couplings:
            if not isinstance(c, CouplingTerm):
                c = CouplingTerm(float(c[0]), tuple(tuple(f) for f in c[1]))
            factors = []
            seen = set()
            for sub, op in c.factors:
                i = self.index(sub)
                if op not in self.subsystems[i].operators:
                    raise ValueError(f"subsystem {names[i]!r} has no operator {op!r}")
                if i in seen:
                    raise ValueError("a coupling term may use each subsystem once")
                seen.add(i)
                factors.append((i, op))
            terms.append(CouplingTerm(float(c.strength), tuple(factors)))
        self.couplings = terms

    def index(self, sub: int | str) -> int:
        if isinstance(sub, (int, np.integer)):
            if not 0 <= sub < len(self.subsystems):
                raise ValueError(f"subsystem index {sub} out of range")
            return int(sub)
        for i, s in enumerate(self.subsystems):
            if s.name == sub:
                return i
        raise ValueError(f"unknown subsystem {sub!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.subsystems)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def _embed(self, ops: Mapping[int, np.ndarray]) -> np.ndarray:
        mats = [ops.get(i, np.eye(d)) for i, d in enumerate(self.dims)]
        return reduce(np.kron, mats)

    def hamiltonian(self) -> np.ndarray:
        h = sum(self._embed({i: s.hamiltonian}) for i, s in enumerate(self.subsystems))
        for c in self.couplings:
            h = h + c.strength * self._embed({i: self.subsystems[i].operators[op] for i, op in c.factors})
        return h

    def reordered(self, order: Sequence[int]) -> "CompositeSystem":
        order = list(order)
        pos = {old: new for new, old in enumerate(order)}
        terms = [CouplingTerm(c.strength, tuple((pos[i], op) for i, op in c.factors)) for c in self.couplings]
        return CompositeSystem([self.subsystems[i] for i in order], terms)


@dataclass
class Spectrum:
    """Composite eigenpairs; ``vectors`` are expressed in the product of subsystem eigenbases.

    ``local_energies[i]`` holds the retained bare levels of subsystem ``i`` and
    ``dims`` the retained dimensions.
    """

    energies: np.ndarray
    vectors: np.ndarray
    dims: tuple[int, ...]
    local_energies: list[np.ndarray]
    local_bases: list[np.ndarray]
    method: str


def _to_local_basis(vectors: np.ndarray, dims, bases) -> np.ndarray:
    t = vectors.reshape(tuple(dims) + (vectors.shape[1],))
    for axis, u in enumerate(bases):
        t = np.moveaxis(np.tensordot(u.conj().T, t, axes=([1], [axis])), 0, axis)
    return t.reshape(vectors.shape)


def exact_diagonalize(system: CompositeSystem, cap: int = DEFAULT_DIMENSION_CAP) -> Spectrum:
    """Dense diagonalization of the full Hamiltonian (eigenvalues ascending)."""
    if system.total_dim > cap:
        raise DimensionCap(f"total dimension {system.total_dim} exceeds cap {cap}")
    e, v = np.linalg.eigh(system.hamiltonian())
    local = [s.eigensystem() for s in system.subsystems]
    bases = [u for _, u in local]
    return Spectrum(e, _to_local_basis(v, system.dims, bases), system.dims,
                    [le for le, _ in local], bases, "exact")


def truncated_system(system: CompositeSystem, keep: Sequence[int] | int):
    """Subsystems rewritten in their lowest ``keep`` eigenstates."""
    keep = [int(keep)] * len(system.subsystems) if np.isscalar(keep) else [int(k) for k in keep]
    if len(keep) != len(system.subsystems):
        raise ValueError("need one keep value per subsystem")
    subs, bases, local_e = [], [], []
    for s, k in zip(system.subsystems, keep):
        if k < 2:
            raise TruncationError(f"{s.name}: keep={k} < 2")
        if k > s.dim:
            raise TruncationError(f"{s.name}: keep={k} exceeds dimension {s.dim}")
        e, u = s.eigensystem()
        u = u[:, :k]
        subs.append(SubsystemSpec(s.name, np.diag(e[:k]),
                                  {name: u.conj().T @ op @ u for name, op in s.operators.items()}))
        bases.append(u)
        local_e.append(e[:k])
    return CompositeSystem(subs, system.couplings), bases, local_e


def hierarchical_diagonalize(system: CompositeSystem, keep: Sequence[int] | int,
                             cap: int = DEFAULT_DIMENSION_CAP) -> Spectrum:
    """Diagonalize each subsystem, truncate, transform the couplings, then diagonalize."""
    reduced, bases, local_e = truncated_system(system, keep)
    if reduced.total_dim > cap:
        raise DimensionCap(f"truncated dimension {reduced.total_dim} exceeds cap {cap}")
    e, v = np.linalg.eigh(reduced.hamiltonian())
    return Spectrum(e, v, reduced.dims, local_e, bases, "hierarchical")


@dataclass
class ComputationalStates:
    """Eigenstate index and squared overlap for each of the 8 qubit labels."""

    labels: tuple[str, ...]
    indices: tuple[int, ...]
    overlaps: tuple[float, ...]
    energies: np.ndarray  # relative to the composite ground state

    @property
    def min_overlap(self) -> float:
        return float(min(self.overlaps))

    def energy(self, label: str) -> float:
        return float(self.energies[self.labels.index(label)])


def identify_computational_states(spectrum: Spectrum, qubits: Sequence[int] = (0, 1, 2),
                                  threshold: float = 0.5) -> ComputationalStates:
    """Greedy maximum-overlap assignment of the 8 bare product labels.

    Every non-qubit subsystem is taken in its ground state.  Raises
    :class:`AmbiguousStates` when the smallest assigned overlap is below
    ``threshold``.
    """
    qubits = list(qubits)
    if len(qubits) != 3:
        raise ValueError("need exactly three qubit subsystems")
    labels, rows = [], []
    for st in sorted(BasisState.parse(f"{i:03b}") for i in range(8)):
        level = [0] * len(spectrum.dims)
        for q, b in zip(qubits, st.bits):
            level[q] = b
        labels.append(st.label)
        rows.append(np.ravel_multi_index(tuple(level), spectrum.dims))
    ov = np.abs(spectrum.vectors[rows, :]) ** 2
    order = np.argsort(-ov, axis=None, kind="stable")
    assigned: dict[int, int] = {}
    used: set[int] = set()
    for flat in order:
        r, c = divmod(int(flat), ov.shape[1])
        if r in assigned or c in used:
            continue
        assigned[r] = c
        used.add(c)
        if len(assigned) == len(rows):
            break
    idx = tuple(assigned[r] for r in range(len(rows)))
    overlaps = tuple(float(ov[r, idx[r]]) for r in range(len(rows)))
    e = spectrum.energies[list(idx)] - spectrum.energies[0]
    states = ComputationalStates(tuple(labels), idx, overlaps, e)
    if states.min_overlap < threshold:
        raise AmbiguousStates(
            f"minimum computational-state overlap {states.min_overlap:.3f} below {threshold}",
            min_overlap=states.min_overlap,
        )
    return states


@dataclass
class EffectiveExtraction:
    states: ComputationalStates
    transitions: tuple[str, ...]
    frequencies: np.ndarray
    params: HamiltonianParams
    residuals: np.ndarray

    @property
    def min_overlap(self) -> float:
        return self.states.min_overlap

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "min_overlap": self.min_overlap,
            "states": {lab: {"index": i, "overlap": o}
                       for lab, i, o in zip(self.states.labels, self.states.indices, self.states.overlaps)},
            "transitions_mhz": dict(zip(self.transitions, self.frequencies.tolist())),
            "residuals_mhz": self.residuals.tolist(),
        }


def extract_effective_params(states: ComputationalStates) -> EffectiveExtraction:
    """Fit the 7-parameter diagonal model to all 12 single-flip differences (unit weights)."""
    trans = enumerate_transitions()
    freqs = np.array([states.energy(t.upper.label) - states.energy(t.lower.label) for t in trans])
    meas = [FrequencyMeasurement(t, f, 1.0) for t, f in zip(trans, freqs)]
    res: EstimationResult = solve_least_squares(meas)
    return EffectiveExtraction(states, tuple(t.label for t in trans), freqs, res.params, res.residuals)


def analyze(system: CompositeSystem, qubits: Sequence[int] = (0, 1, 2), keep=None,
            threshold: float = 0.5) -> EffectiveExtraction:
    spec = exact_diagonalize(system) if keep is None else hierarchical_diagonalize(system, keep)
    return extract_effective_params(identify_computational_states(spec, qubits, threshold))


# --------------------------------------------------------------------------
# coupler template and gap sweep

DEFAULT_GAPS_MHZ = (50000.0, 40000.0, 30000.0, 20000.0, 15000.0, 12000.0,
                    10000.0, 9500.0, 9000.0, 8500.0, 8000.0)


@dataclass(frozen=True)
class CouplerTemplate:
    """Three multilevel qubits and a two-level coupler.

    Couplings: direct qubit-qubit ``z z`` (``zz``) and ``x x`` (``xx``) terms
    for pairs (12, 13, 23), and ``z_i z_c`` qubit-coupler terms (``g``).
    All values are free model parameters, not device values.
    """

    qubit_frequencies: tuple[float, float, float] = (5400.0, 4900.0, 2880.0)
    anharmonicity: float = 1600.0
    eta: float = 1.1
    levels: int = 3
    zz: tuple[float, float, float] = (-30.0, 75.0, 25.0)
    xx: tuple[float, float, float] = (-6.0, 6.0, 140.0)
    g: tuple[float, float, float] = (-550.0, 550.0, 400.0)

    def build(self, gap: float) -> CompositeSystem:
        if self.levels == 2:
            qs = [build_flux_qubit(0.0, f / 2, f"QB{i + 1}") for i, f in enumerate(self.qubit_frequencies)]
            # persistent-current operator is off-diagonal at the symmetry point
            qs = [q.rotated(np.array([[1, 1], [-1, 1]]) / np.sqrt(2)) for q in qs]
        elif self.levels == 3:
            qs = [build_multilevel_qubit(f, self.anharmonicity, self.eta, f"QB{i + 1}")
                  for i, f in enumerate(self.qubit_frequencies)]
        else:
            raise ValueError("levels must be 2 or 3")
        subs = qs + [build_coupler(gap, "C")]
        terms = []
        for (a, b), zz, xx in zip(((1, 2), (1, 3), (2, 3)), self.zz, self.xx):
            terms.append(CouplingTerm(zz, ((f"QB{a}", "z"), (f"QB{b}", "z"))))
            terms.append(CouplingTerm(xx, ((f"QB{a}", "x"), (f"QB{b}", "x"))))
        for i, gi in enumerate(self.g):
            terms.append(CouplingTerm(gi, ((f"QB{i + 1}", "z"), ("C", "z"))))
        return CompositeSystem(subs, terms)

    def to_dict(self) -> dict:
        return {
            "qubit_frequencies_mhz": list(self.qubit_frequencies),
            "anharmonicity_mhz": self.anharmonicity,
            "eta": self.eta,
            "levels": self.levels,
            "zz_mhz": list(self.zz),
            "xx_mhz": list(self.xx),
            "g_mhz": list(self.g),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CouplerTemplate":
        known = {"qubit_frequencies_mhz": "qubit_frequencies", "anharmonicity_mhz": "anharmonicity",
                 "eta": "eta", "levels": "levels", "zz_mhz": "zz", "xx_mhz": "xx", "g_mhz": "g"}
        unknown = set(data) - set(known)
        if unknown:
            raise KeyError(f"unknown template keys: {sorted(unknown)}")
        kw = {}
        for key, attr in known.items():
            if key in data:
                v = data[key]
                kw[attr] = tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else v
        if "levels" in kw:
            kw["levels"] = int(kw["levels"])
        return cls(**kw)


@dataclass
class SweepRow:
    gap: float
    params: HamiltonianParams
    min_overlap: float
    flagged: bool

    def csv_row(self) -> list:
        return [self.gap, *self.params.as_vector().tolist(), self.min_overlap, int(self.flagged)]


SWEEP_HEADER = ("gap_mhz", "omega1", "omega2", "omega3", "j12", "j13", "j23", "k123", "min_overlap", "flagged")


def coupler_gap_sweep(template: CouplerTemplate, gaps: Sequence[float] = DEFAULT_GAPS_MHZ,
                      threshold: float = 0.5) -> list[SweepRow]:
    """Extract effective parameters along a descending list of coupler gaps.

    Gaps where identification is ambiguous are kept and flagged; their
    parameters come from the best available assignment.
    """
    gaps = [float(g) for g in gaps]
    if any(b >= a for a, b in zip(gaps, gaps[1:])):
        raise ValueError("gap values must be strictly descending")
    rows = []
    for gap in gaps:
        spec = exact_diagonalize(template.build(gap))
        try:
            states = identify_computational_states(spec, threshold=threshold)
            flagged = False
        except AmbiguousStates:
            states = identify_computational_states(spec, threshold=0.0)
            flagged = True
        ext = extract_effective_params(states)
        rows.append(SweepRow(gap, ext.params, ext.min_overlap, flagged))
    return rows


def asymptotic_params(template: CouplerTemplate, largest_gap: float = DEFAULT_GAPS_MHZ[0]) -> HamiltonianParams:
    """Effective parameters with the coupler pushed ten times beyond ``largest_gap``."""
    return analyze(template.build(10.0 * largest_gap)).params


def monotonicity_violations(rows: Sequence[SweepRow]) -> list[tuple[float, float]]:
    """Consecutive gap pairs where ``|K|`` decreases as the gap shrinks."""
    out = []
    for a, b in zip(rows, rows[1:]):
        if abs(b.params.k123) < abs(a.params.k123):
            out.append((a.gap, b.gap))
    return out


# --------------------------------------------------------------------------
# JSON description

_BUILDERS = {
    "flux_qubit": lambda d, n: build_flux_qubit(float(d["epsilon_mhz"]), float(d["delta_mhz"]), n),
    "multilevel_qubit": lambda d, n: build_multilevel_qubit(
        float(d["frequency_mhz"]), float(d["anharmonicity_mhz"]), float(d.get("eta", 1.0)), n),
    "coupler": lambda d, n: build_coupler(float(d["gap_mhz"]), n),
    "oscillator": lambda d, n: build_oscillator(
        float(d["frequency_mhz"]), int(d["levels"]), float(d.get("anharmonicity_mhz", 0.0)), n),
}


def _matrix(data) -> np.ndarray:
    if isinstance(data, Mapping):
        return np.asarray(data["re"], dtype=float) + 1j * np.asarray(data.get("im", 0.0), dtype=float)
    return np.asarray(data, dtype=float)


def composite_from_dict(data: Mapping) -> CompositeSystem:
    """Build a system from ``{"subsystems": [...], "couplings": [...]}``.

    A subsystem either names a ``builder`` with its arguments or gives an
    explicit ``hamiltonian_mhz`` matrix and ``operators``.  A coupling is
    ``{"strength_mhz": s, "factors": [[subsystem, operator], ...]}``.
    """
    subs = []
    for i, d in enumerate(data["subsystems"]):
        name = d.get("name", f"S{i}")
        if "builder" in d:
            if d["builder"] not in _BUILDERS:
                raise KeyError(f"unknown builder {d['builder']!r}")
            subs.append(_BUILDERS[d["builder"]](d, name))
        else:
            ops = {k: _matrix(v) for k, v in d.get("operators", {}).items()}
            subs.append(SubsystemSpec(name, _matrix(d["hamiltonian_mhz"]), ops))
    terms = [CouplingTerm(float(c["strength_mhz"]), tuple((f[0], f[1]) for f in c["factors"]))
             for c in data.get("couplings", [])]
    return CompositeSystem(subs, terms)


def load_composite(path) -> CompositeSystem:
    return composite_from_dict(json.loads(Path(path).read_text()))
