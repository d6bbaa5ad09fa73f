"""Synthetic experiments on the diagonal three-qubit model.

Two routes produce Ramsey data:

* :func:`simulate_ramsey_trace` evaluates the closed-form fringe model with
  decay envelopes and seeded Gaussian readout noise.
* :func:`simulate_sequence_unitary` propagates the 8-level state through a
  pulse sequence using exact matrix exponentials of rotating-wave drive
  Hamiltonians, with free evolution during delays.

Units: MHz for frequencies, ns for times.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidSequence, NyquistViolation
from .spin_model import (
    BasisState,
    HamiltonianParams,
    TransitionId,
    energies,
    preparation_path,
    transition_frequency,
)

TWO_PI_MHZ_NS = 2e-3 * math.pi


class SpectatorWarning(UserWarning):
    """Drive strong enough to address neighbouring transitions of the same qubit."""


@dataclass(frozen=True)
class DecoherenceConfig:
    t1: tuple[float, float, float] = (math.inf, math.inf, math.inf)
    t2: tuple[float, float, float] = (math.inf, math.inf, math.inf)
    t1_background: float = math.inf  # spectator-qubit decay seen by the readout

    def __post_init__(self):
        t1 = tuple(float(x) for x in self.t1)
        t2 = tuple(float(x) for x in self.t2)
        if len(t1) != 3 or len(t2) != 3:
            raise ValueError("t1 and t2 need one entry per qubit")
        for a, b in zip(t1, t2):
            if a <= 0 or b <= 0:
                raise ValueError("decay constants must be positive")
            if b > 2 * a:
                raise ValueError(f"T2={b} exceeds 2*T1={2 * a}")
        if self.t1_background <= 0:
            raise ValueError("t1_background must be positive")
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "t2", t2)
        object.__setattr__(self, "t1_background", float(self.t1_background))

    @classmethod
    def coupled_preset(cls) -> "DecoherenceConfig":
        """Coherence with all qubits and the coupler at their operating points."""
        return cls(t1=(467.0, 338.0, 289.0), t2=(142.0, 95.0, 146.0), t1_background=365.0)

    @classmethod
    def uniform(cls, t1: float, t2: float, t1_background: float = math.inf) -> "DecoherenceConfig":
        return cls((t1,) * 3, (t2,) * 3, t1_background)


@dataclass
class RamseyTrace:
    delays: np.ndarray  # ns
    signal: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.delays.shape != self.signal.shape or self.delays.ndim != 1:
            raise ValueError("delays and signal must be 1-D arrays of equal length")
        if np.any(np.diff(self.delays) <= 0):
            raise ValueError("delays must be strictly increasing")

    def write(self, csv_path, x_name: str = "delay_ns") -> tuple[Path, Path]:
        """Write ``<name>.csv`` plus a ``<name>.json`` metadata sidecar."""
        from ._io import atomic_write_text, dumps_json

        csv_path = Path(csv_path)
        lines = [f"{x_name},signal"] + [f"{d!r},{s!r}" for d, s in zip(self.delays.tolist(), self.signal.tolist())]
        atomic_write_text(csv_path, "\n".join(lines) + "\n")
        meta_path = csv_path.with_suffix(".json")
        atomic_write_text(meta_path, dumps_json(self.metadata))
        return csv_path, meta_path

    @classmethod
    def read(cls, csv_path) -> "RamseyTrace":
        csv_path = Path(csv_path)
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        meta_path = csv_path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(data[:, 0], data[:, 1], meta)


RabiTrace = RamseyTrace  # same container; x axis is pulse duration


def nyquist_limit(delays) -> float:
    """Highest unaliased detuning (MHz) for the smallest delay step."""
    step = float(np.min(np.diff(np.asarray(delays, dtype=float))))
    return 1e3 / (2.0 * step)


def simulate_ramsey_trace(
    truth: HamiltonianParams,
    t: TransitionId,
    drive_frequency: float,
    decoherence: DecoherenceConfig | None = None,
    noise_sigma: float = 0.0,
    seed: int | None = 0,
    delays=None,
    amplitude: float = 0.5,
    offset: float = 0.5,
    background: float = 0.0,
    phase: float = 0.0,
) -> RamseyTrace:
    """Closed-form Ramsey fringe for transition ``t`` driven at ``drive_frequency``.

    ``signal = offset + background*exp(-t/T1bg) + amplitude*exp(-t/T2)*cos(2 pi df t + phase)``
    with ``df = f_true - drive`` and ``T2`` that of the flipped qubit.
    """
    decoherence = decoherence or DecoherenceConfig()
    if delays is None:
        delays = np.arange(0.0, 600.0, 2.0)
    delays = np.asarray(delays, dtype=float)
    f_true = transition_frequency(truth, t)
    df = f_true - drive_frequency
    limit = nyquist_limit(delays)
    if abs(df) >= limit:
        raise NyquistViolation(f"|detuning| {abs(df):.3f} MHz >= Nyquist limit {limit:.3f} MHz")
    t2 = decoherence.t2[t.flipped_qubit - 1]
    t1_bg = decoherence.t1_background
    env = np.exp(-delays / t2) if math.isfinite(t2) else np.ones_like(delays)
    bg = np.exp(-delays / t1_bg) if math.isfinite(t1_bg) else np.ones_like(delays)
    signal = offset + background * bg + amplitude * env * np.cos(TWO_PI_MHZ_NS * df * delays + phase)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        signal = signal + rng.normal(0.0, noise_sigma, size=signal.shape)
    meta = {
        "transition": t.label,
        "drive_frequency_mhz": float(drive_frequency),
        "true_frequency_mhz": float(f_true),
        "detuning_mhz": float(abs(df)),
        "side": "above" if df >= 0 else "below",
        "noise_sigma": float(noise_sigma),
        "seed": seed,
        "t2_ns": t2,
        "t1_background_ns": t1_bg,
    }
    return RamseyTrace(delays, signal, meta)


# --------------------------------------------------------------------------
# Unitary pulse-sequence simulation

@dataclass(frozen=True)
class Pulse:
    """Rectangular RWA pulse on the transition ``lower -> upper``.

    ``drive_frequency=None`` means resonant with the transition of the model
    being simulated.  ``angle`` is the nominal rotation (pi, pi/2, ...).
    """

    lower: BasisState
    upper: BasisState
    angle: float
    duration: float  # ns
    drive_frequency: float | None = None
    phase: float = 0.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("pulse duration must be positive")

    @classmethod
    def on(cls, transition: TransitionId | str, angle: float, duration: float,
           drive_frequency: float | None = None, phase: float = 0.0) -> "Pulse":
        if isinstance(transition, str):
            transition = TransitionId.parse(transition)
        return cls(transition.lower, transition.upper, angle, duration, drive_frequency, phase)


DELAY = "delay"


@dataclass(frozen=True)
class PulseSequence:
    items: tuple  # Pulse instances and at most one DELAY marker
    readout: BasisState | None = None

    def __post_init__(self):
        items = tuple(self.items)
        n_delay = sum(1 for it in items if isinstance(it, str))
        if any(isinstance(it, str) and it != DELAY for it in items):
            raise InvalidSequence("only the 'delay' placeholder is allowed besides pulses")
        if n_delay > 1:
            raise InvalidSequence("a sequence holds at most one delay placeholder")
        object.__setattr__(self, "items", items)

    @property
    def pulses(self) -> list[Pulse]:
        return [it for it in self.items if isinstance(it, Pulse)]


def ramsey_sequence(
    truth: HamiltonianParams,
    t: TransitionId,
    drive_frequency: float,
    pi_duration: float = 20.0,
    half_pi_duration: float = 10.0,
) -> PulseSequence:
    """Climb to ``t.lower`` with resonant pi pulses, then pi/2 - delay - pi/2 at ``drive_frequency``."""
    items = [Pulse.on(step, math.pi, pi_duration, transition_frequency(truth, step))
             for step in preparation_path(t.lower)]
    items += [
        Pulse.on(t, math.pi / 2, half_pi_duration, drive_frequency),
        DELAY,
        Pulse.on(t, math.pi / 2, half_pi_duration, drive_frequency),
    ]
    return PulseSequence(tuple(items), readout=t.upper)


def _coupled_pairs(pulse: Pulse, mode: str) -> list[tuple[int, int]]:
    diff = [i for i in range(3) if pulse.lower.bits[i] != pulse.upper.bits[i]]
    if len(diff) != 1 or pulse.lower.bits[diff[0]] != 0:
        raise InvalidSequence(f"pulse {pulse.lower}->{pulse.upper} does not address adjacent states")
    if mode == "block":
        return [(pulse.lower.index, pulse.upper.index)]
    q = diff[0]
    pairs = []
    for idx in range(8):
        bits = [(idx >> (2 - i)) & 1 for i in range(3)]
        if bits[q] == 0:
            pairs.append((idx, idx | (1 << (2 - q))))
    return pairs


def _propagate_pulse(c, t0, pulse: Pulse, e, mode):
    pairs = _coupled_pairs(pulse, mode)
    a0, b0 = pulse.lower.index, pulse.upper.index
    fd = pulse.drive_frequency if pulse.drive_frequency is not None else e[b0] - e[a0]
    omega = pulse.angle / pulse.duration  # rad/ns
    if mode == "qubit":
        rabi_mhz = omega / TWO_PI_MHZ_NS
        gaps = [abs((e[b] - e[a]) - fd) for a, b in pairs if (a, b) != (a0, b0)]
        if gaps and rabi_mhz > 0.5 * min(gaps):
            warnings.warn(f"Rabi frequency {rabi_mhz:.2f} MHz is not small against spectator "
                          f"detuning {min(gaps):.2f} MHz", SpectatorWarning, stacklevel=3)
    nu = e.copy()
    for a, b in pairs:
        nu[b] = e[a] + fd
    h = np.diag(TWO_PI_MHZ_NS * (e - nu)).astype(complex)
    for a, b in pairs:
        h[b, a] = 0.5 * omega * np.exp(-1j * pulse.phase)
        h[a, b] = np.conj(h[b, a])
    lam, vec = np.linalg.eigh(h)
    u = (vec * np.exp(-1j * lam * pulse.duration)) @ vec.conj().T
    c_rot = np.exp(1j * TWO_PI_MHZ_NS * nu * t0) * c
    c_rot = u @ c_rot
    t1 = t0 + pulse.duration
    return np.exp(-1j * TWO_PI_MHZ_NS * nu * t1) * c_rot, t1


def simulate_sequence_unitary(
    truth: HamiltonianParams,
    seq: PulseSequence,
    delays=(0.0,),
    readout: BasisState | str | None = None,
    mode: str = "block",
    return_all: bool = False,
):
    """Population of ``readout`` (default ``seq.readout`` or 000) after each delay value.

    ``mode="block"`` drives only the addressed two-level block; ``mode="qubit"``
    applies the drive to all four transitions of the flipped qubit.
    With ``return_all=True`` the full (n_delays, 8) population array is returned.
    """
    if mode not in ("block", "qubit"):
        raise ValueError("mode must be 'block' or 'qubit'")
    if isinstance(readout, str):
        readout = BasisState.parse(readout)
    readout = readout or seq.readout or BasisState((0, 0, 0))
    e = energies(truth)
    delays = np.atleast_1d(np.asarray(delays, dtype=float))
    pops = np.empty((len(delays), 8))
    for k, d in enumerate(delays):
        c = np.zeros(8, dtype=complex)
        c[0] = 1.0
        now = 0.0
        for item in seq.items:
            if isinstance(item, Pulse):
                c, now = _propagate_pulse(c, now, item, e, mode)
            else:
                c = np.exp(-1j * TWO_PI_MHZ_NS * e * d) * c
                now += d
        pops[k] = np.abs(c) ** 2
    return pops if return_all else pops[:, readout.index]


# --------------------------------------------------------------------------
# Rabi traces

def rabi_frequency(drive_amplitude: float, photon_order: int, rabi_scale: float = 10.0) -> float:
    """Rabi frequency in MHz: ``rabi_scale * amplitude**n``."""
    if photon_order not in (1, 2):
        raise ValueError("photon order must be 1 or 2")
    return rabi_scale * abs(drive_amplitude) ** photon_order


def simulate_rabi(
    drive_amplitude: float,
    photon_order: int,
    durations,
    noise_sigma: float = 0.0,
    seed: int | None = 0,
    rabi_scale: float = 10.0,
    decay: float = 1000.0,
) -> RamseyTrace:
    """Excited population ``0.5*(1 - cos(2 pi f_R t))*exp(-t/decay)`` plus noise."""
    f_r = rabi_frequency(drive_amplitude, photon_order, rabi_scale)
    t = np.asarray(durations, dtype=float)
    env = np.exp(-t / decay) if math.isfinite(decay) else np.ones_like(t)
    signal = 0.5 * (1.0 - np.cos(TWO_PI_MHZ_NS * f_r * t)) * env
    if noise_sigma > 0:
        signal = signal + np.random.default_rng(seed).normal(0.0, noise_sigma, size=t.shape)
    meta = {
        "drive_amplitude": float(drive_amplitude),
        "photon_order": int(photon_order),
        "rabi_frequency_mhz": f_r,
        "noise_sigma": float(noise_sigma),
        "seed": seed,
        "decay_ns": decay,
    }
    return RamseyTrace(t, signal, meta)
