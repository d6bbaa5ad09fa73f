"""Curve fitting: Ramsey fringes, Rabi oscillations, flux-noise regression,
and dispersion reconstruction from sampled slopes.

The nonlinear fits use a small Levenberg-Marquardt implementation with
analytic Jacobians so results do not depend on optimizer library versions.
Times are in ns and frequencies in MHz, so a phase is ``2*pi*f*t*1e-3``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateData, GridError, NonConvergence

TWO_PI_MHZ_NS = 2e-3 * math.pi  # rad per (MHz * ns)


@dataclass
class FitResult:
    names: tuple[str, ...]
    values: np.ndarray
    covariance: np.ndarray
    chi2_reduced: float
    n_iter: int
    converged: bool
    extra: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.errors[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            "params": {n: float(v) for n, v in zip(self.names, self.values)},
            "sigmas": {n: float(e) for n, e in zip(self.names, self.errors)},
            "covariance": self.covariance.tolist(),
            "chi2_reduced": float(self.chi2_reduced),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            **{k: v for k, v in self.extra.items()},
        }


def levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    p0,
    max_iter: int = 200,
    xtol: float = 1e-10,
    ftol: float = 1e-15,
    lam0: float = 1e-3,
):
    """Minimise ``sum(residual(p)**2)``.

    Returns ``(p, n_iter, converged)``.  Damping follows Marquardt's scaling
    by the diagonal of the normal matrix.
    """
    p = np.array(p0, dtype=float)
    r = residual(p)
    cost = float(r @ r)
    lam = lam0
    for it in range(1, max_iter + 1):
        jac = jacobian(p)
        jtj = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag <= 0] = 1.0
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_new = p + step
            r_new = residual(p_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            # no downhill step at any damping: at a (numerical) minimum
            return p, it, True
        small_step = np.all(np.abs(step) <= xtol * (np.abs(p) + xtol))
        small_gain = (cost - cost_new) <= ftol * max(cost, 1e-300)
        p, r, cost = p_new, r_new, cost_new
        lam = max(lam / 10.0, 1e-12)
        if small_step or small_gain:
            return p, it, True
    return p, max_iter, False


def _covariance(jac: np.ndarray, r: np.ndarray, n_params: int):
    dof = max(len(r) - n_params, 1)
    chi2_red = float(r @ r) / dof
    try:
        cov = np.linalg.inv(jac.T @ jac) * chi2_red
    except np.linalg.LinAlgError:
        cov = np.full((n_params, n_params), np.inf)
    return 0.5 * (cov + cov.T), chi2_red


# --------------------------------------------------------------------------
# Ramsey fringes

RAMSEY_NAMES = ("detuning", "t2", "amplitude", "phase", "offset", "background")


def ramsey_model(t, detuning, t2, amplitude, phase, offset, background, t1_background=math.inf):
    """``offset + background*exp(-t/T1bg) + amplitude*exp(-t/T2)*cos(2*pi*df*t + phase)``."""
    t = np.asarray(t, dtype=float)
    bg = np.exp(-t / t1_background) if math.isfinite(t1_background) else np.ones_like(t)
    env = np.exp(-t / t2) if math.isfinite(t2) else np.ones_like(t)
    return offset + background * bg + amplitude * env * np.cos(TWO_PI_MHZ_NS * detuning * t + phase)


def dominant_frequency(t, y, pad_factor: int = 16) -> float:
    """Largest non-DC peak of the zero-padded spectrum (MHz); ties go to the lower frequency."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    dt = float(np.median(np.diff(t)))
    n = len(y) * pad_factor
    spec = np.abs(np.fft.rfft((y - y.mean()) * np.hanning(len(y)), n=n))
    freqs = np.fft.rfftfreq(n, d=dt) * 1e3
    spec[0] = 0.0
    return float(freqs[int(np.argmax(spec))])  # argmax returns the first (lowest) maximum


def fit_ramsey(trace, initial_guess: dict | None = None) -> FitResult:
    """Fit a :class:`~threebody.pulse_sim.RamseyTrace`.

    The spectator background decay constant is read from the trace metadata
    (``t1_background_ns``) and held fixed; without it the background term is
    dropped.
    """
    t1_bg = float(trace.metadata.get("t1_background_ns", math.inf))
    return fit_fringe(trace.delays, trace.signal, initial_guess=initial_guess, t1_background=t1_bg)


def fit_fringe(
    delays,
    signal,
    initial_guess: dict | None = None,
    t1_background: float = math.inf,
    max_iter: int = 200,
) -> FitResult:
    """Fit a decaying fringe to raw arrays.

    Reported detuning is ``|df|`` (the sign is not observable from a single
    trace) and amplitude is non-negative.  When ``t1_background`` is infinite
    the background term is a second constant and is dropped from the fit.
    """
    t = np.asarray(delays, dtype=float)
    y = np.asarray(signal, dtype=float)
    if len(t) < 8:
        raise DegenerateData(f"need at least 8 samples, got {len(t)}")
    if np.ptp(y) == 0.0:
        raise DegenerateData("signal is constant")
    span = float(t[-1] - t[0])
    use_bg = math.isfinite(t1_background)
    bg_basis = np.exp(-t / t1_background) if use_bg else None

    guess = dict(initial_guess or {})
    f0 = guess.get("detuning")
    if f0 is None:
        f0 = dominant_frequency(t, y)
    if f0 * span * 1e-3 < 1.0:
        raise DegenerateData(
            f"trace spans {f0 * span * 1e-3:.2f} fringe periods; need at least one"
        )
    t2_0 = guess.get("t2", span / 3.0)

    # Linear solve for amplitude/phase/offsets at fixed frequency and decay.
    env = np.exp(-t / t2_0)
    cols = [env * np.cos(TWO_PI_MHZ_NS * f0 * t), env * np.sin(TWO_PI_MHZ_NS * f0 * t), np.ones_like(t)]
    if use_bg:
        cols.append(bg_basis)
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), y, rcond=None)
    amp0 = guess.get("amplitude", math.hypot(coef[0], coef[1]))
    phase0 = guess.get("phase", math.atan2(-coef[1], coef[0]))
    offset0 = guess.get("offset", coef[2])
    bg0 = guess.get("background", coef[3] if use_bg else 0.0)

    # internal parameters: detuning, decay rate (1/ns), amplitude, phase, offset[, background]
    def unpack(q):
        bg = q[5] if use_bg else 0.0
        return q[0], q[1], q[2], q[3], q[4], bg

    def model(q):
        df, gam, a, ph, c0, c1 = unpack(q)
        arg = TWO_PI_MHZ_NS * df * t + ph
        out = c0 + a * np.exp(-gam * t) * np.cos(arg)
        if use_bg:
            out = out + c1 * bg_basis
        return out

    def residual(q):
        return model(q) - y

    def jacobian(q):
        df, gam, a, ph, c0, c1 = unpack(q)
        e = np.exp(-gam * t)
        arg = TWO_PI_MHZ_NS * df * t + ph
        c, s = np.cos(arg), np.sin(arg)
        cols = [
            -a * e * s * TWO_PI_MHZ_NS * t,
            -a * t * e * c,
            e * c,
            -a * e * s,
            np.ones_like(t),
        ]
        if use_bg:
            cols.append(bg_basis)
        return np.column_stack(cols)

    q0 = [f0, 1.0 / t2_0, amp0, phase0, offset0] + ([bg0] if use_bg else [])
    q, n_iter, converged = levenberg_marquardt(residual, jacobian, q0, max_iter=max_iter)
    if not converged:
        raise NonConvergence(f"Ramsey fit did not converge in {max_iter} iterations")
    jac = jacobian(q)
    r = residual(q)
    cov_q, chi2_red = _covariance(jac, r, len(q))
    if np.var(y) <= 1.05 * chi2_red:
        raise DegenerateData("signal variance is at the noise floor")

    # canonical sign conventions
    sign = np.ones(len(q))
    q = q.copy()
    if q[2] < 0:
        q[2] = -q[2]
        q[3] += math.pi
        sign[2] = -1
    if q[0] < 0:
        q[0] = -q[0]
        q[3] = -q[3]
        sign[0] = -1
        sign[3] = -1
    q[3] = (q[3] + math.pi) % (2 * math.pi) - math.pi
    cov_q = cov_q * np.outer(sign, sign)

    # rate -> T2
    gam = q[1]
    jac_t = np.eye(len(q))
    t2 = 1.0 / gam if gam != 0 else math.inf
    jac_t[1, 1] = -1.0 / gam**2 if gam != 0 else 0.0
    values = q.copy()
    values[1] = t2
    cov = jac_t @ cov_q @ jac_t.T
    if not use_bg:
        values = np.append(values, 0.0)
        cov = np.pad(cov, ((0, 1), (0, 1)))
    return FitResult(RAMSEY_NAMES, values, cov, chi2_red, n_iter, converged,
                     extra={"t1_background": t1_background})


def transition_from_fit(drive_frequency: float, fit: FitResult, side: str = "above",
                        drive_sigma: float = 0.0) -> tuple[float, float]:
    """Transition frequency = drive +/- detuning; ``side`` says where the transition lies."""
    if side not in ("above", "below"):
        raise ValueError("side must be 'above' or 'below'")
    df = fit["detuning"]
    sigma = math.hypot(fit.error("detuning"), drive_sigma)
    return (drive_frequency + df if side == "above" else drive_frequency - df), sigma


# --------------------------------------------------------------------------
# Rabi oscillations and photon order

RABI_NAMES = ("rabi_frequency", "decay", "amplitude", "phase", "offset")


def fit_rabi(durations, signal, initial_guess: dict | None = None, max_iter: int = 200) -> FitResult:
    """Fit ``exp(-t/tau) * (c + a*cos(2 pi f t + phase))`` to a Rabi trace."""
    t = np.asarray(durations, dtype=float)
    y = np.asarray(signal, dtype=float)
    if len(t) < 8:
        raise DegenerateData(f"need at least 8 samples, got {len(t)}")
    if np.ptp(y) == 0.0:
        raise DegenerateData("signal is constant (no drive?)")
    guess = dict(initial_guess or {})
    f0 = guess.get("rabi_frequency") or dominant_frequency(t, y)
    span = float(t[-1] - t[0])
    if f0 * span * 1e-3 < 1.0:
        raise DegenerateData("trace spans less than one Rabi period")
    tau0 = guess.get("decay", 2.0 * span)
    env = np.exp(-t / tau0)
    arg = TWO_PI_MHZ_NS * f0 * t
    coef, *_ = np.linalg.lstsq(np.column_stack([env * np.cos(arg), env * np.sin(arg), env]), y, rcond=None)
    q0 = [f0, 1.0 / tau0, math.hypot(coef[0], coef[1]), math.atan2(-coef[1], coef[0]), coef[2]]

    def residual(q):
        f, g, a, ph, c = q
        return np.exp(-g * t) * (c + a * np.cos(TWO_PI_MHZ_NS * f * t + ph)) - y

    def jacobian(q):
        f, g, a, ph, c = q
        e = np.exp(-g * t)
        arg = TWO_PI_MHZ_NS * f * t + ph
        co, si = np.cos(arg), np.sin(arg)
        return np.column_stack([
            -a * e * si * TWO_PI_MHZ_NS * t,
            -t * e * (c + a * co),
            e * co,
            -a * e * si,
            e,
        ])

    q, n_iter, converged = levenberg_marquardt(residual, jacobian, q0, max_iter=max_iter)
    if not converged:
        raise NonConvergence(f"Rabi fit did not converge in {max_iter} iterations")
    cov, chi2_red = _covariance(jacobian(q), residual(q), len(q))
    sign = np.ones(5)
    q = q.copy()
    if q[2] < 0:
        q[2], q[3], sign[2] = -q[2], q[3] + math.pi, -1
    if q[0] < 0:
        q[0], q[3] = -q[0], -q[3]
        sign[0] = sign[3] = -1
    q[3] = (q[3] + math.pi) % (2 * math.pi) - math.pi
    cov = cov * np.outer(sign, sign)
    jt = np.eye(5)
    jt[1, 1] = -1.0 / q[1] ** 2 if q[1] != 0 else 0.0
    values = q.copy()
    values[1] = 1.0 / q[1] if q[1] != 0 else math.inf
    return FitResult(RABI_NAMES, values, jt @ cov @ jt.T, chi2_red, n_iter, converged)


def classify_photon_order(rabi_freq_at_a: float, rabi_freq_at_2a: float, tol: float = 0.5):
    """Return 1, 2, or ``"ambiguous"`` from the Rabi-frequency ratio at doubled amplitude."""
    if rabi_freq_at_a <= 0 or rabi_freq_at_2a <= 0:
        raise ValueError("Rabi frequencies must be positive")
    r = rabi_freq_at_2a / rabi_freq_at_a
    if abs(r - 2.0) < tol:
        return 1
    if abs(r - 4.0) < tol:
        return 2
    return "ambiguous"


# --------------------------------------------------------------------------
# Flux noise

LN2 = math.log(2.0)


@dataclass(frozen=True)
class DephasingPoint:
    flux_slope: float  # |d omega / d Phi|, rad/s per flux quantum
    gamma_phi: float  # pure dephasing rate, 1/s

    def __post_init__(self):
        if self.flux_slope < 0 or self.gamma_phi < 0:
            raise ValueError("flux_slope and gamma_phi are magnitudes (>= 0)")


def dephasing_rate(sqrt_amplitude: float, flux_slope: float) -> float:
    """Gaussian 1/f flux noise: ``Gamma = sqrt(A ln 2) * |d omega/d Phi|`` with ``sqrt_amplitude = sqrt(A)``."""
    return sqrt_amplitude * math.sqrt(LN2) * abs(flux_slope)


@dataclass(frozen=True)
class FluxNoiseFit:
    sqrt_amplitude: float  # flux quanta
    sigma: float
    slope: float  # fitted Gamma / |d omega/d Phi|
    n_points: int

    @property
    def sqrt_amplitude_uphi0(self) -> float:
        return self.sqrt_amplitude * 1e6

    @property
    def sigma_uphi0(self) -> float:
        return self.sigma * 1e6

    def to_dict(self) -> dict:
        return {
            "sqrt_amplitude_uphi0": self.sqrt_amplitude_uphi0,
            "sigma_uphi0": self.sigma_uphi0,
            "slope": self.slope,
            "n_points": self.n_points,
        }


def fit_flux_noise(points: Sequence[DephasingPoint], slope_unit: str = "angular") -> FluxNoiseFit:
    """Zero-intercept regression of dephasing rate against flux slope.

    ``slope_unit="linear"`` means the slopes are in Hz per flux quantum and get
    multiplied by ``2*pi``.
    """
    if slope_unit not in ("angular", "linear"):
        raise ValueError("slope_unit must be 'angular' or 'linear'")
    x = np.array([p.flux_slope for p in points], dtype=float)
    y = np.array([p.gamma_phi for p in points], dtype=float)
    if slope_unit == "linear":
        x = x * 2 * math.pi
    if len(x) < 2 or np.all(x == x[0]):
        raise DegenerateData("need at least two points with distinct flux slopes")
    sxx = float(x @ x)
    b = float(x @ y) / sxx
    resid = y - b * x
    s2 = float(resid @ resid) / (len(x) - 1)
    sigma_b = math.sqrt(s2 / sxx)
    scale = 1.0 / math.sqrt(LN2)
    return FluxNoiseFit(b * scale, sigma_b * scale, b, len(x))


def synthetic_dephasing_points(sqrt_amplitude: float, flux_slopes, relative_noise: float = 0.0,
                               rng: np.random.Generator | None = None) -> list[DephasingPoint]:
    pts = []
    for x in np.asarray(flux_slopes, dtype=float):
        g = dephasing_rate(sqrt_amplitude, x)
        if rng is not None and relative_noise > 0:
            g = abs(g * (1.0 + relative_noise * rng.normal()))
        pts.append(DephasingPoint(float(abs(x)), float(g)))
    return pts


# --------------------------------------------------------------------------
# Dispersion from slopes

def reconstruct_dispersion(flux_grid, slope_samples) -> np.ndarray:
    """Cumulative trapezoidal integral of the slope, zero at the first grid point.

    The result is meaningful only up to an additive linear function of flux.
    """
    x = np.asarray(flux_grid, dtype=float)
    s = np.asarray(slope_samples, dtype=float)
    if x.shape != s.shape or x.ndim != 1:
        raise GridError("flux grid and slopes must be 1-D arrays of equal length")
    if len(x) < 2 or np.any(np.diff(x) <= 0):
        raise GridError("flux grid must be strictly increasing")
    out = np.zeros_like(s)
    out[1:] = np.cumsum(0.5 * (s[1:] + s[:-1]) * np.diff(x))
    return out


def remove_tilt(flux_grid, curve) -> np.ndarray:
    """Subtract the least-squares straight line."""
    x = np.asarray(flux_grid, dtype=float)
    y = np.asarray(curve, dtype=float)
    coef = np.polyfit(x, y, 1)
    return y - np.polyval(coef, x)
