"""Flux-crosstalk calibration against a feature-level virtual device.

Loop fluxes follow ``f = C V + f0`` (flux quanta, volts).  The device does not
model resonator physics; it only renders the features the calibration
consumes:

* a 1D resonator trace per qubit loop with Lorentzian dips wherever that loop
  sits at a half-integer flux, and
* a 2D coupler map over the two coupler fluxes whose minima form a lattice
  at ``(f_c1, f_c2) = (1/2, 1/2) mod 1``.

Calibration works in a virtual frame ``V = M u``.  Each iteration measures
``P = C M`` from feature positions and updates ``M <- M P^-1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from .errors import NoFeatureFound, SingularCorrection
from .fitters import levenberg_marquardt

DEFAULT_LABELS = ("QB1", "QB2", "QB3", "C1", "C2")


@dataclass
class CrosstalkModel:
    """Linear map ``f = C V + f0``; ``C`` in flux quanta per volt."""

    matrix: np.ndarray
    offsets: np.ndarray
    labels: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        self.matrix = np.array(self.matrix, dtype=float)
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n):
            raise ValueError("crosstalk matrix must be square")
        self.offsets = np.array(self.offsets, dtype=float).reshape(n)
        if len(self.labels) != n:
            self.labels = tuple(f"L{i + 1}" for i in range(n))
        self.labels = tuple(self.labels)
        if np.any(np.diag(self.matrix) == 0):
            raise ValueError("crosstalk matrix has a zero diagonal entry")
        if np.linalg.cond(self.matrix) > 1e12:
            raise ValueError("crosstalk matrix is not invertible")

    @property
    def n_loops(self) -> int:
        return self.matrix.shape[0]

    def flux(self, voltages) -> np.ndarray:
        """Loop fluxes for voltages of shape ``(..., N)``."""
        v = np.asarray(voltages, dtype=float)
        return v @ self.matrix.T + self.offsets

    @classmethod
    def identity(cls, n: int = 5, labels=DEFAULT_LABELS) -> "CrosstalkModel":
        return cls(np.eye(n), np.zeros(n), labels)

    @classmethod
    def random(cls, rng, n: int = 5, max_offdiag: float = 0.1, diag_range=(0.8, 1.25),
               labels=DEFAULT_LABELS) -> "CrosstalkModel":
        """Diagonal in ``diag_range``, off-diagonals up to ``max_offdiag`` of their column diagonal."""
        rng = np.random.default_rng(rng)
        d = rng.uniform(*diag_range, size=n)
        rel = rng.uniform(-max_offdiag, max_offdiag, size=(n, n))
        np.fill_diagonal(rel, 0.0)
        c = rel * d[None, :] + np.diag(d)
        return cls(c, rng.uniform(0.0, 1.0, size=n), labels)

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "matrix": self.matrix.tolist(), "offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "CrosstalkModel":
        m = np.asarray(data["matrix"], dtype=float)
        labels = data.get("labels") or (DEFAULT_LABELS if len(m) == 5 else tuple(f"L{i + 1}" for i in range(len(m))))
        return cls(m, data.get("offsets", np.zeros(len(m))), tuple(labels))


@dataclass
class VirtualDevice:
    """Feature generator for a device with ``n_qubits`` qubit loops followed by coupler loops.

    ``hysteresis`` shifts the first coupler flux seen by the 2D map by that
    many flux quanta when the map is swept backwards (``direction=-1``).
    """

    truth: CrosstalkModel
    n_qubits: int = 3
    dip_width: float = 0.03  # Lorentzian HWHM in flux quanta
    dip_depth: float = 1.0
    noise_sigma: float = 0.0
    map_noise_sigma: float | None = None
    hysteresis: float = 0.0
    stripe: float = 0.25
    seed: int | None = 0
    measurement_count: int = field(default=0, init=False)

    def __post_init__(self):
        n_c = self.truth.n_loops - self.n_qubits
        if n_c not in (0, 2):
            raise ValueError("device needs either zero or two coupler loops after the qubit loops")
        self._rng = np.random.default_rng(self.seed)

    @property
    def coupler_loops(self) -> tuple[int, ...]:
        return tuple(range(self.n_qubits, self.truth.n_loops))

    @classmethod
    def realistic(cls, truth: CrosstalkModel, seed: int | None = 0, **kw) -> "VirtualDevice":
        """Noise preset used for the calibration targets."""
        opts = dict(noise_sigma=0.05, map_noise_sigma=0.1, dip_width=0.03, hysteresis=0.01)
        opts.update(kw)
        return cls(truth, seed=seed, **opts)

    def flux(self, voltages) -> np.ndarray:
        return self.truth.flux(voltages)

    def persistent_currents(self, voltages) -> np.ndarray:
        """Normalised loop currents; periodic in every loop flux with period one."""
        return np.sin(2 * np.pi * self.flux(voltages))

    def _noise(self, shape, sigma) -> np.ndarray:
        self.measurement_count += 1
        if sigma <= 0:
            return np.zeros(shape)
        return self._rng.normal(0.0, sigma, size=shape)

    def measure_trace(self, loop: int, voltages) -> np.ndarray:
        """Transmission along a path of voltage vectors, shape ``(M, N)``."""
        if not 0 <= loop < self.n_qubits:
            raise ValueError(f"loop {loop} is not a qubit loop")
        f = self.flux(voltages)[:, loop]
        d = np.mod(f, 1.0) - 0.5
        clean = 1.0 - self.dip_depth / (1.0 + (d / self.dip_width) ** 2)
        return clean + self._noise(clean.shape, self.noise_sigma)

    def measure_coupler_map(self, voltages, direction: int = 1) -> np.ndarray:
        """Coupler image over a grid of voltage vectors, shape ``(M1, M2, N)``."""
        if not self.coupler_loops:
            raise ValueError("device has no coupler loops")
        c1, c2 = self.coupler_loops
        f = self.flux(voltages)
        a = f[..., c1] + (self.hysteresis if direction < 0 else 0.0)
        b = f[..., c2]
        clean = np.cos(2 * np.pi * a) + np.cos(2 * np.pi * b) + self.stripe * np.cos(2 * np.pi * (a - b))
        sigma = self.noise_sigma if self.map_noise_sigma is None else self.map_noise_sigma
        return clean + self._noise(clean.shape, sigma)


def device_measure_trace(device: VirtualDevice, loop: int, voltage_sweep, others_fixed=None) -> np.ndarray:
    """Sweep the raw voltage of ``loop`` with every other source held at ``others_fixed``."""
    sweep = np.asarray(voltage_sweep, dtype=float)
    base = np.zeros(device.truth.n_loops) if others_fixed is None else np.asarray(others_fixed, dtype=float)
    v = np.tile(base, (len(sweep), 1))
    v[:, loop] = sweep
    return device.measure_trace(loop, v)


def device_measure_coupler_map(device: VirtualDevice, v1_grid, v2_grid, others_fixed=None,
                               direction: int = 1) -> np.ndarray:
    """Raw-voltage map; axis 0 follows the first coupler source, axis 1 the second."""
    g1, g2 = np.meshgrid(np.asarray(v1_grid, float), np.asarray(v2_grid, float), indexing="ij")
    base = np.zeros(device.truth.n_loops) if others_fixed is None else np.asarray(others_fixed, dtype=float)
    v = np.broadcast_to(base, g1.shape + (len(base),)).copy()
    c1, c2 = device.coupler_loops
    v[..., c1] = g1
    v[..., c2] = g2
    return device.measure_coupler_map(v, direction=direction)


# --------------------------------------------------------------------------
# feature extraction

def _lorentzian_refine(x, y, x0, w0, depth0, base0):
    def model(p):
        return p[3] - p[2] / (1.0 + ((x - p[0]) / p[1]) ** 2)

    def residual(p):
        return model(p) - y

    def jacobian(p):
        u = (x - p[0]) / p[1]
        den = 1.0 + u * u
        dd = p[2] / den**2 * 2 * u  # d model / d u
        return np.column_stack([-dd / p[1], -dd * u / p[1], -1.0 / den, np.ones_like(x)])

    p, _, _ = levenberg_marquardt(residual, jacobian, [x0, w0, depth0, base0], max_iter=100)
    return p


def extract_dips(x, y, snr: float = 5.0, edge_widths: float = 2.0) -> np.ndarray:
    """Sub-grid dip centres of a 1D trace, sorted ascending.

    Candidates come from peak finding on the inverted trace; each is seeded
    by parabolic interpolation and refined with a local Lorentzian fit.
    Dips closer than ``edge_widths`` half-widths to either end are dropped.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = float(np.median(np.diff(x)))
    base = float(np.median(y))
    inv = base - y
    noise = float(np.median(np.abs(np.diff(y))) / (0.6745 * np.sqrt(2.0)))
    height = max(snr * noise, 1e-9 * max(np.ptp(y), 1e-300))
    if np.ptp(y) == 0.0:
        raise NoFeatureFound("trace is flat")
    smooth = ndimage.gaussian_filter1d(inv, 1.5) if noise > 0 else inv
    peaks, _ = signal.find_peaks(smooth, height=height, prominence=height)
    if len(peaks) == 0:
        raise NoFeatureFound(f"no dip above {snr:g} x noise ({noise:.3g})")
    widths = signal.peak_widths(smooth, peaks, rel_height=0.5)[0] * dx / 2.0
    out = []
    for k, w in zip(peaks, widths):
        w = max(w, 2 * dx)
        if 0 < k < len(y) - 1:
            ym, y0, yp = smooth[k - 1], smooth[k], smooth[k + 1]
            den = ym - 2 * y0 + yp
            x0 = x[k] + (0.5 * dx * (ym - yp) / den if den != 0 else 0.0)
        else:
            x0 = x[k]
        sel = np.abs(x - x0) <= 4 * w
        if sel.sum() < 6:
            continue
        p = _lorentzian_refine(x[sel], y[sel], x0, w, smooth[k], base)
        c, hw = p[0], abs(p[1])
        if not np.isfinite(c) or abs(c - x0) > 2 * w:
            c, hw = x0, w
        if c - edge_widths * hw < x[0] or c + edge_widths * hw > x[-1]:
            continue
        out.append(c)
    if not out:
        raise NoFeatureFound("all dips too close to the sweep edges")
    return np.sort(np.array(out))


@dataclass
class Lattice:
    """Points ``origin + basis @ n``; ``basis`` columns are the two lattice vectors."""

    origin: np.ndarray
    basis: np.ndarray
    points: np.ndarray
    indices: np.ndarray

    @property
    def shear(self) -> float:
        """Ratio of the first vector's second component to its first."""
        return float(self.basis[1, 0] / self.basis[0, 0])


def _quadratic_min(img, i, j, r):
    """Minimum of a quadratic surface fitted to the ``(2r+1)^2`` patch around pixel (i, j)."""
    di, dj = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    z = img[i - r:i + r + 1, j - r:j + r + 1].ravel()
    a = np.column_stack([np.ones(z.size), di.ravel(), dj.ravel(), di.ravel() ** 2,
                         di.ravel() * dj.ravel(), dj.ravel() ** 2])
    c, *_ = np.linalg.lstsq(a, z, rcond=None)
    h = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    try:
        off = np.linalg.solve(h, -c[1:3])
    except np.linalg.LinAlgError:
        return None
    if np.any(np.abs(off) > r) or np.linalg.eigvalsh(h).min() <= 0:
        return None
    return off


def extract_lattice(x1, x2, image, min_points: int = 4, smooth_px: float = 1.5,
                    patch_radius: int | None = None) -> Lattice:
    """Locate image minima and fit them with a two-vector lattice.

    ``x1``/``x2`` are the (uniform) coordinates of axis 0 and axis 1.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    img = np.asarray(image, dtype=float)
    d1, d2 = x1[1] - x1[0], x2[1] - x2[0]
    sm = ndimage.gaussian_filter(img, smooth_px) if smooth_px > 0 else img
    # the filter size is a third of the span; the lattice period exceeds this
    size = max(5, int(0.3 / max(d1, d2)) | 1)
    is_min = (sm == ndimage.minimum_filter(sm, size=size, mode="nearest"))
    thresh = np.percentile(sm, 20)
    r = patch_radius or max(2, int(round(0.08 / max(d1, d2))))
    cand = [(i, j) for i, j in zip(*np.nonzero(is_min & (sm < thresh)))
            if r <= i < img.shape[0] - r and r <= j < img.shape[1] - r]
    pts = []
    for i, j in cand:
        off = _quadratic_min(sm, i, j, r)
        if off is not None:
            pts.append((x1[0] + (i + off[0]) * d1, x2[0] + (j + off[1]) * d2))
    pts = np.array(pts)
    if len(pts) < min_points:
        raise NoFeatureFound(f"found {len(pts)} lattice points, need {min_points}")
    basis = _reduced_basis(pts)
    ref = pts[np.argmin(np.linalg.norm(pts - pts.mean(0), axis=1))]
    n = np.rint(np.linalg.solve(basis, (pts - ref).T).T)
    a = np.column_stack([np.ones(len(pts)), n])
    coef, *_ = np.linalg.lstsq(a, pts, rcond=None)
    origin, fitted = coef[0], coef[1:].T
    if abs(np.linalg.det(fitted)) < 1e-12:
        raise NoFeatureFound("lattice points are collinear")
    return Lattice(origin, fitted, pts, n.astype(int))


def _reduced_basis(pts: np.ndarray) -> np.ndarray:
    """Shortest non-parallel difference vectors, oriented toward +axis-0 and +axis-1."""
    diffs = (pts[:, None, :] - pts[None, :, :]).reshape(-1, 2)
    norms = np.linalg.norm(diffs, axis=1)
    keep = norms > 1e-9
    diffs, norms = diffs[keep], norms[keep]
    order = np.argsort(norms, kind="stable")
    v1 = diffs[order[0]]
    v2 = None
    for k in order[1:]:
        v = diffs[k]
        if abs(v1[0] * v[1] - v1[1] * v[0]) > 0.5 * norms[order[0]] * norms[k]:
            v2 = v
            break
    if v2 is None:
        raise NoFeatureFound("lattice points are collinear")
    a, b = (v1, v2) if abs(v1[0]) * abs(v2[1]) >= abs(v1[1]) * abs(v2[0]) else (v2, v1)
    a = a if a[0] > 0 else -a
    b = b if b[1] > 0 else -b
    return np.column_stack([a, b])


def extract_features(data, x=None, y=None):
    """Dip positions for a 1D trace or a :class:`Lattice` for a 2D map."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        x = np.arange(len(arr), dtype=float) if x is None else x
        return extract_dips(x, arr)
    if arr.ndim == 2:
        x = np.arange(arr.shape[0], dtype=float) if x is None else x
        y = np.arange(arr.shape[1], dtype=float) if y is None else y
        return extract_lattice(x, y, arr)
    raise ValueError("expected a 1D trace or a 2D map")


# --------------------------------------------------------------------------
# calibration loop

@dataclass(frozen=True)
class CalibrationConfig:
    iterations: int = 6
    trace_span: float = 2.6  # virtual-voltage units, about flux quanta once corrected
    trace_points: int = 521
    map_span: float = 2.6
    map_points: int = 131
    max_condition: float = 1e6

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.trace_points < 16 or self.map_points < 16:
            raise ValueError("sweep resolution too coarse")


@dataclass
class CalibrationState:
    """Correction ``M`` (voltages are ``M @ u``) after ``iteration`` updates."""

    correction: np.ndarray
    offsets: np.ndarray  # estimated f0 mod 1
    iteration: int
    residual: dict | None = None

    def to_dict(self) -> dict:
        out = {"iteration": self.iteration, "correction": self.correction.tolist(),
               "offsets": self.offsets.tolist()}
        if self.residual is not None:
            out["residual"] = {"mean_pct": self.residual["mean"], "max_pct": self.residual["max"],
                               "pairs_pct": self.residual["pairs"].tolist()}
        return out


def residual_metrics(truth: CrosstalkModel, state) -> dict:
    """Off-diagonal errors ``|P_ij / P_jj|`` in percent, with ``P = C @ correction``."""
    corr = state.correction if isinstance(state, CalibrationState) else np.asarray(state, dtype=float)
    p = truth.matrix @ corr
    pairs = np.abs(p / np.diag(p)[None, :]) * 100.0
    np.fill_diagonal(pairs, 0.0)
    off = pairs[~np.eye(len(p), dtype=bool)]
    return {"mean": float(off.mean()), "max": float(off.max()), "pairs": pairs}


class _Frame:
    """Measurements in virtual coordinates ``u`` with ``V = M u``."""

    def __init__(self, device: VirtualDevice, m: np.ndarray, cfg: CalibrationConfig):
        self.device, self.m, self.cfg = device, m, cfg
        self.n = m.shape[0]

    def trace(self, loop: int, base_u: np.ndarray):
        s = np.linspace(-self.cfg.trace_span / 2, self.cfg.trace_span / 2, self.cfg.trace_points)
        u = np.tile(base_u, (len(s), 1))
        u[:, loop] += s
        y = self.device.measure_trace(loop, u @ self.m.T)
        return s, y

    def dips(self, loop, base_u):
        s, y = self.trace(loop, base_u)
        return extract_dips(s, y)

    def lattice(self, base_u: np.ndarray) -> Lattice:
        c1, c2 = self.device.coupler_loops
        s = np.linspace(-self.cfg.map_span / 2, self.cfg.map_span / 2, self.cfg.map_points)
        g1, g2 = np.meshgrid(s, s, indexing="ij")
        u = np.broadcast_to(base_u, g1.shape + (self.n,)).copy()
        u[..., c1] += g1
        u[..., c2] += g2
        img = self.device.measure_coupler_map(u @ self.m.T, direction=1)
        return extract_lattice(s, s, img)


def _dip_spacing(dips: np.ndarray) -> float:
    if len(dips) < 2:
        raise NoFeatureFound("need two dips to measure a period")
    k = np.rint((dips - dips[0]) / np.min(np.diff(dips)))
    return float(np.polyfit(k, dips, 1)[0])


def _dip_shift(base: np.ndarray, moved: np.ndarray, period: float) -> float:
    diffs = []
    for d in base:
        j = int(np.argmin(np.abs(moved - d)))
        if abs(moved[j] - d) < 0.5 * period:
            diffs.append(moved[j] - d)
    if not diffs:
        raise NoFeatureFound("could not match dips between traces")
    return float(np.mean(diffs))


def _wrap(x):
    return x - np.rint(x)


def measure_effective_matrix(device: VirtualDevice, m: np.ndarray, cfg: CalibrationConfig):
    """One pass of the measurement steps; returns ``(P_hat, f0_hat)`` for ``P = C M``."""
    fr = _Frame(device, m, cfg)
    n, nq = fr.n, device.n_qubits
    coup = device.coupler_loops
    p = np.zeros((n, n))
    f0 = np.zeros(n)
    zero = np.zeros(n)

    # step 1: periodicity of each qubit loop in its own virtual voltage
    base_dips = {}
    for i in range(nq):
        d = fr.dips(i, zero)
        p[i, i] = 1.0 / _dip_spacing(d)
        base_dips[i] = d
        f0[i] = np.mod(0.5 - p[i, i] * d[0], 1.0)

    # step 3: coupler block from the symmetry-point lattice
    if coup:
        lat0 = fr.lattice(zero)
        pcc = np.linalg.inv(lat0.basis)
        p[np.ix_(coup, coup)] = pcc
        f0[list(coup)] = np.mod(0.5 - pcc @ lat0.origin, 1.0)

    # step 2: qubit rows, stepping every other loop by one of its flux quanta
    for i in range(nq):
        period = 1.0 / p[i, i]
        for j in range(n):
            if j == i:
                continue
            step = 1.0 / p[j, j]
            u = zero.copy()
            u[j] = step
            shift = _dip_shift(base_dips[i], fr.dips(i, u), period)
            p[i, j] = -shift * p[i, i] / step

    # step 4: coupler rows against the qubit loops from lattice displacements
    if coup:
        for j in range(nq):
            step = 1.0 / p[j, j]
            u = zero.copy()
            u[j] = step
            lat = fr.lattice(u)
            df = _wrap(pcc @ (lat.origin - lat0.origin))
            p[list(coup), j] = -df / step
    return p, f0


def calibrate(device: VirtualDevice, config: CalibrationConfig | None = None) -> list[CalibrationState]:
    """Iterate measure/invert/compose; ``history[0]`` is the uncorrected frame."""
    cfg = config or CalibrationConfig()
    n = device.truth.n_loops
    m = np.eye(n)
    state = CalibrationState(m.copy(), np.zeros(n), 0)
    state.residual = residual_metrics(device.truth, state)
    history = [state]
    for it in range(1, cfg.iterations + 1):
        p_hat, f0 = measure_effective_matrix(device, m, cfg)
        if not np.all(np.isfinite(p_hat)) or np.linalg.cond(p_hat) > cfg.max_condition:
            raise SingularCorrection(f"iteration {it}: estimated matrix is singular or ill-conditioned")
        m = m @ np.linalg.inv(p_hat)
        state = CalibrationState(m.copy(), f0, it)
        state.residual = residual_metrics(device.truth, state)
        history.append(state)
    return history
