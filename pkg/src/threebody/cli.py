"""Command-line entry point.

Exit codes: 0 success, 1 bad input (I/O, JSON, schema), 2 domain error
(singular design, failed fit, ambiguous states, ...).  Output files are
written atomically and contain no timestamps; the seed is echoed into every
JSON result.  Randomness for sub-tasks is derived from the single ``--seed``
via ``numpy.random.SeedSequence(seed).spawn``.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import crosstalk, estimator, fitters, multimode, protocol
from ._io import write_csv, write_json
from .errors import DomainError
from .pulse_sim import RamseyTrace
from .spin_model import PARAM_NAMES, HamiltonianParams, enumerate_transitions

EXIT_OK, EXIT_INPUT, EXIT_DOMAIN = 0, 1, 2


class InputError(Exception):
    """Unreadable or malformed input file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def _read_columns(path, names):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows or any(n not in rows[0] for n in names):
        raise InputError(f"{path} needs columns {', '.join(names)}")
    try:
        return [np.array([float(r[n]) for r in rows]) for n in names]
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


class _Out:
    def __init__(self, args):
        self.dir = Path(args.out_dir)
        self.format = args.format
        self.seed = args.seed
        self.written: list[Path] = []

    def result(self, stem: str, data: dict):
        """Main result: JSON, or a flattened ``key,value`` CSV with ``--format csv``."""
        data = {"seed": self.seed, **data}
        if self.format == "json":
            self.written.append(write_json(self.dir / f"{stem}.json", data))
        else:
            rows = [(k, v) for k, v in _flatten(data)]
            self.written.append(write_csv(self.dir / f"{stem}.csv", ("key", "value"), rows))

    def table(self, stem: str, header, rows):
        self.written.append(write_csv(self.dir / f"{stem}.csv", header, rows))


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}{k}.")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}{i}.")
    else:
        yield prefix.rstrip("."), obj


def _measurements(data) -> list[estimator.FrequencyMeasurement]:
    items = data.get("measurements") if isinstance(data, dict) else data
    if not isinstance(items, list):
        raise InputError("expected a list of measurements or {\"measurements\": [...]}")
    try:
        return [estimator.FrequencyMeasurement.from_dict(m) for m in items]
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"bad measurement entry: {exc}") from exc


def _params(data) -> HamiltonianParams:
    data = data.get("params", data) if isinstance(data, dict) else data
    try:
        return HamiltonianParams.from_dict(data)
    except (KeyError, ValueError, TypeError, AttributeError) as exc:
        raise InputError(f"bad parameter file: {exc}") from exc


# --------------------------------------------------------------------------
# commands

def cmd_estimate(args, out: _Out):
    meas = _measurements(_load_json(args.measurements))
    result = estimator.solve_exact(meas) if len(meas) == 7 else estimator.solve_least_squares(meas)
    data = result.to_dict()
    present = {m.transition for m in meas}
    if len(meas) == 12 and present == set(enumerate_transitions()):
        _, draws = estimator.selection_scan(meas)
        sel = draws.std(axis=0)
        data["selection_error_mhz"] = dict(zip(PARAM_NAMES, sel.tolist()))
        out.table("selection_error", ("parameter", "estimate_mhz", "sigma_mhz", "selection_error_mhz"),
                  [(n, p, s, e) for n, p, s, e in zip(PARAM_NAMES, result.params.as_vector(),
                                                      result.sigmas, sel)])
    out.result("estimate", data)


def cmd_end_to_end(args, out: _Out):
    truth = _params(_load_json(args.truth))
    try:
        cfg = protocol.ProtocolConfig.from_dict(_load_json(args.config)) if args.config else protocol.ProtocolConfig()
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad protocol config: {exc}") from exc
    report = protocol.run_protocol(truth, cfg, seed=args.seed)
    out.result("end_to_end", report.to_dict())
    out.table("fits", ("transition", "drive_mhz", "true_mhz", "value_mhz", "sigma_mhz", "error"),
              [(f.transition, f.drive_mhz, f.true_mhz, f.value_mhz if f.value_mhz is not None else "",
                f.sigma_mhz if f.sigma_mhz is not None else "", f.error or "") for f in report.fits])


def cmd_subset_scan(args, out: _Out):
    rep = estimator.subset_criteria_report()
    subsets = estimator.complete_subsets()
    header = [f"t{i + 1}" for i in range(7)]
    draws = None
    if args.measurements:
        meas = _measurements(_load_json(args.measurements))
        _, draws = estimator.selection_scan(meas)
        header += list(PARAM_NAMES)
    rows = []
    for k, s in enumerate(subsets):
        row = [t.label for t in s]
        if draws is not None:
            row += draws[k].tolist()
        rows.append(row)
    out.table("subsets", header, rows)
    summary = {"n_complete": len(subsets), "n_total": rep.n_total, "n_covering": rep.n_covering,
               "n_covering_not_invertible": len(rep.covering_not_invertible)}
    if draws is not None:
        summary["selection_error_mhz"] = dict(zip(PARAM_NAMES, draws.std(axis=0).tolist()))
    out.result("subset_scan", summary)


def cmd_fit_ramsey(args, out: _Out):
    try:
        trace = RamseyTrace.read(args.trace)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read trace {args.trace}: {exc}") from exc
    if args.t1_background_ns is not None:
        trace.metadata["t1_background_ns"] = args.t1_background_ns
    fit = fitters.fit_ramsey(trace)
    data = {"trace": str(args.trace), "fit": fit.to_dict()}
    drive = args.drive_mhz if args.drive_mhz is not None else trace.metadata.get("drive_frequency_mhz")
    if drive is not None:
        side = args.side or trace.metadata.get("side", "above")
        value, sigma = fitters.transition_from_fit(float(drive), fit, side=side)
        data["transition_mhz"] = value
        data["transition_sigma_mhz"] = sigma
    out.result("ramsey_fit", data)


def cmd_calibrate(args, out: _Out):
    data = _load_json(args.device)
    try:
        truth = crosstalk.CrosstalkModel.from_dict(data)
        opts = {k: data[k] for k in ("n_qubits", "dip_width", "noise_sigma", "map_noise_sigma", "hysteresis")
                if k in data}
        device = crosstalk.VirtualDevice(truth, seed=args.seed, **opts)
        cfg = crosstalk.CalibrationConfig(iterations=args.iterations)
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"bad device description: {exc}") from exc
    history = crosstalk.calibrate(device, cfg)
    out.table("crosstalk_residuals", ("iteration", "mean_pct", "max_pct"),
              [(s.iteration, s.residual["mean"], s.residual["max"]) for s in history])
    final = history[-1]
    out.result("crosstalk_correction", {"labels": list(truth.labels), **final.to_dict()})


def cmd_coupling_sweep(args, out: _Out):
    try:
        tpl = multimode.CouplerTemplate.from_dict(_load_json(args.template)) if args.template \
            else multimode.CouplerTemplate()
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"bad template: {exc}") from exc
    gaps = args.gaps or multimode.DEFAULT_GAPS_MHZ
    try:
        rows = multimode.coupler_gap_sweep(tpl, gaps)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    out.table("coupling_sweep", multimode.SWEEP_HEADER, [r.csv_row() for r in rows])
    asym = multimode.asymptotic_params(tpl, rows[0].gap)
    out.result("coupling_sweep_summary", {
        "template": tpl.to_dict(),
        "asymptotic_k123_mhz": asym.k123,
        "flagged_gaps_mhz": [r.gap for r in rows if r.flagged],
        "monotonicity_violations": [list(v) for v in multimode.monotonicity_violations(rows)],
    })


def cmd_flux_noise(args, out: _Out):
    if args.synthetic is not None:
        rng = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(1)[0])
        slopes = np.linspace(0.5, 5.0, 10) * 2 * np.pi * 1e9  # rad/s per flux quantum
        pts = fitters.synthetic_dephasing_points(args.synthetic * 1e-6, slopes, args.relative_noise, rng)
        unit = "angular"
        out.table("dephasing_points", ("flux_slope", "gamma_phi"), [(p.flux_slope, p.gamma_phi) for p in pts])
    elif args.points:
        x, y = _read_columns(args.points, ("flux_slope", "gamma_phi"))
        try:
            pts = [fitters.DephasingPoint(float(a), float(b)) for a, b in zip(x, y)]
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        unit = args.slope_unit
    else:
        raise InputError("give a points CSV or --synthetic AMPLITUDE_UPHI0")
    fit = fitters.fit_flux_noise(pts, slope_unit=unit)
    out.result("flux_noise", fit.to_dict())


def cmd_reconstruct(args, out: _Out):
    x, s = _read_columns(args.slopes, ("flux", "slope"))
    curve = fitters.reconstruct_dispersion(x, s)
    flat = fitters.remove_tilt(x, curve)
    out.table("dispersion", ("flux", "slope", "dispersion", "detilted"),
              [(a, b, c, d) for a, b, c, d in zip(x.tolist(), s.tolist(), curve.tolist(), flat.tolist())])


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="threebody", description="Three-qubit spin-model characterisation toolkit.")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="format of the main result file")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("estimate", help="invert measured transition frequencies")
    s.add_argument("measurements", help="JSON list of {lower, upper, value_mhz|value_ghz, sigma_*}")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("end-to-end", help="simulate, fit and invert all 12 Ramsey traces")
    s.add_argument("truth", help="JSON parameter file (omega1_mhz, ..., k123_mhz)")
    s.add_argument("--config", help="JSON protocol overrides")
    s.set_defaults(func=cmd_end_to_end)

    s = sub.add_parser("subset-scan", help="list complete 7-transition subsets")
    s.add_argument("--measurements", help="12-transition file; adds per-subset estimates")
    s.set_defaults(func=cmd_subset_scan)

    s = sub.add_parser("fit-ramsey", help="fit a Ramsey trace CSV (delay_ns,signal)")
    s.add_argument("trace")
    s.add_argument("--drive-mhz", type=float)
    s.add_argument("--side", choices=("above", "below"))
    s.add_argument("--t1-background-ns", type=float)
    s.set_defaults(func=cmd_fit_ramsey)

    s = sub.add_parser("calibrate-crosstalk", help="run the calibration loop on a virtual device")
    s.add_argument("device", help="JSON with matrix, offsets and optional noise settings")
    s.add_argument("--iterations", type=int, default=6)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("coupling-sweep", help="effective parameters versus coupler gap")
    s.add_argument("--template", help="JSON template overrides")
    s.add_argument("--gaps", type=float, nargs="+", help="descending gaps in MHz")
    s.set_defaults(func=cmd_coupling_sweep)

    s = sub.add_parser("flux-noise", help="flux-noise amplitude from dephasing rates")
    s.add_argument("points", nargs="?", help="CSV with flux_slope,gamma_phi")
    s.add_argument("--slope-unit", choices=("angular", "linear"), default="angular")
    s.add_argument("--synthetic", type=float, metavar="UPHI0", help="generate data at this amplitude")
    s.add_argument("--relative-noise", type=float, default=0.0)
    s.set_defaults(func=cmd_flux_noise)

    s = sub.add_parser("reconstruct-dispersion", help="integrate sampled flux slopes")
    s.add_argument("slopes", help="CSV with flux,slope")
    s.set_defaults(func=cmd_reconstruct)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        out = _Out(args)
        args.func(args, out)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DomainError as exc:
        print(f"domain error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for path in out.written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
