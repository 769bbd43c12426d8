"""Command-line entry point: scenario simulation, correlation, fitting, QFC
design calculations, and report emission.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import shutil
import sys
from pathlib import Path

import numpy as np

from . import tagio
from .correlate import (CorrelationRequest, correlate, normalize_cw,
                        pulsed_g2_zero, read_histogram_csv,
                        write_histogram_csv)
from .core import RandomSource, StreamError, merge_streams
from .fit import FitError, fit_g2, report_visibility
from .models import (ConversionStage, HomInterferometer, InstrumentResponse,
                     conversion_efficiency, output_wavelength,
                     qpm_peak_at_temperature, qpm_response,
                     solve_pump_for_target)
from .simulate import (ChargeModel, DetectorSpec, EmitterSpec, QfcSpec,
                       SimulationError, run_experiment)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NO_CONVERGENCE = 4


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------- config ----

def load_config(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    return {section: dict(parser[section]) for section in parser.sections()}


def dump_config(config: dict[str, dict[str, str]], path) -> None:
    parser = configparser.ConfigParser()
    for section, values in config.items():
        parser[section] = values
    with open(path, "w") as fh:
        parser.write(fh)


def _get(config, section, key, conv=str, default=None, required=False):
    try:
        raw = config[section][key]
    except KeyError:
        if required:
            raise ConfigError(f"missing [{section}] {key}")
        return default
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def build_emitter(config) -> EmitterSpec:
    charge = None
    if "charge_model" in config:
        charge = ChargeModel(
            rate_single_capture=_get(config, "charge_model",
                                     "rate_single_capture_hz", float, required=True),
            rate_multi_capture=_get(config, "charge_model",
                                    "rate_multi_capture_hz", float, required=True),
            branching=_get(config, "charge_model", "branching", float, default=0.5),
        )
    return EmitterSpec(
        lifetime=_get(config, "emitter", "lifetime_ns", float, required=True) * 1e-9,
        tau_c=_get(config, "emitter", "coherence_time_ps", float, default=100.0) * 1e-12,
        pump_rate=_get(config, "emitter", "pump_rate_hz", float, default=1e7),
        mode=_get(config, "emitter", "mode", str, default="cw"),
        rep_rate=_get(config, "emitter", "rep_rate_mhz", float, default=50.0) * 1e6,
        pulse_width=_get(config, "emitter", "pulse_width_ps", float, default=50.0) * 1e-12,
        excitation_prob=_get(config, "emitter", "excitation_prob", float, default=0.9),
        charge_model=charge,
    )


def build_detector(config, section) -> DetectorSpec:
    return DetectorSpec(
        efficiency=_get(config, section, "efficiency", float, default=1.0),
        jitter_fwhm=_get(config, section, "jitter_fwhm_ps", float, default=0.0) * 1e-12,
        dark_rate=_get(config, section, "dark_rate_hz", float, default=0.0),
        dead_time=_get(config, section, "dead_time_ns", float, default=0.0) * 1e-9,
    )


def build_interferometer(config) -> HomInterferometer | None:
    if "interferometer" not in config:
        return None
    return HomInterferometer(
        r1=_get(config, "interferometer", "r1", float, default=0.5),
        t1=_get(config, "interferometer", "t1", float, default=0.5),
        r2=_get(config, "interferometer", "r2", float, default=0.5),
        t2=_get(config, "interferometer", "t2", float, default=0.5),
        delta_tau=_get(config, "interferometer", "delta_tau_ns", float,
                       default=12.5) * 1e-9,
        v=_get(config, "interferometer", "v", float, default=1.0),
        config=_get(config, "interferometer", "polarization", str,
                    default="parallel"),
    )


def build_qfc(config) -> tuple[QfcSpec | None, float]:
    if "qfc" not in config:
        return None, 0.0
    stage = ConversionStage(
        lambda_signal=_get(config, "qfc", "signal_nm", float, default=983.8) * 1e-9,
        lambda_pump=_get(config, "qfc", "pump_nm", float, default=1550.0) * 1e-9,
        qpm_peak_signal=_get(config, "qfc", "qpm_peak_nm", float, default=983.8) * 1e-9,
        qpm_fwhm=_get(config, "qfc", "qpm_fwhm_nm", float, default=0.20) * 1e-9,
        eta_max=_get(config, "qfc", "eta_max", float, default=0.40),
        p_max=_get(config, "qfc", "p_max_w", float, default=1.0),
        background_rate_coeff=_get(config, "qfc", "background_cps_per_w", float,
                                   default=100.0),
    )
    spec = QfcSpec(stage=stage,
                   enabled=_get(config, "qfc", "enabled", _bool, default=True))
    power = _get(config, "qfc", "pump_power_w", float, default=0.8)
    return spec, power


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    scenario = _get(config, "run", "scenario", str, required=True)
    duration = _get(config, "run", "duration_s", float, required=True)
    seed = _get(config, "run", "seed", int, required=True)
    resolution = _get(config, "run", "resolution_ps", float, default=4.0) * 1e-12
    target = _get(config, "run", "target_g2_zero", float)
    combine = _get(config, "run", "combine_lines", _bool, default=True)
    prefix = _get(config, "output", "prefix", str,
                  default=Path(args.config).stem)

    qfc, pump_power = build_qfc(config)
    streams, stats = run_experiment(
        scenario,
        emitter=build_emitter(config),
        detectors=(build_detector(config, "detector0"),
                   build_detector(config, "detector1")),
        interferometer=build_interferometer(config),
        qfc=qfc, pump_power=pump_power,
        duration=duration, rng=RandomSource(seed),
        target_g2_zero=target, combine_lines=combine,
        resolution=resolution,
    )
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ch, stream in enumerate(streams):
        path = outdir / f"{prefix}_ch{ch}.ptt1"
        tagio.write_ptt1(stream, path)
        paths.append(path)
    manifest = outdir / f"{prefix}_manifest.txt"
    with open(manifest, "w") as fh:
        for key, value in stats.items():
            fh.write(f"{key}={value}\n")
        for ch, path in enumerate(paths):
            fh.write(f"stream_ch{ch}={path.name}\n")
    print(f"wrote {len(paths)} streams and {manifest}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    streams = []
    for path in args.files:
        try:
            streams.append(tagio.read_ptt1(path))
        except StreamError as exc:
            raise DataError(f"{path}: {exc}") from exc
    stream = streams[0]
    for other in streams[1:]:
        try:
            stream = merge_streams(stream, other)
        except StreamError as exc:
            raise DataError(str(exc)) from exc
    ch_a, ch_b = args.channels
    req = CorrelationRequest(
        channel_a=ch_a, channel_b=ch_b, mode=args.mode,
        bin_width=args.bin * 1e-9, max_delay=args.max_delay * 1e-9)
    try:
        h = correlate(stream, req)
    except StreamError as exc:
        raise DataError(str(exc)) from exc
    if args.normalize_after is not None:
        h = normalize_cw(h, args.normalize_after * 1e-9)
    write_histogram_csv(h, args.output)
    print(f"wrote {args.output} ({len(h.counts)} bins, {int(h.counts.sum())} pairs)")
    if args.rep_period is not None:
        g2_0, sigma = pulsed_g2_zero(h, args.rep_period * 1e-9)
        print(f"pulsed g2(0) = {g2_0:.4f} +/- {sigma:.4f}")
    return EXIT_OK


def _parse_kv(items, what):
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"bad {what} {item!r}, expected name=value")
        out[key] = value
    return out


def cmd_fit(args) -> int:
    try:
        h = read_histogram_csv(args.histogram)
    except (OSError, ValueError) as exc:
        raise DataError(f"{args.histogram}: {exc}") from exc
    if h.normalization is None:
        if args.normalize_after is None:
            raise ConfigError("histogram is not normalized; pass --normalize-after")
        h = normalize_cw(h, args.normalize_after * 1e-9)
    if h.sigma is None or not np.all(np.asarray(h.sigma) > 0):
        print("warning: no usable sigma column, falling back to sqrt-counts weights",
              file=sys.stderr)
    model_id = {"g2_cw": "g2_cw", "hom_parallel": "g2_hom_parallel",
                "hom_orthogonal": "g2_hom_orthogonal"}[args.model]
    interferometer = None
    if model_id.startswith("g2_hom"):
        if args.delta_tau is None:
            raise ConfigError(f"model {args.model} requires --delta-tau")
        interferometer = HomInterferometer(
            delta_tau=args.delta_tau * 1e-9,
            config="parallel" if model_id.endswith("parallel") else "orthogonal")
    irf = InstrumentResponse(bin_width=h.bin_width,
                             fwhm=(args.irf_fwhm or 0.0) * 1e-12)
    init = {k: float(v) for k, v in _parse_kv(args.init, "--init").items()}
    bounds = {}
    for key, value in _parse_kv(args.bounds, "--bounds").items():
        lo, sep, hi = value.partition(":")
        if not sep:
            raise ConfigError(f"bad --bounds {key}={value!r}, expected lo:hi")
        bounds[key] = (float(lo), float(hi))
    try:
        result = fit_g2(h, irf, model_id, init=init or None,
                        bounds=bounds or None, interferometer=interferometer)
    except FitError as exc:
        sys.stdout.write(exc.result.serialize())
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    sys.stdout.write(result.serialize())
    return EXIT_OK


def cmd_qfc(args) -> int:
    signals = [s * 1e-9 for s in args.signal_nm]
    if (args.pump_nm is None) == (args.target_nm is None):
        raise ConfigError("pass exactly one of --pump-nm or --target-nm")
    stage = ConversionStage(
        lambda_signal=signals[0],
        qpm_peak_signal=(args.qpm_peak_nm or args.signal_nm[0]) * 1e-9,
        qpm_fwhm=args.qpm_fwhm_nm * 1e-9,
        eta_max=args.eta_max, p_max=args.p_max_w,
        background_rate_coeff=args.background_cps_per_w,
    )
    peak = stage.qpm_peak_signal
    if args.temp_c is not None:
        peak = qpm_peak_at_temperature(stage, args.temp_c)
        print(f"qpm_peak_nm={peak * 1e9:.4f} (at {args.temp_c:.1f} C)")
    eta = conversion_efficiency(args.pump_power_w, stage)
    for lam_signal in signals:
        if args.target_nm is not None:
            try:
                pump = solve_pump_for_target(lam_signal, args.target_nm * 1e-9)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        else:
            pump = args.pump_nm * 1e-9
        out = output_wavelength(lam_signal, pump)
        shifted = ConversionStage(
            lambda_signal=lam_signal, qpm_peak_signal=peak,
            qpm_fwhm=stage.qpm_fwhm, eta_max=stage.eta_max, p_max=stage.p_max,
            background_rate_coeff=stage.background_rate_coeff)
        response = qpm_response(lam_signal, shifted)
        print(f"signal_nm={lam_signal * 1e9:.4f} pump_nm={pump * 1e9:.4f} "
              f"output_nm={out * 1e9:.4f} qpm_response={response:.4f} "
              f"efficiency={eta * response:.4f}")
    background = stage.background_rate_coeff * args.pump_power_w
    if background > 0 and args.signal_rate_cps is not None:
        sbr = args.signal_rate_cps * eta / background
        print(f"expected_sbr={sbr:.1f}")
    return EXIT_OK


def _read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key] = value
    return out


def _flank_asymmetry(h, window: float) -> float:
    norm = h.normalized
    neg = (h.centers < 0) & (h.centers >= -window)
    pos = (h.centers > 0) & (h.centers <= window)
    deficit_neg = float(np.sum(1.0 - norm[neg]))
    deficit_pos = float(np.sum(1.0 - norm[pos]))
    mean = 0.5 * (abs(deficit_neg) + abs(deficit_pos))
    if mean == 0:
        return 0.0
    return abs(deficit_neg - deficit_pos) / mean


def cmd_report(args) -> int:
    inputs = {"parallel": args.parallel, "orthogonal": args.orthogonal,
              "cross": args.cross, "auto": args.auto}
    given = {name: path for name, path in inputs.items() if path is not None}
    if args.manifest is not None:
        given["manifest"] = args.manifest
    missing = [f"{name}: {path}" for name, path in given.items()
               if not Path(path).exists()]
    if missing:
        raise DataError("missing inputs:\n  " + "\n  ".join(missing))
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = []
    if args.manifest is not None:
        manifest = _read_manifest(args.manifest)
        summary.append(f"scenario={manifest.get('scenario', 'unknown')}")
        summary.append(f"seed={manifest.get('seed', 'unknown')}")
    histograms = {}
    for name, path in given.items():
        if name == "manifest":
            continue
        h = read_histogram_csv(path)
        if h.normalization is None:
            h = normalize_cw(h, args.normalize_after * 1e-9)
            write_histogram_csv(h, outdir / f"panel_{name}.csv")
        else:
            shutil.copy(path, outdir / f"panel_{name}.csv")
        histograms[name] = h
        g2_0 = h.value_at_zero()
        sigma = float(h.normalized_sigma[0]) if h.sigma is not None else float("nan")
        summary.append(f"g2_zero_{name}={g2_0:.4f}")
        summary.append(f"sigma_g2_zero_{name}={sigma:.4f}")
    if "parallel" in histograms and "orthogonal" in histograms:
        hp, ho = histograms["parallel"], histograms["orthogonal"]
        sp = float(hp.normalized_sigma[0]) if hp.sigma is not None else 0.0
        so = float(ho.normalized_sigma[0]) if ho.sigma is not None else 0.0
        V, sigma_v = report_visibility(hp.value_at_zero(), sp,
                                       ho.value_at_zero(), so)
        summary.append(f"visibility={V:.4f}")
        summary.append(f"sigma_visibility={sigma_v:.4f}")
    for name in ("cross", "auto"):
        if name in histograms:
            asym = _flank_asymmetry(histograms[name], args.flank_window * 1e-9)
            summary.append(f"flank_asymmetry_{name}={asym:.4f}")
    text = "\n".join(summary) + "\n" if summary else ""
    (outdir / "summary.txt").write_text(text)
    if not histograms:
        print("warning: no histograms supplied, report bundle is empty",
              file=sys.stderr)
    sys.stdout.write(text)
    return EXIT_OK


def _positive_float(raw: str) -> float:
    value = float(raw)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive: {raw}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photonkit",
        description="Simulate and analyze single-photon correlation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario config, emit PTT1 streams")
    p.add_argument("config", help="scenario config file (INI)")
    p.add_argument("-o", "--output-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="histogram delays from PTT1 streams")
    p.add_argument("files", nargs="+", help="one or two PTT1 files")
    p.add_argument("--mode", choices=("full", "start_stop"), default="full")
    p.add_argument("--bin", type=_positive_float, required=True,
                   help="bin width in ns")
    p.add_argument("--max-delay", type=_positive_float, required=True,
                   help="maximum |delay| in ns")
    p.add_argument("--channels", nargs=2, type=int, default=(0, 1),
                   metavar=("A", "B"))
    p.add_argument("--normalize-after", type=_positive_float, default=None,
                   help="normalize to the plateau beyond this delay (ns)")
    p.add_argument("--rep-period", type=_positive_float, default=None,
                   help="also report pulsed g2(0) for this repetition period (ns)")
    p.add_argument("-o", "--output", default="histogram.csv")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("fit", help="fit a correlation model to a histogram CSV")
    p.add_argument("histogram")
    p.add_argument("--model", choices=("g2_cw", "hom_parallel", "hom_orthogonal"),
                   required=True)
    p.add_argument("--irf-fwhm", type=float, default=0.0,
                   help="pairwise instrument response FWHM in ps")
    p.add_argument("--delta-tau", type=_positive_float, default=None,
                   help="interferometer arm delay in ns (HOM models)")
    p.add_argument("--init", nargs="*", metavar="NAME=VALUE")
    p.add_argument("--bounds", nargs="*", metavar="NAME=LO:HI")
    p.add_argument("--normalize-after", type=_positive_float, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("qfc", help="frequency-conversion design calculations")
    p.add_argument("--signal-nm", nargs="+", type=_positive_float, required=True)
    p.add_argument("--pump-nm", type=_positive_float, default=None)
    p.add_argument("--target-nm", type=_positive_float, default=None)
    p.add_argument("--pump-power-w", type=float, default=0.8)
    p.add_argument("--temp-c", type=float, default=None)
    p.add_argument("--qpm-peak-nm", type=_positive_float, default=None)
    p.add_argument("--qpm-fwhm-nm", type=_positive_float, default=0.20)
    p.add_argument("--eta-max", type=float, default=0.40)
    p.add_argument("--p-max-w", type=_positive_float, default=1.0)
    p.add_argument("--background-cps-per-w", type=float, default=100.0)
    p.add_argument("--signal-rate-cps", type=float, default=None)
    p.set_defaults(func=cmd_qfc)

    p = sub.add_parser("report", help="emit plot-data bundle and summary")
    p.add_argument("--manifest", default=None)
    p.add_argument("--parallel", default=None, help="parallel HOM histogram CSV")
    p.add_argument("--orthogonal", default=None, help="orthogonal HOM histogram CSV")
    p.add_argument("--cross", default=None, help="cross-correlation histogram CSV")
    p.add_argument("--auto", default=None, help="autocorrelation histogram CSV")
    p.add_argument("--normalize-after", type=_positive_float, default=500.0)
    p.add_argument("--flank-window", type=_positive_float, default=25.0,
                   help="flank-asymmetry integration window in ns")
    p.add_argument("-o", "--output-dir", default="report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, StreamError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
