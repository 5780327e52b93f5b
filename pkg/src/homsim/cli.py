"""Command-line entry point.

    homsim simulate hbt --config run.json [--seed N] [--out DIR]
    homsim simulate hom-scan --config run.json [--seed N] [--out DIR] [--trials N]
    homsim correlate tags.csv [--config run.json] [--out peaks.csv]
    homsim fit dip|decay|spectrum|g2 INPUT [--out report.json]
    homsim paper-repro [--seed N] [--out DIR] [--trials N] [--mode-match M]

Exit codes: 0 success, 1 reproduction check failed, 2 invalid input or
configuration, 3 fit did not converge.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .analysis import DipScanData, FitInputError, FitResult
from .config import ConfigError, RunConfig, load_config
from .hom import PhysicalPair, mc_hom_scan, quadrature_hom_scan
from .pipelines import REPRO_SEED, paper_repro, run_hbt, simulate_dip_scan
from .stream import ConfigurationError, CorrelogramPeaks, TagStream, correlate

EXIT_OK, EXIT_FAILED, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _clean(x):
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _config(args) -> RunConfig:
    if not args.config:
        raise CliError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise CliError(f"--seed must be non-negative, got {args.seed}")
        cfg = replace(cfg, seed=args.seed)
    return cfg


# -- simulate -----------------------------------------------------------------


def cmd_simulate_hbt(args) -> int:
    cfg = _config(args)
    if len(cfg.emitters) != 1:
        raise ConfigError("emitters", f"hbt needs exactly one emitter, got {len(cfg.emitters)}")
    out = _out_dir(args)
    exp = cfg.experiment
    corr = cfg.correlator
    tags, peaks, est = run_hbt(exp, cfg.seed, corr.window, corr.max_order, corr.pairing)
    tags.write_csv(out / cfg.output("tags", "tags.csv"))
    peaks.write_csv(out / cfg.output("peaks", "peaks.csv"))
    _write_json(
        out / cfg.output("summary", "summary.json"),
        {
            "command": "simulate hbt",
            "seed": cfg.seed,
            "n_pulses": exp.n_pulses,
            "two_photon_residual": list(exp.two_photon_residual),
            "n_tags": len(tags),
            "g2_zero": est.value,
            "g2_sigma": est.sigma,
            "one_sided": est.one_sided,
        },
    )
    print(f"g2(0) = {est.value:.4f} +- {est.sigma:.4f}  ({len(tags)} tags, {exp.n_pulses} pulses)")
    return EXIT_OK


def cmd_simulate_hom(args) -> int:
    cfg = _config(args)
    if len(cfg.emitters) != 2:
        raise ConfigError("emitters", f"hom-scan needs exactly two emitters, got {len(cfg.emitters)}")
    if not cfg.scan:
        raise ConfigError("scan", "hom-scan needs a non-empty list of delays")
    out = _out_dir(args)
    exp = cfg.experiment
    dip, _ = simulate_dip_scan(exp, cfg.seed, cfg.scan, cfg.correlator.window, cfg.correlator.max_order)
    dip.write_csv(out / cfg.output("dip_scan", "dip_scan.csv"))
    summary = {
        "command": "simulate hom-scan",
        "seed": cfg.seed,
        "n_pulses_per_delay": exp.n_pulses,
        "mode_match": exp.mode_match,
        "stray_pair_rate": exp.stray_pair_rate,
    }
    if len(dip) >= 5:
        try:
            fit = analysis.fit_hom_dip(dip)
            centered = analysis.fit_hom_dip(dip, fit_center=True)
            summary["fit"] = json.loads(fit.to_json())
            summary["dip_center_ps"] = centered.params["t0"]
            summary["dip_center_sigma_ps"] = centered.sigmas["t0"]
        except FitInputError as exc:
            summary["fit_error"] = str(exc)
    if args.trials:
        pp = PhysicalPair(*exp.emitters, mode_match=exp.mode_match)
        quad = quadrature_hom_scan(pp, cfg.scan)
        mc = mc_hom_scan(pp, cfg.scan, args.trials, cfg.seed)
        path = out / cfg.output("wavepacket_scan", "wavepacket_scan.csv")
        with open(path, "w") as fh:
            fh.write("delay_ps,quadrature,mc_mean,mc_se\n")
            for d, q, (m, s) in zip(cfg.scan, quad, mc):
                fh.write(f"{d!r},{q!r},{m!r},{s!r}\n")
        summary["trials"] = args.trials
    _write_json(out / cfg.output("summary", "summary.json"), summary)
    print(f"wrote {len(dip)} delay points to {out / cfg.output('dip_scan', 'dip_scan.csv')}")
    return EXIT_OK


# -- correlate ----------------------------------------------------------------


def cmd_correlate(args) -> int:
    try:
        tags = TagStream.read_csv(args.input)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read tags: {exc}") from None
    period, window, order, pairing = args.period, args.window, args.max_order, args.pairing
    if args.config:
        cfg = load_config(args.config)
        period = period or cfg.experiment.pulse_period
        window = window or cfg.correlator.window
        order = order or cfg.correlator.max_order
        pairing = pairing or cfg.correlator.pairing
    try:
        peaks = correlate(
            tags,
            period or 13000.0,
            window or 1000.0,
            order or 10,
            tuple(args.channels) if args.channels else None,
            pairing or "all",
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out or "peaks.csv")
    peaks.write_csv(out)
    p0 = peaks[0]
    print(f"zero peak {p0.area:.0f} counts, normalized {p0.normalized:.4f} +- {p0.sigma:.4f}")
    return EXIT_OK


# -- fit ----------------------------------------------------------------------


def _fit_input(kind: str, path: str):
    headers = {
        "dip": ("delay_ps", "g34", "sigma"),
        "decay": ("time_ps", "intensity"),
        "spectrum": ("wavelength_nm", "counts"),
    }
    if kind == "g2":
        try:
            return CorrelogramPeaks.read_csv(path)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read peaks: {exc}") from None
    try:
        return analysis.read_columns(path, headers[kind])
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def cmd_fit(args) -> int:
    data = _fit_input(args.kind, args.input)
    if args.kind == "dip":
        res = analysis.fit_hom_dip(DipScanData(*data), fit_center=args.fit_center)
        if res.converged:
            res.params["visibility"] = analysis.visibility(res)
            res.sigmas["visibility"] = analysis.visibility_sigma(res)
    elif args.kind == "decay":
        res = analysis.fit_decay(*data)
    elif args.kind == "spectrum":
        res = analysis.fit_lorentzian(*data)
    else:
        est = analysis.g2_zero(data)
        res = FitResult(
            params={"g2_zero": est.value},
            sigmas={"g2_zero": est.sigma},
            chi2=0.0,
            n_dof=int(np.sum(data.side_mask)) - 1,
            converged=True,
            flags=["one-sided Poisson interval"] if est.one_sided else [],
        )
    text = res.to_json()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


# -- paper-repro --------------------------------------------------------------


def cmd_paper_repro(args) -> int:
    seed = REPRO_SEED if args.seed is None else args.seed
    if seed < 0:
        raise CliError(f"--seed must be non-negative, got {seed}")
    out = _out_dir(args)
    res = paper_repro(seed, mode_match=args.mode_match)
    report = res.table()
    if args.trials and args.trials > 1:
        passed = sum(paper_repro(seed + i, mode_match=args.mode_match).all_passed for i in range(args.trials))
        report += f"\nseed variation: {passed}/{args.trials} seeds pass every row (seeds {seed}..{seed + args.trials - 1})\n"
    (out / "repro_table.txt").write_text(report)
    res.dip.write_csv(out / "repro_dip_scan.csv")
    (out / "repro_fit.json").write_text(res.fit.to_json())
    sys.stdout.write(report)
    return EXIT_OK if res.all_passed else EXIT_FAILED


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homsim", description="Two-photon interference simulator and estimators.")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="synthesize time tags and correlograms")
    sim_sub = sim.add_subparsers(dest="what", required=True)
    for name, fn, helptext in (
        ("hbt", cmd_simulate_hbt, "single-emitter autocorrelation run"),
        ("hom-scan", cmd_simulate_hom, "two-emitter delay scan"),
    ):
        s = sim_sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--seed", type=int, help="override the configured seed")
        s.add_argument("--out", help="output directory (default: current)")
        if name == "hom-scan":
            s.add_argument("--trials", type=int, default=0, help="also write a wavepacket Monte Carlo scan with this many trials")
        s.set_defaults(func=fn)

    c = sub.add_parser("correlate", help="peak areas of a tag CSV")
    c.add_argument("input", help="tag CSV (channel,time_ps)")
    c.add_argument("--config", help="take period and correlator settings from a run configuration")
    c.add_argument("--out", help="peaks CSV to write (default: peaks.csv)")
    c.add_argument("--period", type=float, help="pulse period in ps (default 13000)")
    c.add_argument("--window", type=float, help="half-width of each peak window in ps (default 1000)")
    c.add_argument("--max-order", type=int, help="largest |k| (default 10)")
    c.add_argument("--channels", type=int, nargs=2, metavar=("START", "STOP"))
    c.add_argument("--pairing", choices=("all", "start-stop"))
    c.set_defaults(func=cmd_correlate)

    f = sub.add_parser("fit", help="fit a data file and print a JSON report")
    f.add_argument("kind", choices=("dip", "decay", "spectrum", "g2"))
    f.add_argument("input", help="CSV input")
    f.add_argument("--out", help="also write the report here")
    f.add_argument("--fit-center", action="store_true", help="dip: fit the zero-delay position too")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("paper-repro", help="reproduce the headline numbers")
    r.add_argument("--seed", type=int, help=f"seed (default {REPRO_SEED})")
    r.add_argument("--out", help="output directory (default: current)")
    r.add_argument("--trials", type=int, default=0, help="also report the pass rate over this many consecutive seeds")
    r.add_argument("--mode-match", type=float, help="override the spatial mode match, e.g. 0")
    r.set_defaults(func=cmd_paper_repro)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"homsim: config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigurationError as exc:
        print(f"homsim: invalid setting: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CliError, FitInputError) as exc:
        print(f"homsim: {exc}", file=sys.stderr)
        return getattr(exc, "code", EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
