"""Command-line front end.

Subcommands: simulate, sweep, sendfile, recvfile, chirp-test, channel-info.
Configuration comes from ``--preset`` and/or a TOML ``--config`` file (the
file overlays the preset); ``--seed``, ``--trials`` and ``--eb-n0`` override
both.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .channel import add_awgn, apply_channel, load_channel, NoiseSpec
from .config import load_config, merge_config, build_trial_config
from .exceptions import (
    CalibrationError,
    ConfigurationError,
    EqualizerDivergence,
    FramingError,
    SyncError,
    TapFileError,
)
from .harness import (
    TrialConfig,
    run_batch,
    success_criterion,
    sweep,
    write_ber_series_csv,
    write_constellation_csv,
    write_mse_trace_csv,
    write_summary_csv,
)
from .modem import PassbandSignal
from .presets import preset_config
from .transport import recv_file, send_file


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def _load_cfg(args) -> TrialConfig:
    cfg_dict: dict = {}
    base_dir = None
    if args.preset:
        cfg_dict = preset_config(args.preset)
    if args.config:
        file_cfg = load_config(args.config)
        cfg_dict = merge_config(cfg_dict, file_cfg) if cfg_dict else file_cfg
        base_dir = Path(args.config).parent
    if not cfg_dict:
        raise ConfigurationError("pass --preset and/or --config")
    trial = build_trial_config(cfg_dict, base_dir=base_dir)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        overrides["n_trials"] = args.trials
    if overrides:
        trial = dataclasses.replace(trial, **overrides)
    return trial


def _add_common(parser, trials=True):
    parser.add_argument("--preset", help="named built-in configuration")
    parser.add_argument("--config", help="TOML config file (overlays the preset)")
    parser.add_argument("--seed", type=int, help="master RNG seed override")
    if trials:
        parser.add_argument("--trials", type=int, help="trials per grid point")
    parser.add_argument("--out", help="output directory", default=".")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    ebs = _parse_float_list(args.eb_n0) if args.eb_n0 else [cfg.noise.eb_n0_db]
    if args.traces:
        cfg = dataclasses.replace(cfg, keep_traces=True)
    out = _outdir(args)
    reports = []
    for eb in sorted(ebs):
        point = dataclasses.replace(
            cfg, noise=dataclasses.replace(cfg.noise, eb_n0_db=eb)
        )
        rep = run_batch(point)
        reports.append(rep)
        print(
            f"eb_n0={eb:6.2f} dB  ber={rep.ber:.3e}  "
            f"converged={rep.n_converged}/{rep.n_trials}  "
            f"output_snr={rep.output_snr_db:.1f} dB"
        )
    write_ber_series_csv(reports, out / "ber_series.csv")
    result = harness.SweepResult(
        series=(
            harness.SweepSeries(
                order=cfg.order,
                fb=cfg.frame.fb,
                reports=tuple(reports),
                success=success_criterion(reports).success,
                min_snr_db=success_criterion(reports).min_snr_db,
            ),
        )
    )
    write_summary_csv(result, out / "summary.csv")
    if args.traces:
        last = reports[-1].trials[-1]
        if last.equalizer_output is not None:
            write_mse_trace_csv(last.mse_trace, out / "mse_trace.csv")
            write_constellation_csv(last.equalizer_output, out / "constellation.csv")
    print(f"wrote {out / 'ber_series.csv'} and {out / 'summary.csv'}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    result = sweep(
        cfg,
        orders=_parse_int_list(args.m) if args.m else None,
        symbol_rates=_parse_float_list(args.fb) if args.fb else None,
        eb_n0_dbs=_parse_float_list(args.eb_n0) if args.eb_n0 else None,
    )
    write_summary_csv(result, out / "summary.csv")
    for s in result.series:
        name = f"series_m{s.order}_fb{int(s.fb)}.csv"
        write_ber_series_csv(s.reports, out / name)
        verdict = "success" if s.success else "failure"
        at = f" at {s.min_snr_db:g} dB" if s.min_snr_db is not None else ""
        print(f"M={s.order:<4d} fb={s.fb:>10g} Hz: {verdict}{at}")
    print(f"wrote {out / 'summary.csv'}")
    return 0


def _cmd_sendfile(args) -> int:
    cfg = _load_cfg(args)
    frames = send_file(args.infile, cfg)
    out = Path(args.out)
    arrays = {f"frame_{i:05d}": f.samples for i, f in enumerate(frames)}
    meta = {"n_packets": len(frames), "sample_rate": frames[0].sample_rate}
    np.savez(out, meta=json.dumps(meta), **arrays)
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def _cmd_recvfile(args) -> int:
    cfg = _load_cfg(args)
    archive = np.load(args.infile, allow_pickle=False)
    meta = json.loads(str(archive["meta"]))
    fs = float(meta["sample_rate"])
    frames = [
        PassbandSignal(archive[f"frame_{i:05d}"], fs)
        for i in range(int(meta["n_packets"]))
    ]
    if args.channel:
        model = load_channel(args.channel)
        frames = [apply_channel(f, model, resample_taps=True) for f in frames]
    if args.eb_n0 is not None:
        k = cfg.order.bit_length() - 1
        n_bits = cfg.frame.n_symbols * k
        noise = NoiseSpec(eb_n0_db=args.eb_n0)
        rng = np.random.default_rng(cfg.rng_seed)
        frames = [add_awgn(f, n_bits, noise, rng=rng) for f in frames]
    report = recv_file(frames, cfg, out_path=args.outfile)
    ok = sum(1 for p in report.packets if p.ok)
    print(f"decoded {ok}/{report.n_packets} packets; wrote {args.outfile}")
    for p in report.packets:
        if not p.ok:
            print(f"  packet {p.index}: FAILED ({p.reason})")
    return 0 if report.all_ok else 3


def _cmd_chirp_test(args) -> int:
    cfg = _load_cfg(args)
    spec = cfg.frame
    eb = args.eb_n0 if args.eb_n0 is not None else cfg.noise.eb_n0_db
    n_trials = args.trials or 100
    cfg = dataclasses.replace(
        cfg, noise=dataclasses.replace(cfg.noise, eb_n0_db=eb)
    )
    rows = []
    hits = 0
    for trial in range(n_trials):
        res = harness.sync_trial(cfg, trial)
        rows.append(
            (trial, res.true_delay,
             res.offset_error if res.offset_error is not None else "",
             int(res.detected))
        )
        if res.detected and abs(res.offset_error) <= 1:
            hits += 1
    out = _outdir(args)
    import csv as _csv

    with open(out / "chirp_test.csv", "w", newline="", encoding="utf-8") as fh:
        wr = _csv.writer(fh)
        wr.writerow(["trial", "true_delay", "offset_error_samples", "detected"])
        wr.writerows(rows)
    print(
        f"offset error within +/-1 sample: {hits}/{n_trials} trials "
        f"at Eb/N0={eb:g} dB (time-bandwidth "
        f"{spec.chirp_duration * spec.fb:g})"
    )
    return 0


def _cmd_channel_info(args) -> int:
    model = load_channel(args.tapfile)
    taps = model.taps
    nz = np.nonzero(taps)[0]
    print(f"label:        {model.label}")
    print(f"sample rate:  {model.tap_sample_rate:g} Hz")
    print(f"taps:         {len(taps)}")
    print(f"nonzero taps: {len(nz)}")
    print(f"peak index:   {int(np.argmax(np.abs(taps)))}")
    print(f"delay spread: {model.delay_spread_s * 1e6:.2f} us")
    energy = float(np.sum(taps**2))
    print(f"tap energy:   {energy:.4f} (peak-normalized)")
    if args.out and args.out != ".":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        import csv as _csv

        with open(out / "taps.csv", "w", newline="", encoding="utf-8") as fh:
            wr = _csv.writer(fh)
            wr.writerow(["index", "delay_s", "amplitude"])
            for i, a in enumerate(taps):
                wr.writerow([i, i / model.tap_sample_rate, repr(float(a))])
        print(f"wrote {out / 'taps.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tissuemodem",
        description="Ultrasonic QAM modem simulator: DFE receiver, FIR "
        "channels, Monte-Carlo BER harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configuration over a list of Eb/N0 points")
    _add_common(p)
    p.add_argument("--eb-n0", help="comma-separated Eb/N0 list in dB")
    p.add_argument("--traces", action="store_true", help="also dump MSE/constellation CSVs")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="scan a (M, fb, Eb/N0) grid")
    _add_common(p)
    p.add_argument("--m", help="comma-separated QAM orders")
    p.add_argument("--fb", help="comma-separated symbol rates in Hz")
    p.add_argument("--eb-n0", help="comma-separated Eb/N0 list in dB")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("sendfile", help="modulate a file into packet frames (.npz)")
    p.add_argument("infile")
    _add_common(p, trials=False)
    p.set_defaults(func=_cmd_sendfile)

    p = sub.add_parser("recvfile", help="demodulate packet frames back into a file")
    p.add_argument("infile", help=".npz produced by sendfile (or recorded frames)")
    p.add_argument("--outfile", required=True, help="reassembled output path")
    _add_common(p, trials=False)
    p.add_argument("--channel", help="tap file to apply before decoding")
    p.add_argument("--eb-n0", type=float, help="add AWGN at this per-bit SNR")
    p.set_defaults(func=_cmd_recvfile)

    p = sub.add_parser("chirp-test", help="sync diagnostics over random-delay trials")
    _add_common(p)
    p.add_argument("--eb-n0", type=float, help="per-bit SNR in dB")
    p.set_defaults(func=_cmd_chirp_test)

    p = sub.add_parser("channel-info", help="inspect a channel tap file")
    p.add_argument("tapfile")
    p.add_argument("--out", default=".", help="directory for taps.csv")
    p.set_defaults(func=_cmd_channel_info)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        CalibrationError,
        ConfigurationError,
        EqualizerDivergence,
        FramingError,
        SyncError,
        TapFileError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
