"""Command-line entry point: ``tddip <command> [options]``.

Exit codes: 0 success, 2 configuration or usage error, 3 file I/O or
container error, 4 numerical abort, 5 self-test failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from tddip import artifacts, plotting, selftest
from tddip.config import PRESETS, ConfigError, RunConfig
from tddip.diffcore import NumericalAbort
from tddip.io import ContainerError, dump_grayscale, write_container
from tddip.latents import SCENARIOS, lag1_correlation, scenario_latents
from tddip.metrics import (cross_section, evaluate_series, magnitude_deviation, rsnr, sweep_delimited,
                           sweep_latent_size, sweep_table, temporal_std)
from tddip.phantom import FrameSeries, make_cine_phantom, make_coil_maps, phantom_frame, simulate_stream
from tddip.recon import bp_reconstruct, cs_reconstruct, dip_reconstruct, expand_bins, ov_reconstruct
from tddip.recon.dip import render_latents

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_SELFTEST = 5

DEFAULT_PRESET = "dynamic-desk"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# configuration plumbing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file with [run]/[phantom]/... sections")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help=f"named protocol (default {DEFAULT_PRESET})")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="output directory (beats TDDIP_OUTDIR)")
    p.add_argument("--threads", type=int, help="worker threads (beats TDDIP_THREADS)")
    p.add_argument("--parallel", action="store_true",
                   help="leave reference mode so --threads takes effect (ordered reduction)")


# dedicated flags that map onto configuration keys
FLAG_KEYS = {
    "seed": "run.seed", "out": "run.outdir", "threads": "run.threads",
    "mode": "phantom.mode", "phases": "phantom.phases", "spokes_per_phase": "phantom.spokes_per_phase",
    "frames": "phantom.frames", "coils": "phantom.coils", "noise": "phantom.noise",
    "method": "engine.method", "n": "engine.n", "iterations": "engine.iterations", "lr": "engine.lr",
    "lam": "engine.cs_lambda", "latent_mode": "latents.mode", "column": "metrics.column",
}


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.sets:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = val.strip()
    for attr, key in FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = str(v)
    if getattr(args, "parallel", False):
        out["run.reference"] = "false"
    return out


def _resolve(args) -> RunConfig:
    return RunConfig.resolve(args.preset or DEFAULT_PRESET, args.config, _overrides(args))


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.get("run.outdir"))
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    return out


def _write_text(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n")


def _dump_frames(series: FrameSeries, out: Path, prefix: str, every: int = 1) -> None:
    mags = np.abs(series.frames)
    window = tuple(np.percentile(mags, [1, 99]))
    for k in range(0, series.K, every):
        dump_grayscale(mags[k], out / f"{prefix}_{k:03d}.pgm", window)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    out = _outdir(cfg)
    pcfg = cfg.phantom()
    traj = cfg.trajectory()
    coils = make_coil_maps(cfg.get("phantom.coils"), pcfg.n_image, cfg.seed)
    mode = cfg.get("phantom.mode")
    method = cfg.get("engine.nufft")
    if mode == "retrospective":
        phases = cfg.get("phantom.phases") or pcfg.K
        pcfg = replace(pcfg, K=phases)
        truth = make_cine_phantom(pcfg)
        stream = simulate_stream(truth, traj, coils, pcfg.noise, mode, cfg.seed, phases,
                                 cfg.get("phantom.spokes_per_phase"), method)
    else:
        truth = make_cine_phantom(pcfg)
        stream = simulate_stream(truth, traj, coils, pcfg.noise, mode, cfg.seed, method=method)
    meta = {"seed": cfg.seed, "mode": mode}
    artifacts.save_series(out / "truth.tddr", truth, {**meta, "phantom": json.dumps(pcfg.to_dict())})
    artifacts.save_coils(out / "coils.tddr", coils, cfg.seed)
    artifacts.save_stream(out / "stream.tddr", stream, meta)
    _dump_frames(truth, out, "truth")
    dump_grayscale(cross_section(truth, cfg.get("metrics.column")).T, out / "truth_yt.pgm")
    manifest = [
        f"grid           {pcfg.n_image}x{pcfg.n_image}",
        f"frames         {truth.K}",
        f"spokes         {stream.K}",
        f"coils          {coils.count}",
        f"mode           {mode}",
        f"samples/spoke  {traj.m_omega}",
        f"noise sigma    {pcfg.noise}",
        f"seed           {cfg.seed}",
        "files          truth.tddr coils.tddr stream.tddr truth_*.pgm truth_yt.pgm config.resolved.ini",
    ]
    _write_text(out / "manifest.txt", "\n".join(manifest))
    print("\n".join(manifest))
    return EXIT_OK


def _load_inputs(args):
    stream, smeta = artifacts.load_stream(args.stream)
    coils_path = args.coil_maps or Path(args.stream).with_name("coils.tddr")
    coils = artifacts.load_coils(coils_path)
    return stream, coils, smeta


def _progress(total: int):
    step = max(1, total // 10)
    t0 = time.perf_counter()

    def report(it, loss):
        if (it + 1) % step == 0 or it + 1 == total:
            _log(f"  iter {it + 1:>6}/{total}  loss {loss:.6g}  {time.perf_counter() - t0:7.1f}s")
    return report


def cmd_reconstruct(args) -> int:
    cfg = _resolve(args)
    stream, coils, _ = _load_inputs(args)
    out = _outdir(cfg)
    method = cfg.get("engine.method")
    n = cfg.get("engine.n")
    extra = {}
    model = None
    _log(f"reconstructing {stream.K} spokes with {method} (n={n})")
    try:
        if method == "dip":
            dcfg = cfg.dip()
            if dcfg.generator.output_hw != stream.trajectory.n_image:
                raise ConfigError(f"generator output {dcfg.generator.output_hw}px does not match the "
                                  f"{stream.trajectory.n_image}px stream; adjust generator.latent_hw/stages")
            result, model = dip_reconstruct(stream, coils, dcfg, _progress(dcfg.iterations))
        elif method == "cs":
            result = cs_reconstruct(stream, coils, n, cfg.cs())
            extra["bin_frames"] = result.series.frames
            result.series = expand_bins(result.series, result.extras["bins"])
        elif method == "bp":
            result = bp_reconstruct(stream, coils, n, cfg.get("engine.nufft"))
        else:
            result = ov_reconstruct(stream, coils, cfg.get("engine.nufft"))
            extra["static"] = result.series.frames
            result.series = FrameSeries(np.repeat(result.series.frames, stream.K, axis=0))
    except NumericalAbort as err:
        diag = err.diagnostics()
        _write_text(out / "abort.json", json.dumps(diag, indent=2))
        _log(f"numerical abort: {diag}")
        return EXIT_NUMERIC
    artifacts.save_result(out / "result.tddr", result, extra)
    if model is not None:
        artifacts.save_checkpoint(out / "checkpoint.tddr", model)
    if len(result.loss_trace):
        plotting.loss_trace(result.loss_trace, out / "loss.png")
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        w.writerows([i + 1, f"{v:.10g}"] for i, v in enumerate(result.loss_trace))
        _write_text(out / "loss.csv", buf.getvalue())
    _dump_frames(result.series, out, "frame")
    _write_text(out / "timing.txt", f"wall_clock_seconds {result.wall_clock:.3f}")
    print(f"{method}: {result.series.K} frames -> {out / 'result.tddr'} ({result.wall_clock:.1f}s)")
    return EXIT_OK


def _label(path: Path, meta: dict) -> str:
    try:
        return json.loads(meta.get("config", "{}")).get("engine") or path.stem
    except json.JSONDecodeError:
        return path.stem


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    truth, _ = artifacts.load_series(args.truth)
    out = _outdir(cfg)
    column = cfg.get("metrics.column")
    results = {}
    for i, path in enumerate(args.result):
        series, _, meta = artifacts.load_result(path)
        label = args.labels[i] if args.labels and i < len(args.labels) else _label(Path(path), meta)
        if label in results:
            label = f"{label}{i}"
        if series.frames.shape != truth.frames.shape:
            raise ConfigError(f"{path}: frames {series.frames.shape} do not match truth {truth.frames.shape}")
        results[label] = series
    table_lines, rows = [], []
    curves = {}
    for label, series in results.items():
        rep = evaluate_series(truth, series)
        curves[label] = rep.per_frame
        table_lines += [f"== {label}", rep.table(), ""]
        for k, (v, (a, b)) in enumerate(zip(rep.per_frame, rep.fits)):
            rows.append([label, k, f"{v:.6f}", f"{a:.6g}", f"{b:.6g}"])
        rows.append([label, "mean", f"{rep.mean:.6f}", "", ""])
        dump_grayscale(cross_section(series, column).T, out / f"yt_{label}.pgm")
        dump_grayscale(rep.temporal_std_map, out / f"std_{label}.pgm")
        plotting.std_map(rep.temporal_std_map, out / f"std_{label}.png", f"temporal std ({label})")
    dump_grayscale(cross_section(truth, column).T, out / "yt_truth.pgm")
    summary = "\n".join(f"{label:<12} mean RSNR {np.mean(v):8.3f} dB" for label, v in curves.items())
    _write_text(out / "metrics.txt", "\n".join(table_lines) + "\n" + summary)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "frame", "rsnr_db", "a", "b"])
    w.writerows(rows)
    _write_text(out / "metrics.csv", buf.getvalue())
    plotting.rsnr_curves(curves, out / "rsnr.png")
    plotting.cross_sections({"truth": truth, **results}, out / "cross_sections.png", column)
    plotting.frame_strip({"truth": truth, **results}, out / "frames.png")
    print(summary)
    return EXIT_OK


def cmd_scenario(args) -> int:
    cfg = _resolve(args)
    model = artifacts.load_checkpoint(args.checkpoint)
    out = _outdir(cfg)
    kind = args.kind
    K = model.schedule.K
    if args.times:
        times = np.array(args.times, dtype=float)
    elif kind == "fine-interpolation":
        times = np.arange(0, 2 * (K - 1) + 1) / 2.0
    elif kind == "extrapolation":
        times = np.arange(K + K // 4, dtype=float)
    else:
        times = np.arange(K, dtype=float)
    gen = model.params.config
    if kind == "scalar" and gen.latent_hw != 1:
        raise ConfigError("the scalar scenario needs a generator trained on 1x1 latents "
                          "(train one with `sweep --sizes 1` or generator.latent_hw=1)")
    zs = scenario_latents(kind, model.schedule, times, seed=cfg.seed, energy=args.energy)
    frames = render_latents(model.params, zs, times)
    inside = np.clip(times, 0, model.schedule.t_max)
    base_z = scenario_latents("fine-interpolation", model.schedule, inside)
    base = render_latents(model.params, base_z, times)
    std_val, std_m = temporal_std(frames) if frames.K > 1 else (0.0, np.zeros(frames.frames.shape[1:]))
    base_std = temporal_std(base)[0] if base.K > 1 else 0.0
    lines = [
        f"scenario             {kind}",
        f"frames               {frames.K}",
        f"temporal std         {std_val:.6g}",
        f"reference std        {base_std:.6g}",
        f"std ratio            {std_val / base_std if base_std > 0 else float('nan'):.4f}",
        f"magnitude deviation  {magnitude_deviation(base, frames):.4f}",
        f"latent lag-1 corr    {lag1_correlation(zs) if len(zs) > 2 else float('nan'):.4f}",
    ]
    rows = [["time", "mean_magnitude", "deviation_from_interpolated"]]
    for k, t in enumerate(times):
        dev = np.mean(np.abs(np.abs(frames.frames[k]) - np.abs(base.frames[k]))) / np.mean(np.abs(base.frames[k]))
        rows.append([f"{t:g}", f"{np.mean(np.abs(frames.frames[k])):.6g}", f"{dev:.6g}"])
    if args.truth:
        _, tmeta = artifacts.load_series(args.truth)
        if "phantom" not in tmeta:
            raise ConfigError(f"{args.truth}: no phantom description stored; cannot evaluate off-grid times")
        pcfg = artifacts.phantom_from_json(tmeta["phantom"])
        scores = [rsnr(phantom_frame(t, pcfg), f).db for t, f in zip(times, frames.frames)]
        lines.append(f"mean RSNR vs phantom {np.mean(scores):.3f} dB")
        rows[0].append("rsnr_db")
        for r, s in zip(rows[1:], scores):
            r.append(f"{s:.6f}")
    _write_text(out / "scenario.txt", "\n".join(lines))
    buf = _io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    _write_text(out / "scenario.csv", buf.getvalue())
    write_container(out / "scenario.tddr", {"frames": frames.frames, "times": times, "latents": zs},
                    {"kind": "series", "scenario": kind, "seed": cfg.seed})
    _dump_frames(frames, out, kind)
    dump_grayscale(std_m, out / f"std_{kind}.pgm")
    plotting.frame_strip({"interpolated": base, kind: frames}, out / "strip.png",
                         title=f"scenario: {kind}")
    print("\n".join(lines))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    sizes = args.sizes or cfg.get("metrics.sizes")
    n_image = cfg.get("phantom.n_image")
    for s in sizes:
        if s < 1 or n_image % s or (n_image // s) & (n_image // s - 1):
            raise ConfigError(f"latent size {s} does not divide {n_image} by a power of two")
    out = _outdir(cfg)
    if args.stream:
        stream, coils, _ = _load_inputs(args)
        truth, _ = artifacts.load_series(args.truth or Path(args.stream).with_name("truth.tddr"))
    else:
        pcfg = cfg.phantom()
        coils = make_coil_maps(cfg.get("phantom.coils"), pcfg.n_image, cfg.seed)
        truth = make_cine_phantom(pcfg)
        stream = simulate_stream(truth, cfg.trajectory(), coils, pcfg.noise, "continuous", cfg.seed,
                                 method=cfg.get("engine.nufft"))
    base = cfg.dip()

    def keep(row, result, model):
        _log(f"  size {row.size}x{row.size}: {row.rsnr_db:.2f} dB ({row.seconds:.0f}s)")
        artifacts.save_checkpoint(out / f"checkpoint_{row.size}.tddr", model)
        artifacts.save_result(out / f"result_{row.size}.tddr", result)
        dump_grayscale(cross_section(result.series).T, out / f"yt_{row.size}.pgm")

    try:
        rows = sweep_latent_size(sizes, stream, coils, truth, base, keep)
    except NumericalAbort as err:
        _write_text(out / "abort.json", json.dumps(err.diagnostics(), indent=2))
        _log(f"numerical abort: {err.diagnostics()}")
        return EXIT_NUMERIC
    _write_text(out / "sweep.txt", sweep_table(rows))
    _write_text(out / "sweep.csv", sweep_delimited(rows))
    plotting.sweep_bars(rows, out / "sweep.png")
    print(sweep_table(rows))
    return EXIT_OK


def cmd_selftest(args) -> int:
    groups = args.groups or list(selftest.GROUPS)
    unknown = sorted(set(groups) - set(selftest.GROUPS))
    if unknown:
        raise ConfigError(f"unknown selftest group(s): {', '.join(unknown)}; choose from {', '.join(selftest.GROUPS)}")
    checks = selftest.run(groups)
    for c in checks:
        print(c.line())
    failed = [c.name for c in checks if not c.ok]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed" + (f"; failed: {', '.join(failed)}"
                                                                        if failed else ""))
    return EXIT_SELFTEST if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tddip", description="Dynamic radial MRI with a time-dependent deep image prior")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="phantom, coil maps and a radial spoke stream")
    _common(s)
    s.add_argument("--mode", choices=["continuous", "retrospective"])
    s.add_argument("--phases", type=int)
    s.add_argument("--spokes-per-phase", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--coils", type=int)
    s.add_argument("--noise", type=float)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reconstruct", help="run one engine on a stream")
    _common(r)
    r.add_argument("--method", choices=["dip", "cs", "bp", "ov"])
    r.add_argument("--stream", type=Path, required=True)
    r.add_argument("--coils", dest="coil_maps", type=Path, help="coil maps (default: coils.tddr beside the stream)")
    r.add_argument("--n", type=int, help="spokes per frame window")
    r.add_argument("--iterations", type=int)
    r.add_argument("--lr", type=float)
    r.add_argument("--lambda", dest="lam", type=float, help="CS temporal TV weight")
    r.add_argument("--latent-mode", choices=["interpolated", "independent"])
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("evaluate", help="RSNR tables, y-t sections, temporal std maps")
    _common(e)
    e.add_argument("--truth", type=Path, required=True)
    e.add_argument("--result", type=Path, nargs="+", required=True)
    e.add_argument("--labels", nargs="+")
    e.add_argument("--column", type=int, help="image column for y-t sections (default: center)")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("scenario", help="render a trained generator under a latent scenario")
    _common(c)
    c.add_argument("--checkpoint", type=Path, required=True)
    c.add_argument("--kind", choices=SCENARIOS, required=True)
    c.add_argument("--times", type=float, nargs="+")
    c.add_argument("--energy", type=float, default=0.10, help="perturbation energy ratio")
    c.add_argument("--truth", type=Path, help="ground truth series for RSNR against the analytic phantom")
    c.set_defaults(func=cmd_scenario)

    w = sub.add_parser("sweep", help="latent-size sweep under one protocol")
    _common(w)
    w.add_argument("--sizes", type=int, nargs="+")
    w.add_argument("--stream", type=Path)
    w.add_argument("--coils", dest="coil_maps", type=Path)
    w.add_argument("--frames", type=int, help="frames to simulate when no stream is given")
    w.add_argument("--n", type=int, help="spokes per frame window")
    w.add_argument("--iterations", type=int)
    w.add_argument("--lr", type=float)
    w.add_argument("--truth", type=Path)
    w.set_defaults(func=cmd_sweep)

    t = sub.add_parser("selftest", help="numerical self checks")
    t.add_argument("groups", nargs="*", metavar="group", help=f"subset of {', '.join(selftest.GROUPS)}")
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        _log(f"configuration error: {err}")
        return EXIT_CONFIG
    except (ContainerError, OSError) as err:
        _log(f"I/O error: {err}")
        return EXIT_IO
    except NumericalAbort as err:
        _log(f"numerical abort: {err.diagnostics()}")
        return EXIT_NUMERIC
    except ValueError as err:
        _log(f"invalid input: {err}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
