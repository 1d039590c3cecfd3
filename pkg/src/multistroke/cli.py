"""Command-line front end: verify, train, sample, simulate, audit.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import stroke
from .data import NUM_CLASSES, class_means, make_dataset
from .denoiser import DenoiserModel
from .diagnostics import (BandMask, ClassCalibration, band_snr, dft2_logmag, grayscale, mean_one_class_score)
from .diffusion import linear_beta_schedule
from .io import (ConfigError, FormatError, RunConfig, load_config, read_checkpoint, read_tensor,
                 write_checkpoint, write_csv, write_manifest, write_pgm, write_tensor)
from .sampler import SamplePlan, sample
from .stroke import RoughnessSchedule
from .surrogate import build_surrogate, check_bound, simulate, trace_rows
from .training import TrainConfig, train
from .verify import CHECKS, run_checks

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("multistroke")


class UsageError(Exception):
    pass


def _prepare_out(out: str | None, required: bool = True) -> Path | None:
    if out is None:
        if required:
            raise UsageError("--out <dir> is required for this command")
        return None
    path = Path(out)
    if path.exists():
        raise UsageError(f"output directory {path} already exists; choose a new --out (runs never overwrite)")
    path.mkdir(parents=True)
    return path


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm,
                       batch_size=cfg.batch_size, steps=cfg.steps, label_drop=cfg.label_drop, seed=cfg.seed,
                       T=cfg.T, beta_1=cfg.beta_1, beta_T=cfg.beta_T, k=cfg.k, f_rough=cfg.f_rough,
                       w_max=cfg.w_max, buckets=cfg.buckets, aligned_target=cfg.aligned_target)


def _dataset(cfg: RunConfig):
    return make_dataset(cfg.dataset_size, cfg.image_size, cfg.channels, cfg.data_seed)


def cmd_verify(args) -> int:
    if args.inject_fault:
        stroke._set_fault(True)
    if args.filter and not any(args.filter in name for name, _ in CHECKS):
        raise UsageError(f"--filter {args.filter!r} matches no check; known checks: "
                         + ", ".join(name for name, _ in CHECKS))
    out = _prepare_out(args.out, required=False)
    results = []
    ok = run_checks(args.filter, collect=results)
    print("verify: all checks passed" if ok else "verify: FAILURES present")
    if out is not None:
        write_csv(out / "checks.csv", ["check", "statistic", "tolerance", "result"], (r.csv_row() for r in results))
        write_manifest(out, args.seed if args.seed is not None else 0, "verify")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args.out)
    images, labels = _dataset(cfg)
    tc = _train_config(cfg)
    model = DenoiserModel.create((cfg.channels, cfg.image_size, cfg.image_size), NUM_CLASSES, cfg.hidden,
                                 cfg.time_dim, cfg.class_dim, seed=cfg.seed)
    result = train(model, images, labels, tc, cfg.mode)
    write_checkpoint(out / "checkpoint.msck", result.model)
    header = ["step", "loss", "grad_norm"] + [f"bucket_{b}" for b in range(cfg.buckets)]
    write_csv(out / "metrics.csv", header, result.metrics_rows())
    since = max(1, cfg.steps - 499)
    rough = tc.roughness()
    summary = []
    rows = zip(result.buckets.bounds(), result.buckets.means(since), result.plain_buckets.means(since))
    for b, ((lo, hi), raw, plain) in enumerate(rows):
        summary.append([b, lo, hi, float(rough.weights[lo:hi + 1].max()), raw, plain])
    write_csv(out / "bucket_summary.csv",
              ["bucket", "t_first", "t_last", "w_max", "raw_loss_last_500", "unmixed_loss_last_500"], summary)
    write_manifest(out, cfg.seed, f"train mode={cfg.mode}")
    print(f"train: {cfg.mode}, {cfg.steps} steps, final loss {result.losses[-1] if result.losses else float('nan'):.4f}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _load(args)
    if not cfg.checkpoint:
        raise ConfigError("sample needs 'checkpoint = <path>' in the config")
    model = read_checkpoint(cfg.checkpoint)
    shape = model.image_shape
    if cfg.label > model.num_classes:
        raise ConfigError(f"label {cfg.label} exceeds the checkpoint's {model.num_classes} classes")
    if shape[-1] % cfg.k or shape[-2] % cfg.k:
        raise ConfigError(f"checkpoint image size {shape[-2]}x{shape[-1]} is not divisible by k={cfg.k}")
    out = _prepare_out(args.out)
    sched = linear_beta_schedule(cfg.T, cfg.beta_1, cfg.beta_T)
    rough = RoughnessSchedule(cfg.T, cfg.f_rough, cfg.w_max, cfg.k)
    labels = np.array([cfg.label if cfg.label else (i % model.num_classes) + 1 for i in range(cfg.num_samples)])
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.num_samples)
    for n_steps in cfg.step_budgets():
        sub = out / f"steps_{n_steps:03d}"
        sub.mkdir()
        plan = SamplePlan.uniform(cfg.T, n_steps, variance=cfg.variance, mode=cfg.mode, seed=cfg.seed)
        xs = np.stack([sample(model, sched, plan, int(y), shape, rough, np.random.default_rng(ss))
                       for y, ss in zip(labels, seeds)])
        write_tensor(sub / "samples.mstk", xs)
        write_tensor(sub / "labels.mstk", labels.astype(np.float64))
        for i, x in enumerate(xs):
            write_pgm(sub / f"sample_{i:03d}.pgm", grayscale(x))
        print(f"sample: {cfg.mode}, N={n_steps}, {len(xs)} samples -> {sub}")
    write_manifest(out, cfg.seed, f"sample mode={cfg.mode}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    shape = (cfg.channels, cfg.image_size, cfg.image_size)
    if cfg.sim_w < 0:
        weights = RoughnessSchedule(cfg.sim_steps, cfg.f_rough, cfg.w_max, cfg.k).weights
    else:
        weights = cfg.sim_w
    try:
        spec = build_surrogate(shape, cfg.k, cfg.sim_steps, rho=cfg.rho, kappa=cfg.kappa, sigma=cfg.sigma,
                               weights=weights, bias_energy=cfg.bias_energy, detail_kind=cfg.detail_kind,
                               n_samples=cfg.sim_samples, seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _prepare_out(args.out)
    trace = simulate(spec)
    write_csv(out / "energy_trace.csv", ["step", "E", "C2", "N", "bound", "margin"], trace_rows(trace, spec))
    reports = check_bound(trace, spec)
    failed = [r.t for r in reports if not r.ok]
    write_manifest(out, cfg.seed, "simulate")
    if failed:
        print(f"simulate: bound violated beyond 3-SE slack at steps {failed}")
        return EXIT_FAIL
    print(f"simulate: bound holds on all {len(reports)} steps (min margin {min(r.margin for r in reports):.4g})")
    return EXIT_OK


def _audit_rows(images, labels, cfg: RunConfig, means, global_mean, calib):
    classes = sorted(set(int(y) for y in labels))
    rows = []
    for kind in ("low", "high"):
        band = BandMask.make(kind, *images.shape[-2:])
        if cfg.reference == "global":
            rows.append(["band_snr_db", kind, band_snr(images, global_mean, band)])
            continue
        per_class = [(c, band_snr(images[labels == c], means[c], band), int(np.sum(labels == c))) for c in classes]
        overall = sum(v * n for _, v, n in per_class) / len(images)
        rows.append(["band_snr_db", kind, overall])
        rows += [[f"band_snr_db_class_{c}", kind, v] for c, v, _ in per_class]
    for c in classes:
        rows.append(["one_class_score", f"class_{c}", mean_one_class_score(images[labels == c], labels[labels == c], calib)])
    rows.append(["one_class_score", "all", mean_one_class_score(images, labels, calib)])
    return rows


def cmd_audit(args) -> int:
    cfg = _load(args)
    dirs = cfg.sample_dir_list()
    if not dirs:
        raise ConfigError("audit needs 'sample_dirs = <dir>[,<dir>...]' in the config")
    images, labels = _dataset(cfg)
    half = len(images) // 2
    if half < 1:
        raise ConfigError("dataset_size must be at least 2 for audit (train and calibration splits)")
    calib = ClassCalibration.fit(images[:half], labels[:half], images[half:], labels[half:])
    means = class_means(images, labels)
    global_mean = images.mean(axis=0)
    loaded = []
    for d in dirs:
        try:
            xs = read_tensor(Path(d) / "samples.mstk")
            ys = read_tensor(Path(d) / "labels.mstk").astype(np.int64)
        except (OSError, FormatError) as exc:
            raise ConfigError(f"cannot read samples from {d}: {exc}") from exc
        if xs.shape[1:] != images.shape[1:]:
            raise ConfigError(f"{d}: sample shape {xs.shape[1:]} does not match reference data {images.shape[1:]}")
        unknown = set(ys.tolist()) - set(means)
        if unknown:
            raise ConfigError(f"{d}: labels {sorted(unknown)} have no reference class")
        loaded.append((Path(d), xs, ys))
    out = _prepare_out(args.out)
    for i, (d, xs, ys) in enumerate(loaded):
        tag = f"{i:02d}_{d.name}"
        rows = _audit_rows(xs, ys, cfg, means, global_mean, calib)
        write_csv(out / f"audit_{tag}.csv", ["metric", "band/class", "value"], rows)
        logmag = dft2_logmag(grayscale(xs)).mean(axis=0)
        peak = logmag.max()
        write_pgm(out / f"logmag_{tag}.pgm", logmag / peak if peak > 0 else logmag, lo=0.0, hi=1.0)
        summary = {(m, k): v for m, k, v in rows}
        print(f"audit {d}: high-band SNR {summary[('band_snr_db', 'high')]:.2f} dB, "
              f"low-band SNR {summary[('band_snr_db', 'low')]:.2f} dB, "
              f"one-class {summary[('one_class_score', 'all')]:.1f}")
    write_manifest(out, cfg.seed, "audit")
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "train": cmd_train, "sample": cmd_sample, "simulate": cmd_simulate,
            "audit": cmd_audit}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multistroke", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help="output directory (must not exist)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "verify":
            p.add_argument("--filter", help="run only checks whose name contains this substring")
            p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be a nonnegative integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        stroke._set_fault(False)


if __name__ == "__main__":
    sys.exit(main())
