"""Acceptance gate: one check per release criterion, each under its runtime budget.

Run with pytest (a PASS/FAIL summary is printed at the end of the session) or
directly with ``python3 tests/test_acceptance.py``.
"""

import hashlib
import struct
import sys
import time

import numpy as np
import pytest

from multistroke import verify
from multistroke.cli import main as cli_main
from multistroke.data import make_dataset
from multistroke.denoiser import PARAM_NAMES, DenoiserModel, batch_loss_and_gradients
from multistroke.diagnostics import BandMask, ClassCalibration, band_snr, dft2, mean_one_class_score
from multistroke.diffusion import linear_beta_schedule
from multistroke.io import decode_tensor, encode_tensor
from multistroke.sampler import SamplePlan, sample_ddpm, sample_multistroke
from multistroke.stroke import RoughnessSchedule
from multistroke.training import LossBuckets, TrainConfig, train

RESULTS: list[str] = []


def all_passed(results):
    failed = [r for r in results if not r.passed]
    return not failed, "; ".join(f"{r.name} stat={r.statistic:.3g}" for r in failed) or f"{len(results)} checks"


def crit_algebra():
    return all_passed(verify.stroke_algebra())


def crit_envelope():
    return all_passed(verify.gamma_envelope())


def crit_variance():
    return all_passed(verify.variance_reduction(n=100_000))


def crit_prop1():
    return all_passed(verify.population_minimizer(n=1_000_000))


def crit_prop2():
    return all_passed(verify.surrogate_bounds(n=100_000))


def crit_iterated():
    return all_passed(verify.surrogate_iterated())


def crit_gradients():
    sched = linear_beta_schedule(500)
    rough = RoughnessSchedule(500, 0.75, 0.5, 2)
    rng = np.random.default_rng(0)
    model = DenoiserModel.create((1, 4, 4), num_classes=4, hidden=6, time_dim=4, class_dim=3, seed=1,
                                 zero_head=False)
    x0 = rng.standard_normal((4, 1, 4, 4))
    eps = rng.standard_normal((4, 1, 4, 4))
    t = np.array([20, 150, 320, 500])
    labels = np.array([0, 1, 3, 4])
    worst = 0.0
    for r in (None, rough):
        loss_fn = lambda: batch_loss_and_gradients(model, sched, x0, t, eps, labels, r)[0]
        _, grads, _ = batch_loss_and_gradients(model, sched, x0, t, eps, labels, r)
        for name in PARAM_NAMES:
            p = model.params[name]
            fd = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + 1e-5
                up = loss_fn()
                p[idx] = old - 1e-5
                down = loss_fn()
                p[idx] = old
                fd[idx] = (up - down) / 2e-5
            scale = max(np.linalg.norm(fd), np.linalg.norm(grads[name]), 1e-8)
            worst = max(worst, np.linalg.norm(fd - grads[name]) / scale)
    return worst <= 1e-5, f"max relative error {worst:.2e}"


def crit_sampler():
    sched = linear_beta_schedule(500)
    flat = RoughnessSchedule(500, 0.75, 0.0, 2)
    net = DenoiserModel.create((1, 8, 8), hidden=32, seed=5, zero_head=False)
    same = True
    for conv in ("fixedlarge", "fixedsmall"):
        for n in (500, 20):
            d = sample_ddpm(net, sched, SamplePlan.uniform(500, n, variance=conv, seed=3), 2, (1, 8, 8))
            plan = SamplePlan.uniform(500, n, variance=conv, mode="multistroke", seed=3)
            m = sample_multistroke(net, sched, flat, plan, 2, (1, 8, 8))
            same &= np.array_equal(d, m)
    jump = verify.jump_identities()[0]
    return same and jump.passed, f"bitwise={same}, contiguous jump err={jump.statistic:.1e}"


def crit_directional():
    images, labels = make_dataset(512, 8, 1, seed=0)
    model = DenoiserModel.create((1, 8, 8), seed=0)
    cfg = TrainConfig(lr=3e-4, steps=2000, seed=0)
    since = cfg.steps - 499
    means = {mode: train(model, images, labels, cfg, mode).buckets.means(since) for mode in ("ddpm", "multistroke")}
    rough = cfg.roughness()
    bounds = LossBuckets(cfg.T, cfg.buckets).bounds()
    stroked = [b for b, (lo, hi) in enumerate(bounds) if rough.weights[lo:hi + 1].max() > 0]
    ok = bool(stroked) and all(means["multistroke"][b] <= means["ddpm"][b] for b in stroked)
    detail = ", ".join(f"b{b}: ms={means['multistroke'][b]:.4f} ddpm={means['ddpm'][b]:.4f}" for b in stroked)
    return ok, detail


def checkerboard(n):
    return (-1.0) ** np.add.outer(np.arange(n), np.arange(n))


def crit_diagnostics():
    rng = np.random.default_rng(0)
    ref = rng.standard_normal((8, 8))
    gen = ref + 0.3 * rng.standard_normal((50, 8, 8))
    low, high = BandMask.make("low", 8, 8), BandMask.make("high", 8, 8)
    bumped = gen + 0.5 * checkerboard(8)
    d_high = band_snr(gen, ref, high) - band_snr(bumped, ref, high)
    d_low = abs(band_snr(gen, ref, low) - band_snr(bumped, ref, low))
    x, y = make_dataset(3000, seed=0)
    calib = ClassCalibration.fit(x[:1500], y[:1500], x[1500:], y[1500:])
    xh, yh = make_dataset(3000, seed=1)
    score = mean_one_class_score(xh, yh, calib) / 100
    worst = 0.0
    for shape in ((8, 8), (5, 7), (16, 16)):
        z = rng.standard_normal(shape)
        worst = max(worst, abs(np.sum(np.abs(dft2(z)) ** 2) / (z.size * np.sum(z**2)) - 1))
    ok = d_high > 3.0 and d_low < 0.1 and abs(score - 0.5) <= 0.05 and worst <= 1e-10
    return ok, f"high drop {d_high:.2f} dB, low change {d_low:.3f} dB, one-class {score:.3f}, parseval {worst:.1e}"


def crit_io(tmp_path):
    rng = np.random.default_rng(0)
    ok = True
    for shape in ((), (0,), (3,), (2, 3), (4, 1, 8, 8)):
        arr = rng.standard_normal(shape)
        back = decode_tensor(encode_tensor(arr))
        ok &= back.shape == arr.shape and back.tobytes() == arr.tobytes()
    golden = b"MSTK" + struct.pack("<IIQQ", 1, 2, 2, 3) + struct.pack("<6d", *range(6))
    ok &= encode_tensor(np.arange(6.0).reshape(2, 3)) == golden
    cfg = tmp_path / "run.cfg"
    cfg.write_text("T = 50\nimage_size = 4\ndataset_size = 32\nhidden = 8\nsteps = 20\nbatch_size = 4\n")
    hashes = []
    for i in range(2):
        assert cli_main(["train", "--config", str(cfg), "--out", str(tmp_path / f"r{i}"), "--seed", "7"]) == 0
        hashes.append(hashlib.sha256((tmp_path / f"r{i}" / "manifest.json").read_bytes()).hexdigest())
    ok &= hashes[0] == hashes[1]
    return ok, f"manifest sha256 {hashes[0][:12]}.. x2"


CRITERIA = [
    ("operator algebra", crit_algebra, 1.0),
    ("spectral envelope", crit_envelope, 1.0),
    ("variance reduction", crit_variance, 5.0),
    ("minimizer equivalence", crit_prop1, 30.0),
    ("three-term detail bound", crit_prop2, 60.0),
    ("iterated contraction", crit_iterated, 30.0),
    ("gradient correctness", crit_gradients, 10.0),
    ("sampler reductions", crit_sampler, None),
    ("directional toy experiment", crit_directional, 600.0),
    ("diagnostics sanity", crit_diagnostics, None),
    ("io golden", crit_io, None),
]


def run_criterion(name, fn, budget, *args):
    start = time.perf_counter()
    ok, detail = fn(*args)
    elapsed = time.perf_counter() - start
    in_time = budget is None or elapsed < budget
    limit = f" < {budget:.0f}s" if budget else ""
    line = (f"{'PASS' if ok and in_time else 'FAIL'}  {name:<28} {elapsed:7.2f}s{limit}  {detail}"
            + ("" if in_time else "  [over runtime budget]"))
    RESULTS.append(line)
    return ok, in_time, line


@pytest.mark.slow
@pytest.mark.parametrize("name, fn, budget", CRITERIA, ids=[c[0].replace(" ", "_") for c in CRITERIA])
def test_acceptance(name, fn, budget, tmp_path):
    args = (tmp_path,) if fn is crit_io else ()
    ok, in_time, line = run_criterion(name, fn, budget, *args)
    print(line)
    assert ok and in_time, line


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    failures = 0
    for name, fn, budget in CRITERIA:
        with tempfile.TemporaryDirectory() as tmp:
            args = (Path(tmp),) if fn is crit_io else ()
            ok, in_time, line = run_criterion(name, fn, budget, *args)
        print(line, flush=True)
        failures += not (ok and in_time)
    sys.exit(1 if failures else 0)
