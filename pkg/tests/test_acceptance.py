"""Acceptance criteria 1-10.  Each test prints one PASS/FAIL line.

Criteria 7 and 8 train the tiny model twice for 2000 steps; on a single
CPU core this takes hours.
"""

import math
import time

import numpy as np
import pytest

from sample_images import write_folders
from tcsr.data import load_folder
from tcsr.gradcheck import run_all
from tcsr.io import save_checkpoint
from tcsr.metrics import PSNR_CAP, psnr, ssim
from tcsr.model import (conv_param_count, count_params, deep_features, estimate_flops,
                        init_model, reference_config, zero_branch_terminals)
from tcsr.na import NAParams, na_forward
from tcsr.nn import ShiftSpec, spatial_shift
from tcsr.train import TrainConfig, evaluate, train
from tcsr.verify import depthwise_shift_oracle, global_sa_oracle, relative_error


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return emit


def test_c01_na_matches_global_attention(report):
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(10):
        r = np.random.default_rng(100 + i)
        k = (3, 5, 7)[i % 3]
        c, heads = 8, 2
        w = [r.standard_normal((c, c)) * 0.5 for _ in range(4)]
        p = NAParams(*w, r.standard_normal(c), r.standard_normal((heads, 2 * k - 1, 2 * k - 1)),
                     heads, k)
        x = r.standard_normal((1, k, k, c))
        err = relative_error(na_forward(x, p), global_sa_oracle(x, *p.arrays(), heads=heads))
        worst = max(worst, float(err.max()))
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-6 and dt < 10, f"max rel err {worst:.2e} (<= 1e-6), {dt:.2f} s (< 10 s)")


def test_c02_gradient_suite(report):
    t0 = time.perf_counter()
    reports = run_all()
    dt = time.perf_counter() - t0
    failed = sorted({f"{r.op}/seed{r.seed}" for r in reports if not r.passed})
    worst = max(max(r.max_rel_error.values()) for r in reports)
    ops = sorted({r.op for r in reports})
    report(2, not failed and dt < 120,
           f"{len(reports)} checks over {len(ops)} ops, max rel err {worst:.2e} (<= 1e-4), "
           f"failed {failed or 'none'}, {dt:.1f} s (< 120 s)")


def test_c03_spatial_shift_oracle(report):
    mismatches = 0
    for i in range(10):
        r = np.random.default_rng(200 + i)
        stride = 1 + i % 2
        spec = ShiftSpec(stride=stride)
        h, w = int(r.integers(3, 9)), int(r.integers(3, 9))
        x = r.standard_normal((int(r.integers(1, 3)), h, w, 8 * int(r.integers(1, 4))))
        mismatches += not np.array_equal(spatial_shift(x, spec),
                                         depthwise_shift_oracle(x, spec.directions))
    report(3, mismatches == 0, f"{10 - mismatches}/10 instances bitwise equal in f64")


def test_c04_complexity_crossover(report):
    ratio = estimate_flops("na", 1, 1, 64, 13) / estimate_flops("conv", 1, 1, 64, 3)
    ok = 0.85 <= ratio <= 1.0 and ratio == 33920 / 36864
    report(4, ok, f"NA(K=13)/conv(K=3) = {ratio:.4f}, expected 33920/36864 = {33920 / 36864:.4f}")


def test_c05_parameter_decoupling(report):
    c, h = 64, 4
    base_na = count_params(init_model(reference_config("B", blocks=1, kernel=3))).get("blocks.0.na").params
    bad = []
    for k in range(3, 14, 2):
        na = count_params(init_model(reference_config("B", blocks=1, kernel=k))).get("blocks.0.na").params
        if na - base_na != h * ((2 * k - 1) ** 2 - 25):
            bad.append(f"NA k={k}")
        if conv_param_count(c, c, k) - conv_param_count(c, c, 3) != c * c * (k * k - 9):
            bad.append(f"conv k={k}")
    report(5, not bad, "k = 3..13: NA grows by h((2k-1)^2-25) only, conv by C^2(k^2-9)"
           + (f"; mismatches {bad}" if bad else ""))


def test_c06_effn_cost_neutral(report):
    cfg = reference_config("B", blocks=2)
    effn = count_params(init_model(cfg))
    ffn = count_params(init_model(reference_config("B", blocks=2, use_shift=False)))
    same = all(effn.get(f"blocks.{b}.effn") == ffn.get(f"blocks.{b}.effn") for b in range(2))
    same &= effn.total_params == ffn.total_params and effn.total_flops == ffn.total_flops
    same &= estimate_flops("effn", 64, 64, 64) == estimate_flops("ffn", 64, 64, 64)
    report(6, same, f"params {effn.total_params} vs {ffn.total_params}, "
           f"MACs {effn.total_flops} vs {ffn.total_flops}")


# ---------------------------------------------------------------------------
# criteria 7 and 8: two identical desk-scale training runs

C7_STEPS = 2000
C7_CONFIG = TrainConfig(patch=64, batch=8, steps=C7_STEPS, seed=0)


def _run(root, name):
    train_dir, heldout_dir = write_folders(root / "data")
    model = init_model(reference_config("tiny", scale=2), seed=C7_CONFIG.seed)
    t0 = time.perf_counter()
    result = train(model, C7_CONFIG, train_dir, out=root / f"{name}.ckpt",
                   curve=root / f"{name}.csv")
    elapsed = time.perf_counter() - t0
    return dict(result=result, elapsed=elapsed, ckpt=(root / f"{name}.ckpt").read_bytes(),
                model=model, heldout=heldout_dir, train_dir=train_dir)


@pytest.fixture(scope="module")
def c7_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("c7")
    first = _run(root, "run1")
    return root, first


def test_c07_desk_scale_training(report, c7_runs):
    _, run = c7_runs
    n_train = len(load_folder(run["train_dir"]))
    model_eval = evaluate(run["model"], run["heldout"], 2)
    bicubic = evaluate(None, run["heldout"], 2, method="bicubic")
    gain = model_eval.mean_psnr - bicubic.mean_psnr
    minutes = run["elapsed"] / 60
    ok = gain >= 0.2 and minutes <= 30 and n_train <= 16 and len(model_eval.psnr) == 4
    report(7, ok, f"{n_train} training images, held-out Y-PSNR {model_eval.mean_psnr:.3f} dB vs "
           f"bicubic {bicubic.mean_psnr:.3f} dB, gain {gain:+.3f} dB (>= 0.2); "
           f"training {minutes:.1f} min (<= 30 min)")


def test_c08_determinism(report, c7_runs):
    root, first = c7_runs
    second = _run(root, "run2")
    same_curve = first["result"].losses == second["result"].losses
    same_ckpt = first["ckpt"] == second["ckpt"]
    report(8, same_curve and same_ckpt,
           f"{len(first['result'].losses)}-step f64 loss curves identical: {same_curve}; "
           f"checkpoints ({len(first['ckpt'])} bytes) identical: {same_ckpt}")


def test_c09_residual_identity(report):
    model = zero_branch_terminals(init_model(reference_config("tiny"), seed=3, dtype=np.float64))
    x = np.random.default_rng(9).random((2, 16, 16, 3))
    fs, fd = deep_features(x, model)
    report(9, np.array_equal(fs, fd), "deep-extractor output equals shallow features bitwise "
           f"(max diff {np.abs(fs - fd).max():.1e})")


def test_c10_metric_sanity(report):
    x = np.random.default_rng(10).random((48, 48)) * 0.9
    cap = psnr(x, x)
    uniform = psnr(x, x + 1 / 255)
    s = ssim(x, x)
    ok = cap == PSNR_CAP and abs(uniform - 48.13) <= 0.01 and s == 1.0
    report(10, ok, f"psnr(x,x) = {cap} (cap {PSNR_CAP}), 1/255 error = {uniform:.4f} dB, "
           f"ssim(x,x) = {s}")
