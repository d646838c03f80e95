"""Acceptance suite: one test per criterion, in order.

Each test prints a single ``[PASS] criterion N`` line with the measured
numbers (visible with ``pytest -s`` or ``-rA``); a failure raises with the
same numbers. Criteria 6 and 7 train a real model on the synthetic
acceptance dataset; set SEGDIFF_ACCEPTANCE_DIR to a writable path to cache
the dataset, checkpoint, and generations across runs.
"""

import json
import os
import time

import numpy as np
import pytest

from conftest import check_gradients, max_rel_err
from segdiff import cli, inference, metrics
from segdiff import ops
from segdiff import tensor as tl
from segdiff.data import load_manifest, load_split
from segdiff.forward_process import sample_xt
from segdiff.model import ModelConfig, init_params, tiny_config
from segdiff.schedule import make_schedule
from segdiff.tensor import Tensor, mse_loss
from segdiff.training import load_checkpoint

# Pinned end-to-end configuration: dataset seed 7, 200/50 at 32x32, T=25,
# default model, 20k optimization steps. Generation quality keeps improving
# well past the point where the training loss flattens (the sampler starts
# from standard-normal noise, which the denoiser only handles robustly once
# it has learned a near-linear response to off-distribution inputs), so the
# full step budget is used.
ACCEPT_SEED = 7
ACCEPT_T = 25
ACCEPT_STEPS = 20000
N_ENSEMBLE = 30


def _report(n, text):
    print(f"\n[PASS] criterion {n}: {text}")


# ---------------------------------------------------------------------------
# Criterion 1: gradients


def test_criterion_1_gradient_correctness():
    gen = np.random.default_rng(0)
    a = gen.standard_normal((3, 4))
    b = gen.standard_normal((3, 4))
    checks = {
        "add": lambda t: tl.sum_all(t["a"] + t["b"]),
        "sub": lambda t: tl.sum_all(t["a"] - t["b"]),
        "mul": lambda t: tl.sum_all(t["a"] * t["b"]),
        "pow": lambda t: tl.sum_all(tl.pow_scalar(t["a"], 3)),
        "sigmoid": lambda t: tl.mean_all(tl.sigmoid(t["a"])),
        "silu": lambda t: tl.mean_all(tl.silu(t["a"])),
        "softmax": lambda t: tl.sum_all(tl.softmax_last(t["a"]) * t["b"]),
        "mse": lambda t: tl.mse_loss(t["a"], t["b"]),
    }
    for name, fn in checks.items():
        check_gradients(fn, {"a": a, "b": b}, tol=1e-4)

    x = gen.standard_normal((2, 2, 6, 6))
    w = gen.standard_normal((3, 2, 3, 3))
    bias = gen.standard_normal(3)
    check_gradients(
        lambda t: tl.sum_all(tl.pow_scalar(
            ops.conv2d(t["x"], t["w"], t["b"], stride=2, padding=1), 2)),
        {"x": x, "w": w, "b": bias}, tol=1e-4)
    g = gen.standard_normal(4)
    be = gen.standard_normal(4)
    xn = gen.standard_normal((2, 4, 3, 3))
    check_gradients(
        lambda t: tl.sum_all(tl.pow_scalar(ops.group_norm(t["x"], 2, t["g"], t["be"]), 2)),
        {"x": xn, "g": g, "be": be}, tol=2e-4)
    ws = {k: gen.standard_normal((4, 4)) * 0.5 for k in ("wq", "wk", "wv", "wo")}
    check_gradients(
        lambda t: tl.sum_all(tl.pow_scalar(
            ops.attention(t["x"], 2, t["wq"], t["wk"], t["wv"], t["wo"]), 2)),
        {"x": gen.standard_normal((1, 4, 2, 2)), **ws}, tol=1e-4)

    # Full tiny model: FD on sampled coordinates of every parameter tensor.
    model = init_params(tiny_config(), T=5, seed=0)
    model.out_conv.w.data[...] = gen.standard_normal(model.out_conv.w.shape) * 0.2
    H, W = tiny_config().input_size
    x_in = Tensor(gen.standard_normal((1, 1, H, W)))
    img = Tensor(gen.standard_normal((1, 3, H, W)))
    target = gen.standard_normal((1, 1, H, W))

    def loss_value():
        return float(mse_loss(model(x_in, img, 3), Tensor(target)).data)

    for _, p in model.named_params():
        p.zero_grad()
    mse_loss(model(x_in, img, 3), Tensor(target)).backward()
    eps = 1e-6
    worst = 0.0
    for name, p in model.named_params():
        flat, gflat = p.data.ravel(), p.grad.ravel()
        for i in gen.choice(flat.size, size=min(2, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_value()
            flat[i] = orig - eps
            lo = loss_value()
            flat[i] = orig
            err = max_rel_err(gflat[i], (hi - lo) / (2 * eps))
            assert err < 1e-3, f"{name}[{i}] rel err {err:.2e}"
            worst = max(worst, err)
    _report(1, f"all op FD checks < 1e-4; full tiny model worst rel err {worst:.2e} < 1e-3")


# ---------------------------------------------------------------------------
# Criterion 2: schedule


def test_criterion_2_schedule_exactness():
    for T in (2, 25, 100, 1000):
        s = make_schedule(T)
        assert s.beta[1] == 1e-4, f"T={T}: beta_1 {s.beta[1]!r}"
        assert s.beta[T] == 2e-2, f"T={T}: beta_T {s.beta[T]!r}"
        assert s.beta_tilde[1] == 0.0
        assert np.all(np.diff(s.alpha_bar[1:]) < 0)
    _report(2, "beta endpoints exact, beta_tilde_1 = 0, alpha_bar strictly "
               "decreasing for T in {2, 25, 100, 1000}")


# ---------------------------------------------------------------------------
# Criterion 3: forward moments


def test_criterion_3_forward_process_moments():
    T = 100
    sched = make_schedule(T)
    n = 10_000
    x0_value = 0.8
    results = []
    for t in (1, T // 2, T):
        gen = np.random.default_rng(1000 + t)
        out = sample_xt(Tensor(np.full((n, 1, 1, 1), x0_value)), t, sched, gen)
        draws = out.x_t.data.ravel()
        mean_expected = np.sqrt(sched.alpha_bar[t]) * x0_value
        var_expected = 1 - sched.alpha_bar[t]
        se = np.sqrt(var_expected / n)
        assert abs(draws.mean() - mean_expected) < 3 * se, f"t={t} mean off"
        assert abs(draws.var() - var_expected) <= 0.05 * max(var_expected, 1e-3), f"t={t} var off"
        results.append(f"t={t}: |dmean|={abs(draws.mean() - mean_expected):.2e}")
    _report(3, "; ".join(results) + f" over {n} draws (3 SE / 5% bands)")


# ---------------------------------------------------------------------------
# Criterion 4: sampler equivalence


def test_criterion_4_sampler_two_path_equivalence():
    worst = 0.0
    for T in (25, 100):
        sched = make_schedule(T)
        gen = np.random.default_rng(T)
        for t in range(1, T + 1):
            x = gen.standard_normal(1000)
            eps = gen.standard_normal(1000)
            z = gen.standard_normal(1000) if t > 1 else np.zeros(1000)
            got = inference.reverse_update(x, eps, t, sched, z)
            ab_t, ab_prev = sched.alpha_bar[t], sched.alpha_bar[t - 1]
            x0_hat = (x - np.sqrt(1 - ab_t) * eps) / np.sqrt(ab_t)
            mu = (np.sqrt(ab_prev) * sched.beta[t] / (1 - ab_t) * x0_hat
                  + np.sqrt(sched.alpha[t]) * (1 - ab_prev) / (1 - ab_t) * x)
            worst = max(worst, float(np.max(np.abs(got - (mu + sched.sigma(t) * z)))))
    assert worst < 1e-12
    _report(4, f"max |direct - posterior-mean path| = {worst:.2e} < 1e-12 "
               "(1000 instances per t, T in {25, 100})")


# ---------------------------------------------------------------------------
# Criterion 5: metric oracles


def test_criterion_5_metric_oracles():
    from test_metrics import (
        calibration_oracle,
        f1_oracle,
        fbound_oracle,
        iou_oracle,
        random_pairs,
        wcov_oracle,
    )

    gen = np.random.default_rng(50)
    for i, (pred, gt) in enumerate(random_pairs(1000, seed=50)):
        assert metrics.iou(pred, gt) == pytest.approx(float(iou_oracle(pred, gt)), abs=1e-12)
        assert metrics.f1(pred, gt) == pytest.approx(float(f1_oracle(pred, gt)), abs=1e-12)
        i_val = metrics.iou(pred, gt)
        assert metrics.f1(pred, gt) == pytest.approx(2 * i_val / (1 + i_val), abs=1e-12)
        if i < 200:  # the loop-based oracles are quadratic; a subset suffices
            assert metrics.wcov(pred, gt) == pytest.approx(float(wcov_oracle(pred, gt)), abs=1e-12)
            assert metrics.fbound(pred, gt) == pytest.approx(fbound_oracle(pred, gt), abs=1e-12)
            probs = gen.random((8, 8))
            got = metrics.calibration_score([probs], [gt]).score
            assert got == pytest.approx(calibration_oracle(probs, gt), abs=1e-12)
    _report(5, "iou/f1 on 1000 random 8x8 pairs, wcov/fbound/calibration on "
               "200, all within 1e-12 of enumeration oracles; F1-IoU identity holds")


# ---------------------------------------------------------------------------
# Criteria 6 and 7: trained model (shared artifacts)


class Artifacts:
    """Dataset, checkpoint, and per-image generations for criteria 6-7."""

    def __init__(self, base):
        self.base = base
        self.ds = os.path.join(base, "ds")
        self.run = os.path.join(base, "run")
        self._generations = None

    def build(self):
        if not os.path.exists(os.path.join(self.ds, "manifest.json")):
            assert cli.main(["gen", "--out", self.ds, "--seed", str(ACCEPT_SEED),
                             "--n_train", "200", "--n_val", "50", "--size", "32"]) == 0
        ckpt = os.path.join(self.run, "checkpoint.ckpt")
        if not self._checkpoint_matches(ckpt):
            assert cli.main(["train", "--data", self.ds, "--out", self.run,
                             "--train.T", str(ACCEPT_T),
                             "--train.max_steps", str(ACCEPT_STEPS),
                             "--train.seed", str(ACCEPT_SEED),
                             "--train.checkpoint_every", "500"]) == 0
        self.checkpoint = ckpt
        state = load_checkpoint(ckpt)
        self.model, self.sched = state["model"], state["sched"]
        self.val = load_split(load_manifest(self.ds), "val")
        return self

    def _checkpoint_matches(self, ckpt):
        if not os.path.exists(ckpt):
            return False
        prov = os.path.join(self.run, "config.json")
        try:
            cfg = json.load(open(prov))["config"]["train"]
        except (OSError, KeyError, json.JSONDecodeError):
            return False
        return (cfg.get("T") == ACCEPT_T
                and cfg.get("max_steps") == ACCEPT_STEPS
                and cfg.get("seed") == ACCEPT_SEED)

    def generations(self):
        """30 generations per validation image, cached on disk as one npz."""
        if self._generations is None:
            cache = os.path.join(self.base, f"generations_n{N_ENSEMBLE}.npz")
            if os.path.exists(cache):
                loaded = np.load(cache)
                self._generations = [loaded[s.id] for s in self.val]
            else:
                self._generations = []
                for i, s in enumerate(self.val):
                    result = inference.ensemble_generate(
                        s.image[None], self.model, self.sched,
                        n=N_ENSEMBLE, base_seed=1000 + i * N_ENSEMBLE)
                    self._generations.append(np.stack(result.generations))
                np.savez_compressed(
                    cache, **{s.id: g for s, g in zip(self.val, self._generations)})
        return self._generations

    def miou_at(self, n):
        ious = []
        for s, gens in zip(self.val, self.generations()):
            mean = inference.average_maps(list(gens[:n]))
            pred = inference.binarize(mean)[0, 0].astype(bool)
            ious.append(metrics.iou(pred, s.mask[0].astype(bool)))
        return float(np.mean(ious))

    def calibration_at(self, n):
        maps, gts = [], []
        for s, gens in zip(self.val, self.generations()):
            maps.append(inference.average_maps(list(gens[:n]))[0, 0])
            gts.append(s.mask[0].astype(bool))
        return metrics.calibration_score(maps, gts).score


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    base = os.environ.get("SEGDIFF_ACCEPTANCE_DIR")
    if base:
        os.makedirs(base, exist_ok=True)
    else:
        base = str(tmp_path_factory.mktemp("acceptance"))
    return Artifacts(base).build()


def test_criterion_6_end_to_end_training(artifacts):
    single = artifacts.miou_at(1)
    full = artifacts.miou_at(N_ENSEMBLE)
    assert single >= 0.80, f"single-generation val mIoU {single:.4f} < 0.80"
    assert full >= single - 0.01, (
        f"{N_ENSEMBLE}-generation mIoU {full:.4f} < single {single:.4f} - 0.01")
    _report(6, f"single-generation val mIoU {single:.4f} >= 0.80; "
               f"{N_ENSEMBLE}-generation ensemble {full:.4f} >= single - 0.01")


def test_criterion_7_ensemble_trends(artifacts):
    ns = (1, 3, 5, 7, 9)
    mious = {n: artifacts.miou_at(n) for n in ns}
    for a, b in zip(ns, ns[1:]):
        assert mious[b] >= mious[a] - 0.01, (
            f"mIoU dropped more than 1 point from n={a} ({mious[a]:.4f}) "
            f"to n={b} ({mious[b]:.4f})")
    cal1 = artifacts.calibration_at(1)
    cal9 = artifacts.calibration_at(9)
    assert cal9 <= cal1, f"calibration {cal9:.5f} at n=9 > {cal1:.5f} at n=1"
    trend = ", ".join(f"n={n}: {mious[n]:.4f}" for n in ns)
    _report(7, f"mIoU non-decreasing within 1 point ({trend}); "
               f"calibration {cal9:.5f} (n=9) <= {cal1:.5f} (n=1)")


# ---------------------------------------------------------------------------
# Criterion 8: timing linearity


def test_criterion_8_generation_time_linear_in_steps():
    cfg = ModelConfig()
    model = init_params(cfg, T=100, seed=0)
    gen = np.random.default_rng(0)
    image = gen.standard_normal((1, 3, 32, 32)) * 0.2 + 0.5
    Ts, times = [25, 50, 75, 100], []
    for T in Ts:
        sched = make_schedule(T)
        best = min(
            inference.generate(image, model, sched, seed=1).wall_time
            for _ in range(2))
        times.append(best)
    slope, intercept = np.polyfit(Ts, times, 1)
    fit = slope * np.array(Ts) + intercept
    ss_res = float(np.sum((np.array(times) - fit) ** 2))
    ss_tot = float(np.sum((np.array(times) - np.mean(times)) ** 2))
    r2 = 1 - ss_res / ss_tot
    assert r2 > 0.99, f"R^2 {r2:.5f} for times {times}"
    _report(8, f"wall time vs T in {{25,50,75,100}}: R^2 = {r2:.5f} > 0.99 "
               f"(times {[f'{t:.2f}s' for t in times]})")


# ---------------------------------------------------------------------------
# Criterion 9: determinism


def _tiny_model_args():
    return ["--model.base_channels", "4", "--model.depth", "2",
            "--model.channel_multipliers", "[1, 2]",
            "--model.attention_resolutions", "[4]",
            "--model.rrdb_blocks", "1", "--model.heads", "2",
            "--model.time_embed_dim", "16", "--model.input_size", "[8, 8]",
            "--model.norm_groups", "2"]


def test_criterion_9_rerun_determinism(tmp_path):
    def run_all(tag):
        root = tmp_path / tag
        ds = str(root / "ds")
        run = str(root / "run")
        pred = str(root / "pred")
        ev = str(root / "eval")
        assert cli.main(["gen", "--out", ds, "--seed", "3", "--n_train", "6",
                         "--n_val", "2", "--size", "8"]) == 0
        assert cli.main(["train", "--data", ds, "--out", run, "--train.T", "4",
                         "--train.max_steps", "3", "--train.batch_size", "2",
                         "--train.log_every", "1", *_tiny_model_args()]) == 0
        assert cli.main(["infer", "--checkpoint", os.path.join(run, "checkpoint.ckpt"),
                         "--data", ds, "--out", pred, "--n_generations", "2"]) == 0
        assert cli.main(["eval", "--data", ds, "--pred", pred, "--out", ev]) == 0
        return root

    a = run_all("a")
    b = run_all("b")
    compared = []
    for rel in ("run/checkpoint.ckpt", "run/loss.csv", "eval/metrics.csv",
                "eval/calibration.json", "pred/maps/val_0000.pgm",
                "pred/masks/val_0000.pgm", "pred/maps/val_0001.pgm",
                "pred/masks/val_0001.pgm"):
        fa = (a / rel).read_bytes()
        fb = (b / rel).read_bytes()
        assert fa == fb, f"{rel} differs between identical reruns"
        compared.append(rel)
    _report(9, f"{len(compared)} artifacts (checkpoint, CSVs, calibration, "
               "maps, masks) bit-identical across reruns of every command")
