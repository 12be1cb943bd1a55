"""End-to-end acceptance suite; one PASS/FAIL line per criterion.

Training-scale criteria (6, 7, 10) share one comparison run over the
default synthetic dataset, so the module takes tens of minutes on one CPU.
"""

import json
import math
import os
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest

from wavetok.anchors import budget, nms, select_anchors
from wavetok.autodiff import grad_check
from wavetok.autodiff import functional as F
from wavetok.fusion import FUSION_EPS, assign, fuse, membership
from wavetok.autodiff import Tensor
from wavetok.modwt import imodwt, modwt
from wavetok.trainer import TrainConfig, train_test
from wavetok.trainer.model import Model
from wavetok.trainer.train import compare, predict, train

from helpers import param_grad_check, tiny_config
from test_anchors import brute_nms, brute_select
from test_autodiff import OPS
from test_fusion import brute_owner

pytestmark = pytest.mark.slow

ABLATION = ("full", "fixed_patch", "spec_bound", "no_fusion", "no_recon")


# ---------------------------------------------------------------------------
# 1-2: wavelet transform
# ---------------------------------------------------------------------------


def test_criterion_1_modwt_correctness(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_rt = worst_energy = 0.0
    lengths_ok = True
    for basis in ("haar", "db4"):
        for levels in range(1, 6):
            for length in (7, 64, 100, 256):
                x = rng.normal(size=(100, length))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    s = modwt(x, levels, basis)
                lengths_ok &= all(p.shape[-1] == length for p in [*s.details, s.approximation])
                worst_rt = max(worst_rt, float(np.max(np.abs(imodwt(s) - x))))
                energy = sum((d**2).sum(-1) for d in s.details) + (s.approximation**2).sum(-1)
                ref = (x**2).sum(-1)
                worst_energy = max(worst_energy, float(np.max(np.abs(energy - ref) / ref)))
    elapsed = time.perf_counter() - start
    ok = worst_rt < 1e-8 and worst_energy < 1e-8 and lengths_ok and elapsed < 30
    verdict(1, ok, f"round-trip {worst_rt:.1e}, energy {worst_energy:.1e}, lengths {lengths_ok}, {elapsed:.1f}s")


def test_criterion_2_haar_golden(verdict):
    s = modwt(np.array([1.0, 2.0, 3.0, 4.0]), 1, "haar")
    err = max(
        np.max(np.abs(s.details[0] - [-1.5, 0.5, 0.5, 0.5])),
        np.max(np.abs(s.approximation - [2.5, 1.5, 2.5, 3.5])),
    )
    verdict(2, err < 1e-12, f"max deviation {err:.1e}")


# ---------------------------------------------------------------------------
# 3: gradients
# ---------------------------------------------------------------------------


def _pipeline_error(seed: int) -> float:
    cfg = tiny_config(length=32, detail_dim=4, context_dim=4, heads=2, max_context=8, levels=3, seed=seed, precision="float64")
    model = Model(cfg, 1, 4)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 1, 32))
    y = np.array([seed % 4])
    anchors = model.tokenize(x).anchors
    names = sorted(dict(model.named_parameters()))
    picked = [names[i] for i in rng.choice(len(names), size=6, replace=False)]

    def loss():
        out = model(x, labels=y, anchors=anchors)
        return out.task + out.rec * cfg.lambda_rec

    return param_grad_check(model, loss, picked)


def test_criterion_3_gradient_suite(verdict):
    start = time.perf_counter()
    worst_op, worst_name = 0.0, ""
    for seed in range(20):
        for name, (make, op) in OPS.items():
            rng = np.random.default_rng(seed)
            inputs = make(rng)
            weights = np.random.default_rng(1000 + seed).normal(size=op(*[Tensor(v) for v in inputs]).shape)
            err = grad_check(lambda *ts: F.sum(F.mul(op(*ts), weights)), inputs)
            if err > worst_op:
                worst_op, worst_name = err, name
    worst_pipe = max(_pipeline_error(seed) for seed in range(20))
    elapsed = time.perf_counter() - start
    ok = worst_op < 1e-4 and worst_pipe < 1e-3 and elapsed < 120
    verdict(3, ok, f"{len(OPS)} ops x 20 seeds worst {worst_op:.1e} ({worst_name}); pipeline worst {worst_pipe:.1e}; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4-5: anchor and fusion invariants
# ---------------------------------------------------------------------------


def test_criterion_4_anchor_invariants(verdict):
    from wavetok.anchors import SaliencyHead, saliency

    rng = np.random.default_rng(4)
    failures = []
    for case in range(1000):
        n = int(rng.integers(2, 65))
        p = rng.uniform(0, 2, size=n) if case % 2 else rng.integers(0, 5, size=n) / 2.0
        p[0] = 0.0
        tau = float(rng.uniform(0.01, 0.99))
        res = select_anchors(p, tau)
        a = res.anchors
        if len(a) > math.ceil(tau * n):
            failures.append(("cap", case))
        if res.window >= 1 and np.any(np.diff(a) <= res.window):
            failures.append(("separation", case))
        if list(nms(p, res.window)) != brute_nms(p, res.window) or list(a) != brute_select(p, tau):
            failures.append(("oracle", case))
        head = SaliencyHead(8, rng)
        e = rng.normal(size=(1, 1, n, 8))
        c = float(np.exp(rng.uniform(-5, 5)))
        base = select_anchors(saliency(Tensor(e), head).data[0], tau).anchors
        scaled = select_anchors(saliency(Tensor(c * e), head).data[0], tau).anchors
        if not np.array_equal(base, scaled):
            failures.append(("scale", case))
    verdict(4, not failures, f"1000 sequences, {len(failures)} violations {failures[:3]}")


def test_criterion_5_fusion_invariants(verdict):
    rng = np.random.default_rng(5)
    failures = []
    for case in range(1000):
        n = int(rng.integers(1, 201))
        k = int(rng.integers(1, n + 1))
        anchors = np.sort(rng.choice(n, size=k, replace=False))
        a = assign(anchors, n)
        s, t = a.bounds[:, 0], a.bounds[:, 1]
        if not (s[0] == 0 and t[-1] == n - 1 and np.all(s[1:] == t[:-1] + 1) and np.all(t >= s)):
            failures.append(("partition", case))
        if not np.array_equal(a.owner, brute_owner(list(anchors), n)):
            failures.append(("argmin", case))
        e = rng.normal(size=(n, 3))
        p = rng.uniform(0, 2, size=n)
        out = fuse(Tensor(e[None, None]), Tensor(p[None]), membership([a], n)).data[0, 0]
        for j, (lo, hi) in enumerate(a.bounds):
            pk, ek = p[lo : hi + 1], e[lo : hi + 1]
            total = pk.sum()
            if total < 1e-9:
                continue
            exact = (pk[:, None] * ek).sum(0) / total
            bound = FUSION_EPS * np.linalg.norm(ek, axis=1).max() / total
            if np.linalg.norm(out[j] - exact) > bound * (1 + 1e-9) + 1e-13:
                failures.append(("epsilon", case))
    verdict(5, not failures, f"1000 anchor sets, {len(failures)} violations {failures[:3]}")


# ---------------------------------------------------------------------------
# 6, 7, 10: default-dataset training
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ablation():
    """Train every ablation variant once on the default dataset."""
    configs = [TrainConfig(variant=v) for v in ABLATION]
    train_set, test_set = train_test(configs[0].data)
    table = compare(configs, train_set, test_set)
    models = {}
    for cfg, state in zip(configs, table.states):
        model = Model(cfg, train_set.channels, train_set.classes)
        model.load_state_dict(state)
        models[cfg.variant] = model
    return {"table": table, "models": models, "test": test_set, "spec": configs[0].data}


def _row(table, variant):
    return next(r for r in table.rows if r["variant"] == variant)


def test_criterion_6_end_to_end_learning(ablation, verdict):
    row = _row(ablation["table"], "full")
    test_set, spec = ablation["test"], ablation["spec"]
    counts = predict(ablation["models"]["full"], test_set.x).counts
    sparse = np.isin(test_set.y, spec.sparse_classes())
    sparse_mean = float(counts[sparse].mean())
    cap = budget(0.125, spec.length)
    ok = row["accuracy"] >= 0.90 and row["mean_tokens"] <= cap and sparse_mean <= 48 and row["wall_clock"] < 600
    verdict(
        6,
        ok,
        f"accuracy {row['accuracy']:.4f}, mean tokens {row['mean_tokens']:.2f} (cap {cap}), "
        f"sparse-class tokens {sparse_mean:.2f}, {row['wall_clock']:.0f}s",
    )


def test_criterion_7_ablation_directions(ablation, verdict):
    table = ablation["table"]
    full, spec_bound = _row(table, "full"), _row(table, "spec_bound")
    patch_tokens = _row(table, "fixed_patch")["mean_tokens"]
    done = [r["variant"] for r in table.rows] == list(ABLATION)
    ok = done and full["accuracy"] >= spec_bound["accuracy"] - 0.02 and full["mean_tokens"] < patch_tokens
    summary = ", ".join(f"{r['variant']} {r['accuracy']:.3f}/{r['mean_tokens']:.1f}" for r in table.rows)
    verdict(7, ok, f"accuracy/tokens: {summary}")


def test_criterion_10_noise_robustness(ablation, verdict):
    test_set = ablation["test"]
    rng = np.random.default_rng(10)
    scale = 0.5 * test_set.x.std(axis=-1, keepdims=True)
    noisy = test_set.x + rng.normal(size=test_set.x.shape) * scale
    drops = {}
    for variant in ("full", "fixed_patch"):
        model = ablation["models"][variant]
        clean = np.mean(predict(model, test_set.x).labels == test_set.y)
        dirty = np.mean(predict(model, noisy).labels == test_set.y)
        drops[variant] = (clean, dirty, clean - dirty)
    f, p = drops["full"], drops["fixed_patch"]
    ok = f[2] <= p[2] + 0.05
    verdict(10, ok, f"full {f[0]:.3f}->{f[1]:.3f} (drop {f[2]:.3f}); fixed_patch {p[0]:.3f}->{p[1]:.3f} (drop {p[2]:.3f})")


# ---------------------------------------------------------------------------
# 8: overfit sanity
# ---------------------------------------------------------------------------


def test_criterion_8_overfit(verdict):
    cfg = TrainConfig(epochs=200, batch_size=1)
    train_set, _ = train_test(cfg.data)
    one = train_set.subset(np.array([0]))
    # one step per epoch, so entry i is the loss before update i
    result = train(cfg, one)
    rec = result.curves["rec_loss"]
    initial = Model(cfg, 1, cfg.data.classes)(one.x, labels=one.y).rec.item()
    final = result.model(one.x, labels=one.y).rec.item()
    rec_ok = rec[0] == initial and final < initial
    above = sum(r >= initial for r in rec[1:])
    rises = int(np.sum(np.diff(rec + [final]) >= 0))

    cfg16 = TrainConfig(epochs=300, batch_size=16, lr_max=1e-3, lr_min=1e-5)
    sixteen = train_set.subset(np.arange(16))
    fitted = train(cfg16, sixteen).model
    acc = float(np.mean(predict(fitted, sixteen.x).labels == sixteen.y))
    verdict(8, rec_ok and acc == 1.0, (
        f"recon {initial:.4f}->{final:.4f} after 200 steps ({above} intermediate values >= initial, "
        f"{rises} step-to-step rises); 16-sample train accuracy {acc:.3f}"
    ))


# ---------------------------------------------------------------------------
# 9: reproducibility
# ---------------------------------------------------------------------------


def test_criterion_9_reproducibility(tmp_path, verdict):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(tiny_config(epochs=2, n_train=48).to_dict()))
    env = dict(os.environ, DYWAVE_THREADS="1")
    signal = tmp_path / "sig.csv"
    from wavetok import io as wio

    wio.write_signal(signal, train_test(tiny_config().data)[1].x[0])
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        cli = [sys.executable, "-m", "wavetok.cli"]
        subprocess.run([*cli, "train", "--config", str(cfg), "--out-dir", str(out)], env=env, check=True)
        subprocess.run(
            [*cli, "tokenize", "--input", str(signal), "--checkpoint", str(out / "checkpoint.dywc"),
             "--emit-tokens", "--output", str(out / "report.json")],
            env=env, check=True,
        )
        blobs.append(((out / "metrics.json").read_bytes(), (out / "report.json").read_bytes()))
    same_metrics = blobs[0][0] == blobs[1][0]
    same_report = blobs[0][1] == blobs[1][1]
    verdict(9, same_metrics and same_report, f"metrics identical {same_metrics}, token reports identical {same_report}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-rA"]))
