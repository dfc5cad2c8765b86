"""Acceptance suite: one test per criterion, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (the summary lines appear at
the end of the session) or directly with ``python tests/test_acceptance.py``.

Criterion 8 trains the full ResNet50 and is opt-in: set
``DCTCONV_FULL=1`` (and optionally ``DCTCONV_FULL_LIMIT`` to cap the number
of training images per epoch).
"""

from __future__ import annotations

import math
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dctconv import dct  # noqa: E402
from dctconv.cli import main as cli_main  # noqa: E402
from dctconv.data_io import synthetic_dataset  # noqa: E402
from dctconv.dct_conv import SpectralConv2D, SpectralPointwise, spectral_backward  # noqa: E402
from dctconv.model_builder import LayerSpec, ModelConfig, build_model  # noqa: E402
from dctconv.presets import get_preset  # noqa: E402
from dctconv.tensor_core import categorical_cross_entropy  # noqa: E402
from dctconv.training import Optimizer, TrainData, run_phase, run_three_phase  # noqa: E402

from helpers import numeric_grad, rel_error  # noqa: E402

RESULTS: dict[int, tuple[str, str]] = {}


def record(n, ok, detail, skipped=False):
    status = "SKIP" if skipped else ("PASS" if ok else "FAIL")
    RESULTS[n] = (status, detail)
    print(f"criterion {n}: {status} - {detail}", flush=True)
    return ok


# -- 1 -------------------------------------------------------------------------------

def _literal_dct2(x):
    m, n = x.shape
    out = np.empty((m, n))
    for k in range(m):
        for l in range(n):
            acc = 0.0
            for i in range(m):
                ck = math.cos(math.pi / m * (i + 0.5) * k)
                for j in range(n):
                    acc += x[i, j] * math.cos(math.pi / n * (j + 0.5) * l) * ck
            out[k, l] = acc
    return out


def criterion_1():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_rt = worst_pv = worst_lit = 0.0
    for _ in range(1000):
        m, n = rng.integers(1, 9, 2)
        x = rng.standard_normal((m, n))
        X = dct.dct2(x)
        worst_rt = max(worst_rt, np.abs(dct.idct2(X) - x).max())
        worst_pv = max(worst_pv, abs(np.linalg.norm(X) - np.linalg.norm(x)))
        worst_lit = max(worst_lit, np.abs(dct.dct2(x, "verbatim") - _literal_dct2(x)).max())
    secs = time.perf_counter() - t0
    ok = worst_rt < 1e-10 and worst_pv < 1e-10 and worst_lit < 1e-12 and secs < 10
    return record(1, ok, f"roundtrip {worst_rt:.1e}, Parseval {worst_pv:.1e}, literal {worst_lit:.1e} "
                         f"on 1000 matrices 1x1..8x8; {secs:.1f}s (< 10s)")


# -- 2 -------------------------------------------------------------------------------

def criterion_2():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    errors = []
    for mode in ("orthonormal", "verbatim"):
        for transposed in (False, True):
            for pointwise in (False, True):
                for rep in range(3):
                    c = int(rng.integers(17, 35)) if pointwise else int(rng.integers(1, 4))
                    n = int(rng.integers(1, 4))
                    stride = int(rng.integers(1, 3))
                    p = float(rng.choice([0.0, 0.3, 0.6]))
                    kw = dict(stride=stride, transposed=transposed, rng=rng, p=p,
                              mask_seed=int(rng.integers(1 << 30)), mode=mode)
                    layer = (SpectralPointwise("t", c, n, **kw) if pointwise
                             else SpectralConv2D("t", c, n, 3, **kw))
                    layer.bias.value[...] = rng.standard_normal(n)
                    hw = int(rng.integers(3, 6))
                    x = rng.standard_normal((2, c, hw, hw))
                    proj = rng.standard_normal(layer.forward(x).shape)

                    def loss():
                        return float(np.sum(layer._apply(x, layer.materialize_filters()) * proj))

                    _, gc, _ = spectral_backward(layer, x, proj)
                    num = numeric_grad(loss, layer.weight.value) * layer.mask.bits
                    errors.append(rel_error(gc, num))
    secs = time.perf_counter() - t0
    worst = max(errors)
    ok = len(errors) >= 20 and worst < 1e-6 and secs < 60
    return record(2, ok, f"{len(errors)} layer instances, worst relative error {worst:.1e} (< 1e-6); "
                         f"{secs:.1f}s (< 60s)")


# -- 3 -------------------------------------------------------------------------------

def criterion_3(capsys=None):
    t0 = time.perf_counter()
    outcomes, failures = {}, []
    for preset in ("resnet50", "vgg16", "ae1", "ae2"):
        if capsys is not None:
            capsys.readouterr()
        code = cli_main(["count-params", "--preset", preset, "--assert-table"])
        if capsys is not None:
            out = capsys.readouterr().out
            failures += [f"{preset}: {l[5:]}" for l in out.splitlines() if l.startswith("FAIL")]
        outcomes[preset] = code
    secs = time.perf_counter() - t0
    ok = all(c == 0 for c in outcomes.values()) and secs < 5
    detail = ", ".join(f"{k} {'ok' if v == 0 else 'mismatch'}" for k, v in outcomes.items())
    if failures:
        detail += "; " + "; ".join(failures)
    return record(3, ok, f"count-params --assert-table: {detail}; {secs:.1f}s (< 5s)")


# -- 4 -------------------------------------------------------------------------------

TABLE_P = (0, 0.3, 0.5, 0.7, 0.9, 0.97, 0.999, 1)


def _tiny_spectral(p):
    cfg = ModelConfig("mask-check", (3, 8, 8), [
        LayerSpec("conv", filters=4, activation="relu"),
        LayerSpec("conv", filters=20, size=1, activation="relu"),
        LayerSpec("conv_transpose", filters=3, stride=2),
        LayerSpec("maxpool"),
        LayerSpec("flatten"),
        LayerSpec("dense", units=2, activation="softmax"),
    ], num_classes=2)
    return build_model(cfg.with_spectral("all", p, 11), seed=0)


def criterion_4():
    t0 = time.perf_counter()
    checked, bad = 0, []
    for p in TABLE_P:
        for preset in ("vgg-desk", "resnet-desk", "ae1-desk", "ae2-desk", "ae2"):
            model = build_model(get_preset(preset).config.with_spectral("all", p, 5), init=False)
            for layer in model.spectral_layers():
                want = math.floor(Fraction(str(p)) * layer.weight.value.size)
                checked += 1
                if layer.mask.off_count != want:
                    bad.append((preset, layer.name, p))
    rng = np.random.default_rng(4)
    x, y = rng.standard_normal((6, 3, 8, 8)), rng.integers(0, 2, 6)
    leaked = 0
    for kind in ("momentum", "nag", "adam"):
        for p in (0.5, 0.97):
            model = _tiny_spectral(p)
            opt = Optimizer(kind)
            for _ in range(100):
                model.zero_grad()
                _, g = categorical_cross_entropy(model.forward(x, train=True), y)
                model.backward(g)
                opt.step(model.params(), 0.01)
                for layer in model.spectral_layers():
                    leaked += int(np.count_nonzero(layer.weight.value[layer.mask.bits == 0]))
    secs = time.perf_counter() - t0
    ok = not bad and leaked == 0 and secs < 30
    return record(4, ok, f"{checked} layer masks with exact floor(p*count) off ({len(bad)} wrong); "
                         f"{leaked} nonzero masked coefficients after 100 steps x 3 optimizers; {secs:.1f}s (< 30s)")


# -- 5 -------------------------------------------------------------------------------

def criterion_5():
    rng = np.random.default_rng(5)
    cfg = ModelConfig("toy2", (2, 6, 6), [
        LayerSpec("conv", filters=3, activation="relu"),
        LayerSpec("conv", filters=2, size=3),
    ], task="autoencoder")
    spec = build_model(cfg.with_spectral("all", 0.0, 0, mode="orthonormal"), seed=1)
    plain = build_model(cfg, seed=2)
    for a, b in zip(plain.conv_layers(), spec.spectral_layers()):
        a.weight.value[...] = b.materialize_filters()
        a.bias.value[...] = b.bias.value = rng.standard_normal(b.bias.value.shape)
    x = rng.random((4, 2, 6, 6))
    out_gap = float(np.abs(plain.forward(x) - spec.forward(x)).max())
    losses = {}
    for name, model in (("plain", plain), ("spectral", spec)):
        opt, traj = Optimizer("sgd"), []
        for _ in range(3):
            model.zero_grad()
            out = model.forward(x, train=True)
            traj.append(float(np.mean((out - x) ** 2)))
            model.backward(2 * (out - x) / out.size)
            opt.step(model.params(), 0.2)
        losses[name] = traj
    loss_gap = max(abs(a - b) for a, b in zip(losses["plain"], losses["spectral"]))
    ok = out_gap < 1e-9 and loss_gap < 1e-6
    return record(5, ok, f"output gap {out_gap:.1e} (< 1e-9), 3-step SGD loss gap {loss_gap:.1e} (< 1e-6)")


# -- 6 -------------------------------------------------------------------------------

SEEDS_6 = (0, 1, 2, 3, 4)


def criterion_6(log=None):
    t0 = time.perf_counter()
    preset = get_preset("vgg-desk")
    acc = {"plain": [], "p=0": [], "p=0.5": [], "p=0.9": []}
    for seed in SEEDS_6:
        syn = dict(preset.synthetic)
        kind = syn.pop("kind")
        tr, te = synthetic_dataset(kind, seed=seed, **syn)
        data = TrainData.from_datasets(tr, te)
        res = run_three_phase(preset.config, data, preset.regime, p=0.5, seed=seed)
        acc["plain"].append(res["baseline"].final_metric)
        acc["p=0"].append(res["spectral_p0"].final_metric)
        acc["p=0.5"].append(res["spectral_p"].final_metric)
        acc["p=0.9"].append(run_phase(preset.config, data, preset.regime, "spectral_p", p=0.9,
                                      seed=seed).final_metric)
        if log:
            log(f"seed {seed}: " + ", ".join(f"{k} {v[-1]:.3f}" for k, v in acc.items()))
    secs = time.perf_counter() - t0
    m = {k: float(np.mean(v)) for k, v in acc.items()}
    ok = (m["p=0"] >= m["plain"] - 0.02 and m["p=0"] >= m["p=0.5"] >= m["p=0.9"]
          and m["p=0.5"] >= m["plain"] - 0.05 and secs < 1800)
    return record(6, ok, "5-seed mean accuracy " + ", ".join(f"{k} {v:.4f}" for k, v in m.items())
                  + f"; {secs / 60:.1f} min (< 30)")


# -- 7 -------------------------------------------------------------------------------

def criterion_7(log=None):
    t0 = time.perf_counter()
    preset = get_preset("ae1-desk")
    syn = dict(preset.synthetic)
    kind = syn.pop("kind")
    tr, te = synthetic_dataset(kind, seed=0, **syn)
    assert len(tr) == 2000
    data = TrainData.from_datasets(tr, te, "autoencoder")
    best = {}
    for phase in ("baseline", "spectral_p0", "spectral_p"):
        res = run_phase(preset.config, data, preset.regime, phase, p=0.5, seed=0, epochs=20,
                        stop_below=0.01)
        mse = [r.test_metric for r in res.records]
        best[phase] = (min(mse), len(mse))
        if log:
            log(f"{phase}: mse {min(mse):.5f} after {len(mse)} epochs")
    secs = time.perf_counter() - t0
    ok = all(v < 0.01 and n <= 20 for v, n in best.values()) and secs < 900
    return record(7, ok, ", ".join(f"{k} MSE {v:.4f} by epoch {n}" for k, (v, n) in best.items())
                  + f" (< 0.01 within 20); {secs / 60:.1f} min (< 15)")


# -- 8 -------------------------------------------------------------------------------

def criterion_8(tmp):
    if os.environ.get("DCTCONV_FULL") != "1":
        return record(8, True, "opt-in full-scale run; set DCTCONV_FULL=1", skipped=True)
    limit = os.environ.get("DCTCONV_FULL_LIMIT")
    argv = ["train", "--preset", "resnet50-full", "--epochs", "1", "--p", "0.5", "--out", str(tmp), "--quiet"]
    if not os.environ.get("DCTCONV_DATA_DIR"):
        argv += ["--dataset", "synthetic"]
    if limit:
        argv += ["--limit", limit]
    t0 = time.perf_counter()
    code = cli_main(argv)
    rows = {ph: (tmp / f"{ph}.csv").read_text().splitlines() for ph in ("baseline", "spectral_p0", "spectral_p")
            if (tmp / f"{ph}.csv").exists()}
    ok = code == 0 and len(rows) == 3 and all(len(r) == 2 for r in rows.values())
    return record(8, ok, f"resnet50-full, 1 epoch x 3 phases, exit {code}, "
                         f"{'limit ' + limit if limit else 'full training split'}; "
                         f"{(time.perf_counter() - t0) / 60:.1f} min")


# -- pytest entry points ------------------------------------------------------------------

def test_criterion_1_transform_correctness():
    assert criterion_1()


def test_criterion_2_gradient_suite():
    assert criterion_2()


def test_criterion_3_parameter_audit(capsys):
    assert criterion_3(capsys)


def test_criterion_4_mask_semantics():
    assert criterion_4()


def test_criterion_5_reparameterization_equivalence():
    assert criterion_5()


def test_criterion_6_desk_trend():
    assert criterion_6()


def test_criterion_7_autoencoder_smoke():
    assert criterion_7()


def test_criterion_8_full_scale(tmp_path):
    ok = criterion_8(tmp_path)
    if RESULTS[8][0] == "SKIP":
        pytest.skip("full-scale run is opt-in (DCTCONV_FULL=1)")
    assert ok


if __name__ == "__main__":
    import tempfile

    log = lambda s: print("   ", s, flush=True)  # noqa: E731
    criterion_1()
    criterion_2()
    criterion_3()
    criterion_4()
    criterion_5()
    criterion_6(log)
    criterion_7(log)
    with tempfile.TemporaryDirectory() as d:
        criterion_8(Path(d))
    print()
    for n in sorted(RESULTS):
        print(f"criterion {n}: {RESULTS[n][0]} - {RESULTS[n][1]}")
    sys.exit(0 if all(s != "FAIL" for s, _ in RESULTS.values()) else 1)
