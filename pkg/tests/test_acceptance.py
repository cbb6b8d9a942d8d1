"""End-to-end acceptance checks, one group per criterion.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion. Runtime budgets are asserted inside the tests.
"""

import os
import re
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from sepconv import kernels as K
from sepconv.checkpoint import BadMagicError, ShortReadError, load_checkpoint, read_checkpoint, save_checkpoint
from sepconv.cli import main
from sepconv.data import DatasetManifest, ManifestEntry, load_split, iter_batches, split_dataset
from sepconv.dedup import dedup_scan
from sepconv.model import ModelConfig, build_model, count_costs
from sepconv.synthetic import write_blob_dataset
from sepconv.train import TrainConfig, TrainState, evaluate, fit, run_epoch

from fixtures import brute_force_clusters, planted_duplicate_set
from oracles import loop_conv2d, loop_depthwise, numeric_grad, projected_loss, rel_error
from test_model import model_gradient_error

TINY_TRAIN = ["--alpha", "0.25", "--resolution", "32", "--batch-size", "16"]

# ---------------------------------------------------------------------------
# 1. cost table
# ---------------------------------------------------------------------------

# (alpha, resolution, variant) -> (million mult-adds, million params) as displayed
COST_CELLS = [
    ((1.0, 224, "separable"), (569, 4.2)),
    ((1.0, 224, "full_conv"), (4866, 29.3)),
    ((0.75, 224, "separable"), (325, 2.6)),
    ((1.0, 224, "shallow"), (307, 2.9)),
    ((0.5, 224, "separable"), (149, 1.3)),
    ((0.25, 224, "separable"), (41, 0.5)),
    ((1.0, 192, "separable"), (418, 4.2)),
    ((1.0, 160, "separable"), (290, 4.2)),
    ((1.0, 128, "separable"), (186, 4.2)),
]


@pytest.mark.criterion(1, "cost table cells (params at displayed precision, mult-adds within 2%), < 1 s")
def test_cost_table():
    start = time.perf_counter()
    reports = [(cell, expected, count_costs(ModelConfig(alpha=cell[0], resolution=cell[1], variant=cell[2])))
               for cell, expected in COST_CELLS]
    elapsed = time.perf_counter() - start
    for cell, (madds, params), report in reports:
        assert report.million_params == params, (cell, report.params)
        assert abs(report.mult_adds / 1e6 - madds) / madds <= 0.02, (cell, report.mult_adds)
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 2. gradient audit
# ---------------------------------------------------------------------------

def kernel_gradient_errors(seed=0):
    """Worst per-component relative error of every kernel's backward pass against central differences."""
    rng = np.random.default_rng(seed)
    randn = lambda *s: rng.standard_normal(s).astype(np.float32)  # noqa: E731
    worst = {}

    def check(name, analytic, f, *wrt):
        for a, x in zip(analytic, wrt):
            worst[name] = max(worst.get(name, 0.0), float(rel_error(a, numeric_grad(f, x)).max()))

    for stride, padding in ((1, "same"), (2, "same"), (2, "valid")):
        x, w, b = randn(2, 7, 7, 3), randn(3, 3, 3, 4), randn(4)
        r = rng.standard_normal(K.conv2d(x, w, b, stride, padding).shape)
        g = K.conv2d_backward(x, w, stride, padding, r.astype(np.float32))
        check("conv2d", (g.d_input, g.d_params["weight"], g.d_params["bias"]),
              lambda: projected_loss(K.conv2d(x, w, b, stride, padding), r), x, w, b)

        x, w, b = randn(2, 7, 7, 3), randn(3, 3, 3), randn(3)
        r = rng.standard_normal(K.depthwise_conv2d(x, w, b, stride, padding).shape)
        g = K.depthwise_conv2d_backward(x, w, stride, padding, r.astype(np.float32))
        check("depthwise_conv2d", (g.d_input, g.d_params["weight"], g.d_params["bias"]),
              lambda: projected_loss(K.depthwise_conv2d(x, w, b, stride, padding), r), x, w, b)

    for mode in ("train", "infer"):
        x, gamma, beta = randn(3, 4, 4, 3), randn(3), randn(3)
        rm, rv = randn(3), rng.uniform(0.5, 2, 3).astype(np.float32)
        r = rng.standard_normal(x.shape)
        g = K.batchnorm_backward(K.batchnorm(x, gamma, beta, rm, rv, mode)[3], r.astype(np.float32))
        check(f"batchnorm/{mode}", (g.d_input, g.d_params["gamma"], g.d_params["beta"]),
              lambda: projected_loss(K.batchnorm(x, gamma, beta, rm, rv, mode)[0], r), x, gamma, beta)

    # keep inputs away from the kink so the central difference is valid
    x = randn(3, 5) + np.float32(0.01) * np.sign(randn(3, 5))
    x[np.abs(x) < 0.01] = 0.5
    r = rng.standard_normal(x.shape)
    check("relu", (K.relu_backward(x, r.astype(np.float32)),), lambda: projected_loss(K.relu(x), r), x)

    x = randn(2, 5, 5, 3)
    r = rng.standard_normal((2, 1, 1, 3))
    check("global_avg_pool", (K.global_avg_pool_backward(x.shape, r.astype(np.float32)),),
          lambda: projected_loss(K.global_avg_pool(x), r), x)

    x, w, b = randn(3, 6), randn(6, 4), randn(4)
    r = rng.standard_normal((3, 4))
    g = K.dense_backward(x, w, r.astype(np.float32))
    check("dense", (g.d_input, g.d_params["weight"], g.d_params["bias"]),
          lambda: projected_loss(K.dense(x, w, b), r), x, w, b)

    x = randn(4, 6)
    _, mask = K.dropout(x, 0.4, "train", K.make_rng(1))
    r = rng.standard_normal(x.shape)
    check("dropout", (K.dropout_backward(mask, r.astype(np.float32)),),
          lambda: projected_loss(K.dropout(x, 0.4, "train", K.make_rng(1))[0], r), x)

    logits, labels = randn(5, 2), np.array([0, 1, 1, 0, 1])
    check("softmax_cross_entropy", (K.softmax_cross_entropy(logits, labels)[2],),
          lambda: K.softmax_cross_entropy(logits, labels)[0], logits)
    return worst


@pytest.mark.criterion(2, "kernel and composed-model gradients vs finite differences < 1e-2, < 2 min")
def test_gradient_audit():
    start = time.perf_counter()
    worst = kernel_gradient_errors()
    model_err, checked, _ = model_gradient_error(seed=0)
    elapsed = time.perf_counter() - start
    print(f"kernel errors: { {k: f'{v:.1e}' for k, v in worst.items()} }; model error {model_err:.1e} "
          f"over {checked} coordinates; {elapsed:.1f}s")
    assert len(worst) == 9
    assert max(worst.values()) < 1e-2, worst
    assert model_err < 1e-2
    assert elapsed < 120


# ---------------------------------------------------------------------------
# 3. convolution oracle
# ---------------------------------------------------------------------------

@pytest.mark.criterion(3, "conv2d / depthwise_conv2d equal nested-loop references on >= 50 random shapes, < 1 min")
def test_convolution_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    cases = 0
    for _ in range(50):
        n, h, w = rng.integers(1, 3), rng.integers(3, 9), rng.integers(3, 9)
        cin, cout = rng.integers(1, 5), rng.integers(1, 5)
        k, stride = int(rng.choice([1, 3])), int(rng.integers(1, 3))
        padding = str(rng.choice(["same", "valid"]))
        x = rng.standard_normal((n, h, w, cin)).astype(np.float32)
        wt = rng.standard_normal((k, k, cin, cout)).astype(np.float32)
        b = rng.standard_normal(cout).astype(np.float32)
        np.testing.assert_allclose(K.conv2d(x, wt, b, stride, padding), loop_conv2d(x, wt, b, stride, padding),
                                   rtol=1e-4, atol=1e-4)
        dw = rng.standard_normal((k, k, cin)).astype(np.float32)
        db = rng.standard_normal(cin).astype(np.float32)
        np.testing.assert_allclose(K.depthwise_conv2d(x, dw, db, stride, padding),
                                   loop_depthwise(x, dw, db, stride, padding), rtol=1e-4, atol=1e-4)
        cases += 1
    assert cases >= 50
    assert time.perf_counter() - start < 60


# ---------------------------------------------------------------------------
# 4. synthetic end-to-end
# ---------------------------------------------------------------------------

@pytest.mark.criterion(4, "synthetic 200/40/50 task: train + eval via CLI reach >= 95% test accuracy in 15 epochs, < 10 min")
def test_synthetic_end_to_end(tmp_path, capsys):
    start = time.perf_counter()
    manifest = write_blob_dataset(tmp_path / "data", counts=(100, 20, 25), size=32, seed=0)
    manifest.write(tmp_path / "manifest.csv")
    assert {s: len(manifest.split(s)) for s in ("train", "val", "test")} == {"train": 200, "val": 40, "test": 50}
    common = ["--data-dir", str(tmp_path / "data"), "--manifest", str(tmp_path / "manifest.csv")]
    assert main(["train", *common, "--out-dir", str(tmp_path / "out"), *TINY_TRAIN, "--epochs", "15"]) == 0
    assert main(["eval", "--checkpoint", str(tmp_path / "out" / "best.ckpt"), *common, "--split", "test"]) == 0
    out = capsys.readouterr().out
    accuracy = float(re.search(r"^accuracy (\S+)$", out, re.M).group(1))
    elapsed = time.perf_counter() - start
    print(f"test accuracy {accuracy:.4f}; {elapsed:.1f}s")
    assert accuracy >= 0.95
    assert elapsed < 600


# ---------------------------------------------------------------------------
# 5. training protocol
# ---------------------------------------------------------------------------

@pytest.mark.criterion(5, "scripted val sequence checkpoints at improvements with one LR halving; best checkpoint re-evaluates exactly")
def test_protocol(tmp_path, blob_data, tiny_config):
    _, manifest, _ = blob_data
    x, y, _ = load_split(manifest, "train", 32)
    config = TrainConfig(batch_size=16)
    state = TrainState.start(build_model(tiny_config), config, tmp_path / "scripted.ckpt")
    scores = iter([0.5, 0.7, 0.6])
    evaluator = lambda model, batches: (0.1, next(scores), None)  # noqa: E731
    saved = []
    for epoch in range(1, 4):
        run_epoch(state, iter_batches(x[:32], y[:32], 16, 0, epoch), [], config, K.make_rng(0, epoch),
                  evaluator=evaluator)
        saved.append(read_checkpoint(tmp_path / "scripted.ckpt")[1]["epoch"])
    assert state.saved_epochs == [1, 2] and saved == [1, 2, 2]
    assert [r.learning_rate for r in state.history] == [0.01, 0.01, 0.01] and state.lr == 0.005

    out = tmp_path / "fit"
    out.mkdir()
    fitted = fit(build_model(tiny_config), manifest, TrainConfig(batch_size=16, epochs=4, seed=2), out_dir=out)
    model, meta = load_checkpoint(out / "best.ckpt")
    vx, vy, _ = load_split(manifest, "val", 32)
    _, accuracy, _ = evaluate(model, iter_batches(vx, vy, 16))
    assert accuracy == meta["best_val_accuracy"] == fitted.best_val_accuracy
    assert fitted.best_val_accuracy == max(r.val_accuracy for r in fitted.history)


# ---------------------------------------------------------------------------
# 6. dedup oracle
# ---------------------------------------------------------------------------

@pytest.mark.criterion(6, "dedup equals O(n^2) brute force on 100 planted images, flags every planted leak, train refuses")
def test_dedup_oracle(tmp_path, capsys):
    manifest, planted = planted_duplicate_set(tmp_path / "data", seed=0)
    assert len(manifest) == 100
    report = dedup_scan(manifest)
    exact, near, leaks = brute_force_clusters(manifest.entries)
    assert sorted(c.paths for c in report.exact) == exact
    assert sorted(c.paths for c in report.near) == near
    assert sorted(c.paths for c in report.leaks) == leaks
    for original, copy in planted:
        assert any(original in c.paths and copy in c.paths for c in report.leaks), (original, copy)
    manifest.write(tmp_path / "manifest.csv")
    code = main(["train", "--data-dir", str(tmp_path / "data"), "--manifest", str(tmp_path / "manifest.csv"),
                 "--out-dir", str(tmp_path / "out"), *TINY_TRAIN, "--epochs", "1"])
    assert code != 0
    assert "refusing to train" in capsys.readouterr().err
    assert not (tmp_path / "out" / "metrics.csv").exists()


# ---------------------------------------------------------------------------
# 7. determinism
# ---------------------------------------------------------------------------

def train_subprocess(blob_data, out: Path, threads: int):
    data, _, manifest = blob_data
    env = dict(os.environ)
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        env[var] = str(threads)
    cmd = [sys.executable, "-m", "sepconv.cli", "train", "--data-dir", str(data), "--manifest", str(manifest),
           "--out-dir", str(out), *TINY_TRAIN, "--epochs", "3", "--seed", "11"]
    result = subprocess.run(cmd, env=env, capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
    return (out / "metrics.csv").read_bytes(), (out / "best.ckpt").read_bytes()


@pytest.mark.criterion(7, "two train runs (1 and 4 BLAS threads) give byte-identical metrics and checkpoints")
def test_determinism(tmp_path, blob_data):
    metrics_a, ckpt_a = train_subprocess(blob_data, tmp_path / "a", threads=1)
    metrics_b, ckpt_b = train_subprocess(blob_data, tmp_path / "b", threads=4)
    assert metrics_a.count(b"\n") == 4
    assert metrics_a == metrics_b
    assert ckpt_a == ckpt_b


# ---------------------------------------------------------------------------
# 8. checkpoint round trip
# ---------------------------------------------------------------------------

@pytest.mark.criterion(8, "checkpoint save-load-save is byte-identical; bad magic and truncation raise distinct errors")
def test_checkpoint_round_trip(tmp_path, tiny_config):
    model = build_model(tiny_config)
    first, second = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, {"epoch": 1}, first)
    loaded, meta = load_checkpoint(first)
    save_checkpoint(loaded, meta, second)
    assert first.read_bytes() == second.read_bytes()

    raw = first.read_bytes()
    (tmp_path / "magic.ckpt").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short.ckpt").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(BadMagicError) as bad_magic:
        read_checkpoint(tmp_path / "magic.ckpt")
    with pytest.raises(ShortReadError) as truncated:
        read_checkpoint(tmp_path / "short.ckpt")
    assert type(bad_magic.value) is not type(truncated.value)


# ---------------------------------------------------------------------------
# 9. split regression
# ---------------------------------------------------------------------------

@pytest.mark.criterion(9, "1507+1507 manifest with default fractions gives 1327/80/140 per class")
def test_split_regression():
    entries = [ManifestEntry(f"class_{label}/{i:05d}.png", label) for label in (0, 1) for i in range(1507)]
    counts = split_dataset(DatasetManifest(entries)).counts()
    for label in (0, 1):
        got = tuple(counts.get((split, label), 0) for split in ("train", "val", "test"))
        assert got == (1327, 80, 140), (
            f"class {label}: got {got} from 1507 images; 1327 + 80 + 140 = 1547 exceeds the 1507 available"
        )
