"""End-to-end acceptance gate.

Ten numbered checks cover the contract of the whole package: projection
and gradient correctness, noise-free and noisy recovery, ground-truth
synthesis, dataset mechanics, training sanity, the full six-fold
synthetic benchmark, bit-level determinism of that benchmark, and file
format round-trips with diagnostic failures. Each check prints exactly
one verdict line (written past pytest's capture so it always appears in
the terminal), then asserts.

The benchmark fixture is session-scoped and runs the full pipeline
twice with one seed; check 8 reads accuracies and wall time from the
first run, check 9 compares the two runs byte for byte.
"""

import json
import sys
import time

import numpy as np
import numpy.testing as npt
import pytest
from click.testing import CliRunner

from oracles import (
    fd_gradient,
    grid_project,
    naive_argmax_labels,
    naive_block_mean,
    relative_error,
)
from specgt.cli import main, run_pipeline
from specgt.cube_io import (
    FractionMap,
    LabelMap,
    SpectralCube,
    default_palette,
    read_cube,
    read_label_map,
    write_cube,
    write_label_map,
)
from specgt.dataset import (
    AUG_FLIP_H,
    AUG_FLIP_V,
    AUG_ROT90,
    AUG_ROT180,
    AugmentationOp,
    SplitPlan,
    augment,
    balanced_epoch,
    extract_patches,
    load_dataset,
    save_dataset,
    split_loio,
    standardize,
)
from specgt.errors import DataValidationError
from specgt.nn import AdamState, CNNClassifier, ModelConfig, adam_step
from specgt.nn.checkpoint import load_checkpoint, save_checkpoint
from specgt.nn.layers import (
    batch_norm_backward,
    batch_norm_forward,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)
from specgt.resolution import AggregationSpec, aggregate_fractions, synthesize_labels
from specgt.scenegen import (
    SceneSpec,
    generate_fraction_field,
    make_default_endmembers,
    render_scene,
)
from specgt.unmixing import (
    INIT_LSTSQ,
    INIT_UNIFORM,
    OBJECTIVE_EUCLIDEAN,
    OBJECTIVE_SAM,
    UnmixOptions,
    gradient,
    objective,
    project_feasible,
    sam,
    unmix_image,
    unmix_pixel,
)


def _verdict(num: int, ok: bool, detail: str) -> None:
    import conftest

    tag = "PASS" if ok else "FAIL"
    line = f"[acceptance {num:02d}] {tag}  {detail}"
    print(line, file=sys.__stdout__, flush=True)
    conftest.record_verdict(line)


# ---------------------------------------------------------------------------
# 1. projection against the exact grid oracle


def test_01_projection_matches_grid_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    idempotent = True
    for trial in range(1000):
        d = int(rng.integers(2, 5))
        v = rng.uniform(-2.0, 2.0, size=d)
        p = project_feasible(v)
        ref = grid_project(v, step=1e-3)
        worst = max(worst, float(np.linalg.norm(p - ref)))
        if not np.array_equal(project_feasible(p), p):
            idempotent = False
    elapsed = time.perf_counter() - t0
    ok = worst <= 5e-3 and idempotent and elapsed < 30.0
    _verdict(
        1,
        ok,
        f"projection vs exhaustive 1e-3 grid on 1000 vectors: worst gap "
        f"{worst:.2e} (limit 5e-3), idempotent={idempotent}, {elapsed:.1f}s",
    )
    assert worst <= 5e-3
    assert idempotent
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# 2. analytic gradients against central differences


def _feasible_point(rng, d):
    f = rng.uniform(0.05, 1.0, size=d)
    return 0.9 * f / f.sum()


def test_02_gradients_match_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    failures = []
    worst = {}

    def probe(name, err, limit=1e-4):
        worst[name] = max(worst.get(name, 0.0), err)
        if err > limit:
            failures.append(f"{name}: {err:.3e}")

    # unmixing objective, both modes, 120 random problems each
    for mode in (OBJECTIVE_SAM, OBJECTIVE_EUCLIDEAN):
        opts = UnmixOptions(objective=mode)
        for _ in range(120):
            d = int(rng.integers(2, 8))
            bands = int(rng.integers(8, 42))
            E = rng.uniform(0.05, 1.0, size=(bands, d))
            f = _feasible_point(rng, d)
            m = E @ _feasible_point(rng, d) + rng.uniform(0.0, 0.02, size=bands)
            g = gradient(f, m, E, opts)
            ref = fd_gradient(lambda x: objective(x, m, E, opts), f)
            probe(f"objective[{mode}]", relative_error(g, ref))

    # conv layer: x, w and b gradients on 100 random shapes
    for _ in range(100):
        n, h, w_, cin, cout = 2, 3, 4, int(rng.integers(1, 4)), int(rng.integers(1, 5))
        x = rng.normal(size=(n, h, w_, cin))
        w = rng.normal(size=(3, 3, cin, cout))
        b = rng.normal(size=cout)
        r = rng.normal(size=(n, h, w_, cout))
        _, cache = conv2d_forward(x, w, b)
        gx, gw, gb = conv2d_backward(cache, r)
        probe("conv.x", relative_error(gx, fd_gradient(lambda t: (conv2d_forward(t, w, b)[0] * r).sum(), x)))
        probe("conv.w", relative_error(gw, fd_gradient(lambda t: (conv2d_forward(x, t, b)[0] * r).sum(), w)))
        probe("conv.b", relative_error(gb, fd_gradient(lambda t: (conv2d_forward(x, w, t)[0] * r).sum(), b)))

    # batch norm in train mode: x, gain, shift
    for _ in range(100):
        shape = (int(rng.integers(2, 6)), 3, 3, int(rng.integers(1, 5)))
        x = rng.normal(size=shape) * rng.uniform(0.5, 2.0)
        gain = rng.uniform(0.5, 1.5, size=shape[-1])
        shift = rng.normal(size=shape[-1])
        mu = np.zeros(shape[-1])
        var = np.ones(shape[-1])
        r = rng.normal(size=shape)

        def bn(xx, gg, ss):
            y, _, _, _ = batch_norm_forward(xx, gg, ss, mu, var, "train")
            return (y * r).sum()

        _, cache, _, _ = batch_norm_forward(x, gain, shift, mu, var, "train")
        gx, ggain, gshift = batch_norm_backward(cache, r)
        probe("bn.x", relative_error(gx, fd_gradient(lambda t: bn(t, gain, shift), x)))
        probe("bn.gain", relative_error(ggain, fd_gradient(lambda t: bn(x, t, shift), gain)))
        probe("bn.shift", relative_error(gshift, fd_gradient(lambda t: bn(x, gain, t), shift)))

    # relu away from the kink
    for _ in range(100):
        x = rng.normal(size=(4, 7))
        x = np.where(np.abs(x) < 1e-2, x + 0.1, x)
        r = rng.normal(size=x.shape)
        y, cache = relu_forward(x)
        gx = relu_backward(cache, r)
        probe("relu.x", relative_error(gx, fd_gradient(lambda t: (relu_forward(t)[0] * r).sum(), x)))

    # dropout with a pinned mask (same generator seed at every evaluation)
    for k in range(100):
        x = rng.normal(size=(5, 6))
        r = rng.normal(size=x.shape)

        def drop(t, k=k):
            y, _ = dropout_forward(t, 0.25, "train", np.random.default_rng(k))
            return (y * r).sum()

        _, cache = dropout_forward(x, 0.25, "train", np.random.default_rng(k))
        gx = dropout_backward(cache, r)
        probe("dropout.x", relative_error(gx, fd_gradient(drop, x)))

    # dense: x, w, b
    for _ in range(100):
        din, dout = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        x = rng.normal(size=(3, din))
        w = rng.normal(size=(din, dout))
        b = rng.normal(size=dout)
        r = rng.normal(size=(3, dout))
        _, cache = dense_forward(x, w, b)
        gx, gw, gb = dense_backward(cache, r)
        probe("dense.x", relative_error(gx, fd_gradient(lambda t: (dense_forward(t, w, b)[0] * r).sum(), x)))
        probe("dense.w", relative_error(gw, fd_gradient(lambda t: (dense_forward(x, t, b)[0] * r).sum(), w)))
        probe("dense.b", relative_error(gb, fd_gradient(lambda t: (dense_forward(x, w, t)[0] * r).sum(), b)))

    # fused softmax cross-entropy gradient w.r.t. logits
    for _ in range(100):
        logits = rng.normal(size=(4, 7)) * 2.0
        labels = rng.integers(0, 7, size=4)
        _, grad = softmax_cross_entropy(logits, labels)
        ref = fd_gradient(lambda t: softmax_cross_entropy(t, labels)[0], logits)
        probe("softmax_ce.logits", relative_error(grad, ref))

    elapsed = time.perf_counter() - t0
    peak = max(worst.values())
    ok = not failures and elapsed < 120.0
    _verdict(
        2,
        ok,
        f"objective + 6 layer backward passes vs central differences, >=100 "
        f"points each: worst rel err {peak:.2e} (limit 1e-4), {elapsed:.1f}s",
    )
    assert not failures, failures
    assert elapsed < 120.0


# ---------------------------------------------------------------------------
# 3/4. recovery on a synthetic scene, noise free then at 40 dB


def _recovery_scene(noise_sigma, seed=303):
    lib = make_default_endmembers()
    spec = SceneSpec(
        rows=100, cols=100, endmembers=lib, smoothness=8.0,
        noise_sigma=noise_sigma, seed=seed,
    )
    truth = generate_fraction_field(spec)
    cube = render_scene(truth, lib, noise_sigma, seed)
    return lib, truth, cube


def test_03_noise_free_recovery():
    t0 = time.perf_counter()
    lib = make_default_endmembers()
    angles = [
        sam(lib.spectra[:, i], lib.spectra[:, j])
        for i in range(lib.d)
        for j in range(i + 1, lib.d)
    ]
    lib2, truth, cube = _recovery_scene(0.0)
    opts = UnmixOptions(objective=OBJECTIVE_EUCLIDEAN, init=INIT_LSTSQ)
    recovered = unmix_image(cube, lib2, opts, workers=1)
    err = np.abs(recovered.fractions - truth.fractions).max(axis=2)
    frac_tight = float((err <= 1e-3).mean())
    label_match = float(
        (recovered.fractions.argmax(axis=2) == truth.fractions.argmax(axis=2)).mean()
    )
    elapsed = time.perf_counter() - t0
    ok = (
        min(angles) >= 0.1
        and frac_tight >= 0.99
        and label_match >= 0.999
        and elapsed < 300.0
    )
    _verdict(
        3,
        ok,
        f"noise-free 100x100 d=7 lambda=41 recovery: Linf<=1e-3 on "
        f"{frac_tight:.2%} of pixels (need 99%), argmax match {label_match:.3%} "
        f"(need 99.9%), min pairwise angle {min(angles):.3f}, {elapsed:.1f}s",
    )
    assert min(angles) >= 0.1
    assert frac_tight >= 0.99
    assert label_match >= 0.999
    assert elapsed < 300.0


def test_04_noisy_recovery_and_monotone_descent():
    lib, truth, clean = _recovery_scene(0.0)
    rms = float(np.sqrt(np.mean(clean.values**2)))
    sigma = rms / 10 ** (40.0 / 20.0)  # 40 dB signal-to-noise
    cube = render_scene(truth, lib, sigma, seed=404)

    opts = UnmixOptions(objective=OBJECTIVE_EUCLIDEAN, init=INIT_LSTSQ)
    recovered = unmix_image(cube, lib, opts, workers=1)
    mae = float(np.abs(recovered.fractions - truth.fractions).mean())

    # audit PGD traces from the cold-start side on both objectives
    rng = np.random.default_rng(405)
    flat = cube.values.reshape(-1, cube.bands)
    audited = 0
    monotone = True
    for mode in (OBJECTIVE_EUCLIDEAN, OBJECTIVE_SAM):
        audit_opts = UnmixOptions(objective=mode, init=INIT_UNIFORM)
        for idx in rng.choice(flat.shape[0], size=25, replace=False):
            res = unmix_pixel(flat[idx], lib, audit_opts, keep_trace=True)
            trace = np.asarray(res.trace)
            audited += 1
            if trace.size > 1 and np.any(np.diff(trace) > 0):
                monotone = False
    ok = mae <= 0.05 and monotone and audited == 50
    _verdict(
        4,
        ok,
        f"40 dB recovery: mean abs fraction error {mae:.4f} (limit 0.05); "
        f"descent monotone on {audited}/50 audited pixel traces={monotone}",
    )
    assert mae <= 0.05
    assert monotone
    assert audited == 50


# ---------------------------------------------------------------------------
# 5. ground-truth synthesis equals the naive recomputation


def test_05_label_synthesis_matches_naive_loops():
    rng = np.random.default_rng(505)
    spec = AggregationSpec(factor=5)
    checked = 0
    for _ in range(20):
        rows = int(rng.integers(10, 41))
        cols = int(rng.integers(10, 41))
        d = int(rng.integers(2, 8))
        raw = rng.uniform(0.0, 1.0, size=(rows, cols, d))
        fractions = 0.98 * raw / raw.sum(axis=2, keepdims=True)
        fm = aggregate_fractions(FractionMap(fractions), spec)
        ref_fr = naive_block_mean(fractions, 5)
        npt.assert_array_equal(fm.fractions, ref_fr)
        names = [f"c{i}" for i in range(d)]
        lm = synthesize_labels(fm, names)
        npt.assert_array_equal(lm.labels, naive_argmax_labels(ref_fr))
        checked += 1
    _verdict(
        5,
        True,
        f"factor-5 aggregation + argmax labels equal naive double loops "
        f"exactly on {checked}/20 random maps",
    )
    assert checked == 20


# ---------------------------------------------------------------------------
# 6. dataset mechanics


def _toy_images(rng, count=6, rows=20, cols=20, bands=6, classes=5):
    images = []
    for _ in range(count):
        labels = rng.integers(0, classes, size=(rows, cols))
        values = rng.uniform(0.0, 0.3, size=(rows, cols, bands))
        for k in range(classes):
            values[labels == k, k % bands] += 0.7
        cube = SpectralCube(values, 400.0 + 10 * np.arange(bands), np.full(bands, 5.0))
        lm = LabelMap(labels, default_palette([f"c{i}" for i in range(classes)]))
        images.append((cube, lm))
    return images


def test_06_dataset_properties():
    rng = np.random.default_rng(606)
    problems = []

    # standardization: per band zero mean, unit population std
    cube = SpectralCube(
        rng.uniform(0.0, 1.0, size=(30, 31, 9)) * rng.uniform(0.5, 3.0, size=9),
        400.0 + 10 * np.arange(9),
        np.full(9, 5.0),
    )
    std, _ = standardize(cube)
    mean_off = float(np.abs(std.values.mean(axis=(0, 1))).max())
    std_off = float(np.abs(std.values.std(axis=(0, 1)) - 1.0).max())
    if mean_off >= 1e-9 or std_off >= 1e-9:
        problems.append(f"standardization off by mean {mean_off:.1e} std {std_off:.1e}")

    # augmentation group laws, exact
    images = _toy_images(rng)
    ds = extract_patches(images[0][0], images[0][1], 5)
    patch = ds[3]
    out = patch
    for _ in range(4):
        out = augment(out, AugmentationOp(AUG_ROT90), rng)
    if not np.array_equal(out.values, patch.values):
        problems.append("rot90 applied four times is not the identity")
    for kind in (AUG_FLIP_H, AUG_FLIP_V):
        twice = augment(augment(patch, AugmentationOp(kind), rng), AugmentationOp(kind), rng)
        if not np.array_equal(twice.values, patch.values):
            problems.append(f"{kind} is not an involution")
    two_quarter = augment(
        augment(patch, AugmentationOp(AUG_ROT90), rng), AugmentationOp(AUG_ROT90), rng
    )
    half = augment(patch, AugmentationOp(AUG_ROT180), rng)
    if not np.array_equal(two_quarter.values, half.values):
        problems.append("rot90 twice differs from rot180")

    # balanced epochs: exact per-class histograms
    ep = balanced_epoch(ds, 137, np.random.default_rng(7))
    counts = np.bincount(ep.labels, minlength=ds.class_count)
    if not np.all(counts == 137):
        problems.append(f"balanced epoch histogram {counts.tolist()} != 137 per class")

    # leave-one-image-out split over every fold of a six image set
    plan = SplitPlan(train_fraction=0.9, seed=11)
    per_image = (20 - 4) * (20 - 4)
    for t in range(6):
        train, val, test = split_loio(images, t, plan, n=5)
        if len(test) != per_image or not np.all(test.sources[:, 0] == t):
            problems.append(f"fold {t}: test side is not exactly image {t}")
        if np.any(train.sources[:, 0] == t) or np.any(val.sources[:, 0] == t):
            problems.append(f"fold {t}: held-out image leaks into train/val")
        if len(train) + len(val) != 5 * per_image:
            problems.append(f"fold {t}: train+val patch count wrong")
        pool = {(int(i), int(r), int(c)) for i, r, c in np.vstack([train.sources, val.sources])}
        want = {
            (i, r, c)
            for i in range(6)
            if i != t
            for r in range(2, 18)
            for c in range(2, 18)
        }
        if pool != want:
            problems.append(f"fold {t}: train+val do not partition the non-test patches")

    _verdict(
        6,
        not problems,
        "standardization exact, augmentation group laws exact, balanced "
        "histograms exact, all 6 leave-one-out folds partition cleanly"
        if not problems
        else "; ".join(problems),
    )
    assert not problems, problems


# ---------------------------------------------------------------------------
# 7. training sanity: overfit a tiny fixture with the full architecture


def test_07_overfit_twenty_patches():
    t0 = time.perf_counter()
    rng = np.random.default_rng(707)
    labels = rng.integers(0, 7, size=(12, 12))
    values = rng.uniform(0.0, 0.2, size=(12, 12, 11))
    for k in range(7):
        values[labels == k, k] += 0.8
    cube = SpectralCube(values, 400.0 + 10 * np.arange(11), np.full(11, 5.0))
    lm = LabelMap(labels, default_palette([f"c{i}" for i in range(7)]))
    std, _ = standardize(cube)
    ds = extract_patches(std, lm, 5)
    subset = ds.subset(np.random.default_rng(1).permutation(len(ds))[:20])

    config = ModelConfig(input_shape=(5, 5, 11), class_count=7, dropout_rate=0.0)
    model = CNNClassifier.initialize(config, seed=2)
    state = AdamState(model.params)
    x = subset.values.astype(np.float32)
    y = subset.labels
    steps = 0
    acc = 0.0
    loss = np.inf
    for steps in range(1, 201):
        loss, acc, grads = model.loss_and_grads(x, y, mode="train")
        adam_step(model.params, grads, state, 0.001)
        if acc == 1.0 and loss < 0.05:
            break
    elapsed = time.perf_counter() - t0
    ok = acc == 1.0 and loss < 0.05 and steps <= 200 and elapsed < 60.0
    _verdict(
        7,
        ok,
        f"20-patch overfit at lr 0.001, batch 20: accuracy {acc:.0%}, loss "
        f"{loss:.4f} after {steps} Adam steps (limit 200), {elapsed:.1f}s",
    )
    assert acc == 1.0
    assert loss < 0.05
    assert steps <= 200
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# 8/9. the six-fold synthetic benchmark, run twice for determinism

BENCHMARK_CONFIG = {
    "seed": 6,
    "scenes": 6,
    "rows": 250,
    "cols": 250,
    "smoothness": 16.0,
    "noise_sigma": 0.0,
    "factor": 5,
    "patch": 5,
    "objective": "l2",
    "init": "lstsq",
    "epochs": 30,
    "per_label": 2000,
    "batch_size": 64,
    "learning_rate": 0.001,
    "dropout": 0.25,
}


@pytest.fixture(scope="session")
def benchmark_runs(tmp_path_factory):
    out_a = tmp_path_factory.mktemp("bench_a")
    out_b = tmp_path_factory.mktemp("bench_b")
    t0 = time.perf_counter()
    manifest_a = run_pipeline(dict(BENCHMARK_CONFIG), str(out_a))
    elapsed = time.perf_counter() - t0
    manifest_b = run_pipeline(dict(BENCHMARK_CONFIG), str(out_b))
    return manifest_a, manifest_b, elapsed, out_a, out_b


def test_08_end_to_end_benchmark(benchmark_runs):
    manifest, _, elapsed, _, _ = benchmark_runs
    accs = {int(k): v for k, v in manifest["fold_accuracy"].items()}
    passing = sum(1 for v in accs.values() if v >= 0.90)
    shown = ", ".join(f"{k}:{accs[k]:.3f}" for k in sorted(accs))
    ok = len(accs) == 6 and passing >= 5 and elapsed < 1800.0
    _verdict(
        8,
        ok,
        f"six-scene benchmark: fold accuracies {{{shown}}}; {passing}/6 at "
        f">=0.90 (need 5), pipeline wall time {elapsed / 60:.1f} min (limit 30)",
    )
    assert len(accs) == 6
    assert passing >= 5, accs
    assert elapsed < 1800.0


def test_09_benchmark_is_bit_deterministic(benchmark_runs):
    manifest_a, manifest_b, _, out_a, out_b = benchmark_runs
    compared = {"labels": 0, "metrics": 0, "checkpoints": 0}
    mismatched = []
    for path_a in sorted(out_a.rglob("*")):
        if not path_a.is_file():
            continue
        rel = path_a.relative_to(out_a)
        name = str(rel)
        if ".labels." in name:
            kind = "labels"
        elif name.endswith(".metrics.json"):
            kind = "metrics"
        elif ".ckpt." in name:
            kind = "checkpoints"
        else:
            continue
        compared[kind] += 1
        if path_a.read_bytes() != (out_b / rel).read_bytes():
            mismatched.append(name)
    ok = (
        not mismatched
        and manifest_a == manifest_b
        and all(compared[k] > 0 for k in compared)
    )
    _verdict(
        9,
        ok,
        f"re-run with the same seed: {compared['labels']} label files, "
        f"{compared['metrics']} metrics files, {compared['checkpoints']} "
        f"checkpoint files byte-identical; manifests equal={manifest_a == manifest_b}",
    )
    assert manifest_a == manifest_b
    assert not mismatched, mismatched
    for kind, n in compared.items():
        assert n > 0, f"no {kind} files were compared"


# ---------------------------------------------------------------------------
# 10. format round-trips and diagnostic rejection of corrupt files


def test_10_format_round_trips_and_corruption(tmp_path):
    rng = np.random.default_rng(1010)
    problems = []

    # cube
    cube = SpectralCube(
        rng.uniform(0.0, 1.0, size=(9, 8, 5)),
        400.0 + 20 * np.arange(5),
        np.full(5, 10.0),
    )
    write_cube(cube, str(tmp_path / "cube_a"))
    back = read_cube(str(tmp_path / "cube_a"))
    write_cube(back, str(tmp_path / "cube_b"))
    for ext in (".json", ".bin"):
        if (tmp_path / f"cube_a{ext}").read_bytes() != (tmp_path / f"cube_b{ext}").read_bytes():
            problems.append(f"cube {ext} not byte-stable")
    if not np.array_equal(back.values, cube.values):
        problems.append("cube values changed")

    # label map
    lm = LabelMap(rng.integers(0, 3, size=(7, 6)), default_palette(["a", "b", "c"]))
    write_label_map(lm, str(tmp_path / "lm_a"))
    lm_back = read_label_map(str(tmp_path / "lm_a"))
    write_label_map(lm_back, str(tmp_path / "lm_b"))
    for ext in (".labels.json", ".labels.bin"):
        if (tmp_path / f"lm_a{ext}").read_bytes() != (tmp_path / f"lm_b{ext}").read_bytes():
            problems.append(f"label map {ext} not byte-stable")
    if not np.array_equal(lm_back.labels, lm.labels):
        problems.append("labels changed")

    # patch dataset
    images = _toy_images(rng, count=1, rows=12, cols=12)
    ds = extract_patches(images[0][0], images[0][1], 5)
    save_dataset(ds, str(tmp_path / "ds_a"))
    ds_back = load_dataset(str(tmp_path / "ds_a"))
    save_dataset(ds_back, str(tmp_path / "ds_b"))
    for ext in (".json", ".bin"):
        if (tmp_path / f"ds_a{ext}").read_bytes() != (tmp_path / f"ds_b{ext}").read_bytes():
            problems.append(f"dataset {ext} not byte-stable")
    if not (
        np.array_equal(ds_back.values, ds.values)
        and np.array_equal(ds_back.labels, ds.labels)
    ):
        problems.append("dataset tensors changed")

    # checkpoint
    config = ModelConfig(
        input_shape=(5, 5, 6), class_count=5, conv_filters=(8, 8, 6, 4),
        dense_sizes=(16, 12, 5),
    )
    model = CNNClassifier.initialize(config, seed=3)
    save_checkpoint(model, str(tmp_path / "ck_a"), seed=3, epochs=0)
    model_back, _ = load_checkpoint(str(tmp_path / "ck_a"))
    save_checkpoint(model_back, str(tmp_path / "ck_b"), seed=3, epochs=0)
    for ext in (".json", ".bin"):
        if (tmp_path / f"ck_a{ext}").read_bytes() != (tmp_path / f"ck_b{ext}").read_bytes():
            problems.append(f"checkpoint {ext} not byte-stable")
    for key in model.params:
        if not np.array_equal(model.params[key], model_back.params[key]):
            problems.append(f"checkpoint parameter {key} changed")

    # corruption must fail loudly, through the command line, with exit code 3
    runner = CliRunner()
    bad_bin = tmp_path / "cube_a.bin"
    good = bad_bin.read_bytes()
    bad_bin.write_bytes(good[: len(good) // 2])
    r1 = runner.invoke(
        main,
        ("adapt", "--cube", str(tmp_path / "cube_a"), "--bands", "none",
         "--factor", "2", "--out", str(tmp_path / "adapted")),
    )
    if r1.exit_code != 3 or "error:" not in r1.output or "bytes" not in r1.output:
        problems.append(f"truncated cube: exit {r1.exit_code}, output {r1.output!r}")
    bad_bin.write_bytes(good)

    hdr = tmp_path / "lm_a.labels.json"
    hdr.write_text("{ not json")
    r2 = runner.invoke(
        main,
        ("render", "--labels", str(tmp_path / "lm_a"), "--out", str(tmp_path / "x.png")),
    )
    if r2.exit_code != 3 or "error:" not in r2.output:
        problems.append(f"malformed header: exit {r2.exit_code}, output {r2.output!r}")

    r3 = runner.invoke(
        main,
        ("classify", "--cube", str(tmp_path / "cube_a"), "--checkpoint",
         str(tmp_path / "missing_ck"), "--out", str(tmp_path / "pred")),
    )
    if r3.exit_code != 3 or "error:" not in r3.output:
        problems.append(f"missing checkpoint: exit {r3.exit_code}, output {r3.output!r}")

    _verdict(
        10,
        not problems,
        "cube, label map, dataset and checkpoint round-trip byte-exactly; "
        "truncated/malformed/missing inputs exit 3 with a diagnostic"
        if not problems
        else "; ".join(problems),
    )
    assert not problems, problems
