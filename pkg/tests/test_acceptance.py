"""Ten end-to-end acceptance checks, one verdict line each.

Run with ``pytest -v -s tests/test_acceptance.py``.  Checks 2 and 6-8 share
module-scoped fixtures that build a natural-image residual corpus, train the
learned transform and fit both baselines on the same split, then code the
held-out split for real; expect roughly an hour of single-machine runtime
for the whole module.
"""

import os
import time

import numpy as np
import pytest

from rdlt import rangecoder as rc
from rdlt import cli
from rdlt.baselines import SotConfig, klt_from_blocks, sot_train
from rdlt.codec_eval import (
    RDCurve,
    RDPoint,
    bd_metrics,
    evaluate,
    mts_block_costs,
    mts_evaluate,
    quantize,
    signaling_bits_per_block,
)
from rdlt.dataset import build_dataset
from rdlt.synth import ar1_blocks, natural_tiles, write_corpus
from rdlt.trainer import (
    TrainConfig,
    init_params,
    loss_and_gradients,
    rd_loss,
    train,
)
from rdlt.transforms import (
    dct2_matrix,
    dct2_transform,
    dct8_matrix,
    dst7_matrix,
    forward,
    orthonormality_defect,
    to_dense,
)

EVAL_STEPS = (20.0, 30.0, 40.0, 50.0, 60.0)

# Training setup used by the corpus-level checks: 50k steps on the natural
# residual corpus, with the rate-distortion weight range retuned to this
# corpus' residual energy (the library defaults keep the published range).
ACCEPT_TRAIN = dict(
    n=8,
    lambda_lo=0.16,
    lambda_hi=8.0,
    phase1_steps=10000,
    phase2_steps=40000,
    batch_size=1024,
    seed=0,
)


def _verdict(num: int, name: str, ok: bool, detail: str = ""):
    line = f"[check {num:2d}] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print("\n" + line)
    assert ok, line


# ---------------------------------------------------------------------------
# Shared heavy fixtures.

_PHOTO_NAMES = [
    "astronaut", "brick", "camera", "cat", "clock", "coffee", "coins",
    "grass", "gravel", "horse", "hubble_deep_field", "immunohistochemistry",
    "moon", "page", "rocket", "retina", "stereo_motorcycle",
]


def _to_u8(arr):
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        return arr
    a = arr.astype(np.float64)
    if a.max() <= 1.0:
        a = a * 255.0
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


@pytest.fixture(scope="module")
def natural_corpus(tmp_path_factory):
    """Photographs cut into 176x176 grayscale tiles (full and half scale)."""
    data = pytest.importorskip("skimage.data")
    from PIL import Image

    root = tmp_path_factory.mktemp("accept")
    src_dir = root / "sources"
    src_dir.mkdir()
    paths = []
    idx = 0
    for name in _PHOTO_NAMES:
        img = getattr(data, name)()
        arrays = img if isinstance(img, tuple) else (img,)
        for arr in arrays:
            p = str(src_dir / f"src_{idx:03d}.png")
            Image.fromarray(_to_u8(arr)).save(p)
            paths.append(p)
            idx += 1
    tile_dir = root / "tiles"
    tiles = natural_tiles(paths, str(tile_dir), tile=176, scales=(1.0, 0.5), mirror=True)
    assert len(tiles) >= 100
    return tiles


@pytest.fixture(scope="module")
def residual_dataset(natural_corpus):
    ds = build_dataset(natural_corpus, 8, split=0.85, seed=0)
    assert ds.train.shape[0] >= 50_000
    return ds


@pytest.fixture(scope="module")
def trained_models(residual_dataset):
    ds = residual_dataset
    config = TrainConfig(**ACCEPT_TRAIN)
    t0 = time.time()
    model = train(ds.train, config, dataset_hash="acceptance")
    train_minutes = (time.time() - t0) / 60.0
    klt = klt_from_blocks(ds.train, label="klt-8")
    sot = sot_train(ds.train, SotConfig(iterations=50, sparsity_lambda=560.0),
                    label="sot-8").transform
    return {
        "rdlt": model.transform,
        "klt": klt,
        "sot": sot,
        "dct": dct2_transform(8),
        "train_minutes": train_minutes,
    }


@pytest.fixture(scope="module")
def rd_results(trained_models, residual_dataset):
    blocks = residual_dataset.eval
    curves = {
        name: evaluate(trained_models[name], blocks, steps=EVAL_STEPS, label=name)
        for name in ("dct", "rdlt", "klt", "sot")
    }
    bd = {
        name: bd_metrics(curves[name], curves["dct"])
        for name in ("rdlt", "klt", "sot")
    }
    return {"curves": curves, "bd": bd}


# ---------------------------------------------------------------------------
# 1. Analytic gradients match finite differences.

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2024)
    config = TrainConfig(n=8, qnet_hidden=4, phase1_steps=0, phase2_steps=0)
    worst = 0.0
    t0 = time.time()
    for _ in range(20):
        params = init_params(config, rng)
        params["matrix"] += rng.normal(0.0, 0.02, params["matrix"].shape)
        params["mu"] = rng.normal(0.0, 2.0, 64)
        params["log_sigma"] = rng.normal(1.0, 0.5, 64)
        blocks = rng.integers(-96, 96, size=(2, 64)).astype(np.float64)
        noise = rng.random((2, 64)) - 0.5
        lam = float(rng.uniform(0.02, 6.0))
        ow = float(rng.choice([0.0, 0.05]))
        _, grads = loss_and_gradients(params, blocks, lam, noise, ow)

        def loss_at(key, i, h):
            saved = params[key].flat[i]
            params[key].flat[i] = saved + h
            up = rd_loss(params, blocks, lam, noise, ow).loss
            params[key].flat[i] = saved - h
            dn = rd_loss(params, blocks, lam, noise, ow).loss
            params[key].flat[i] = saved
            return (up - dn) / (2.0 * h)

        for key, g in grads.items():
            h = 2e-5 if key == "matrix" else 1e-5
            for i in range(g.size):
                fd = loss_at(key, i, h)
                an = g.flat[i]
                err = abs(an - fd)
                if err > 1e-6:
                    rel = err / max(abs(an), abs(fd))
                    worst = max(worst, rel)
                    assert rel <= 1e-3, f"{key}[{i}]: analytic {an}, fd {fd}"
    elapsed = time.time() - t0
    _verdict(1, "analytic gradients vs finite differences", elapsed < 60.0,
             f"20 batches, worst rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Orthonormality and energy preservation of every transform in play.

def test_transform_invariants(trained_models):
    worst = 0.0
    for n in (4, 8, 16, 32):
        for mat in (dct2_matrix(n), dst7_matrix(n), dct8_matrix(n)):
            worst = max(worst, orthonormality_defect(mat))
    for name in ("rdlt", "klt", "sot"):
        worst = max(worst, orthonormality_defect(to_dense(trained_models[name]).coeffs))
    rng = np.random.default_rng(7)
    blocks = rng.uniform(-100.0, 100.0, size=(1000, 64))
    energy_err = 0.0
    for name in ("dct", "rdlt", "klt", "sot"):
        y = forward(trained_models[name], blocks)
        ex = np.square(blocks).sum(axis=1)
        ey = np.square(y).sum(axis=1)
        energy_err = max(energy_err, float(np.max(np.abs(ex - ey) / ex)))
    ok = worst <= 1e-9 and energy_err <= 1e-9
    _verdict(2, "orthonormality and energy preservation", ok,
             f"max defect {worst:.2e}, max relative energy error {energy_err:.2e}")


# ---------------------------------------------------------------------------
# 3. Range coder: lossless and near the empirical entropy.

def test_range_coder_lossless_and_tight():
    blocks = ar1_blocks(10_000, 8, rho=0.95, sigma=20.0, seed=5)
    symbols = quantize(forward(dct2_transform(8), blocks), 30.0)
    stream = rc.encode_blocks(symbols)
    decoded = rc.decode_blocks(stream)
    lossless = np.array_equal(decoded, symbols)

    total = symbols.shape[0]
    entropy_bits = 0.0
    for j in range(symbols.shape[1]):
        _, counts = np.unique(symbols[:, j], return_counts=True)
        p = counts / total
        entropy_bits += float(-(p * np.log2(p)).sum()) * total
    coded_bits = len(stream) * 8.0
    budget = entropy_bits * 1.02 + 8192.0
    ok = lossless and symbols.size >= 100_000 and coded_bits <= budget
    _verdict(3, "range coder lossless and near entropy", ok,
             f"{symbols.size} symbols, coded {coded_bits:.0f} bits vs "
             f"empirical {entropy_bits:.0f} (+2%+1KiB budget {budget:.0f})")


# ---------------------------------------------------------------------------
# 4. Bjontegaard arithmetic against closed forms.

def test_bd_metric_oracles():
    steps = (20.0, 30.0, 40.0, 50.0, 60.0)
    rates = np.array([2.0, 1.2, 0.8, 0.55, 0.4])
    psnrs = np.array([42.0, 38.5, 36.0, 34.0, 32.5])
    base = RDCurve("a", [RDPoint(s, r, p) for s, r, p in zip(steps, rates, psnrs)])

    same = bd_metrics(base, base)
    ok = abs(same.bd_psnr_db) <= 1e-12 and abs(same.bd_rate_percent) <= 1e-9

    lifted = RDCurve("b", [RDPoint(s, r, p + 1.0) for s, r, p in zip(steps, rates, psnrs)])
    off = bd_metrics(lifted, base)
    ok = ok and abs(off.bd_psnr_db - 1.0) <= 1e-6

    # log10(rate) affine in PSNR: scaling rates by 0.9 shifts the integrand
    # by the constant log10(0.9), so BD-rate is exactly -10%.
    b_slope = 12.0
    affine_rates = np.power(10.0, (psnrs - 30.0) / b_slope - 1.0)
    anchor = RDCurve("c", [RDPoint(s, r, p) for s, r, p in zip(steps, affine_rates, psnrs)])
    scaled = RDCurve("d", [RDPoint(s, r * 0.9, p) for s, r, p in zip(steps, affine_rates, psnrs)])
    shift = bd_metrics(scaled, anchor)
    exact_rate = (0.9 - 1.0) * 100.0
    exact_psnr = -b_slope * np.log10(0.9)
    ok = ok and abs(shift.bd_rate_percent - exact_rate) <= abs(exact_rate) * 1e-3
    ok = ok and abs(shift.bd_psnr_db - exact_psnr) <= abs(exact_psnr) * 1e-3
    _verdict(4, "bd metric closed-form oracles", ok,
             f"offset {off.bd_psnr_db:+.6f} dB, scaled rate {shift.bd_rate_percent:+.4f}%")


# ---------------------------------------------------------------------------
# 5. Alternating sparse-transform fitting never increases its objective.

def test_sot_objective_monotone():
    blocks = ar1_blocks(10_000, 8, rho=0.95, sigma=20.0, seed=9)
    result = sot_train(blocks, SotConfig(iterations=50, sparsity_lambda=560.0))
    obj = np.asarray(result.objective)
    slack = 1e-9 * max(1.0, abs(float(obj[0])))
    diffs = np.diff(obj)
    ok = bool((diffs <= slack).all())
    _verdict(5, "sparse transform objective non-increasing", ok,
             f"{obj.size} recorded values, max increase {float(diffs.max()):.3e}")


# ---------------------------------------------------------------------------
# 6. Covariance eigenbasis decorrelates its own training coefficients.

def test_klt_decorrelation(trained_models, residual_dataset):
    y = forward(trained_models["klt"], residual_dataset.train.astype(np.float64))
    c = np.cov(y, rowvar=False)
    d = np.sqrt(np.diag(c))
    normalized = np.abs(c) / np.outer(d, d)
    np.fill_diagonal(normalized, 0.0)
    peak = float(normalized.max())
    _verdict(6, "eigenbasis decorrelation on training split", peak <= 0.02,
             f"max normalized off-diagonal {peak:.2e}")


# ---------------------------------------------------------------------------
# 7. Rate-distortion ranking on the natural residual corpus.

def test_learned_transform_ranking(trained_models, rd_results, residual_dataset):
    bd = rd_results["bd"]
    rdlt = bd["rdlt"].bd_rate_percent
    klt = bd["klt"].bd_rate_percent
    sot = bd["sot"].bd_rate_percent
    ok = rdlt <= -3.0 and rdlt <= sot and rdlt <= klt
    detail = (
        f"{residual_dataset.train.shape[0]} train blocks, "
        f"BD-rate vs DCT: learned {rdlt:+.2f}%, SOT {sot:+.2f}%, KLT {klt:+.2f}%; "
        f"KLT positive as published: {'yes' if klt > 0 else 'no'}; "
        f"training took {trained_models['train_minutes']:.1f} min"
    )
    _verdict(7, "learned transform leads both baselines", ok, detail)


# ---------------------------------------------------------------------------
# 8. Per-block selection: learned primary wins, wider sets dominate.

def test_selection_gains_and_dominance(trained_models, residual_dataset):
    blocks = residual_dataset.eval
    runs = {
        name: mts_evaluate(
            cli.mts_candidates(trained_models[name]), blocks, steps=EVAL_STEPS,
            label=f"mts-{name}",
        )
        for name in ("dct", "rdlt")
    }

    def point_cost(p):
        n2 = blocks.shape[1]
        mse = 255.0 ** 2 / 10.0 ** (p.psnr_db / 10.0)
        sse = mse * blocks.shape[0] * n2
        bits = p.rate_bpp * blocks.shape[0] * n2
        return sse + 0.12 * p.step * p.step * bits

    wins = sum(
        point_cost(pr) <= point_cost(pd)
        for pr, pd in zip(runs["rdlt"].points, runs["dct"].points)
    )

    base = cli.mts_candidates(trained_models["dct"])
    wider = [base[0], trained_models["rdlt"], *base[1:]]
    sub_costs, _, _ = mts_block_costs(base, blocks, 40.0)
    sup_costs, _, _ = mts_block_costs(wider, blocks, 40.0)
    lam_rdo = 0.12 * 40.0 * 40.0
    sig_sub = lam_rdo * signaling_bits_per_block(len(base))
    sig_sup = lam_rdo * signaling_bits_per_block(len(wider))
    dominance = bool(
        ((sup_costs.min(axis=0) - sig_sup) <= (sub_costs.min(axis=0) - sig_sub) + 1e-9).all()
    )
    ok = wins >= 3 and dominance
    _verdict(8, "learned primary improves selection, supersets dominate", ok,
             f"lower RD cost at {wins}/5 steps, blockwise dominance {dominance}")


# ---------------------------------------------------------------------------
# 9. Byte-identical reruns through the command line.

def test_end_to_end_determinism(tmp_path):
    images = str(tmp_path / "images")
    write_corpus(images, count=6, height=64, width=64, seed=5)

    def build(out):
        assert cli.main(["dataset", "build", "--images", images, "--out", out,
                         "--seed", "3", "--threads", "1"]) == 0
        return {
            f: open(os.path.join(out, f), "rb").read()
            for f in sorted(os.listdir(out))
        }

    d1 = build(str(tmp_path / "d1"))
    d2 = build(str(tmp_path / "d2"))
    ok = d1 == d2

    def train_once(out):
        assert cli.main(["train", "--dataset", str(tmp_path / "d1"), "--out", out,
                         "--phase1-steps", "150", "--phase2-steps", "150",
                         "--batch-size", "32", "--seed", "4", "--threads", "1"]) == 0
        return open(out, "rb").read()

    ok = ok and train_once(str(tmp_path / "m1.rdlm")) == train_once(str(tmp_path / "m2.rdlm"))

    def eval_once(tag):
        out = str(tmp_path / f"{tag}.csv")
        assert cli.main(["eval", "--dataset", str(tmp_path / "d1"), "--transform",
                         str(tmp_path / "m1.rdlm"), "--out", out,
                         "--steps", "30,50", "--threads", "1"]) == 0
        return open(out, "rb").read() + open(str(tmp_path / f"{tag}.png"), "rb").read()

    ok = ok and eval_once("c1") == eval_once("c2")
    _verdict(9, "dataset/train/eval reruns byte-identical", ok)


# ---------------------------------------------------------------------------
# 10. Zero training steps export exactly the initialization.

def test_zero_step_training_is_dct():
    blocks = ar1_blocks(64, 8, seed=3)
    config = TrainConfig(n=8, phase1_steps=0, phase2_steps=0, batch_size=8)
    model = train(blocks, config)
    ref = to_dense(dct2_transform(8)).coeffs
    gap = float(np.abs(to_dense(model.transform).coeffs - ref).max())
    _verdict(10, "zero-step training exports the seed basis", gap <= 1e-10,
             f"max |difference| {gap:.2e}")
