"""Joint rate-distortion training of the transform, entropy model and step net.

The training objective follows the additive-noise relaxation of transform
quantization: coefficients y = x M are divided by a step Q, perturbed with
uniform noise in [-0.5, 0.5) standing in for rounding, and reconstructed by
the transpose, x_hat = Q (y/Q + eps) M^T.  The loss is

    L = mean((x - x_hat)^2)  +  lambda * mean per-coefficient bits  [+ penalty]

where bits come from the per-position Gaussian entropy model rescaled to the
current step (mean divided by Q, variance by Q^2), and the optional penalty
is the squared orthonormality defect of M.  The step Q is produced from
lambda by a small two-layer network (tanh hidden layer, softplus output
shifted by one so Q > 1 always), trained jointly with everything else.

Gradients are hand-written reverse mode over this exact computation; the
finite-difference agreement test in the suite is the contract for every
term, including all three ways Q reaches the loss (through y/Q, through the
reconstruction scaling, and through the entropy model rescaling).

Training runs in two phases over minibatches sampled with replacement: a
fixed low-lambda (high rate) warm-up, then lambdas drawn uniformly from
[lambda_lo, lambda_hi] each step so one model covers the whole trade-off.
The matrix starts at the 2-D DCT-II and is projected back to the nearest
orthonormal matrix on a fixed cadence and at export, so the learned update
only has to steer the basis, not fight drift.  Everything is float64 numpy
and a single seeded generator: a (seed, dataset) pair reproduces the model
file bit for bit.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .entropy_model import EntropyModelParams, P_FLOOR, gauss_cdf, gauss_pdf
from .transforms import (
    TransformMatrix,
    dct2_transform,
    dense_transform,
    orthonormality_defect,
    orthonormalize,
    to_dense,
    transform_from_bytes,
    transform_to_bytes,
)

MODEL_MAGIC = b"RDLM"
MODEL_VERSION = 1

_LN2 = math.log(2.0)
_P_CEIL = float(np.nextafter(1.0, 0.0))


@dataclass
class TrainConfig:
    n: int = 8
    lambda_lo: float = 0.01
    lambda_hi: float = 0.5
    phase1_steps: int = 20000
    phase2_steps: int = 80000
    batch_size: int = 1024
    learning_rate: float = 1e-4
    qnet_learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    orthonormalize_every: int = 1000
    orth_penalty_weight: float = 0.0
    qnet_hidden: int = 16
    seed: int = 0
    log_every: int = 100

    def validate(self):
        if self.n < 2:
            raise ValueError(f"block size must be >= 2, got {self.n}")
        if not 0 < self.lambda_lo <= self.lambda_hi:
            raise ValueError(
                f"need 0 < lambda_lo <= lambda_hi, got [{self.lambda_lo}, {self.lambda_hi}]"
            )
        if self.batch_size < 1 or self.phase1_steps < 0 or self.phase2_steps < 0:
            raise ValueError("batch size must be positive and step counts non-negative")
        if self.learning_rate <= 0 or self.qnet_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.orthonormalize_every < 1:
            raise ValueError("orthonormalize_every must be >= 1")
        if self.qnet_hidden < 1:
            raise ValueError("qnet needs at least one hidden unit")


@dataclass
class LambdaToQNet:
    """Two-layer map log(lambda) -> Q with Q = softplus(.) + 1 > 1."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray  # shape () scalar

    def step_size(self, lam: float) -> float:
        q, _ = _qnet_forward(self, lam)
        return q


def _qnet_forward(qnet: LambdaToQNet, lam: float):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    t = math.log(lam)
    z = qnet.w1 * t + qnet.b1
    h = np.tanh(z)
    u = float(qnet.w2 @ h + qnet.b2)
    q = float(np.logaddexp(0.0, u)) + 1.0
    return q, (t, h, u)


@dataclass
class RDLossTerms:
    loss: float
    distortion: float
    rate: float  # bits per coefficient
    step_size: float
    defect_sq: float


def _loss_core(params: dict, blocks: np.ndarray, lam: float, noise: np.ndarray,
               orth_weight: float, want_grads: bool, step_override=None):
    m = params["matrix"]
    mu = params["mu"]
    ls = params["log_sigma"]
    qnet = LambdaToQNet(params["q_w1"], params["q_b1"], params["q_w2"], params["q_b2"])

    x = np.asarray(blocks, dtype=np.float64)
    eps = np.asarray(noise, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.shape[0]:
        raise ValueError(f"blocks of shape {x.shape} do not match a {m.shape[0]}-dim transform")
    if eps.shape != x.shape:
        raise ValueError(f"noise shape {eps.shape} must match blocks shape {x.shape}")
    bcount, num = x.shape
    denom = bcount * num

    if step_override is None:
        q, (t, h, u) = _qnet_forward(qnet, lam)
    else:
        # Fixed step, step net out of the loop.  Lets the loss be probed at
        # points the net cannot produce (Q = 1, lambda = 0).
        q = float(step_override)
        if not q > 0:
            raise ValueError(f"step override must be positive, got {q}")
        if lam < 0:
            raise ValueError(f"lambda must be non-negative, got {lam}")
        t = h = u = None

    y = x @ m
    yt = y / q + eps
    z = yt @ m.T
    xh = q * z
    diff = xh - x
    distortion = float((diff * diff).sum() / denom)

    sig = np.exp(ls)
    mu_s = mu / q
    sig_s = sig / q
    dev = yt - mu_s
    absd = np.abs(dev)
    a = (0.5 - absd) / sig_s
    b = (-0.5 - absd) / sig_s
    praw = gauss_cdf(a) - gauss_cdf(b)
    p = np.clip(praw, P_FLOOR, _P_CEIL)
    rate = float(-np.log2(p).sum() / denom)

    gram = m.T @ m
    gram[np.diag_indices_from(gram)] -= 1.0
    defect_sq = float((gram * gram).sum())

    loss = distortion + lam * rate + orth_weight * defect_sq
    terms = RDLossTerms(loss, distortion, rate, q, defect_sq)
    if not want_grads:
        return terms, None

    # Reconstruction path.
    g_xh = (2.0 / denom) * diff
    g_z = q * g_xh
    g_yt = g_z @ m
    g_m = g_z.T @ yt
    g_q = float((g_xh * z).sum())

    # Rate path; the clamp zeroes the gradient outside (P_FLOOR, 1).
    live = (praw > P_FLOOR) & (praw < _P_CEIL)
    g_p = np.where(live, -(lam / denom) / (p * _LN2), 0.0)
    phi_a = gauss_pdf(a)
    phi_b = gauss_pdf(b)
    g_absd = g_p * (phi_b - phi_a) / sig_s
    sgn = np.sign(dev)
    g_dev = g_absd * sgn
    g_yt += g_dev
    g_mu_s = -g_dev.sum(axis=0)
    g_sig_s = (g_p * (b * phi_b - a * phi_a) / sig_s).sum(axis=0)

    # Through yt = y/q + eps.
    g_y = g_yt / q
    g_q += float((g_yt * y).sum()) * (-1.0 / (q * q))
    g_m += x.T @ g_y

    # Entropy model rescaling mu/q, sigma/q.
    g_mu = g_mu_s / q
    g_q += float((g_mu_s * mu).sum()) * (-1.0 / (q * q))
    g_ls = g_sig_s * sig_s
    g_q += float((g_sig_s * sig).sum()) * (-1.0 / (q * q))

    if orth_weight:
        g_m += (4.0 * orth_weight) * (m @ gram)

    # Step network.
    if step_override is None:
        g_u = g_q * float(expit(u))
        g_w2 = g_u * h
        g_b2 = np.asarray(g_u, dtype=np.float64)
        g_h = g_u * qnet.w2
        g_z_net = g_h * (1.0 - h * h)
        g_w1 = g_z_net * t
        g_b1 = g_z_net
    else:
        g_w1 = np.zeros_like(qnet.w1)
        g_b1 = np.zeros_like(qnet.b1)
        g_w2 = np.zeros_like(qnet.w2)
        g_b2 = np.zeros_like(np.asarray(qnet.b2))

    grads = {
        "matrix": g_m,
        "mu": g_mu,
        "log_sigma": g_ls,
        "q_w1": g_w1,
        "q_b1": g_b1,
        "q_w2": g_w2,
        "q_b2": g_b2,
    }
    return terms, grads


def rd_loss(params: dict, blocks: np.ndarray, lam: float, noise: np.ndarray,
            orth_weight: float = 0.0, step_override=None) -> RDLossTerms:
    """Forward-only loss evaluation on one batch.

    step_override pins Q instead of routing lambda through the step net;
    with it, lambda = 0 is legal and the loss reduces to pure distortion.
    """
    terms, _ = _loss_core(params, blocks, lam, noise, orth_weight,
                          want_grads=False, step_override=step_override)
    return terms


def loss_and_gradients(params: dict, blocks: np.ndarray, lam: float, noise: np.ndarray,
                       orth_weight: float = 0.0):
    """Loss terms plus gradients for every trained array, keyed like params."""
    return _loss_core(params, blocks, lam, noise, orth_weight, want_grads=True)


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float, beta2: float, eps: float,
                 lr_map: dict | None = None):
        """lr_map overrides the base rate for individual parameter keys."""
        self.lr = {k: (lr_map or {}).get(k, lr) for k in params}
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for key, g in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            params[key] -= self.lr[key] * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


@dataclass
class TrainedModel:
    transform: TransformMatrix
    entropy: EntropyModelParams
    qnet: LambdaToQNet
    metadata: dict = field(default_factory=dict)


def init_params(config: TrainConfig, rng: np.random.Generator,
                blocks: np.ndarray | None = None) -> dict:
    """DCT-II matrix start; small random step-net so its gradients are alive.

    When blocks are given, the entropy model starts at the empirical mean and
    spread of the initial basis coefficients instead of (0, 1); calibrating
    the rate term from step one keeps its gradients on the matrix meaningful
    instead of spending most of the run re-deriving the data scale.
    """
    num = config.n * config.n
    matrix = to_dense(dct2_transform(config.n)).coeffs.copy()
    hidden = config.qnet_hidden
    if blocks is None:
        mu = np.zeros(num)
        log_sigma = np.zeros(num)
    else:
        y = np.asarray(blocks, dtype=np.float64) @ matrix
        mu = y.mean(axis=0)
        log_sigma = np.log(np.maximum(y.std(axis=0), 1e-3))
    return {
        "matrix": matrix,
        "mu": mu,
        "log_sigma": log_sigma,
        "q_w1": rng.uniform(-0.5, 0.5, size=hidden),
        "q_b1": rng.uniform(-1.0, 1.0, size=hidden),
        "q_w2": rng.uniform(-0.2, 0.2, size=hidden),
        # softplus(3) + 1 starts the step near 4, inside the band the net
        # settles into for RD weights up to ~10; the fast readout walks it to
        # the per-lambda optimum within a few hundred steps.
        "q_b2": np.asarray(3.0, dtype=np.float64),
    }


def train(blocks: np.ndarray, config: TrainConfig, dataset_hash: str = "") -> TrainedModel:
    """Run both phases and export the projected model.

    blocks is the training partition, (count, n^2) integers.  The returned
    model's transform is dense, orthonormalized at export; metadata carries
    the config echo, dataset hash, loss log and final defect.
    """
    config.validate()
    arr = np.asarray(blocks)
    num = config.n * config.n
    if arr.ndim != 2 or arr.shape[1] != num:
        raise ValueError(f"expected (count, {num}) blocks for n={config.n}, got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("training needs at least one block")
    data = arr.astype(np.float64)

    rng = np.random.default_rng(config.seed)
    params = init_params(config, rng, data)
    # The step net output has to swing across two orders of magnitude of Q
    # while everything else makes small refinements, so its readout gets a
    # faster rate.  The hidden layer keeps the base rate: phase one feeds the
    # net a constant lambda, and a fast hidden layer would saturate its tanh
    # units during that phase and never recover the lambda dependence.
    qnet_lr = {k: config.qnet_learning_rate for k in ("q_w2", "q_b2")}
    opt = Adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2,
               config.adam_eps, lr_map=qnet_lr)

    total_steps = config.phase1_steps + config.phase2_steps
    log_rows = []
    for step in range(1, total_steps + 1):
        idx = rng.integers(0, data.shape[0], size=config.batch_size)
        if step <= config.phase1_steps:
            lam = config.lambda_lo
        else:
            lam = float(rng.uniform(config.lambda_lo, config.lambda_hi))
        noise = rng.random((config.batch_size, num)) - 0.5
        terms, grads = loss_and_gradients(
            params, data[idx], lam, noise, config.orth_penalty_weight
        )
        opt.step(params, grads)
        if step % config.orthonormalize_every == 0:
            params["matrix"] = orthonormalize(params["matrix"])
        if config.log_every and (step % config.log_every == 0 or step == total_steps):
            log_rows.append([
                step,
                terms.loss,
                terms.distortion,
                terms.rate,
                terms.step_size,
                orthonormality_defect(params["matrix"]),
            ])

    matrix = orthonormalize(params["matrix"])
    transform = dense_transform(matrix, label=f"rdlt-{config.n}")
    if not transform.orthonormal:
        raise AssertionError("exported matrix failed the orthonormality check")
    qnet = LambdaToQNet(params["q_w1"], params["q_b1"], params["q_w2"], params["q_b2"])
    metadata = {
        "config": asdict(config),
        "dataset_hash": dataset_hash,
        "final_defect": orthonormality_defect(matrix),
        "log_fields": ["step", "loss", "distortion", "rate", "step_size", "defect"],
        "log": log_rows,
    }
    entropy = EntropyModelParams(params["mu"].copy(), params["log_sigma"].copy())
    return TrainedModel(transform, entropy, qnet, metadata)


def save_model(model: TrainedModel, path: str) -> None:
    """Binary model container: transform record, entropy params, step net, metadata."""
    num = model.transform.n * model.transform.n
    if model.entropy.mu.shape[0] != num:
        raise ValueError("entropy model size does not match the transform")
    transform_blob = transform_to_bytes(model.transform)
    hidden = model.qnet.w1.shape[0]
    meta_blob = json.dumps(model.metadata, sort_keys=True).encode("utf-8")

    pieces = [
        MODEL_MAGIC,
        struct.pack("<HH", MODEL_VERSION, model.transform.n),
        struct.pack("<I", len(transform_blob)),
        transform_blob,
        np.ascontiguousarray(model.entropy.mu, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.entropy.log_sigma, dtype="<f8").tobytes(),
        struct.pack("<H", hidden),
        np.ascontiguousarray(model.qnet.w1, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.qnet.b1, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.qnet.w2, dtype="<f8").tobytes(),
        struct.pack("<d", float(model.qnet.b2)),
        struct.pack("<I", len(meta_blob)),
        meta_blob,
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(pieces))


def load_model(path: str) -> TrainedModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic {raw[:4]!r})")
    try:
        version, n = struct.unpack_from("<HH", raw, 4)
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        offset = 8
        (tlen,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        transform = transform_from_bytes(raw[offset : offset + tlen], origin=path)
        offset += tlen
        num = n * n
        mu = np.frombuffer(raw, dtype="<f8", count=num, offset=offset).copy()
        offset += 8 * num
        ls = np.frombuffer(raw, dtype="<f8", count=num, offset=offset).copy()
        offset += 8 * num
        (hidden,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        parts = []
        for _ in range(3):
            parts.append(np.frombuffer(raw, dtype="<f8", count=hidden, offset=offset).copy())
            offset += 8 * hidden
        (b2,) = struct.unpack_from("<d", raw, offset)
        offset += 8
        (mlen,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        metadata = json.loads(raw[offset : offset + mlen].decode("utf-8"))
        offset += mlen
    except (struct.error, IndexError) as exc:
        raise ValueError(f"{path}: truncated model file") from exc
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after model payload")
    if transform.n != n:
        raise ValueError(f"{path}: transform size {transform.n} disagrees with header {n}")
    qnet = LambdaToQNet(parts[0], parts[1], parts[2], np.asarray(b2))
    return TrainedModel(transform, EntropyModelParams(mu, ls), qnet, metadata)
