"""Imitation-trained MLP surrogate for the MPC law.

A small tanh network with affine input/output normalizers learns u_MPC(x)
from states sampled over a box, by minibatch Adam on mean squared error.
Everything is plain numpy: training is single-threaded and bit-reproducible
for a fixed seed, and the forward pass is cheap enough for the dispatcher's
forward-verification loop.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .plants import Plant
from .sets import Box

_MAGIC = b"MLPB"
_FORMAT_VERSION = 1


class PolicyError(Exception):
    pass


class TrainingDiverged(PolicyError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class SamplingError(PolicyError):
    pass


@dataclass
class MLPPolicy:
    """Feedforward tanh network with affine input/output normalizers.

    weights[i] has shape (sizes[i], sizes[i+1]); hidden activations are
    tanh, the output layer is linear, and the output is denormalized by
    u = output_center + output_half * raw. Outputs are NOT clamped here;
    the dispatcher clamps to the plant input box.
    """

    layer_sizes: tuple
    weights: list
    biases: list
    input_center: np.ndarray
    input_half: np.ndarray
    output_center: np.ndarray
    output_half: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return mlp_forward(self, x)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def mlp_init(layer_sizes, seed: int = 0, input_scale=None, output_scale=None) -> MLPPolicy:
    """Scaled-uniform (Glorot) initialization, deterministic per seed."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    ic, ih = input_scale if input_scale is not None else (np.zeros(sizes[0]), np.ones(sizes[0]))
    oc, oh = output_scale if output_scale is not None else (np.zeros(sizes[-1]), np.ones(sizes[-1]))
    return MLPPolicy(sizes, weights, biases,
                     np.asarray(ic, float), np.asarray(ih, float),
                     np.asarray(oc, float), np.asarray(oh, float))


def zero_policy(layer_sizes, **kw) -> MLPPolicy:
    """All-zero-weight network (constant output); useful as a known-bad policy."""
    p = mlp_init(layer_sizes, seed=0, **kw)
    for w in p.weights:
        w[:] = 0.0
    return p


def mlp_forward(p: MLPPolicy, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.layer_sizes[0],):
        raise ValueError(f"input has shape {x.shape}, expected ({p.layer_sizes[0]},)")
    z = (x - p.input_center) / p.input_half
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = z @ w + b
        if i != last:
            z = np.tanh(z)
    return p.output_center + p.output_half * z


def mlp_forward_batch(p: MLPPolicy, X: np.ndarray) -> np.ndarray:
    z = (X - p.input_center) / p.input_half
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = z @ w + b
        if i != last:
            z = np.tanh(z)
    return p.output_center + p.output_half * z


def mse_loss_and_grads(p: MLPPolicy, X: np.ndarray, Y: np.ndarray):
    """Mean of ||u_pred - y||^2 over the batch, with weight/bias gradients."""
    M = X.shape[0]
    z = (X - p.input_center) / p.input_half
    acts = [z]
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = z @ w + b
        if i != last:
            z = np.tanh(z)
        acts.append(z)
    pred = p.output_center + p.output_half * acts[-1]
    err = pred - Y
    loss = float(np.sum(err * err) / M)
    delta = (2.0 / M) * err * p.output_half
    grads_w = [None] * len(p.weights)
    grads_b = [None] * len(p.biases)
    for i in range(last, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ p.weights[i].T) * (1.0 - acts[i] * acts[i])
    return loss, grads_w, grads_b


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class ImitationDataset:
    states: np.ndarray   # (M, n)
    labels: np.ndarray   # (M, m), feasible MPC moves
    sampling_box: Box

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.states.shape[0] != self.labels.shape[0]:
            raise ValueError("states and labels must have equal length")

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass
class LossCurve:
    train_mse: list
    val_mse: list

    def rows(self):
        return [(e, t, v) for e, (t, v) in enumerate(zip(self.train_mse, self.val_mse))]


def sample_dataset(controller, plant: Plant, sampling_box: Box, M: int,
                   seed: int = 0) -> ImitationDataset:
    """States uniform over the box, labeled by feasible MPC moves.

    Infeasible states are discarded and resampled, up to 10*M attempts.
    ``controller`` is an MPCController (or anything with .control returning
    a result with .u0/.feasible).
    """
    if M < 1:
        raise ValueError("dataset size must be at least 1")
    rng = np.random.default_rng(seed)
    states = np.empty((M, plant.n))
    labels = np.empty((M, plant.m))
    kept = 0
    attempts = 0
    cap = 10 * M
    while kept < M:
        if attempts >= cap:
            raise SamplingError(
                f"exceeded {cap} sampling attempts with only {kept}/{M} feasible states; "
                "the sampling box likely leaves the feasible set"
            )
        x = sampling_box.sample(rng)
        attempts += 1
        res = controller.control(x)
        if not res.feasible:
            continue
        states[kept] = x
        labels[kept] = res.u0
        kept += 1
    return ImitationDataset(states, labels, sampling_box)


def train_imitation(data: ImitationDataset, layer_sizes, cfg: TrainConfig,
                    output_box: Box | None = None, val_fraction: float = 0.1):
    """Minibatch Adam on MSE; returns the trained policy and the loss curve.

    Normalization: inputs by the sampling-box center/half-widths, outputs by
    the plant input-box center/half-widths (fallback: label statistics).
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    n = data.states.shape[1]
    m = data.labels.shape[1]
    sizes = tuple(layer_sizes)
    if sizes[0] != n or sizes[-1] != m:
        raise ValueError(f"architecture {sizes} does not match dataset dims ({n} -> {m})")

    in_center = data.sampling_box.center
    in_half = np.where(data.sampling_box.half_width > 0, data.sampling_box.half_width, 1.0)
    if output_box is not None:
        out_center, out_half = output_box.center, output_box.half_width
    else:
        lo, hi = data.labels.min(axis=0), data.labels.max(axis=0)
        out_center, out_half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    out_half = np.where(out_half > 0, out_half, 1.0)

    policy = mlp_init(sizes, seed=cfg.seed,
                      input_scale=(in_center, in_half),
                      output_scale=(out_center, out_half))

    rng = np.random.default_rng(cfg.seed)
    M = len(data)
    perm = rng.permutation(M)
    n_val = max(1, int(round(val_fraction * M))) if M > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        train_idx, val_idx = perm, perm
    Xt, Yt = data.states[train_idx], data.labels[train_idx]
    Xv, Yv = data.states[val_idx], data.labels[val_idx]

    def mse(X, Y):
        if X.shape[0] == 0:
            return float("nan")
        e = mlp_forward_batch(policy, X) - Y
        return float(np.sum(e * e) / X.shape[0])

    mw = [np.zeros_like(w) for w in policy.weights]
    vw = [np.zeros_like(w) for w in policy.weights]
    mb = [np.zeros_like(b) for b in policy.biases]
    vb = [np.zeros_like(b) for b in policy.biases]
    b1, b2 = cfg.adam_betas
    lr, eps = cfg.learning_rate, cfg.adam_eps
    t = 0

    train_curve = [mse(Xt, Yt)]
    val_curve = [mse(Xv, Yv)]
    n_train = Xt.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, gw, gb = mse_loss_and_grads(policy, Xt[idx], Yt[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            t += 1
            corr1 = 1.0 - b1 ** t
            corr2 = 1.0 - b2 ** t
            for i in range(len(policy.weights)):
                mw[i] = b1 * mw[i] + (1 - b1) * gw[i]
                vw[i] = b2 * vw[i] + (1 - b2) * gw[i] * gw[i]
                policy.weights[i] -= lr * (mw[i] / corr1) / (np.sqrt(vw[i] / corr2) + eps)
                mb[i] = b1 * mb[i] + (1 - b1) * gb[i]
                vb[i] = b2 * vb[i] + (1 - b2) * gb[i] * gb[i]
                policy.biases[i] -= lr * (mb[i] / corr1) / (np.sqrt(vb[i] / corr2) + eps)
        train_epoch = mse(Xt, Yt)
        val_epoch = mse(Xv, Yv)
        if not (np.isfinite(train_epoch) and np.isfinite(val_epoch)):
            raise TrainingDiverged(epoch)
        train_curve.append(train_epoch)
        val_curve.append(val_epoch)
    return policy, LossCurve(train_curve, val_curve)


# ---------------------------------------------------------------------------
# Serialization: human-readable header line + little-endian binary payload
# with a trailing CRC32.
# ---------------------------------------------------------------------------

def save_policy(policy: MLPPolicy, path):
    header = {
        "format": "mampc-mlp-policy",
        "version": _FORMAT_VERSION,
        "layer_sizes": list(policy.layer_sizes),
    }
    header_line = ("# " + json.dumps(header, sort_keys=True) + "\n").encode("utf-8")
    chunks = [_MAGIC, struct.pack("<II", _FORMAT_VERSION, len(policy.layer_sizes))]
    chunks.append(struct.pack(f"<{len(policy.layer_sizes)}I", *policy.layer_sizes))
    for w, b in zip(policy.weights, policy.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    for arr in (policy.input_center, policy.input_half,
                policy.output_center, policy.output_half):
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(header_line)
        f.write(payload)
        f.write(struct.pack("<I", crc))


def load_policy(path) -> MLPPolicy:
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.index(b"\n")
    payload, (crc,) = raw[nl + 1:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise PolicyError("policy file checksum mismatch")
    if payload[:4] != _MAGIC:
        raise PolicyError("bad policy file magic")
    version, n_layers = struct.unpack("<II", payload[4:12])
    if version != _FORMAT_VERSION:
        raise PolicyError(f"unsupported policy format version {version}")
    off = 12
    sizes = struct.unpack(f"<{n_layers}I", payload[off:off + 4 * n_layers])
    off += 4 * n_layers

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
        return arr

    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(take((fan_in, fan_out)))
        biases.append(take((fan_out,)))
    ic = take((sizes[0],))
    ih = take((sizes[0],))
    oc = take((sizes[-1],))
    oh = take((sizes[-1],))
    if off != len(payload):
        raise PolicyError("policy file has trailing bytes")
    return MLPPolicy(tuple(sizes), weights, biases, ic, ih, oc, oh)
