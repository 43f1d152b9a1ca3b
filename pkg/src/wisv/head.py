"""Link-aware rejection head: a two-layer MLP trained from scratch.

Input is the concatenation [drafter hidden; target hidden; CSI features];
output is a rejection probability. Forward pass:

    s = w2 . Dropout(ReLU(W1 z + b1)) + b2,   p = sigmoid(s)

Dropout uses inverted scaling so inference needs no rescale. Training is
plain mini-batch SGD with momentum, weight decay on the weight matrices,
and a positive-class weight for imbalance; gradients are exact
backpropagation, and the BCE loss is always evaluated from the logit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC = b"WSVH"
_VERSION = 1


@dataclass
class HeadParams:
    w1: np.ndarray  # (d_j, d_in)
    b1: np.ndarray  # (d_j,)
    w2: np.ndarray  # (d_j,)
    b2: float
    dropout_rate: float = 0.1

    def __post_init__(self) -> None:
        d_j, d_in = self.w1.shape
        if self.b1.shape != (d_j,) or self.w2.shape != (d_j,):
            raise ValueError("inconsistent head parameter shapes")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        for arr in (self.w1, self.b1, self.w2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("head parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d_j(self) -> int:
        return self.w1.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 256
    weight_decay: float = 1e-4
    momentum: float = 0.9
    dropout: float = 0.1
    hidden_dim: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


def init_params(d_in: int, d_j: int, seed: int, dropout_rate: float = 0.1) -> HeadParams:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng([seed, 0x4EAD])
    lim1 = 1.0 / np.sqrt(d_in)
    lim2 = 1.0 / np.sqrt(d_j)
    return HeadParams(
        w1=rng.uniform(-lim1, lim1, size=(d_j, d_in)),
        b1=np.zeros(d_j),
        w2=rng.uniform(-lim2, lim2, size=d_j),
        b2=0.0,
        dropout_rate=dropout_rate,
    )


def assemble(h_d: np.ndarray, h_t: np.ndarray, csi_features: np.ndarray) -> np.ndarray:
    """Feature vector [h_draft; h_target; csi] in exactly that order."""
    return np.concatenate([h_d, h_t, csi_features])


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def forward_batch(
    params: HeadParams,
    z: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Logits and rejection probabilities for a (n, d_in) feature batch."""
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite feature input")
    pre = z @ params.w1.T + params.b1
    act = np.maximum(pre, 0.0)
    if training and params.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode forward with dropout needs an rng")
        keep = 1.0 - params.dropout_rate
        act = act * (rng.random(act.shape) < keep) / keep
    s = act @ params.w2 + params.b2
    return s, sigmoid(s)


def forward(
    params: HeadParams,
    z: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Single-vector forward pass; returns (logit, rejection probability)."""
    s, p = forward_batch(params, z[None, :], training=training, rng=rng)
    return float(s[0]), float(p[0])


def bce_from_logit(s, y, pos_weight: float = 1.0):
    """Elementwise BCE evaluated from the logit (log-sum-exp form)."""
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    # softplus(x) = max(x, 0) + log1p(exp(-|x|)); loss is y*softplus(-s) + (1-y)*softplus(s)
    common = np.log1p(np.exp(-np.abs(s)))
    loss_pos = np.maximum(-s, 0.0) + common
    loss_neg = np.maximum(s, 0.0) + common
    return pos_weight * y * loss_pos + (1.0 - y) * loss_neg


def bce_loss(p: float, y: float) -> float:
    """BCE for a probability in (0, 1); routed through the logit internally."""
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie strictly in (0, 1)")
    s = np.log(p) - np.log1p(-p)
    return float(bce_from_logit(s, y))


def decide(params: HeadParams, z: np.ndarray, tau: float) -> bool:
    """True means reject. The boundary is inclusive: reject iff p >= tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    _, p = forward(params, z, training=False)
    return p >= tau


def loss_and_grads(
    params: HeadParams,
    x: np.ndarray,
    y: np.ndarray,
    pos_weight: float = 1.0,
    weight_decay: float = 0.0,
    dropout_mask: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean weighted BCE (+ L2 on the weight matrices) and its exact gradients.

    ``dropout_mask``, when given, is the already-scaled multiplicative mask
    applied to the hidden activations; passing None disables dropout, which
    keeps the function deterministic for finite-difference checks.
    """
    n = x.shape[0]
    pre = x @ params.w1.T + params.b1
    act = np.maximum(pre, 0.0)
    if dropout_mask is not None:
        act = act * dropout_mask
    s = act @ params.w2 + params.b2
    p = sigmoid(s)

    loss = float(np.mean(bce_from_logit(s, y, pos_weight)))
    loss += 0.5 * weight_decay * (float(np.sum(params.w1**2)) + float(np.sum(params.w2**2)))

    # d loss / d s, mean reduction
    gs = ((1.0 - y) * p + pos_weight * y * (p - 1.0)) / n
    gw2 = act.T @ gs + weight_decay * params.w2
    gb2 = float(np.sum(gs))
    gact = np.outer(gs, params.w2)
    if dropout_mask is not None:
        gact = gact * dropout_mask
    gpre = gact * (pre > 0.0)
    gw1 = gpre.T @ x + weight_decay * params.w1
    gb1 = gpre.sum(axis=0)
    return loss, {"w1": gw1, "b1": gb1, "w2": gw2, "b2": np.float64(gb2)}


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    pos_weight: float = 1.0
    final_train_accuracy: float = 0.0


def train(
    x: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> tuple[HeadParams, TrainReport]:
    """Train a head on (n, d_in) features and 0/1 labels.

    The positive-class weight is #neg/#pos, recomputed from the dataset;
    a single-class dataset is rejected because that weight is undefined.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("dataset must be a nonempty (n, d_in) matrix with n labels")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("training set must contain both classes")
    pos_weight = n_neg / n_pos

    n, d_in = x.shape
    params = init_params(d_in, cfg.hidden_dim, cfg.seed, dropout_rate=cfg.dropout)
    rng = np.random.default_rng([cfg.seed, 0x7EA1])
    vel = {
        "w1": np.zeros_like(params.w1),
        "b1": np.zeros_like(params.b1),
        "w2": np.zeros_like(params.w2),
        "b2": np.float64(0.0),
    }
    report = TrainReport(pos_weight=pos_weight)
    keep = 1.0 - cfg.dropout

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            mask = None
            if cfg.dropout > 0.0:
                mask = (rng.random((len(idx), cfg.hidden_dim)) < keep) / keep
            loss, grads = loss_and_grads(
                params, xb, yb, pos_weight, cfg.weight_decay, dropout_mask=mask
            )
            for key in vel:
                vel[key] = cfg.momentum * vel[key] + grads[key]
            params.w1 -= cfg.learning_rate * vel["w1"]
            params.b1 -= cfg.learning_rate * vel["b1"]
            params.w2 -= cfg.learning_rate * vel["w2"]
            params.b2 -= cfg.learning_rate * float(vel["b2"])
            epoch_loss += loss
            n_batches += 1
        report.epoch_losses.append(epoch_loss / n_batches)

    s, _ = forward_batch(params, x, training=False)
    report.final_train_accuracy = float(np.mean((s >= 0.0) == (y == 1.0)))
    return params, report


def save_params(path: str | Path, params: HeadParams, metadata: dict | None = None) -> None:
    """Write params as little-endian FP32 with a dims header, plus a JSON sidecar."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, params.d_in, params.d_j))
        fh.write(params.w1.astype("<f4").tobytes())
        fh.write(params.b1.astype("<f4").tobytes())
        fh.write(params.w2.astype("<f4").tobytes())
        fh.write(np.float32(params.b2).astype("<f4").tobytes())
    sidecar = {
        "d_in": params.d_in,
        "d_j": params.d_j,
        "dropout_rate": params.dropout_rate,
    }
    sidecar.update(metadata or {})
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path: str | Path) -> HeadParams:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not a head parameter file")
    version, d_in, d_j = struct.unpack("<III", raw[4:16])
    if version != _VERSION:
        raise ValueError(f"unsupported head file version {version}")
    need = 16 + 4 * (d_j * d_in + d_j + d_j + 1)
    if len(raw) != need:
        raise ValueError(f"truncated head file: {len(raw)} bytes, expected {need}")
    flat = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float64)
    w1 = flat[: d_j * d_in].reshape(d_j, d_in)
    b1 = flat[d_j * d_in : d_j * d_in + d_j]
    w2 = flat[d_j * d_in + d_j : d_j * d_in + 2 * d_j]
    b2 = float(flat[-1])
    dropout = 0.1
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        dropout = json.loads(sidecar.read_text()).get("dropout_rate", 0.1)
    return HeadParams(w1=w1, b1=b1, w2=w2, b2=b2, dropout_rate=dropout)
