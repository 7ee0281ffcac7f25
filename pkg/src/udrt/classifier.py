"""From-scratch convolutional classifier bank.

One small network per fusion group: conv(16) -> relu -> pool -> conv(32)
-> relu -> pool -> dense(64) -> relu -> dense(K) -> softmax. Convolutions
are 3x3, stride 1, zero padding 1, computed by unrolling patches into
columns and multiplying (the naive nested-loop form is kept in the test
suite as the correctness oracle). Training is plain mini-batch SGD on
cross-entropy with analytic backpropagation; everything is deterministic
given the seed.

Runtime models hold float32 weights; gradient verification builds the same
net in float64.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .preprocess import FusedInput
from .taxonomy import DefectClass, group_by_id

_KSIZE = 3
_PAD = 1


class ModelFormatError(ValueError):
    """Manifest or weight blob does not describe a loadable model."""


@dataclass(frozen=True)
class Topology:
    """Layer plan of one group's network."""

    group_id: int
    class_set: tuple[DefectClass, ...]
    in_channels: int
    in_hw: int = 64
    conv1_filters: int = 16
    conv2_filters: int = 32
    hidden: int = 64

    def __post_init__(self) -> None:
        if self.in_hw % 4 != 0:
            raise ValueError("input side must be divisible by 4 (two pools)")

    @property
    def num_classes(self) -> int:
        return len(self.class_set)

    @property
    def flat_dim(self) -> int:
        side = self.in_hw // 4
        return self.conv2_filters * side * side


def topology_for_group(group_id: int, in_hw: int = 64) -> Topology:
    group = group_by_id(group_id)
    return Topology(
        group_id=group_id,
        class_set=group.class_set,
        in_channels=group.channel_count,
        in_hw=in_hw,
    )


#: Serialization order of the weight arrays in weights.bin.
ARRAY_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4")


@dataclass
class ModelParams:
    """Weights of one network plus its training provenance."""

    topology: Topology
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray
    metadata: dict = field(default_factory=dict)

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in ARRAY_NAMES]

    def astype(self, dtype) -> "ModelParams":
        kwargs = {name: arr.astype(dtype) for name, arr in self.arrays()}
        return ModelParams(
            topology=self.topology, metadata=dict(self.metadata), **kwargs
        )

    def copy(self) -> "ModelParams":
        kwargs = {name: arr.copy() for name, arr in self.arrays()}
        return ModelParams(
            topology=self.topology, metadata=dict(self.metadata), **kwargs
        )

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.arrays())

    def validate(self) -> None:
        t = self.topology
        expected = expected_shapes(t)
        for name, arr in self.arrays():
            if tuple(arr.shape) != expected[name]:
                raise ModelFormatError(
                    f"{name} has shape {tuple(arr.shape)}, topology requires "
                    f"{expected[name]}"
                )
            if not np.isfinite(arr).all():
                raise ModelFormatError(f"{name} contains non-finite values")


def expected_shapes(t: Topology) -> dict[str, tuple[int, ...]]:
    return {
        "w1": (t.conv1_filters, t.in_channels, _KSIZE, _KSIZE),
        "b1": (t.conv1_filters,),
        "w2": (t.conv2_filters, t.conv1_filters, _KSIZE, _KSIZE),
        "b2": (t.conv2_filters,),
        "w3": (t.hidden, t.flat_dim),
        "b3": (t.hidden,),
        "w4": (t.num_classes, t.hidden),
        "b4": (t.num_classes,),
    }


def init_params(
    topology: Topology,
    seed: int = 0,
    dtype=np.float32,
    scale: float = 0.1,
) -> ModelParams:
    """He-uniform initialization with the output layer shrunk by ``scale``.

    The output-layer shrink puts the cold network close to zero logits, so
    an untrained model reports near-uniform class probabilities. The hidden
    layers stay at full He width: shrinking them as well collapses the
    backpropagated signal (it passes through two shrunk factors) and SGD
    then sits at the class prior without ever learning features.
    """
    rng = np.random.default_rng(seed)
    shapes = expected_shapes(topology)
    arrays = {}
    fan_in = {
        "w1": topology.in_channels * _KSIZE * _KSIZE,
        "w2": topology.conv1_filters * _KSIZE * _KSIZE,
        "w3": topology.flat_dim,
        "w4": topology.hidden,
    }
    for name, shape in shapes.items():
        if name.startswith("b"):
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            limit = np.sqrt(6.0 / fan_in[name])
            if name == "w4":
                limit *= scale
            arrays[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return ModelParams(
        topology=topology,
        metadata={"seed": seed, "init_scale": scale},
        **arrays,
    )


# ---------------------------------------------------------------------------
# layers


def _check_finite(name: str, x: np.ndarray) -> None:
    if not np.isfinite(x).all():
        raise ValueError(f"{name} received non-finite input")


def relu(x: np.ndarray) -> np.ndarray:
    _check_finite("relu", x)
    return np.maximum(x, 0)


def maxpool2(x: np.ndarray) -> np.ndarray:
    """2x2 non-overlapping max over the two trailing axes."""
    _check_finite("maxpool2", x)
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {x.shape}")
    a = x[..., ::2, ::2]
    b = x[..., ::2, 1::2]
    c = x[..., 1::2, ::2]
    d = x[..., 1::2, 1::2]
    return np.maximum(np.maximum(a, b), np.maximum(c, d))


def dense_forward(
    vector: np.ndarray, weights: np.ndarray, bias: np.ndarray
) -> np.ndarray:
    _check_finite("dense_forward", vector)
    if weights.shape[1] != vector.shape[-1]:
        raise ValueError(
            f"dense weights expect {weights.shape[1]} inputs, got "
            f"{vector.shape[-1]}"
        )
    return vector @ weights.T + bias


def softmax(logits: np.ndarray) -> np.ndarray:
    """Probabilities along the last axis, computed with max subtraction."""
    _check_finite("softmax", logits)
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _im2col_single(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (C*9, H*W) patch matrix for 3x3/stride 1/pad 1."""
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((c, _KSIZE, _KSIZE, h, w), dtype=x.dtype)
    for ki in range(_KSIZE):
        for kj in range(_KSIZE):
            cols[:, ki, kj] = xp[:, ki : ki + h, kj : kj + w]
    return cols.reshape(c * _KSIZE * _KSIZE, h * w)


def _im2col_batch(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C*9, H*W)."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((n, c, _KSIZE, _KSIZE, h, w), dtype=x.dtype)
    for ki in range(_KSIZE):
        for kj in range(_KSIZE):
            cols[:, :, ki, kj] = xp[:, :, ki : ki + h, kj : kj + w]
    return cols.reshape(n, c * _KSIZE * _KSIZE, h * w)


_SCRATCH = threading.local()


def _scratch(key: str, shape, dtype, zeroed: bool = False) -> np.ndarray:
    """Reusable training-path buffer; avoids re-faulting big allocations."""
    pool = getattr(_SCRATCH, "pool", None)
    if pool is None:
        pool = _SCRATCH.pool = {}
    full = (key, shape, np.dtype(dtype))
    buf = pool.get(full)
    if buf is None:
        buf = np.zeros(shape, dtype=dtype) if zeroed else np.empty(shape, dtype)
        pool[full] = buf
    return buf


def _im2col_cnhw(x: np.ndarray) -> np.ndarray:
    """(C, N, H, W) -> (C*9, N*H*W); the training-path layout.

    Keeping the channel axis leading lets each convolution run as a single
    large matrix product with no per-sample batching or transposes.
    """
    c, n, h, w = x.shape
    # border stays zero across reuses; the interior is overwritten fully
    xp = _scratch("im2col_pad", (c, n, h + 2, w + 2), x.dtype, zeroed=True)
    xp[:, :, 1:-1, 1:-1] = x
    cols = _scratch("im2col_cols", (c, _KSIZE, _KSIZE, n, h, w), x.dtype)
    for ki in range(_KSIZE):
        for kj in range(_KSIZE):
            cols[:, ki, kj] = xp[:, :, ki : ki + h, kj : kj + w]
    return cols.reshape(c * _KSIZE * _KSIZE, n * h * w)


def _col2im_cnhw(dcols: np.ndarray, x_shape) -> np.ndarray:
    """Adjoint of _im2col_cnhw: scatter-add back to (C, N, H, W)."""
    c, n, h, w = x_shape
    dxp = np.zeros((c, n, h + 2, w + 2), dtype=dcols.dtype)
    dc = dcols.reshape(c, _KSIZE, _KSIZE, n, h, w)
    for ki in range(_KSIZE):
        for kj in range(_KSIZE):
            dxp[:, :, ki : ki + h, kj : kj + w] += dc[:, ki, kj]
    return dxp[:, :, 1:-1, 1:-1]


def _pool_cnhw(x: np.ndarray) -> np.ndarray:
    a = x[..., ::2, ::2]
    b = x[..., ::2, 1::2]
    c = x[..., 1::2, ::2]
    d = x[..., 1::2, 1::2]
    return np.maximum(np.maximum(a, b), np.maximum(c, d))


def conv2d_forward(
    x: np.ndarray, kernels: np.ndarray, biases: np.ndarray
) -> np.ndarray:
    """3x3 cross-correlation, stride 1, zero padding 1.

    ``x`` is (C, H, W) or (N, C, H, W); output keeps the spatial size.
    """
    if kernels.ndim != 4 or kernels.shape[2:] != (_KSIZE, _KSIZE):
        raise ValueError(f"kernels must be (F, C, 3, 3), got {kernels.shape}")
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.ndim != 4:
        raise ValueError(f"input must be 3-D or 4-D, got shape {x.shape}")
    if xb.shape[1] != kernels.shape[1]:
        raise ValueError(
            f"input has {xb.shape[1]} channels, kernels expect "
            f"{kernels.shape[1]}"
        )
    if biases.shape != (kernels.shape[0],):
        raise ValueError(
            f"biases must have shape ({kernels.shape[0]},), got {biases.shape}"
        )
    n, _, h, w = xb.shape
    f = kernels.shape[0]
    w_mat = kernels.reshape(f, -1)
    cols = _im2col_batch(xb)
    out = np.matmul(w_mat, cols).reshape(n, f, h, w)
    out += biases[None, :, None, None]
    return out[0] if single else out


def _pool_relu_backward(
    a: np.ndarray, pooled: np.ndarray, dpooled: np.ndarray
) -> np.ndarray:
    """Fused backward of relu followed by 2x2 max pooling.

    ``a`` is the post-relu map. Gradient flows only where the window max is
    positive, and only to the entries equal to it; every such entry is
    relu-active, so no separate relu mask is needed. Exact ties between
    positive entries would double-route, but they have measure zero for
    continuous activations (and the gradient-check point asserts margins
    that rule them out).
    """
    dp = dpooled * (pooled > 0)
    dx = np.empty_like(a)
    views = (
        (a[..., ::2, ::2], dx[..., ::2, ::2]),
        (a[..., ::2, 1::2], dx[..., ::2, 1::2]),
        (a[..., 1::2, ::2], dx[..., 1::2, ::2]),
        (a[..., 1::2, 1::2], dx[..., 1::2, 1::2]),
    )
    for av, dxv in views:
        np.multiply(dp, av == pooled, out=dxv)
    return dx


# ---------------------------------------------------------------------------
# full network


def _forward_batch(params: ModelParams, x: np.ndarray, need_cache: bool):
    """Batched forward pass; optionally keep caches for backprop.

    Internally activations live in (channels, batch, H, W) layout so each
    convolution is one large matrix product.
    """
    w1m = params.w1.reshape(params.w1.shape[0], -1)
    w2m = params.w2.reshape(params.w2.shape[0], -1)
    n = x.shape[0]
    h = w = params.topology.in_hw

    xc = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    cols1 = _im2col_cnhw(xc)
    c1 = (w1m @ cols1).reshape(-1, n, h, w)
    c1 += params.b1[:, None, None, None]
    a1 = np.maximum(c1, 0, out=c1)  # in place: the >0 mask is unchanged
    p1 = _pool_cnhw(a1)

    cols2 = _im2col_cnhw(p1)
    c2 = (w2m @ cols2).reshape(-1, n, h // 2, w // 2)
    c2 += params.b2[:, None, None, None]
    a2 = np.maximum(c2, 0, out=c2)
    p2 = _pool_cnhw(a2)

    flat = np.ascontiguousarray(p2.transpose(1, 0, 2, 3)).reshape(n, -1)
    h1 = flat @ params.w3.T + params.b3
    a3 = np.maximum(h1, 0)
    logits = a3 @ params.w4.T + params.b4

    if not need_cache:
        return logits, None
    cache = (xc, cols1, c1, a1, p1, cols2, c2, a2, p2, flat, h1, a3)
    return logits, cache


def loss_and_grads(
    params: ModelParams, x: np.ndarray, y: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and gradients for every array."""
    logits, cache = _forward_batch(params, x, need_cache=True)
    (xc, cols1, c1, a1, p1, cols2, c2, a2, p2, flat, h1, a3) = cache
    n = x.shape[0]
    h = w = params.topology.in_hw
    f2 = params.topology.conv2_filters

    zmax = logits.max(axis=1, keepdims=True)
    zs = logits - zmax
    log_probs = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), y].mean())

    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    dw4 = dlogits.T @ a3
    db4 = dlogits.sum(axis=0)
    da3 = dlogits @ params.w4
    dh1 = da3 * (h1 > 0)
    dw3 = dh1.T @ flat
    db3 = dh1.sum(axis=0)
    dflat = dh1 @ params.w3

    # back to the (channels, batch, H, W) layout
    dp2 = np.ascontiguousarray(
        dflat.reshape(n, f2, h // 4, w // 4).transpose(1, 0, 2, 3)
    )
    dc2 = _pool_relu_backward(a2, p2, dp2)

    w2m = params.w2.reshape(params.w2.shape[0], -1)
    dout2 = dc2.reshape(dc2.shape[0], -1)
    dw2 = dout2 @ cols2.T
    db2 = dc2.sum(axis=(1, 2, 3))
    dcols2 = w2m.T @ dout2
    dp1 = _col2im_cnhw(dcols2, p1.shape)

    dc1 = _pool_relu_backward(a1, p1, dp1)

    w1m = params.w1.reshape(params.w1.shape[0], -1)
    dout1 = dc1.reshape(dc1.shape[0], -1)
    dw1 = dout1 @ cols1.T
    db1 = dc1.sum(axis=(1, 2, 3))

    grads = {
        "w1": dw1.reshape(params.w1.shape),
        "b1": db1,
        "w2": dw2.reshape(params.w2.shape),
        "b2": db2,
        "w3": dw3,
        "b3": db3,
        "w4": dw4,
        "b4": db4,
    }
    return loss, grads


def predict_probs(params: ModelParams, planes: np.ndarray) -> np.ndarray:
    """Class probabilities for one (C, H, W) window, allocation-lean."""
    t = params.topology
    if planes.shape != (t.in_channels, t.in_hw, t.in_hw):
        raise ValueError(
            f"group {t.group_id} model expects "
            f"{(t.in_channels, t.in_hw, t.in_hw)} input, got {planes.shape}"
        )
    x = planes if planes.dtype == params.w1.dtype else planes.astype(
        params.w1.dtype
    )
    h = w = t.in_hw
    w1m = params.w1.reshape(t.conv1_filters, -1)
    c1 = (w1m @ _im2col_single(x)).reshape(t.conv1_filters, h, w)
    c1 += params.b1[:, None, None]
    np.maximum(c1, 0, out=c1)
    p1 = maxpool2(c1)
    w2m = params.w2.reshape(t.conv2_filters, -1)
    c2 = (w2m @ _im2col_single(p1)).reshape(t.conv2_filters, h // 2, w // 2)
    c2 += params.b2[:, None, None]
    np.maximum(c2, 0, out=c2)
    p2 = maxpool2(c2)
    h1 = params.w3 @ p2.reshape(-1) + params.b3
    np.maximum(h1, 0, out=h1)
    logits = params.w4 @ h1 + params.b4
    return softmax(logits)


@dataclass(frozen=True)
class Verdict:
    """One classifier's opinion about one track window."""

    group_id: int
    track_start_m: float
    track_end_m: float
    probabilities: tuple[float, ...]
    top_class: DefectClass
    confidence: float
    margin: float

    @classmethod
    def from_probs(
        cls,
        group_id: int,
        class_set: tuple[DefectClass, ...],
        probs: np.ndarray,
        track_start_m: float,
        track_end_m: float,
    ) -> "Verdict":
        order = np.argsort(probs)[::-1]
        top = int(order[0])
        second = float(probs[order[1]]) if len(probs) > 1 else 0.0
        return cls(
            group_id=group_id,
            track_start_m=track_start_m,
            track_end_m=track_end_m,
            probabilities=tuple(float(p) for p in probs),
            top_class=class_set[top],
            confidence=float(probs[top]),
            margin=float(probs[top]) - second,
        )


def forward(params: ModelParams, fused: FusedInput) -> Verdict:
    """Classify one fused window; pure and safe to run concurrently."""
    if fused.group_id != params.topology.group_id:
        raise ValueError(
            f"model is for group {params.topology.group_id}, input is for "
            f"group {fused.group_id}"
        )
    probs = predict_probs(params, fused.planes)
    return Verdict.from_probs(
        params.topology.group_id,
        params.topology.class_set,
        probs,
        fused.track_start_m,
        fused.track_end_m,
    )


# ---------------------------------------------------------------------------
# training


def _shift_planes(planes: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate spatially with zero fill (no wraparound)."""
    out = np.zeros_like(planes)
    h, w = planes.shape[-2:]
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[..., ys, xs] = planes[..., ys_src, xs_src]
    return out


def _dataset_to_arrays(
    dataset: Sequence, class_set: tuple[DefectClass, ...], dtype
) -> tuple[np.ndarray, np.ndarray]:
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    index = {c: i for i, c in enumerate(class_set)}
    planes_list, labels = [], []
    for sample, label in dataset:
        if label not in index:
            raise ValueError(
                f"label {label} is not in the class set {class_set}"
            )
        planes = getattr(sample, "planes", sample)
        planes_list.append(np.asarray(planes, dtype=dtype))
        labels.append(index[label])
    return np.stack(planes_list), np.asarray(labels, dtype=np.int64)


def train(
    dataset: Sequence,
    *,
    topology: Topology | None = None,
    init: ModelParams | None = None,
    lr: float = 0.05,
    epochs: int = 30,
    batch_size: int = 32,
    seed: int = 0,
    jitter_px: int = 0,
    lr_halve_every: int = 0,
    dtype=np.float32,
    log=None,
) -> ModelParams:
    """Mini-batch SGD on cross-entropy; deterministic for a given seed.

    ``dataset`` holds (FusedInput | planes, DefectClass) pairs. Passing
    ``init`` warm-starts from an existing model (the further-training
    path); otherwise ``topology`` is required. ``jitter_px`` applies random
    translations of up to that many pixels during training, which is what
    buys shift tolerance at inference time. ``lr_halve_every`` > 0 halves
    the step size every that many epochs (plain step decay); a hot start
    escapes the cold-softmax plateau quickly, the decayed tail keeps later
    epochs stable.
    """
    if init is not None:
        params = init.astype(dtype)
        topology = params.topology
        warm = True
    else:
        if topology is None:
            raise ValueError("either topology or init must be given")
        params = init_params(topology, seed=seed, dtype=dtype)
        warm = False

    x, y = _dataset_to_arrays(dataset, topology.class_set, dtype)
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    losses = []
    for epoch in range(epochs):
        step_lr = lr
        if lr_halve_every > 0:
            step_lr = lr * 0.5 ** (epoch // lr_halve_every)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            xb = x[idx]
            if jitter_px > 0:
                shifts = rng.integers(
                    -jitter_px, jitter_px + 1, size=(len(idx), 2)
                )
                xb = np.stack(
                    [
                        _shift_planes(sample, int(dy), int(dx))
                        for sample, (dy, dx) in zip(xb, shifts)
                    ]
                )
            loss, grads = loss_and_grads(params, xb, y[idx])
            epoch_loss += loss * len(idx)
            for name, grad in grads.items():
                getattr(params, name)[...] -= (step_lr * grad).astype(dtype)
        losses.append(epoch_loss / n)
        if log is not None:
            log(len(losses), losses[-1])

    params.metadata.update(
        {
            "seed": seed,
            "epochs": epochs,
            "lr": lr,
            "lr_halve_every": lr_halve_every,
            "batch_size": batch_size,
            "jitter_px": jitter_px,
            "warm_start": warm,
            "final_loss": losses[-1] if losses else None,
            "epoch_losses": losses,
        }
    )
    return params


def _batched_logits(
    params: ModelParams, x: np.ndarray, batch: int = 64
) -> np.ndarray:
    parts = []
    for lo in range(0, x.shape[0], batch):
        logits, _ = _forward_batch(params, x[lo : lo + batch], need_cache=False)
        parts.append(logits)
    return np.concatenate(parts)


def evaluate_loss(params: ModelParams, dataset: Sequence) -> float:
    """Mean cross-entropy of ``dataset`` under ``params`` (no updates)."""
    x, y = _dataset_to_arrays(
        dataset, params.topology.class_set, params.w1.dtype
    )
    logits = _batched_logits(params, x)
    zmax = logits.max(axis=1, keepdims=True)
    zs = logits - zmax
    log_probs = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(y)), y].mean())


def evaluate_accuracy(params: ModelParams, dataset: Sequence) -> float:
    x, y = _dataset_to_arrays(
        dataset, params.topology.class_set, params.w1.dtype
    )
    logits = _batched_logits(params, x)
    return float((logits.argmax(axis=1) == y).mean())


# ---------------------------------------------------------------------------
# serialization: manifest.json + little-endian float32 blobs


def save_model(params: ModelParams, model_dir: str | Path) -> None:
    """Write manifest.json plus weights.bin (concatenated LE float32)."""
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    t = params.topology
    manifest = {
        "format_version": 1,
        "group_id": t.group_id,
        "class_set": [c.value for c in t.class_set],
        "topology": {
            "in_channels": t.in_channels,
            "in_hw": t.in_hw,
            "conv1_filters": t.conv1_filters,
            "conv2_filters": t.conv2_filters,
            "hidden": t.hidden,
        },
        "arrays": [
            {"name": name, "shape": list(arr.shape)}
            for name, arr in params.arrays()
        ],
        "metadata": params.metadata,
    }
    (model_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    with open(model_dir / "weights.bin", "wb") as f:
        for _, arr in params.arrays():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(model_dir: str | Path) -> ModelParams:
    """Read a model directory; strict about shapes, order, and length."""
    model_dir = Path(model_dir)
    try:
        manifest = json.loads(
            (model_dir / "manifest.json").read_text(encoding="utf-8")
        )
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable manifest: {exc}") from exc
    try:
        group_id = manifest["group_id"]
        class_names = manifest["class_set"]
        topo = manifest["topology"]
        array_specs = manifest["arrays"]
    except KeyError as exc:
        raise ModelFormatError(f"manifest missing key {exc}") from exc

    group = group_by_id(group_id)
    expected_classes = [c.value for c in group.class_set]
    if class_names != expected_classes:
        raise ModelFormatError(
            f"class-order mismatch for group {group_id}: manifest lists "
            f"{class_names}, expected {expected_classes}"
        )
    topology = Topology(
        group_id=group_id,
        class_set=group.class_set,
        in_channels=topo["in_channels"],
        in_hw=topo["in_hw"],
        conv1_filters=topo["conv1_filters"],
        conv2_filters=topo["conv2_filters"],
        hidden=topo["hidden"],
    )
    names = [spec["name"] for spec in array_specs]
    if names != list(ARRAY_NAMES):
        raise ModelFormatError(
            f"manifest array order {names} differs from {list(ARRAY_NAMES)}"
        )
    blob = (model_dir / "weights.bin").read_bytes()
    arrays = {}
    offset = 0
    for spec in array_specs:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape)) * 4
        if offset + nbytes > len(blob):
            raise ModelFormatError(
                f"weights.bin truncated: need {offset + nbytes} bytes for "
                f"{spec['name']}, file has {len(blob)}"
            )
        arrays[spec["name"]] = np.frombuffer(
            blob, dtype="<f4", count=int(np.prod(shape)), offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise ModelFormatError(
            f"weights.bin has {len(blob) - offset} trailing bytes"
        )
    params = ModelParams(
        topology=topology, metadata=manifest.get("metadata", {}), **arrays
    )
    params.validate()
    return params
