"""From-scratch differentiable network for classifying projected tree images.

The main pipeline is: point-wise MLP (relu, 64 channels) -> 2D recurrent scan
over image rows -> max-pool -> linear softmax head.  The scan flips the rows
so the deepest tree layer is integrated first: step one runs a shared tanh
cell left-to-right over the first two rows concatenated pixel-wise, and every
later step re-runs the same cell over the previous step's output sequence
concatenated with the next row, each step from a fresh zero hidden state.
Gradients are exact; they flow along each left-to-right scan and up the row
chain through the reused output sequences.

Alternative operators behind the same interface, used for ablations:

* ``mlp``      - no scan; pool over every pixel of the MLP output.
* ``conv2d``   - one 3x3 same-padded 64-channel convolution + relu, then pool
                 over every pixel.
* ``flat_rnn`` - a single left-to-right scan over all H*W pixels in row-major
                 order, pooling over every step output.

All arithmetic is plain numpy; float64 by default so gradient checks are
meaningful, float32 available as a fast mode.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import GraphImage

HIDDEN = 64
VARIANTS = ("grid_rnn", "mlp", "conv2d", "flat_rnn")

CHECKPOINT_MAGIC = b"TGMD"
CHECKPOINT_VERSION = 1


@dataclass
class Model:
    """Parameter bundle for one operator variant.

    ``params`` preserves declaration order; that order is the checkpoint
    payload order and the order gradient reports use.
    """

    variant: str
    input_channels: int
    class_count: int
    seed: int
    params: dict[str, np.ndarray]
    pool_all_steps: bool = False  # grid_rnn: pool over every step's outputs

    @property
    def dtype(self) -> np.dtype:
        return self.params["mlp_w"].dtype


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def build_model(
    variant: str,
    input_channels: int,
    class_count: int,
    seed: int,
    pool_all_steps: bool = False,
    dtype=np.float64,
) -> Model:
    """Seeded Glorot-uniform initialization; biases zero.

    The same seed always yields bit-identical parameters.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if input_channels < 1 or class_count < 2:
        raise ValueError("need at least one input channel and two classes")
    rng = np.random.Generator(np.random.PCG64(seed))

    def glorot(shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape).astype(dtype)

    params: dict[str, np.ndarray] = {}
    params["mlp_w"] = glorot((input_channels, HIDDEN), input_channels, HIDDEN)
    params["mlp_b"] = np.zeros(HIDDEN, dtype=dtype)
    if variant == "grid_rnn":
        params["cell_wx"] = glorot((2 * HIDDEN, HIDDEN), 2 * HIDDEN, HIDDEN)
        params["cell_wh"] = glorot((HIDDEN, HIDDEN), HIDDEN, HIDDEN)
        params["cell_b"] = np.zeros(HIDDEN, dtype=dtype)
    elif variant == "flat_rnn":
        params["cell_wx"] = glorot((HIDDEN, HIDDEN), HIDDEN, HIDDEN)
        params["cell_wh"] = glorot((HIDDEN, HIDDEN), HIDDEN, HIDDEN)
        params["cell_b"] = np.zeros(HIDDEN, dtype=dtype)
    elif variant == "conv2d":
        params["conv_w"] = glorot((3, 3, HIDDEN, HIDDEN), 9 * HIDDEN, HIDDEN)
        params["conv_b"] = np.zeros(HIDDEN, dtype=dtype)
    params["head_w"] = glorot((HIDDEN, class_count), HIDDEN, class_count)
    params["head_b"] = np.zeros(class_count, dtype=dtype)
    return Model(
        variant=variant,
        input_channels=input_channels,
        class_count=class_count,
        seed=seed,
        params=params,
        pool_all_steps=pool_all_steps,
    )


def parameter_count(model: Model) -> int:
    return sum(int(p.size) for p in model.params.values())


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_pixels(image, dtype) -> np.ndarray:
    x = image.pixels if isinstance(image, GraphImage) else np.asarray(image)
    if x.ndim != 3:
        raise ValueError(f"expected an H x W x C image, got shape {x.shape}")
    return x.astype(dtype, copy=False)


def _check_input(model: Model, x: np.ndarray) -> None:
    if x.ndim != 4:
        raise ValueError(f"expected a B x H x W x C batch, got shape {x.shape}")
    if x.shape[-1] != model.input_channels:
        raise ValueError(
            f"model expects {model.input_channels} channels, image has {x.shape[-1]}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains NaN or Inf")


def _scan_from_xw(wh, xw, hs):
    """Left-to-right tanh recurrence from a zero hidden state.

    ``xw`` holds each step's preactivation without the recurrent term; the
    hidden states land in ``hs`` (shape (B, T+1, HIDDEN), hs[:, 0] = 0).
    """
    B, T, _ = xw.shape
    tmp = np.empty((B, HIDDEN), dtype=xw.dtype)
    h = hs[:, 0]
    for t in range(T):
        np.matmul(h, wh, out=tmp)
        tmp += xw[:, t]
        h = hs[:, t + 1]
        np.tanh(tmp, out=h)
    return hs


def _scan_backward_dpre(wh, hs, d_out):
    """BPTT through one scan: gradient at every step's tanh preactivation.

    ``d_out`` is the gradient on each step's output; the recurrent chain is
    accumulated right to left.
    """
    B, T, _ = d_out.shape
    dpre = np.empty((B, T, HIDDEN), dtype=d_out.dtype)
    dh = np.zeros((B, HIDDEN), dtype=d_out.dtype)
    total = np.empty((B, HIDDEN), dtype=d_out.dtype)
    wh_t = np.ascontiguousarray(wh.T)
    for t in range(T - 1, -1, -1):
        np.add(d_out[:, t], dh, out=total)
        h = hs[:, t + 1]
        dp = dpre[:, t]
        np.multiply(h, h, out=dp)
        np.subtract(1.0, dp, out=dp)
        dp *= total
        np.matmul(dp, wh_t, out=dh)
    return dpre


def _im2col3x3(x):
    """3x3 same-padded patches: (B, H, W, C) -> (B, H, W, 9, C)."""
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((B, H, W, 9, C), dtype=x.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[:, :, :, k] = xp[:, di : di + H, dj : dj + W]
            k += 1
    return cols


def _col2im3x3(dcols, H, W):
    """Adjoint of :func:`_im2col3x3`; scatters patch gradients back."""
    B = dcols.shape[0]
    C = dcols.shape[-1]
    dxp = np.zeros((B, H + 2, W + 2, C), dtype=dcols.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            dxp[:, di : di + H, dj : dj + W] += dcols[:, :, :, k]
            k += 1
    return dxp[:, 1 : H + 1, 1 : W + 1]


def forward_batch(model: Model, x: np.ndarray):
    """Class probabilities for a batch of images, plus cached activations.

    ``x`` is (B, H, W, C).  The cache holds everything the exact backward
    pass needs.
    """
    p = model.params
    x = np.asarray(x, dtype=model.dtype)
    _check_input(model, x)
    B, H, W, _ = x.shape

    mlp_pre = x @ p["mlp_w"] + p["mlp_b"]
    feat = np.maximum(mlp_pre, 0.0)
    cache = {"x": x, "mlp_pre": mlp_pre, "feat": feat, "shape": (B, H, W)}

    if model.variant == "grid_rnn":
        # the cell input is [previous step's outputs ; image row]: split the
        # input weights so all image-row preactivations are one matmul
        wx_top = p["cell_wx"][:HIDDEN]
        wx_bot = p["cell_wx"][HIDDEN:]
        wh = p["cell_wh"]
        r = np.ascontiguousarray(feat[:, ::-1])  # deepest tree layer first
        row_pre = r @ wx_bot + p["cell_b"]
        xw = r[:, 0] @ wx_top
        xw += row_pre[:, 1] if H > 1 else row_pre[:, 0]
        hs_list = [
            _scan_from_xw(wh, xw, np.zeros((B, W + 1, HIDDEN), dtype=feat.dtype))
        ]
        for u in range(2, H):
            xw = hs_list[-1][:, 1:] @ wx_top
            xw += row_pre[:, u]
            hs_list.append(
                _scan_from_xw(wh, xw, np.zeros((B, W + 1, HIDDEN), dtype=feat.dtype))
            )
        cache["r"] = r
        cache["hs_list"] = hs_list
        if model.pool_all_steps:
            pool_src = np.concatenate([hs[:, 1:] for hs in hs_list], axis=1)
        else:
            pool_src = hs_list[-1][:, 1:]
    elif model.variant == "flat_rnn":
        seq = feat.reshape(B, H * W, HIDDEN)
        xw = seq @ p["cell_wx"] + p["cell_b"]
        hs = _scan_from_xw(
            p["cell_wh"], xw, np.zeros((B, H * W + 1, HIDDEN), dtype=feat.dtype)
        )
        cache["hs_list"] = [hs]
        pool_src = hs[:, 1:]
    elif model.variant == "conv2d":
        cols = _im2col3x3(feat)
        conv_pre = cols.reshape(B, H, W, 9 * HIDDEN) @ p["conv_w"].reshape(
            9 * HIDDEN, HIDDEN
        ) + p["conv_b"]
        conv_out = np.maximum(conv_pre, 0.0)
        cache["cols"] = cols
        cache["conv_pre"] = conv_pre
        pool_src = conv_out.reshape(B, H * W, HIDDEN)
    else:  # mlp
        pool_src = feat.reshape(B, H * W, HIDDEN)

    pool_idx = pool_src.argmax(axis=1)  # (B, HIDDEN)
    pooled = np.take_along_axis(pool_src, pool_idx[:, None, :], axis=1)[:, 0]
    logits = pooled @ p["head_w"] + p["head_b"]
    probs = softmax(logits)
    cache.update(
        pool_len=pool_src.shape[1], pool_idx=pool_idx, pooled=pooled, probs=probs
    )
    return probs, cache


def forward(model: Model, image):
    """Single-image forward; returns (probabilities (K,), cache)."""
    x = _as_pixels(image, model.dtype)
    probs, cache = forward_batch(model, x[None])
    return probs[0], cache


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true labels."""
    labels = np.asarray(labels)
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, 1e-300)).mean())


def loss_and_backward_batch(model: Model, x: np.ndarray, labels):
    """Mean cross-entropy over the batch and exact parameter gradients.

    Gradients are the mean of per-sample gradients; the batched matrix
    products fix the accumulation order, so results are deterministic.
    """
    p = model.params
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != len(x):
        raise ValueError("labels must be one integer per image")
    if labels.min() < 0 or labels.max() >= model.class_count:
        raise ValueError("label out of range")
    probs, cache = forward_batch(model, np.asarray(x, dtype=model.dtype))
    B, H, W = cache["shape"]
    loss = cross_entropy(probs, labels)

    grads = {name: np.zeros_like(arr) for name, arr in p.items()}
    d_logits = probs.copy()
    d_logits[np.arange(B), labels] -= 1.0
    d_logits /= B

    grads["head_w"] = cache["pooled"].T @ d_logits
    grads["head_b"] = d_logits.sum(axis=0)
    d_pooled = d_logits @ p["head_w"].T

    d_pool_src = np.zeros((B, cache["pool_len"], HIDDEN), dtype=model.dtype)
    rows = np.arange(B)[:, None]
    chans = np.arange(HIDDEN)[None, :]
    d_pool_src[rows, cache["pool_idx"], chans] += d_pooled

    if model.variant == "grid_rnn":
        wx_top = p["cell_wx"][:HIDDEN]
        wx_bot = p["cell_wx"][HIDDEN:]
        wh = p["cell_wh"]
        r, hs_list = cache["r"], cache["hs_list"]
        steps = len(hs_list)
        d_outs = [np.zeros_like(hs[:, 1:]) for hs in hs_list]
        if model.pool_all_steps:
            for s in range(steps):
                d_outs[s] += d_pool_src[:, s * W : (s + 1) * W]
        else:
            d_outs[-1] += d_pool_src
        d_wx_top = np.zeros_like(wx_top)
        d_wh = np.zeros_like(wh)
        d_row_pre = np.zeros((B, H, W, HIDDEN), dtype=model.dtype)
        d_r = np.zeros((B, H, W, HIDDEN), dtype=model.dtype)
        for s in range(steps - 1, -1, -1):
            dpre = _scan_backward_dpre(wh, hs_list[s], d_outs[s])
            flat_dpre = dpre.reshape(-1, HIDDEN)
            d_wh += hs_list[s][:, :-1].reshape(-1, HIDDEN).T @ flat_dpre
            if s == 0:
                d_wx_top += r[:, 0].reshape(-1, HIDDEN).T @ flat_dpre
                d_r[:, 0] += dpre @ wx_top.T
                d_row_pre[:, 1 if H > 1 else 0] += dpre
            else:
                prev = hs_list[s - 1][:, 1:]
                d_wx_top += prev.reshape(-1, HIDDEN).T @ flat_dpre
                d_outs[s - 1] += dpre @ wx_top.T
                d_row_pre[:, s + 1] += dpre
        d_r += d_row_pre @ wx_bot.T
        grads["cell_wx"][:HIDDEN] = d_wx_top
        grads["cell_wx"][HIDDEN:] = (
            r.reshape(-1, HIDDEN).T @ d_row_pre.reshape(-1, HIDDEN)
        )
        grads["cell_wh"] = d_wh
        grads["cell_b"] = d_row_pre.sum(axis=(0, 1, 2))
        d_feat = d_r[:, ::-1]
    elif model.variant == "flat_rnn":
        hs = cache["hs_list"][0]
        dpre = _scan_backward_dpre(p["cell_wh"], hs, d_pool_src)
        flat_dpre = dpre.reshape(-1, HIDDEN)
        seq = cache["feat"].reshape(B, H * W, HIDDEN)
        grads["cell_wx"] = seq.reshape(-1, HIDDEN).T @ flat_dpre
        grads["cell_wh"] = hs[:, :-1].reshape(-1, HIDDEN).T @ flat_dpre
        grads["cell_b"] = dpre.sum(axis=(0, 1))
        d_feat = (dpre @ p["cell_wx"].T).reshape(B, H, W, HIDDEN)
    elif model.variant == "conv2d":
        d_conv_out = d_pool_src.reshape(B, H, W, HIDDEN)
        d_conv_pre = d_conv_out * (cache["conv_pre"] > 0)
        cols2d = cache["cols"].reshape(-1, 9 * HIDDEN)
        grads["conv_w"] = (cols2d.T @ d_conv_pre.reshape(-1, HIDDEN)).reshape(
            3, 3, HIDDEN, HIDDEN
        )
        grads["conv_b"] = d_conv_pre.sum(axis=(0, 1, 2))
        d_cols = d_conv_pre.reshape(B, H, W, HIDDEN) @ p["conv_w"].reshape(
            9 * HIDDEN, HIDDEN
        ).T
        d_feat = _col2im3x3(d_cols.reshape(B, H, W, 9, HIDDEN), H, W)
    else:  # mlp
        d_feat = d_pool_src.reshape(B, H, W, HIDDEN)

    d_mlp_pre = d_feat * (cache["mlp_pre"] > 0)
    grads["mlp_w"] = (
        cache["x"].reshape(-1, model.input_channels).T
        @ d_mlp_pre.reshape(-1, HIDDEN)
    )
    grads["mlp_b"] = d_mlp_pre.sum(axis=(0, 1, 2))
    return loss, grads


def loss_and_backward(model: Model, image, label: int):
    """Single-image loss (-log p[label]) and exact gradients."""
    x = _as_pixels(image, model.dtype)
    return loss_and_backward_batch(model, x[None], np.array([label]))


def loss_batch(model: Model, x: np.ndarray, labels) -> float:
    """Forward-only mean cross-entropy (used by finite differences)."""
    probs, _ = forward_batch(model, np.asarray(x, dtype=model.dtype))
    return cross_entropy(probs, np.asarray(labels))


def adam_init(model: Model) -> AdamState:
    return AdamState(
        step=0,
        m={k: np.zeros_like(v) for k, v in model.params.items()},
        v={k: np.zeros_like(v) for k, v in model.params.items()},
    )


def adam_step(
    model: Model,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Model:
    """One bias-corrected Adam update, applied in place; returns the model."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, param in model.params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return model


@dataclass
class GradCheckReport:
    """Per-block worst relative error between analytic and numeric gradients."""

    per_block: dict[str, float]
    eps: float
    tol: float
    entries_checked: int

    @property
    def max_rel_err(self) -> float:
        return max(self.per_block.values())

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(
    model: Model,
    image,
    label: int,
    eps: float = 1e-6,
    tol: float = 1e-4,
    entries_per_block: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Checks every parameter entry unless ``entries_per_block`` caps the count
    (a seeded subset is then drawn per block).  Relative error uses a small
    denominator floor so finite-difference noise on near-zero gradients is
    measured absolutely.  Requires float64 parameters.

    The default step is small because the loss is only piecewise smooth: a
    larger step can straddle a relu kink or flip a max-pool winner, in which
    case the difference quotient measures a blend of two branches rather
    than the derivative.  At 1e-6 the float64 difference quotient still has
    ~9 significant digits, plenty for the 1e-4 tolerance.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if model.dtype != np.float64:
        raise ValueError("gradient checking requires a float64 model")
    x = _as_pixels(image, model.dtype)[None]
    labels = np.array([label])
    _, grads = loss_and_backward_batch(model, x, labels)
    rng = np.random.Generator(np.random.PCG64(seed))
    report = {}
    checked = 0
    for name, param in model.params.items():
        flat = param.reshape(-1)
        gflat = grads[name].reshape(-1)
        if entries_per_block is None or flat.size <= entries_per_block:
            indices = range(flat.size)
        else:
            indices = np.sort(rng.choice(flat.size, entries_per_block, replace=False))
        worst = 0.0
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_batch(model, x, labels)
            flat[i] = orig - eps
            lm = loss_batch(model, x, labels)
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * eps)
            analytic = gflat[i]
            rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-3)
            worst = max(worst, rel)
            checked += 1
        report[name] = worst
    return GradCheckReport(per_block=report, eps=eps, tol=tol, entries_checked=checked)


def save_model(model: Model, path: str) -> None:
    """Write a flat binary checkpoint.

    Layout: magic ``TGMD``, u32 version, u32 JSON header length, JSON header
    (variant, channels, classes, seed, pooling flag, parameter names and
    shapes in declaration order), then all parameters as little-endian
    float64 in that order.
    """
    header = {
        "variant": model.variant,
        "input_channels": model.input_channels,
        "class_count": model.class_count,
        "seed": model.seed,
        "pool_all_steps": model.pool_all_steps,
        "params": [[name, list(arr.shape)] for name, arr in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for arr in model.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: str) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version mismatch: {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        params = {}
        for name, shape in header["params"]:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
            params[name] = arr
        if fh.read(1):
            raise ValueError("trailing bytes in checkpoint")
    return Model(
        variant=header["variant"],
        input_channels=header["input_channels"],
        class_count=header["class_count"],
        seed=header["seed"],
        params=params,
        pool_all_steps=header["pool_all_steps"],
    )
