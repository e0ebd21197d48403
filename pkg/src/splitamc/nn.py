"""Minimal block-structured CNN with split execution at a cut point.

The network is 4 feature blocks (3x3 conv, stride 1, pad 1 -> ReLU -> 2x2
average pool, stride 2; the pool is skipped once the spatial size reaches 1)
with channel widths (8, 16, 32, 32) from one input channel, followed by
flatten -> dense -> 3 logits. Everything runs in float64 on a single flat
parameter vector, which keeps split/monolithic comparisons and
finite-difference checks tight.

A cut after block c (c in {1, 2, 3}) partitions the flat vector into a
client-held lower segment and a server-held upper segment. The client-side
compute share of a cut is the fraction of multiply-accumulates performed by
the lower segment.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_CHANNELS = (8, 16, 32, 32)
NUM_CLASSES = 3
LOSS_CLAMP = 1e-12  # floor on log arguments; channel noise can zero out y_hat


class MissingForwardContext(RuntimeError):
    """backward was called without a matching forward pass."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | relu | pool | flatten | dense
    block: int  # 1-based feature-block index, 0 for the head
    in_shape: tuple  # (C, H, W) or (features,)
    out_shape: tuple
    w_shape: tuple | None
    b_shape: tuple | None
    param_offset: int
    param_count: int
    macs: int  # multiply-accumulates per sample (conv/dense only)


def layer_plan(grid: int, channels=DEFAULT_CHANNELS, num_classes: int = NUM_CLASSES):
    """Analytic layer-by-layer plan: shapes, parameter offsets, MAC counts."""
    if grid < 8:
        raise ValueError("grid must be >= 8")
    specs = []
    offset = 0
    c_in, s = 1, grid
    for block, c_out in enumerate(channels, start=1):
        w_n = c_out * c_in * 9
        specs.append(
            LayerSpec(
                "conv", block, (c_in, s, s), (c_out, s, s),
                (c_out, c_in, 3, 3), (c_out,), offset, w_n + c_out,
                c_out * s * s * c_in * 9,
            )
        )
        offset += w_n + c_out
        specs.append(LayerSpec("relu", block, (c_out, s, s), (c_out, s, s), None, None, offset, 0, 0))
        s_out = s // 2 if s >= 2 else s
        specs.append(LayerSpec("pool", block, (c_out, s, s), (c_out, s_out, s_out), None, None, offset, 0, 0))
        c_in, s = c_out, s_out
    feats = c_in * s * s
    specs.append(LayerSpec("flatten", 0, (c_in, s, s), (feats,), None, None, offset, 0, 0))
    specs.append(
        LayerSpec(
            "dense", 0, (feats,), (num_classes,),
            (feats, num_classes), (num_classes,), offset,
            feats * num_classes + num_classes, feats * num_classes,
        )
    )
    return specs


def param_count(plan) -> int:
    return sum(s.param_count for s in plan)


def cut_layer_index(plan, cut: int) -> int:
    """Index of the first upper-segment layer for a cut after block `cut`."""
    n_blocks = max(s.block for s in plan)
    if not 1 <= cut <= n_blocks - 1:
        raise ValueError(f"cut must be in 1..{n_blocks - 1}, got {cut}")
    for i, s in enumerate(plan):
        if s.block == cut and s.kind == "pool":
            return i + 1
    raise AssertionError("plan has no pool layer for that block")


def param_split_offset(plan, cut: int) -> int:
    """Offset in the flat parameter vector where the upper segment starts."""
    idx = cut_layer_index(plan, cut)
    for s in plan[idx:]:
        if s.param_count:
            return s.param_offset
    return param_count(plan)


def smashed_shape(plan, cut: int) -> tuple:
    """(C, H, W) of the cut-layer activation for one sample."""
    return plan[cut_layer_index(plan, cut) - 1].out_shape


def smashed_elems(plan, cut: int) -> int:
    return int(np.prod(smashed_shape(plan, cut)))


def compute_share(plan, cut: int) -> float:
    """Client-side fraction of total multiply-accumulates for a cut."""
    idx = cut_layer_index(plan, cut)
    lower = sum(s.macs for s in plan[:idx])
    total = sum(s.macs for s in plan)
    return lower / total


# ---------------------------------------------------------------------------
# layers


def _im2col(x: np.ndarray) -> np.ndarray:
    # 3x3 windows with zero padding 1; rows are (b, i, j), cols are (c, u, v)
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * 9)


class _Conv:
    def __init__(self, w, b):
        self.w, self.b = w, b

    def forward(self, x):
        b, c, h, w = x.shape
        cout = self.w.shape[0]
        cols = _im2col(x)
        y = cols @ self.w.reshape(cout, c * 9).T + self.b
        return y.reshape(b, h, w, cout).transpose(0, 3, 1, 2), (cols, x.shape)

    def backward(self, dy, cache):
        cols, (b, c, h, w) = cache
        cout = self.w.shape[0]
        dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, cout)
        dw = (cols.T @ dy2).T.reshape(self.w.shape)
        db = dy2.sum(axis=0)
        wflip = self.w[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(cout * 9, c)
        dx = (_im2col(dy) @ wflip).reshape(b, h, w, c).transpose(0, 3, 1, 2)
        return dx, (dw, db)


class _ReLU:
    def forward(self, x):
        return np.maximum(x, 0.0), x > 0

    def backward(self, dy, mask):
        return dy * mask, None


class _AvgPool:
    def forward(self, x):
        b, c, h, w = x.shape
        if h < 2 or w < 2:
            return x, None  # spatial size exhausted; identity
        ho, wo = h // 2, w // 2
        y = x[:, :, : 2 * ho, : 2 * wo].reshape(b, c, ho, 2, wo, 2).mean(axis=(3, 5))
        return y, (h, w)

    def backward(self, dy, cache):
        if cache is None:
            return dy, None
        h, w = cache
        b, c, ho, wo = dy.shape
        dx = np.zeros((b, c, h, w))
        dx[:, :, : 2 * ho, : 2 * wo] = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25
        return dx, None


class _Flatten:
    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, shape):
        return dy.reshape(shape), None


class _Dense:
    def __init__(self, w, b):
        self.w, self.b = w, b

    def forward(self, x):
        return x @ self.w + self.b, x

    def backward(self, dy, x):
        return dy @ self.w.T, (x.T @ dy, dy.sum(axis=0))


# ---------------------------------------------------------------------------
# network


class BlockNet:
    """The full (unsplit) network over a single flat float64 parameter vector."""

    def __init__(self, grid: int, channels=DEFAULT_CHANNELS, num_classes: int = NUM_CLASSES, seed: int = 0):
        self.grid = grid
        self.channels = tuple(channels)
        self.num_classes = num_classes
        self.init_seed = seed
        self.plan = layer_plan(grid, channels, num_classes)
        self.theta = np.zeros(param_count(self.plan))
        self.layers = []
        for spec in self.plan:
            if spec.kind in ("conv", "dense"):
                w_n = int(np.prod(spec.w_shape))
                w = self.theta[spec.param_offset : spec.param_offset + w_n].reshape(spec.w_shape)
                b = self.theta[spec.param_offset + w_n : spec.param_offset + spec.param_count]
                self.layers.append(_Conv(w, b) if spec.kind == "conv" else _Dense(w, b))
            else:
                self.layers.append({"relu": _ReLU, "pool": _AvgPool, "flatten": _Flatten}[spec.kind]())
        self._init_params(seed)

    def _init_params(self, seed: int):
        # uniform in +-sqrt(1/fan_in), weights then bias, layer order
        rng = np.random.default_rng(seed)
        for spec, layer in zip(self.plan, self.layers):
            if spec.param_count == 0:
                continue
            fan_in = spec.in_shape[0] * 9 if spec.kind == "conv" else spec.in_shape[0]
            lim = math.sqrt(1.0 / fan_in)
            layer.w[...] = rng.uniform(-lim, lim, spec.w_shape)
            layer.b[...] = rng.uniform(-lim, lim, spec.b_shape)

    # -- parameter access ---------------------------------------------------

    def get_params(self) -> np.ndarray:
        return self.theta.copy()

    def set_params(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != self.theta.shape:
            raise ValueError(f"expected {self.theta.size} parameters, got {vec.size}")
        self.theta[...] = vec

    def apply_gradient(self, grad: np.ndarray, eta: float, lo: int = 0, hi: int | None = None):
        hi = self.theta.size if hi is None else hi
        if grad.shape != (hi - lo,):
            raise ValueError("gradient length does not match the addressed segment")
        self.theta[lo:hi] -= eta * grad

    # -- execution ----------------------------------------------------------

    def check_input(self, x: np.ndarray):
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.grid or x.shape[3] != self.grid:
            raise ValueError(f"expected input of shape [B, 1, {self.grid}, {self.grid}], got {x.shape}")

    def forward_range(self, x, lo: int, hi: int):
        caches = []
        for layer in self.layers[lo:hi]:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward_range(self, dy, caches, lo: int, hi: int):
        """Returns (d_input, flat gradient for parameters of layers[lo:hi])."""
        off_lo = self.plan[lo].param_offset
        off_hi = self.plan[hi].param_offset if hi < len(self.plan) else self.theta.size
        grad = np.zeros(off_hi - off_lo)
        for i in range(hi - 1, lo - 1, -1):
            dy, dparams = self.layers[i].backward(dy, caches[i - lo])
            if dparams is not None:
                spec = self.plan[i]
                w_n = int(np.prod(spec.w_shape))
                base = spec.param_offset - off_lo
                grad[base : base + w_n] = dparams[0].ravel()
                grad[base + w_n : base + spec.param_count] = dparams[1]
        return dy, grad

    def forward_logits(self, x):
        self.check_input(x)
        return self.forward_range(np.asarray(x, dtype=np.float64), 0, len(self.layers))

    def predict_proba(self, x) -> np.ndarray:
        logits, _ = self.forward_logits(x)
        return softmax(logits)


# ---------------------------------------------------------------------------
# loss


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Batch-mean cross entropy with the 1/d_y class-dimension factor.

    Log arguments are clamped at LOSS_CLAMP so the loss stays finite when a
    true-class probability collapses to numerical zero.
    """
    if y_hat.shape != y.shape or y_hat.ndim != 2:
        raise ValueError("y_hat and one-hot y must share shape [B, classes]")
    d_y = y.shape[1]
    per_sample = -(y * np.log(np.maximum(y_hat, LOSS_CLAMP))).sum(axis=1) / d_y
    return float(per_sample.mean())


def cross_entropy_grad_logits(probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d(cross_entropy)/d(logits) for softmax outputs (clamp inactive)."""
    b, d_y = y.shape
    return (probs - y) / (b * d_y)


def one_hot(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


def sgd_step(params: np.ndarray, grads: np.ndarray, eta: float) -> np.ndarray:
    if params.shape != grads.shape:
        raise ValueError("params and grads must have equal length")
    return params - eta * grads


def weighted_average(vectors, weights) -> np.ndarray:
    """Convex combination of parameter vectors with weights proportional to `weights`."""
    weights = np.asarray(weights, dtype=np.float64)
    fracs = weights / weights.sum()
    out = np.zeros_like(np.asarray(vectors[0], dtype=np.float64))
    for frac, vec in zip(fracs, vectors):
        out += frac * np.asarray(vec, dtype=np.float64)
    return out


# ---------------------------------------------------------------------------
# split execution


@dataclass
class SplitGrads:
    g_wc: np.ndarray
    g_ws: np.ndarray
    g_sbar: np.ndarray


class SplitModel:
    """A BlockNet split after feature block `cut` into client/server segments."""

    def __init__(self, net: BlockNet, cut: int):
        self.net = net
        self.cut = cut
        self.boundary = cut_layer_index(net.plan, cut)
        self.split_offset = param_split_offset(net.plan, cut)
        self.compute_share = compute_share(net.plan, cut)
        self._lower_cache = None
        self._upper_cache = None
        self._probs = None

    # -- segment parameter access --------------------------------------------

    def get_lower(self) -> np.ndarray:
        return self.net.theta[: self.split_offset].copy()

    def set_lower(self, vec: np.ndarray):
        if vec.shape != (self.split_offset,):
            raise ValueError("lower-segment length mismatch")
        self.net.theta[: self.split_offset] = vec

    def get_upper(self) -> np.ndarray:
        return self.net.theta[self.split_offset :].copy()

    def set_upper(self, vec: np.ndarray):
        if vec.shape != (self.net.theta.size - self.split_offset,):
            raise ValueError("upper-segment length mismatch")
        self.net.theta[self.split_offset :] = vec

    # -- split execution -----------------------------------------------------

    def forward_lower(self, x) -> np.ndarray:
        self.net.check_input(x)
        s, self._lower_cache = self.net.forward_range(
            np.asarray(x, dtype=np.float64), 0, self.boundary
        )
        return s

    def forward_upper(self, s_bar) -> np.ndarray:
        expected = smashed_shape(self.net.plan, self.cut)
        if tuple(s_bar.shape[1:]) != expected:
            raise ValueError(f"expected smashed shape [B, {expected}], got {s_bar.shape}")
        logits, self._upper_cache = self.net.forward_range(
            s_bar, self.boundary, len(self.net.layers)
        )
        self._probs = softmax(logits)
        return self._probs

    def backward_upper(self, y: np.ndarray):
        """Server-side gradients: returns (g_ws, g_sbar)."""
        if self._upper_cache is None:
            raise MissingForwardContext("forward_upper must run before backward_upper")
        dlogits = cross_entropy_grad_logits(self._probs, y)
        g_sbar, g_ws = self.net.backward_range(
            dlogits, self._upper_cache, self.boundary, len(self.net.layers)
        )
        return g_ws, g_sbar

    def backward_lower(self, g_smashed: np.ndarray) -> np.ndarray:
        """Client-side gradient from the (possibly h-scaled, noisy) cut gradient."""
        if self._lower_cache is None:
            raise MissingForwardContext("forward_lower must run before backward_lower")
        _, g_wc = self.net.backward_range(g_smashed, self._lower_cache, 0, self.boundary)
        return g_wc

    def backward(self, y: np.ndarray, h: float = 1.0) -> SplitGrads:
        """Full split backward pass; the cut gradient chains through the
        multiplicative fading factor h of the uplink realization."""
        g_ws, g_sbar = self.backward_upper(y)
        g_wc = self.backward_lower(h * g_sbar)
        return SplitGrads(g_wc=g_wc, g_ws=g_ws, g_sbar=g_sbar)

    def apply_gradients(self, g_wc: np.ndarray | None, g_ws: np.ndarray | None, eta: float):
        if g_wc is not None:
            self.net.apply_gradient(g_wc, eta, 0, self.split_offset)
        if g_ws is not None:
            self.net.apply_gradient(g_ws, eta, self.split_offset, self.net.theta.size)


def split_at(net: BlockNet, cut: int) -> SplitModel:
    return SplitModel(net, cut)


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line + little-endian float64 parameter blob


def save_model(net: BlockNet, path, cut: int | None = None, steps: int = 0):
    header = {
        "format": 1,
        "grid": net.grid,
        "channels": list(net.channels),
        "num_classes": net.num_classes,
        "init_seed": net.init_seed,
        "cut": cut,
        "steps": steps,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(net.theta.astype("<f8").tobytes())


def load_model(path) -> tuple[BlockNet, dict]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode())
    if header.get("format") != 1:
        raise ValueError(f"unsupported checkpoint format: {header.get('format')!r}")
    net = BlockNet(
        header["grid"], tuple(header["channels"]), header["num_classes"],
        seed=header.get("init_seed", 0),
    )
    blob = np.frombuffer(raw[nl + 1 :], dtype="<f8")
    net.set_params(blob)
    return net, header
