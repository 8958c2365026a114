"""Small convolutional network in NumPy: forward, backprop, SGD training.

Every layer is computed as ``z = lower(x) @ W_flat + b`` where ``lower`` is
the im2col view of the layer input (identity for dense layers) and
``W_flat`` is the crossbar-shaped matrix (rows = flattened kernel,
cols = output maps/neurons). The matrix product is injectable so the same
forward pass can run on mapped crossbars.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, NumericError

PARAMS_FORMAT = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "dense"
    n_in: int  # input channels or features
    n_out: int  # output maps or neurons
    kernel: int = 1
    pool: int = 1
    activation: str = "relu"  # "relu" | "none"
    softmax: bool = False

    def __post_init__(self):
        if self.kind not in ("conv", "dense"):
            raise ContractError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ("relu", "none"):
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.kind == "dense" and (self.kernel != 1 or self.pool != 1):
            raise ContractError("dense layers take no kernel or pooling")
        if self.kind == "conv" and self.kernel % 2 == 0:
            raise ContractError("conv kernels must be odd-sized ('same' padding)")

    @property
    def weight_shape(self):
        if self.kind == "conv":
            return (self.n_out, self.n_in, self.kernel, self.kernel)
        return (self.n_out, self.n_in)


@dataclass
class Network:
    specs: list[LayerSpec]
    input_shape: tuple  # (C, H, W) for conv-first nets or (F,)
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        shape = self.input_shape
        for k, spec in enumerate(self.specs):
            if spec.kind == "conv":
                if len(shape) != 3 or shape[0] != spec.n_in:
                    raise ContractError(f"layer {k}: conv expects ({spec.n_in}, H, W), got {shape}")
                c, h, w = shape
                if h % spec.pool or w % spec.pool:
                    raise ContractError(f"layer {k}: {h}x{w} maps not divisible by pool {spec.pool}")
                shape = (spec.n_out, h // spec.pool, w // spec.pool)
            else:
                if int(np.prod(shape)) != spec.n_in:
                    raise ContractError(f"layer {k}: dense expects {spec.n_in} inputs, got {shape}")
                shape = (spec.n_out,)
        if self.specs and not self.specs[-1].softmax:
            raise ContractError("final layer must carry the softmax cross-entropy head")
        if self.weights:
            for k, (spec, w, b) in enumerate(zip(self.specs, self.weights, self.biases)):
                if w.shape != spec.weight_shape or b.shape != (spec.n_out,):
                    raise ContractError(f"layer {k}: parameter shapes do not match spec")
                if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                    raise NumericError(f"layer {k}: non-finite parameters")

    @property
    def n_layers(self) -> int:
        return len(self.specs)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def init(self, seed: int) -> "Network":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A17]))
        self.weights, self.biases = [], []
        for spec in self.specs:
            fan_in = int(np.prod(spec.weight_shape[1:]))
            self.weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), spec.weight_shape))
            self.biases.append(np.zeros(spec.n_out))
        return self

    def copy(self) -> "Network":
        return Network(list(self.specs), self.input_shape,
                       [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat_weight(self, k: int) -> np.ndarray:
        w = self.weights[k]
        return w.reshape(w.shape[0], -1).T

    def save(self, path) -> None:
        meta = {"format": PARAMS_FORMAT, "input_shape": list(self.input_shape),
                "specs": [asdict(s) for s in self.specs]}
        arrays = {f"w{k}": w for k, w in enumerate(self.weights)}
        arrays.update({f"b{k}": b for k, b in enumerate(self.biases)})
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "Network":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != PARAMS_FORMAT:
                raise ContractError(f"{path}: unsupported params format {meta.get('format')}")
            specs = [LayerSpec(**s) for s in meta["specs"]]
            weights = [data[f"w{k}"] for k in range(len(specs))]
            biases = [data[f"b{k}"] for k in range(len(specs))]
        return cls(specs, tuple(meta["input_shape"]), weights, biases)


def desk_network(n_classes: int = 10, conv1: int = 16, conv2: int = 32, hidden: int = 32,
                 input_shape=(1, 8, 8)) -> Network:
    """Two conv layers and two dense layers sized for 8x8 digit images."""
    c, h, w = input_shape
    specs = [
        LayerSpec("conv", c, conv1, kernel=3, pool=2),
        LayerSpec("conv", conv1, conv2, kernel=3, pool=2),
        LayerSpec("dense", conv2 * (h // 4) * (w // 4), hidden),
        LayerSpec("dense", hidden, n_classes, activation="none", softmax=True),
    ]
    return Network(specs, input_shape)


# -- lowering ---------------------------------------------------------------

def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (N, H*W, C*k*k) with 'same' zero padding.

    Row order within a patch is channel-major, then kernel row, then kernel
    column, matching ``W.reshape(out, -1)``.
    """
    n, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, H, W, k, k
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, h * w, c * k * k)


def col2im(cols: np.ndarray, shape, k: int) -> np.ndarray:
    n, c, h, w = shape
    p = k // 2
    patches = cols.reshape(n, h, w, c, k, k)
    out = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for a in range(k):
        for b in range(k):
            out[:, :, a:a + h, b:b + w] += patches[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    return out[:, :, p:p + h, p:p + w]


def _pool_forward(a, s):
    n, c, h, w = a.shape
    win = a.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // s, w // s, s * s)
    idx = win.argmax(axis=-1)
    return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], idx


def _pool_backward(d_out, idx, s, shape):
    n, c, h, w = shape
    win = np.zeros((n, c, h // s, w // s, s * s))
    np.put_along_axis(win, idx[..., None], d_out[..., None], axis=-1)
    return win.reshape(n, c, h // s, w // s, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


# -- forward / backward -----------------------------------------------------

Mvm = Callable[[int, np.ndarray], np.ndarray]


@dataclass
class LayerCache:
    x: np.ndarray  # layer input
    cols: np.ndarray  # lowered input, (N, P, rows)
    z: np.ndarray  # pre-activation, (N, P, n_out)
    a: np.ndarray  # post-activation in map layout, before pooling
    pool_idx: np.ndarray | None
    out: np.ndarray


@dataclass
class Activations:
    layers: list[LayerCache]
    scores: np.ndarray  # logits, (N, classes)

    @property
    def probabilities(self) -> np.ndarray:
        return softmax(self.scores)


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def lower(net: Network, k: int, x: np.ndarray) -> np.ndarray:
    spec = net.specs[k]
    if spec.kind == "conv":
        return im2col(x, spec.kernel)
    return x.reshape(x.shape[0], 1, -1)


def forward(net: Network, x, mvm: Mvm | None = None) -> Activations:
    """Run a batch ``x`` of shape (N, *input_shape); ``mvm(k, cols)`` may
    replace the digital product ``cols @ W_flat`` of layer ``k``."""
    x = np.asarray(x, dtype=float)
    if x.shape[1:] != net.input_shape:
        if x.shape == net.input_shape:
            x = x[None]
        else:
            raise ContractError(f"input shape {x.shape} does not match network input {net.input_shape}")
    caches = []
    for k, spec in enumerate(net.specs):
        cols = lower(net, k, x)
        prod = cols @ net.flat_weight(k) if mvm is None else mvm(k, cols)
        z = prod + net.biases[k]
        a = np.maximum(z, 0.0) if spec.activation == "relu" else z
        pool_idx = None
        if spec.kind == "conv":
            n, _, h, w = x.shape
            a = a.transpose(0, 2, 1).reshape(n, spec.n_out, h, w)
            out = a
            if spec.pool > 1:
                out, pool_idx = _pool_forward(a, spec.pool)
        else:
            a = a[:, 0, :]
            out = a
        caches.append(LayerCache(x, cols, z, a, pool_idx, out))
        x = out
    return Activations(caches, x.reshape(x.shape[0], -1))


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    # dLoss_n / dz for every layer: (N, P, n_out); P = 1 for dense layers
    outputs: list[np.ndarray]


def backward(net: Network, acts: Activations, labels) -> Gradients:
    """Gradients of the summed per-sample cross-entropy.

    ``outputs[k]`` holds each sample's own loss gradient with respect to the
    layer's pre-activation outputs (the column currents of a crossbar).
    """
    if acts is None or len(acts.layers) != net.n_layers:
        raise ContractError("backward needs the activations of a matching forward call")
    labels = np.atleast_1d(np.asarray(labels))
    n = acts.scores.shape[0]
    if labels.shape != (n,):
        raise ContractError(f"{labels.shape[0]} labels for {n} samples")
    d = acts.probabilities
    d[np.arange(n), labels] -= 1.0
    gw, gb, deltas = [None] * net.n_layers, [None] * net.n_layers, [None] * net.n_layers
    d_out = d
    for k in range(net.n_layers - 1, -1, -1):
        spec, cache = net.specs[k], acts.layers[k]
        if spec.kind == "conv":
            d_a = d_out.reshape(cache.out.shape)
            if spec.pool > 1:
                d_a = _pool_backward(d_a, cache.pool_idx, spec.pool, cache.a.shape)
            dz = d_a.reshape(n, spec.n_out, -1).transpose(0, 2, 1)
        else:
            dz = d_out.reshape(n, 1, spec.n_out)
        if spec.activation == "relu":
            dz = dz * (cache.z > 0)
        deltas[k] = dz
        wf = net.flat_weight(k)
        gflat = np.einsum("npr,npo->ro", cache.cols, dz)
        gw[k] = gflat.T.reshape(spec.weight_shape)
        gb[k] = dz.sum(axis=(0, 1))
        if k:
            dcols = dz @ wf.T
            if spec.kind == "conv":
                d_out = col2im(dcols, cache.x.shape, spec.kernel)
            else:
                d_out = dcols.reshape(cache.x.shape)
    return Gradients(gw, gb, deltas)


def cross_entropy(scores, labels) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return -logp[np.arange(len(labels)), labels]


# -- data -------------------------------------------------------------------

DATASET_FORMAT = 1


@dataclass
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray
    split: str
    n_classes: int = 10

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise ContractError("inputs and labels differ in length")
        if self.split not in ("train", "validation", "test"):
            raise ContractError(f"unknown split {self.split!r}")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ContractError("labels outside [0, n_classes)")
        if self.x.size and (self.x.min() < 0 or self.x.max() > 1):
            raise ContractError("inputs must be normalized to [0, 1]")

    def __len__(self):
        return self.y.shape[0]

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.x[index], self.y[index], self.split, self.n_classes)

    def save(self, path) -> None:
        header = {"format": DATASET_FORMAT, "dims": list(self.x.shape[1:]),
                  "count": len(self), "split": self.split, "n_classes": self.n_classes}
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header)), x=self.x, y=self.y)

    @classmethod
    def load(cls, path) -> "LabeledDataset":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("format") != DATASET_FORMAT:
                raise ContractError(f"{path}: unsupported dataset format")
            x, y = data["x"], data["y"]
        if list(x.shape[1:]) != header["dims"] or len(y) != header["count"]:
            raise ContractError(f"{path}: header does not match payload")
        return cls(x, y, header["split"], header["n_classes"])


def load_digits_splits(seed: int = 0, n_train: int = 1000, n_val: int = 300):
    """8x8 handwritten digits (bundled with scikit-learn) as three splits."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    x = (digits.images / 16.0)[:, None, :, :]
    y = digits.target
    order = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A])).permutation(len(y))
    tr, va, te = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
    if len(te) == 0:
        raise ContractError("train + validation sizes leave no test data")
    return (LabeledDataset(x[tr], y[tr], "train"), LabeledDataset(x[va], y[va], "validation"),
            LabeledDataset(x[te], y[te], "test"))


# -- training / evaluation --------------------------------------------------

@dataclass
class TrainResult:
    network: Network
    losses: list[float]
    train_accuracy: float


def train(net: Network, data: LabeledDataset, learning_rate: float, epochs: int,
          batch_size: int, seed: int) -> TrainResult:
    """Plain mini-batch SGD; deterministic for a given seed."""
    if len(data) == 0:
        raise ContractError("training set is empty")
    net = net.copy()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A5A]))
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), batch_size):
            idx = order[start:start + batch_size]
            acts = forward(net, data.x[idx])
            total += float(cross_entropy(acts.scores, data.y[idx]).sum())
            grads = backward(net, acts, data.y[idx])
            for k in range(net.n_layers):
                net.weights[k] -= learning_rate / len(idx) * grads.weights[k]
                net.biases[k] -= learning_rate / len(idx) * grads.biases[k]
        mean_loss = total / len(data)
        if not np.isfinite(mean_loss):
            raise NumericError(f"training diverged (loss {mean_loss}) after {len(losses)} epochs")
        losses.append(mean_loss)
    return TrainResult(net, losses, evaluate_accuracy(net, data))


def predict(net: Network, x, batch: int = 512) -> np.ndarray:
    return np.concatenate([forward(net, x[s:s + batch]).scores for s in range(0, len(x), batch)])


def evaluate_accuracy(net: Network, data: LabeledDataset,
                      forward_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None) -> float:
    """Fraction of argmax-correct predictions.

    ``forward_fn(x, index)`` returns class scores; ``index`` gives each
    sample's position in the split so noisy forwards can seed per sample.
    """
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty split")
    if forward_fn is None:
        scores = predict(net, data.x)
    else:
        scores = forward_fn(data.x, np.arange(len(data)))
    return float(np.mean(np.argmax(scores, axis=1) == data.y))

