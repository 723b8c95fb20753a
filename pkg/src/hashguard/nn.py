"""Feed-forward networks in plain numpy: forward, backprop, Adam, training.

Conventions:
  * Inputs are (B, n) float64; a single (n,) vector is promoted and the
    output squeezed back.
  * A Network is a stack of DenseLayer values; the final layer must use the
    identity activation and its outputs are the pre-softmax logits. forward()
    returns softmax probabilities plus a cache for backprop.
  * Dropout is the inverted kind, applied to hidden activations only and only
    while training, so evaluation needs no rescaling.
  * All randomness flows through numpy Generators handed in by the caller.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .records import encode_array, decode_array, read_records, write_records, RecordError

ACTIVATIONS = ("relu", "sigmoid", "identity")
LOG_CLAMP = 1e-12


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        # exp on the negative side only, to stay overflow-free
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if kind == "identity":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max so large logits cannot overflow."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels, width: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, width), np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy over the batch; probabilities clamped at 1e-12."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if probs.shape != targets.shape:
        raise ValueError("probs and targets shapes differ")
    logs = np.log(np.clip(probs, LOG_CLAMP, None))
    return float(-(targets * logs).sum(axis=1).mean())


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability rate, survivors scaled 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if rate == 0.0:
        return np.ones(shape, np.float64)
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


class DenseLayer:
    """Fully connected layer: a = act(x @ w.T + b), w is (out, in)."""

    __slots__ = ("w", "b", "activation")

    def __init__(self, w: np.ndarray, b: np.ndarray, activation: str = "relu"):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ValueError("w must be (out, in) with matching bias")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation

    @classmethod
    def init(cls, fan_in: int, fan_out: int, activation: str, rng: np.random.Generator):
        scale = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-scale, scale, size=(fan_out, fan_in))
        return cls(w, np.zeros(fan_out), activation)

    def forward(self, x: np.ndarray):
        z = x @ self.w.T + self.b
        a = _activate(z, self.activation)
        return a, (x, z, a)

    def backward(self, cache, da: np.ndarray):
        x, z, a = cache
        dz = da * _activation_grad(self.activation, z, a)
        dw = dz.T @ x
        db = dz.sum(axis=0)
        dx = dz @ self.w
        return dx, dw, db

    def parameters(self):
        return [self.w, self.b]


class Network:
    """Stack of DenseLayer; last layer must be identity (logits into softmax)."""

    def __init__(self, layers):
        if not layers:
            raise ValueError("network needs at least one layer")
        if layers[-1].activation != "identity":
            raise ValueError("final layer must use the identity activation")
        self.layers = list(layers)

    @classmethod
    def init(cls, widths, seed: int, hidden_activation: str = "relu"):
        """widths = (n_in, h1, ..., n_out); hidden layers share one activation."""
        rng = np.random.default_rng(np.random.SeedSequence([seed, 10]))
        layers = []
        for i in range(len(widths) - 1):
            act = "identity" if i == len(widths) - 2 else hidden_activation
            layers.append(DenseLayer.init(widths[i], widths[i + 1], act, rng))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def n_out(self) -> int:
        return self.layers[-1].w.shape[0]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x, training: bool = False, dropout_rate: float = 0.0,
                rng: np.random.Generator | None = None):
        """Return (probs, cache). probs matches the input's batch shape."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        a = np.atleast_2d(x)
        caches, masks = [], []
        for i, layer in enumerate(self.layers):
            a, cache = layer.forward(a)
            caches.append(cache)
            mask = None
            if training and dropout_rate > 0.0 and i < len(self.layers) - 1:
                if rng is None:
                    raise ValueError("dropout requires an rng")
                mask = dropout_mask(a.shape, dropout_rate, rng)
                a = a * mask
            masks.append(mask)
        probs = softmax(a)
        full_cache = {"layers": caches, "masks": masks, "logits": a,
                      "probs": probs, "squeeze": squeeze}
        return (probs[0] if squeeze else probs), full_cache

    def backward_from_logits(self, cache, dlogits: np.ndarray):
        """Backprop a gradient w.r.t. the logits. Returns (param_grads, dx)."""
        grads = [None] * len(self.layers)
        da = np.atleast_2d(dlogits)
        for i in range(len(self.layers) - 1, -1, -1):
            if cache["masks"][i] is not None:
                da = da * cache["masks"][i]
            da, dw, db = self.layers[i].backward(cache["layers"][i], da)
            grads[i] = (dw, db)
        flat = [g for pair in grads for g in pair]
        dx = da[0] if cache["squeeze"] else da
        return flat, dx

    def backward(self, cache, dprobs: np.ndarray):
        """Backprop a gradient w.r.t. the softmax output."""
        p = cache["probs"]
        dp = np.atleast_2d(dprobs)
        dlogits = p * (dp - (dp * p).sum(axis=1, keepdims=True))
        return self.backward_from_logits(cache, dlogits)


def classify(probs) -> int:
    """Label with the highest probability; ties go to the lowest index."""
    probs = np.asarray(probs)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("classify expects one nonempty probability vector")
    return int(np.argmax(probs))


def predict_labels(net: Network, X: np.ndarray) -> np.ndarray:
    probs, _ = net.forward(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return probs.argmax(axis=1)


def accuracy(net: Network, X: np.ndarray, y: np.ndarray) -> float:
    return float((predict_labels(net, X) == np.asarray(y)).mean())


def cross_entropy_grads(net: Network, cache, targets: np.ndarray):
    """Gradients of mean cross-entropy, fused through softmax: dz = (p - t)/B."""
    p = cache["probs"]
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    dlogits = (p - t) / p.shape[0]
    return net.backward_from_logits(cache, dlogits)


def input_gradient(net: Network, x: np.ndarray, dlogits: np.ndarray) -> np.ndarray:
    """d(dlogits . logits)/dx for a single input."""
    _, cache = net.forward(x)
    _, dx = net.backward_from_logits(cache, np.atleast_2d(dlogits))
    return dx if np.asarray(x).ndim > 1 else np.atleast_2d(dx)[0]


def input_jacobian(net: Network, x: np.ndarray, presoftmax: bool = False) -> np.ndarray:
    """(n_out, n_in) Jacobian of outputs w.r.t. one input vector.

    presoftmax=True differentiates the logits, otherwise the softmax output.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("input_jacobian expects a single vector")
    _, cache = net.forward(x)
    p = cache["probs"][0]
    o = net.n_out
    rows = []
    for k in range(o):
        if presoftmax:
            dlogits = np.zeros(o)
            dlogits[k] = 1.0
        else:
            # d p_k / d z = p_k * (e_k - p)
            dlogits = p[k] * (np.eye(o)[k] - p)
        _, dx = net.backward_from_logits(cache, dlogits[None, :])
        rows.append(np.atleast_2d(dx)[0])
    return np.stack(rows)


class RowwiseFirstLayer:
    """L independent dense maps, one per hash-matrix row: (B, L, T) -> (B, L*k).

    Row i applies its own (k, T) weight to row i of the input matrix, so the
    layer is equivariant to permuting rows together with their weights.
    """

    __slots__ = ("w", "b", "activation")

    def __init__(self, w: np.ndarray, b: np.ndarray, activation: str = "relu"):
        self.w = np.asarray(w, dtype=np.float64)  # (L, k, T)
        self.b = np.asarray(b, dtype=np.float64)  # (L, k)
        if self.w.ndim != 3 or self.b.shape != self.w.shape[:2]:
            raise ValueError("w must be (L, k, T) with (L, k) bias")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation

    @classmethod
    def init(cls, rows: int, t: int, k: int, activation: str, rng: np.random.Generator):
        scale = 1.0 / np.sqrt(t)
        return cls(rng.uniform(-scale, scale, size=(rows, k, t)), np.zeros((rows, k)), activation)

    @property
    def rows(self) -> int:
        return self.w.shape[0]

    @property
    def out_width(self) -> int:
        return self.w.shape[0] * self.w.shape[1]

    def forward(self, m: np.ndarray):
        """m is (B, L, T); returns ((B, L*k), cache)."""
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 3 or m.shape[1:] != (self.w.shape[0], self.w.shape[2]):
            raise ValueError(f"expected (B, {self.w.shape[0]}, {self.w.shape[2]}) input")
        z = np.einsum("blt,lkt->blk", m, self.w) + self.b
        a = _activate(z, self.activation)
        out = a.reshape(m.shape[0], -1)
        return out, (m, z, a)

    def backward(self, cache, da_flat: np.ndarray):
        m, z, a = cache
        da = da_flat.reshape(a.shape)
        dz = da * _activation_grad(self.activation, z, a)
        dw = np.einsum("blk,blt->lkt", dz, m)
        db = dz.sum(axis=0)
        dm = np.einsum("blk,lkt->blt", dz, self.w)
        return dm, dw, db

    def parameters(self):
        return [self.w, self.b]


class AdamState:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("params/grads length mismatch with optimizer state")
        self.t += 1
        lr_t = self.lr * np.sqrt(1.0 - self.beta2 ** self.t) / (1.0 - self.beta1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= lr_t * m / (np.sqrt(v) + self.eps)


@dataclass
class FitResult:
    net: "Network"
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_valid_acc: float = 0.0


def fit_classifier(net: Network, X, y, X_valid, y_valid, *, epochs: int,
                   batch_size: int, lr: float, dropout_rate: float, seed: int,
                   adv_provider=None, adv_weight: float = 0.0,
                   augment=None, valid_view=None) -> FitResult:
    """Train with Adam on mean cross-entropy; keep the best-validation epoch.

    adv_provider(net, epoch) may return extra (X_adv, y_adv) each epoch; those
    samples enter every batch-level loss with weight adv_weight against 1.0
    for the originals, normalized by the total weight in the batch. augment
    maps a training batch through a stochastic view (e.g. random feature
    nullification); valid_view(X, epoch) does the same for the validation set.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    opt = AdamState(net.parameters(), lr=lr)
    result = FitResult(net=net)
    best_params = None
    o = net.n_out

    for epoch in range(epochs):
        if adv_provider is not None and adv_weight > 0.0:
            X_adv, y_adv = adv_provider(net, epoch)
            X_ep = np.concatenate([X, np.asarray(X_adv, dtype=np.float64)])
            y_ep = np.concatenate([y, np.asarray(y_adv, dtype=np.int64)])
            w_ep = np.concatenate([np.ones(len(X)), np.full(len(X_adv), adv_weight)])
        else:
            X_ep, y_ep, w_ep = X, y, np.ones(len(X))

        order = rng.permutation(len(X_ep))
        losses = []
        for start in range(0, len(order), batch_size):
            sel = order[start:start + batch_size]
            xb = X_ep[sel]
            if augment is not None:
                xb = augment(xb, rng)
            tb = one_hot(y_ep[sel], o)
            wb = w_ep[sel]
            probs, cache = net.forward(xb, training=True, dropout_rate=dropout_rate, rng=rng)
            logs = np.log(np.clip(probs, LOG_CLAMP, None))
            loss = float(-(wb * (tb * logs).sum(axis=1)).sum() / wb.sum())
            dlogits = (probs - tb) * (wb / wb.sum())[:, None]
            grads, _ = net.backward_from_logits(cache, dlogits)
            opt.step(net.parameters(), grads)
            losses.append(loss)

        Xv = valid_view(X_valid, epoch) if valid_view is not None else X_valid
        val_acc = accuracy(net, Xv, y_valid)
        result.history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                               "valid_acc": val_acc})
        if val_acc > result.best_valid_acc or best_params is None:
            result.best_valid_acc = val_acc
            result.best_epoch = epoch
            best_params = [p.copy() for p in net.parameters()]

    for p, bp in zip(net.parameters(), best_params):
        p[...] = bp
    return result


def store_network(net: Network, path) -> None:
    header = {"kind": "network", "layers": len(net.layers)}
    records = [
        {"layer": i, "activation": layer.activation,
         "w": encode_array(layer.w), "b": encode_array(layer.b)}
        for i, layer in enumerate(net.layers)
    ]
    write_records(path, header, records)


def load_network(path) -> Network:
    header, rows = read_records(path)
    if header.get("kind") != "network":
        raise RecordError(f"{path}: not a network checkpoint")
    layers = [None] * header["layers"]
    for row in rows:
        layers[row["layer"]] = DenseLayer(decode_array(row["w"]), decode_array(row["b"]),
                                          row["activation"])
    if any(l is None for l in layers):
        raise RecordError(f"{path}: missing layer records")
    return Network(layers)
