"""Reference models the hash defense is measured against.

  * train_standard_dnn   plain feed-forward classifier on raw bits
  * train_rfn            the same classifier trained and queried through
                         random feature nullification (zero a random
                         ceil(n*p) coordinates, p ~ N(mean, stddev^2) clamped
                         to [0, 1], fresh per sample per epoch and one fresh
                         draw per query)
  * train_adversarial    iterative adversarial training: each epoch remounts
                         a saliency attack on a fixed subset of training
                         malware against the current model and mixes the
                         results into the loss with weight lam
  * train_dnn_dae        the joint classifier+DAE machinery on the identity
                         transform (no hashing), an ablation of the defense
"""

from __future__ import annotations

import math

import numpy as np

from .attacks import jsma_attack
from .data import Dataset, PerturbationMask
from .defense import (DefenseHyper, DefenseModel, load_defense, sample_distinct_cells,
                      train_defense)
from .hashing import IdentityTransform
from .nn import (Network, cross_entropy, fit_classifier, load_network, one_hot,
                 predict_labels, store_network)
from .records import RecordError, decode_array, encode_array, read_records, write_records


def train_standard_dnn(train: Dataset, valid: Dataset, hidden=(256, 64, 32),
                       epochs: int = 12, batch_size: int = 128, lr: float = 0.001,
                       dropout_rate: float = 0.4, seed: int = 0) -> Network:
    net = Network.init((train.n, *hidden, 2), seed=seed)
    fit_classifier(net, train.X, train.y, valid.X, valid.y, epochs=epochs,
                   batch_size=batch_size, lr=lr, dropout_rate=dropout_rate, seed=seed)
    return net


# ---------------------------------------------------------------------------
# random feature nullification
# ---------------------------------------------------------------------------

class RfnModel:
    def __init__(self, net: Network, mean: float = 0.3, stddev: float = 0.05):
        self.net = net
        self.mean = mean
        self.stddev = stddev


def rfn_nullify(X, mean: float, stddev: float, rng: np.random.Generator) -> np.ndarray:
    """Zero ceil(n * p) distinct coordinates per row, p ~ N(mean, stddev^2)
    clamped to [0, 1]. Accepts one vector or a batch; dtype is preserved."""
    X = np.asarray(X)
    single = X.ndim == 1
    Xb = np.atleast_2d(X).copy()
    b, n = Xb.shape
    p = np.clip(rng.normal(mean, stddev, size=b), 0.0, 1.0)
    k = np.minimum(np.ceil(n * p).astype(np.int64), n)
    rows, cols = sample_distinct_cells(rng, b, n, k)
    Xb[rows, cols] = 0
    return Xb[0] if single else Xb


def train_rfn(train: Dataset, valid: Dataset, hidden=(256, 64, 32), epochs: int = 12,
              batch_size: int = 128, lr: float = 0.001, dropout_rate: float = 0.4,
              mean: float = 0.3, stddev: float = 0.05, seed: int = 0) -> RfnModel:
    """Train under nullification so the net learns to answer on partial views.

    Validation accuracy (used for best-epoch selection) sees a nullified view
    drawn from a per-epoch fixed stream, so epochs are compared on the same
    kind of input the deployed model answers on.
    """
    net = Network.init((train.n, *hidden, 2), seed=seed)

    def augment(xb, rng):
        return rfn_nullify(xb, mean, stddev, rng)

    def valid_view(Xv, epoch):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 21, epoch]))
        return rfn_nullify(np.asarray(Xv, dtype=np.float64), mean, stddev, rng)

    fit_classifier(net, train.X, train.y, valid.X, valid.y, epochs=epochs,
                   batch_size=batch_size, lr=lr, dropout_rate=dropout_rate, seed=seed,
                   augment=augment, valid_view=valid_view)
    return RfnModel(net, mean, stddev)


def rfn_predict(model: RfnModel, X, seed: int = 0) -> np.ndarray:
    """One fresh nullification draw per query, then the plain classifier."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 22]))
    Xv = rfn_nullify(np.atleast_2d(np.asarray(X, dtype=np.float64)), model.mean,
                     model.stddev, rng)
    return predict_labels(model.net, Xv)


# ---------------------------------------------------------------------------
# iterative adversarial training
# ---------------------------------------------------------------------------

def adversarial_mixed_loss(net: Network, X_clean, y_clean, X_adv, y_adv,
                           lam: float) -> float:
    """(sum clean CE + lam * sum adversarial CE) / (N_clean + lam * N_adv)."""
    Xc = np.atleast_2d(np.asarray(X_clean, dtype=np.float64))
    Xa = np.atleast_2d(np.asarray(X_adv, dtype=np.float64))
    pc, _ = net.forward(Xc)
    pa, _ = net.forward(Xa)
    ce_c = cross_entropy(pc, one_hot(y_clean, 2)) * len(Xc)
    ce_a = cross_entropy(pa, one_hot(y_adv, 2)) * len(Xa) if len(Xa) else 0.0
    return (ce_c + lam * ce_a) / (len(Xc) + lam * len(Xa))


def train_adversarial(train: Dataset, valid: Dataset, mask: PerturbationMask,
                      eps: int = 8, lam: float = 1.0, malware_fraction: float = 0.1,
                      hidden=(256, 64, 32), epochs: int = 12, batch_size: int = 128,
                      lr: float = 0.001, dropout_rate: float = 0.4,
                      seed: int = 0) -> Network:
    """Saliency attacks on a fixed malware subset are regenerated against the
    current model every epoch and mixed into the loss with weight lam.
    lam = 0 reproduces train_standard_dnn exactly (same seed, same batches)."""
    net = Network.init((train.n, *hidden, 2), seed=seed)
    mal = np.flatnonzero(train.y == 1)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    take = min(mal.size, math.ceil(malware_fraction * mal.size))
    subset = np.sort(rng.choice(mal, size=take, replace=False)) if mal.size else mal

    def adv_provider(current, epoch):
        X_adv = np.stack([
            jsma_attack(current, train.X[i], mask, eps).adversarial for i in subset
        ]) if subset.size else np.zeros((0, train.n), np.uint8)
        return X_adv, np.ones(len(X_adv), np.int64)

    fit_classifier(net, train.X, train.y, valid.X, valid.y, epochs=epochs,
                   batch_size=batch_size, lr=lr, dropout_rate=dropout_rate, seed=seed,
                   adv_provider=adv_provider if lam > 0 else None, adv_weight=lam)
    return net


# ---------------------------------------------------------------------------
# classifier + DAE without hashing
# ---------------------------------------------------------------------------

def train_dnn_dae(train: Dataset, valid: Dataset, hyper: DefenseHyper) -> DefenseModel:
    """Identity transform: the 'hash matrix' is the raw vector as one row."""
    model, _ = train_defense(train, valid, IdentityTransform(train.n), hyper)
    return model


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def store_rfn(model: RfnModel, path) -> None:
    header = {"kind": "rfn", "mean": model.mean, "stddev": model.stddev,
              "layers": len(model.net.layers)}
    records = [
        {"layer": i, "activation": layer.activation,
         "w": encode_array(layer.w), "b": encode_array(layer.b)}
        for i, layer in enumerate(model.net.layers)
    ]
    write_records(path, header, records)


def load_rfn(path) -> RfnModel:
    header, rows = read_records(path)
    if header.get("kind") != "rfn":
        raise RecordError(f"{path}: not an rfn checkpoint")
    from .nn import DenseLayer
    layers = [None] * header["layers"]
    for row in rows:
        layers[row["layer"]] = DenseLayer(decode_array(row["w"]), decode_array(row["b"]),
                                          row["activation"])
    return RfnModel(Network(layers), header["mean"], header["stddev"])


def load_any_model(path):
    """Dispatch on the checkpoint header: network, rfn, or defense."""
    header, _ = read_records(path)
    kind = header.get("kind")
    if kind == "network":
        return load_network(path)
    if kind == "rfn":
        return load_rfn(path)
    if kind == "defense":
        return load_defense(path)
    raise RecordError(f"{path}: unknown checkpoint kind {kind!r}")


def store_any_model(model, path) -> None:
    if isinstance(model, RfnModel):
        store_rfn(model, path)
    elif isinstance(model, DefenseModel):
        from .defense import store_defense
        store_defense(model, path)
    elif isinstance(model, Network):
        store_network(model, path)
    else:
        raise TypeError(f"cannot store {type(model).__name__}")
