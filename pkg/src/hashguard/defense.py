"""Hash-matrix classifier trained jointly with a denoising auto-encoder.

Architecture (all dense, relu hidden):

    hash matrix (L, T) --row-wise layer--> (L*k) --encoder--> (u,)
        classifier head:  (u,) -> hidden -> 2 logits -> softmax
        decoder:          (u,) -> L*T logits -> sigmoid (reconstruction)

The row-wise layer and the encoder are shared by both heads. Training
minimizes  L_C + lambda_d * L_D  where L_C is softmax cross-entropy on the
clean hash matrix and L_D is per-cell binary cross-entropy reconstructing the
clean matrix from a randomly cell-flipped copy. After training, a rejection
threshold t_r is set to the pass_rate quantile of clean validation
reconstruction errors; queries whose error exceeds t_r answer REJECTED.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .hashing import (IdentityTransform, LnhTransform, LshTransform,
                      hash_matrices)
from .metrics import REJECTED
from .nn import (AdamState, DenseLayer, Network, RowwiseFirstLayer, dropout_mask,
                 one_hot, softmax, LOG_CLAMP)
from .records import RecordError, decode_array, encode_array, read_records, write_records


@dataclass
class NoiseSpec:
    """Random cell flips: p ~ max(0, N(0, (eps/n)^2)), ceil(L*T*p) distinct cells."""

    eps: float
    n: int

    def __post_init__(self):
        if self.eps < 0 or self.n <= 0:
            raise ValueError("eps must be >= 0 and n positive")

    @property
    def scale(self) -> float:
        return self.eps / self.n


def inject_noise(m: np.ndarray, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Flip ceil(L*T*p) distinct cells of one (L, T) matrix."""
    m = np.asarray(m, dtype=np.uint8)
    if m.ndim != 2:
        raise ValueError("expected one (L, T) matrix")
    cells = m.size
    p = max(0.0, rng.normal(0.0, spec.scale))
    k = min(math.ceil(cells * p), cells)
    out = m.copy()
    if k:
        out.reshape(-1)[rng.choice(cells, size=k, replace=False)] ^= 1
    return out


def sample_distinct_cells(rng: np.random.Generator, rows: int, width: int, counts):
    """Per-row uniform samples without replacement, vectorized over rows.

    counts[i] cells are drawn for row i. Returns (row_ids, col_ids) suitable
    for fancy indexing into a (rows, width) array.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (rows,) or counts.min(initial=0) < 0 or counts.max(initial=0) > width:
        raise ValueError("counts must be per-row values in [0, width]")
    kmax = int(counts.max(initial=0))
    if kmax == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    r = rng.random((rows, width))
    part = np.argpartition(r, kmax - 1, axis=1)[:, :kmax]
    order = np.argsort(np.take_along_axis(r, part, axis=1), axis=1)
    smallest = np.take_along_axis(part, order, axis=1)  # per-row kmax smallest r
    take = np.arange(kmax)[None, :] < counts[:, None]
    return np.repeat(np.arange(rows), counts), smallest[take]


def inject_noise_batch(m: np.ndarray, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Per-sample noise over a (B, L, T) batch; each sample draws its own p."""
    m = np.asarray(m, dtype=np.uint8)
    if m.ndim != 3:
        raise ValueError("expected a (B, L, T) batch")
    b, cells = m.shape[0], m.shape[1] * m.shape[2]
    p = np.maximum(0.0, rng.normal(0.0, spec.scale, size=b))
    k = np.minimum(np.ceil(cells * p).astype(np.int64), cells)
    flat = m.reshape(b, cells).copy()
    rows_ids, col_ids = sample_distinct_cells(rng, b, cells, k)
    flat[rows_ids, col_ids] ^= 1
    return flat.reshape(m.shape)


def _bce_logits(z: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Elementwise binary cross-entropy of sigmoid(z) against t, stable form."""
    return np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))


@dataclass(eq=False)
class DefenseModel:
    transform: object                 # Lsh/Lnh/IdentityTransform
    rowwise: RowwiseFirstLayer
    trunk: Network                    # encoder + classifier head; layer 0 is shared
    decoder: DenseLayer               # encoder output -> L*T reconstruction logits
    lambda_d: float
    noise: NoiseSpec | None
    t_r: float | None = None          # rejection threshold; None = uncalibrated

    def __post_init__(self):
        if len(self.trunk.layers) < 2:
            raise ValueError("trunk needs the shared encoder plus a classifier head")
        enc_out = self.trunk.layers[0].w.shape[0]
        lt = self.rowwise.rows * self.rowwise.w.shape[2]
        if self.decoder.w.shape != (lt, enc_out):
            raise ValueError("decoder must map encoder output to L*T logits")

    @property
    def encoder(self) -> DenseLayer:
        return self.trunk.layers[0]

    def parameters(self):
        return self.rowwise.parameters() + self.trunk.parameters() + self.decoder.parameters()


def init_defense_model(transform, row_units: int, trunk_units: int, hidden_units: int,
                       lambda_d: float, noise_eps: float, seed: int) -> DefenseModel:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 16]))
    L, T = transform.L, transform.T
    rowwise = RowwiseFirstLayer.init(L, T, row_units, "relu", rng)
    trunk = Network([
        DenseLayer.init(L * row_units, trunk_units, "relu", rng),
        DenseLayer.init(trunk_units, hidden_units, "relu", rng),
        DenseLayer.init(hidden_units, 2, "identity", rng),
    ])
    decoder = DenseLayer.init(trunk_units, L * T, "identity", rng)
    noise = NoiseSpec(noise_eps, transform.n) if lambda_d > 0 else None
    return DefenseModel(transform, rowwise, trunk, decoder, lambda_d, noise)


def classifier_forward(model: DefenseModel, m: np.ndarray, training: bool = False,
                       dropout_rate: float = 0.0, rng: np.random.Generator | None = None):
    """Softmax probabilities for a (B, L, T) batch. Returns (probs, cache)."""
    a, c_rw = model.rowwise.forward(m)
    mask = None
    if training and dropout_rate > 0.0:
        if rng is None:
            raise ValueError("dropout requires an rng")
        mask = dropout_mask(a.shape, dropout_rate, rng)
        a = a * mask
    probs, c_trunk = model.trunk.forward(a, training=training,
                                         dropout_rate=dropout_rate, rng=rng)
    return probs, (c_rw, mask, c_trunk)


def classifier_backward(model: DefenseModel, cache, dlogits: np.ndarray):
    c_rw, mask, c_trunk = cache
    trunk_grads, d_a = model.trunk.backward_from_logits(c_trunk, dlogits)
    if mask is not None:
        d_a = d_a * mask
    dm, dw_rw, db_rw = model.rowwise.backward(c_rw, d_a)
    return [dw_rw, db_rw] + trunk_grads, dm


def _dae_forward(model: DefenseModel, m_noisy: np.ndarray):
    a_rw, c_rw = model.rowwise.forward(m_noisy)
    a_enc, c_enc = model.encoder.forward(a_rw)
    logits, c_dec = model.decoder.forward(a_enc)
    return logits, (c_rw, c_enc, c_dec)


def _dae_backward(model: DefenseModel, cache, dlogits: np.ndarray):
    c_rw, c_enc, c_dec = cache
    d_enc, dw_d, db_d = model.decoder.backward(c_dec, dlogits)
    d_rw, dw_e, db_e = model.encoder.backward(c_enc, d_enc)
    dm, dw_rw, db_rw = model.rowwise.backward(c_rw, d_rw)
    zeros = [np.zeros_like(p) for p in model.trunk.parameters()[2:]]
    return [dw_rw, db_rw, dw_e, db_e] + zeros + [dw_d, db_d]


def reconstruction_error(model: DefenseModel, m) -> np.ndarray | float:
    """Mean per-cell BCE reconstructing m from itself (clean input at test time)."""
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 2
    batch = m[None] if single else m
    logits, _ = _dae_forward(model, batch)
    errs = _bce_logits(logits, batch.reshape(batch.shape[0], -1)).mean(axis=1)
    return float(errs[0]) if single else errs


def joint_loss(model: DefenseModel, m_bits: np.ndarray, labels, *,
               rng: np.random.Generator | None = None,
               m_noisy: np.ndarray | None = None,
               dropout_rate: float = 0.0,
               dropout_rng: np.random.Generator | None = None):
    """Classification + lambda_d * reconstruction loss and its gradients.

    m_bits is the clean (B, L, T) uint8 batch. The corrupted copy is drawn
    from rng unless m_noisy is supplied (fixed-noise mode, used by gradient
    checks). Returns (loss, grads, parts) with grads aligned to
    model.parameters().
    """
    m_bits = np.asarray(m_bits, dtype=np.uint8)
    targets = one_hot(labels, 2) if np.asarray(labels).ndim == 1 else np.asarray(labels)
    m_f = m_bits.astype(np.float64)
    b = m_bits.shape[0]

    probs, c_cls = classifier_forward(model, m_f, training=dropout_rate > 0.0,
                                      dropout_rate=dropout_rate, rng=dropout_rng)
    logs = np.log(np.clip(probs, LOG_CLAMP, None))
    loss_c = float(-(targets * logs).sum(axis=1).mean())
    grads, _ = classifier_backward(model, c_cls, (probs - targets) / b)
    grads = grads + [np.zeros_like(p) for p in model.decoder.parameters()]

    loss_d = 0.0
    if model.lambda_d > 0:
        if m_noisy is None:
            if model.noise is None or rng is None:
                raise ValueError("need rng (or m_noisy) for the reconstruction pass")
            m_noisy = inject_noise_batch(m_bits, model.noise, rng)
        logits, c_dae = _dae_forward(model, np.asarray(m_noisy, dtype=np.float64))
        flat_target = m_f.reshape(b, -1)
        loss_d = float(_bce_logits(logits, flat_target).mean(axis=1).mean())
        cells = flat_target.shape[1]
        sig = 1.0 / (1.0 + np.exp(-logits))
        dlogits = model.lambda_d * (sig - flat_target) / (b * cells)
        for g, gd in zip(grads, _dae_backward(model, c_dae, dlogits)):
            g += gd

    loss = loss_c + model.lambda_d * loss_d
    return loss, grads, {"classification": loss_c, "reconstruction": loss_d}


def model_probs(model: DefenseModel, X, batch: int = 512) -> np.ndarray:
    """Class probabilities for raw (N, n) bit vectors."""
    mats = hash_matrices(model.transform, X)
    out = np.empty((mats.shape[0], 2))
    for start in range(0, mats.shape[0], batch):
        probs, _ = classifier_forward(model, mats[start:start + batch].astype(np.float64))
        out[start:start + batch] = probs
    return out


def predict(model: DefenseModel, X) -> np.ndarray:
    return model_probs(model, X).argmax(axis=1)


def reconstruction_errors(model: DefenseModel, X, batch: int = 512) -> np.ndarray:
    mats = hash_matrices(model.transform, X)
    out = np.empty(mats.shape[0])
    for start in range(0, mats.shape[0], batch):
        out[start:start + batch] = reconstruction_error(
            model, mats[start:start + batch].astype(np.float64))
    return out


def calibrate_threshold(model: DefenseModel, valid: Dataset, pass_rate: float) -> float:
    """Set t_r so that pass_rate of clean validation samples pass the gate."""
    if not 0.0 < pass_rate <= 1.0:
        raise ValueError("pass_rate must be in (0, 1]")
    if len(valid) == 0:
        raise ValueError("cannot calibrate on an empty set")
    errs = reconstruction_errors(model, valid.X)
    model.t_r = float(np.quantile(errs, pass_rate))
    return model.t_r


def predict_with_rejection(model: DefenseModel, X) -> np.ndarray:
    """Labels, or REJECTED where the reconstruction error exceeds t_r."""
    if model.t_r is None:
        raise ValueError("model has no rejection threshold; calibrate first")
    X = np.atleast_2d(np.asarray(X, dtype=np.uint8))
    labels = predict(model, X).astype(np.int64)
    if np.isfinite(model.t_r) and model.lambda_d > 0:
        labels[reconstruction_errors(model, X) > model.t_r] = REJECTED
    return labels


@dataclass
class DefenseHyper:
    row_units: int = 16
    trunk_units: int = 128
    hidden_units: int = 32
    lambda_d: float = 1.0
    noise_eps: float = 8.0
    epochs: int = 12
    batch_size: int = 128
    lr: float = 0.001
    dropout_rate: float = 0.4
    pass_rate: float = 0.999
    seed: int = 0


def train_defense(train: Dataset, valid: Dataset, transform,
                  hyper: DefenseHyper) -> tuple[DefenseModel, list]:
    """Joint training with Adam; keeps the best clean-validation epoch,
    then calibrates the rejection threshold on the validation set."""
    model = init_defense_model(transform, hyper.row_units, hyper.trunk_units,
                               hyper.hidden_units, hyper.lambda_d,
                               hyper.noise_eps, hyper.seed)
    m_train = hash_matrices(transform, train.X)
    m_valid = hash_matrices(transform, valid.X).astype(np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, 17]))
    opt = AdamState(model.parameters(), lr=hyper.lr)
    history = []
    best_acc, best_params = -1.0, None

    for epoch in range(hyper.epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), hyper.batch_size):
            sel = order[start:start + hyper.batch_size]
            loss, grads, _ = joint_loss(model, m_train[sel], train.y[sel], rng=rng,
                                        dropout_rate=hyper.dropout_rate, dropout_rng=rng)
            opt.step(model.parameters(), grads)
            losses.append(loss)
        probs, _ = classifier_forward(model, m_valid)
        val_acc = float((probs.argmax(axis=1) == valid.y).mean())
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "valid_acc": val_acc})
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = [p.copy() for p in model.parameters()]

    for p, bp in zip(model.parameters(), best_params):
        p[...] = bp
    if model.lambda_d > 0:
        calibrate_threshold(model, valid, hyper.pass_rate)
    else:
        model.t_r = float("inf")
    return model, history


def search_lambda(train: Dataset, valid: Dataset, transform, hyper: DefenseHyper,
                  grid=None) -> tuple[float, list]:
    """Exponential sweep of lambda_d; picks the best validation accuracy with
    the rejection gate active (ties go to the smaller lambda)."""
    if grid is None:
        grid = [2.0 ** k for k in range(-2, 11)]
    records = []
    best = (None, -1.0)
    for lam in grid:
        h = DefenseHyper(**{**hyper.__dict__, "lambda_d": float(lam)})
        model, _ = train_defense(train, valid, transform, h)
        preds = predict_with_rejection(model, valid.X)
        acc = float((preds == valid.y).mean())  # rejected clean counts wrong
        records.append({"lambda_d": float(lam), "valid_acc_with_gate": acc})
        if acc > best[1]:
            best = (float(lam), acc)
    return best[0], records


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

_TENSORS = ("rowwise.w", "rowwise.b", "encoder.w", "encoder.b",
            "hidden.w", "hidden.b", "out.w", "out.b", "decoder.w", "decoder.b")


def store_defense(model: DefenseModel, path) -> None:
    header = {
        "kind": "defense",
        "lambda_d": model.lambda_d,
        "noise_eps": model.noise.eps if model.noise else None,
        "t_r": model.t_r,
        "transform_kind": type(model.transform).__name__,
    }
    records = []
    for name, p in zip(_TENSORS, model.parameters()):
        records.append({"tensor": name, "value": encode_array(p)})
    t = model.transform
    if isinstance(t, LshTransform):
        records.append({"transform": {"kind": "lsh", "n": t.n, "K": t.K, "L": t.L,
                                      "indices": encode_array(t.indices)}})
    elif isinstance(t, LnhTransform):
        records.append({"transform": {"kind": "lnh", "n": t.n, "K": t.K, "L": t.L,
                                      "m": t.m, "d": t.d,
                                      "slots": encode_array(t.slots),
                                      "nodes": encode_array(t.node_features)}})
    elif isinstance(t, IdentityTransform):
        records.append({"transform": {"kind": "identity", "n": t.n}})
    else:
        raise TypeError(f"cannot store transform {type(t).__name__}")
    write_records(path, header, records)


def load_defense(path) -> DefenseModel:
    header, rows = read_records(path)
    if header.get("kind") != "defense":
        raise RecordError(f"{path}: not a defense checkpoint")
    tensors = {}
    transform = None
    for rec in rows:
        if "tensor" in rec:
            tensors[rec["tensor"]] = decode_array(rec["value"])
        elif "transform" in rec:
            td = rec["transform"]
            if td["kind"] == "lsh":
                transform = LshTransform(td["n"], td["K"], td["L"], decode_array(td["indices"]))
            elif td["kind"] == "lnh":
                transform = LnhTransform(td["n"], td["K"], td["L"], td["m"], td["d"],
                                         decode_array(td["slots"]), decode_array(td["nodes"]))
            elif td["kind"] == "identity":
                transform = IdentityTransform(td["n"])
    if transform is None or set(tensors) != set(_TENSORS):
        raise RecordError(f"{path}: incomplete defense checkpoint")
    model = DefenseModel(
        transform=transform,
        rowwise=RowwiseFirstLayer(tensors["rowwise.w"], tensors["rowwise.b"], "relu"),
        trunk=Network([
            DenseLayer(tensors["encoder.w"], tensors["encoder.b"], "relu"),
            DenseLayer(tensors["hidden.w"], tensors["hidden.b"], "relu"),
            DenseLayer(tensors["out.w"], tensors["out.b"], "identity"),
        ]),
        decoder=DenseLayer(tensors["decoder.w"], tensors["decoder.b"], "identity"),
        lambda_d=header["lambda_d"],
        noise=(NoiseSpec(header["noise_eps"], transform.n)
               if header["noise_eps"] is not None else None),
        t_r=header["t_r"],
    )
    return model
