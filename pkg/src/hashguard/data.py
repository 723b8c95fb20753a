"""Synthetic binary-feature datasets, splits, masks, and Hamming distances.

Feature vectors are 1-D numpy uint8 arrays over {0, 1}. A dataset is a dense
(N, n) uint8 matrix plus an (N,) int64 label vector (0 = benign, 1 = malware).
A perturbation mask marks which coordinates an attacker may set to 1;
coordinates outside the mask are off-limits, and attacks may only insert
(0 -> 1), never erase.

On disk, datasets are line-delimited JSON: a header {"n": ..., "name": ...}
followed by one row per sample, {"ones": [ascending indices], "label": 0|1}.
Masks are a header {"n": ...} plus one record {"insertable": [...]}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .records import RecordError, read_records, write_records


def as_bits(x) -> np.ndarray:
    """Validate and return a 1-D uint8 vector over {0, 1}."""
    a = np.asarray(x)
    if a.ndim != 1:
        raise ValueError(f"expected a 1-D bit vector, got shape {a.shape}")
    if a.size and (a.min() < 0 or a.max() > 1):
        raise ValueError("bit vector has entries outside {0, 1}")
    return a.astype(np.uint8)


def hamming_distance(a, b) -> int:
    a = as_bits(a)
    b = as_bits(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return int(np.count_nonzero(a != b))


def normalized_hamming(a, b) -> float:
    a = as_bits(a)
    b = as_bits(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.size == 0:
        raise ValueError("normalized Hamming distance undefined for length 0")
    return float(np.count_nonzero(a != b)) / a.size


@dataclass(eq=False)
class Dataset:
    X: np.ndarray  # (N, n) uint8
    y: np.ndarray  # (N,) int64
    name: str = "dataset"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.uint8)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValueError("X must be (N, n)")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("y length must match X rows")
        if self.y.size and not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass(eq=False)
class PerturbationMask:
    n: int
    insertable: np.ndarray  # (n,) uint8, 1 where insertion is allowed

    def __post_init__(self):
        self.insertable = as_bits(self.insertable)
        if self.insertable.shape != (self.n,):
            raise ValueError("mask length must equal n")

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.insertable)


@dataclass(eq=False)
class GeneratorConfig:
    """Class-conditional Bernoulli generator.

    Each feature i fires with probability benign_rates[i] for label 0 and
    malware_rates[i] for label 1. The perturbation mask covers the
    ceil(mask_fraction * n) features with the smallest rate separation
    |benign - malware|, i.e. the attacker may only touch weakly informative
    coordinates.
    """

    n: int
    samples_per_class: int
    benign_rates: np.ndarray
    malware_rates: np.ndarray
    mask_fraction: float
    seed: int

    def __post_init__(self):
        self.benign_rates = np.asarray(self.benign_rates, dtype=np.float64)
        self.malware_rates = np.asarray(self.malware_rates, dtype=np.float64)
        for rates in (self.benign_rates, self.malware_rates):
            if rates.shape != (self.n,):
                raise ValueError("rate vectors must have length n")
            if rates.min() < 0.0 or rates.max() > 1.0:
                raise ValueError("rates must lie in [0, 1]")
        if not 0.0 < self.mask_fraction <= 1.0:
            raise ValueError("mask_fraction must be in (0, 1]")
        if self.samples_per_class <= 0:
            raise ValueError("samples_per_class must be positive")


def default_generator_config(
    n: int = 1024,
    samples_per_class: int = 2000,
    seed: int = 7,
    mask_fraction: float = 0.75,
    bait_fraction: float = 0.09375,
) -> GeneratorConfig:
    """Build rate vectors with three feature groups.

    Core features (the unmasked 1 - mask_fraction of n) fire often in both
    classes but more often in malware; their separation is large, their
    per-bit log-likelihood ratio small, so classification rests on many of
    them at once. Bait features are rare everywhere but an order of magnitude
    rarer in malware: low separation (hence inside the mask and insertable)
    yet strongly benign-indicative per bit, which is what makes a per-bit
    classifier on raw features evadable by a handful of insertions. The rest
    are near-uninformative noise. Group positions are shuffled; the rate
    recipe derives from the seed, so one integer pins the problem.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    n_core = n - math.ceil(mask_fraction * n)
    n_bait = int(round(bait_fraction * n))
    if n_core + n_bait > n:
        raise ValueError("mask_fraction and bait_fraction leave no noise features")
    n_noise = n - n_core - n_bait

    benign = np.empty(n)
    malware = np.empty(n)
    benign[:n_core] = rng.uniform(0.25, 0.35, size=n_core)
    malware[:n_core] = benign[:n_core] + rng.uniform(0.10, 0.18, size=n_core)
    benign[n_core:n_core + n_bait] = rng.uniform(0.025, 0.045, size=n_bait)
    malware[n_core:n_core + n_bait] = rng.uniform(0.0001, 0.0005, size=n_bait)
    base = rng.uniform(0.01, 0.05, size=n_noise)
    benign[n_core + n_bait:] = base
    malware[n_core + n_bait:] = np.clip(
        base + rng.uniform(-0.01, 0.01, size=n_noise), 0.001, 1.0)

    order = rng.permutation(n)
    return GeneratorConfig(
        n=n,
        samples_per_class=samples_per_class,
        benign_rates=np.clip(benign[order], 0.0, 0.98),
        malware_rates=np.clip(malware[order], 0.0, 0.98),
        mask_fraction=mask_fraction,
        seed=seed,
    )


def generate_synthetic_dataset(cfg: GeneratorConfig, name: str = "synthetic"):
    """Sample a dataset and its perturbation mask. Returns (Dataset, mask)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    nc = cfg.samples_per_class
    Xb = (rng.random((nc, cfg.n)) < cfg.benign_rates).astype(np.uint8)
    Xm = (rng.random((nc, cfg.n)) < cfg.malware_rates).astype(np.uint8)
    X = np.concatenate([Xb, Xm], axis=0)
    y = np.concatenate([np.zeros(nc, np.int64), np.ones(nc, np.int64)])

    separation = np.abs(cfg.benign_rates - cfg.malware_rates)
    k = math.ceil(cfg.mask_fraction * cfg.n)
    chosen = np.argsort(separation, kind="stable")[:k]  # ties -> lowest index
    insertable = np.zeros(cfg.n, np.uint8)
    insertable[chosen] = 1
    return Dataset(X, y, name=name), PerturbationMask(cfg.n, insertable)


def split_dataset(ds: Dataset, ratios, seed: int):
    """Stratified shuffle split into len(ratios) disjoint, exhaustive parts."""
    ratios = [float(r) for r in ratios]
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be nonnegative and sum to 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    parts_idx = [[] for _ in ratios]
    for label in (0, 1):
        idx = np.flatnonzero(ds.y == label)
        idx = idx[rng.permutation(idx.size)]
        bounds = [int(round(sum(ratios[: i + 1]) * idx.size)) for i in range(len(ratios))]
        bounds[-1] = idx.size  # guard rounding so the split is exhaustive
        start = 0
        for i, stop in enumerate(bounds):
            parts_idx[i].append(idx[start:stop])
            start = stop
    out = []
    suffix = ["train", "valid", "test"]
    for i, chunks in enumerate(parts_idx):
        sel = np.concatenate(chunks) if chunks else np.empty(0, np.int64)
        tag = suffix[i] if i < len(suffix) else f"part{i}"
        out.append(Dataset(ds.X[sel], ds.y[sel], name=f"{ds.name}-{tag}"))
    return tuple(out)


def store_dataset(ds: Dataset, path) -> None:
    header = {"n": int(ds.n), "name": ds.name}
    records = (
        {"ones": np.flatnonzero(row).tolist(), "label": int(lab)}
        for row, lab in zip(ds.X, ds.y)
    )
    write_records(path, header, records)


def load_dataset(path) -> Dataset:
    header, rows = read_records(path)
    if "n" not in header or not isinstance(header["n"], int) or header["n"] <= 0:
        raise RecordError(f"{path}: line 1: header needs a positive integer 'n'")
    n = header["n"]
    X = np.zeros((len(rows), n), np.uint8)
    y = np.zeros(len(rows), np.int64)
    for i, row in enumerate(rows):
        lineno = i + 2
        ones = row.get("ones")
        label = row.get("label")
        if not isinstance(ones, list) or label not in (0, 1):
            raise RecordError(f"{path}: line {lineno}: need 'ones' list and 'label' 0/1")
        idx = np.asarray(ones, dtype=np.int64) if ones else np.empty(0, np.int64)
        if idx.size:
            if idx.min() < 0 or idx.max() >= n:
                raise RecordError(f"{path}: line {lineno}: feature index out of range for n={n}")
            if np.any(np.diff(idx) <= 0):
                raise RecordError(f"{path}: line {lineno}: 'ones' must be strictly ascending")
        X[i, idx] = 1
        y[i] = label
    return Dataset(X, y, name=str(header.get("name", "dataset")))


def store_mask(mask: PerturbationMask, path) -> None:
    write_records(path, {"n": int(mask.n)}, [{"insertable": mask.indices.tolist()}])


def load_mask(path) -> PerturbationMask:
    header, rows = read_records(path)
    if "n" not in header or not isinstance(header["n"], int) or header["n"] <= 0:
        raise RecordError(f"{path}: line 1: header needs a positive integer 'n'")
    if len(rows) != 1 or "insertable" not in rows[0]:
        raise RecordError(f"{path}: expected exactly one 'insertable' record")
    n = header["n"]
    idx = np.asarray(rows[0]["insertable"], dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise RecordError(f"{path}: line 2: insertable index out of range for n={n}")
    insertable = np.zeros(n, np.uint8)
    insertable[idx] = 1
    return PerturbationMask(n, insertable)
