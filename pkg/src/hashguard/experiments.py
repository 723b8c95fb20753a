"""Experiment runners: data prep, model registry, attack sets, report files.

Everything here is glue over the library modules. Each runner is
self-contained (generates data, trains models, attacks, evaluates) and
deterministic for a fixed config, so rerunning a command reproduces its
output files byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .attacks import attack_dataset, train_surrogate
from .baselines import (RfnModel, rfn_predict, train_adversarial, train_dnn_dae,
                        train_rfn, train_standard_dnn)
from .config import parse_grid, parse_int_list
from .data import (Dataset, PerturbationMask, default_generator_config,
                   generate_synthetic_dataset, split_dataset)
from .defense import DefenseHyper, DefenseModel, predict_with_rejection, train_defense
from .hashing import (build_lnh, distortion_values, estimate_collision, prefix,
                      sample_lsh, sample_pairs, theorem1_k_bound)
from .metrics import MetricsReport, compute_metrics
from .nn import Network, predict_labels

MODEL_KINDS = ("standard", "rfn", "advtrain", "dnn-dae",
               "lsh", "lnh", "lsh-dae", "lnh-dae")

# Disjoint seed streams per role; offsets stay below the 1000 multiplier so
# (seed, role) pairs never collide across config seeds.
_ROLE_OFFSET = {
    "standard": 101, "rfn": 102, "advtrain": 103, "dnn-dae": 104,
    "lsh": 105, "lnh": 106, "lsh-dae": 107, "lnh-dae": 108,
    "surrogate": 109, "transform-lsh": 110, "transform-lnh": 111,
    "attacks": 112, "evaluate": 113, "theorem-lsh": 114,
    "theorem-lnh": 115, "theorem-distortion": 116, "gdkde-refs": 117,
}


def subseed(seed: int, role: str) -> int:
    return seed * 1000 + _ROLE_OFFSET[role]


# ---------------------------------------------------------------------------
# data and models
# ---------------------------------------------------------------------------

def prepare_data(cfg: dict):
    gen = default_generator_config(
        n=cfg["n"], samples_per_class=cfg["samples_per_class"], seed=cfg["seed"],
        mask_fraction=cfg["mask_fraction"], bait_fraction=cfg["bait_fraction"])
    ds, mask = generate_synthetic_dataset(gen)
    ratios = (cfg["train_ratio"], cfg["valid_ratio"], cfg["test_ratio"])
    train, valid, test = split_dataset(ds, ratios, seed=cfg["seed"])
    return train, valid, test, mask


def hidden_widths(cfg: dict) -> tuple:
    return tuple(parse_int_list(cfg["hidden"], "hidden"))


def make_transform(family: str, cfg: dict, train: Dataset,
                   k: int | None = None, l: int | None = None):
    if family not in ("lsh", "lnh"):
        raise ValueError(f"unknown hash family: {family!r}")
    k = cfg["hash_k"] if k is None else k
    l = cfg["hash_l"] if l is None else l
    seed = subseed(cfg["seed"], "transform-" + family)
    if family == "lsh":
        return sample_lsh(train.n, k, l, seed)
    m = cfg["tree_features"] or None
    return build_lnh(train, k, l, m=m, d=cfg["tree_depth"], seed=seed)


def _defense_hyper(cfg: dict, lambda_d: float, row_units: int, seed: int) -> DefenseHyper:
    return DefenseHyper(
        row_units=row_units, trunk_units=cfg["trunk_units"],
        hidden_units=cfg["hidden_units"], lambda_d=lambda_d,
        noise_eps=cfg["noise_eps"], epochs=cfg["defense_epochs"],
        batch_size=cfg["batch_size"], lr=cfg["lr"],
        dropout_rate=cfg["dropout"], pass_rate=cfg["pass_rate"], seed=seed)


def train_model(kind: str, train: Dataset, valid: Dataset, mask: PerturbationMask,
                cfg: dict, k: int | None = None, l: int | None = None):
    """Train one model of the registry by kind name."""
    seed = subseed(cfg["seed"], kind) if kind in _ROLE_OFFSET else None
    common = dict(hidden=hidden_widths(cfg), epochs=cfg["epochs"],
                  batch_size=cfg["batch_size"], lr=cfg["lr"],
                  dropout_rate=cfg["dropout"], seed=seed)
    if kind == "standard":
        return train_standard_dnn(train, valid, **common)
    if kind == "rfn":
        return train_rfn(train, valid, mean=cfg["rfn_mean"],
                         stddev=cfg["rfn_stddev"], **common)
    if kind == "advtrain":
        return train_adversarial(train, valid, mask, eps=cfg["attack_eps_mid"],
                                 lam=cfg["advtrain_lambda"],
                                 malware_fraction=cfg["advtrain_fraction"], **common)
    if kind == "dnn-dae":
        hyper = _defense_hyper(cfg, cfg["lambda_identity"],
                               cfg["identity_row_units"], seed)
        return train_dnn_dae(train, valid, hyper)
    if kind in ("lsh", "lnh", "lsh-dae", "lnh-dae"):
        family = kind[:3]
        lam = 0.0 if kind == family else cfg["lambda_" + family]
        t = make_transform(family, cfg, train, k=k, l=l)
        hyper = _defense_hyper(cfg, lam, cfg["row_units"], seed)
        model, _ = train_defense(train, valid, t, hyper)
        return model
    raise ValueError(f"unknown model kind: {kind!r}")


def predict_any(model, X, seed: int = 0) -> np.ndarray:
    """Labels from any model kind; defense models may emit REJECTED."""
    if isinstance(model, DefenseModel):
        return predict_with_rejection(model, X)
    if isinstance(model, RfnModel):
        return rfn_predict(model, X, seed=seed)
    if isinstance(model, Network):
        return predict_labels(model, X)
    raise TypeError(f"cannot predict with {type(model).__name__}")


def evaluate_model(model, X, labels, adversarial=None, seed: int = 0) -> MetricsReport:
    return compute_metrics(predict_any(model, X, seed=seed), labels, adversarial)


# ---------------------------------------------------------------------------
# shared attack sets
# ---------------------------------------------------------------------------

def benign_reference_sets(cfg: dict, train: Dataset):
    """(kde references, mimicry pool), both from benign training rows."""
    benign = train.X[train.y == 0]
    rng = np.random.default_rng(
        np.random.SeedSequence([subseed(cfg["seed"], "gdkde-refs"), 24]))
    count = min(cfg["gdkde_refs"], len(benign))
    refs = benign[np.sort(rng.choice(len(benign), size=count, replace=False))]
    return refs, benign


def attack_kwargs(name: str, cfg: dict) -> dict:
    if name == "gdkde":
        return {"lam_gdkde": cfg["gdkde_lambda"],
                "sigma": cfg["gdkde_sigma"] or None}
    if name == "cw":
        return {"lam_cw": cfg["cw_lambda"], "iota": cfg["cw_iota"],
                "cw_steps": cfg["cw_steps"], "cw_lr": cfg["cw_lr"]}
    if name == "mimicry":
        return {"guides": cfg["mimicry_guides"]}
    return {}


def generate_attack_sets(cfg: dict, surrogate: Network, test: Dataset,
                         mask: PerturbationMask, refs, pool) -> dict:
    """All attack sets for one experiment, keyed (attack, eps or None).

    Budgeted attacks run at every eps in the grid; mimicry has no budget.
    Values are (stacked adversarial vectors, per-sample results).
    """
    seed = subseed(cfg["seed"], "attacks")
    count = cfg["attack_count"]
    sets = {}
    for eps in parse_int_list(cfg["attack_eps"], "attack_eps"):
        for name in ("jsma", "gdkde", "cw"):
            res = attack_dataset(name, surrogate, test, mask, count=count,
                                 eps=eps, seed=seed,
                                 benign_refs=refs if name == "gdkde" else None,
                                 **attack_kwargs(name, cfg))
            sets[(name, eps)] = (np.stack([r.adversarial for r in res]), res)
    res = attack_dataset("mimicry", surrogate, test, mask, count=count, eps=0,
                         seed=seed, benign_refs=pool,
                         **attack_kwargs("mimicry", cfg))
    sets[("mimicry", None)] = (np.stack([r.adversarial for r in res]), res)
    return sets


# ---------------------------------------------------------------------------
# report rows and files
# ---------------------------------------------------------------------------

def metrics_row(model_name: str, attack: str, eps, report: MetricsReport,
                extra: dict | None = None) -> dict:
    row = dict(extra or {})
    row.update({
        "model": model_name, "attack": attack,
        "eps": "" if eps is None else eps,
        "accuracy": round(report.accuracy, 6),
        "fnr": round(report.fnr, 6), "fpr": round(report.fpr, 6),
        "rejected_adversarial": report.rejected_adversarial,
        "rejected_clean": report.rejected_clean, "total": report.total,
    })
    return row


def model_rows(name: str, model, test: Dataset, attack_sets: dict,
               eval_seed: int, extra: dict | None = None) -> list[dict]:
    """Clean row plus one row per attack set, in fixed key order."""
    rows = [metrics_row(name, "none", "",
                        evaluate_model(model, test.X, test.y, seed=eval_seed),
                        extra)]
    for (attack, eps), (X_adv, _) in sorted(
            attack_sets.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0)):
        labels = np.ones(len(X_adv), np.int64)
        flags = np.ones(len(X_adv), bool)
        rep = evaluate_model(model, X_adv, labels, flags, seed=eval_seed)
        rows.append(metrics_row(name, attack, eps, rep, extra))
    return rows


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    def fmt(v):
        return f"{v:.6f}" if isinstance(v, float) else str(v)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c, "")) for c in columns])


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


_BASE_COLUMNS = ["model", "attack", "eps", "accuracy", "fnr", "fpr",
                 "rejected_adversarial", "rejected_clean", "total"]


def _write_experiment(name: str, cfg: dict, rows: list[dict],
                      columns: list[str], out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    payload = {"experiment": name, "seed": cfg["seed"], "config": cfg,
               "rows": rows}
    write_csv(os.path.join(out_dir, name + ".csv"), rows, columns)
    write_json(os.path.join(out_dir, name + ".json"), payload)
    return payload


@dataclass
class ExperimentSetup:
    train: Dataset
    valid: Dataset
    test: Dataset
    mask: PerturbationMask
    surrogate: Network
    attack_sets: dict


def prepare_experiment(cfg: dict) -> ExperimentSetup:
    """Data, the attacker's surrogate, and all shared attack sets."""
    train, valid, test, mask = prepare_data(cfg)
    surrogate = train_surrogate(
        train, valid, hidden=hidden_widths(cfg), epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], lr=cfg["lr"],
        dropout_rate=cfg["dropout"], seed=subseed(cfg["seed"], "surrogate"))
    refs, pool = benign_reference_sets(cfg, train)
    sets = generate_attack_sets(cfg, surrogate, test, mask, refs, pool)
    return ExperimentSetup(train, valid, test, mask, surrogate, sets)


def run_rq1(cfg: dict, out_dir) -> dict:
    """Hash-backed defenses across the (K, L) grid, both hash families."""
    setup = prepare_experiment(cfg)
    eval_seed = subseed(cfg["seed"], "evaluate")
    rows = []
    for family in ("lsh", "lnh"):
        for k, l in parse_grid(cfg["rq1_grid"], "rq1_grid"):
            kind = family + "-dae"
            model = train_model(kind, setup.train, setup.valid, setup.mask,
                                cfg, k=k, l=l)
            rows.extend(model_rows(kind, model, setup.test, setup.attack_sets,
                                   eval_seed, {"family": family, "k": k, "l": l}))
    columns = ["model", "family", "k", "l"] + _BASE_COLUMNS[1:]
    return _write_experiment("rq1", cfg, rows, columns, out_dir)


def run_rq2(cfg: dict, out_dir) -> dict:
    """Baseline defenses against the hash defenses, all attacks and budgets."""
    setup = prepare_experiment(cfg)
    eval_seed = subseed(cfg["seed"], "evaluate")
    rows = []
    for kind in ("standard", "rfn", "advtrain", "lsh-dae", "lnh-dae"):
        model = train_model(kind, setup.train, setup.valid, setup.mask, cfg)
        rows.extend(model_rows(kind, model, setup.test, setup.attack_sets,
                               eval_seed))
    return _write_experiment("rq2", cfg, rows, _BASE_COLUMNS, out_dir)


def run_rq3(cfg: dict, out_dir) -> dict:
    """Ablation: denoiser without hashing, hashing without denoiser, both."""
    setup = prepare_experiment(cfg)
    eval_seed = subseed(cfg["seed"], "evaluate")
    rows = []
    for kind in ("dnn-dae", "lsh", "lnh", "lsh-dae", "lnh-dae"):
        model = train_model(kind, setup.train, setup.valid, setup.mask, cfg)
        rows.extend(model_rows(kind, model, setup.test, setup.attack_sets,
                               eval_seed))
    return _write_experiment("rq3", cfg, rows, _BASE_COLUMNS, out_dir)


# ---------------------------------------------------------------------------
# theorem verification
# ---------------------------------------------------------------------------

def _check(name: str, measured: float, expected: float, tolerance: float,
           comparison: str) -> dict:
    """comparison 'abs': |measured - expected| <= tol; 'ge'/'le': one-sided
    measured >= expected - tol / measured <= expected + tol."""
    if comparison == "abs":
        ok = abs(measured - expected) <= tolerance
    elif comparison == "ge":
        ok = measured >= expected - tolerance
    elif comparison == "le":
        ok = measured <= expected + tolerance
    else:
        raise ValueError(f"unknown comparison: {comparison!r}")
    return {"name": name, "measured": round(float(measured), 6),
            "expected": round(float(expected), 6),
            "tolerance": round(float(tolerance), 6),
            "comparison": comparison, "passed": bool(ok)}


def verify_theorems(cfg: dict) -> dict:
    """Monte-Carlo checks of the collision and distortion guarantees.

    Collision: with eps of n bits flipped, a row of K samples agrees with
    probability (1 - eps/n)^K, so L * that many rows agree on average; a
    tree of m sampled features agrees at least as often as (1 - eps/n)^m.
    Distortion: doubling K never helps, up to Monte-Carlo noise.
    """
    seed = cfg["seed"]
    n, eps = cfg["theorem_n"], cfg["theorem_eps"]
    K, L = cfg["theorem_k"], cfg["theorem_l"]
    p1 = 1.0 - eps / n
    checks = []

    t = sample_lsh(n, K, L, subseed(seed, "theorem-lsh"))
    st = estimate_collision(t, eps, trials=cfg["collision_trials"],
                            seed=subseed(seed, "theorem-lsh"))
    checks.append(_check("lsh-row-collision", st.row_collision, p1 ** K,
                         0.02, "abs"))
    checks.append(_check("lsh-matching-rows", st.mean_matching_rows,
                         L * p1 ** K, 1.5, "abs"))

    gen = default_generator_config(n=n, samples_per_class=1000, seed=seed)
    ds, _ = generate_synthetic_dataset(gen, name="theorem")
    lt = build_lnh(ds, cfg["lnh_collision_k"], cfg["lnh_collision_l"],
                   d=cfg["tree_depth"], seed=subseed(seed, "theorem-lnh"))
    lst = estimate_collision(lt, eps, trials=cfg["lnh_collision_trials"],
                             seed=subseed(seed, "theorem-lnh"))
    checks.append(_check("lnh-tree-collision", lst.unit_collision,
                         p1 ** lt.m, 3.0 * lst.unit_collision_sem, "ge"))

    bound = theorem1_k_bound(cfg["theta"], L, p1)
    tight = (L * p1 ** bound >= cfg["theta"]) and (L * p1 ** (bound + 1) < cfg["theta"])
    checks.append({"name": "k-bound-tight", "measured": bound,
                   "expected": bound, "tolerance": 0.0,
                   "comparison": "abs", "passed": bool(tight)})

    pairs = cfg["distortion_pairs"]
    dl = cfg["distortion_l"]
    X1, X2 = sample_pairs(n, pairs, subseed(seed, "theorem-distortion"))
    for family in ("lsh", "lnh"):
        for dk in parse_int_list(cfg["distortion_k"], "distortion_k"):
            if family == "lsh":
                t2 = sample_lsh(n, 2 * dk, dl, subseed(seed, "theorem-distortion"))
            else:
                t2 = build_lnh(ds, 2 * dk, dl, d=cfg["tree_depth"],
                               seed=subseed(seed, "theorem-distortion"))
            v2 = distortion_values(t2, X1, X2)
            v1 = distortion_values(prefix(t2, dk), X1, X2)
            diff = v2 - v1
            sem = float(diff.std(ddof=1) / math.sqrt(pairs))
            checks.append(_check(f"distortion-{family}-k{dk}",
                                 float(diff.mean()), 0.0, 3.0 * sem, "le"))

    return {"experiment": "verify-theorems", "seed": seed, "config": cfg,
            "k_bound": bound, "checks": checks,
            "passed": all(c["passed"] for c in checks)}
