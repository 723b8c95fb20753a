"""Gray-box evasion attacks on binary feature vectors.

All attacks share the threat model: the attacker holds a trained surrogate
network, may only insert features (0 -> 1, never remove), and only at
coordinates the perturbation mask allows. Targets are malware samples
(label 1) the surrogate currently flags; success means the surrogate answers
benign. Four attacks:

  * jsma_attack     greedy saliency flips, strictly decreasing malware prob
  * gdkde_attack    gradient descent on the benign logit plus a Laplacian
                    kernel density pull toward a set of benign reference
                    points, with exact one-flip density deltas
  * cw_attack_binary  projected gradient descent on ||delta||^2 + lam * hinge
                    of the logit margin, then discretization under the budget
  * mimicry_attack  overlay the insertable part of sampled benign guides and
                    keep the guide the surrogate likes best

jsma, gdkde, and cw verify every accepted flip against their objective and
revert the step and stop if it does not improve, so the per-iteration
objective trace is strictly monotone by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, PerturbationMask, as_bits
from .nn import Network, classify, fit_classifier, input_jacobian
from .records import read_records, write_records, RecordError


@dataclass(eq=False)
class AttackResult:
    original: np.ndarray
    adversarial: np.ndarray
    flips: int
    evaded: bool          # surrogate answers benign
    iterations: int
    attack: str
    source_index: int = -1


def train_surrogate(train: Dataset, valid: Dataset, hidden=(256, 64, 32),
                    epochs: int = 12, batch_size: int = 128, lr: float = 0.001,
                    dropout_rate: float = 0.4, seed: int = 0) -> Network:
    """The attacker's own model, trained on the same data distribution."""
    net = Network.init((train.n, *hidden, 2), seed=seed)
    fit_classifier(net, train.X, train.y, valid.X, valid.y, epochs=epochs,
                   batch_size=batch_size, lr=lr, dropout_rate=dropout_rate, seed=seed)
    return net


def select_attack_seeds(net: Network, ds: Dataset, count: int, seed: int) -> np.ndarray:
    """Indices of malware samples the surrogate flags, sampled without
    replacement and returned ascending."""
    probs, _ = net.forward(ds.X.astype(np.float64))
    eligible = np.flatnonzero((ds.y == 1) & (probs.argmax(axis=1) == 1))
    if eligible.size > count:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 18]))
        eligible = rng.choice(eligible, size=count, replace=False)
    return np.sort(eligible)


def _mal_prob(net: Network, x: np.ndarray) -> float:
    probs, _ = net.forward(x.astype(np.float64))
    return float(probs[1])


def jsma_attack(net: Network, x, mask: PerturbationMask, eps: int) -> AttackResult:
    """Greedy saliency-guided insertion toward the benign class.

    The saliency of coordinate i is d p_benign / d x_i times the magnitude of
    the summed drop in the other classes, and only counts when the benign
    probability rises while the rest fall. Each flip must strictly reduce the
    malware probability or it is reverted and the attack stops.
    """
    x0 = as_bits(x)
    x = x0.copy()
    insertable = mask.insertable.astype(bool)
    flips = iterations = 0
    p_mal = _mal_prob(net, x)
    while flips < eps and classify(net.forward(x.astype(np.float64))[0]) != 0:
        admissible = insertable & (x == 0)
        if not admissible.any():
            break
        iterations += 1
        jac = input_jacobian(net, x)           # (2, n), softmax outputs
        d_benign = jac[0]
        d_rest = jac[1:].sum(axis=0)
        s = np.where((d_benign > 0) & (d_rest < 0), d_benign * np.abs(d_rest), 0.0)
        s = np.where(admissible, s, -1.0)
        i = int(np.argmax(s))
        if s[i] <= 0.0:
            break
        x[i] = 1
        p_new = _mal_prob(net, x)
        if p_new >= p_mal:
            x[i] = 0
            break
        p_mal = p_new
        flips += 1
    return AttackResult(x0, x, flips, classify(net.forward(x.astype(np.float64))[0]) == 0,
                        iterations, "jsma")


def gdkde_attack(net: Network, x, benign_refs, mask: PerturbationMask, eps: int,
                 lam: float = 100.0, sigma: float | None = None) -> AttackResult:
    """Descend the benign logit augmented with a kernel density pull.

    Objective to minimize over insertions:
        G(x') = -logit_benign(x') - (lam / R) * sum_r exp(-|x' - b_r|_1 / sigma)
    Candidate flips are ranked by the logit gradient plus the exact one-flip
    change of the density term (a flip moves each |x' - b_r|_1 by exactly 1).
    A flip is kept only if the recomputed objective strictly drops.
    """
    x0 = as_bits(x)
    x = x0.copy()
    refs = np.atleast_2d(np.asarray(benign_refs, dtype=np.uint8))
    if refs.shape[1] != x.size:
        raise ValueError("benign references must match the feature width")
    if sigma is None:
        sigma = x.size / 10.0
    insertable = mask.insertable.astype(bool)
    r = refs.shape[0]
    up, down = math.exp(1.0 / sigma) - 1.0, math.exp(-1.0 / sigma) - 1.0

    dist = (refs != x).sum(axis=1).astype(np.float64)   # |x' - b_r|_1, kept incremental
    kern = np.exp(-dist / sigma)

    def objective():
        probs, cache = net.forward(x.astype(np.float64))
        logit_benign = cache["logits"][0, 0]
        return -float(logit_benign) - lam / r * float(kern.sum()), probs

    g, probs = objective()
    flips = iterations = 0
    while flips < eps:
        admissible = insertable & (x == 0)
        if not admissible.any():
            break
        iterations += 1
        grad_logit = input_jacobian(net, x, presoftmax=True)[0]
        # exact density delta for flipping coordinate i from 0 to 1
        toward = kern @ refs                    # refs with b_i = 1 move closer
        away = kern.sum() - toward
        d_density = lam / r * (toward * up + away * down)
        d_g = -grad_logit - d_density
        d_g = np.where(admissible, d_g, np.inf)
        i = int(np.argmin(d_g))
        if not np.isfinite(d_g[i]) or d_g[i] >= 0.0:
            break
        x[i] = 1
        moved = refs[:, i] == 1
        dist += np.where(moved, -1.0, 1.0)
        kern = np.exp(-dist / sigma)
        g_new, probs = objective()
        if g_new >= g:
            x[i] = 0
            dist += np.where(moved, 1.0, -1.0)
            kern = np.exp(-dist / sigma)
            break
        g = g_new
        flips += 1
    return AttackResult(x0, x, flips, classify(net.forward(x.astype(np.float64))[0]) == 0,
                        iterations, "gdkde")


def cw_project(x_cont: np.ndarray, x: np.ndarray, mask: PerturbationMask) -> np.ndarray:
    """Feasible continuous region: insertable coords live in [x_i, 1], the
    rest are pinned to x. Idempotent."""
    v = mask.insertable.astype(np.float64)
    clipped = np.maximum(np.clip(x_cont, 0.0, 1.0), x)
    return clipped * v + x * (1.0 - v)


def cw_attack_binary(net: Network, x, mask: PerturbationMask, eps: int,
                     lam: float = 10.0, iota: float = 1.0, steps: int = 100,
                     lr: float = 0.1) -> AttackResult:
    """Projected gradient descent on ||delta||^2 + lam * max(margin, -iota),
    margin = logit_malware - logit_benign, followed by discretization.

    Every step's continuous iterate is rounded (insertable coords at 0.5),
    trimmed to the eps budget by dropping the smallest-|delta| insertions,
    and scored; the discrete candidate with the smallest margin wins.
    """
    x0 = as_bits(x)
    xf = x0.astype(np.float64)
    insertable = mask.insertable.astype(bool)
    delta = np.zeros_like(xf)
    best = (np.inf, np.inf, x0.copy())          # (margin, flips, candidate)

    for _ in range(steps):
        xc = xf + delta
        probs, cache = net.forward(xc)
        logits = cache["logits"][0]
        margin = float(logits[1] - logits[0])
        if margin > -iota:
            dlogits = np.zeros(2)
            dlogits[1], dlogits[0] = lam, -lam
            _, dx = net.backward_from_logits(cache, dlogits[None, :])
            grad = 2.0 * delta + np.atleast_2d(dx)[0]
        else:
            grad = 2.0 * delta
        delta = delta - lr * grad
        delta = cw_project(xf + delta, xf, mask) - xf

        cont = xf + delta
        ins = insertable & (x0 == 0) & (cont >= 0.5)
        if ins.sum() > eps:
            idx = np.flatnonzero(ins)
            keep = idx[np.argsort(-cont[idx], kind="stable")[:eps]]
            ins = np.zeros_like(ins)
            ins[keep] = True
        cand = x0.copy()
        cand[ins] = 1
        cprobs, ccache = net.forward(cand.astype(np.float64))
        cmargin = float(ccache["logits"][0, 1] - ccache["logits"][0, 0])
        cflips = int(ins.sum())
        if (cmargin, cflips) < (best[0], best[1]):
            best = (cmargin, cflips, cand)

    cand = best[2]
    return AttackResult(x0, cand, int((cand != x0).sum()),
                        classify(net.forward(cand.astype(np.float64))[0]) == 0,
                        steps, "cw")


def mimicry_attack(net: Network, x, benign_pool, mask: PerturbationMask,
                   guides: int = 60, rng: np.random.Generator | None = None,
                   seed: int | None = None) -> AttackResult:
    """Overlay each sampled benign guide's insertable features onto x and keep
    the candidate with the lowest surrogate malware probability (ties: fewest
    insertions, then lowest guide index)."""
    x0 = as_bits(x)
    pool = np.atleast_2d(np.asarray(benign_pool, dtype=np.uint8))
    if pool.shape[1] != x0.size:
        raise ValueError("benign pool must match the feature width")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([0 if seed is None else seed, 19]))
    take = min(guides, pool.shape[0])
    sel = rng.choice(pool.shape[0], size=take, replace=False)
    cands = x0[None, :] | (pool[sel] & mask.insertable[None, :])
    probs, _ = net.forward(cands.astype(np.float64))
    p_mal = probs[:, 1]
    ins = (cands != x0[None, :]).sum(axis=1)
    order = np.lexsort((sel, ins, p_mal))       # primary key is the last one
    bi = order[0]
    adv = cands[bi]
    return AttackResult(x0, adv, int(ins[bi]),
                        classify(net.forward(adv.astype(np.float64))[0]) == 0,
                        take, "mimicry")


ATTACK_NAMES = ("jsma", "gdkde", "cw", "mimicry")


def run_attack(name: str, net: Network, x, mask: PerturbationMask, *, eps: int = 0,
               benign_refs=None, sample_seed: int = 0, lam_gdkde: float = 100.0,
               sigma: float | None = None, lam_cw: float = 10.0, iota: float = 1.0,
               cw_steps: int = 100, cw_lr: float = 0.1, guides: int = 60) -> AttackResult:
    if name == "jsma":
        return jsma_attack(net, x, mask, eps)
    if name == "gdkde":
        return gdkde_attack(net, x, benign_refs, mask, eps, lam=lam_gdkde, sigma=sigma)
    if name == "cw":
        return cw_attack_binary(net, x, mask, eps, lam=lam_cw, iota=iota,
                                steps=cw_steps, lr=cw_lr)
    if name == "mimicry":
        rng = np.random.default_rng(np.random.SeedSequence([sample_seed, 19]))
        return mimicry_attack(net, x, benign_refs, mask, guides=guides, rng=rng)
    raise ValueError(f"unknown attack {name!r}")


def attack_dataset(name: str, net: Network, ds: Dataset, mask: PerturbationMask, *,
                   count: int = 100, eps: int = 8, seed: int = 0,
                   benign_refs=None, **kwargs) -> list[AttackResult]:
    """Attack `count` surrogate-flagged malware samples from ds."""
    seeds = select_attack_seeds(net, ds, count, seed)
    results = []
    for idx in seeds:
        res = run_attack(name, net, ds.X[idx], mask, eps=eps, benign_refs=benign_refs,
                         sample_seed=seed * 1000003 + int(idx), **kwargs)
        res.source_index = int(idx)
        results.append(res)
    return results


def store_attack_results(results, path, n: int, attack: str, eps: int | None) -> None:
    header = {"n": n, "attack": attack, "eps": eps}
    records = (
        {"source_index": r.source_index,
         "ones": np.flatnonzero(r.adversarial).tolist(),
         "flips": int(r.flips), "evaded": bool(r.evaded)}
        for r in results
    )
    write_records(path, header, records)


def load_attack_results(path):
    """Returns (header, X_adv, source_indices, flips, evaded)."""
    header, rows = read_records(path)
    for key in ("n", "attack"):
        if key not in header:
            raise RecordError(f"{path}: line 1: header needs '{key}'")
    n = header["n"]
    X = np.zeros((len(rows), n), np.uint8)
    src = np.zeros(len(rows), np.int64)
    flips = np.zeros(len(rows), np.int64)
    evaded = np.zeros(len(rows), bool)
    for i, rec in enumerate(rows):
        lineno = i + 2
        ones = rec.get("ones")
        if not isinstance(ones, list) or "source_index" not in rec:
            raise RecordError(f"{path}: line {lineno}: need 'ones' and 'source_index'")
        idx = np.asarray(ones, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise RecordError(f"{path}: line {lineno}: feature index out of range")
        X[i, idx] = 1
        src[i] = rec["source_index"]
        flips[i] = rec.get("flips", 0)
        evaded[i] = rec.get("evaded", False)
    return header, X, src, flips, evaded
