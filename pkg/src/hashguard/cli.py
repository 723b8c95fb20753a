"""Command-line front end.

Commands write their outputs to explicit paths and print short deterministic
summaries (no timestamps), so rerunning any command with the same config and
seed reproduces files and stdout byte for byte.

Exit codes: 0 success, 1 usage or input error, 2 a verified property failed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .attacks import attack_dataset, store_attack_results, load_attack_results, train_surrogate
from .baselines import load_any_model, store_any_model
from .config import ConfigError, load_config
from .data import load_dataset, load_mask, store_dataset, store_mask
from .defense import DefenseModel, calibrate_threshold, store_defense
from .experiments import (MODEL_KINDS, attack_kwargs, benign_reference_sets,
                          evaluate_model, hidden_widths, prepare_data,
                          run_rq1, run_rq2, run_rq3, subseed, train_model,
                          verify_theorems, write_json)
from .nn import Network
from .records import RecordError


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; remap to 1 since exit
    # code 2 is reserved for failed property checks
    def error(self, message):
        raise CliError(message)


def _add_common(p):
    p.add_argument("--config", default=None, help="key = value override file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")


def _cfg(args):
    overrides = {} if args.seed is None else {"seed": args.seed}
    return load_config(args.config, overrides)


def _load_data_dir(path):
    def part(name):
        file = os.path.join(path, name)
        if not os.path.exists(file):
            raise CliError(f"missing {file} (expected a gen-data output directory)")
        return file
    train = load_dataset(part("train.jsonl"))
    valid = load_dataset(part("valid.jsonl"))
    test = load_dataset(part("test.jsonl"))
    mask = load_mask(part("mask.jsonl"))
    return train, valid, test, mask


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _cfg(args)
    train, valid, test, mask = prepare_data(cfg)
    os.makedirs(args.out, exist_ok=True)
    store_dataset(train, os.path.join(args.out, "train.jsonl"))
    store_dataset(valid, os.path.join(args.out, "valid.jsonl"))
    store_dataset(test, os.path.join(args.out, "test.jsonl"))
    store_mask(mask, os.path.join(args.out, "mask.jsonl"))
    write_json(os.path.join(args.out, "summary.json"),
               {"n": train.n, "train": len(train), "valid": len(valid),
                "test": len(test), "mask_size": len(mask.indices),
                "config": cfg})
    print(f"wrote {args.out}: train={len(train)} valid={len(valid)} "
          f"test={len(test)} n={train.n} mask={len(mask.indices)}")
    return 0


def cmd_train(args) -> int:
    cfg = _cfg(args)
    train, valid, _, mask = _load_data_dir(args.data)
    if args.model == "surrogate":
        model = train_surrogate(
            train, valid, hidden=hidden_widths(cfg), epochs=cfg["epochs"],
            batch_size=cfg["batch_size"], lr=cfg["lr"],
            dropout_rate=cfg["dropout"], seed=subseed(cfg["seed"], "surrogate"))
    else:
        model = train_model(args.model, train, valid, mask, cfg)
    store_any_model(model, args.out)
    rep = evaluate_model(model, valid.X, valid.y,
                         seed=subseed(cfg["seed"], "evaluate"))
    line = f"{args.model}: valid accuracy {rep.accuracy:.4f}"
    if isinstance(model, DefenseModel):
        line += f" t_r {model.t_r:.6g}"
    print(line)
    return 0


def cmd_attack(args) -> int:
    cfg = _cfg(args)
    train, _, test, mask = _load_data_dir(args.data)
    net = load_any_model(args.model)
    if not isinstance(net, Network):
        raise CliError("attacks need a plain network checkpoint as the surrogate")
    eps = cfg["attack_eps_mid"] if args.eps is None else args.eps
    refs, pool = benign_reference_sets(cfg, train)
    results = attack_dataset(
        args.attack, net, test, mask, count=cfg["attack_count"], eps=eps,
        seed=subseed(cfg["seed"], "attacks"),
        benign_refs=pool if args.attack == "mimicry" else
        (refs if args.attack == "gdkde" else None),
        **attack_kwargs(args.attack, cfg))
    store_attack_results(results, args.out, test.n, args.attack,
                         None if args.attack == "mimicry" else eps)
    evaded = sum(r.evaded for r in results)
    flips = float(np.mean([r.flips for r in results])) if results else 0.0
    print(f"{args.attack} eps={'-' if args.attack == 'mimicry' else eps}: "
          f"evaded {evaded}/{len(results)} on surrogate, mean flips {flips:.2f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _cfg(args)
    model = load_any_model(args.model)
    seed = subseed(cfg["seed"], "evaluate")
    if args.adversarial is not None:
        header, X, _, _, _ = load_attack_results(args.adversarial)
        labels = np.ones(len(X), np.int64)
        rep = evaluate_model(model, X, labels, np.ones(len(X), bool), seed=seed)
        subject = f"adversarial {header['attack']}"
    else:
        _, _, test, _ = _load_data_dir(args.data)
        rep = evaluate_model(model, test.X, test.y, seed=seed)
        subject = "clean test"
    if args.out:
        write_json(args.out, {"subject": subject, "metrics": rep.to_dict(),
                              "config": cfg})
    print(f"{subject}: accuracy {rep.accuracy:.4f} fnr {rep.fnr:.4f} "
          f"fpr {rep.fpr:.4f} rejected_adv {rep.rejected_adversarial} "
          f"rejected_clean {rep.rejected_clean}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _cfg(args)
    model = load_any_model(args.model)
    if not isinstance(model, DefenseModel):
        raise CliError("calibrate needs a defense model checkpoint")
    _, valid, _, _ = _load_data_dir(args.data)
    model.t_r = calibrate_threshold(model, valid, cfg["pass_rate"])
    store_defense(model, args.out)
    print(f"t_r {model.t_r:.6f} at pass_rate {cfg['pass_rate']}")
    return 0


def _cmd_rq(runner, name):
    def handler(args) -> int:
        cfg = _cfg(args)
        payload = runner(cfg, args.out)
        print(f"wrote {os.path.join(args.out, name + '.csv')} "
              f"({len(payload['rows'])} rows)")
        return 0
    return handler


def cmd_verify_theorems(args) -> int:
    cfg = _cfg(args)
    report = verify_theorems(cfg)
    if args.out:
        write_json(args.out, report)
    for c in report["checks"]:
        status = "pass" if c["passed"] else "FAIL"
        print(f"{c['name']}: {status} (measured {c['measured']} vs "
              f"{c['expected']} {c['comparison']} tol {c['tolerance']})")
    failed = sum(not c["passed"] for c in report["checks"])
    print("all checks passed" if report["passed"] else f"{failed} checks failed")
    return 0 if report["passed"] else 2


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="hashguard",
                     description="hash-based malware classifier hardening")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and split a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model kind")
    p.add_argument("--data", required=True, help="gen-data output directory")
    p.add_argument("--model", required=True,
                   choices=MODEL_KINDS + ("surrogate",))
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack test malware via a surrogate")
    p.add_argument("--model", required=True, help="surrogate network checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--attack", required=True,
                   choices=("jsma", "gdkde", "cw", "mimicry"))
    p.add_argument("--eps", type=int, default=None, help="flip budget")
    p.add_argument("--out", required=True, help="adversarial set path")
    _add_common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="score a model on clean or attacked data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--adversarial", default=None, help="attack output file")
    p.add_argument("--out", default=None, help="JSON report path")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("calibrate", help="refit the rejection threshold")
    p.add_argument("--model", required=True, help="defense checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="recalibrated checkpoint path")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    for name, runner in (("rq1", run_rq1), ("rq2", run_rq2), ("rq3", run_rq3)):
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--out", required=True, help="output directory")
        _add_common(p)
        p.set_defaults(func=_cmd_rq(runner, name))

    p = sub.add_parser("verify-theorems",
                       help="Monte-Carlo checks of the hash guarantees")
    p.add_argument("--out", default=None, help="JSON report path")
    _add_common(p)
    p.set_defaults(func=cmd_verify_theorems)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.func is cmd_evaluate and args.adversarial is None and args.data is None:
            raise CliError("evaluate needs --data or --adversarial")
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, RecordError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
