"""Flat `key = value` configuration with typed defaults.

One file, one namespace: every run-affecting knob has a default here, a file
can override any subset, and unknown keys are an error (catches typos before
an hours-long run). Values are coerced to the type of the default; list-like
values (comma-separated) stay strings and are parsed by the helpers below.
"""

from __future__ import annotations


class ConfigError(ValueError):
    pass


DEFAULTS = {
    # data generation
    "n": 1024,
    "samples_per_class": 2000,
    "mask_fraction": 0.75,
    "bait_fraction": 0.09375,
    "train_ratio": 0.8,
    "valid_ratio": 0.05,
    "test_ratio": 0.15,
    # hash transforms
    "hash_k": 32,
    "hash_l": 64,
    "tree_features": 0,          # 0 means ceil(sqrt(n))
    "tree_depth": 4,
    # classifier nets (standard / surrogate / rfn / advtrain)
    "hidden": "256,64,32",
    "epochs": 12,
    "batch_size": 128,
    "lr": 0.001,
    "dropout": 0.4,
    # hash defense model
    "row_units": 16,
    "trunk_units": 128,
    "hidden_units": 32,
    "identity_row_units": 256,
    "lambda_lsh": 256.0,
    "lambda_lnh": 1.0,
    "lambda_identity": 16.0,
    "noise_eps": 8.0,
    "pass_rate": 0.999,
    "defense_epochs": 12,
    # attacks
    "attack_count": 100,
    "attack_eps": "4,8,12",
    "attack_eps_mid": 8,
    "gdkde_lambda": 100.0,
    "gdkde_sigma": 0.0,          # 0 means n / 10
    "gdkde_refs": 100,
    "cw_lambda": 10.0,
    "cw_iota": 1.0,
    "cw_steps": 100,
    "cw_lr": 0.1,
    "mimicry_guides": 60,
    # baseline defenses
    "advtrain_lambda": 2.0,
    "advtrain_fraction": 0.25,
    "rfn_mean": 0.3,
    "rfn_stddev": 0.05,
    # experiment grids
    "rq1_grid": "16x32,32x64",
    # theorem verification
    "theorem_n": 1000,
    "theorem_eps": 10,
    "theorem_k": 32,
    "theorem_l": 64,
    "theta": 32.0,
    "collision_trials": 100000,
    "lnh_collision_trials": 20000,
    "lnh_collision_k": 8,
    "lnh_collision_l": 16,
    "distortion_pairs": 20000,
    "distortion_k": "8,16,32",
    "distortion_l": 16,
    # global
    "seed": 7,
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} "
                          f"as {type(default).__name__}")


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then file values, then explicit overrides (e.g. --seed)."""
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            raw = parse_config_text(fh.read(), source=str(path))
        for key, value in raw.items():
            if key not in DEFAULTS:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            cfg[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value
    return cfg


def parse_int_list(raw: str, key: str = "value") -> list[int]:
    try:
        return [int(p) for p in str(raw).split(",") if p.strip() != ""]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}")


def parse_grid(raw: str, key: str = "grid") -> list[tuple[int, int]]:
    """'16x32,32x64' -> [(16, 32), (32, 64)] as (K, L) pairs."""
    pairs = []
    for part in str(raw).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            k, l = part.split("x")
            pairs.append((int(k), int(l)))
        except ValueError:
            raise ConfigError(f"{key}: expected KxL pairs, got {part!r}")
    if not pairs:
        raise ConfigError(f"{key}: empty grid")
    return pairs
