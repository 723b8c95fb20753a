import pytest

from hashguard.config import load_config

# Desk-scale defaults are minutes of work; these overrides shrink every knob
# so orchestration tests run in well under a second.
TINY = {
    "n": 64, "samples_per_class": 200,
    "hash_k": 8, "hash_l": 8, "tree_depth": 3,
    "hidden": "32,16", "epochs": 4, "defense_epochs": 4, "batch_size": 32,
    "row_units": 4, "trunk_units": 32, "hidden_units": 16,
    "identity_row_units": 32,
    "attack_count": 8, "attack_eps": "2,4", "attack_eps_mid": 4,
    "gdkde_refs": 20, "cw_steps": 20, "mimicry_guides": 10,
    "rq1_grid": "4x4,8x8",
    "theorem_n": 128, "theorem_eps": 2, "theorem_k": 8, "theorem_l": 16,
    "theta": 8.0, "collision_trials": 2000, "lnh_collision_trials": 1000,
    "lnh_collision_k": 4, "lnh_collision_l": 8,
    "distortion_pairs": 500, "distortion_k": "4,8", "distortion_l": 4,
}


@pytest.fixture(scope="session")
def tiny_cfg():
    return load_config(None, TINY)


@pytest.fixture(scope="session")
def tiny_cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    lines = [f"{k} = {v}" for k, v in TINY.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)
