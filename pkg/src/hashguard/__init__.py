"""Locality-preserving hash transforms with a DAE-gated classifier, plus the
evasion attacks and baseline defenses needed to measure them."""

from .data import (Dataset, GeneratorConfig, PerturbationMask,
                   default_generator_config, generate_synthetic_dataset,
                   hamming_distance, load_dataset, load_mask, normalized_hamming,
                   split_dataset, store_dataset, store_mask)
from .hashing import (DecisionTree, IdentityTransform, LnhTransform, LshTransform,
                      apply_lnh, apply_lsh, build_lnh, estimate_collision,
                      estimate_distortion, hash_matrices, hash_matrix,
                      load_transform, sample_lsh, store_transform,
                      theorem1_k_bound, train_decision_tree)
from .nn import (AdamState, DenseLayer, Network, RowwiseFirstLayer, classify,
                 cross_entropy, input_jacobian, load_network, softmax,
                 store_network)
from .defense import (DefenseHyper, DefenseModel, NoiseSpec, calibrate_threshold,
                      inject_noise, joint_loss, load_defense, predict_with_rejection,
                      reconstruction_error, store_defense, train_defense)
from .attacks import (AttackResult, attack_dataset, cw_attack_binary, gdkde_attack,
                      jsma_attack, load_attack_results, mimicry_attack,
                      store_attack_results, train_surrogate)
from .baselines import (RfnModel, load_any_model, rfn_nullify, rfn_predict,
                        store_any_model, train_adversarial, train_dnn_dae,
                        train_rfn, train_standard_dnn)
from .metrics import REJECTED, MetricsReport, compute_metrics
from .config import DEFAULTS, ConfigError, load_config
from .experiments import (MODEL_KINDS, evaluate_model, predict_any, prepare_data,
                          run_rq1, run_rq2, run_rq3, train_model, verify_theorems)

__version__ = "0.1.0"
