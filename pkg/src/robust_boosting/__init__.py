"""Boosted decision stumps and trees trained and certified against l-inf perturbations."""
__version__ = "0.1.0"

from .attack import AttackConfig, AttackResult, cube_attack, cube_attack_batch, min_radius_estimate
from .certify import (MultiClassModel, RobustnessReport, certify_multiclass, evaluate,
                      exact_margin_oracle)
from .dataset import PreparedTask, RawDataset, load_dataset, prepare_task
from .errors import (BadFraction, DimensionMismatch, EmptyDataset, EmptyReachableSet,
                     InconsistentWidth, ParseError, RobustBoostingError, SchemaError,
                     TooManyCells, UnknownClass, UnsupportedVersion)
from .loss import LossKind, WeightedCase, fit_leaf_weights, margin_loss
from .model_io import export_report, load_model, save_model
from .stumps import (CertResult, Stump, StumpBooster, StumpEnsemble, boost_round_stumps,
                     certify_stumps_exact, fit_stump, min_perturbation_stumps)
from .training import TrainConfig, train
from .trees import (Tree, TreeBooster, TreeEnsemble, TreeNode, boost_round_trees,
                    build_robust_tree, certify_trees_bound, fit_robust_split, prune_tree,
                    tree_min_margin)
