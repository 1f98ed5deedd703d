"""Synthetic fairness test data from two overlapping categorical datasets."""

from .classifiers import CategoricalDecisionTree, CategoricalRandomForest, predict, train_forest, train_tree
from .estimation import (
    IndependenceGivenOverlap,
    IndependentModel,
    JointModel,
    MarginalPreservation,
    fit_independence_given_overlap,
    fit_independent,
    fit_marginal_preservation,
    joint_cell_probability,
    log_likelihood,
)
from .latent import LatentNaiveBayes, fit_latent_nb
from .sampling import sample
from .schema import (
    DataTable,
    DiscretizationConfig,
    Schema,
    SchemaError,
    SeparationSpec,
    holdout_split,
    load_csv,
    separate_columns,
)

__version__ = "0.1.0"
