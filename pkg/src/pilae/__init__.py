"""Stacked autoencoders trained in closed form with pseudoinverses."""
from .baseline import BaselineConfig, baseline_bp_train
from .data_io import Dataset, load_csv, load_idx, load_idx_dir, load_model, save_model
from .errors import (
    ChecksumError,
    DivergenceError,
    ModelFormatError,
    NumericalError,
    ParseError,
    PilaeError,
    ShapeChainError,
    TrainingError,
    VersionError,
)
from .layer import Activation, AutoencoderLayer, LayerConfig, WidthRule, select_width, train_layer
from .matcore import identity_distance, pinv, ridge_pinv, svd, truncated_pinv
from .readout import ReadoutHead, fit_shln, fit_softmax_head, fit_width_regression, estimate_last_width
from .report import RunReport
from .runner import bench, evaluate, sweep, train_model
from .stack import StackConfig, StackedNetwork, grow_stack, transform

__version__ = "0.1.0"
