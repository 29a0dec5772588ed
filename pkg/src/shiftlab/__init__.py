"""Context-shift datasets, shift metrics, and batch-balanced training."""

from .balance import BalanceConfig, balance_loss, balance_loss_grad, binarize_features, optimize_weights, project_simplex
from .data import ContextDataset, Split, SplitSpec, SynthParams, generate_synthetic, load_dataset, make_split, validate_split
from .metrics import accuracy, ni_index, pearson
from .net import LayerSpec, Network, NetworkConfig, build_network, forward, loss_and_grad, sgd_step
from .train import RunReport, TrainConfig, evaluate, train_cnbb, train_erm

__version__ = "0.1.0"
