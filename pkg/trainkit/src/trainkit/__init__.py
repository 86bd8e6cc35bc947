"""trainkit: slice-classifier training for the osteopipe pipeline."""

from .config import TrainConfig, load_config
from .data import check_split_integrity, rank_auc, read_manifest
from .export import compute_embeddings, export_confidences, export_torchscript
from .losses import cross_entropy, focal_loss
from .models import build_model, layer_groups
from .train import TrainResult, train

__version__ = "0.1.0"
