"""Training loop covering the scratch baseline and the three
transfer-learning strategies.

* scratch / FT: every parameter trains from the start.  FT uses cosine
  annealing over [1e-5, 1e-6] (T_max 50) with early stopping after 5
  epochs without validation-AUC improvement.
* LP-FT: only the classification head trains first, with plateau halving
  of the learning rate (patience 3, floor 1e-6).  Five stagnant epochs
  unfreeze the whole network, which then continues like FT.
* G-LF: starts like LP-FT but unfreezes one backbone block at a time
  (last to first) on each 5-epoch stagnation, until all blocks are active
  or early stopping fires.

Every run writes a JSONL log (epoch metrics, unfreeze events), a native
checkpoint of the best-validation-AUC weights and a TorchScript export.
"""
from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch.optim import Adam
from torch.optim.lr_scheduler import CosineAnnealingLR, ReduceLROnPlateau

from .config import TrainConfig
from .data import build_loaders, rank_auc, read_manifest
from .export import CLASS_ORDER, export_torchscript
from .losses import make_loss
from .models import build_model, head_module, layer_groups

log = logging.getLogger(__name__)

STAGNATION_EPOCHS = 5  # epochs without val-AUC improvement before reacting
PLATEAU_PATIENCE = 3
MIN_LR = 1e-6
COSINE_T_MAX = 50


@dataclass
class TrainResult:
    model_path: Path
    checkpoint_path: Path
    log_path: Path
    best_val_auc: float
    epochs_run: int


class _RunLog:
    def __init__(self, path: Path):
        self.path = path
        self.fh = open(path, "w")

    def write(self, **event) -> None:
        self.fh.write(json.dumps(event) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed & (2**32 - 1))
    torch.manual_seed(seed)


def _set_trainable(params, flag: bool) -> None:
    for p in params:
        p.requires_grad = flag


def _trainable_stats(model, group_names):
    count = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return count, group_names


@torch.no_grad()
def _validate(model, loader, device) -> float:
    model.eval()
    scores, labels = [], []
    for x, y in loader:
        logits = model(x.to(device))
        probs = torch.softmax(logits, dim=1)[:, 1]
        scores.extend(probs.cpu().numpy().tolist())
        labels.extend(y.numpy().tolist())
    return rank_auc(np.array(scores), np.array(labels))


def train(cfg: TrainConfig, manifest_path: str | Path, out_dir: str | Path) -> TrainResult:
    """Run one experiment configuration end to end."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _seed_everything(cfg.seed)
    device = torch.device("cpu")

    records = read_manifest(manifest_path)
    train_loader, val_loader = build_loaders(records, cfg.batch_size, cfg.seed)

    model = build_model(cfg.model, pretrained=cfg.pretrained and cfg.strategy != "scratch")
    model.to(device)
    loss_fn = make_loss(cfg.loss)
    groups = layer_groups(model, cfg.model)
    head = head_module(model, cfg.model)

    head_only = cfg.strategy in ("LP-FT", "G-LF")
    if head_only:
        for _, params in groups:
            _set_trainable(params, False)
        unfrozen: list[str] = []  # backbone groups currently training
    else:
        unfrozen = [name for name, _ in groups]
    pending = [name for name, _ in reversed(groups)] if cfg.strategy == "G-LF" else []

    def rebuild_optimizer(lr: float):
        params = [p for p in model.parameters() if p.requires_grad]
        return Adam(params, lr=lr)

    optimizer = rebuild_optimizer(cfg.lr)
    phase = "head" if head_only else "all"
    if cfg.strategy in ("FT",) or cfg.strategy == "scratch":
        scheduler = (
            CosineAnnealingLR(optimizer, T_max=COSINE_T_MAX, eta_min=MIN_LR)
            if cfg.strategy == "FT"
            else None
        )
    else:
        scheduler = ReduceLROnPlateau(
            optimizer, mode="max", factor=0.5, patience=PLATEAU_PATIENCE, min_lr=MIN_LR
        )

    run_log = _RunLog(out_dir / "log.jsonl")
    run_log.write(event="config", **asdict(cfg), configuration_id=cfg.configuration_id)

    best_auc = -1.0
    best_state = None
    stagnation = 0
    epochs_run = 0
    group_params = dict(groups)

    for epoch in range(cfg.resolved_epochs):
        epochs_run = epoch + 1
        model.train()
        total_loss, batches = 0.0, 0
        for x, y in train_loader:
            optimizer.zero_grad()
            loss = loss_fn(model(x.to(device)), y.to(device))
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach())
            batches += 1

        val_auc = _validate(model, val_loader, device)
        lr = optimizer.param_groups[0]["lr"]
        count, names = _trainable_stats(model, ["head"] + unfrozen)
        run_log.write(
            event="epoch",
            epoch=epoch,
            train_loss=total_loss / max(batches, 1),
            val_auc=val_auc,
            lr=lr,
            trainable_params=count,
            trainable_groups=names,
        )

        if isinstance(scheduler, ReduceLROnPlateau):
            scheduler.step(val_auc)
        elif scheduler is not None:
            scheduler.step()

        if val_auc > best_auc + 1e-6:
            best_auc = val_auc
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stagnation = 0
        else:
            stagnation += 1

        if stagnation < STAGNATION_EPOCHS or cfg.strategy == "scratch":
            continue

        # five stagnant epochs: react per strategy
        if cfg.strategy == "FT" or phase == "all":
            run_log.write(event="early_stop", epoch=epoch, best_val_auc=best_auc)
            break
        if cfg.strategy == "LP-FT":
            for _, params in groups:
                _set_trainable(params, True)
            unfrozen = [name for name, _ in groups]
            phase = "all"
            optimizer = rebuild_optimizer(cfg.lr)
            scheduler = CosineAnnealingLR(optimizer, T_max=COSINE_T_MAX, eta_min=MIN_LR)
            stagnation = 0
            run_log.write(event="unfreeze", epoch=epoch, scope="all")
        elif cfg.strategy == "G-LF":
            if pending:
                name = pending.pop(0)
                _set_trainable(group_params[name], True)
                unfrozen.append(name)
                if not pending:
                    phase = "all"
                optimizer = rebuild_optimizer(optimizer.param_groups[0]["lr"])
                scheduler = ReduceLROnPlateau(
                    optimizer, mode="max", factor=0.5, patience=PLATEAU_PATIENCE, min_lr=MIN_LR
                )
                stagnation = 0
                run_log.write(event="unfreeze", epoch=epoch, scope=name)
            else:
                run_log.write(event="early_stop", epoch=epoch, best_val_auc=best_auc)
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    checkpoint_path = out_dir / "model.ckpt"
    torch.save(
        {
            "model": cfg.model,
            "state_dict": model.state_dict(),
            "class_order": CLASS_ORDER,
            "config": asdict(cfg),
        },
        checkpoint_path,
    )
    model_path = out_dir / "model.pt"
    export_torchscript(model, model_path)
    run_log.write(
        event="done", epochs_run=epochs_run, best_val_auc=best_auc,
        model=str(model_path), checkpoint=str(checkpoint_path),
    )
    run_log.close()
    return TrainResult(
        model_path=model_path,
        checkpoint_path=checkpoint_path,
        log_path=out_dir / "log.jsonl",
        best_val_auc=best_auc,
        epochs_run=epochs_run,
    )
