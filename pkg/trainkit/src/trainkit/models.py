"""Model builders for the DenseNet/ResNet families with a 2-class head,
plus the layer grouping used by gradual unfreezing and the backbone
feature extractor used for embeddings.
"""
from __future__ import annotations

import logging

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

log = logging.getLogger(__name__)

_BUILDERS = {
    "densenet121": (torchvision.models.densenet121, "DenseNet121_Weights"),
    "densenet169": (torchvision.models.densenet169, "DenseNet169_Weights"),
    "resnet18": (torchvision.models.resnet18, "ResNet18_Weights"),
    "resnet50": (torchvision.models.resnet50, "ResNet50_Weights"),
}


def build_model(name: str, pretrained: bool = True) -> nn.Module:
    """Torchvision backbone with the classification head replaced by a
    2-class linear layer (class order healthy, tumor).

    When pretrained weights cannot be fetched (offline environments) the
    model falls back to random initialization with a warning.
    """
    if name not in _BUILDERS:
        raise ValueError(f"unknown model {name!r}")
    builder, weights_enum = _BUILDERS[name]
    weights = None
    if pretrained:
        try:
            weights = getattr(torchvision.models, weights_enum).IMAGENET1K_V1
            model = builder(weights=weights)
        except Exception as exc:  # weight download unavailable
            log.warning("pretrained weights unavailable (%s); using random init", exc)
            model = builder(weights=None)
    else:
        model = builder(weights=None)

    if name.startswith("densenet"):
        model.classifier = nn.Linear(model.classifier.in_features, 2)
    else:
        model.fc = nn.Linear(model.fc.in_features, 2)
    return model


def head_module(model: nn.Module, name: str) -> nn.Module:
    return model.classifier if name.startswith("densenet") else model.fc


def feature_width(model: nn.Module, name: str) -> int:
    return head_module(model, name).in_features


def layer_groups(model: nn.Module, name: str) -> list[tuple[str, list[nn.Parameter]]]:
    """Named backbone parameter groups ordered first (stem) to last.

    Gradual unfreezing walks this list in reverse; the classification
    head is not included.
    """
    groups: list[tuple[str, list[nn.Parameter]]] = []
    if name.startswith("densenet"):
        stem: list[nn.Parameter] = []
        for child_name, child in model.features.named_children():
            params = [p for p in child.parameters()]
            if not params:
                continue
            if child_name in ("conv0", "norm0"):
                stem.extend(params)
            else:
                groups.append((f"features.{child_name}", params))
        groups.insert(0, ("features.stem", stem))
    else:
        stem = list(model.conv1.parameters()) + list(model.bn1.parameters())
        groups.append(("stem", stem))
        for child_name in ("layer1", "layer2", "layer3", "layer4"):
            groups.append((child_name, list(getattr(model, child_name).parameters())))
    return groups


def backbone_features(model: nn.Module, name: str, x: torch.Tensor) -> torch.Tensor:
    """Global-average-pooled backbone features (the classification head
    removed), matching each architecture's own forward pass."""
    if name.startswith("densenet"):
        feat = model.features(x)
        feat = F.relu(feat, inplace=False)
        return F.adaptive_avg_pool2d(feat, 1).flatten(1)
    x = model.conv1(x)
    x = model.bn1(x)
    x = model.relu(x)
    x = model.maxpool(x)
    for layer in (model.layer1, model.layer2, model.layer3, model.layer4):
        x = layer(x)
    return model.avgpool(x).flatten(1)
