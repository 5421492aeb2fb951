"""1-D ResNet-18 feature encoder with a weight-normalized linear head."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 1
    stem_channels: int = 64
    stem_kernel: int = 7
    stem_stride: int = 2
    stage_channels: tuple[int, ...] = (64, 128, 256, 512)
    stage_strides: tuple[int, ...] = (1, 2, 2, 2)
    blocks_per_stage: int = 2
    dropout: float = 0.1
    feature_dim: int = 256
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("stage_channels", "stage_strides"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class BasicBlock(nn.Module):
    def __init__(self, c_in, c_out, stride, eps, momentum):
        super().__init__()
        self.conv1 = nn.Conv1d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm1d(c_out, eps=eps, momentum=momentum)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm1d(c_out, eps=eps, momentum=momentum)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv1d(c_in, c_out, 1, stride, bias=False),
                nn.BatchNorm1d(c_out, eps=eps, momentum=momentum),
            )

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class ResNet1dEncoder(nn.Module):
    """Stem (conv + BN) -> four residual stages -> avg pool -> dropout -> FC -> BN."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        eps, mom = cfg.bn_eps, cfg.bn_momentum
        self.stem = nn.Sequential(
            nn.Conv1d(cfg.in_channels, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride, cfg.stem_kernel // 2, bias=False),
            nn.BatchNorm1d(cfg.stem_channels, eps=eps, momentum=mom),
        )
        stages, c_in = [], cfg.stem_channels
        for c_out, stride in zip(cfg.stage_channels, cfg.stage_strides):
            blocks = [BasicBlock(c_in, c_out, stride, eps, mom)]
            blocks += [BasicBlock(c_out, c_out, 1, eps, mom) for _ in range(cfg.blocks_per_stage - 1)]
            stages.append(nn.Sequential(*blocks))
            c_in = c_out
        self.stages = nn.ModuleList(stages)
        self.pool = nn.AdaptiveAvgPool1d(1)
        self.dropout = nn.Dropout(cfg.dropout)
        self.fc = nn.Linear(c_in, cfg.feature_dim)
        self.bn = nn.BatchNorm1d(cfg.feature_dim, eps=eps, momentum=mom)

    def stage_outputs(self, x):
        """Activations after the stem and after each stage (for shape checks)."""
        outs = [self.stem(x)]
        for stage in self.stages:
            outs.append(stage(outs[-1]))
        return outs

    def forward(self, x):
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        x = self.dropout(self.pool(x).flatten(1))
        return self.bn(self.fc(x))


class WeightNormLinear(nn.Module):
    """Linear layer whose row ``k`` is ``g_k * v_k / ||v_k||``."""

    def __init__(self, in_features, out_features):
        super().__init__()
        v = torch.empty(out_features, in_features)
        nn.init.kaiming_uniform_(v, a=5**0.5)
        self.v = nn.Parameter(v)
        self.g = nn.Parameter(v.norm(dim=1).detach().clone())
        bound = 1 / in_features**0.5
        self.bias = nn.Parameter(torch.empty(out_features).uniform_(-bound, bound))

    def weight(self):
        return self.g[:, None] * self.v / self.v.norm(dim=1, keepdim=True)

    def forward(self, x):
        return F.linear(x, self.weight(), self.bias)


class SDALRNet(nn.Module):
    """Encoder ``f`` plus classifier ``g``; ``meta`` carries checkpoint provenance."""

    def __init__(self, num_classes: int, window_len: int, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        if num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        self.num_classes = int(num_classes)
        self.window_len = int(window_len)
        self.cfg = cfg
        self.encoder = ResNet1dEncoder(cfg)
        self.classifier = WeightNormLinear(cfg.feature_dim, num_classes)
        self.meta: dict = {}

    def _prepare(self, x):
        x = torch.as_tensor(x)
        if x.dim() == 2:
            x = x[:, None, :]
        if x.dim() != 3 or x.shape[1] != self.cfg.in_channels or x.shape[2] != self.window_len:
            raise DataError(
                f"expected batch of shape (B, {self.window_len}) or (B, {self.cfg.in_channels}, {self.window_len}), "
                f"got {tuple(x.shape)}"
            )
        p = next(self.parameters())
        return x.to(dtype=p.dtype, device=p.device)

    def features(self, x):
        return self.encoder(self._prepare(x))

    def logits(self, x):
        return self.classifier(self.features(x))

    def forward(self, x):
        feats = self.features(x)
        return feats, F.softmax(self.classifier(feats), dim=1)

    def signature(self) -> dict:
        return {"num_classes": self.num_classes, "window_len": self.window_len, "encoder": self.cfg.digest()}


def forward_features(model: SDALRNet, batch) -> torch.Tensor:
    return model.features(batch)


def forward_probs(model: SDALRNet, batch) -> torch.Tensor:
    return F.softmax(model.logits(batch), dim=1)


@torch.no_grad()
def predict(model: SDALRNet, waveforms: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode features and probabilities for a whole array, as numpy."""
    was_training = model.training
    model.eval()
    feats, probs = [], []
    try:
        for i in range(0, len(waveforms), batch_size):
            f, p = model(torch.from_numpy(np.array(waveforms[i : i + batch_size], dtype=np.float32)))
            feats.append(f.cpu().numpy())
            probs.append(p.cpu().numpy())
    finally:
        model.train(was_training)
    if not feats:
        return np.zeros((0, model.cfg.feature_dim)), np.zeros((0, model.num_classes))
    return np.concatenate(feats), np.concatenate(probs)


def init_target_from_source(source: SDALRNet, num_classes: int | None = None, encoder: EncoderConfig | None = None) -> SDALRNet:
    """Independent deep copy of a trained source model."""
    if num_classes is not None and num_classes != source.num_classes:
        raise ConfigError(f"source model has {source.num_classes} classes, target needs {num_classes}")
    if encoder is not None and encoder != source.cfg:
        raise ConfigError("encoder configuration differs from the source checkpoint")
    target = copy.deepcopy(source)
    target.meta = dict(source.meta, initialized_from=source.meta.get("domain"))
    return target


def save_checkpoint(model: SDALRNet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "state_dict": model.state_dict(),
            "num_classes": model.num_classes,
            "window_len": model.window_len,
            "encoder": model.cfg.to_dict(),
            "config_hash": model.cfg.digest(),
            "meta": model.meta,
        },
        path,
    )
    return path


def load_checkpoint(path, *, num_classes: int | None = None, encoder: EncoderConfig | None = None) -> SDALRNet:
    """Load a checkpoint, refusing one built for a different architecture."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} not found")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    cfg = EncoderConfig.from_dict(blob["encoder"])
    if cfg.digest() != blob["config_hash"]:
        raise ConfigError(f"checkpoint {path} has an inconsistent config hash")
    if num_classes is not None and num_classes != blob["num_classes"]:
        raise ConfigError(f"checkpoint {path} has {blob['num_classes']} classes, expected {num_classes}")
    if encoder is not None and encoder.digest() != blob["config_hash"]:
        raise ConfigError(f"checkpoint {path} was built with a different encoder configuration")
    model = SDALRNet(blob["num_classes"], blob["window_len"], cfg)
    model.load_state_dict(blob["state_dict"])
    model.meta = dict(blob.get("meta") or {})
    model.eval()
    return model
