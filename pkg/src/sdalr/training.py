"""Source pre-training, target adaptation and evaluation loops."""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentParams
from .errors import ConfigError, DataError, TrainingError
from .losses import UNRELIABLE, LossBundle, source_ce, target_objective
from .network import EncoderConfig, SDALRNet, init_target_from_source, predict, save_checkpoint
from .pseudo_label import assign_labels, rebalance
from .signals import DomainDataset

log = logging.getLogger(__name__)


@dataclass
class AdaptationConfig:
    alpha: float = 0.1
    beta: float = 0.6
    threshold: float = 0.6
    batch_size: int = 64
    source_lr: float = 7e-3
    source_epochs: int = 10
    target_lr: float = 5e-4
    target_epochs: int = 20
    momentum: float = 0.9
    weight_decay: float = 1e-3
    lr_gamma: float = 10.0
    lr_power: float = 0.75
    refresh_every: int | None = 1  # epochs between pseudo-label refreshes; None labels once
    use_lsc: bool = True
    use_im: bool = True
    use_car: bool = True
    use_voting: bool = True
    use_uem: bool = True
    rebalance: bool = True
    freeze_classifier: bool = True
    normalize_car: bool = True
    zero_fraction: float = 0.1
    flip_mode: str = "time"
    val_fraction: float = 0.2
    strict_determinism: bool = False
    seed: int = 0

    def validate(self) -> "AdaptationConfig":
        for name in ("source_lr", "target_lr", "batch_size", "source_epochs", "target_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.refresh_every is not None and self.refresh_every < 1:
            raise ConfigError("refresh_every must be >= 1 or null")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        self.augment_params().validate()
        return self

    def augment_params(self) -> AugmentParams:
        return AugmentParams(zero_fraction=self.zero_fraction, flip_mode=self.flip_mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "AdaptationConfig":
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown adaptation keys: {sorted(unknown)}")
        return cls(**d).validate()

    def replace(self, **changes) -> "AdaptationConfig":
        return dataclasses.replace(self, **changes).validate()

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def lr_at(lr0: float, progress: float, gamma: float = 10.0, power: float = 0.75) -> float:
    """Decayed rate ``lr0 * (1 + gamma * p) ** -power`` for progress ``p`` in [0, 1]."""
    return lr0 * (1.0 + gamma * progress) ** (-power)


def _set_lr(opt, lr):
    for group in opt.param_groups:
        group["lr"] = lr


@contextlib.contextmanager
def _determinism(strict: bool):
    if not strict:
        yield
        return
    prev = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev)


class MetricsLog:
    """Per-step metrics kept in memory and, with a run directory, appended as JSON lines."""

    def __init__(self, path: Path | None = None):
        self.rows: list[dict] = []
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("")

    def append(self, row: dict):
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(row) + "\n")


@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray  # counts, rows = true class

    def normalized_confusion(self) -> np.ndarray:
        rows = self.confusion.sum(1, keepdims=True)
        return np.divide(self.confusion, rows, out=np.zeros(self.confusion.shape), where=rows > 0)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": self.per_class.tolist(),
            "confusion": self.confusion.tolist(),
        }


def confusion_from_predictions(truth, pred, num_classes: int) -> EvalResult:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    support = cm.sum(1)
    per_class = np.divide(np.diag(cm), support, out=np.full(num_classes, np.nan), where=support > 0)
    acc = float(np.trace(cm) / max(len(truth), 1))
    return EvalResult(acc, per_class, cm)


def evaluate(model: SDALRNet, dataset: DomainDataset, batch_size: int = 256) -> EvalResult:
    if not dataset.is_labeled:
        raise DataError(f"cannot evaluate on unlabeled domain {dataset.domain_id}")
    if dataset.class_count != model.num_classes:
        raise ConfigError(f"model has {model.num_classes} classes, dataset {dataset.domain_id} has {dataset.class_count}")
    _, probs = predict(model, dataset.waveforms, batch_size)
    return confusion_from_predictions(dataset.labels, probs.argmax(1), dataset.class_count)


def stratified_split(labels: np.ndarray, val_fraction: float, rng: np.random.Generator):
    train, val = [], []
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        n_val = int(round(val_fraction * len(idx)))
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def _batches(n: int, batch_size: int, gen: torch.Generator):
    perm = torch.randperm(n, generator=gen).numpy()
    for i in range(0, n, batch_size):
        idx = perm[i : i + batch_size]
        if len(idx) > 1:  # batch norm needs two rows
            yield idx


def train_source(
    dataset: DomainDataset,
    config: AdaptationConfig = AdaptationConfig(),
    *,
    encoder: EncoderConfig = EncoderConfig(),
    run_dir=None,
) -> SDALRNet:
    """Supervised cross-entropy training on a labeled source domain.

    A stratified ``val_fraction`` split is held out for monitoring; the loss
    and validation traces end up in ``model.meta["history"]``.
    """
    if not dataset.is_labeled:
        raise DataError(f"source domain {dataset.domain_id} is unlabeled")
    config.validate()
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)

    if config.val_fraction > 0:
        train_idx, val_idx = stratified_split(dataset.labels, config.val_fraction, rng)
    else:
        train_idx, val_idx = np.arange(len(dataset)), np.array([], dtype=np.int64)
    x = torch.from_numpy(dataset.waveforms[train_idx])
    y = torch.from_numpy(dataset.labels[train_idx])
    val = dataset.subset(val_idx) if len(val_idx) else None

    model = SDALRNet(dataset.class_count, dataset.window_len, encoder)
    opt = torch.optim.SGD(model.parameters(), lr=config.source_lr, momentum=config.momentum, weight_decay=config.weight_decay)
    n_batches = max(1, sum(1 for _ in range(0, len(x), config.batch_size)))
    total_steps = config.source_epochs * n_batches
    metrics = MetricsLog(Path(run_dir) / "source_metrics.jsonl" if run_dir else None)
    history = {"loss": [], "val_acc": []}

    step = 0
    with _determinism(config.strict_determinism):
        for epoch in range(config.source_epochs):
            model.train()
            for idx in _batches(len(x), config.batch_size, gen):
                lr = lr_at(config.source_lr, step / total_steps, config.lr_gamma, config.lr_power)
                _set_lr(opt, lr)
                _, probs = model(x[idx])
                loss = source_ce(probs, y[idx])
                if not torch.isfinite(loss):
                    raise TrainingError(f"source loss diverged at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                history["loss"].append(loss.item())
                metrics.append({"epoch": epoch, "step": step, "lr": lr, "loss": loss.item()})
                step += 1
            if val is not None:
                acc = evaluate(model, val).accuracy
                history["val_acc"].append(acc)
                log.info("source epoch %d: loss %.4f val acc %.4f", epoch, history["loss"][-1], acc)

    model.eval()
    model.meta = {
        "stage": "source",
        "domain": dataset.domain_id,
        "epoch": config.source_epochs,
        "config_hash": config.digest(),
        "history": history,
    }
    if run_dir:
        save_checkpoint(model, Path(run_dir) / "source.pt")
    return model


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    source_domain: str = ""
    target_domain: str = ""
    epochs: list[dict] = field(default_factory=list)
    source_only: dict | None = None
    final: dict | None = None
    wall_time: float = 0.0

    @property
    def final_accuracy(self) -> float | None:
        return None if self.final is None else self.final["accuracy"]

    @property
    def source_accuracy(self) -> float | None:
        return None if self.source_only is None else self.source_only["accuracy"]

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2))
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text()))


def _needs_refresh(epoch: int, every: int | None) -> bool:
    if every is None:
        return epoch == 0
    return epoch % every == 0


def adapt_target(
    source: SDALRNet,
    target: DomainDataset,
    config: AdaptationConfig = AdaptationConfig(),
    *,
    run_dir=None,
    eval_data: DomainDataset | None = None,
) -> tuple[SDALRNet, RunRecord]:
    """Adapt a copy of ``source`` to the unlabeled ``target`` domain.

    Labels on ``target`` are ignored for training; they (or ``eval_data``)
    are only used to score pseudo-labels and accuracy in the run record.
    """
    config.validate()
    if target.class_count != source.num_classes:
        raise ConfigError(f"source model has {source.num_classes} classes, target has {target.class_count}")
    t0 = time.perf_counter()
    run_dir = Path(run_dir) if run_dir else None
    eval_data = eval_data if eval_data is not None else (target if target.is_labeled else None)
    truth = target.labels
    unlabeled = target.without_labels()

    model = init_target_from_source(source, target.class_count)
    for p in model.classifier.parameters():
        p.requires_grad_(not config.freeze_classifier)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.SGD(params, lr=config.target_lr, momentum=config.momentum, weight_decay=config.weight_decay)

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    refresh_seeds = seeds[0]
    balance_rng = np.random.default_rng(seeds[1])
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    aug = config.augment_params()

    record = RunRecord(config=config.to_dict(), config_hash=config.digest(),
                       source_domain=str(source.meta.get("domain", "")), target_domain=target.domain_id)
    if eval_data is not None:
        record.source_only = evaluate(source, eval_data).to_dict()
    metrics = MetricsLog(run_dir / "metrics.jsonl" if run_dir else None)
    aug_state = balanced = assignment = None
    step = 0

    with _determinism(config.strict_determinism):
        for epoch in range(config.target_epochs):
            if _needs_refresh(epoch, config.refresh_every):
                refresh_rng = np.random.default_rng(refresh_seeds.spawn(1)[0])
                assignment = assign_labels(model, unlabeled, config.threshold, refresh_rng,
                                           use_voting=config.use_voting, params=aug)
                balanced = rebalance(unlabeled, assignment, balance_rng, params=aug, enabled=config.rebalance)
                keep = np.ones(len(balanced), dtype=bool) if config.use_uem else balanced.labels != UNRELIABLE
                aug_state = (torch.from_numpy(balanced.waveforms[keep]), torch.from_numpy(balanced.labels[keep]))
            x, y = aug_state
            if len(x) < 2:
                raise TrainingError("fewer than two training rows after pseudo-labeling")

            model.train()
            n_batches = max(1, -(-len(x) // config.batch_size))
            sums = LossBundle()
            seen = 0
            for b, idx in enumerate(_batches(len(x), config.batch_size, gen)):
                progress = (epoch + b / n_batches) / config.target_epochs
                lr = lr_at(config.target_lr, progress, config.lr_gamma, config.lr_power)
                _set_lr(opt, lr)
                feats, probs = model(x[idx])
                total, bundle = target_objective(
                    probs, feats, y[idx], alpha=config.alpha, beta=config.beta,
                    use_lsc=config.use_lsc, use_im=config.use_im, use_car=config.use_car,
                    use_uem=config.use_uem, normalize_car=config.normalize_car,
                )
                if not torch.isfinite(total):
                    raise TrainingError(f"adaptation loss diverged at epoch {epoch}, step {step}")
                opt.zero_grad()
                total.backward()
                opt.step()
                metrics.append({"epoch": epoch, "step": step, "lr": lr, **bundle.to_dict()})
                for name in ("l_lsc", "l_uem", "l_ent", "l_div", "l_car"):
                    setattr(sums, name, getattr(sums, name) + getattr(bundle, name))
                sums.n_reliable += bundle.n_reliable
                sums.n_unreliable += bundle.n_unreliable
                seen += 1
                step += 1

            row = {
                "epoch": epoch,
                "lr": lr,
                "losses": {k: v / max(seen, 1) if k.startswith("l_") else v for k, v in sums.to_dict().items()},
                "reliable_fraction": assignment.num_reliable / len(unlabeled),
                "balanced_size": len(balanced),
                "duplicates": int(balanced.is_duplicate.sum()),
            }
            if truth is not None:
                row["pseudo_label_accuracy"] = assignment.accuracy(truth)
                row["argmax_accuracy"] = float((assignment.probs.argmax(1) == truth).mean())
            if eval_data is not None and eval_data is not target:
                # on the target itself, argmax_accuracy at the next refresh already tracks this
                row["test_accuracy"] = evaluate(model, eval_data).accuracy
            record.epochs.append(row)
            record.wall_time = time.perf_counter() - t0
            log.info("adapt epoch %d: %s", epoch, {k: v for k, v in row.items() if k != "losses"})
            if run_dir:
                record.save(run_dir / "run_record.json")

    model.eval()
    model.meta = dict(source.meta, stage="target", domain=target.domain_id, epoch=config.target_epochs,
                      config_hash=config.digest(), history=None)
    if eval_data is not None:
        record.final = evaluate(model, eval_data).to_dict()
    record.wall_time = time.perf_counter() - t0
    if run_dir:
        record.save(run_dir / "run_record.json")
        save_checkpoint(model, run_dir / "target.pt")
    return model, record
