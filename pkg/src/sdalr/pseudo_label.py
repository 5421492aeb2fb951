"""Prototype pseudo-labels, augmentation ballots, majority vote and class rebalancing."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import augment
from .augment import BALLOT_KINDS, AugmentationKind, AugmentParams
from .errors import NoReliableLabelsError
from .losses import UNRELIABLE
from .network import SDALRNet, predict
from .signals import DomainDataset

log = logging.getLogger(__name__)

EMPTY_MASS = 1e-8


@dataclass(frozen=True)
class PrototypeSet:
    centers: np.ndarray  # (C, d)
    mass: np.ndarray  # (C,) soft sample count per class

    @property
    def feature_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def empty(self) -> np.ndarray:
        return self.mass < EMPTY_MASS

    def __len__(self):
        return len(self.centers)


def compute_prototypes(features, probs) -> PrototypeSet:
    """Probability-weighted feature mean per class."""
    features = np.asarray(features, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    mass = probs.sum(0)
    weighted = probs.T @ features
    empty = mass < EMPTY_MASS
    centers = np.divide(weighted, mass[:, None], out=np.zeros_like(weighted), where=~empty[:, None])
    return PrototypeSet(centers, mass)


def cosine_similarities(features, prototypes: PrototypeSet) -> np.ndarray:
    """``(N, C)`` cosine similarity; rows with zero norm come back as NaN."""
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    c = prototypes.centers
    fn = np.linalg.norm(f, axis=1, keepdims=True)
    cn = np.linalg.norm(c, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = (f @ c.T) / (fn * cn[None, :])
    return sims


def initial_labels(features, prototypes: PrototypeSet, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized thresholded nearest-prototype labels.

    Returns (labels, best similarity). EMPTY classes never win; ties go to
    the lowest class index; zero-norm features are unreliable.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    sims = cosine_similarities(f, prototypes)
    sims[:, prototypes.empty] = -np.inf
    sims = np.where(np.isnan(sims), -np.inf, sims)
    degenerate = (np.linalg.norm(f, axis=1) == 0) | ~np.isfinite(sims).any(1)
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} feature(s) with zero norm or no usable prototype marked unreliable")
    best = sims.argmax(1)
    top = sims[np.arange(len(sims)), best]
    labels = np.where((top > threshold) & ~degenerate, best, UNRELIABLE)
    return labels.astype(np.int64), np.where(degenerate, np.nan, top).astype(np.float64)


def initial_label(feature, prototypes: PrototypeSet, threshold: float) -> int:
    labels, _ = initial_labels(np.asarray(feature)[None, :], prototypes, threshold)
    return int(labels[0])


def vote(ballots) -> int:
    """Class holding a strict majority of all ``m`` ballots, else -1.

    Abstentions (-1) never win but still count toward ``m``.
    """
    ballots = [int(b) for b in ballots]
    m = len(ballots)
    if m < 1:
        raise ValueError("vote needs at least one ballot")
    counts: dict[int, int] = {}
    for b in ballots:
        if b != UNRELIABLE:
            counts[b] = counts.get(b, 0) + 1
    if not counts:
        return UNRELIABLE
    k, n = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
    return k if 2 * n > m else UNRELIABLE


def vote_matrix(ballots: np.ndarray, num_classes: int) -> np.ndarray:
    """Row-wise :func:`vote` over an ``(N, m)`` ballot matrix."""
    ballots = np.asarray(ballots, dtype=np.int64)
    m = ballots.shape[1]
    counts = np.stack([(ballots == k).sum(1) for k in range(num_classes)], axis=1)
    winner = counts.argmax(1)
    return np.where(2 * counts.max(1) > m, winner, UNRELIABLE).astype(np.int64)


@dataclass(frozen=True)
class PseudoLabelAssignment:
    labels: np.ndarray  # (N,), -1 for unreliable
    similarity: np.ndarray  # (N,) top cosine similarity of the original sample
    ballots: np.ndarray  # (N, m)
    prototypes: PrototypeSet
    probs: np.ndarray  # (N, C) eval-mode predictions on the original samples

    @property
    def reliable(self) -> np.ndarray:
        return self.labels != UNRELIABLE

    @property
    def num_reliable(self) -> int:
        return int(self.reliable.sum())

    def accuracy(self, truth) -> float:
        """Accuracy among reliable samples (NaN when none are reliable)."""
        mask = self.reliable
        if not mask.any():
            return float("nan")
        return float((self.labels[mask] == np.asarray(truth)[mask]).mean())


def assign_labels(
    model: SDALRNet,
    target: DomainDataset,
    threshold: float = 0.6,
    rng: np.random.Generator | int | None = 0,
    *,
    use_voting: bool = True,
    params: AugmentParams = AugmentParams(),
    batch_size: int = 256,
) -> PseudoLabelAssignment:
    """Refresh pseudo-labels for the whole target set.

    Prototypes come from the original windows only; each of the ``m = 4``
    ballots (original, flip, random zero, cyclic shift) is labeled against
    that same prototype set. With ``use_voting=False`` the original sample's
    ballot is final.
    """
    rng = np.random.default_rng(rng)
    x = target.waveforms
    feats, probs = predict(model, x, batch_size)
    protos = compute_prototypes(feats, probs)
    first, top = initial_labels(feats, protos, threshold)
    if not use_voting:
        return PseudoLabelAssignment(first, top, first[:, None], protos, probs)
    columns = [first]
    for kind in BALLOT_KINDS:
        variant = augment.augment_batch(x, kind, rng, params)
        vfeats, _ = predict(model, variant, batch_size)
        columns.append(initial_labels(vfeats, protos, threshold)[0])
    ballots = np.stack(columns, axis=1)
    labels = vote_matrix(ballots, target.class_count)
    return PseudoLabelAssignment(labels, top, ballots, protos, probs)


@dataclass(frozen=True)
class BalancedTargetSet:
    waveforms: np.ndarray  # (M, L)
    labels: np.ndarray  # (M,), -1 for unreliable rows
    is_duplicate: np.ndarray  # (M,) bool
    augmentation: tuple[str | None, ...]
    origin: np.ndarray  # (M,) index into the target dataset

    def __len__(self):
        return len(self.labels)

    def class_counts(self, num_classes: int) -> np.ndarray:
        rel = self.labels[self.labels != UNRELIABLE]
        return np.bincount(rel, minlength=num_classes)

    @property
    def num_unreliable(self) -> int:
        return int((self.labels == UNRELIABLE).sum())


def rebalance(
    target: DomainDataset,
    labels: PseudoLabelAssignment | np.ndarray,
    rng: np.random.Generator | int | None = 0,
    *,
    params: AugmentParams = AugmentParams(),
    enabled: bool = True,
) -> BalancedTargetSet:
    """Top every reliable class up to the largest reliable class.

    Duplicates are drawn with replacement from the class's own members and
    each gets exactly one randomly chosen augmentation. Unreliable samples
    are appended unchanged.
    """
    rng = np.random.default_rng(rng)
    lab = labels.labels if isinstance(labels, PseudoLabelAssignment) else np.asarray(labels, dtype=np.int64)
    reliable_idx = np.flatnonzero(lab != UNRELIABLE)
    if reliable_idx.size == 0:
        raise NoReliableLabelsError()
    counts = np.bincount(lab[reliable_idx], minlength=target.class_count)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        warnings.warn(f"classes {empty.tolist()} have no reliable pseudo-labels and cannot be rebalanced")

    waves = [target.waveforms[reliable_idx]]
    out_labels = [lab[reliable_idx]]
    origin = [reliable_idx]
    dup_flags = [np.zeros(reliable_idx.size, dtype=bool)]
    kinds: list[str | None] = [None] * reliable_idx.size

    if enabled:
        goal = counts.max()
        for k in np.flatnonzero(counts):
            need = goal - counts[k]
            if need == 0:
                continue
            members = reliable_idx[lab[reliable_idx] == k]
            picks = rng.choice(members, size=need, replace=True)
            chosen = rng.integers(0, len(BALLOT_KINDS), size=need)
            dup = np.stack(
                [augment.apply(BALLOT_KINDS[c], target.waveforms[i], rng, params) for i, c in zip(picks, chosen)]
            )
            waves.append(dup)
            out_labels.append(np.full(need, k))
            origin.append(picks)
            dup_flags.append(np.ones(need, dtype=bool))
            kinds.extend(BALLOT_KINDS[c].value for c in chosen)

    unreliable_idx = np.flatnonzero(lab == UNRELIABLE)
    waves.append(target.waveforms[unreliable_idx])
    out_labels.append(np.full(unreliable_idx.size, UNRELIABLE))
    origin.append(unreliable_idx)
    dup_flags.append(np.zeros(unreliable_idx.size, dtype=bool))
    kinds.extend([None] * unreliable_idx.size)

    return BalancedTargetSet(
        np.concatenate(waves).astype(np.float32, copy=False),
        np.concatenate(out_labels).astype(np.int64),
        np.concatenate(dup_flags),
        tuple(kinds),
        np.concatenate(origin).astype(np.int64),
    )


__all__ = [
    "AugmentationKind",
    "BalancedTargetSet",
    "PrototypeSet",
    "PseudoLabelAssignment",
    "assign_labels",
    "compute_prototypes",
    "cosine_similarities",
    "initial_label",
    "initial_labels",
    "rebalance",
    "vote",
    "vote_matrix",
]
