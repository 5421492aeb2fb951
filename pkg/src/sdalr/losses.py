"""Source and target-adaptation objectives.

Every function takes softmax probabilities (or encoder features) as torch
tensors plus a pseudo-label vector in which ``-1`` marks an unreliable
sample. Reductions are means over the contributing rows; a term with no
contributing rows is an exact zero that still participates in autograd.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

UNRELIABLE = -1
EPS = 1e-12


def _log(p):
    return torch.log(p.clamp_min(EPS))


def _labels(labels, device=None) -> torch.Tensor:
    return torch.as_tensor(labels, dtype=torch.long, device=device).reshape(-1)


def _zero(ref: torch.Tensor) -> torch.Tensor:
    return ref.sum() * 0.0


def source_ce(probs: torch.Tensor, labels) -> torch.Tensor:
    """Mean negative log-probability of the true class."""
    labels = _labels(labels, probs.device)
    C = probs.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    return -_log(probs.gather(1, labels[:, None])).mean()


def smooth_targets(labels, num_classes: int, alpha: float) -> torch.Tensor:
    """``(1 - alpha) * onehot + alpha / C``."""
    labels = _labels(labels)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("smooth_targets needs reliable labels in [0, C); filter -1 first")
    q = torch.full((labels.numel(), num_classes), alpha / num_classes, dtype=torch.float64)
    q[torch.arange(labels.numel()), labels] += 1.0 - alpha
    return q


def lsc_loss(probs: torch.Tensor, pseudo, alpha: float = 0.1) -> torch.Tensor:
    pseudo = _labels(pseudo, probs.device)
    mask = pseudo != UNRELIABLE
    if not mask.any():
        return _zero(probs)
    q = smooth_targets(pseudo[mask].cpu(), probs.shape[1], alpha).to(probs)
    return -(q * _log(probs[mask])).sum(1).mean()


def uem_loss(probs: torch.Tensor, pseudo) -> torch.Tensor:
    """Mean of ``sum p log p`` over unreliable rows (negative entropy)."""
    mask = _labels(pseudo, probs.device) == UNRELIABLE
    if not mask.any():
        return _zero(probs)
    p = probs[mask]
    return (p * _log(p)).sum(1).mean()


def im_loss(probs: torch.Tensor, pseudo) -> tuple[torch.Tensor, torch.Tensor]:
    """(mean entropy, negative entropy of the mean prediction) over reliable rows."""
    mask = _labels(pseudo, probs.device) != UNRELIABLE
    if not mask.any():
        return _zero(probs), _zero(probs)
    p = probs[mask]
    ent = -(p * _log(p)).sum(1).mean()
    p_mean = p.mean(0)
    div = (p_mean * _log(p_mean)).sum()
    return ent, div


def car_similarity(features: torch.Tensor, pseudo, beta: float = 0.6, normalize: bool = True) -> torch.Tensor:
    """Mean over reliable anchors of same-label similarity minus ``beta`` times cross-label similarity.

    This is the quantity to maximize; :func:`car_loss` returns its negation.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    pseudo = _labels(pseudo, features.device)
    mask = pseudo != UNRELIABLE
    if int(mask.sum()) < 2:
        return _zero(features)
    f = features[mask]
    y = pseudo[mask]
    if normalize:
        f = F.normalize(f, dim=1)
    sim = f @ f.T
    same = y[:, None] == y[None, :]
    eye = torch.eye(len(y), dtype=torch.bool, device=f.device)
    cohesion = (sim * (same & ~eye)).sum(1)
    repulsion = (sim * ~same).sum(1)
    return (cohesion - beta * repulsion).mean()


def car_loss(features: torch.Tensor, pseudo, beta: float = 0.6, normalize: bool = True) -> torch.Tensor:
    return -car_similarity(features, pseudo, beta, normalize)


@dataclass
class LossBundle:
    l_lsc: float = 0.0
    l_uem: float = 0.0
    l_ent: float = 0.0
    l_div: float = 0.0
    l_car: float = 0.0
    n_reliable: int = 0
    n_unreliable: int = 0

    @property
    def l_im(self) -> float:
        return self.l_ent + self.l_div

    @property
    def l_total(self) -> float:
        return self.l_lsc + self.l_uem + self.l_im + self.l_car

    def to_dict(self) -> dict:
        d = asdict(self)
        d["l_im"] = self.l_im
        d["l_total"] = self.l_total
        return d


def total_loss(l_lsc, l_uem, l_im, l_car):
    """Unit-weighted sum of the four target terms."""
    return l_lsc + l_uem + l_im + l_car


def target_objective(
    probs: torch.Tensor,
    features: torch.Tensor,
    pseudo,
    *,
    alpha: float = 0.1,
    beta: float = 0.6,
    use_lsc: bool = True,
    use_im: bool = True,
    use_car: bool = True,
    use_uem: bool = True,
    normalize_car: bool = True,
) -> tuple[torch.Tensor, LossBundle]:
    """Differentiable total for one mini-batch plus its logged decomposition."""
    pseudo = _labels(pseudo, probs.device)
    zero = _zero(probs)
    l_lsc = lsc_loss(probs, pseudo, alpha) if use_lsc else zero
    l_uem = uem_loss(probs, pseudo) if use_uem else zero
    l_ent, l_div = im_loss(probs, pseudo) if use_im else (zero, zero)
    l_car = car_loss(features, pseudo, beta, normalize_car) if use_car else _zero(features)
    total = total_loss(l_lsc, l_uem, l_ent + l_div, l_car)
    n_rel = int((pseudo != UNRELIABLE).sum())
    bundle = LossBundle(
        l_lsc.item(), l_uem.item(), l_ent.item(), l_div.item(), l_car.item(),
        n_reliable=n_rel, n_unreliable=len(pseudo) - n_rel,
    )
    return total, bundle
