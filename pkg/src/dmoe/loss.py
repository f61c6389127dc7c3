# src/dmoe/loss.py
"""
Histogram loss, distance loss and the combined DMoE loss.

    L = alpha_hl * CE(f, Phi(y)) + alpha_dl * |y - f . centers|

averaged (optionally weighted) over the output heads, each head scored
against the target induced on its own layout. Gradients are taken with
respect to the pre-softmax logits; sign(0) is 0 at the L1 kink.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from .errors import InvalidArgumentError
from .hist_targets import BinLayout, MultiLayout, TargetHistogram, as_probs, expected_value
from .schema import LossConfig

logger = logging.getLogger(__name__)

# Floor applied to predicted probabilities inside the log.
LOG_FLOOR = 1e-12

HistLike = Union[TargetHistogram, np.ndarray, Sequence[float]]


@dataclass
class LossBreakdown:
    hl: float
    dl: float
    total: float
    per_head: List[Tuple[float, float]] = field(default_factory=list)


# -----------------------
# Coefficients
# -----------------------


def schedule_coefficients(epoch: int, cfg: LossConfig) -> Tuple[float, float]:
    """(alpha_hl, alpha_dl) at ``epoch``: linear over the schedule, then constant."""
    if epoch < 0:
        raise InvalidArgumentError(f"epoch must be >= 0, got {epoch}")
    sched = cfg.schedule
    if sched is None:
        return float(cfg.alpha_hl), float(cfg.alpha_dl)
    if epoch >= sched.duration_epochs:
        return float(sched.end[0]), float(sched.end[1])
    t = epoch / sched.duration_epochs
    return (
        (1.0 - t) * sched.start[0] + t * sched.end[0],
        (1.0 - t) * sched.start[1] + t * sched.end[1],
    )


def coefficients(cfg: LossConfig, epoch: Optional[int] = None) -> Tuple[float, float]:
    if epoch is None:
        return float(cfg.alpha_hl), float(cfg.alpha_dl)
    return schedule_coefficients(epoch, cfg)


def head_weights(cfg: LossConfig, n_heads: int) -> np.ndarray:
    if cfg.head_weights is None:
        return np.full(n_heads, 1.0 / n_heads)
    if len(cfg.head_weights) != n_heads:
        raise InvalidArgumentError(
            f"{len(cfg.head_weights)} head weights for {n_heads} heads",
        )
    return np.asarray(cfg.head_weights, dtype=float)


# -----------------------
# Single-sample losses
# -----------------------


def histogram_loss(pred_probs: Sequence[float] | np.ndarray, target: HistLike) -> float:
    """Cross entropy -sum(p * log f) with f floored at LOG_FLOOR."""
    f = np.asarray(pred_probs, dtype=float)
    p = as_probs(target)
    if f.shape != p.shape or f.ndim != 1:
        raise InvalidArgumentError(f"shape mismatch: pred {f.shape} vs target {p.shape}")
    return float(-(p * np.log(np.maximum(f, LOG_FLOOR))).sum())


def distance_loss(pred_probs: Sequence[float] | np.ndarray, layout: BinLayout, y: float) -> float:
    return abs(float(y) - expected_value(pred_probs, layout))


def combine_losses(
    per_head: Sequence[Tuple[float, float]],
    weights: np.ndarray,
    alpha_hl: float,
    alpha_dl: float,
) -> LossBreakdown:
    if len(per_head) != len(weights):
        raise InvalidArgumentError(f"{len(per_head)} heads but {len(weights)} weights")
    arr = np.asarray(per_head, dtype=float).reshape(-1, 2)
    hl = float(weights @ arr[:, 0])
    dl = float(weights @ arr[:, 1])
    return LossBreakdown(
        hl=hl,
        dl=dl,
        total=alpha_hl * hl + alpha_dl * dl,
        per_head=[(float(a), float(b)) for a, b in arr],
    )


def _as_head_targets(targets: Union[Sequence[HistLike], np.ndarray]) -> np.ndarray:
    if isinstance(targets, np.ndarray):
        return targets.astype(float, copy=False)
    return np.stack([as_probs(t) for t in targets])


def dmoe_loss(
    pred_probs: Union[np.ndarray, Sequence[Sequence[float]]],
    targets: Union[Sequence[HistLike], np.ndarray],
    layouts: MultiLayout,
    y: float,
    cfg: LossConfig,
    epoch: Optional[int] = None,
) -> LossBreakdown:
    """Weighted mean over heads of alpha_hl * HL + alpha_dl * DL."""
    f = np.asarray(pred_probs, dtype=float)
    p = _as_head_targets(targets)
    m = layouts.n_heads
    if f.ndim != 2 or f.shape[0] != m or p.shape != f.shape:
        raise InvalidArgumentError(
            f"inconsistent heads: pred {f.shape}, targets {p.shape}, {m} layouts",
        )
    per_head = [
        (histogram_loss(f[i], p[i]), distance_loss(f[i], layouts[i], y)) for i in range(m)
    ]
    return combine_losses(per_head, head_weights(cfg, m), *coefficients(cfg, epoch))


def loss_grad_logits(
    logits: Sequence[float] | np.ndarray,
    target: HistLike,
    layout: BinLayout,
    y: float,
    cfg: LossConfig,
    epoch: Optional[int] = None,
) -> np.ndarray:
    """d(alpha_hl * HL + alpha_dl * DL)/d logits for one head."""
    z = np.asarray(logits, dtype=float)
    p = as_probs(target)
    if z.shape != (layout.n_bins,) or p.shape != z.shape:
        raise InvalidArgumentError("logits, target and layout must have N entries each")
    a_hl, a_dl = coefficients(cfg, epoch)
    f = softmax(z)
    c = layout.centers
    e = float(f @ c)
    return a_hl * (f - p) + a_dl * np.sign(e - y) * f * (c - e)


# -----------------------
# Batched (training) forms
# -----------------------


def batch_dmoe_loss(
    logits: np.ndarray,
    targets: np.ndarray,
    centers: np.ndarray,
    y: np.ndarray,
    alphas: Tuple[float, float],
    weights: np.ndarray,
) -> Tuple[LossBreakdown, np.ndarray]:
    """Mean batch DMoE loss and its gradient w.r.t. logits of shape (B, M, N)."""
    b = logits.shape[0]
    a_hl, a_dl = alphas
    f = softmax(logits, axis=-1)
    e = (f * centers).sum(axis=-1)
    hl = -(targets * np.log(np.maximum(f, LOG_FLOOR))).sum(axis=-1)
    dl = np.abs(y[:, None] - e)

    hl_mean = float((hl @ weights).mean())
    dl_mean = float((dl @ weights).mean())
    breakdown = LossBreakdown(
        hl=hl_mean,
        dl=dl_mean,
        total=a_hl * hl_mean + a_dl * dl_mean,
        per_head=[(float(h), float(d)) for h, d in zip(hl.mean(axis=0), dl.mean(axis=0))],
    )

    grad = a_hl * (f - targets) + a_dl * (
        np.sign(e - y[:, None])[..., None] * f * (centers - e[..., None])
    )
    grad *= weights[None, :, None] / b
    return breakdown, grad


def regression_loss(
    pred: np.ndarray,
    y: np.ndarray,
    mode: str,
    beta: float = 1.0,
) -> Tuple[float, np.ndarray]:
    """Mean L1 / L2 / Smooth-L1 loss of scalar predictions and its gradient."""
    d = np.asarray(pred, dtype=float) - np.asarray(y, dtype=float)
    if mode == "l1":
        loss, grad = np.abs(d), np.sign(d)
    elif mode == "l2":
        loss, grad = d**2, 2.0 * d
    elif mode == "smooth_l1":
        small = np.abs(d) < beta
        loss = np.where(small, 0.5 * d**2 / beta, np.abs(d) - 0.5 * beta)
        grad = np.where(small, d / beta, np.sign(d))
    else:
        raise InvalidArgumentError(f"unknown regression loss: {mode}")
    return float(loss.mean()), grad / d.size
