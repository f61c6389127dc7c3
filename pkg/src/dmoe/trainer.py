# src/dmoe/trainer.py
"""
Minibatch training loop shared by the histogram and scalar loss modes.

Every epoch shuffles the training split with the run's seeded generator,
steps the optimizer once per batch and then scores the train and validation
splits. Early stopping watches validation MAE and restores the best
parameters. A non-finite loss aborts with DivergenceError carrying the log.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .datasets import Split, mae_ewt
from .errors import DivergenceError, InvalidArgumentError
from .hist_targets import InducedDistribution, TargetRange, induce_heads
from .loss import batch_dmoe_loss, head_weights, regression_loss, schedule_coefficients
from .model import DmoeModel, backprop, backward, forward_batch
from .optim import clip_grad_norm, make_optimizer
from .schema import HISTOGRAM_MODES, LossConfig, LossSpec, TrainConfig

logger = logging.getLogger(__name__)

LOG_FIELDS = (
    "epoch",
    "split",
    "loss_total",
    "loss_hl",
    "loss_dl",
    "mae",
    "ewt",
    "alpha_hl",
    "alpha_dl",
)


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss_total: float
    loss_hl: float
    loss_dl: float
    mae: float
    ewt: float
    alpha_hl: float
    alpha_dl: float

    def as_row(self) -> Dict[str, object]:
        return asdict(self)


@dataclass
class TrainResult:
    model: DmoeModel
    log: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def records(self, split: str) -> List[EpochRecord]:
        return [r for r in self.log if r.split == split]


class Trainer:
    """Trains one model under one loss mode.

    Histogram modes need a model built with layouts; the scalar modes
    (l1, l2, smooth_l1) need a scalar-output model and an explicit range.
    """

    def __init__(
        self,
        loss: LossSpec,
        cfg: TrainConfig,
        induced: Optional[InducedDistribution] = None,
        target_range: Optional[TargetRange] = None,
    ):
        self.loss = loss
        self.cfg = cfg
        self.induced = induced or InducedDistribution()
        self.target_range = target_range
        self.histogram = loss.mode in HISTOGRAM_MODES
        self.loss_cfg: LossConfig = loss.loss_config()

    # ----- Public ops -----

    def train(self, model: DmoeModel, train: Split, val: Optional[Split] = None) -> TrainResult:
        r = self._check(model, train)
        rng = np.random.default_rng(self.cfg.seed)
        optimizer = make_optimizer(self.cfg)
        train_targets = self._targets(model, train)

        result = TrainResult(model=model)
        best_mae = math.inf
        best_params = [p.copy() for p in model.parameters()]
        wait = 0

        for epoch in range(self.cfg.max_epochs):
            alphas = schedule_coefficients(epoch, self.loss_cfg)
            order = rng.permutation(len(train))
            for start in range(0, len(train), self.cfg.batch_size):
                idx = order[start : start + self.cfg.batch_size]
                value, grads = self._batch_grads(
                    model,
                    train.X[idx],
                    train.y[idx],
                    None if train_targets is None else train_targets[idx],
                    epoch,
                )
                if not math.isfinite(value):
                    self._diverged(epoch, result)
                grads, _ = clip_grad_norm(grads, self.cfg.clip_norm)
                optimizer.step(model.parameters(), grads)

            for name, split, targets in (
                ("train", train, train_targets),
                ("val", val, None),
            ):
                if split is None or len(split) == 0:
                    continue
                rec = self.evaluate(model, split, r, epoch, alphas, name, targets)
                result.log.append(rec)
                if not math.isfinite(rec.loss_total):
                    self._diverged(epoch, result)

            monitor = result.log[-1]
            logger.debug(
                "epoch %d %s loss=%.6g mae=%.6g ewt=%.4f",
                epoch,
                monitor.split,
                monitor.loss_total,
                monitor.mae,
                monitor.ewt,
            )
            if monitor.mae < best_mae:
                best_mae = monitor.mae
                best_params = [p.copy() for p in model.parameters()]
                result.best_epoch = epoch
                wait = 0
            else:
                wait += 1
                if wait >= self.cfg.patience:
                    result.stopped_early = True
                    logger.info(
                        "early stop at epoch %d (best %d, %s mae %.6g)",
                        epoch,
                        result.best_epoch,
                        monitor.split,
                        best_mae,
                    )
                    break

        model.load_parameters(best_params)
        return result

    def evaluate(
        self,
        model: DmoeModel,
        split: Split,
        target_range: TargetRange,
        epoch: int,
        alphas: Tuple[float, float],
        name: str = "val",
        targets: Optional[np.ndarray] = None,
    ) -> EpochRecord:
        """Loss breakdown, MAE and EwT of ``model`` on ``split``."""
        cache = forward_batch(model, split.X)
        if self.histogram:
            assert model.layouts is not None
            if targets is None:
                targets = self._targets(model, split)
            breakdown, _ = batch_dmoe_loss(
                cache.logits,
                targets,
                model.layouts.centers,
                split.y,
                alphas,
                head_weights(self.loss_cfg, model.n_heads),
            )
            pred = (cache.probs * model.layouts.centers).sum(axis=-1).mean(axis=1)
            total, hl, dl = breakdown.total, breakdown.hl, breakdown.dl
        else:
            pred = cache.logits[:, 0, 0]
            total, _ = regression_loss(pred, split.y, self.loss.mode, self.loss.smooth_l1_beta)
            hl, dl = math.nan, float(np.mean(np.abs(pred - split.y)))
        mae, ewt = mae_ewt(pred, split.y, target_range)
        return EpochRecord(epoch, name, total, hl, dl, mae, ewt, alphas[0], alphas[1])

    # ----- Internals -----

    def _check(self, model: DmoeModel, train: Split) -> TargetRange:
        if len(train) == 0:
            raise InvalidArgumentError("training split is empty")
        if self.histogram:
            if model.layouts is None:
                raise InvalidArgumentError(f"loss mode {self.loss.mode} needs a histogram model")
            return model.layouts.target_range
        if model.layouts is not None:
            raise InvalidArgumentError(f"loss mode {self.loss.mode} needs a scalar model")
        if self.target_range is None:
            raise InvalidArgumentError("scalar loss modes need an explicit target range")
        return self.target_range

    def _targets(self, model: DmoeModel, split: Split) -> Optional[np.ndarray]:
        if not self.histogram:
            return None
        assert model.layouts is not None
        return induce_heads(split.y, model.layouts, self.induced)

    def _batch_grads(
        self,
        model: DmoeModel,
        X: np.ndarray,
        y: np.ndarray,
        targets: Optional[np.ndarray],
        epoch: int,
    ) -> Tuple[float, List[np.ndarray]]:
        cache = forward_batch(model, X)
        if self.histogram:
            assert targets is not None
            breakdown, grads = backward(model, cache, targets, y, self.loss_cfg, epoch)
            return breakdown.total, grads
        value, g = regression_loss(
            cache.logits[:, 0, 0], y, self.loss.mode, self.loss.smooth_l1_beta
        )
        dlogits = np.zeros_like(cache.logits)
        dlogits[:, 0, 0] = g
        return value, backprop(model, cache, dlogits)

    def _diverged(self, epoch: int, result: TrainResult) -> None:
        logger.warning("training diverged at epoch %d", epoch)
        raise DivergenceError(f"non-finite loss at epoch {epoch}", log=result.log)


def train(
    model: DmoeModel,
    train_split: Split,
    val_split: Optional[Split],
    loss: LossSpec,
    cfg: TrainConfig,
    induced: Optional[InducedDistribution] = None,
    target_range: Optional[TargetRange] = None,
) -> TrainResult:
    """Functional wrapper around ``Trainer.train``."""
    return Trainer(loss, cfg, induced, target_range).train(model, train_split, val_split)
