# src/dmoe/model.py
"""
MLP backbone with M histogram output heads, and manual forward/backward.

The backbone h(x) is a stack of dense layers; the heads g(x) are M linear
maps evaluated together as one einsum over a (M, H, N) weight tensor, and
f(x) = softmax(g(x)) row-wise. A model built with ``scalar=True`` has a
single 1-wide head and no softmax; it backs the L1/L2/Smooth-L1 baselines.

Parameter order (used by optimizers, checkpoints and Jacobians):
    W_0, b_0, ..., W_{L-1}, b_{L-1}, head_W, head_b
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from .errors import InvalidArgumentError, ParseError
from .hist_targets import BinLayout, MultiLayout, TargetRange, expected_value
from .loss import LossBreakdown, batch_dmoe_loss, coefficients, head_weights
from .schema import LossConfig

logger = logging.getLogger(__name__)

Activation = Literal["relu", "tanh"]

CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class DmoeModel:
    """Backbone layers plus the stacked head parameters.

    ``layouts`` is None only for scalar-output models.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    head_W: np.ndarray
    head_b: np.ndarray
    activation: Activation = "relu"
    layouts: Optional[MultiLayout] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise InvalidArgumentError("every backbone layer needs a weight and a bias")
        width = self.weights[0].shape[0] if self.weights else self.head_W.shape[1]
        self.input_dim = int(width)
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != width or b.shape != (W.shape[1],):
                raise InvalidArgumentError(
                    f"layer shapes W{W.shape} b{b.shape} don't follow width {width}",
                )
            width = W.shape[1]
        if self.head_W.ndim != 3 or self.head_W.shape[1] != width:
            raise InvalidArgumentError(f"head weights {self.head_W.shape} need hidden dim {width}")
        if self.head_b.shape != (self.head_W.shape[0], self.head_W.shape[2]):
            raise InvalidArgumentError("head bias shape must be (M, N)")
        if self.layouts is not None and (
            self.layouts.n_heads != self.n_heads or self.layouts.n_bins != self.n_bins
        ):
            raise InvalidArgumentError(
                f"{self.n_heads}x{self.n_bins} heads don't match "
                f"{self.layouts.n_heads}x{self.layouts.n_bins} layouts",
            )
        if self.activation not in ("relu", "tanh"):
            raise InvalidArgumentError(f"unknown activation: {self.activation}")

    @property
    def n_heads(self) -> int:
        return int(self.head_W.shape[0])

    @property
    def n_bins(self) -> int:
        return int(self.head_W.shape[2])

    @property
    def hidden_dim(self) -> int:
        return int(self.head_W.shape[1])

    @property
    def is_scalar(self) -> bool:
        return self.layouts is None

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in canonical order (live references)."""
        out: List[np.ndarray] = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        out.extend((self.head_W, self.head_b))
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "DmoeModel":
        return DmoeModel(
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            head_W=self.head_W.copy(),
            head_b=self.head_b.copy(),
            activation=self.activation,
            layouts=self.layouts,
            metadata=dict(self.metadata),
        )

    def load_parameters(self, params: Sequence[np.ndarray]) -> None:
        """Copy ``params`` into this model's arrays in place."""
        own = self.parameters()
        if len(params) != len(own):
            raise InvalidArgumentError(f"expected {len(own)} arrays, got {len(params)}")
        for dst, src in zip(own, params):
            dst[...] = src


def init_model(
    input_dim: int,
    hidden: Sequence[int],
    layouts: Optional[MultiLayout],
    activation: Activation = "relu",
    seed: int = 0,
) -> DmoeModel:
    """Uniform(+-1/sqrt(fan_in)) weights and biases from a seeded generator.

    Passing ``layouts=None`` builds a scalar-output model.
    """
    if input_dim < 1:
        raise InvalidArgumentError(f"input_dim must be >= 1, got {input_dim}")
    rng = np.random.default_rng(seed)
    weights: List[np.ndarray] = []
    biases: List[np.ndarray] = []
    fan_in = input_dim
    for width in hidden:
        if width < 1:
            raise InvalidArgumentError(f"hidden widths must be positive, got {width}")
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, width)))
        biases.append(rng.uniform(-bound, bound, size=width))
        fan_in = width

    m, n = (1, 1) if layouts is None else (layouts.n_heads, layouts.n_bins)
    bound = 1.0 / np.sqrt(fan_in)
    head_W = rng.uniform(-bound, bound, size=(m, fan_in, n))
    head_b = rng.uniform(-bound, bound, size=(m, n))
    return DmoeModel(weights, biases, head_W, head_b, activation, layouts)


# -----------------------
# Forward
# -----------------------


@dataclass
class ForwardCache:
    """Activations kept for backprop; ``inputs[k]`` feeds layer k."""

    inputs: List[np.ndarray]
    outputs: List[np.ndarray]
    hidden: np.ndarray
    logits: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits, axis=-1)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else np.tanh(z)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    return (z > 0).astype(float) if activation == "relu" else 1.0 - a**2


def forward_batch(model: DmoeModel, X: np.ndarray) -> ForwardCache:
    """Evaluate a (B, D) batch; logits have shape (B, M, N)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InvalidArgumentError(
            f"expected features of shape (B, {model.input_dim}), got {X.shape}",
        )
    inputs: List[np.ndarray] = []
    pre: List[np.ndarray] = []
    a = X
    for W, b in zip(model.weights, model.biases):
        inputs.append(a)
        z = a @ W + b
        pre.append(z)
        a = _activate(z, model.activation)
    logits = np.einsum("bh,mhn->bmn", a, model.head_W) + model.head_b
    return ForwardCache(inputs=inputs, outputs=pre, hidden=a, logits=logits)


def forward(model: DmoeModel, x: Sequence[float] | np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(logits, probs) of one feature vector, each (M, N)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidArgumentError(f"expected a feature vector, got shape {x.shape}")
    logits = forward_batch(model, x[None, :]).logits[0]
    return logits, softmax(logits, axis=-1)


def predict_scalar(probs: np.ndarray, layouts: MultiLayout) -> float:
    """Unweighted mean over heads of each head's expected value."""
    f = np.asarray(probs, dtype=float)
    if f.ndim != 2 or f.shape[0] != layouts.n_heads:
        raise InvalidArgumentError(
            f"{f.shape[0] if f.ndim else 0} heads of probabilities for {layouts.n_heads} layouts",
        )
    return float(np.mean([expected_value(f[i], layouts[i]) for i in range(layouts.n_heads)]))


def predict_batch(model: DmoeModel, X: np.ndarray) -> np.ndarray:
    """Scalar predictions for a batch: mean-of-expectations or the scalar head."""
    cache = forward_batch(model, X)
    if model.layouts is None:
        return cache.logits[:, 0, 0].copy()
    return (cache.probs * model.layouts.centers).sum(axis=-1).mean(axis=1)


# -----------------------
# Backward
# -----------------------


def backprop(model: DmoeModel, cache: ForwardCache, dlogits: np.ndarray) -> List[np.ndarray]:
    """Chain an upstream gradient w.r.t. logits down to every parameter."""
    h = cache.hidden
    grads_head_W = np.einsum("bh,bmn->mhn", h, dlogits)
    grads_head_b = dlogits.sum(axis=0)
    da = np.einsum("bmn,mhn->bh", dlogits, model.head_W)

    layer_grads: List[Tuple[np.ndarray, np.ndarray]] = []
    a = h
    for k in reversed(range(len(model.weights))):
        dz = da * _activation_grad(cache.outputs[k], a, model.activation)
        layer_grads.append((cache.inputs[k].T @ dz, dz.sum(axis=0)))
        da = dz @ model.weights[k].T
        a = cache.inputs[k]

    grads: List[np.ndarray] = []
    for gW, gb in reversed(layer_grads):
        grads.extend((gW, gb))
    grads.extend((grads_head_W, grads_head_b))
    return grads


def backward(
    model: DmoeModel,
    cache: ForwardCache,
    targets: np.ndarray,
    y: np.ndarray,
    cfg: LossConfig,
    epoch: Optional[int] = None,
) -> Tuple[LossBreakdown, List[np.ndarray]]:
    """Mean batch DMoE loss and its gradient w.r.t. every parameter.

    ``cache`` must come from ``forward_batch`` on the same batch;
    ``targets`` holds per-head induced histograms, shape (B, M, N).
    """
    if model.layouts is None:
        raise InvalidArgumentError("backward needs a histogram model")
    if targets.shape != cache.logits.shape:
        raise InvalidArgumentError(f"targets {targets.shape} vs logits {cache.logits.shape}")
    breakdown, dlogits = batch_dmoe_loss(
        cache.logits,
        targets,
        model.layouts.centers,
        np.asarray(y, dtype=float),
        coefficients(cfg, epoch),
        head_weights(cfg, model.n_heads),
    )
    return breakdown, backprop(model, cache, dlogits)


# -----------------------
# Checkpoints
# -----------------------


def save_checkpoint(model: DmoeModel, path: Path) -> Path:
    """Write every parameter, the layouts and JSON metadata to an .npz file."""
    arrays: Dict[str, np.ndarray] = {}
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W_{i}"] = W
        arrays[f"b_{i}"] = b
    arrays["head_W"] = model.head_W
    arrays["head_b"] = model.head_b
    meta: Dict[str, Any] = {
        "version": CHECKPOINT_VERSION,
        "activation": model.activation,
        "n_layers": len(model.weights),
        "metadata": model.metadata,
    }
    if model.layouts is not None:
        ml = model.layouts
        arrays["endpoints"] = np.stack([layout.endpoints for layout in ml])
        arrays["base_endpoints"] = ml.base.endpoints
        meta["range"] = [ml.target_range.y_min, ml.target_range.y_max]
        meta["epsilon"] = ml.base.epsilon
        meta["shift_step"] = ml.shift_step
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path: Path) -> DmoeModel:
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as e:
        raise ParseError(f"cannot read checkpoint {path}: {e}") from e
    if "meta" not in arrays:
        raise ParseError(f"{path} is not a dmoe checkpoint")
    meta = json.loads(str(arrays["meta"]))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {meta.get('version')}")

    layouts: Optional[MultiLayout] = None
    if "endpoints" in arrays:
        r = TargetRange(*meta["range"])
        eps = float(meta["epsilon"])
        heads = tuple(BinLayout(e, r, eps) for e in arrays["endpoints"])
        layouts = MultiLayout(heads, BinLayout(arrays["base_endpoints"], r, eps), float(meta["shift_step"]))

    n = int(meta["n_layers"])
    return DmoeModel(
        weights=[arrays[f"W_{i}"] for i in range(n)],
        biases=[arrays[f"b_{i}"] for i in range(n)],
        head_W=arrays["head_W"],
        head_b=arrays["head_b"],
        activation=meta["activation"],
        layouts=layouts,
        metadata=meta.get("metadata", {}),
    )
