# src/dmoe/bounds.py
"""
Gradient-norm bounds for the DMoE loss, checked numerically.

Notation: f = softmax(g) the predicted histogram, p the target histogram,
b the bin centers, J = dg/dtheta the logit Jacobian and l = ||J||_F.

Two families of bounds are evaluated:

- stated:    ||grad HL|| <= l ||f - p||
             ||grad DL|| <= l sqrt(2) ||f|| ||b|| ||f - p||
             ||grad L||  <= l ||p - f|| (1 + sqrt(2) ||f|| ||b||)
- corrected: ||grad DL|| <= l sqrt(2) ||f|| ||b||
             ||grad L||  <= l (||p - f|| + sqrt(2) ||f|| ||b||)

The HL bound and the corrected ones hold for every input. The stated DL and
total bounds carry a factor ||f - p|| that vanishes as f -> p while the L1
subgradient does not, so they can fail near f ~ p. The harness counts
their violations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from .errors import InvalidArgumentError
from .hist_targets import (
    BinDistribution,
    BinLayout,
    InducedDistribution,
    TargetRange,
    as_probs,
    build_bin_layout,
    build_multi_layout,
    induce_batch,
    induce_target,
)
from .model import DmoeModel, backprop, forward_batch, init_model

logger = logging.getLogger(__name__)

SLACK = 1e-9
SQRT2 = math.sqrt(2.0)


@dataclass
class BoundReport:
    grad_norm: float
    hl_grad_norm: float
    dl_grad_norm: float
    hl_bound: float
    dl_bound: float
    total_bound: float
    corrected_dl_bound: float
    corrected_bound: float
    lipschitz_l: float
    f_l2: float
    b_norm: float
    p_minus_f_norm: float
    satisfied: bool
    corrected_satisfied: bool

    def as_row(self) -> Dict[str, object]:
        return asdict(self)


# -----------------------
# Jacobians
# -----------------------


def model_jacobian(model: DmoeModel, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """d logits / d theta at x, shape (M * N, P), one backward pass per logit."""
    x = np.asarray(x, dtype=float)
    cache = forward_batch(model, x[None, :])
    m, n = model.n_heads, model.n_bins
    rows = []
    for k in range(m * n):
        seed = np.zeros((1, m, n))
        seed[0, k // n, k % n] = 1.0
        rows.append(np.concatenate([g.ravel() for g in backprop(model, cache, seed)]))
    return np.stack(rows)


def measure_lipschitz(model: DmoeModel, x: Sequence[float] | np.ndarray) -> float:
    """Local l: Frobenius norm of the logit Jacobian at (x, theta)."""
    return float(np.linalg.norm(model_jacobian(model, x)))


def softmax_jacobian(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return np.diag(f) - np.outer(f, f)


def softmax_jacobian_check(logits: np.ndarray) -> Tuple[float, float]:
    """(||df/dg||_F, sqrt(2) ||f||)."""
    f = softmax(np.asarray(logits, dtype=float))
    return float(np.linalg.norm(softmax_jacobian(f))), SQRT2 * float(np.linalg.norm(f))


# -----------------------
# Per-loss gradient checks
# -----------------------


def _check_jac(jac: np.ndarray, n: int) -> np.ndarray:
    jac = np.asarray(jac, dtype=float)
    if jac.ndim != 2 or jac.shape[0] != n:
        raise InvalidArgumentError(f"Jacobian must have {n} rows, got shape {jac.shape}")
    return jac


def check_hl_bound(probs: np.ndarray, target: np.ndarray, jac: np.ndarray) -> Tuple[float, float]:
    """(||J^T (f - p)||, ||f - p|| * ||J||_F) for the histogram loss."""
    f = np.asarray(probs, dtype=float)
    p = as_probs(target)
    jac = _check_jac(jac, f.size)
    d = f - p
    return float(np.linalg.norm(jac.T @ d)), float(np.linalg.norm(d) * np.linalg.norm(jac))


def dl_logit_grad(probs: np.ndarray, centers: np.ndarray, reference: float) -> np.ndarray:
    """d|reference - f.b| / dg = sign(f.b - reference) (diag f - f f^T) b."""
    f = np.asarray(probs, dtype=float)
    e = float(f @ centers)
    return np.sign(e - reference) * f * (centers - e)


def check_dl_bound(
    probs: np.ndarray,
    target: np.ndarray,
    layout: BinLayout,
    jac: np.ndarray,
) -> Tuple[float, float]:
    """(||grad DL||, stated bound) for DL = |p.b - f.b|."""
    f = np.asarray(probs, dtype=float)
    p = as_probs(target)
    jac = _check_jac(jac, f.size)
    b = layout.centers
    lhs = float(np.linalg.norm(jac.T @ dl_logit_grad(f, b, float(p @ b))))
    bound = (
        SQRT2
        * float(np.linalg.norm(f))
        * float(np.linalg.norm(b))
        * float(np.linalg.norm(f - p))
        * float(np.linalg.norm(jac))
    )
    return lhs, bound


def corrected_dl_bound(probs: np.ndarray, layout: BinLayout, jac: np.ndarray) -> float:
    return SQRT2 * float(np.linalg.norm(probs)) * float(np.linalg.norm(layout.centers)) * float(
        np.linalg.norm(jac),
    )


# -----------------------
# Combined-loss check
# -----------------------


def check_total_bound(
    model: DmoeModel,
    x: Sequence[float] | np.ndarray,
    y: float,
    induced: Optional[InducedDistribution] = None,
    alphas: Tuple[float, float] = (1.0, 1.0),
) -> BoundReport:
    """Full-loss gradient norm of a single-head model against both bounds."""
    if model.layouts is None or model.n_heads != 1:
        raise InvalidArgumentError("check_total_bound needs a single-head histogram model")
    layout = model.layouts[0]
    induced = induced or InducedDistribution()
    a_hl, a_dl = alphas

    jac = model_jacobian(model, x)
    f = softmax(forward_batch(model, np.asarray(x, dtype=float)[None, :]).logits[0, 0])
    p = induce_target(y, layout, induced).probs
    b = layout.centers

    g_hl = f - p
    g_dl = dl_logit_grad(f, b, y)
    grad_norm = float(np.linalg.norm(jac.T @ (a_hl * g_hl + a_dl * g_dl)))
    hl_norm = float(np.linalg.norm(jac.T @ g_hl))
    dl_norm = float(np.linalg.norm(jac.T @ g_dl))

    l = float(np.linalg.norm(jac))
    f_l2 = float(np.linalg.norm(f))
    b_norm = float(np.linalg.norm(b))
    pf = float(np.linalg.norm(p - f))

    total = l * pf * (a_hl + a_dl * SQRT2 * f_l2 * b_norm)
    corrected = l * (a_hl * pf + a_dl * SQRT2 * f_l2 * b_norm)
    return BoundReport(
        grad_norm=grad_norm,
        hl_grad_norm=hl_norm,
        dl_grad_norm=dl_norm,
        hl_bound=l * pf,
        dl_bound=l * SQRT2 * f_l2 * b_norm * pf,
        total_bound=total,
        corrected_dl_bound=l * SQRT2 * f_l2 * b_norm,
        corrected_bound=corrected,
        lipschitz_l=l,
        f_l2=f_l2,
        b_norm=b_norm,
        p_minus_f_norm=pf,
        satisfied=grad_norm <= total + SLACK,
        corrected_satisfied=grad_norm <= corrected + SLACK,
    )


def distribution_l2(
    dist: InducedDistribution,
    layout: BinLayout,
    y: Optional[float] = None,
) -> float:
    """||Phi(y)||_2 on ``layout``; y defaults to the middle of the range.

    A uniform induced distribution on equal-width bins returns 1 / sqrt(N)
    exactly.
    """
    if dist.kind == "uniform" and np.allclose(layout.widths, layout.mean_width, rtol=1e-9, atol=0.0):
        return 1.0 / math.sqrt(layout.n_bins)
    r = layout.target_range
    y = 0.5 * (r.y_min + r.y_max) if y is None else y
    return float(np.linalg.norm(induce_batch([y], layout, dist)[0]))


# -----------------------
# Randomized harness
# -----------------------


@dataclass
class HarnessResult:
    rows: List[Dict[str, object]] = field(default_factory=list)
    violations: Dict[str, int] = field(default_factory=dict)
    max_ratio: Dict[str, float] = field(default_factory=dict)

    @property
    def draws(self) -> int:
        return len(self.rows)

    def summary(self) -> str:
        parts = [f"{self.draws} draws"]
        parts += [f"{k}={v}" for k, v in self.violations.items()]
        parts += [f"max {k}={v:.4g}" for k, v in self.max_ratio.items()]
        return ", ".join(parts)


HARNESS_CHECKS = (
    "hl",
    "dl",
    "dl_corrected",
    "total",
    "total_corrected",
    "softmax_jacobian",
    "p_minus_f",
)


def _ratio(lhs: float, bound: float) -> float:
    if bound > 0:
        return lhs / bound
    return 0.0 if lhs <= SLACK else math.inf


def _random_draw(rng: np.random.Generator, n_bins: int, adversarial: bool) -> Tuple[DmoeModel, np.ndarray, float, InducedDistribution]:
    r = TargetRange(*sorted(rng.uniform(-2.0, 2.0, size=2)))
    if r.span < 0.1:
        r = TargetRange(r.y_min, r.y_min + 1.0)
    dist = BinDistribution.normal(0.5, float(rng.uniform(0.1, 0.3))) if rng.random() < 0.5 else None
    layouts = build_multi_layout(build_bin_layout(r, n_bins, dist), 1)
    hidden = [int(w) for w in rng.integers(2, 9, size=int(rng.integers(0, 3)))]
    input_dim = int(rng.integers(1, 5))
    model = init_model(
        input_dim,
        hidden,
        layouts,
        activation="tanh" if rng.random() < 0.5 else "relu",
        seed=int(rng.integers(2**31)),
    )
    x = rng.normal(size=input_dim)
    y = float(rng.uniform(r.y_min, r.y_max))
    if adversarial:
        # Near one-hot prediction on the bin farthest from y.
        far = 0 if y > 0.5 * (r.y_min + r.y_max) else n_bins - 1
        model.head_b[0, far] += 25.0
    kind = ("normal", "laplace", "categorical")[int(rng.integers(3))]
    induced = InducedDistribution(kind=kind, width_multiple=float(rng.uniform(0.25, 2.0)))
    return model, x, y, induced


def run_harness(
    draws: int = 3000,
    seed: int = 0,
    bin_counts: Sequence[int] = (8, 64),
) -> HarnessResult:
    """Check every bound on ``draws`` random (model, x, y) instances."""
    result = HarnessResult(
        violations={k: 0 for k in HARNESS_CHECKS},
        max_ratio={k: 0.0 for k in ("total", "total_corrected")},
    )
    for i in range(draws):
        rng = np.random.default_rng([seed, i])
        n_bins = int(bin_counts[i % len(bin_counts)])
        adversarial = i % 10 == 9
        model, x, y, induced = _random_draw(rng, n_bins, adversarial)
        assert model.layouts is not None
        layout = model.layouts[0]

        report = check_total_bound(model, x, y, induced, alphas=(1.0, 1.0))
        jac = model_jacobian(model, x)
        f = softmax(forward_batch(model, x[None, :]).logits[0, 0])
        p = induce_target(y, layout, induced).probs

        hl_lhs, hl_bnd = check_hl_bound(f, p, jac)
        dl_lhs, dl_bnd = check_dl_bound(f, p, layout, jac)
        dl_corrected = corrected_dl_bound(f, layout, jac)
        sj_lhs, sj_bound = softmax_jacobian_check(rng.normal(scale=3.0, size=n_bins))

        failed = {
            "hl": hl_lhs > hl_bnd + SLACK,
            "dl": dl_lhs > dl_bnd + SLACK,
            "dl_corrected": dl_lhs > dl_corrected + SLACK,
            "total": not report.satisfied,
            "total_corrected": not report.corrected_satisfied,
            "softmax_jacobian": sj_lhs > sj_bound + SLACK,
            "p_minus_f": report.p_minus_f_norm > SQRT2 + SLACK,
        }
        for name, bad in failed.items():
            result.violations[name] += int(bad)
        result.max_ratio["total"] = max(
            result.max_ratio["total"], _ratio(report.grad_norm, report.total_bound)
        )
        result.max_ratio["total_corrected"] = max(
            result.max_ratio["total_corrected"], _ratio(report.grad_norm, report.corrected_bound)
        )

        row: Dict[str, object] = {
            "draw": i,
            "n_bins": n_bins,
            "induced": induced.kind,
            "adversarial": adversarial,
        }
        row.update(report.as_row())
        row.update(
            {
                "hl_lhs": hl_lhs,
                "dl_lhs": dl_lhs,
                "dl_stated_bound": dl_bnd,
                "softmax_jacobian_norm": sj_lhs,
                "softmax_jacobian_bound": sj_bound,
            },
        )
        result.rows.append(row)

    logger.info("bound harness: %s", result.summary())
    return result
