# src/dmoe/hist_targets.py
"""
Bin layouts and induced target histograms.

A scalar target y in [y_min, y_max] is turned into a probability vector over
N bins by discretizing a continuous "induced" distribution centered at y.
Bins may be non-equidistant: endpoints come from the quantile function of a
bin distribution B evaluated on a normalized [0, 1] domain and then mapped
affinely onto the target range.

Notes:
- Quantiles at 0 and 1 that are infinite (e.g. a Gaussian) are replaced by the
  quantiles at epsilon and 1 - epsilon before the affine map.
- Induced-distribution mass outside the range is folded into the end bins.
- Bin centers are the representative points for expected values.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from scipy.integrate import IntegrationWarning, quad

from .errors import (
    InvalidArgumentError,
    InvalidLayoutError,
    NumericalError,
    OutOfRangeError,
    ParseError,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]
Density = Callable[[float], float]

DEFAULT_EPSILON = 1e-6
SUM_TOLERANCE = 1e-9


# -----------------------
# Ranges and bin distributions
# -----------------------


@dataclass(frozen=True)
class TargetRange:
    """Closed interval of admissible target values."""

    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "y_min", float(self.y_min))
        object.__setattr__(self, "y_max", float(self.y_max))
        if not (math.isfinite(self.y_min) and math.isfinite(self.y_max)):
            raise InvalidArgumentError(
                f"target range must be finite, got [{self.y_min}, {self.y_max}]",
            )
        if self.y_min >= self.y_max:
            raise InvalidArgumentError(
                f"y_min must be < y_max, got [{self.y_min}, {self.y_max}]",
            )

    @property
    def span(self) -> float:
        return self.y_max - self.y_min

    @property
    def tolerance(self) -> float:
        # Slack for values produced by rounding at the boundary.
        return 1e-12 * self.span


BinKind = Literal["uniform", "normal", "custom"]


@dataclass(frozen=True)
class BinDistribution:
    """Distribution B whose quantile function places the bin endpoints.

    ``mean``/``std`` are expressed on the normalized [0, 1] domain.
    """

    kind: BinKind = "uniform"
    mean: float = 0.5
    std: float = 0.15
    quantile_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "normal", "custom"):
            raise InvalidArgumentError(f"unknown bin distribution: {self.kind}")
        if self.kind == "normal" and not (self.std > 0 and math.isfinite(self.std)):
            raise InvalidArgumentError(f"normal bin std must be > 0, got {self.std}")
        if self.kind == "custom" and self.quantile_fn is None:
            raise InvalidArgumentError("custom bin distribution needs a quantile_fn")

    @classmethod
    def uniform(cls) -> "BinDistribution":
        return cls(kind="uniform")

    @classmethod
    def normal(cls, mean: float = 0.5, std: float = 0.15) -> "BinDistribution":
        return cls(kind="normal", mean=mean, std=std)

    @classmethod
    def custom(cls, quantile_fn: Callable[[np.ndarray], np.ndarray]) -> "BinDistribution":
        return cls(kind="custom", quantile_fn=quantile_fn)

    def quantile(self, q: ArrayLike) -> np.ndarray:
        """Raw Q_B(q); may be infinite at 0 and 1."""
        q = np.asarray(q, dtype=float)
        if self.kind == "uniform":
            return q.copy()
        if self.kind == "normal":
            return stats.norm.ppf(q, loc=self.mean, scale=self.std)
        assert self.quantile_fn is not None
        return np.asarray(self.quantile_fn(q), dtype=float)


# -----------------------
# Layouts
# -----------------------


@dataclass(frozen=True, eq=False)
class BinLayout:
    """Ordered bin endpoints over a target range (N bins, N + 1 endpoints)."""

    endpoints: np.ndarray
    target_range: TargetRange
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        e = np.array(self.endpoints, dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise InvalidLayoutError("a layout needs at least two endpoints")
        if not np.all(np.isfinite(e)):
            raise InvalidLayoutError("layout endpoints must be finite")
        if np.any(np.diff(e) <= 0):
            raise InvalidLayoutError("layout endpoints must be strictly increasing")
        r = self.target_range
        if e[0] < r.y_min - r.tolerance or e[-1] > r.y_max + r.tolerance:
            raise InvalidLayoutError(
                f"endpoints [{e[0]}, {e[-1]}] leave the range [{r.y_min}, {r.y_max}]",
            )
        e.setflags(write=False)
        object.__setattr__(self, "endpoints", e)

    @property
    def n_bins(self) -> int:
        return self.endpoints.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.endpoints)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.endpoints[:-1] + self.endpoints[1:])

    @property
    def mean_width(self) -> float:
        """E[w]."""
        return float(np.mean(self.widths))

    def bin_index(self, y: ArrayLike) -> np.ndarray:
        """Index of the bin containing each y; a shared endpoint belongs to the upper bin."""
        idx = np.searchsorted(self.endpoints, np.asarray(y, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_bins - 1)

    def same_as(self, other: "BinLayout") -> bool:
        return (
            self.target_range == other.target_range
            and self.epsilon == other.epsilon
            and np.array_equal(self.endpoints, other.endpoints)
        )


@dataclass(frozen=True, eq=False)
class MultiLayout:
    """M layouts whose endpoints are the base endpoints shifted by i/M * E[w]."""

    layouts: Tuple[BinLayout, ...]
    base: BinLayout
    shift_step: float

    def __post_init__(self) -> None:
        if not self.layouts:
            raise InvalidArgumentError("a multi-layout needs at least one head")
        n = self.layouts[0].n_bins
        if any(layout.n_bins != n for layout in self.layouts):
            raise InvalidLayoutError("all heads must have the same number of bins")
        object.__setattr__(self, "layouts", tuple(self.layouts))

    def __len__(self) -> int:
        return len(self.layouts)

    def __iter__(self) -> Iterator[BinLayout]:
        return iter(self.layouts)

    def __getitem__(self, i: int) -> BinLayout:
        return self.layouts[i]

    @property
    def n_heads(self) -> int:
        return len(self.layouts)

    @property
    def n_bins(self) -> int:
        return self.layouts[0].n_bins

    @property
    def target_range(self) -> TargetRange:
        return self.base.target_range

    @property
    def centers(self) -> np.ndarray:
        """(M, N) bin centers."""
        return np.stack([layout.centers for layout in self.layouts])

    @property
    def widths(self) -> np.ndarray:
        return np.stack([layout.widths for layout in self.layouts])


def build_bin_layout(
    target_range: TargetRange,
    n_bins: int,
    dist: Optional[BinDistribution] = None,
    epsilon: float = DEFAULT_EPSILON,
) -> BinLayout:
    """Build N equally probable bins under ``dist``, mapped onto ``target_range``."""
    if n_bins < 2:
        raise InvalidArgumentError(f"n_bins must be >= 2, got {n_bins}")
    if not (0.0 < epsilon <= 1e-3):
        raise InvalidArgumentError(f"epsilon must be in (0, 1e-3], got {epsilon}")
    dist = dist or BinDistribution.uniform()

    q = dist.quantile(np.arange(n_bins + 1) / n_bins)
    if not math.isfinite(q[0]):
        q[0] = dist.quantile([epsilon])[0]
    if not math.isfinite(q[-1]):
        q[-1] = dist.quantile([1.0 - epsilon])[0]

    lo, hi = q[0], q[-1]
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise InvalidLayoutError(
            f"quantile function of {dist.kind} collapses the range ({lo}, {hi})",
        )
    # [Q(eps), Q(1 - eps)] maps affinely onto the range; clamp only afterwards.
    endpoints = np.clip(
        target_range.y_min + (q - lo) / (hi - lo) * target_range.span,
        target_range.y_min,
        target_range.y_max,
    )
    endpoints[0] = target_range.y_min
    endpoints[-1] = target_range.y_max

    layout = BinLayout(endpoints, target_range, epsilon)
    logger.debug(
        "layout %s N=%d widths [%.4g, %.4g]",
        dist.kind,
        n_bins,
        layout.widths.min(),
        layout.widths.max(),
    )
    return layout


def build_multi_layout(base: BinLayout, n_heads: int) -> MultiLayout:
    """Shift head i's interior endpoints by (i / M) * E[w]; the end bins absorb the shift.

    When the last base bin is narrower than (M - 1) / M * E[w] (possible with
    custom quantile functions) the step shrinks to that bin's width over M, so
    every head keeps a nonempty last bin.
    """
    if n_heads < 1:
        raise InvalidArgumentError(f"n_heads must be >= 1, got {n_heads}")
    step = base.mean_width / n_heads
    room = float(base.endpoints[-1] - base.endpoints[-2])
    if (n_heads - 1) * step >= room:
        logger.warning(
            "last bin (width %.4g) can't absorb a shift of %.4g; using step %.4g",
            room,
            (n_heads - 1) * step,
            room / n_heads,
        )
        step = room / n_heads
    layouts = [base]
    for i in range(1, n_heads):
        e = base.endpoints.copy()
        e[1:-1] += i * step
        layouts.append(BinLayout(e, base.target_range, base.epsilon))
    return MultiLayout(tuple(layouts), base, step)


# -----------------------
# Induced distributions
# -----------------------

InducedKind = Literal["normal", "laplace", "categorical", "k_categorical", "uniform"]


@dataclass(frozen=True)
class InducedDistribution:
    """Distribution Phi(y) that is discretized onto a layout.

    The normal sigma / Laplace scale is ``width_multiple * E[w]`` of the layout.
    ``uniform`` ignores y and spreads mass in proportion to bin width.
    """

    kind: InducedKind = "normal"
    width_multiple: float = 1.0
    k: int = 3

    def __post_init__(self) -> None:
        if self.kind not in ("normal", "laplace", "categorical", "k_categorical", "uniform"):
            raise InvalidArgumentError(f"unknown induced distribution: {self.kind}")
        if self.kind in ("normal", "laplace") and not (
            self.width_multiple > 0 and math.isfinite(self.width_multiple)
        ):
            raise InvalidArgumentError(
                f"induced scale multiple must be > 0, got {self.width_multiple}",
            )
        if self.kind == "k_categorical" and self.k < 1:
            raise InvalidArgumentError(f"k must be >= 1, got {self.k}")

    def scale(self, layout: BinLayout) -> float:
        return self.width_multiple * layout.mean_width


@dataclass(frozen=True, eq=False)
class TargetHistogram:
    """Probability mass vector p = Phi(y) over a layout's bins."""

    probs: np.ndarray
    layout: BinLayout

    def __post_init__(self) -> None:
        p = np.array(self.probs, dtype=float)
        if p.shape != (self.layout.n_bins,):
            raise InvalidArgumentError(
                f"histogram has {p.size} entries, layout has {self.layout.n_bins} bins",
            )
        if np.any(p < 0) or abs(p.sum() - 1.0) > SUM_TOLERANCE:
            raise InvalidArgumentError("histogram must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)


def _check_targets(y: np.ndarray, r: TargetRange) -> None:
    bad = ~np.isfinite(y) | (y < r.y_min - r.tolerance) | (y > r.y_max + r.tolerance)
    if np.any(bad):
        raise OutOfRangeError(
            f"target {y[bad][0]} outside [{r.y_min}, {r.y_max}]",
        )


def induce_batch(ys: ArrayLike, layout: BinLayout, dist: InducedDistribution) -> np.ndarray:
    """Discretize Phi(y) for every y onto ``layout``; returns a (B, N) array."""
    y = np.atleast_1d(np.asarray(ys, dtype=float))
    if y.ndim != 1:
        raise InvalidArgumentError("targets must be a scalar or a 1-D array")
    _check_targets(y, layout.target_range)
    n = layout.n_bins

    if dist.kind in ("normal", "laplace"):
        scale = dist.scale(layout)
        if not scale > 0:
            raise InvalidArgumentError(f"induced scale must be > 0, got {scale}")
        z = (layout.endpoints[None, :] - y[:, None]) / scale
        cdf = stats.norm.cdf(z) if dist.kind == "normal" else stats.laplace.cdf(z)
        # Fold the tails into the end bins.
        cdf[:, 0] = 0.0
        cdf[:, -1] = 1.0
        return np.clip(np.diff(cdf, axis=1), 0.0, None)

    probs = np.zeros((y.size, n))
    if dist.kind == "categorical":
        probs[np.arange(y.size), layout.bin_index(y)] = 1.0
    elif dist.kind == "k_categorical":
        if dist.k > n:
            raise InvalidArgumentError(f"k={dist.k} exceeds the {n} bins")
        distance = np.abs(layout.centers[None, :] - y[:, None])
        # Stable sort: ties go to the lower bin index.
        nearest = np.argsort(distance, axis=1, kind="stable")[:, : dist.k]
        np.put_along_axis(probs, nearest, 1.0 / dist.k, axis=1)
    else:
        probs[:] = layout.widths / layout.widths.sum()
    return probs


def induce_target(y: float, layout: BinLayout, dist: InducedDistribution) -> TargetHistogram:
    """Phi(y) on a single layout."""
    return TargetHistogram(induce_batch([y], layout, dist)[0], layout)


def induce_heads(ys: ArrayLike, layouts: MultiLayout, dist: InducedDistribution) -> np.ndarray:
    """Per-head targets, each induced on its own shifted layout; shape (B, M, N)."""
    return np.stack([induce_batch(ys, layout, dist) for layout in layouts], axis=1)


# -----------------------
# Readouts and quantization error
# -----------------------


def as_probs(hist: Union[TargetHistogram, ArrayLike]) -> np.ndarray:
    if isinstance(hist, TargetHistogram):
        return hist.probs
    return np.asarray(hist, dtype=float)


def expected_value(hist: Union[TargetHistogram, ArrayLike], layout: BinLayout) -> float:
    """Sum of probabilities times bin centers."""
    p = as_probs(hist)
    if p.shape != (layout.n_bins,):
        raise InvalidArgumentError(
            f"histogram has {p.size} entries, layout has {layout.n_bins} bins",
        )
    return float(p @ layout.centers)


def _integrate(fn: Density, e: np.ndarray, i: int, epsabs: float) -> float:
    """quad over bin i; a convergence warning becomes NumericalError."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, _ = quad(fn, e[i], e[i + 1], epsabs=epsabs, limit=200)
        except IntegrationWarning as exc:
            raise NumericalError(
                f"quadrature did not converge on bin {i} [{e[i]}, {e[i + 1]}]: {exc}",
            ) from exc
    return float(value)


def quantization_error(
    density: Density,
    hist: Union[TargetHistogram, ArrayLike],
    layout: BinLayout,
    epsabs: float = 1e-8,
) -> float:
    """Sum over bins of the integral of |f(x) - Y_i| * f(x), with Y_i = mass_i / width_i."""
    p = as_probs(hist)
    if p.shape != (layout.n_bins,):
        raise InvalidArgumentError(
            f"histogram has {p.size} entries, layout has {layout.n_bins} bins",
        )
    heights = p / layout.widths
    e = layout.endpoints
    total = 0.0
    for i in range(layout.n_bins):
        height = float(heights[i])

        def integrand(x: float, height: float = height) -> float:
            fx = density(x)
            return abs(fx - height) * fx

        total += _integrate(integrand, e, i, epsabs)
    return max(total, 0.0)


def discretize_density(density: Density, layout: BinLayout, epsabs: float = 1e-8) -> np.ndarray:
    """Bin masses of a continuous density, renormalized over the layout."""
    e = layout.endpoints
    masses = np.array([_integrate(density, e, i, epsabs) for i in range(layout.n_bins)])
    masses = np.clip(masses, 0.0, None)
    total = masses.sum()
    if not total > 0:
        raise NumericalError("density has no mass over the layout range")
    return masses / total


def compare_layout_errors(density: Density, layouts: Mapping[str, BinLayout]) -> Dict[str, float]:
    """Quantization error of the density's own histogram on each named layout."""
    return {
        name: quantization_error(density, discretize_density(density, layout), layout)
        for name, layout in layouts.items()
    }


# -----------------------
# Text format
# -----------------------


def format_vectors(rows: Mapping[str, ArrayLike]) -> str:
    """One named vector per line, values at full (round-trip) precision."""
    lines = []
    for name, values in rows.items():
        if not name or any(c.isspace() for c in name):
            raise InvalidArgumentError(f"invalid vector name: {name!r}")
        flat = np.atleast_1d(np.asarray(values, dtype=float))
        lines.append(" ".join([name, *(repr(float(v)) for v in flat)]))
    return "\n".join(lines) + "\n"


def parse_vectors(text: str) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, *values = line.split()
        if name in out:
            raise ParseError(f"duplicate vector {name!r}", line=lineno)
        try:
            out[name] = np.array([float(v) for v in values])
        except ValueError as e:
            raise ParseError(f"non-numeric value in {name!r}: {e}", line=lineno) from e
    return out


def format_layout(layout: BinLayout) -> str:
    return format_vectors(
        {
            "range": [layout.target_range.y_min, layout.target_range.y_max],
            "epsilon": [layout.epsilon],
            "endpoints": layout.endpoints,
        },
    )


def parse_layout(text: str) -> BinLayout:
    rows = parse_vectors(text)
    missing = [k for k in ("range", "epsilon", "endpoints") if k not in rows]
    if missing:
        raise ParseError(f"layout text is missing {', '.join(missing)}")
    if rows["range"].size != 2 or rows["epsilon"].size != 1:
        raise ParseError("range needs 2 values and epsilon 1 value")
    r = TargetRange(*rows["range"])
    return BinLayout(rows["endpoints"], r, float(rows["epsilon"][0]))
