"""Dimension-matching projectors, their parameter formula, and head merging."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import numeric as nm
from .errors import ConfigurationError, DimensionError
from .network import BatchNorm, Conv, Dense, ReLU, Sequential

KINDS = ("one_conv", "two_conv", "bottleneck_dw", "bottleneck", "linear_vector")


@dataclass(frozen=True)
class ProjectorSpec:
    """Projector family, reduction factor ``r`` and channel dims.

    ``kind`` is one of ``one_conv``, ``two_conv``, ``bottleneck_dw``,
    ``bottleneck`` (the default three-layer design) or ``linear_vector``
    (a dense map on pooled feature vectors, mergeable into a classifier).
    """

    c_s: int
    c_t: int
    kind: str = "bottleneck"
    r: int = 2
    spatial_align: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown projector kind {self.kind!r}; expected one of {KINDS}")
        if self.r < 1 or self.c_s < 1 or self.c_t < 1:
            raise ConfigurationError("channel dims and r must be positive")
        if self.kind in ("two_conv", "bottleneck_dw", "bottleneck") and self.c_t % self.r:
            raise ConfigurationError(f"C_t={self.c_t} is not divisible by r={self.r}")

    @property
    def on_vectors(self) -> bool:
        return self.kind == "linear_vector"


def projector_layers(spec: ProjectorSpec) -> list:
    cs, ct = spec.c_s, spec.c_t
    mid = ct // spec.r

    def cbr(cin, cout, k, dw=False):
        return [Conv(cin, cout, k, depthwise=dw), BatchNorm(cout), ReLU()]

    if spec.kind == "linear_vector":
        return [Dense(cs, ct, bias=True)]
    if spec.kind == "one_conv":
        return cbr(cs, ct, 1)
    if spec.kind == "two_conv":
        return cbr(cs, mid, 1) + cbr(mid, ct, 1)
    return cbr(cs, mid, 1) + cbr(mid, mid, 3, dw=spec.kind == "bottleneck_dw") + cbr(mid, ct, 1)


def build_projector(spec: ProjectorSpec, rng: nm.Rng, spatial: tuple[int, int] = (1, 1)) -> Sequential:
    """Materialize a projector for inputs of spatial size ``spatial``."""
    in_shape = (spec.c_s,) if spec.on_vectors else (spec.c_s, *spatial)
    return Sequential.build(projector_layers(spec), in_shape, rng)


def _formula(c_s: int, c_t: int, r: int) -> Fraction:
    r = Fraction(r)
    return c_t * (c_s + c_t + 4) / r + 9 * c_t * c_t / (r * r) + 2 * c_t


def projector_param_formula(c_s: int, c_t: int, r: int) -> int:
    """Closed-form parameter count of the bottleneck projector."""
    if c_t % r:
        raise ConfigurationError(f"C_t={c_t} is not divisible by r={r}")
    f = _formula(c_s, c_t, r)
    assert f.denominator == 1
    return int(f)


@dataclass(frozen=True)
class PropositionResult:
    left_holds: bool
    right_holds: bool
    left_condition: bool

    def __str__(self) -> str:
        word = {True: "holds", False: "fails"}
        return f"left: {word[self.left_holds]}, right: {word[self.right_holds]}"


def check_proposition(c_s: int, c_t: int, r: int) -> PropositionResult:
    """Evaluate ``2F(2r) < F(r) < 4F(2r)`` in exact rational arithmetic.

    ``left_condition`` reports ``C_t > 4 r^2 / 9``, which is equivalent to
    the left inequality.
    """
    f_r = _formula(c_s, c_t, r)
    f_2r = _formula(c_s, c_t, 2 * r)
    return PropositionResult(
        left_holds=2 * f_2r < f_r,
        right_holds=f_r < 4 * f_2r,
        left_condition=9 * c_t > 4 * r * r,
    )


def spatial_align(f_large: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Average-pool (N, C, H1, W1) maps down to (H2, W2)."""
    h1, w1 = f_large.shape[2:]
    h2, w2 = target
    if (h1, w1) == (h2, w2):
        return f_large
    if h1 < h2 or w1 < w2 or h1 % h2 or w1 % w2 or h1 // h2 != w1 // w2:
        raise ConfigurationError(f"cannot pool {h1}x{w1} maps to {h2}x{w2}")
    return nm.avg_pool(f_large, h1 // h2)


def spatial_align_backward(dy: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    h2 = dy.shape[2]
    if source[0] == h2:
        return dy
    return nm.avg_pool_backward(dy, source[0] // h2)


def merge_linear_projector(W_t, b_t, A, b):
    """Fold ``f -> A f + b`` into the classifier ``g -> W_t g + b_t``.

    Returns ``(W_t A, W_t b + b_t)``.
    """
    if W_t.shape[1] != A.shape[0] or b.shape != (A.shape[0],) or b_t.shape != (W_t.shape[0],):
        raise DimensionError(
            f"cannot merge projector {A.shape}/{b.shape} into classifier {W_t.shape}/{b_t.shape}"
        )
    return nm.matmul(W_t, A), nm.matmul(W_t, b[:, None])[:, 0] + b_t
