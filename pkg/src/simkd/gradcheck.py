"""Central finite-difference checks for every layer type and every loss.

Each case draws a small random instance, compares the analytic gradient
with central differences and records the relative error. Layer cases test
the input gradient and every parameter gradient of ``sum(R * layer(x))``
for a random projection ``R``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from .network import AvgPool, BatchNorm, Conv, Dense, Flatten, GlobalAvgPool, ReLU, Sequential
from .numeric import Rng, finite_diff_grad, relative_error

TOLERANCE = 1e-6


@dataclass
class CaseResult:
    name: str
    instances: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _layer_case(make: Callable[[Rng], tuple], rng: Rng) -> float:
    layer, shape = make(rng)
    seq = Sequential.build((layer,), shape[1:], rng.child("init"))
    for k in seq.params:
        # move BN affine terms and biases away from their trivial init
        seq.params[k] = seq.params[k] + rng.child(k).normal(seq.params[k].shape, 0.5)
    x = rng.child("x").normal(shape)
    if isinstance(layer, ReLU):
        # keep every input well clear of the kink
        x = np.where(np.abs(x) < 0.05, x + np.sign(x + 1e-12) * 0.1, x)
    y, caches = seq.forward(x, train=True, update_stats=False)
    R = rng.child("R").normal(y.shape)
    dx, grads = seq.backward(caches, R)

    def objective_x(xv):
        return float((R * seq.forward(xv, train=True, update_stats=False)[0]).sum())

    worst = relative_error(dx, finite_diff_grad(objective_x, x))
    for name, arr in seq.params.items():
        def objective_p(pv, name=name):
            saved = seq.params[name]
            seq.params[name] = pv
            try:
                return objective_x(x)
            finally:
                seq.params[name] = saved

        worst = max(worst, relative_error(grads[name], finite_diff_grad(objective_p, arr)))
    return worst


def _size(rng: Rng, low: int, high: int) -> int:
    return int(rng.integers(low, high + 1))


def _layer_cases() -> dict[str, Callable[[Rng], tuple]]:
    def dense(r):
        i, o = _size(r, 1, 6), _size(r, 1, 6)
        return Dense(i, o, bias=bool(r.random() < 0.7)), (_size(r, 1, 4), i)

    def conv(r):
        ci, co, k = _size(r, 1, 3), _size(r, 1, 3), int(r.integers(0, 2)) * 2 + 1
        return Conv(ci, co, k), (_size(r, 1, 2), ci, _size(r, 2, 4), _size(r, 2, 4))

    def dwconv(r):
        c = _size(r, 1, 3)
        return Conv(c, c, 3, depthwise=True), (_size(r, 1, 2), c, _size(r, 2, 4), _size(r, 2, 4))

    # With only two values per channel the normalized output is +-1 whatever
    # the input, so the true input gradient is O(eps) and its relative error
    # measures rounding noise. Draw at least three values per channel.
    def bn_maps(r):
        c = _size(r, 1, 3)
        return BatchNorm(c), (_size(r, 2, 3), c, _size(r, 2, 3), _size(r, 1, 3))

    def bn_vectors(r):
        c = _size(r, 1, 4)
        return BatchNorm(c), (_size(r, 3, 6), c)

    def relu(r):
        return ReLU(), (_size(r, 1, 3), _size(r, 1, 3), 2, 2)

    def avgpool(r):
        w = _size(r, 1, 2)
        return AvgPool(w), (_size(r, 1, 2), _size(r, 1, 2), 2 * w, 2 * w)

    def gap(r):
        return GlobalAvgPool(), (_size(r, 1, 2), _size(r, 1, 3), _size(r, 1, 3), _size(r, 1, 3))

    def flatten(r):
        return Flatten(), (_size(r, 1, 2), _size(r, 1, 3), _size(r, 1, 2), _size(r, 1, 2))

    return {
        "layer/dense": dense,
        "layer/conv": conv,
        "layer/conv_depthwise": dwconv,
        "layer/batchnorm_maps": bn_maps,
        "layer/batchnorm_vectors": bn_vectors,
        "layer/relu": relu,
        "layer/avgpool": avgpool,
        "layer/globalavgpool": gap,
        "layer/flatten": flatten,
    }


def _logits_problem(rng: Rng):
    n, k = _size(rng, 1, 5), _size(rng, 2, 6)
    s = rng.child("s").normal((n, k), 2.0)
    t = rng.child("t").normal((n, k), 2.0)
    y = rng.child("y").integers(0, k, n)
    return s, t, y


def _feature_problem(rng: Rng):
    n, d, k = _size(rng, 1, 5), _size(rng, 1, 6), _size(rng, 2, 5)
    f_t = rng.child("ft").normal((n, d))
    f_s = rng.child("fs").normal((n, d))
    W = rng.child("W").normal((k, d))
    return f_t, f_s, W


def _loss_cases() -> dict[str, Callable[[Rng], float]]:
    def ce(r):
        s, _, y = _logits_problem(r)
        return relative_error(L.cross_entropy(s, y).grad, finite_diff_grad(lambda v: L.cross_entropy(v, y).value, s))

    def kd(T):
        def case(r):
            s, t, y = _logits_problem(r)
            g = L.kd_loss(s, t, y, T).grad
            return relative_error(g, finite_diff_grad(lambda v: L.kd_loss(v, t, y, T).value, s))

        return case

    def feat(fn):
        def case(r):
            f_t, f_s, W = _feature_problem(r)
            fixed = (f_t,) if fn is L.simkd_loss else (W, f_t)
            analytic = fn(*fixed, f_s).grad
            return relative_error(analytic, finite_diff_grad(lambda v: fn(*fixed, v).value, f_s))

        return case

    def joint(alpha):
        def case(r):
            s, t, y = _logits_problem(r)
            f_t, f_s, _ = _feature_problem(r.child("features"))

            def value(sv, fv):
                return L.joint_loss(alpha, L.kd_loss(sv, t, y), L.simkd_loss(f_t, fv)).value

            jl = L.joint_loss(alpha, L.kd_loss(s, t, y), L.simkd_loss(f_t, f_s))
            e1 = relative_error(jl.grad_logits, finite_diff_grad(lambda v: value(v, f_s), s))
            e2 = relative_error(jl.grad_features, finite_diff_grad(lambda v: value(s, v), f_s))
            return max(e1, e2)

        return case

    return {
        "loss/cross_entropy": ce,
        "loss/kd_T1": kd(1.0),
        "loss/kd_T4": kd(4.0),
        "loss/simkd_l2": feat(L.simkd_loss),
        "loss/output_l2": feat(L.output_l2_loss),
        "loss/combined_l2": feat(L.combined_l2_loss),
        "loss/joint_alpha0": joint(0.0),
        "loss/joint_alpha0.5": joint(0.5),
        "loss/joint_alpha1": joint(1.0),
    }


def case_names() -> list[str]:
    return list(_layer_cases()) + list(_loss_cases())


def run_suite(instances: int = 100, seed: int = 0, only: str | None = None) -> list[CaseResult]:
    """Run every case (or those whose name contains ``only``)."""
    root = Rng(seed, ("gradcheck",))
    cases: dict[str, Callable[[Rng], float]] = {
        name: (lambda r, make=make: _layer_case(make, r)) for name, make in _layer_cases().items()
    }
    cases.update(_loss_cases())
    results = []
    for name, case in cases.items():
        if only and only not in name:
            continue
        t0 = time.perf_counter()
        worst = max(case(root.child(name).child(i)) for i in range(instances))
        results.append(CaseResult(name, instances, worst, time.perf_counter() - t0))
    return results
