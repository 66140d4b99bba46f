"""Layer stacks with explicit forward/backward, models and parameter counting.

A network is a feature encoder followed by a single dense classifier. Every
layer implements ``forward`` (returning an output and a cache) and
``backward`` (returning the input gradient and a dict of parameter
gradients). There is no autodiff graph: backpropagation walks the cached
layer list in reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import numeric as nm
from .errors import BuildError, ConfigurationError, DimensionError, UsageError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

Shape = tuple


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    bias: bool = True

    def param_shapes(self) -> dict[str, Shape]:
        shapes = {"weight": (self.out_features, self.in_features)}
        if self.bias:
            shapes["bias"] = (self.out_features,)
        return shapes

    def out_shape(self, in_shape: Shape) -> Shape:
        if tuple(in_shape) != (self.in_features,):
            raise BuildError(f"expects input ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def init(self, rng: nm.Rng) -> dict[str, np.ndarray]:
        bound = math.sqrt(6.0 / self.in_features)
        p = {"weight": rng.uniform(-bound, bound, (self.out_features, self.in_features))}
        if self.bias:
            p["bias"] = np.zeros(self.out_features)
        return p

    def forward(self, p, x, train=False, stats=None, update_stats=False):
        y = nm.matmul(x, p["weight"].T)
        if self.bias:
            y = y + p["bias"]
        return y, x

    def backward(self, p, cache, dy, need_dx=True):
        x = cache
        grads = {"weight": nm.matmul(dy.T, x)}
        if self.bias:
            grads["bias"] = dy.sum(axis=0)
        dx = nm.matmul(dy, p["weight"]) if need_dx else None
        return dx, grads


@dataclass(frozen=True)
class Conv:
    in_ch: int
    out_ch: int
    k: int = 3
    depthwise: bool = False

    def __post_init__(self):
        if self.k not in (1, 3):
            raise ConfigurationError(f"kernel size must be 1 or 3, got {self.k}")
        if self.depthwise and self.in_ch != self.out_ch:
            raise ConfigurationError("depthwise conv needs in_ch == out_ch")

    def param_shapes(self) -> dict[str, Shape]:
        if self.depthwise:
            return {"weight": (self.out_ch, 1, self.k, self.k)}
        return {"weight": (self.out_ch, self.in_ch, self.k, self.k)}

    def out_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise BuildError(f"expects ({self.in_ch}, H, W) input, got {tuple(in_shape)}")
        return (self.out_ch, in_shape[1], in_shape[2])

    def init(self, rng: nm.Rng) -> dict[str, np.ndarray]:
        fan_in = (1 if self.depthwise else self.in_ch) * self.k * self.k
        bound = math.sqrt(6.0 / fan_in)
        return {"weight": rng.uniform(-bound, bound, self.param_shapes()["weight"])}

    def forward(self, p, x, train=False, stats=None, update_stats=False):
        if self.depthwise:
            return nm.depthwise_conv2d(x, p["weight"]), x
        return nm.conv2d(x, p["weight"]), x

    def backward(self, p, cache, dy, need_dx=True):
        if self.depthwise:
            dx, dw = nm.depthwise_conv2d_backward(cache, p["weight"], dy)
        else:
            dx, dw = nm.conv2d_backward(cache, p["weight"], dy)
        return dx, {"weight": dw}


@dataclass(frozen=True)
class BatchNorm:
    ch: int

    def param_shapes(self) -> dict[str, Shape]:
        return {"gamma": (self.ch,), "beta": (self.ch,)}

    def stat_shapes(self) -> dict[str, Shape]:
        return {"running_mean": (self.ch,), "running_var": (self.ch,)}

    def out_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) not in (1, 3) or in_shape[0] != self.ch:
            raise BuildError(f"expects {self.ch} channels, got {tuple(in_shape)}")
        return tuple(in_shape)

    def init(self, rng: nm.Rng) -> dict[str, np.ndarray]:
        return {"gamma": np.ones(self.ch), "beta": np.zeros(self.ch)}

    def init_stats(self) -> dict[str, np.ndarray]:
        return {"running_mean": np.zeros(self.ch), "running_var": np.ones(self.ch)}

    @staticmethod
    def _axes(x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    @staticmethod
    def _bcast(v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, p, x, train=False, stats=None, update_stats=False):
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if update_stats and stats is not None:
                m = x.size // self.ch
                unbiased = var * m / max(m - 1, 1)
                stats["running_mean"] *= BN_MOMENTUM
                stats["running_mean"] += (1.0 - BN_MOMENTUM) * mean
                stats["running_var"] *= BN_MOMENTUM
                stats["running_var"] += (1.0 - BN_MOMENTUM) * unbiased
        else:
            mean = stats["running_mean"]
            var = stats["running_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv_std, x)
        y = xhat * self._bcast(p["gamma"], x) + self._bcast(p["beta"], x)
        return y, (xhat, inv_std, train)

    def backward(self, p, cache, dy, need_dx=True):
        xhat, inv_std, train = cache
        axes = self._axes(dy)
        grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        if not need_dx:
            return None, grads
        dxhat = dy * self._bcast(p["gamma"], dy)
        if train:
            m = dy.size // self.ch
            s1 = self._bcast(dxhat.sum(axis=axes), dy)
            s2 = self._bcast((dxhat * xhat).sum(axis=axes), dy)
            dx = (dxhat - s1 / m - xhat * s2 / m) * self._bcast(inv_std, dy)
        else:
            dx = dxhat * self._bcast(inv_std, dy)
        return dx, grads


@dataclass(frozen=True)
class ReLU:
    def param_shapes(self):
        return {}

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, p, x, train=False, stats=None, update_stats=False):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, p, cache, dy, need_dx=True):
        return dy * cache, {}


@dataclass(frozen=True)
class AvgPool:
    window: int = 2

    def param_shapes(self):
        return {}

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[1] % self.window or in_shape[2] % self.window:
            raise BuildError(f"window {self.window} does not tile input {tuple(in_shape)}")
        return (in_shape[0], in_shape[1] // self.window, in_shape[2] // self.window)

    def forward(self, p, x, train=False, stats=None, update_stats=False):
        return nm.avg_pool(x, self.window), None

    def backward(self, p, cache, dy, need_dx=True):
        return nm.avg_pool_backward(dy, self.window), {}


@dataclass(frozen=True)
class GlobalAvgPool:
    def param_shapes(self):
        return {}

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise BuildError(f"expects (C, H, W) input, got {tuple(in_shape)}")
        return (in_shape[0], 1, 1)

    def forward(self, p, x, train=False, stats=None, update_stats=False):
        return x.mean(axis=(2, 3), keepdims=True), x.shape

    def backward(self, p, cache, dy, need_dx=True):
        n, c, h, w = cache
        return np.broadcast_to(dy / (h * w), cache).copy(), {}


@dataclass(frozen=True)
class Flatten:
    def param_shapes(self):
        return {}

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, p, x, train=False, stats=None, update_stats=False):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, p, cache, dy, need_dx=True):
        return dy.reshape(cache), {}


Layer = Union[Dense, Conv, BatchNorm, ReLU, AvgPool, GlobalAvgPool, Flatten]

LAYER_TYPES = {
    "dense": Dense,
    "conv": Conv,
    "batchnorm": BatchNorm,
    "relu": ReLU,
    "avgpool": AvgPool,
    "globalavgpool": GlobalAvgPool,
    "flatten": Flatten,
}
_TYPE_NAMES = {cls: name for name, cls in LAYER_TYPES.items()}


def layer_to_dict(layer: Layer) -> dict:
    d = {"type": _TYPE_NAMES[type(layer)]}
    d.update(layer.__dict__)
    return d


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    try:
        cls = LAYER_TYPES[d.pop("type")]
    except KeyError as exc:
        raise ConfigurationError(f"unknown layer type in {d!r}") from exc
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigurationError(f"bad fields for {cls.__name__}: {exc}") from exc


def param_count(layers) -> int:
    """Exact number of trainable parameters.

    Accepts a :class:`NetworkSpec`, a :class:`Sequential`, a :class:`Model`
    or any iterable of layers. BatchNorm contributes its affine pair only.
    """
    if isinstance(layers, Model):
        layers = layers.spec
    if isinstance(layers, NetworkSpec):
        layers = list(layers.encoder) + [layers.classifier]
    elif isinstance(layers, Sequential):
        layers = layers.layers
    return sum(int(np.prod(s)) for layer in layers for s in layer.param_shapes().values())


def infer_shapes(layers: Sequence[Layer], input_shape: Shape) -> list[Shape]:
    """Per-sample shapes before and after every layer; raises on mismatch."""
    shapes = [tuple(input_shape)]
    for i, layer in enumerate(layers):
        try:
            shapes.append(layer.out_shape(shapes[-1]))
        except BuildError as exc:
            prev = f"layer {i - 1} ({layers[i - 1]!r})" if i else "the input"
            raise BuildError(f"layer {i} ({layer!r}) is incompatible with {prev}: {exc}") from None
    return shapes


# --------------------------------------------------------------------------
# stacks
# --------------------------------------------------------------------------


class Sequential:
    """A layer list with materialized parameters and BatchNorm running stats.

    Parameter names are ``"<index>.<slot>"``.
    """

    def __init__(self, layers: Sequence[Layer], input_shape: Shape, params=None, stats=None):
        self.layers = tuple(layers)
        self.input_shape = tuple(input_shape)
        self.shapes = infer_shapes(self.layers, self.input_shape)
        self.params: dict[str, np.ndarray] = {} if params is None else params
        self.stats: dict[str, np.ndarray] = {} if stats is None else stats

    @property
    def output_shape(self) -> Shape:
        return self.shapes[-1]

    @classmethod
    def build(cls, layers, input_shape, rng: nm.Rng) -> "Sequential":
        seq = cls(layers, input_shape)
        for i, layer in enumerate(seq.layers):
            if layer.param_shapes():
                for slot, arr in layer.init(rng.child(i)).items():
                    seq.params[f"{i}.{slot}"] = arr
            if isinstance(layer, BatchNorm):
                for slot, arr in layer.init_stats().items():
                    seq.stats[f"{i}.{slot}"] = arr
        return seq

    def copy(self) -> "Sequential":
        return Sequential(
            self.layers,
            self.input_shape,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.stats.items()},
        )

    def slice(self, start: int, stop: int | None = None, copy: bool = True) -> "Sequential":
        """Layers ``[start:stop]`` with re-indexed parameter names.

        With ``copy=False`` the result shares parameter and stat arrays with
        ``self``, so in-place updates through either are visible to both.
        """
        stop = len(self.layers) if stop is None else stop
        out = Sequential(self.layers[start:stop], self.shapes[start])
        for src, store in ((self.params, out.params), (self.stats, out.stats)):
            for name, arr in src.items():
                i, slot = name.split(".", 1)
                if start <= int(i) < stop:
                    store[f"{int(i) - start}.{slot}"] = arr.copy() if copy else arr
        return out

    def with_input_shape(self, input_shape: Shape) -> "Sequential":
        """Same layers and arrays, re-validated for another input shape."""
        return Sequential(self.layers, input_shape, self.params, self.stats)

    def _layer_params(self, i: int, layer: Layer) -> dict:
        return {slot: self.params[f"{i}.{slot}"] for slot in layer.param_shapes()}

    def _layer_stats(self, i: int, layer: Layer):
        if not isinstance(layer, BatchNorm):
            return None
        return {slot: self.stats[f"{i}.{slot}"] for slot in layer.stat_shapes()}

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True):
        expected = self.input_shape
        if tuple(x.shape[1:]) != expected:
            raise DimensionError(f"input shape {tuple(x.shape[1:])} does not match {expected}")
        caches = []
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(
                self._layer_params(i, layer), x, train, self._layer_stats(i, layer), update_stats
            )
            caches.append(cache)
        return x, caches

    def backward(self, caches, dy: np.ndarray, need_input_grad: bool = True):
        grads: dict[str, np.ndarray] = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            need_dx = need_input_grad or i > 0
            dy, g = layer.backward(self._layer_params(i, layer), caches[i], dy, need_dx)
            for slot, arr in g.items():
                grads[f"{i}.{slot}"] = arr
        return dy, grads


# --------------------------------------------------------------------------
# network specs and models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkSpec:
    """Feature encoder + dense classifier, with explicit block boundaries.

    ``blocks`` holds the encoder index at which each building block ends;
    the last entry equals ``len(encoder)``.
    """

    input_shape: tuple
    encoder: tuple
    classifier: Dense
    blocks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "encoder", tuple(self.encoder))
        blocks = tuple(self.blocks) or (len(self.encoder),)
        object.__setattr__(self, "blocks", blocks)
        if any(b <= a for a, b in zip(blocks, blocks[1:])) or blocks[-1] != len(self.encoder):
            raise ConfigurationError(f"block boundaries {blocks} must increase and end at {len(self.encoder)}")
        shapes = infer_shapes(self.encoder, self.input_shape)
        if len(shapes[-1]) != 1:
            raise BuildError(f"encoder must end in a vector, got shape {shapes[-1]}")
        if shapes[-1][0] != self.classifier.in_features:
            raise BuildError(
                f"classifier {self.classifier!r} is incompatible with encoder output {shapes[-1]}"
            )

    @property
    def num_classes(self) -> int:
        return self.classifier.out_features

    @property
    def feature_dim(self) -> int:
        return self.classifier.in_features

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "encoder": [layer_to_dict(layer) for layer in self.encoder],
            "classifier": layer_to_dict(self.classifier),
            "blocks": list(self.blocks),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        if "arch" in d:
            return plain_cnn(**{k: v for k, v in d.items() if k != "arch"})
        cls_layer = layer_from_dict(d["classifier"])
        if not isinstance(cls_layer, Dense):
            raise ConfigurationError("classifier must be a dense layer")
        return cls(
            input_shape=tuple(d["input_shape"]),
            encoder=tuple(layer_from_dict(x) for x in d["encoder"]),
            classifier=cls_layer,
            blocks=tuple(d.get("blocks", ())),
        )


def plain_cnn(
    widths: Sequence[int],
    num_classes: int,
    input_shape: Sequence[int] = (3, 8, 8),
    convs_per_block: int = 1,
    pools: Sequence[bool] | None = None,
) -> NetworkSpec:
    """Plain conv/BN/ReLU blocks with a global-average-pooling head.

    Each entry of ``widths`` is one building block. ``pools[i]`` appends a
    2x average pooling to block ``i`` (default: every block but the last).
    """
    if pools is None:
        pools = [True] * (len(widths) - 1)
    encoder: list[Layer] = []
    blocks = []
    c = input_shape[0]
    for bi, w in enumerate(widths):
        for _ in range(convs_per_block):
            encoder += [Conv(c, w, 3), BatchNorm(w), ReLU()]
            c = w
        if bi < len(widths) - 1:
            if pools[bi]:
                encoder.append(AvgPool(2))
        else:
            encoder += [GlobalAvgPool(), Flatten()]
        blocks.append(len(encoder))
    return NetworkSpec(tuple(input_shape), tuple(encoder), Dense(c, num_classes), tuple(blocks))


def linear_net(in_features: int, num_classes: int) -> NetworkSpec:
    """A single dense classifier on flat inputs."""
    return NetworkSpec((in_features,), (Flatten(),), Dense(in_features, num_classes))


@dataclass
class ModelCache:
    version: int
    encoder: list
    classifier: list
    train: bool


class Model:
    """Materialized :class:`NetworkSpec`: parameters, BN running stats, mode."""

    def __init__(self, spec: NetworkSpec, encoder: Sequential, classifier: Sequential):
        self.spec = spec
        self.encoder = encoder
        self.classifier = classifier
        self.mode = "eval"
        self.version = 0

    def train(self) -> "Model":
        self.mode = "train"
        return self

    def eval(self) -> "Model":
        self.mode = "eval"
        return self

    @property
    def params(self) -> dict[str, np.ndarray]:
        out = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"classifier.{k}": v for k, v in self.classifier.params.items()})
        return out

    @property
    def bn_running_stats(self) -> dict[str, np.ndarray]:
        return {f"encoder.{k}": v for k, v in self.encoder.stats.items()}

    def mark_updated(self) -> None:
        self.version += 1

    def copy(self) -> "Model":
        m = Model(self.spec, self.encoder.copy(), self.classifier.copy())
        m.mode = self.mode
        return m

    def logits(self, x: np.ndarray, head: str | None = None) -> np.ndarray:
        """Eval-mode logits; running stats are left untouched."""
        feats, _ = self.encoder.forward(x, train=False)
        return self.classifier.forward(feats, train=False)[0]

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.encoder.forward(x, train=False)[0]

    def forward(self, batch: np.ndarray):
        """Return ``(features, logits, cache)`` for a batch."""
        train = self.mode == "train"
        feats, enc_cache = self.encoder.forward(batch, train)
        logits, cls_cache = self.classifier.forward(feats, train)
        return feats, logits, ModelCache(self.version, enc_cache, cls_cache, train)

    def backward(self, cache: ModelCache, grad_logits=None, grad_features=None, frozen=()):
        """Named parameter gradients from exactly one upstream gradient.

        A gradient at the logits flows through the classifier and encoder; a
        gradient at the features reaches the encoder only.
        """
        if cache.version != self.version:
            raise UsageError("stale cache: parameters changed since the forward pass")
        if (grad_logits is None) == (grad_features is None):
            raise UsageError("supply exactly one of grad_logits or grad_features")
        grads = {}
        if grad_logits is not None:
            grad_features, g = self.classifier.backward(cache.classifier, grad_logits)
            grads.update({f"classifier.{k}": v for k, v in g.items()})
        _, g = self.encoder.backward(cache.encoder, grad_features, need_input_grad=False)
        grads.update({f"encoder.{k}": v for k, v in g.items()})
        frozen = set(frozen)
        return {k: v for k, v in grads.items() if k not in frozen}


def build(spec: NetworkSpec, rng: nm.Rng) -> Model:
    """Kaiming-uniform weights, zero biases, unit BN scale, fresh running stats."""
    encoder = Sequential.build(spec.encoder, spec.input_shape, rng.child("encoder"))
    classifier = Sequential.build(
        (spec.classifier,), (spec.feature_dim,), rng.child("classifier")
    )
    return Model(spec, encoder, classifier)


# --------------------------------------------------------------------------
# reusing teacher layers
# --------------------------------------------------------------------------


def _pooling_suffix_start(layers: Sequence[Layer]) -> int:
    """Index where the trailing parameter-free pooling/flatten suffix begins."""
    i = len(layers)
    while i > 0 and isinstance(layers[i - 1], (GlobalAvgPool, Flatten)):
        i -= 1
    return i


def reuse_index(spec: NetworkSpec, k_blocks: int, at_vectors: bool = False) -> int:
    """Encoder index whose activation feeds the reused part.

    ``k_blocks == 0`` selects the last feature maps (the input of the
    trailing global pooling) or, with ``at_vectors``, the penultimate
    feature vector. ``k_blocks >= 1`` moves the split to the start of the
    last ``k_blocks`` building blocks.
    """
    nb = len(spec.blocks)
    if not 0 <= k_blocks <= nb:
        raise ConfigurationError(f"k_blocks={k_blocks} outside [0, {nb}]")
    if at_vectors and k_blocks:
        raise ConfigurationError("vector alignment only supports k_blocks=0")
    if k_blocks == 0:
        return len(spec.encoder) if at_vectors else _pooling_suffix_start(spec.encoder)
    return spec.blocks[nb - 1 - k_blocks] if k_blocks < nb else 0


@dataclass
class ReuseSplit:
    """Result of :func:`split_reuse`.

    ``student_layers`` is the trainable student prefix; ``tail`` is a frozen
    copy of the teacher layers from ``teacher_index`` onward followed by the
    teacher classifier. ``target_shape`` is the per-sample shape of the
    teacher activation the projected student features must match.
    """

    k_blocks: int
    student_layers: tuple
    student_index: int
    student_shape: tuple
    teacher_index: int
    target_shape: tuple
    tail: Sequential
    teacher_prefix: Sequential = field(repr=False, default=None)


def split_reuse(teacher: Model, student_spec: NetworkSpec, k_blocks: int, at_vectors: bool = False) -> ReuseSplit:
    t_idx = reuse_index(teacher.spec, k_blocks, at_vectors)
    if k_blocks > len(student_spec.blocks):
        raise ConfigurationError(
            f"student has {len(student_spec.blocks)} blocks, cannot truncate by {k_blocks}"
        )
    s_idx = reuse_index(student_spec, k_blocks, at_vectors)
    full = Sequential(
        tuple(teacher.spec.encoder) + (teacher.spec.classifier,),
        teacher.spec.input_shape,
        dict(teacher.encoder.params),
        dict(teacher.encoder.stats),
    )
    n_enc = len(teacher.spec.encoder)
    for name, arr in teacher.classifier.params.items():
        _, slot = name.split(".", 1)
        full.params[f"{n_enc}.{slot}"] = arr
    tail = full.slice(t_idx)
    s_shapes = infer_shapes(student_spec.encoder, student_spec.input_shape)
    return ReuseSplit(
        k_blocks=k_blocks,
        student_layers=tuple(student_spec.encoder[:s_idx]),
        student_index=s_idx,
        student_shape=s_shapes[s_idx],
        teacher_index=t_idx,
        target_shape=full.shapes[t_idx],
        tail=tail,
        teacher_prefix=full.slice(0, t_idx),
    )


def identity_dense_init(seq: Sequential) -> None:
    """Overwrite every square dense weight with I and every bias with 0."""
    for i, layer in enumerate(seq.layers):
        if isinstance(layer, Dense):
            if layer.in_features != layer.out_features:
                raise ConfigurationError(f"layer {i} is not square")
            seq.params[f"{i}.weight"] = np.eye(layer.in_features)
            if layer.bias:
                seq.params[f"{i}.bias"] = np.zeros(layer.out_features)


def clone_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def params_equal(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> bool:
    """Bitwise equality of two named tensor collections."""
    if a.keys() != b.keys():
        return False
    return all(
        a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a
    )
