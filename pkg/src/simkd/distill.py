"""Training pipelines: baseline, vanilla KD, SimKD and its variants.

Every pipeline is a pure function of (specs, data, config): all randomness
comes from ``Rng(config.seed)`` children, and teachers are only ever run in
eval mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import losses as L
from .data import Dataset, augment
from .errors import ConfigurationError, DomainError, InputError, UsageError
from .network import (
    Dense,
    Model,
    NetworkSpec,
    Sequential,
    build,
    param_count,
    split_reuse,
)
from .numeric import Rng, avg_pool, avg_pool_backward
from .projector import ProjectorSpec, build_projector, merge_linear_projector

METHODS = ("baseline", "teacher", "kd", "simkd", "joint", "sequential", "simkd_plus", "multi_teacher")
VARIANTS = ("aveg", "simkd", "simkd_v")


@dataclass(frozen=True)
class DistillConfig:
    """Method selector plus optimizer, schedule and augmentation settings."""

    method: str = "simkd"
    T: float = L.DEFAULT_T
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.05
    lr_milestones: tuple = (35, 45, 55)
    lr_decay: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 5e-4
    seed: int = 0
    alpha: float | None = None
    k_blocks: int | None = None
    variant: str | None = None
    projector_kind: str = "bottleneck"
    r: int = 2
    augment: bool = True
    flip_prob: float = 0.5
    pad: int = 1

    def __post_init__(self):
        object.__setattr__(self, "lr_milestones", tuple(self.lr_milestones))
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        ms = self.lr_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(m >= self.epochs or m < 1 for m in ms):
            raise ConfigurationError(f"milestones {ms} must increase strictly within (0, {self.epochs})")
        if self.T <= 0:
            raise DomainError("temperature must be positive")
        if self.method == "joint" and (self.alpha is None or not 0.0 <= self.alpha <= 1.0):
            raise ConfigurationError("joint training needs alpha in [0, 1]")
        if self.method == "simkd_plus" and (self.k_blocks is None or self.k_blocks < 0):
            raise ConfigurationError("simkd_plus needs k_blocks >= 0")
        if self.method == "multi_teacher" and self.variant not in VARIANTS:
            raise ConfigurationError(f"multi_teacher needs variant in {VARIANTS}")

    @classmethod
    def desk(cls, epochs: int = 60, **kw) -> "DistillConfig":
        """Schedule with milestones at 35/60, 45/60 and 55/60 of ``epochs``."""
        ms = sorted({round(epochs * f) for f in (35 / 60, 45 / 60, 55 / 60)} - {0, epochs})
        return cls(epochs=epochs, lr_milestones=tuple(ms), **kw)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        drops = sum(1 for m in self.lr_milestones if epoch >= m)
        return self.lr * self.lr_decay**drops

    def projector_spec(self, c_s: int, c_t: int, kind: str | None = None) -> ProjectorSpec:
        return ProjectorSpec(c_s, c_t, kind or self.projector_kind, self.r)


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


def sgd_step(params, grads, state, lr, momentum=0.9, weight_decay=0.0, nesterov=True, frozen=()):
    """In-place SGD update with optional (Nesterov) momentum and L2 decay.

    ``v <- mu v + (g + wd theta)``; the Nesterov step is
    ``theta <- theta - lr (g + wd theta + mu v)``. Names in ``frozen`` are
    skipped. Returns ``(params, state)``.
    """
    frozen = set(frozen)
    extra = set(grads) - set(params)
    if extra:
        raise UsageError(f"gradients for unknown parameters: {sorted(extra)}")
    missing = set(params) - set(grads) - frozen
    if missing:
        raise UsageError(f"no gradient for parameters: {sorted(missing)}")
    for name, theta in params.items():
        if name in frozen:
            continue
        g = grads[name]
        if weight_decay:
            g = g + weight_decay * theta
        if momentum:
            v = state.get(name)
            v = g.copy() if v is None else momentum * v + g
            state[name] = v
            step = g + momentum * v if nesterov else v
        else:
            step = g
        theta -= lr * step
    return params, state


# --------------------------------------------------------------------------
# reports and budgets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamBudget:
    """Parameter counts entering the pruning ratio."""

    se: int
    proj: int
    t: int
    tc: int
    sc: int

    def __post_init__(self):
        if min(self.se, self.proj, self.t, self.tc, self.sc) < 0:
            raise ConfigurationError("parameter counts must be non-negative")
        if self.tc > self.t:
            raise ConfigurationError("teacher classifier cannot exceed the whole teacher")

    @property
    def delta(self) -> int:
        return self.tc - self.sc


def pruning_ratio_exact(budget: ParamBudget) -> Fraction:
    """``1 - (se + proj + tc - sc) / t`` as an exact rational."""
    if budget.t == 0:
        raise DomainError("teacher parameter count is zero")
    return 1 - Fraction(budget.se + budget.proj + budget.delta, budget.t)


def pruning_ratio(budget: ParamBudget) -> float:
    return float(pruning_ratio_exact(budget))


@dataclass(frozen=True)
class EvalResult:
    top1: float
    nll: float
    l2: float | None = None


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    test_top1: float
    test_nll: float
    test_l2: float | None


@dataclass
class TrainReport:
    method: str
    seed: int
    records: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    budget: ParamBudget | None = None
    pruning_ratio: float | None = None
    alpha: float | None = None
    r: int | None = None
    k_blocks: int | None = None
    variant: str | None = None

    @property
    def top1(self) -> float:
        """Top-1 of the primary head after training."""
        return next(iter(self.final.values())).top1


# --------------------------------------------------------------------------
# assemblies
# --------------------------------------------------------------------------


def _pool(x, window):
    return x if window == 1 else avg_pool(x, window)


def _unpool(dx, window):
    return dx if window == 1 else avg_pool_backward(dx, window)


@dataclass
class Branch:
    """Trunk output -> [pool] -> [projector] -> head.

    ``reference`` is the frozen teacher prefix producing the alignment target
    for this branch; it is only used for training and l2 metrics and is not
    part of the deployed student.
    """

    head: Sequential
    projector: Sequential | None = None
    student_pool: int = 1
    reference: Sequential | None = None
    target_pool: int = 1

    def project(self, s: np.ndarray) -> np.ndarray:
        s = _pool(s, self.student_pool)
        return s if self.projector is None else self.projector.forward(s)[0]

    def target(self, x: np.ndarray) -> np.ndarray:
        return _pool(self.reference.forward(x)[0], self.target_pool)


class Assembly:
    """A deployed student: shared trunk plus one or more named heads.

    Each head is a list of branches whose logits are averaged.
    """

    def __init__(self, trunk: Sequential, heads: dict[str, list[Branch]]):
        self.trunk = trunk
        self.heads = heads

    @property
    def primary(self) -> str:
        return next(iter(self.heads))

    def logits(self, x: np.ndarray, head: str | None = None) -> np.ndarray:
        return self.outputs(x, head)[0]

    def outputs(self, x: np.ndarray, head: str | None = None) -> tuple[np.ndarray, float | None]:
        """Logits and the summed l2 alignment loss (``None`` if unaligned)."""
        s = self.trunk.forward(x)[0]
        branches = self.heads[head or self.primary]
        l2 = None
        outs = []
        for br in branches:
            h = br.project(s)
            outs.append(br.head.forward(h)[0])
            if br.reference is not None:
                l2 = (l2 or 0.0) + L.simkd_loss(br.target(x), h).value
        return (outs[0] if len(outs) == 1 else np.mean(outs, axis=0)), l2

    def features(self, x: np.ndarray, head: str | None = None) -> np.ndarray:
        """Input of the final dense layer of the first branch of ``head``."""
        br = self.heads[head or self.primary][0]
        h = br.project(self.trunk.forward(x)[0])
        return br.head.slice(0, len(br.head.layers) - 1, copy=False).forward(h)[0]

    def alignment_loss(self, x: np.ndarray, head: str | None = None) -> float | None:
        """Summed l2 alignment loss over the aligned branches, or ``None``."""
        branches = [br for br in self.heads[head or self.primary] if br.reference is not None]
        if not branches:
            return None
        s = self.trunk.forward(x)[0]
        return sum(L.simkd_loss(br.target(x), br.project(s)).value for br in branches)

    def stacks(self) -> list[Sequential]:
        """Every distinct deployed stack (trunk, projectors, heads)."""
        out, seen = [self.trunk], {id(self.trunk)}
        for branches in self.heads.values():
            for br in branches:
                for seq in (br.projector, br.head):
                    if seq is not None and id(seq) not in seen:
                        seen.add(id(seq))
                        out.append(seq)
        return out

    def params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, seq in enumerate(self.stacks()) for k, v in seq.params.items()}


def param_count_deployed(assembly, head: str | None = None) -> int:
    """Parameters needed at inference for ``head``."""
    if isinstance(assembly, Model):
        return param_count(assembly)
    total = param_count(assembly.trunk)
    for br in assembly.heads[head or assembly.primary]:
        total += param_count(br.head) + (param_count(br.projector) if br.projector else 0)
    return total


def evaluate(assembly, dataset: Dataset, head: str | None = None, batch_size: int = 500) -> EvalResult:
    """Top-1 accuracy (%), NLL and, for aligned assemblies, test l2 loss."""
    n = len(dataset)
    if n == 0:
        raise InputError("cannot evaluate on an empty dataset")
    correct = 0
    nll_sum = 0.0
    l2_sum = 0.0
    has_l2 = isinstance(assembly, Assembly)
    for i in range(0, n, batch_size):
        x, y = dataset.x[i:i + batch_size], dataset.y[i:i + batch_size]
        if has_l2:
            logits, v = assembly.outputs(x, head)
            has_l2 = v is not None
            l2_sum += (v or 0.0) * len(y)
        else:
            logits = assembly.logits(x, head)
        correct += int((np.argmax(logits, axis=1) == y).sum())
        nll_sum += L.nll(logits, y) * len(y)
    return EvalResult(100.0 * correct / n, nll_sum / n, l2_sum / n if has_l2 else None)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------


def _batches(config: DistillConfig, train: Dataset, rng: Rng, epoch: int):
    order = rng.child("order").child(epoch).permutation(len(train))
    arng = rng.child("augment").child(epoch)
    for i in range(0, len(order), config.batch_size):
        idx = order[i:i + config.batch_size]
        x = train.x[idx]
        if config.augment:
            x = augment(x, arng, config.flip_prob, config.pad)
        yield x, train.y[idx]


def _fit(
    config: DistillConfig,
    train: Dataset,
    params: dict[str, np.ndarray],
    step: Callable,
    report: TrainReport,
    evaluate_fn: Callable[[], dict[str, EvalResult]],
    on_update: Callable[[], None] = lambda: None,
) -> TrainReport:
    if len(train) == 0:
        raise InputError("training set is empty")
    rng = Rng(config.seed).child("loop")
    state: dict = {}
    report.initial = evaluate_fn()
    report.final = report.initial
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        total, count = 0.0, 0
        for xb, yb in _batches(config, train, rng, epoch):
            value, grads = step(xb, yb)
            sgd_step(params, grads, state, lr, config.momentum, config.weight_decay, config.nesterov)
            on_update()
            total += value * len(yb)
            count += len(yb)
        report.final = evaluate_fn()
        first = next(iter(report.final.values()))
        report.records.append(
            EpochRecord(epoch + 1, lr, total / count, first.top1, first.nll, first.l2)
        )
    return report


def _prefixed(prefix: str, d: dict) -> dict:
    return {f"{prefix}{k}": v for k, v in d.items()}


def _check_teachers(teachers: Sequence[Model], spec: NetworkSpec) -> None:
    for t in teachers:
        if t.spec.num_classes != spec.num_classes:
            raise ConfigurationError(
                f"teacher has {t.spec.num_classes} classes, student {spec.num_classes}"
            )


def _student(spec: NetworkSpec, config: DistillConfig, student: Model | None) -> Model:
    if student is not None:
        if student.spec != spec:
            raise ConfigurationError("initial student does not match the student spec")
        return student
    return build(spec, Rng(config.seed).child("student"))


def _budget(student_spec, teachers, se, proj, tc) -> ParamBudget:
    return ParamBudget(
        se=se,
        proj=proj,
        t=sum(param_count(t) for t in teachers),
        tc=tc,
        sc=param_count((student_spec.classifier,)),
    )


def _finish(report: TrainReport, budget: ParamBudget | None) -> TrainReport:
    report.budget = budget
    report.pruning_ratio = None if budget is None else pruning_ratio(budget)
    return report


# --------------------------------------------------------------------------
# cross-entropy and KD family
# --------------------------------------------------------------------------


def _kd_family(
    student: Model,
    teachers: Sequence[Model],
    train: Dataset,
    test: Dataset,
    config: DistillConfig,
    report: TrainReport,
    joint: tuple[int, Branch] | None = None,
    alpha: float = 0.0,
):
    """Train a full student on CE (no teachers), KD, or KD + alignment."""
    split = len(student.encoder.layers) if joint is None else joint[0]
    branch = None if joint is None else joint[1]
    prefix = student.encoder.slice(0, split, copy=False)
    suffix = student.encoder.slice(split, copy=False)
    head = student.classifier

    def step(xb, yb):
        s, c1 = prefix.forward(xb, train=True)
        f, c2 = suffix.forward(s, train=True)
        g, c3 = head.forward(f, train=True)
        if teachers:
            probs = np.mean([L.softmax_t(t.logits(xb), config.T) for t in teachers], axis=0)
            loss = L.kd_loss_soft(g, probs, yb, config.T)
        else:
            loss = L.cross_entropy(g, yb)
        grads = {}
        if branch is not None:
            sp = _pool(s, branch.student_pool)
            p, pc = branch.projector.forward(sp, train=True)
            jl = L.joint_loss(alpha, loss, L.simkd_loss(branch.target(xb), p))
            value, grad_g = jl.value, jl.grad_logits
            dsp, gp = branch.projector.backward(pc, jl.grad_features)
            grads.update(_prefixed("projector.", gp))
        else:
            value, grad_g = loss.value, loss.grad
        df, gc = head.backward(c3, grad_g)
        ds, gs = suffix.backward(c2, df)
        if branch is not None:
            ds = ds + _unpool(dsp, branch.student_pool)
        _, gpre = prefix.backward(c1, ds, need_input_grad=False)
        grads.update(_prefixed("classifier.", gc))
        grads.update(_prefixed("suffix.", gs))
        grads.update(_prefixed("prefix.", gpre))
        return value, grads

    params = {}
    if branch is not None:
        params.update(_prefixed("projector.", branch.projector.params))
    params.update(_prefixed("classifier.", head.params))
    params.update(_prefixed("suffix.", suffix.params))
    params.update(_prefixed("prefix.", prefix.params))

    if branch is None:
        def evaluate_fn():
            return {"student": evaluate(student, test)}
    else:
        assembly = _joint_assembly(student, split, branch)

        def evaluate_fn():
            return {h: evaluate(assembly, test, h) for h in ("student", "teacher")}

    return _fit(config, train, params, step, report, evaluate_fn, student.mark_updated)


def train_model(spec: NetworkSpec, train: Dataset, test: Dataset, config: DistillConfig, student: Model | None = None):
    """Plain cross-entropy training (baseline students and teachers)."""
    model = _student(spec, config, student)
    report = TrainReport(config.method, config.seed)
    _kd_family(model, [], train, test, config, report)
    return model, report


def distill_kd(teacher, student_spec: NetworkSpec, train, test, config: DistillConfig, student: Model | None = None):
    """Vanilla KD from one teacher, or AVEG when ``teacher`` is a list."""
    teachers = list(teacher) if isinstance(teacher, (list, tuple)) else [teacher]
    _check_teachers(teachers, student_spec)
    model = _student(student_spec, config, student)
    report = TrainReport(config.method, config.seed, variant=config.variant)
    _kd_family(model, teachers, train, test, config, report)
    se = param_count(student_spec.encoder)
    sc = param_count((student_spec.classifier,))
    return model, _finish(report, _budget(student_spec, teachers, se, 0, sc))


# --------------------------------------------------------------------------
# SimKD family
# --------------------------------------------------------------------------


def _aligned_branch(teacher: Model, student: Model, k_blocks: int, pspec_fn, rng: Rng, at_vectors=False):
    """Build the trunk view, projector and frozen tail for one teacher."""
    split = split_reuse(teacher, student.spec, k_blocks, at_vectors)
    s_shape, t_shape = split.student_shape, split.target_shape
    tail = split.tail
    student_pool = target_pool = 1
    spatial = (1, 1)
    if not at_vectors:
        if len(s_shape) != 3 or len(t_shape) != 3:
            raise ConfigurationError("convolutional projectors need feature maps on both sides")
        (hs, ws), (ht, wt) = s_shape[1:], t_shape[1:]
        if hs != ws or ht != wt:
            raise ConfigurationError("spatial alignment needs square feature maps")
        if hs > ht:
            if hs % ht:
                raise ConfigurationError(f"cannot pool {hs}x{ws} student maps to {ht}x{wt}")
            student_pool = hs // ht
        elif ht > hs:
            if ht % hs:
                raise ConfigurationError(f"cannot pool {ht}x{wt} teacher maps to {hs}x{ws}")
            target_pool = ht // hs
            tail = tail.with_input_shape((t_shape[0], hs, ws))
        spatial = (min(hs, ht), min(ws, wt))
    pspec = pspec_fn(s_shape[0], t_shape[0])
    if pspec.on_vectors != at_vectors:
        raise ConfigurationError(f"projector kind {pspec.kind!r} does not fit this alignment point")
    projector = build_projector(pspec, rng, spatial)
    trunk = student.encoder.slice(0, split.student_index, copy=False)
    branch = Branch(tail, projector, student_pool, split.teacher_prefix, target_pool)
    return trunk, branch, split


def _train_aligned(trunk: Sequential, branches: list[Branch], train, test, config, report, assembly):
    """Train trunk + projectors on the summed l2 alignment loss only."""

    def step(xb, yb):
        s, sc = trunk.forward(xb, train=True)
        ds = None
        value = 0.0
        grads = {}
        for j, br in enumerate(branches):
            sp = _pool(s, br.student_pool)
            p, pc = br.projector.forward(sp, train=True)
            loss = L.simkd_loss(br.target(xb), p)
            dsp, gp = br.projector.backward(pc, loss.grad)
            grads.update(_prefixed(f"projector{j}.", gp))
            d = _unpool(dsp, br.student_pool)
            ds = d if ds is None else ds + d
            value += loss.value
        if trunk.layers:
            _, gs = trunk.backward(sc, ds, need_input_grad=False)
            grads.update(_prefixed("student.", gs))
        return value, grads

    params = _prefixed("student.", trunk.params)
    for j, br in enumerate(branches):
        params.update(_prefixed(f"projector{j}.", br.projector.params))

    def evaluate_fn():
        return {h: evaluate(assembly, test, h) for h in assembly.heads}

    return _fit(config, train, params, step, report, evaluate_fn)


def distill_simkd_plus(
    teacher: Model,
    student_spec: NetworkSpec,
    train,
    test,
    config: DistillConfig,
    k_blocks: int | None = None,
    student: Model | None = None,
    projector: Sequential | None = None,
):
    """SimKD reusing the teacher classifier and its last ``k_blocks`` blocks.

    Only the truncated student encoder and the projector are trained, by the
    l2 alignment loss alone; labels are never read.
    """
    k = config.k_blocks if k_blocks is None else k_blocks
    k = 0 if k is None else k
    _check_teachers([teacher], student_spec)
    model = _student(student_spec, config, student)
    at_vectors = config.projector_kind == "linear_vector"
    trunk, branch, split = _aligned_branch(
        teacher, model, k, config.projector_spec, Rng(config.seed).child("projector").child(0), at_vectors
    )
    if projector is not None:
        branch.projector = projector
    assembly = Assembly(trunk, {"teacher": [branch]})
    report = TrainReport(config.method, config.seed, r=config.r, k_blocks=k)
    _train_aligned(trunk, [branch], train, test, config, report, assembly)
    budget = _budget(
        student_spec,
        [teacher],
        se=param_count(trunk),
        proj=param_count(branch.projector),
        tc=param_count(branch.head),
    )
    return assembly, _finish(report, budget)


def distill_simkd(teacher, student_spec, train, test, config, student=None, projector=None):
    """Reuse the teacher classifier; align projected student features by l2."""
    return distill_simkd_plus(teacher, student_spec, train, test, config, 0, student, projector)


def _joint_assembly(student: Model, split: int, branch: Branch) -> Assembly:
    trunk = student.encoder.slice(0, split, copy=False)
    suffix = student.encoder.slice(split, copy=False)
    own = Sequential(
        suffix.layers + student.classifier.layers,
        suffix.input_shape,
        {**suffix.params, **{f"{len(suffix.layers)}.{k.split('.', 1)[1]}": v for k, v in student.classifier.params.items()}},
        suffix.stats,
    )
    return Assembly(trunk, {"student": [Branch(own)], "teacher": [branch]})


def distill_joint(teacher: Model, student_spec, train, test, config: DistillConfig, alpha: float | None = None):
    """Train encoder, own classifier and projector on ``(1-a) KD + a SimKD``.

    The report carries accuracies for both the student's own classifier and
    the reused teacher classifier.
    """
    alpha = config.alpha if alpha is None else alpha
    if alpha is None or not 0.0 <= alpha <= 1.0:
        raise ConfigurationError("joint training needs alpha in [0, 1]")
    _check_teachers([teacher], student_spec)
    model = _student(student_spec, config, None)
    trunk, branch, split = _aligned_branch(
        teacher, model, 0, config.projector_spec, Rng(config.seed).child("projector").child(0)
    )
    report = TrainReport(config.method, config.seed, alpha=alpha, r=config.r)
    _kd_family(model, [teacher], train, test, config, report, (split.student_index, branch), alpha)
    assembly = _joint_assembly(model, split.student_index, branch)
    budget = _budget(
        student_spec, [teacher], param_count(student_spec.encoder), param_count(branch.projector), param_count(branch.head)
    )
    return (model, assembly), _finish(report, budget)


def sequential_linear_eval(assembly: Assembly, train, test, config: DistillConfig, teacher: Model | None = None):
    """Freeze an aligned SimKD student and fit a fresh dense classifier.

    The new classifier sees the same pooled projected features that the
    reused teacher classifier sees. Returns ``(assembly, report)``; the
    assembly gains a ``"sequential"`` head next to ``"teacher"``.
    """
    br = assembly.heads["teacher"][0]
    if not isinstance(br.head.layers[-1], Dense):
        raise ConfigurationError("the teacher head must end in a dense classifier")
    pool = br.head.slice(0, len(br.head.layers) - 1, copy=False)
    reused = br.head.layers[-1]
    fresh = Sequential.build(
        (Dense(reused.in_features, reused.out_features),), (reused.in_features,), Rng(config.seed).child("sequential")
    )

    def frozen_features(x):
        return pool.forward(br.project(assembly.trunk.forward(x)[0]))[0]

    def step(xb, yb):
        g, c = fresh.forward(frozen_features(xb), train=True)
        loss = L.cross_entropy(g, yb)
        _, grads = fresh.backward(c, loss.grad, need_input_grad=False)
        return loss.value, grads

    head = Sequential(
        pool.layers + fresh.layers,
        pool.input_shape,
        {**pool.params, **{f"{len(pool.layers)}.{k.split('.', 1)[1]}": v for k, v in fresh.params.items()}},
        pool.stats,
    )
    out = Assembly(assembly.trunk, {"sequential": [Branch(head, br.projector, br.student_pool, br.reference, br.target_pool)], "teacher": [br]})
    report = TrainReport(config.method, config.seed, r=config.r)

    def evaluate_fn():
        return {h: evaluate(out, test, h) for h in out.heads}

    _fit(config, train, fresh.params, step, report, evaluate_fn)
    budget = None
    if teacher is not None:
        budget = ParamBudget(
            se=param_count(assembly.trunk),
            proj=param_count(br.projector),
            t=param_count(teacher),
            tc=param_count(fresh),
            sc=param_count(fresh),
        )
    return out, _finish(report, budget)


# --------------------------------------------------------------------------
# multiple teachers
# --------------------------------------------------------------------------


def multi_teacher(teachers: Sequence[Model], student_spec: NetworkSpec, train, test, config: DistillConfig, variant: str | None = None):
    """Distill several teachers into one student.

    ``aveg`` runs KD against the mean softened teacher prediction. ``simkd``
    trains one bottleneck projector per teacher on the summed alignment
    losses and averages the reused classifiers' logits. ``simkd_v`` aligns
    pooled feature vectors through one dense projector per teacher, folds
    each projector into its teacher classifier and averages the folded
    classifiers, so inference costs no more than a plain student.
    """
    variant = variant or config.variant
    if variant not in VARIANTS:
        raise ConfigurationError(f"variant must be one of {VARIANTS}")
    teachers = list(teachers)
    if len(teachers) < 1:
        raise ConfigurationError("need at least one teacher")
    if len({t.spec.num_classes for t in teachers}) != 1:
        raise ConfigurationError("teachers disagree on the number of classes")
    _check_teachers(teachers, student_spec)
    config = replace(config, variant=variant)

    if variant == "aveg":
        return distill_kd(teachers, student_spec, train, test, config)

    model = _student(student_spec, config, None)
    at_vectors = variant == "simkd_v"
    kind = "linear_vector" if at_vectors else None
    prng = Rng(config.seed).child("projector")
    branches = []
    trunk = None
    for j, t in enumerate(teachers):
        trunk, br, _ = _aligned_branch(
            t, model, 0, lambda cs, ct: config.projector_spec(cs, ct, kind), prng.child(j), at_vectors
        )
        branches.append(br)
    assembly = Assembly(trunk, {"teacher": branches})
    report = TrainReport(config.method, config.seed, r=None if at_vectors else config.r, variant=variant)
    _train_aligned(trunk, branches, train, test, config, report, assembly)

    if not at_vectors:
        budget = _budget(
            student_spec,
            teachers,
            se=param_count(trunk),
            proj=sum(param_count(b.projector) for b in branches),
            tc=sum(param_count(b.head) for b in branches),
        )
        return assembly, _finish(report, budget)

    merged = merge_classifiers(branches)
    deployed = Model(student_spec, model.encoder, merged)
    report.final = {"merged": evaluate(deployed, test), **report.final}
    budget = _budget(student_spec, teachers, param_count(student_spec.encoder), 0, param_count(merged))
    return deployed, _finish(report, budget)


def merge_classifiers(branches: Sequence[Branch]) -> Sequential:
    """Fold each dense projector into its classifier and average the results."""
    ws, bs = [], []
    for br in branches:
        A, b = br.projector.params["0.weight"], br.projector.params["0.bias"]
        W_t, b_t = br.head.params["0.weight"], br.head.params["0.bias"]
        w, bb = merge_linear_projector(W_t, b_t, A, b)
        ws.append(w)
        bs.append(bb)
    k, c_s = ws[0].shape
    return Sequential(
        (Dense(c_s, k),),
        (c_s,),
        {"0.weight": np.mean(ws, axis=0), "0.bias": np.mean(bs, axis=0)},
    )


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------


def run_method(config: DistillConfig, student_spec: NetworkSpec, train: Dataset, test: Dataset, teachers: Sequence[Model] = ()):
    """Dispatch on ``config.method``; returns ``(artifact, report)``."""
    m = config.method
    if m in ("baseline", "teacher"):
        return train_model(student_spec, train, test, config)
    if not teachers:
        raise ConfigurationError(f"method {m!r} needs a teacher")
    if m == "kd":
        return distill_kd(teachers[0], student_spec, train, test, config)
    if m == "simkd":
        return distill_simkd(teachers[0], student_spec, train, test, config)
    if m == "simkd_plus":
        return distill_simkd_plus(teachers[0], student_spec, train, test, config)
    if m == "joint":
        (_, assembly), report = distill_joint(teachers[0], student_spec, train, test, config)
        return assembly, report
    if m == "sequential":
        pre = replace(config, method="simkd")
        assembly, _ = distill_simkd(teachers[0], student_spec, train, test, pre)
        return sequential_linear_eval(assembly, train, test, config, teachers[0])
    return multi_teacher(teachers, student_spec, train, test, config)
