"""An identity projector on a student that *is* the teacher.

When the student encoder is a copy of the teacher's and the projector is the
identity, the aligned features equal the teacher's bit for bit: the l2 loss
is exactly zero and the reused classifier reproduces teacher accuracy.

    python demos/perfect_alignment.py
"""

import numpy as np

from simkd.data import gen_synthetic, normalize
from simkd.distill import DistillConfig, distill_simkd, evaluate, train_model
from simkd.network import identity_dense_init, plain_cnn
from simkd.numeric import Rng
from simkd.projector import ProjectorSpec, build_projector

train, test = gen_synthetic(5, 40, seed=3)
mean, std = train.channel_stats()
train, test = normalize(train, mean, std), normalize(test, mean, std)

spec = plain_cnn((8, 16), 5)
teacher, _ = train_model(spec, train, test, DistillConfig.desk(5, method="teacher", augment=False))

proj = build_projector(ProjectorSpec(spec.feature_dim, spec.feature_dim, "linear_vector"), Rng(0))
identity_dense_init(proj)
# zero epochs: only the initial evaluation runs
config = DistillConfig.desk(0, projector_kind="linear_vector", augment=False)
assembly, _ = distill_simkd(teacher, spec, train, test, config, teacher.copy(), proj)

for name, ds in (("train", train), ("test", test)):
    got, ref = evaluate(assembly, ds), evaluate(teacher, ds)
    print(f"{name:<5}  assembly {got.top1:6.2f}%  teacher {ref.top1:6.2f}%  l2 {got.l2}")
same = np.array_equal(assembly.logits(test.x), teacher.logits(test.x))
print("logits bitwise identical:", same)
