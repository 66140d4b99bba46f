"""How projector size and the pruning ratio move with the reduction factor r.

    python demos/projector_budget.py
"""

from simkd.distill import ParamBudget, pruning_ratio_exact
from simkd.network import param_count, plain_cnn
from simkd.numeric import Rng
from simkd.projector import ProjectorSpec, build_projector, check_proposition, projector_param_formula

teacher_spec = plain_cnn((16, 32, 64), 10)
student_spec = plain_cnn((4, 8, 16), 10)
c_s, c_t = student_spec.feature_dim, teacher_spec.feature_dim

t = param_count(teacher_spec)
tc = param_count((teacher_spec.classifier,))
sc = param_count((student_spec.classifier,))
se = param_count(student_spec.encoder)
print(f"teacher {t} params, student encoder {se}, C_s={c_s}, C_t={c_t}\n")

print(" r  projector  closed form  pruning ratio   2F(2r)<F(r)<4F(2r)")
for r in (1, 2, 4, 8, 16):
    proj = build_projector(ProjectorSpec(c_s, c_t, "bottleneck", r), Rng(0))
    n = param_count(proj)
    ratio = pruning_ratio_exact(ParamBudget(se=se, proj=n, t=t, tc=tc, sc=sc))
    prop = check_proposition(c_s, c_t, r)
    print(f"{r:>2}  {n:>9}  {projector_param_formula(c_s, c_t, r):>11}  {float(ratio):>13.4f}   {prop}")

# the left inequality needs C_t > 4r^2/9; small C_t with large r breaks it
print("\nC_t=4, r=4:", check_proposition(4, 4, 4))
