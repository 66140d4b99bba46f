import pytest

from simkd.gradcheck import TOLERANCE, CaseResult, case_names, run_suite


def test_case_inventory():
    names = case_names()
    for layer in ("dense", "conv", "conv_depthwise", "batchnorm_maps", "batchnorm_vectors",
                  "relu", "avgpool", "globalavgpool", "flatten"):
        assert f"layer/{layer}" in names
    for loss in ("cross_entropy", "kd_T1", "kd_T4", "simkd_l2", "output_l2", "combined_l2",
                 "joint_alpha0", "joint_alpha0.5", "joint_alpha1"):
        assert f"loss/{loss}" in names


def test_small_suite_passes():
    results = run_suite(instances=5, seed=3)
    assert [r.name for r in results] == case_names()
    for r in results:
        assert r.instances == 5
        assert r.passed, (r.name, r.max_rel_error)


def test_filter_and_seed_determinism():
    a = run_suite(instances=4, seed=1, only="batchnorm")
    b = run_suite(instances=4, seed=1, only="batchnorm")
    assert [r.name for r in a] == ["layer/batchnorm_maps", "layer/batchnorm_vectors"]
    assert [r.max_rel_error for r in a] == [r.max_rel_error for r in b]


@pytest.mark.parametrize("err, ok", [(0.0, True), (TOLERANCE / 2, True), (TOLERANCE, False), (float("nan"), False)])
def test_pass_threshold(err, ok):
    assert CaseResult("x", 1, err, 0.0).passed is ok
