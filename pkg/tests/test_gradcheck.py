"""The finite-difference harness must pass on correct gradients and
fail when an analytic gradient is deliberately shifted."""

import numpy as np
import pytest

from vimagine import gradcheck as gc
from vimagine import tensor as tt


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_suite_passes(seed):
    reports = gc.run_op_suite(seed=seed)
    assert len(reports) == len(gc.OP_CHECKS)
    for rep in reports:
        assert rep.passed, f"{rep.name}: max rel err {rep.max_rel_err:.3e}"


def test_op_suite_covers_every_registered_op_once():
    names = [rep.name for rep in gc.run_op_suite(seed=0)]
    assert names == [check.name for check in gc.OP_CHECKS]
    assert len(set(names)) == len(names)


@pytest.mark.parametrize("victim", ["matmul", "bilinear_sample"])
def test_op_suite_detects_shifted_gradients(victim):
    reports = gc.run_op_suite(seed=0, perturb=victim)
    by_name = {rep.name: rep for rep in reports}
    assert not by_name[victim].passed
    others = [rep for rep in reports if rep.name != victim]
    assert all(rep.passed for rep in others)


def test_finite_diff_accepts_analytic_quadratic():
    x = tt.tensor(np.random.default_rng(0).uniform(0.5, 1.5, size=(4, 3)),
                  requires_grad=True)
    rep = gc.finite_diff_check(lambda: tt.sum_(tt.mul(x, x)),
                               [x], tolerance=1e-7, name="quadratic")
    assert rep.passed
    assert rep.max_rel_err < 1e-7


def test_finite_diff_rejects_wrong_gradient():
    x = tt.tensor(np.full((3, 3), 0.7), requires_grad=True)
    rep = gc.finite_diff_check(lambda: tt.sum_(tt.mul(x, x)),
                               [x], tolerance=1e-7, name="bad",
                               grad_offset=0.01)
    assert not rep.passed
    assert rep.failures


def test_pipeline_suite_passes():
    reports = gc.run_pipeline_suite(seed=0)
    names = [rep.name for rep in reports]
    assert names == [
        "composite_affine",
        "composite_conv",
        "merge_to_params",
        "criticize_wrt_clip",
    ]
    for rep in reports:
        assert rep.passed, f"{rep.name}: max rel err {rep.max_rel_err:.3e}"


def test_pipeline_suite_detects_shifted_gradient():
    reports = gc.run_pipeline_suite(seed=0, perturb="merge_to_params")
    by_name = {rep.name: rep for rep in reports}
    assert not by_name["merge_to_params"].passed
