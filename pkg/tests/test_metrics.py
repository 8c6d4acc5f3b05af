"""Numeric and symbolic agreement metrics."""

import math

import numpy as np
import pytest

from symode.expr import parse_infix, parse_prefix
from symode.metrics import (
    MetricsConfig,
    allclose,
    eval_points,
    r_squared,
    score,
    skeleton_match,
)
from symode.simplify import simplify

from oracles import allclose_loop, r_squared_loop

CFG = MetricsConfig()


def test_eval_points_span_trajectory_range():
    y = np.array([3.0, -1.0, 2.0, 0.5])
    pts = eval_points(y, 100)
    assert pts.shape == (100,)
    assert pts[0] == -1.0 and pts[-1] == 3.0
    assert np.all(np.diff(pts) > 0)
    flat = eval_points(np.array([2.0, 2.0]), 5)
    assert np.all(flat == 2.0)


def test_allclose_tolerance_form():
    gt = np.array([100.0, 1e-12])
    assert allclose(np.array([104.9, 1e-12 + 1e-11]), gt, CFG)
    assert not allclose(np.array([105.1, 1e-12]), gt, CFG)
    assert not allclose(np.array([100.0, 1e-12 + 2e-10]), gt, CFG)


def test_allclose_nan_and_inf():
    assert not allclose(np.array([np.nan]), np.array([np.nan]), CFG)
    assert not allclose(np.array([1.0]), np.array([np.nan]), CFG)
    assert allclose(np.array([np.inf]), np.array([np.inf]), CFG)
    assert allclose(np.array([-np.inf]), np.array([-np.inf]), CFG)
    assert not allclose(np.array([np.inf]), np.array([-np.inf]), CFG)
    assert not allclose(np.array([np.inf]), np.array([1.0]), CFG)
    assert not allclose(np.array([1.0]), np.array([np.inf]), CFG)


def test_allclose_shape_check():
    with pytest.raises(ValueError):
        allclose(np.zeros(3), np.zeros(4), CFG)


def test_allclose_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(3000):
        n = int(rng.integers(1, 12))
        gt = rng.normal(scale=10, size=n)
        pred = gt + rng.normal(scale=rng.choice([1e-12, 0.01, 1.0]), size=n)
        if rng.random() < 0.1:
            pred[rng.integers(0, n)] = rng.choice([np.nan, np.inf, -np.inf])
        if rng.random() < 0.1:
            gt[rng.integers(0, n)] = rng.choice([np.nan, np.inf, -np.inf])
        got = allclose(pred, gt, CFG)
        want = allclose_loop(pred.tolist(), gt.tolist(), CFG.atol, CFG.rtol)
        assert got == want


def test_r_squared_identities():
    gt = np.array([1.0, 2.0, 3.0])
    assert r_squared(gt, gt) == 1.0
    assert r_squared(np.full(3, 2.0), gt) == 0.0  # predicting the mean
    assert r_squared(np.array([9.0, 9.0, 9.0]), np.array([5.0, 5.0, 5.0])) == -math.inf
    assert r_squared(np.array([5.0, 5.0]), np.array([5.0, 5.0])) == 1.0


def test_r_squared_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(2000):
        n = int(rng.integers(2, 30))
        gt = rng.normal(size=n)
        pred = gt + rng.normal(scale=0.1, size=n)
        got = r_squared(pred, gt)
        want = r_squared_loop(pred.tolist(), gt.tolist())
        assert got == pytest.approx(want, rel=1e-12)


def test_skeleton_match_same_family():
    gt = simplify(parse_infix("0.6*y**2 + 2*y + 0.1"))
    pred = simplify(parse_infix("0.61*y**2 + 1.9*y + 0.12"))
    assert skeleton_match(gt, pred)


def test_skeleton_match_sign_sensitive():
    gt = simplify(parse_infix("3*y"))
    assert skeleton_match(gt, simplify(parse_infix("2.5*y")))
    assert not skeleton_match(gt, simplify(parse_infix("-2.5*y")))


def test_skeleton_match_structure_sensitive():
    gt = simplify(parse_infix("0.23*(y - y**2)"))
    assert not skeleton_match(gt, simplify(parse_infix("0.23*y")))
    assert not skeleton_match(gt, simplify(parse_infix("0.23*sin(y)")))


def test_skeleton_match_exact_when_no_constants():
    gt = simplify(parse_prefix("mul y y"))
    assert skeleton_match(gt, simplify(parse_prefix("mul y y")))
    assert not skeleton_match(gt, simplify(parse_prefix("add y y")))


def test_score_report_fields():
    gt = parse_infix("0.1*y")
    traj = 9.0 * np.exp(0.1 * np.linspace(0, 4, 50))
    rep = score(gt, parse_infix("0.1001*y"), traj)
    assert rep.allclose and rep.r2_pass and rep.skeleton
    assert rep.skeleton_and_allclose and rep.skeleton_and_r2
    assert rep.r2 > 0.999
    assert rep.complexity_gt == rep.complexity_pred == 3
    d = rep.to_dict()
    assert set(d) == {
        "allclose",
        "r2",
        "r2_pass",
        "skeleton",
        "skeleton_and_allclose",
        "skeleton_and_r2",
        "complexity_gt",
        "complexity_pred",
    }


def test_score_wrong_family_can_fit_numerically():
    # same values on the range, different shape: numeric metrics pass,
    # the symbolic one must not
    gt = parse_infix("y")
    traj = np.linspace(0.01, 2.0, 60)
    rep = score(gt, parse_infix("exp(log(y))"), traj)
    assert rep.allclose and rep.r2_pass
    assert not rep.skeleton
    rep2 = score(parse_infix("2*y"), parse_infix("2.0001*y"), traj)
    assert rep2.allclose and rep2.skeleton and rep2.skeleton_and_allclose


def test_score_canonicalizes_before_judging():
    gt = parse_infix("2*y + 1")
    pred = parse_infix("1 + y*2")  # same equation, different spelling
    traj = np.linspace(-2, 2, 40)
    rep = score(gt, pred, traj)
    assert rep.skeleton and rep.allclose and rep.r2 == 1.0
