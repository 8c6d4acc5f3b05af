"""Correctness metrics for a predicted equation against a ground truth.

Numerical agreement is judged on n_eval points spread evenly over the
observed solution range [min y_i, max y_i] (a degenerate range repeats
the single point).  Two checks run on the evaluated values:

  * allclose: |pred - gt| <= atol + rtol*|gt| elementwise, with
    atol = 1e-10 and rtol = 0.05.  Any NaN on either side fails the
    pair; matching infinities of equal sign compare equal.
  * r_squared: 1 - SS_res/SS_tot with the ground truth as the
    observations.  A constant ground truth yields 1.0 when the
    residuals vanish and -inf otherwise.  Pass threshold 0.999.

skeleton_match is symbolic: the prediction's skeleton must unify with
the canonical ground truth, each placeholder binding a nonzero ground
truth constant of the recorded sign.  Commutative operands are
compared in canonical sort order (no backtracking over permutations),
which is exact whenever reordering cannot depend on the bound values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .expr import Expr, complexity, evaluate, skeletonize
from .simplify import simplify


@dataclass(frozen=True)
class MetricsConfig:
    n_eval: int = 100
    atol: float = 1e-10
    rtol: float = 0.05
    r2_threshold: float = 0.999


@dataclass
class MetricsReport:
    allclose: bool
    r2: float
    r2_pass: bool
    skeleton: bool
    skeleton_and_allclose: bool
    skeleton_and_r2: bool
    complexity_gt: int
    complexity_pred: int

    def to_dict(self) -> dict:
        return asdict(self)


def eval_points(y: np.ndarray, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    lo = float(np.min(y))
    hi = float(np.max(y))
    return np.linspace(lo, hi, n)


def allclose(pred: np.ndarray, gt: np.ndarray, cfg: MetricsConfig) -> bool:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("shape mismatch")
    if np.any(np.isnan(pred)) or np.any(np.isnan(gt)):
        return False
    # an infinite entry passes only as half of an equal-sign pair; the
    # inequality itself is meaningless there (inf <= inf would let a
    # finite prediction match an infinite truth)
    both_inf = np.isinf(pred) & np.isinf(gt) & (np.sign(pred) == np.sign(gt))
    any_inf = np.isinf(pred) | np.isinf(gt)
    with np.errstate(invalid="ignore"):
        ok = np.abs(pred - gt) <= cfg.atol + cfg.rtol * np.abs(gt)
    return bool(np.all((ok & ~any_inf) | both_inf))


def r_squared(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("shape mismatch")
    with np.errstate(all="ignore"):
        ss_res = float(np.sum((gt - pred) ** 2))
        mean = float(np.mean(gt))
        ss_tot = float(np.sum((gt - mean) ** 2))
        if ss_tot == 0.0:
            return 1.0 if ss_res == 0.0 else float("-inf")
        return 1.0 - ss_res / ss_tot


def skeleton_match(gt: Expr, pred: Expr) -> bool:
    """Does the prediction's skeleton unify with the ground truth?

    Both inputs must be canonical.  Placeholders bind ground truth
    constants that are nonzero and match the recorded sign; everything
    else must agree exactly.
    """
    sk = skeletonize(pred)

    def unify(tpl: Expr, ref: Expr) -> bool:
        if tpl.op == "hole":
            if ref.op != "const" or ref.value == 0.0:
                return False
            sign = -1 if ref.value < 0 else 1
            return sign == sk.signs[int(tpl.value)]
        if tpl.op != ref.op or len(tpl.args) != len(ref.args):
            return False
        if tpl.op == "const":
            return tpl.value == ref.value
        return all(unify(a, b) for a, b in zip(tpl.args, ref.args))

    return unify(sk.template, gt)


def evaluate_on(e: Expr, ys: np.ndarray) -> np.ndarray:
    return np.asarray(evaluate(e, ys), dtype=np.float64)


def score(gt: Expr, pred: Expr, solution_y: np.ndarray, cfg: MetricsConfig = MetricsConfig()) -> MetricsReport:
    """Full report for one candidate against one observed trajectory."""
    gt_c = simplify(gt)
    pred_c = simplify(pred)
    ys = eval_points(solution_y, cfg.n_eval)
    gt_v = evaluate_on(gt_c, ys)
    pred_v = evaluate_on(pred_c, ys)
    ac = allclose(pred_v, gt_v, cfg)
    r2 = r_squared(pred_v, gt_v)
    r2_ok = bool(not math.isnan(r2) and r2 >= cfg.r2_threshold)
    sk = skeleton_match(gt_c, pred_c)
    return MetricsReport(
        allclose=ac,
        r2=r2,
        r2_pass=r2_ok,
        skeleton=sk,
        skeleton_and_allclose=sk and ac,
        skeleton_and_r2=sk and r2_ok,
        complexity_gt=complexity(gt_c),
        complexity_pred=complexity(pred_c),
    )
