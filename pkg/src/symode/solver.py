"""Scalar non-stiff initial value problems on a fixed output grid.

integrate() runs an embedded Dormand-Prince 5(4) pair with
proportional-integral step-size control and fills the equispaced grid
t_i = i * t_end / (n_grid - 1) from the standard quartic dense-output
interpolant, so accuracy does not depend on where the accepted steps
land.  Stiff or exploding problems are not rescued: they end with
status "solver-failed" (step underflow, step cap, non-finite f, or
deadline) or "blowup" (|y| above the bound), and downstream quality
control discards them.

finite_diff() is the 9-point central first-derivative stencil, exact
on polynomials of degree <= 8; four points are trimmed per side.
qc_check() compares that derivative estimate against f(y_i) on the
interior and accepts the trajectory when the worst deviation stays
within epsilon.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .expr import Expr, compile_rhs, evaluate

OK = "ok"
SOLVER_FAILED = "solver-failed"
BLOWUP = "blowup"
QC_REJECTED = "qc-rejected"


@dataclass(frozen=True)
class SolveConfig:
    t_end: float = 4.0
    n_grid: int = 1024
    n_iv: int = 25               # initial values per equation
    iv_min: float = -5.0
    iv_max: float = 5.0
    rtol: float = 1e-9
    atol: float = 1e-9
    blowup: float = 1e10         # |y| beyond this is a blow-up
    max_steps: int = 1_000_000
    qc_epsilon: float = 1.0


@dataclass
class Solution:
    t: np.ndarray
    y: np.ndarray
    status: str
    n_steps: int
    y0: float


# Dormand-Prince 5(4) tableau.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
# 5th-order minus embedded 4th-order weights (k7 = f(t+h, y_new) included).
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
# Quartic dense-output polynomial: y(t+theta*h) = y + h * sum_s k_s * P_s(theta),
# P_s(theta) = p1*theta + p2*theta^2 + p3*theta^3 + p4*theta^4.
_P = (
    (1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799),
    (0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072),
    (0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632),
    (0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844),
    (0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423),
)

_SAFETY = 0.9
_BETA = 0.04                     # PI stabilization
_EXPO = 0.2 - _BETA * 0.75
_MIN_SCALE = 0.2
_MAX_SCALE = 10.0


def grid(cfg: SolveConfig) -> np.ndarray:
    return np.arange(cfg.n_grid) * (cfg.t_end / (cfg.n_grid - 1))


def sample_initial_values(cfg: SolveConfig, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    return rng.uniform(cfg.iv_min, cfg.iv_max, cfg.n_iv if n is None else n)


def _initial_step(f, y0: float, f0: float, cfg: SolveConfig) -> float:
    scale = cfg.atol + cfg.rtol * abs(y0)
    d0 = abs(y0) / scale
    d1 = abs(f0) / scale
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    f1 = f(y0 + h0 * f0)
    if not np.isfinite(f1):
        return min(1e-6, cfg.t_end)
    d2 = abs(f1 - f0) / scale / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, cfg.t_end)


def integrate(f, y0: float, cfg: SolveConfig, deadline: float | None = None) -> Solution:
    """Solve dy/dt = f(y), y(0) = y0, reporting y on the output grid.

    f is a scalar callable; pass e.g. ``lambda y: evaluate(expr, y)``.
    deadline is an optional time.monotonic() cutoff; crossing it ends
    the run with status "solver-failed".
    """
    t_grid = grid(cfg)
    out = np.full(cfg.n_grid, np.nan)
    out[0] = y0

    def fail(status: str, steps: int) -> Solution:
        return Solution(t_grid, out, status, steps, y0)

    if not np.isfinite(y0) or abs(y0) > cfg.blowup:
        return fail(SOLVER_FAILED, 0)
    f0 = f(y0)
    if not np.isfinite(f0):
        return fail(SOLVER_FAILED, 0)

    t = 0.0
    y = y0
    k1 = f0
    h = _initial_step(f, y0, f0, cfg)
    facold = 1e-4
    rejected = False
    next_i = 1
    steps = 0
    k = [0.0] * 7

    while next_i < cfg.n_grid:
        if steps >= cfg.max_steps:
            return fail(SOLVER_FAILED, steps)
        if deadline is not None and time.monotonic() > deadline:
            return fail(SOLVER_FAILED, steps)
        if h < 1e-14 * max(1.0, abs(t)):
            return fail(SOLVER_FAILED, steps)
        h = min(h, cfg.t_end - t)
        steps += 1

        k[0] = k1
        bad = False
        for s in range(1, 6):
            ys = y + h * sum(a * k[j] for j, a in enumerate(_A[s]))
            k[s] = f(ys)
            if not math.isfinite(k[s]):
                bad = True
                break
        if not bad:
            y_new = y + h * sum(b * k[j] for j, b in enumerate(_B))
            k[6] = f(y_new)
            err_raw = h * sum(e * k[j] for j, e in enumerate(_E))
            sc = cfg.atol + cfg.rtol * max(abs(y), abs(y_new))
            err = abs(err_raw) / sc
            bad = not math.isfinite(k[6]) or not math.isfinite(err)

        if bad:
            h *= 0.1
            rejected = True
            continue

        fac11 = err ** _EXPO
        if err <= 1.0:
            # accept; fill grid points inside (t, t+h]
            t_new = t + h
            last = t_new >= cfg.t_end - 1e-13 * cfg.t_end
            while next_i < cfg.n_grid and (t_grid[next_i] <= t_new or (last and next_i == cfg.n_grid - 1)):
                theta = (t_grid[next_i] - t) / h
                acc = 0.0
                for s in range(7):
                    p = _P[s]
                    acc += k[s] * (theta * (p[0] + theta * (p[1] + theta * (p[2] + theta * p[3]))))
                out[next_i] = y + h * acc
                next_i += 1
            if abs(y_new) > cfg.blowup:
                return fail(BLOWUP, steps)
            fac = max(1.0 / _MAX_SCALE, min(1.0 / _MIN_SCALE, (fac11 / facold ** _BETA) / _SAFETY))
            facold = max(err, 1e-4)
            h_new = h / fac
            if rejected:
                h_new = min(h_new, h)
            rejected = False
            t = t_new
            y = y_new
            k1 = k[6]                      # FSAL
            h = h_new
        else:
            rejected = True
            h = h / min(1.0 / _MIN_SCALE, fac11 / _SAFETY)

    return Solution(t_grid, out, OK, steps, y0)


def solve_expr(expr: Expr, y0: float, cfg: SolveConfig, deadline: float | None = None) -> Solution:
    return integrate(compile_rhs(expr), y0, cfg, deadline)


# ====== finite differences and quality control ======

# 9-point central first-derivative coefficients, offsets -4..+4.
_STENCIL = (1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280)


def finite_diff(y: np.ndarray, h: float) -> np.ndarray:
    """Derivative estimate on the interior; output has len(y) - 8 entries
    aligned with y[4:-4]."""
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if n < 9:
        raise ValueError("need at least 9 samples")
    acc = np.zeros(n - 8)
    for j, c in enumerate(_STENCIL):
        if c != 0.0:
            acc += c * y[j:n - 8 + j]
    return acc / h


def qc_check(expr: Expr, sol: Solution, epsilon: float) -> bool:
    """Trajectory is consistent with the equation: the finite-difference
    derivative matches f(y_i) within epsilon on the trimmed interior."""
    if sol.status != OK or not np.all(np.isfinite(sol.y)):
        return False
    h = sol.t[1] - sol.t[0]
    dy = finite_diff(sol.y, h)
    rhs = evaluate(expr, sol.y[4:-4])
    diff = np.abs(dy - rhs)
    return bool(np.all(np.isfinite(rhs)) and np.all(diff <= epsilon))
