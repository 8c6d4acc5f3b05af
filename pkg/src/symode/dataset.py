"""Corpus generation and test set construction.

File format: JSON lines.  The first line is a header carrying the
format name, version, kind, master seed and the effective generation
and solver configs.  Every following line is one record:

    skeleton     canonical prefix with placeholders C0, C1, ... (a
                 leading '-' marks a negative original constant)
    expr         canonical prefix with literal constants
    constants    placeholder values in pre-order
    y0, t_end, n_grid
    encoding     "b64le" (base64 little-endian float64) or "plain"
    y            the trajectory on the output grid
    qc           always "passed"; failing solutions are never stored
    provenance   {seed, stream, index}

Generation is deterministic: skeletons are sampled and deduplicated by
a single driver stream, and each accepted skeleton s gets its own
stream derived from (seed, s) for constants and initial values, so the
record set does not depend on the worker count and reruns are
byte-identical.  Each equation (skeleton + constant set) gets a
wall-clock integration budget; equations that run out count as solver
failures.

Rejected candidates are tallied in a failure report: constant
equations (no y left after canonicalization), constants outside the
token grid, duplicate skeletons, resampling dead ends, solver
failures, blow-ups and quality-control rejections.
"""

from __future__ import annotations

import base64
import json
import logging
import time
from dataclasses import asdict, dataclass
from multiprocessing import Pool

import numpy as np

from .expr import (
    BINARY_OPS,
    UNARY_OPS,
    Expr,
    Skeleton,
    constants_of,
    complexity,
    contains_y,
    nodes,
    operator_count,
    parse_infix,
    parse_prefix,
    skeletonize,
    to_prefix,
    validate,
)
from .generate import GenerationConfig, ResampleError, resample_constants, sample_expr
from .simplify import simplify
from .solver import OK, SolveConfig, qc_check, sample_initial_values, solve_expr

log = logging.getLogger("symode")

FORMAT = "symode-corpus"
VERSION = 1


class GenerationError(RuntimeError):
    pass


# ====== records and files ======

def encode_y(y: np.ndarray, plain: bool):
    if plain:
        return [float(v) for v in y]
    return base64.b64encode(np.asarray(y, dtype="<f8").tobytes()).decode("ascii")


def decode_y(rec: dict) -> np.ndarray:
    if rec["encoding"] == "plain":
        return np.asarray(rec["y"], dtype=np.float64)
    raw = base64.b64decode(rec["y"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def record_expr(rec: dict) -> Expr:
    return parse_prefix(rec["expr"])


def make_header(kind: str, seed: int, gen: GenerationConfig, solve: SolveConfig, **extra) -> dict:
    h = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "seed": seed,
        "config": {"generation": asdict(gen), "solve": asdict(solve)},
    }
    h.update(extra)
    return h


def write_records(path: str, header: dict, records: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_records(path: str) -> tuple[dict, list[dict]]:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise GenerationError(f"{path}: empty file")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT:
        raise GenerationError(f"{path}: not a corpus file")
    if header.get("version") != VERSION:
        raise GenerationError(f"{path}: unsupported version {header.get('version')!r}")
    return header, [json.loads(ln) for ln in lines[1:]]


def _record(expr: Expr, sk_key: str, y0: float, sol_y: np.ndarray, solve: SolveConfig,
            seed: int, stream: int, plain: bool, **extra) -> dict:
    rec = {
        "skeleton": sk_key,
        "expr": to_prefix(expr),
        "constants": [float(v) for v in constants_of(expr)],
        "y0": float(y0),
        "t_end": solve.t_end,
        "n_grid": solve.n_grid,
        "encoding": "plain" if plain else "b64le",
        "y": encode_y(sol_y, plain),
        "qc": "passed",
        "provenance": {"seed": seed, "stream": stream, "index": -1},
    }
    rec.update(extra)
    return rec


# ====== corpus generation ======

_GRID_LIMIT = 10.0  # constants must stay on the token grid


def _tokenizable(e: Expr) -> bool:
    return all(abs(n.value) <= _GRID_LIMIT for n in nodes(e) if n.op == "const")


def _new_stats() -> dict:
    return {
        "sampled": 0,
        "constant_expr": 0,
        "out_of_grid": 0,
        "duplicate_skeleton": 0,
        "resample_failed": 0,
        "duplicate_constants": 0,
        "integrations": 0,
        "solver_failed": 0,
        "blowup": 0,
        "qc_rejected": 0,
        "records": 0,
    }


def sample_skeletons(gen: GenerationConfig, n: int, rng: np.random.Generator,
                     exclude: set[str] | None = None, stats: dict | None = None,
                     max_attempts: int | None = None) -> list[str]:
    """Canonical skeleton keys, deduplicated in draw order."""
    seen = set() if exclude is None else set(exclude)
    out: list[str] = []
    stats = stats if stats is not None else _new_stats()
    cap = max_attempts if max_attempts is not None else max(1000, 200 * n)
    attempts = 0
    while len(out) < n:
        if attempts >= cap:
            raise GenerationError(
                f"exhausted {cap} draws with only {len(out)}/{n} unique skeletons")
        attempts += 1
        stats["sampled"] += 1
        cand = simplify(sample_expr(gen, rng))
        if not contains_y(cand):
            stats["constant_expr"] += 1
            continue
        if not _tokenizable(cand):
            stats["out_of_grid"] += 1
            continue
        validate(cand)
        key = skeletonize(cand).prefix()
        if key in seen:
            stats["duplicate_skeleton"] += 1
            continue
        seen.add(key)
        out.append(key)
    return out


def _solve_skeleton(args) -> tuple[int, list[dict], dict]:
    (s, key, gen, solve, seed, timeout, plain) = args
    sk = Skeleton.from_prefix(key)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2, s]))
    stats = _new_stats()
    records: list[dict] = []
    seen_consts: set[tuple] = set()
    # a constant-free skeleton has exactly one instantiation
    want = gen.n_const if sk.n_constants else 1
    made = 0
    tries = 0
    while made < want and tries < 100:
        tries += 1
        try:
            ex = resample_constants(sk, gen, rng)
        except ResampleError:
            stats["resample_failed"] += 1
            break
        vals = tuple(constants_of(ex))
        if vals in seen_consts:
            stats["duplicate_constants"] += 1
            continue
        seen_consts.add(vals)
        made += 1
        deadline = time.monotonic() + timeout
        for y0 in sample_initial_values(solve, rng):
            stats["integrations"] += 1
            sol = solve_expr(ex, float(y0), solve, deadline)
            if sol.status != OK:
                stats["solver_failed" if sol.status == "solver-failed" else "blowup"] += 1
                continue
            if not qc_check(ex, sol, solve.qc_epsilon):
                stats["qc_rejected"] += 1
                continue
            stats["records"] += 1
            records.append(_record(ex, key, float(y0), sol.y, solve, seed, s, plain))
    return s, records, stats


def _merge_stats(into: dict, other: dict) -> None:
    for k, v in other.items():
        into[k] = into.get(k, 0) + v


def generate_corpus(gen: GenerationConfig, solve: SolveConfig, n_skeletons: int, seed: int,
                    out_path: str, workers: int = 1, plain: bool = False,
                    timeout: float = 10.0) -> dict:
    """Sample, solve and persist a corpus; returns the failure report."""
    stats = _new_stats()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    keys = sample_skeletons(gen, n_skeletons, rng, stats=stats)

    tasks = [(s, key, gen, solve, seed, timeout, plain) for s, key in enumerate(keys)]
    if workers > 1:
        with Pool(workers) as pool:
            results = []
            for done, res in enumerate(pool.imap_unordered(_solve_skeleton, tasks), 1):
                results.append(res)
                if done % 25 == 0:
                    log.info("solved %d/%d skeletons", done, len(tasks))
    else:
        results = []
        for done, t in enumerate(tasks, 1):
            results.append(_solve_skeleton(t))
            if done % 25 == 0:
                log.info("solved %d/%d skeletons", done, len(tasks))

    results.sort(key=lambda r: r[0])
    records: list[dict] = []
    for _, recs, st in results:
        _merge_stats(stats, st)
        records.extend(recs)
    for idx, rec in enumerate(records):
        rec["provenance"]["index"] = idx

    header = make_header("corpus", seed, gen, solve, workers=workers)
    write_records(out_path, header, records)
    stats["skeletons"] = len(keys)
    return stats


# ====== test sets ======

@dataclass(frozen=True)
class TestsetSpec:
    kind: str                 # iv | constants | skeletons | iv-subsample | textbook | classic
    size: int = 100
    per_op_cap: int = 2000    # iv/constants: max skeletons per operator count
    per_complexity: int = 10  # iv-subsample: skeletons kept per complexity
    seed: int = 0
    classic_file: str | None = None


def _group_by_skeleton(records: list[dict]) -> dict[str, dict]:
    groups: dict[str, dict] = {}
    for rec in records:
        g = groups.setdefault(rec["skeleton"], {"rep": rec, "y0s": set(), "consts": set()})
        g["y0s"].add(rec["y0"])
        g["consts"].add(tuple(rec["constants"]))
    return groups


def _qc_solve(expr: Expr, y0: float, solve: SolveConfig, timeout: float = 10.0):
    sol = solve_expr(expr, y0, solve, time.monotonic() + timeout)
    if sol.status == OK and qc_check(expr, sol, solve.qc_epsilon):
        return sol
    return None


def build_testset(corpus_path: str, spec: TestsetSpec, gen: GenerationConfig,
                  solve: SolveConfig, out_path: str, plain: bool = False) -> dict:
    """Derive a test set of the requested kind; records always re-solve
    and pass quality control before they are stored."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 3]))
    report = {"kind": spec.kind, "kept": 0, "skipped": 0}
    records: list[dict] = []

    if spec.kind in ("iv", "constants", "iv-subsample"):
        _, corpus = read_records(corpus_path)
        groups = _group_by_skeleton(corpus)
        per_op: dict[int, int] = {}
        per_cx: dict[int, int] = {}
        for key, g in groups.items():
            if spec.kind != "iv-subsample" and len(records) >= spec.size:
                break
            rep_expr = parse_prefix(g["rep"]["expr"])
            if spec.kind == "iv-subsample":
                cx = complexity(rep_expr)
                if per_cx.get(cx, 0) >= spec.per_complexity:
                    continue
            else:
                oc = operator_count(rep_expr)
                if per_op.get(oc, 0) >= spec.per_op_cap:
                    continue
            expr = rep_expr
            if spec.kind == "constants":
                sk = Skeleton.from_prefix(key)
                expr = None
                for _ in range(100):
                    try:
                        cand = resample_constants(sk, gen, rng)
                    except ResampleError:
                        break
                    if tuple(constants_of(cand)) not in g["consts"]:
                        expr = cand
                        break
                if expr is None:
                    report["skipped"] += 1
                    continue
            placed = False
            for _ in range(100):
                y0 = float(rng.uniform(solve.iv_min, solve.iv_max))
                if y0 in g["y0s"]:
                    continue
                sol = _qc_solve(expr, y0, solve)
                if sol is None:
                    continue
                records.append(_record(expr, key, y0, sol.y, solve, spec.seed, 0, plain))
                placed = True
                break
            if placed:
                if spec.kind == "iv-subsample":
                    per_cx[cx] = per_cx.get(cx, 0) + 1
                else:
                    per_op[oc] = per_op.get(oc, 0) + 1
            else:
                report["skipped"] += 1

    elif spec.kind == "skeletons":
        _, corpus = read_records(corpus_path)
        known = {rec["skeleton"] for rec in corpus}
        keys = sample_skeletons(gen, spec.size, rng, exclude=known)
        for key in keys:
            sk = Skeleton.from_prefix(key)
            placed = False
            for _ in range(100):
                try:
                    expr = resample_constants(sk, gen, rng)
                except ResampleError:
                    break
                y0 = float(rng.uniform(solve.iv_min, solve.iv_max))
                sol = _qc_solve(expr, y0, solve)
                if sol is None:
                    continue
                records.append(_record(expr, key, y0, sol.y, solve, spec.seed, 0, plain))
                placed = True
                break
            if not placed:
                report["skipped"] += 1

    elif spec.kind == "textbook":
        for name, expr, y0 in load_textbook():
            canon = simplify(expr)
            sol = _qc_solve(canon, y0, solve)
            if sol is None:
                report["skipped"] += 1
                continue
            key = skeletonize(canon).prefix()
            records.append(_record(canon, key, y0, sol.y, solve, spec.seed, 0, plain, name=name))

    elif spec.kind == "classic":
        for name, expr in load_classic(spec.classic_file):
            canon = simplify(expr)
            placed = False
            for _ in range(100):
                y0 = float(rng.uniform(solve.iv_min, solve.iv_max))
                sol = _qc_solve(canon, y0, solve)
                if sol is None:
                    continue
                key = skeletonize(canon).prefix()
                records.append(_record(canon, key, y0, sol.y, solve, spec.seed, 0, plain, name=name))
                placed = True
                break
            if not placed:
                report["skipped"] += 1

    else:
        raise GenerationError(f"unknown test set kind {spec.kind!r}")

    for idx, rec in enumerate(records):
        rec["provenance"]["index"] = idx
    header = make_header(f"testset-{spec.kind}", spec.seed, gen, solve, testset=asdict(spec))
    write_records(out_path, header, records)
    report["kept"] = len(records)
    return report


# ====== fixed equation tables ======

# name, right-hand side (already in the stored simplified form), y0
_TEXTBOOK = (
    ("riccati", "0.6*y**2 + 2*y + 0.1", -0.2),
    ("stuart_landau", "-1.1*y**3 + 1.31*y", 0.1),
    ("bernoulli", "-1.3*y + 2.1*y**2.2", 0.6),
    ("compound_interest", "0.1*y", 9.0),
    ("newton_cooling", "0.3 - 0.1*y", 9.0),
    ("logistic", "0.23*(y - y**2)", 9.0),
    ("logistic_harvest", "0.23*y - 0.76*y**2 - 0.5", 9.0),
    ("logistic_harvest_2", "2*y - 0.66*y**2 - 0.5", 0.7),
    ("solow_swan", "7.2*y**0.5 - 5.5*y", 0.1),
    ("tank_draining", "-0.21*y**0.5", 1.0),
    ("funnel_draining", "-0.67/y**1.5", 3.0),
    ("velocity_upward", "-0.1*y - 9.81", 0.1),
)

_CLASSIC = (
    ("cubic_poly", "y**3 + y**2 + y"),
    ("quartic_poly", "y**4 + y**3 + y**2 + y"),
    ("trig_mix", "sin(y**2)*cos(y) - 1"),
    ("double_sine", "sin(y) + sin(y + y**2)"),
    ("log_pair", "log(y + 1) + log(y**2 + 1)"),
)


def load_textbook() -> list[tuple[str, Expr, float]]:
    """The twelve fixed reference equations (name, f, y0)."""
    return [(name, parse_infix(src), y0) for name, src, y0 in _TEXTBOOK]


def load_classic(path: str | None = None) -> list[tuple[str, Expr]]:
    """Built-in classic benchmark right-hand sides, optionally extended
    from a file of one infix expression per line (# starts a comment)."""
    rows = [(name, parse_infix(src)) for name, src in _CLASSIC]
    if path:
        with open(path) as fh:
            for ln_no, line in enumerate(fh, 1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                try:
                    rows.append((f"file:{ln_no}", parse_infix(text)))
                except Exception as exc:
                    raise GenerationError(f"{path}:{ln_no}: {exc}") from exc
    return rows


# ====== corpus statistics ======

def corpus_stats(records: list[dict]) -> tuple[dict[str, int], dict[int, int]]:
    """Operator frequencies and complexity histogram over stored
    expressions (by token scan of the prefix strings)."""
    ops = {name: 0 for name in BINARY_OPS + UNARY_OPS}
    hist: dict[int, int] = {}
    for rec in records:
        toks = rec["expr"].split()
        hist[len(toks)] = hist.get(len(toks), 0) + 1
        for t in toks:
            if t in ops:
                ops[t] += 1
    return ops, hist
