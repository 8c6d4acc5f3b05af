"""Command-line entry point.

One binary, subcommand style:

    symode generate  --skeletons 1000 --seed 7 --out corpus.jsonl
    symode testset   --corpus corpus.jsonl --kind iv --out test.jsonl
    symode solve     --expr "0.1*y" --y0 9 --out sol.csv
    symode qc        --in corpus.jsonl
    symode encode    --expr "y - y**2" [--emit-vocab vocab.json]
    symode decode    --items '[{"tok":1},{"tok":3},{"tok":2}]'
    symode infer     --in test.jsonl --scorer oracle --out results.jsonl
    symode score     --gt test.jsonl --pred preds.txt --out scores.csv
    symode stats     --in corpus.jsonl
    symode textbook  [--solve]
    symode classic   [--file extra.txt]

Every numeric knob of the generation, solver, metrics and beam configs
is exposed as a flag (``--gen-p-var`` is field p_var of the generation
config, and so on) and as a dotted key in an optional config file
(``--config``).  The file is flat ``section.field = value`` lines, `#`
comments; flags override file values, file values override defaults.
The effective config is echoed into the header of every artifact.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time

import numpy as np

from .codec import (
    CodecError,
    default_vocabulary,
    detokenize,
    item_from_json,
    item_to_json,
    tokenize_expr,
    vocabulary_to_json,
)
from .dataset import (
    GenerationError,
    TestsetSpec,
    build_testset,
    corpus_stats,
    decode_y,
    generate_corpus,
    load_classic,
    load_textbook,
    read_records,
    record_expr,
)
from .expr import ExprError, ParseError, complexity, evaluate, parse_infix, parse_prefix, to_infix, to_prefix
from .generate import GenerationConfig
from .inference import BeamConfig, NoCandidateError, OracleScorer, RemoteScorer, ScorerError, beam_search, top_k_evaluate
from .metrics import MetricsConfig, score
from .solver import OK, SolveConfig, finite_diff, qc_check, solve_expr

log = logging.getLogger("symode")

_SECTIONS = {
    "gen": GenerationConfig,
    "solve": SolveConfig,
    "metrics": MetricsConfig,
    "beam": BeamConfig,
}


class ConfigError(ValueError):
    pass


# ====== config plumbing ======

def parse_config_file(path: str) -> dict[str, dict[str, object]]:
    """Flat `section.field = value` lines into {section: {field: raw}}."""
    out: dict[str, dict[str, object]] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            key = key.strip()
            if key.count(".") != 1:
                raise ConfigError(f"{path}:{lineno}: key must be section.field")
            sec, field = key.split(".")
            if sec not in _SECTIONS:
                raise ConfigError(f"{path}:{lineno}: unknown section {sec!r}")
            try:
                parsed = json.loads(val.strip())
            except json.JSONDecodeError:
                parsed = val.strip()
            out.setdefault(sec, {})[field] = parsed
    return out


def _field_default(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def _convert(value, default):
    """Coerce a file/flag value to the type of the field default."""
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v != ""]
        elem = default[0] if default else 0.0
        return tuple(type(elem)(v) for v in value)
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes")
        return bool(value)
    return type(default)(value)


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    for sec, cls in _SECTIONS.items():
        group = parser.add_argument_group(f"{sec} config")
        for f in dataclasses.fields(cls):
            flag = f"--{sec}-{f.name.replace('_', '-')}"
            group.add_argument(flag, dest=f"{sec}__{f.name}", default=None, metavar="V",
                               help=f"{sec}.{f.name} (default: {_field_default(f)!r})")


def build_configs(args: argparse.Namespace):
    file_cfg = parse_config_file(args.config) if getattr(args, "config", None) else {}
    built = {}
    for sec, cls in _SECTIONS.items():
        kwargs = {}
        for f in dataclasses.fields(cls):
            default = _field_default(f)
            value = default
            if f.name in file_cfg.get(sec, {}):
                value = _convert(file_cfg[sec][f.name], default)
            flag_val = getattr(args, f"{sec}__{f.name}", None)
            if flag_val is not None:
                value = _convert(flag_val, default)
            kwargs[f.name] = value
        for field in file_cfg.get(sec, {}):
            if field not in kwargs:
                raise ConfigError(f"unknown config field {sec}.{field}")
        built[sec] = cls(**kwargs)
    return built["gen"], built["solve"], built["metrics"], built["beam"]


def config_echo(gen, solve, metrics, beam) -> dict:
    return {
        "generation": dataclasses.asdict(gen),
        "solve": dataclasses.asdict(solve),
        "metrics": dataclasses.asdict(metrics),
        "beam": dataclasses.asdict(beam),
    }


# ====== expression input helper ======

def parse_expr_arg(text: str):
    """Accept either grammar; prefix wins on ambiguous single tokens."""
    try:
        return parse_prefix(text)
    except ParseError:
        return parse_infix(text)


# ====== subcommands ======

def cmd_generate(args) -> int:
    gen, solve, _, _ = build_configs(args)
    t0 = time.monotonic()
    stats = generate_corpus(gen, solve, args.skeletons, args.seed, args.out,
                            workers=args.workers, plain=args.plain, timeout=args.timeout)
    log.info("generate: %d records in %.1fs -> %s", stats["records"], time.monotonic() - t0, args.out)
    log.info("generate: stats %s", json.dumps(stats, sort_keys=True))
    return 0


def cmd_testset(args) -> int:
    gen, solve, _, _ = build_configs(args)
    spec = TestsetSpec(kind=args.kind, size=args.size, per_op_cap=args.per_op_cap,
                       per_complexity=args.per_complexity, seed=args.seed,
                       classic_file=args.classic_file)
    report = build_testset(args.corpus, spec, gen, solve, args.out, plain=args.plain)
    log.info("testset: kind=%s kept=%d skipped=%d -> %s",
             args.kind, report["kept"], report["skipped"], args.out)
    return 0


def cmd_solve(args) -> int:
    _, solve, _, _ = build_configs(args)
    e = parse_expr_arg(args.expr)
    sol = solve_expr(e, args.y0, solve)
    log.info("solve: status=%s steps=%d", sol.status, sol.n_steps)
    if sol.status == OK and args.out:
        with open(args.out, "w") as fh:
            fh.write("# " + json.dumps({"expr": to_prefix(e), "y0": args.y0,
                                        "config": dataclasses.asdict(solve)}) + "\n")
            fh.write("t,y\n")
            for t, y in zip(sol.t, sol.y):
                fh.write(f"{float(t)!r},{float(y)!r}\n")
        log.info("solve: wrote %d rows -> %s", sol.t.size, args.out)
    return 0 if sol.status == OK else 1


def cmd_qc(args) -> int:
    _, solve, _, _ = build_configs(args)
    header, records = read_records(args.infile)
    bad = 0
    for i, rec in enumerate(records):
        e = record_expr(rec)
        y = decode_y(rec)
        h = rec["t_end"] / (rec["n_grid"] - 1)
        fd = finite_diff(y, h)
        rhs = evaluate(e, y[4:-4])
        resid = np.abs(fd - rhs)
        ok = bool(np.all(np.isfinite(y)) and resid.size and np.max(resid) <= solve.qc_epsilon)
        if not ok:
            bad += 1
            log.warning("qc: record %d fails (max residual %.3g)", i,
                        float(np.max(resid)) if resid.size else float("nan"))
    log.info("qc: %d/%d records pass (epsilon=%g)", len(records) - bad, len(records), solve.qc_epsilon)
    return 1 if bad else 0


def cmd_encode(args) -> int:
    vocab = default_vocabulary()
    if args.emit_vocab:
        with open(args.emit_vocab, "w") as fh:
            json.dump(vocabulary_to_json(vocab), fh, indent=2)
            fh.write("\n")
        log.info("encode: wrote vocabulary -> %s", args.emit_vocab)
    if args.expr is not None:
        e = parse_expr_arg(args.expr)
        items = tokenize_expr(e, vocab)
        print(json.dumps([item_to_json(i) for i in items]))
    elif not args.emit_vocab:
        raise ConfigError("encode: need --expr or --emit-vocab")
    return 0


def cmd_decode(args) -> int:
    vocab = default_vocabulary()
    payload = args.items if args.items is not None else sys.stdin.read()
    items = [item_from_json(o) for o in json.loads(payload)]
    e = detokenize(items, vocab)
    print(json.dumps({"prefix": to_prefix(e), "infix": to_infix(e)}))
    return 0


def _open_scorer(args, records, vocab):
    if args.connect:
        return RemoteScorer(connect=args.connect, vocab_size=vocab.size)
    if args.command:
        return RemoteScorer(command=args.command, vocab_size=vocab.size)
    exprs = {i: record_expr(rec) for i, rec in enumerate(records)}
    return OracleScorer.for_expressions(exprs, vocab)


def cmd_infer(args) -> int:
    gen, solve, metrics, beam = build_configs(args)
    header, records = read_records(args.infile)
    vocab = default_vocabulary()
    ks = tuple(k for k in beam.top_k if k <= beam.width)
    scorer = _open_scorer(args, records, vocab)
    totals = {k: {} for k in ks}
    rows = []
    t0 = time.monotonic()
    try:
        for i, rec in enumerate(records):
            gt = record_expr(rec)
            y = decode_y(rec)
            try:
                cands = beam_search(scorer, i, vocab, beam)
            except NoCandidateError:
                cands = []
            if cands:
                per_k, reports = top_k_evaluate(cands, gt, y, vocab, ks, metrics)
                top = cands[0][1]
                try:
                    top_prefix = to_prefix(detokenize(top, vocab))
                except CodecError:
                    top_prefix = None
            else:
                per_k = {k: {} for k in ks}
                top_prefix = None
            for k in ks:
                for metric, passed in per_k[k].items():
                    totals[k][metric] = totals[k].get(metric, 0) + bool(passed)
            rows.append({"index": i, "skeleton": rec["skeleton"], "gt": rec["expr"],
                         "top1": top_prefix, "n_candidates": len(cands),
                         "per_k": {str(k): per_k[k] for k in ks}})
            if (i + 1) % 50 == 0:
                log.info("infer: %d/%d records (%.1fs)", i + 1, len(records), time.monotonic() - t0)
    finally:
        if isinstance(scorer, RemoteScorer):
            scorer.close()

    n = max(len(records), 1)
    if args.out:
        doc = {"format": "symode-infer", "version": 1, "source": args.infile,
               "config": config_echo(gen, solve, metrics, beam)}
        with open(args.out, "w") as fh:
            fh.write(json.dumps(doc) + "\n")
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("k,metric,passes,total,rate\n")
            for k in ks:
                for metric in sorted(totals[k]):
                    c = totals[k][metric]
                    fh.write(f"{k},{metric},{c},{len(records)},{c / n:.6f}\n")
    for k in ks:
        summary = " ".join(f"{m}={totals[k].get(m, 0) / n:.3f}" for m in sorted(totals[k]))
        log.info("infer: k=%d %s", k, summary)
    return 0


def cmd_score(args) -> int:
    gen, solve, metrics, beam = build_configs(args)
    header, records = read_records(args.gt)
    with open(args.pred) as fh:
        pred_lines = [ln.strip() for ln in fh if ln.strip()]
    if len(pred_lines) != len(records):
        raise ConfigError(f"score: {len(records)} gt records vs {len(pred_lines)} predictions")
    fields = ("allclose", "r2_pass", "skeleton", "skeleton_and_allclose", "skeleton_and_r2")
    counts = dict.fromkeys(fields, 0)
    lines = ["index," + ",".join(fields) + ",r2"]
    for i, (rec, text) in enumerate(zip(records, pred_lines)):
        gt = record_expr(rec)
        report = None
        try:
            report = score(gt, parse_expr_arg(text), decode_y(rec), metrics)
        except (ExprError, CodecError) as exc:
            log.warning("score: prediction %d unparseable: %s", i, exc)
        vals = [bool(report and getattr(report, f)) for f in fields]
        for f, v in zip(fields, vals):
            counts[f] += v
        r2 = report.r2 if report else float("nan")
        lines.append(f"{i}," + ",".join(str(int(v)) for v in vals) + f",{r2!r}")
    n = max(len(records), 1)
    lines.append("aggregate," + ",".join(f"{counts[f] / n:.6f}" for f in fields) + ",")
    out = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("# " + json.dumps({"gt": args.gt, "pred": args.pred,
                                        "config": config_echo(gen, solve, metrics, beam)}) + "\n")
            fh.write(out)
    else:
        sys.stdout.write(out)
    for f in fields:
        log.info("score: %s %.3f", f, counts[f] / n)
    return 0


def cmd_stats(args) -> int:
    header, records = read_records(args.infile)
    ops, hist = corpus_stats(records)
    lines = ["section,key,count"]
    for name in sorted(ops):
        lines.append(f"operator,{name},{ops[name]}")
    for c in sorted(hist):
        lines.append(f"complexity,{c},{hist[c]}")
    out = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    log.info("stats: %d records, %d operator kinds", len(records), len(ops))
    return 0


def cmd_textbook(args) -> int:
    _, solve, _, _ = build_configs(args)
    failures = 0
    for name, e, y0 in load_textbook():
        if args.solve:
            sol = solve_expr(e, y0, solve)
            ok = sol.status == OK and qc_check(e, sol, solve.qc_epsilon)
            failures += not ok
            print(f"{name}: {to_infix(e)}  y0={y0}  status={sol.status}  qc={'pass' if ok else 'FAIL'}")
        else:
            print(f"{name}: {to_infix(e)}  y0={y0}")
    return 1 if failures else 0


def cmd_classic(args) -> int:
    for name, e in load_classic(args.file):
        print(f"{name}: {to_infix(e)}  complexity={complexity(e)}")
    return 0


# ====== parser ======

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symode", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", help="flat section.field = value config file")
        add_config_flags(p)

    p = sub.add_parser("generate", help="sample a training corpus")
    p.add_argument("--skeletons", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plain", action="store_true", help="store y as JSON floats, not base64")
    p.add_argument("--timeout", type=float, default=10.0, help="per-equation wall clock budget (s)")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("testset", help="derive a held-out test set from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", required=True,
                   choices=("iv", "constants", "skeletons", "iv-subsample", "textbook", "classic"))
    p.add_argument("--size", type=int, default=100)
    p.add_argument("--per-op-cap", type=int, default=2000)
    p.add_argument("--per-complexity", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classic-file", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--plain", action="store_true")
    common(p)
    p.set_defaults(fn=cmd_testset)

    p = sub.add_parser("solve", help="integrate one right-hand side")
    p.add_argument("--expr", required=True, help="prefix or infix expression")
    p.add_argument("--y0", type=float, required=True)
    p.add_argument("--out", help="CSV output path")
    common(p)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("qc", help="re-check stored trajectories against their expressions")
    p.add_argument("--in", dest="infile", required=True)
    common(p)
    p.set_defaults(fn=cmd_qc)

    p = sub.add_parser("encode", help="expression -> token items")
    p.add_argument("--expr")
    p.add_argument("--emit-vocab", help="also write the vocabulary JSON here")
    common(p)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="token items JSON -> expression")
    p.add_argument("--items", help="JSON array (default: read stdin)")
    common(p)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("infer", help="beam-search a test set against a scorer")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--scorer", choices=("oracle",), default="oracle",
                   help="in-process scorer when no endpoint is given")
    p.add_argument("--connect", help="host:port of a wire-protocol scorer")
    p.add_argument("--command", help="spawn this command as a stdio scorer")
    p.add_argument("--out", help="per-record JSONL results")
    p.add_argument("--csv", help="aggregate pass-rate CSV")
    common(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("score", help="score aligned predictions against a record file")
    p.add_argument("--gt", required=True, help="corpus/testset JSONL")
    p.add_argument("--pred", required=True, help="one expression per line, aligned")
    p.add_argument("--out", help="CSV output path (default stdout)")
    common(p)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("stats", help="operator frequencies and complexity histogram")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", help="CSV output path (default stdout)")
    common(p)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("textbook", help="list or solve the embedded textbook problems")
    p.add_argument("--solve", action="store_true")
    common(p)
    p.set_defaults(fn=cmd_textbook)

    p = sub.add_parser("classic", help="list the embedded classic equations")
    p.add_argument("--file", help="extra equations, one infix per line")
    common(p)
    p.set_defaults(fn=cmd_classic)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ExprError, CodecError, ScorerError, GenerationError) as exc:
        log.error("%s", exc)
        return 1
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
