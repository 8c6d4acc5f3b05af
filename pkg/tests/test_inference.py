"""Beam search, scorers, the remote line protocol, top-k evaluation."""

import json
import math
import socketserver
import sys
import threading
from pathlib import Path

import numpy as np
import pytest

from symode.codec import EOS, ConstItem, TokenItem, Vocabulary, default_vocabulary, tokenize_expr
from symode.expr import parse_prefix, to_prefix
from symode.inference import (
    BeamConfig,
    NoCandidateError,
    OracleScorer,
    RemoteScorer,
    Scorer,
    ScorerError,
    UniformScorer,
    beam_search,
    parse_wire_request,
    top_k_evaluate,
)

from oracles import enumerate_finished

V = default_vocabulary()
TOY = Vocabulary(("<pad>", "<bos>", "<eos>", "a", "b", "c"), 6, ())
SERVER = str(Path(__file__).with_name("wire_oracle.py"))


def recover(scorer, traj_id, vocab, **kw):
    cfg = BeamConfig(**{"width": 32, "max_len": 32, **kw})
    results = beam_search(scorer, traj_id, vocab, cfg)
    from symode.codec import detokenize

    return detokenize(results[0][1], vocab)


def test_oracle_greedy_recovers_grid_constants():
    target = parse_prefix("add mul 3 y -7")
    oracle = OracleScorer.for_expressions({0: target}, V)
    assert recover(oracle, 0, V, width=1) == target


def test_oracle_recovers_interior_constants():
    rng = np.random.default_rng(0)
    exprs = {}
    for i in range(20):
        c1 = round(float(rng.uniform(-10, 10)), 3) or 0.5
        c2 = round(float(rng.uniform(0.1, 9.9)), 3)
        exprs[i] = parse_prefix(f"add mul {c1} y {c2}")
    oracle = OracleScorer.for_expressions(exprs, V)
    for i, target in exprs.items():
        got = recover(oracle, i, V)
        assert got.op == target.op
        for a, b in zip(got.args, target.args):
            assert a.op == b.op
        from symode.expr import constants_of

        for ga, wa in zip(constants_of(got), constants_of(target)):
            assert abs(ga - wa) <= 1e-9


# the candidate pool peaks at 156 entries for this vocabulary and
# length; any narrower width prunes equal-score beams by the lex rule
FULL = 200


def test_uniform_beam_enumerates_all_finished_sequences():
    cfg = BeamConfig(width=FULL, max_len=4)
    results = beam_search(UniformScorer(TOY), 0, TOY, cfg)
    want = enumerate_finished(6, EOS, 4)
    assert len(results) == len(want) == 31

    def norm(pairs):
        return sorted((round(s, 12), tuple(t.id for t in items)) for s, items in pairs)

    got_set = norm(results)
    want_set = sorted((round(s, 12), tuple(seq)) for s, seq in want)
    assert got_set == want_set
    again = beam_search(UniformScorer(TOY), 0, TOY, cfg)
    assert norm(again) == got_set


def test_uniform_beam_rank_order():
    cfg = BeamConfig(width=FULL, max_len=4)
    results = beam_search(UniformScorer(TOY), 0, TOY, cfg)
    seqs = [tuple(t.id for t in items) for _, items in results]
    assert seqs[0] == (1, 2)  # highest score: fewest factors of 1/6
    keys = [(-s, len(items), tuple(t.id for t in items)) for s, items in results]
    assert keys == sorted(keys)
    # equal-score block is ordered lexicographically by token ids
    block = [seq for seq in seqs if len(seq) == 3]
    assert block == sorted(block)
    assert block[0] == (1, 0, 2)  # PAD expands like any other token


def test_no_candidate_when_target_longer_than_max_len():
    target = parse_prefix("add mul 3 y -7")  # 8 items with BOS/EOS
    oracle = OracleScorer.for_expressions({0: target}, V)
    with pytest.raises(NoCandidateError):
        beam_search(oracle, 0, V, BeamConfig(width=4, max_len=5))


def test_memory_fallback_narrows_width():
    wide = beam_search(UniformScorer(TOY), 0, TOY, BeamConfig(width=FULL, max_len=4))
    cfg = BeamConfig(width=FULL, max_len=4, mem_budget=1, fallback_width=5)
    narrow = beam_search(UniformScorer(TOY), 0, TOY, cfg)
    assert len(wide) == 31
    # width 5 keeps token ids 0..4 after step one; only the lex-least
    # live prefix keeps extending, so exactly three sequences finish
    seqs = sorted(tuple(t.id for t in items) for _, items in narrow)
    assert seqs == [(1, 0, 0, 2), (1, 0, 2), (1, 2)]


def test_finished_beams_freeze_but_keep_competing():
    # at width 3 the only EOS to survive a cut is the step-one one; it
    # outscores every longer candidate and must persist to the end
    results = beam_search(UniformScorer(TOY), 0, TOY, BeamConfig(width=3, max_len=6))
    seqs = [tuple(t.id for t in items) for _, items in results]
    assert seqs == [(1, 2)]


def test_scorer_shape_validated():
    class Bad(Scorer):
        def logits(self, traj_id, prefix):
            return np.zeros(V.size - 1)

    with pytest.raises(ScorerError):
        beam_search(Bad(), 0, V, BeamConfig(width=2, max_len=4))


def test_oracle_unknown_trajectory():
    oracle = OracleScorer.for_expressions({0: parse_prefix("y")}, V)
    with pytest.raises(ScorerError):
        oracle.logits(1, [TokenItem(1)])


def test_oracle_off_target_prefix_is_flat():
    oracle = OracleScorer.for_expressions({0: parse_prefix("mul 3 y")}, V)
    flat = oracle.logits(0, [TokenItem(1), TokenItem(V.id_of("add"))])
    assert np.all(flat == OracleScorer.FLOOR)
    on = oracle.logits(0, [TokenItem(1)])
    assert on[V.id_of("mul")] == OracleScorer.ON


def test_top_k_any_of_semantics():
    gt = parse_prefix("mul 3 y")
    traj = np.linspace(0.5, 2.0, 30)
    garbage = [TokenItem(1), TokenItem(V.id_of("add")), TokenItem(EOS)]
    wrong = tokenize_expr(parse_prefix("add y y"), V)
    right = tokenize_expr(gt, V)
    candidates = [(-0.1, garbage), (-0.2, wrong), (-0.3, right)]
    per_k, reports = top_k_evaluate(candidates, gt, traj, V, (1, 2, 3))
    assert reports[0] is None
    assert reports[1] is not None and not reports[1].skeleton
    assert reports[2].skeleton and reports[2].allclose
    assert not per_k[1]["skeleton"] and not per_k[2]["skeleton"]
    assert per_k[3]["skeleton"] and per_k[3]["skeleton_and_allclose"]
    assert not per_k[1]["allclose"]


def test_parse_wire_request_forms():
    req = parse_wire_request(json.dumps({"v": 1, "traj_id": 3, "prefix": [{"tok": 1}]}))
    assert req["traj_id"] == 3 and req["prefix"] == [TokenItem(1)]
    req = parse_wire_request(json.dumps(
        {"v": 1, "traj_id": 0,
         "prefix": [{"tok": 1}, {"const": {"i": 12, "alpha": 0.25, "beta": 0.75}}]}))
    assert req["prefix"][1] == ConstItem(12, 0.25, 0.75)
    batch = parse_wire_request(json.dumps(
        {"v": 1, "batch": [{"v": 1, "traj_id": 0, "prefix": []},
                           {"v": 1, "traj_id": 1, "prefix": [{"tok": 2}]}]}))
    assert [r["traj_id"] for r in batch["batch"]] == [0, 1]
    for bad in ("not json", '{"v": 2, "traj_id": 0, "prefix": []}', '{"v": 1}'):
        with pytest.raises(ScorerError):
            parse_wire_request(bad)


def _server_cmd(*args: str) -> str:
    return " ".join([sys.executable, SERVER, *args])


def test_remote_scorer_over_child_process():
    cmd = _server_cmd("--expr", "'mul 2.5 y'", "--expr", "'add y -4'")
    with RemoteScorer(command=cmd, vocab_size=V.size) as rs:
        assert rs.batch_ok
        got0 = recover(rs, 0, V)
        got1 = recover(rs, 1, V)
    assert to_prefix(got1) == "add y -4"
    assert got0.op == "mul" and abs(got0.args[0].value - 2.5) <= 1e-9
    assert rs.proc.poll() is not None


def test_remote_scorer_single_mode_fallback():
    cmd = _server_cmd("--expr", "'mul 3 y'", "--no-batch")
    with RemoteScorer(command=cmd, vocab_size=V.size) as rs:
        assert not rs.batch_ok
        outs = rs.logits_batch(0, [[TokenItem(1)], [TokenItem(1), TokenItem(V.id_of("mul"))]])
    assert len(outs) == 2
    assert outs[0][V.id_of("mul")] == OracleScorer.ON


def test_remote_scorer_error_frame_raises():
    cmd = _server_cmd("--expr", "y")
    with RemoteScorer(command=cmd, vocab_size=V.size) as rs:
        with pytest.raises(ScorerError, match="unknown trajectory"):
            rs.logits(99, [TokenItem(1)])


def test_remote_scorer_rejects_bad_greetings():
    with pytest.raises(ScorerError):
        RemoteScorer(command=_server_cmd("--expr", "y", "--not-ready"), vocab_size=V.size)
    with pytest.raises(ScorerError):
        RemoteScorer(command=_server_cmd("--expr", "y", "--greet-version", "2"), vocab_size=V.size)


def test_remote_scorer_endpoint_exclusivity():
    with pytest.raises(ScorerError):
        RemoteScorer()
    with pytest.raises(ScorerError):
        RemoteScorer(connect="127.0.0.1:1", command="x")


def test_remote_scorer_over_tcp():
    oracle = OracleScorer.for_expressions({0: parse_prefix("add y 2")}, V)

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            self.wfile.write(b'{"v": 1, "ready": true, "batch": false}\n')
            for raw in self.rfile:
                req = parse_wire_request(raw.decode())
                reply = {"v": 1, "logits": oracle.logits(req["traj_id"], req["prefix"]).tolist()}
                self.wfile.write((json.dumps(reply) + "\n").encode())

    with socketserver.TCPServer(("127.0.0.1", 0), Handler) as srv:
        port = srv.server_address[1]
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        try:
            with RemoteScorer(connect=f"127.0.0.1:{port}", vocab_size=V.size) as rs:
                assert not rs.batch_ok
                got = recover(rs, 0, V)
            assert to_prefix(got) == "add y 2"
        finally:
            srv.shutdown()


def test_length_norm_stays_compatible_with_oracle():
    target = parse_prefix("add mul 3 y -7")
    oracle = OracleScorer.for_expressions({0: target}, V)
    assert recover(oracle, 0, V, length_norm=0.5) == target
