"""Wire protocol conformance, over a real subprocess."""
from __future__ import annotations

import json
import subprocess
import sys

import pytest

from conftest import MINI_EXPRS


class Server:
    """Line-oriented JSON client around a spawned scorer process."""

    def __init__(self, checkpoint, corpus, extra=()):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "symode_trainer", "serve",
             "--checkpoint", str(checkpoint), "--corpus", str(corpus), *extra],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
        )
        self.greeting = self.read()

    def send(self, obj) -> None:
        self.proc.stdin.write(json.dumps(obj) + "\n")
        self.proc.stdin.flush()

    def send_raw(self, line: str) -> None:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def read(self) -> dict:
        line = self.proc.stdout.readline()
        assert line, "server closed its end"
        return json.loads(line)

    def ask(self, obj) -> dict:
        self.send(obj)
        return self.read()

    def close(self) -> int:
        self.proc.stdin.close()
        return self.proc.wait(timeout=30)


@pytest.fixture(scope="module")
def server(trained):
    ckpt, corpus, _ = trained
    srv = Server(ckpt, corpus)
    yield srv
    if srv.proc.poll() is None:
        srv.proc.kill()
        srv.proc.wait()


def test_greeting_announces_version_and_batch(server):
    assert server.greeting["v"] == 1
    assert server.greeting["ready"] is True
    assert isinstance(server.greeting["batch"], int) and server.greeting["batch"] >= 1


def test_single_request_returns_vocab_sized_logits(server, vocab):
    reply = server.ask({"v": 1, "traj_id": 0, "prefix": [{"tok": 1}]})
    assert reply["v"] == 1
    logits = reply["logits"]
    assert len(logits) == vocab.size
    assert all(isinstance(x, float) for x in logits)


def test_served_logits_are_deterministic(server):
    req = {"v": 1, "traj_id": 1, "prefix": [{"tok": 4}]}
    assert server.ask(req)["logits"] == server.ask(req)["logits"]


def test_constant_entries_are_accepted(server):
    req = {
        "v": 1,
        "traj_id": 2,
        "prefix": [{"tok": 5}, {"const": {"i": 12, "alpha": 0.5, "beta": 0.5}}],
    }
    assert "logits" in server.ask(req)


def test_version_mismatch_gets_error_and_server_survives(server):
    reply = server.ask({"v": 2, "traj_id": 0, "prefix": [{"tok": 1}]})
    assert reply["v"] == 1
    assert "version" in reply["error"]
    assert "logits" not in reply
    assert "logits" in server.ask({"v": 1, "traj_id": 0, "prefix": [{"tok": 1}]})


@pytest.mark.parametrize(
    "frame",
    [
        {"v": 1, "traj_id": 99, "prefix": [{"tok": 1}]},
        {"v": 1, "traj_id": -1, "prefix": [{"tok": 1}]},
        {"v": 1, "traj_id": 0},
        {"v": 1, "traj_id": 0, "prefix": []},
        {"v": 1, "traj_id": 0, "prefix": [{"tok": 999}]},
        {"v": 1, "traj_id": 0, "prefix": [{"const": {"i": 77, "alpha": 1.0, "beta": 0.0}}]},
        {"v": 1},
    ],
)
def test_bad_requests_get_error_frames(server, frame):
    reply = server.ask(frame)
    assert reply["v"] == 1 and "error" in reply and "logits" not in reply


def test_malformed_json_gets_error_frame(server):
    server.send_raw("{this is not json")
    reply = server.read()
    assert "error" in reply
    assert "logits" in server.ask({"v": 1, "traj_id": 0, "prefix": [{"tok": 1}]})


def test_batch_matches_single_requests(server):
    singles = [
        {"v": 1, "traj_id": 0, "prefix": [{"tok": 1}]},
        {"v": 1, "traj_id": 1, "prefix": [{"tok": 4}]},
        {"v": 1, "traj_id": 2, "prefix": [{"tok": 5}, {"tok": 3}]},
    ]
    expect = [server.ask(s)["logits"] for s in singles]
    reply = server.ask({"v": 1, "batch": singles})
    got = reply["logits_batch"]
    assert len(got) == 3
    for g, e in zip(got, expect):
        assert g == pytest.approx(e, abs=1e-5)


def test_batch_over_limit_is_rejected(trained):
    ckpt, corpus, _ = trained
    srv = Server(ckpt, corpus, extra=("--batch", "2"))
    try:
        assert srv.greeting["batch"] == 2
        reqs = [{"v": 1, "traj_id": 0, "prefix": [{"tok": 1}]}] * 3
        reply = srv.ask({"v": 1, "batch": reqs})
        assert "error" in reply
    finally:
        assert srv.close() == 0


def test_eof_shuts_down_cleanly(trained):
    ckpt, corpus, _ = trained
    srv = Server(ckpt, corpus)
    assert srv.close() == 0


def test_primary_client_can_drive_the_server(trained, vocab):
    """The factory's own scorer client speaks to this server unmodified."""
    from symode.codec import TokenItem
    from symode.inference import RemoteScorer

    ckpt, corpus, _ = trained
    cmd = (
        f"{sys.executable} -m symode_trainer serve "
        f"--checkpoint {ckpt} --corpus {corpus}"
    )
    scorer = RemoteScorer(command=cmd, vocab_size=vocab.size)
    try:
        single = scorer.logits(0, [TokenItem(vocab.bos_id)])
        assert single.shape == (vocab.size,)
        batch = scorer.logits_batch(0, [[TokenItem(vocab.bos_id)], [TokenItem(vocab.bos_id)]])
        assert len(batch) == 2
    finally:
        scorer.close()
