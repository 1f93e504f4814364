import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from blockprop.events import TOX_KEYS, parse_replay
from blockprop.features import DomainLookup, UserFilter, build_matrix
from blockprop.synth import ScenarioConfig, domain_tables, generate

START = "2024-01-01T00:00:00Z"


def rec(id, kind="post", action="create", actor="alice", ts="2024-01-01T00:00:00Z", **extra):
    """One wire record; post/reply creates get text and tox scores by default."""
    r = {"id": id, "kind": kind, "action": action, "actor": actor, "ts": ts}
    if action == "create" and kind in ("post", "reply"):
        r.setdefault("text", extra.pop("text", "hello world"))
        r["tox"] = extra.pop("tox", {k: 0.1 for k in TOX_KEYS})
    r.update(extra)
    return r


def ndjson(records) -> bytes:
    return "".join(json.dumps(r) + "\n" for r in records).encode("utf-8")


def ts(day: int, second: int = 0) -> str:
    return f"2024-01-{day:02d}T00:00:{second:02d}Z"


@pytest.fixture
def tiny_records():
    """Hand-built log: three users, every event kind, one delete of each sort."""
    return [
        rec("e01", actor="alice", ts=ts(1, 1), text="Hello World 1", langs=["en"], urls=["https://news.example/a"]),
        rec("e02", actor="alice", ts=ts(1, 2), text="second post", langs=["en-US"]),
        rec("e03", "reply", actor="bob", ts=ts(1, 3), subject="alice", ref="e01", text="nice", langs=["en"]),
        rec("e04", "like", actor="bob", ts=ts(1, 4), subject="alice", ref="e01"),
        rec("e05", "like", actor="carol", ts=ts(2, 5), subject="alice", ref="e02"),
        rec("e06", "repost", actor="carol", ts=ts(2, 6), subject="alice", ref="e01"),
        rec("e07", "follow", actor="alice", ts=ts(2, 7), subject="bob"),
        rec("e08", "follow", actor="bob", ts=ts(2, 8), subject="alice"),
        rec("e09", "block", actor="carol", ts=ts(3, 9), subject="bob"),
        rec("e10", "block", "delete", actor="carol", ts=ts(3, 10), subject="bob"),
        rec("e11", "post", "delete", actor="alice", ts=ts(3, 11), ref="e02"),
        rec("e12", "block", actor="alice", ts=ts(3, 12), subject="bob"),
    ]


@pytest.fixture
def tiny_log(tiny_records):
    return parse_replay(ndjson(tiny_records))


@pytest.fixture(scope="session")
def small_corpus():
    """Synthetic corpus of 400 users: (replay bytes, ground truth, log, lookup, matrix)."""
    cfg = ScenarioConfig(n_users=400, seed=11)
    replay, truth = generate(cfg)
    log = parse_replay(replay, cfg.window)
    lookup = DomainLookup.from_tsv(*domain_tables(cfg.seed))
    fm = build_matrix(log, UserFilter(), lookup)
    return replay, truth, log, lookup, fm


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tree_checksums(root) -> dict:
    """sha256 of every file under ``root`` keyed by relative path."""
    root = Path(root)
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


TINY_CONFIG = """\
quantiles = 0.5, 0.9, 0.9995
n_estimators = 20
cv_runs = 2
cv_folds = 3
rf_estimators = 20
best_worst_grid = 1,4
best_worst_runs = 2
beeswarm_quantiles = 0.9
synth_n_users = 300
"""
