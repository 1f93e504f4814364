"""Per-user behavioral feature matrix.

All per-user operations are computed in bulk over an immutable
:class:`~blockprop.events.EventLog`; the single-user helpers
(``action_features`` etc.) run the same code on the sub-log of events
involving that user, which is valid because every feature except the
quality imputation depends only on those events.
"""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import graph as graphmod
from ..events import TOX_KEYS, Event, EventLog
from ..io import atomic_write_text, dumps_json, meta_path, read_csv, write_csv
from .domains import MBFC_COLUMNS, DomainLookup
from .manifest import FeatureManifest, ManifestError, default_manifest
from .text import TEXT_METRICS, entropy_from_counts, post_metrics, primary_language, registrable_domain
from .toxicity import ToxicityScorer, score_posts

logger = logging.getLogger(__name__)

ACTION_KINDS = {"likes": "like", "reposts": "repost", "follows": "follow", "blocks": "block"}
DERIVED_KINDS = {"times_liked": "like", "times_reposted": "repost", "times_followed": "follow", "times_blocked": "block"}
ENTROPY_COLUMNS = ("language_entropy", "domain_entropy")


@dataclass(frozen=True)
class UserFilter:
    min_posts: int = 10
    majority_lang: str = "en"

    def __post_init__(self):
        if self.min_posts < 1:
            raise ValueError("min_posts must be >= 1")

    def as_dict(self) -> dict:
        return {"min_posts": self.min_posts, "majority_lang": self.majority_lang}


# ---------------------------------------------------------------------------
# post table


@dataclass(frozen=True, eq=False)
class PostTable:
    """Original posts (post/reply creates) with per-post derived values."""

    events: tuple[Event, ...]
    actor: np.ndarray
    metrics: np.ndarray
    langs: tuple[tuple[str, ...], ...]
    domains: tuple[tuple[str | None, ...], ...]

    @classmethod
    def from_log(cls, log: EventLog, users: Sequence[str] | None = None) -> "PostTable":
        sel = log.mask(("post", "reply"), "create")
        if users is not None:
            wanted = np.zeros(len(log.users), dtype=bool)
            wanted[[log.user_index[u] for u in users]] = True
            sel &= wanted[log.actor_idx]
        rows = np.flatnonzero(sel)
        events = tuple(log.events[i] for i in rows)
        metrics = np.array([post_metrics(e.text or "") for e in events], dtype=float).reshape(-1, len(TEXT_METRICS))
        langs = tuple(tuple(primary_language(t) for t in e.declared_lang if t.strip()) for e in events)
        domains = tuple(tuple(registrable_domain(u) for u in e.urls) for e in events)
        return cls(events, log.actor_idx[rows], metrics, langs, domains)


def _positions(log: EventLog, users: Sequence[str]) -> np.ndarray:
    """Map log user index -> row in ``users`` (or -1)."""
    pos = np.full(len(log.users), -1, dtype=np.int64)
    for row, u in enumerate(users):
        pos[log.user_index[u]] = row
    return pos


def _group_mean_std(gid: np.ndarray, x: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    keep = gid >= 0
    gid, x = gid[keep], x[keep]
    cnt = np.bincount(gid, minlength=m).astype(float)
    total = np.bincount(gid, weights=x, minlength=m)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(cnt > 0, total / cnt, 0.0)
        dev = x - mean[gid]
        var = np.where(cnt > 0, np.bincount(gid, weights=dev * dev, minlength=m) / cnt, 0.0)
    return mean, np.sqrt(var)


# ---------------------------------------------------------------------------
# selection


def select_users(log: EventLog, filter: UserFilter = UserFilter()) -> list[str]:
    """Users with enough original posts whose modal declared language matches.

    Posts with no declared language are left out of the vote; a tie that
    includes the majority language passes.
    """
    sel = log.mask(("post", "reply"), "create")
    n_posts = np.bincount(log.actor_idx[sel], minlength=len(log.users))
    candidates = set(np.flatnonzero(n_posts >= filter.min_posts).tolist())
    if not candidates:
        return []
    votes: dict[int, Counter] = {u: Counter() for u in candidates}
    want = primary_language(filter.majority_lang)
    for i in np.flatnonzero(sel):
        u = int(log.actor_idx[i])
        if u in votes:
            votes[u].update(primary_language(t) for t in log.events[i].declared_lang if t.strip())
    out = []
    for u in sorted(candidates):
        c = votes[u]
        if c and c[want] == max(c.values()):
            out.append(log.users[u])
    return out


# ---------------------------------------------------------------------------
# bulk feature blocks


def action_block(log: EventLog, users: Sequence[str]) -> dict[str, np.ndarray]:
    """Action (12) and Derived (4) counts."""
    pos = _positions(log, users)
    m = len(users)
    out: dict[str, np.ndarray] = {}

    def count(idx: np.ndarray, mask: np.ndarray) -> np.ndarray:
        rows = pos[idx[mask]]
        rows = rows[rows >= 0]
        return np.bincount(rows, minlength=m).astype(float)

    for name, kind in ACTION_KINDS.items():
        for action, suffix in (("create", "created"), ("delete", "deleted")):
            out[f"{name}_{suffix}"] = count(log.actor_idx, log.mask(kind, action))
    out["posts_created"] = count(log.actor_idx, log.mask(("post", "reply"), "create"))
    out["posts_deleted"] = count(log.actor_idx, log.mask(("post", "reply"), "delete"))
    reply = log.mask("reply", "create")
    out["replies_authored"] = count(log.actor_idx, reply)
    has_subject = log.subject_idx >= 0
    out["replies_received"] = count(log.subject_idx, reply & has_subject)
    for name, kind in DERIVED_KINDS.items():
        out[name] = count(log.subject_idx, log.mask(kind, "create") & has_subject)
    return out


def text_block(posts: PostTable, log: EventLog, users: Sequence[str]) -> dict[str, np.ndarray]:
    """Textual Posts features: 6 metrics x (mean, std) plus language entropy."""
    pos = _positions(log, users)
    gid = pos[posts.actor]
    m = len(users)
    out = {}
    for j, metric in enumerate(TEXT_METRICS):
        mean, std = _group_mean_std(gid, posts.metrics[:, j], m)
        out[f"text_{metric}_mean"] = mean
        out[f"text_{metric}_std"] = std
    counters = [Counter() for _ in range(m)]
    for g, langs in zip(gid.tolist(), posts.langs):
        if g >= 0:
            counters[g].update(langs)
    out["language_entropy"] = np.array([entropy_from_counts(list(c.values())) for c in counters])
    return out


@dataclass(frozen=True, eq=False)
class ToxicityScores:
    """Seven toxicity dimensions per original post."""

    post_ids: tuple[str, ...]
    actors: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.post_ids), len(TOX_KEYS)):
            raise ValueError("toxicity scores must have 7 columns, one row per post")

    @classmethod
    def for_posts(cls, posts: Sequence[Event], mode: str = "sidecar", scorer: ToxicityScorer | None = None):
        values = score_posts(posts, mode, scorer).reshape(-1, len(TOX_KEYS))
        return cls(tuple(e.event_id for e in posts), tuple(e.actor for e in posts), values)


def toxicity_block(scores: ToxicityScores, users: Sequence[str]) -> dict[str, np.ndarray]:
    row = {u: i for i, u in enumerate(users)}
    gid = np.array([row.get(a, -1) for a in scores.actors], dtype=np.int64)
    out = {}
    for j, key in enumerate(TOX_KEYS):
        mean, std = _group_mean_std(gid, scores.values[:, j], len(users))
        out[f"tox_{key}_mean"] = mean
        out[f"tox_{key}_std"] = std
    return out


def _user_domain_stats(posts: PostTable, log: EventLog, users: Sequence[str], lookup: DomainLookup):
    pos = _positions(log, users)
    m = len(users)
    n_posts = np.zeros(m)
    n_urls = np.zeros(m)
    cat = {c: np.zeros(m) for c in MBFC_COLUMNS}
    mbfc_hits = np.zeros(m)
    q_hits = np.zeros(m)
    q_sum = np.zeros(m)
    dom_counts = [Counter() for _ in range(m)]
    for a, doms in zip(posts.actor.tolist(), posts.domains):
        g = pos[a]
        if g < 0:
            continue
        n_posts[g] += 1
        n_urls[g] += len(doms)
        for d in doms:
            if d is None:
                continue
            dom_counts[g][d] += 1
            rating = lookup.mbfc.get(d)
            if rating is not None:
                mbfc_hits[g] += 1
                for c in rating.columns():
                    cat[c][g] += 1
            score = lookup.quality.get(d)
            if score is not None:
                q_hits[g] += 1
                q_sum[g] += score
    return n_posts, n_urls, cat, mbfc_hits, q_hits, q_sum, dom_counts


def quality_fill_value(posts: PostTable, log: EventLog, users: Sequence[str], lookup: DomainLookup) -> float:
    """Mean of the valid per-user quality averages (0.0 when nobody matched)."""
    *_, q_hits, q_sum, _ = _user_domain_stats(posts, log, users, lookup)
    valid = q_hits > 0
    if not valid.any():
        return 0.0
    return float(np.mean(q_sum[valid] / q_hits[valid]))


def url_block(
    posts: PostTable,
    log: EventLog,
    users: Sequence[str],
    lookup: DomainLookup,
    quality_fill: float | None = None,
) -> tuple[dict[str, np.ndarray], float]:
    """URL-related Posts features and the Domain group.

    Returns the columns and the quality imputation value that was used.
    """
    n_posts, n_urls, cat, mbfc_hits, q_hits, q_sum, dom_counts = _user_domain_stats(posts, log, users, lookup)
    denom = np.maximum(n_posts, 1.0)
    valid = q_hits > 0
    if quality_fill is None:
        quality_fill = float(np.mean(q_sum[valid] / q_hits[valid])) if valid.any() else 0.0
    out = {
        "urls_per_post": n_urls / denom,
        "domain_entropy": np.array([entropy_from_counts(list(c.values())) for c in dom_counts]),
    }
    for c in MBFC_COLUMNS:
        out[c] = cat[c] / denom
    quality = np.full(len(users), quality_fill)
    quality[valid] = q_sum[valid] / q_hits[valid]
    out["domain_quality"] = quality
    out["mbfc_matches"] = mbfc_hits / denom
    out["quality_matches"] = q_hits / denom
    out["distinct_domains"] = np.array([float(len(c)) for c in dom_counts])
    out["total_urls"] = n_urls
    return out, quality_fill


# ---------------------------------------------------------------------------
# single-user operations


def _scalars(block: dict[str, np.ndarray]) -> dict[str, float]:
    return {k: float(v[0]) for k, v in block.items()}


def action_features(log: EventLog, user: str) -> dict[str, float]:
    """Action and Derived counts for one user."""
    return _scalars(action_block(log.involving(user), [user]))


def text_features(log: EventLog, user: str) -> dict[str, float]:
    sub = log.involving(user)
    return _scalars(text_block(PostTable.from_log(sub, [user]), sub, [user]))


def toxicity_features(scores: ToxicityScores, user: str) -> dict[str, float]:
    return _scalars(toxicity_block(scores, [user]))


def url_features(log: EventLog, user: str, lookup: DomainLookup, quality_fill: float | None = None) -> dict[str, float]:
    sub = log.involving(user)
    block, _ = url_block(PostTable.from_log(sub, [user]), sub, [user], lookup, quality_fill)
    return _scalars(block)


# ---------------------------------------------------------------------------
# matrix


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    users: tuple[str, ...]
    manifest: FeatureManifest
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (len(self.users), len(self.manifest)):
            raise ManifestError(
                f"matrix shape {self.values.shape} does not match {len(self.users)} users x {len(self.manifest)} features"
            )
        self.values.setflags(write=False)

    @property
    def names(self) -> tuple[str, ...]:
        return self.manifest.names

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.manifest.index(name)]

    def cell(self, user: str, name: str) -> float:
        return float(self.values[self.users.index(user), self.manifest.index(name)])

    def to_csv(self, path: str | os.PathLike, extra_meta: dict | None = None) -> None:
        write_csv(path, ("user_id",) + self.names, ((u, *row) for u, row in zip(self.users, self.values.tolist())))
        meta = {"manifest_version": self.manifest.version, **self.meta, **(extra_meta or {})}
        atomic_write_text(meta_path(path), dumps_json(meta))

    @classmethod
    def from_csv(cls, path: str | os.PathLike, manifest: FeatureManifest | None = None) -> "FeatureMatrix":
        header, rows = read_csv(path)
        manifest = manifest or default_manifest()
        names = tuple(header[1 : 1 + len(manifest)])
        if names != manifest.names:
            raise ManifestError(f"{path}: columns do not match the manifest")
        users = tuple(r[0] for r in rows)
        values = np.array([[float(x) for x in r[1 : 1 + len(manifest)]] for r in rows], dtype=float)
        meta = {}
        mp = meta_path(path)
        if mp.exists():
            meta = json.loads(mp.read_text(encoding="utf-8"))
        return cls(users, manifest, values.reshape(len(users), len(manifest)), meta)


def validate_matrix(fm: FeatureMatrix) -> None:
    v = fm.values
    if not np.all(np.isfinite(v)):
        bad = sorted({fm.names[j] for j in np.argwhere(~np.isfinite(v))[:, 1]})
        raise ValueError(f"non-finite values in columns {bad}")
    for j, name in enumerate(fm.names):
        col = v[:, j]
        if name in ENTROPY_COLUMNS or (name.startswith("tox_") and name.endswith("_mean")):
            if col.size and (col.min() < 0.0 or col.max() > 1.0):
                raise ValueError(f"{name} outside [0, 1]")
        elif col.size and col.min() < 0.0:
            raise ValueError(f"{name} has negative values")


def build_matrix(
    log: EventLog,
    filter: UserFilter = UserFilter(),
    lookup: DomainLookup = DomainLookup(),
    graph_features: dict[str, np.ndarray] | None = None,
    manifest: FeatureManifest | None = None,
    tox_mode: str = "sidecar",
    scorer: ToxicityScorer | None = None,
    pagerank_params: dict | None = None,
) -> FeatureMatrix:
    """One row per selected user, columns in manifest order.

    ``graph_features`` may carry precomputed graph columns aligned with the
    selected users; otherwise they are computed from ``log``.
    """
    manifest = manifest or default_manifest()
    users = select_users(log, filter)
    logger.info("building features for %d of %d users", len(users), len(log.users))
    posts = PostTable.from_log(log, users)
    cols: dict[str, np.ndarray] = {}
    cols.update(action_block(log, users))
    cols.update(text_block(posts, log, users))
    cols.update(toxicity_block(ToxicityScores.for_posts(posts.events, tox_mode, scorer), users))
    url_cols, fill = url_block(posts, log, users, lookup)
    cols.update(url_cols)
    if graph_features is None:
        graph_features = graphmod.graph_feature_block(log, users, **(pagerank_params or {})) if users else {}
    cols.update(graph_features)
    missing = [n for n in manifest.names if n not in cols]
    if users and missing:
        raise ManifestError(f"no producer for manifest features: {missing}")
    values = np.zeros((len(users), len(manifest)))
    if users:
        values = np.column_stack([np.asarray(cols[n], dtype=float) for n in manifest.names])
    meta = {
        "filter": filter.as_dict(),
        "window": log.window.as_dict() if log.window else None,
        "quality_fill": fill,
        "tox_mode": tox_mode,
    }
    fm = FeatureMatrix(tuple(users), manifest, values, meta)
    validate_matrix(fm)
    return fm
