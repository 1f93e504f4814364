import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockprop.events import TOX_KEYS, parse_replay
from blockprop.features import (
    GROUPS,
    DomainLookup,
    FeatureManifest,
    FeatureMatrix,
    LexiconScorer,
    ManifestError,
    MissingToxicityError,
    ToxicityScores,
    UserFilter,
    action_features,
    build_matrix,
    default_manifest,
    normalized_entropy,
    post_metrics,
    registrable_domain,
    select_users,
    text_features,
    toxicity_features,
    url_features,
)
from blockprop.features.domains import DomainLookupError
from blockprop.features.engine import PostTable

from conftest import ndjson, rec, ts

# ---------------------------------------------------------------------------
# manifest


def test_default_manifest_has_81_features_in_five_groups():
    m = default_manifest()
    assert len(m) == 81
    assert set(m.groups) == set(GROUPS)
    counts = Counter(m.groups)
    assert counts == {"Action": 12, "Derived": 4, "Posts": 29, "Domain": 24, "Graph": 12}


def test_manifest_roundtrip_and_validation():
    m = default_manifest()
    assert FeatureManifest.from_tsv(m.to_tsv()).names == m.names
    with pytest.raises(ManifestError):
        FeatureManifest.from_tsv(m.to_tsv() + "likes_created\tAction\tdup\n")
    with pytest.raises(ManifestError):
        FeatureManifest.from_tsv(m.to_tsv().replace("\tGraph\t", "\tNetwork\t", 1))


# ---------------------------------------------------------------------------
# text metrics and entropy


def test_post_metrics_counts_character_classes():
    assert post_metrics("Ab1 \U0001F389") == (6, 1, 1, 1, 1, 1)
    assert post_metrics("") == (0, 0, 0, 0, 0, 0)
    assert post_metrics("ÉCOLE école") == (11, 5, 5, 0, 1, 0)


def naive_entropy(values):
    c = Counter(values)
    k = len(c)
    if k < 2:
        return 0.0
    n = sum(c.values())
    return -sum(v / n * math.log(v / n) for v in c.values()) / math.log(k)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), max_size=60))
def test_entropy_bounds_and_oracle(values):
    h = normalized_entropy(values)
    assert 0.0 <= h <= 1.0
    assert h == pytest.approx(naive_entropy(values), abs=1e-12)
    counts = Counter(values)
    uniform = len(counts) >= 2 and len(set(counts.values())) == 1
    assert (h == 1.0) == uniform
    if len(counts) <= 1:
        assert h == 0.0


def test_registrable_domain():
    assert registrable_domain("https://WWW.Example.com/path?q=1") == "example.com"
    assert registrable_domain("news.example:8080/x") == "news.example"
    assert registrable_domain("") is None
    assert registrable_domain("http://") is None


# ---------------------------------------------------------------------------
# user filter


def _posts(actor, n, langs, start=0):
    return [rec(f"{actor}-{start + i}", actor=actor, ts=ts(1, i % 60), langs=langs) for i in range(n)]


def test_user_filter_posts_and_language():
    records = (
        _posts("en10", 10, ["en"])
        + _posts("en9", 9, ["en"])
        + _posts("pt", 12, ["pt"])
        + _posts("tie", 5, ["en"]) + _posts("tie", 5, ["pt"], start=5)
        + _posts("nolang", 10, [])
        + _posts("mixed", 6, ["en-GB"]) + _posts("mixed", 4, ["de"], start=6)
    )
    log = parse_replay(ndjson(records))
    assert select_users(log, UserFilter(10, "en")) == ["en10", "mixed", "tie"]
    assert select_users(log, UserFilter(9, "en")) == ["en10", "en9", "mixed", "tie"]
    assert select_users(log, UserFilter(10, "pt")) == ["pt", "tie"]


# ---------------------------------------------------------------------------
# per-user features against hand counts


def test_action_features_match_hand_counts(tiny_log):
    a = action_features(tiny_log, "alice")
    assert a["posts_created"] == 2 and a["posts_deleted"] == 1
    assert a["follows_created"] == 1 and a["blocks_created"] == 1
    assert a["times_liked"] == 2 and a["times_reposted"] == 1 and a["times_followed"] == 1
    assert a["replies_received"] == 1 and a["replies_authored"] == 0
    b = action_features(tiny_log, "bob")
    assert b["posts_created"] == 1 and b["replies_authored"] == 1 and b["likes_created"] == 1
    assert b["times_blocked"] == 2
    c = action_features(tiny_log, "carol")
    assert c["blocks_created"] == 1 and c["blocks_deleted"] == 1


def test_text_features_mean_and_population_std(tiny_log):
    t = text_features(tiny_log, "alice")
    chars = np.array([len("Hello World 1"), len("second post")], dtype=float)
    assert t["text_chars_mean"] == pytest.approx(chars.mean())
    assert t["text_chars_std"] == pytest.approx(chars.std())
    assert t["text_uppercase_mean"] == 1.0
    # en and en-US collapse to one primary language
    assert t["language_entropy"] == 0.0


def test_toxicity_sidecar_aggregates_and_missing_scores_error():
    records = [
        rec("p1", tox={k: 0.2 for k in TOX_KEYS}),
        rec("p2", ts=ts(1, 1), tox={k: 0.6 for k in TOX_KEYS}),
    ]
    log = parse_replay(ndjson(records))
    scores = ToxicityScores.for_posts(PostTable.from_log(log).events)
    f = toxicity_features(scores, "alice")
    assert f["tox_insult_mean"] == pytest.approx(0.4)
    assert f["tox_insult_std"] == pytest.approx(0.2)
    bare = {k: v for k, v in records[0].items() if k != "tox"}
    log = parse_replay(ndjson([bare]))
    with pytest.raises(MissingToxicityError):
        ToxicityScores.for_posts(PostTable.from_log(log).events)


def test_lexicon_scorer_is_monotone_in_term_density():
    s = LexiconScorer().score(["a calm note about gardens", "you idiot, you stupid moron"])
    assert s.shape == (2, 7)
    assert np.all((s > 0) & (s < 1))
    insult = TOX_KEYS.index("insult")
    assert s[1, insult] > s[0, insult]


def test_url_features_fractions_and_quality_fill():
    lookup = DomainLookup.from_tsv("news.example\tleft\thigh\tmostly\n", "news.example\t0.8\nother.example\t0.4\n")
    records = [
        rec("p1", urls=["https://news.example/1", "https://www.other.example/2"]),
        rec("p2", ts=ts(1, 1), urls=[]),
        rec("q1", actor="zed", urls=["https://unrated.example"]),
    ]
    log = parse_replay(ndjson(records))
    f = url_features(log, "alice", lookup)
    assert f["urls_per_post"] == 1.0
    assert f["bias_left"] == 0.5 and f["credibility_high"] == 0.5
    assert f["mbfc_matches"] == 0.5 and f["quality_matches"] == 1.0
    assert f["domain_quality"] == pytest.approx(0.6)
    assert f["domain_entropy"] == 1.0
    # no matched quality: filled with the supplied corpus mean
    z = url_features(log, "zed", lookup, quality_fill=0.6)
    assert z["domain_quality"] == 0.6 and z["distinct_domains"] == 1.0


def test_domain_lookup_rejects_bad_rows():
    with pytest.raises(DomainLookupError):
        DomainLookup.from_tsv("news.example\tleft\thigh\n")
    with pytest.raises(DomainLookupError):
        DomainLookup.from_tsv("news.example\tsideways\thigh\tmostly\n")
    with pytest.raises(DomainLookupError):
        DomainLookup.from_tsv("", "news.example\t1.5\n")


# ---------------------------------------------------------------------------
# full matrix


def test_matrix_matches_single_user_operations(small_corpus):
    _, _, log, lookup, fm = small_corpus
    fill = fm.meta["quality_fill"]
    for user in fm.users[:: max(1, len(fm.users) // 5)]:
        expected = {}
        expected.update(action_features(log, user))
        expected.update(text_features(log, user))
        expected.update(url_features(log, user, lookup, fill))
        for name, value in expected.items():
            assert fm.cell(user, name) == pytest.approx(value, rel=1e-12, abs=1e-12), name


def test_matrix_shape_ranges_and_roster(small_corpus):
    _, truth, _, _, fm = small_corpus
    assert fm.values.shape == (len(fm.users), 81)
    assert list(fm.users) == sorted(truth.roster)
    assert np.all(np.isfinite(fm.values))
    for name in ("language_entropy", "domain_entropy", "tox_toxicity_mean"):
        col = fm.column(name)
        assert col.min() >= 0 and col.max() <= 1


def test_matrix_csv_roundtrip_is_exact(small_corpus, tmp_path):
    fm = small_corpus[4]
    p = tmp_path / "m.csv"
    fm.to_csv(p)
    back = FeatureMatrix.from_csv(p)
    assert back.users == fm.users
    assert np.array_equal(back.values, fm.values)
    assert back.meta["manifest_version"] == fm.manifest.version


def test_lexicon_mode_needs_no_sidecar(tiny_records):
    for r in tiny_records:
        r.pop("tox", None)
    log = parse_replay(ndjson(tiny_records))
    with pytest.raises(MissingToxicityError):
        build_matrix(log, UserFilter(min_posts=1))
    fm = build_matrix(log, UserFilter(min_posts=1), tox_mode="lexicon")
    assert fm.users == ("alice", "bob")
