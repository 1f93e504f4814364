"""Synthetic replay corpora with planted behavior-to-blocks relationships.

Every user gets a heavy-tailed activity level and a latent toxicity level.
Blocks received are negative-binomial with a log-linear mean in both; the
toxicity latent drives four of the seven per-post toxicity scores, so those
four per-user means are the planted features. Everything else (text style,
URLs, graph position, the remaining toxicity dimensions) is independent
noise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .events import TOX_KEYS, Event, TimeWindow

COUPLED_TOX = ("toxicity", "insult", "obscene", "identity_attack")
SHARES = {"post": 0.40, "like": 0.35, "repost": 0.10, "follow": 0.15}
REPLY_FRACTION = 0.3
_OTHER_LANGS = ("pt", "es", "de")
_WORDS = (
    "the", "a", "new", "day", "just", "read", "this", "thread", "about", "data",
    "science", "music", "game", "news", "today", "really", "good", "bad", "people",
    "think", "post", "world", "city", "coffee", "weekend", "vote", "policy", "art",
    "photo", "link", "update", "share", "love", "work", "time", "night", "sky",
)
_EMOJI = ("\U0001F600", "\U0001F389", "❤️", "\U0001F44D", "\U0001F525", "\U0001F602")
N_DOMAINS = 60
BIAS_LABELS = ("extreme-left", "left", "center-left", "center-right", "right", "extreme-right", "satire", "conspiracy", "pro-science")
CRED_LABELS = ("low", "medium", "high")
FACT_LABELS = ("very-low", "low", "medium", "mostly", "high", "very-high", "mixed")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """Generator parameters.

    The log of a user's expected blocks is
    ``log(base_blocks) + beta_toxicity * g + beta_activity * log(A / median A)``
    where ``g`` is the toxicity latent (mean 0 with spread ``tox_spread`` for
    ordinary users, mean ``extreme_shift`` for the extreme fraction) and
    ``A`` is total activity. ``dispersion`` is the negative-binomial shape;
    leave it ``None`` and set ``bayes_r2`` to calibrate it analytically.
    """

    n_users: int = 5000
    start: str = "2024-01-01T00:00:00Z"
    days: int = 14
    activity_alpha: float = 1.3
    activity_min: float = 8.0
    activity_cap: int = 4000
    qualify_fraction: float = 0.6
    beta_activity: float = 0.0
    beta_toxicity: float = 1.2
    extreme_fraction: float = 0.08
    extreme_shift: float = 2.5
    tox_spread: float = 0.5
    base_blocks: float = 2.0
    dispersion: float | None = 5.0
    bayes_r2: float | None = None
    tox_noise: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.n_users < 100:
            raise ScenarioError("n_users must be at least 100")
        if self.beta_activity < 0 or self.beta_toxicity < 0:
            raise ScenarioError("coupling coefficients must be non-negative")
        if not 0.0 <= self.extreme_fraction <= 1.0:
            raise ScenarioError("extreme_fraction must lie in [0, 1]")
        if not 0.0 < self.qualify_fraction <= 1.0:
            raise ScenarioError("qualify_fraction must lie in (0, 1]")
        if self.activity_alpha <= 0 or self.activity_min < 1 or self.activity_cap < self.activity_min:
            raise ScenarioError("bad activity distribution")
        if self.days < 1 or self.base_blocks <= 0 or self.tox_spread < 0 or self.tox_noise < 0:
            raise ScenarioError("days, base_blocks, tox_spread and tox_noise must be positive")
        if self.dispersion is None and self.bayes_r2 is None:
            raise ScenarioError("set dispersion or bayes_r2")
        if self.dispersion is not None and self.dispersion <= 0:
            raise ScenarioError("dispersion must be positive")
        if self.bayes_r2 is not None and not 0.0 < self.bayes_r2 < 1.0:
            raise ScenarioError("bayes_r2 must lie in (0, 1)")

    @property
    def window(self) -> TimeWindow:
        return TimeWindow.from_days(self.start, self.days)


def lognormal_moments(base: float, sigma: float) -> tuple[float, float]:
    """E[mu] and E[mu^2] for mu = base * exp(sigma * Z), Z standard normal."""
    return base * math.exp(sigma**2 / 2), base**2 * math.exp(2 * sigma**2)


def calibrate_dispersion(base: float, sigma: float, target_r2: float) -> float:
    """Negative-binomial shape making Var(mu) / Var(blocks) equal ``target_r2``.

    With blocks ~ NB(mu, r), Var(blocks) = Var(mu) + E[mu] + E[mu^2] / r, so
    r = E[mu^2] / (Var(mu) (1/R2 - 1) - E[mu]).
    """
    m1, m2 = lognormal_moments(base, sigma)
    var = m2 - m1**2
    room = var * (1.0 / target_r2 - 1.0) - m1
    if room <= 0:
        raise ScenarioError(
            f"Bayes R2 {target_r2} is out of reach: Poisson noise alone caps it at {var / (var + m1):.3f}"
        )
    return m2 / room


def bayes_r2(base: float, sigma: float, r: float) -> float:
    m1, m2 = lognormal_moments(base, sigma)
    var = m2 - m1**2
    return var / (var + m1 + m2 / r)


@dataclass
class GroundTruth:
    users: list[str]
    roster: list[str]
    blocks_received: dict[str, int]
    expected_blocks: dict[str, float]
    create_counts: dict[str, int]
    total_actions: dict[str, int]
    extreme: list[str]
    signal_groups: dict[str, list[str]]
    dispersion: float
    bayes_r2: float | None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(**d)


def domain_names() -> list[str]:
    return [f"site{k:02d}.example" for k in range(N_DOMAINS)]


def domain_tables(seed: int = 0) -> tuple[str, str]:
    """MBFC-style and quality TSV texts covering part of the synthetic domains."""
    rng = np.random.default_rng([seed, 7])
    names = domain_names()
    mbfc, quality = [], []
    for k, d in enumerate(names):
        if k % 3 != 2:
            mbfc.append(
                f"{d}\t{BIAS_LABELS[rng.integers(len(BIAS_LABELS))]}\t"
                f"{CRED_LABELS[rng.integers(len(CRED_LABELS))]}\t{FACT_LABELS[rng.integers(len(FACT_LABELS))]}\n"
            )
        if k % 4 != 3:
            quality.append(f"{d}\t{round(float(rng.uniform(0.1, 0.95)), 3)!r}\n")
    return "".join(mbfc), "".join(quality)


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class _Builder:
    """Collects raw events; ids are assigned after the final time sort."""

    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, ts, kind, action, actor, subject=None, ref=None, text=None, langs=(), urls=(), tox=None):
        self.rows.append((int(ts), len(self.rows), kind, action, actor, subject, ref, text, langs, urls, tox))

    def events(self) -> list[Event]:
        self.rows.sort(key=lambda r: (r[0], r[1]))
        return [
            Event(f"e{i:08d}", k, a, actor, ts, subj, ref, text, tuple(langs), tuple(urls), tox)
            for i, (ts, _, k, a, actor, subj, ref, text, langs, urls, tox) in enumerate(self.rows)
        ]


def _text(rng, n_words: int, caps: float, digits: float, emoji: float) -> str:
    words = []
    for w in rng.choice(len(_WORDS), size=n_words):
        word = _WORDS[w]
        u = rng.random()
        if u < caps:
            word = word.upper()
        elif u < caps * 3:
            word = word.capitalize()
        words.append(word)
        if rng.random() < digits:
            words.append(str(int(rng.integers(0, 1000))))
        if rng.random() < emoji:
            words.append(_EMOJI[rng.integers(len(_EMOJI))])
    return " ".join(words)


def _languages(rng, n: int, modal_en: bool) -> list[tuple[str, ...]]:
    out: list[tuple[str, ...]] = []
    for _ in range(n):
        u = rng.random()
        if u < 0.05:
            out.append(())
        elif modal_en:
            out.append(("en",) if u < 0.85 else (_OTHER_LANGS[rng.integers(3)],))
        else:
            out.append(("pt",) if u < 0.8 else ("en",))
    counts: dict[str, int] = {}
    for tags in out:
        for t in tags:
            counts[t] = counts.get(t, 0) + 1
    en = counts.get("en", 0)
    rival = max((c for t, c in counts.items() if t != "en"), default=0)
    # repair the rare draw that contradicts the planted roster
    i = 0
    while (modal_en and en <= rival) or (not modal_en and counts.get("pt", 0) <= en):
        if modal_en:
            out[i] = ("en",)
        else:
            out[i] = ("pt",)
        i += 1
        counts = {}
        for tags in out:
            for t in tags:
                counts[t] = counts.get(t, 0) + 1
        en = counts.get("en", 0)
        rival = max((c for t, c in counts.items() if t != "en"), default=0)
    return out


def generate(config: ScenarioConfig) -> tuple[bytes, GroundTruth]:
    """Replay NDJSON bytes plus the ground truth they were drawn from."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_users
    win = config.window
    span = win.end_us - win.start_us
    second = 1_000_000
    users = [f"user{i:05d}" for i in range(n)]

    # activity and roster
    activity = np.minimum(
        np.floor(config.activity_min * (1.0 - rng.random(n)) ** (-1.0 / config.activity_alpha)), config.activity_cap
    ).astype(np.int64)
    qualify = rng.random(n) < config.qualify_fraction
    lang_fail = ~qualify & (rng.random(n) < 0.5)
    few_posts = ~qualify & ~lang_fail
    n_posts = np.maximum(10, np.round(SHARES["post"] * activity)).astype(np.int64)
    n_posts[few_posts] = rng.integers(1, 10, size=int(few_posts.sum()))

    def jitter():
        return rng.uniform(0.5, 1.5, size=n)

    n_likes = np.round(SHARES["like"] * activity * jitter()).astype(np.int64)
    n_reposts = np.round(SHARES["repost"] * activity * jitter()).astype(np.int64)
    n_follows = np.round(SHARES["follow"] * activity * jitter()).astype(np.int64)

    # toxicity latent and blocks
    extreme = rng.random(n) < config.extreme_fraction
    g = rng.normal(0.0, 1.0, size=n) * config.tox_spread
    g[extreme] += config.extreme_shift
    tox_level = _sigmoid(-2.5 + g)
    base_activity = n_posts + n_likes + n_reposts + n_follows
    log_mu = (
        math.log(config.base_blocks)
        + config.beta_toxicity * g
        + config.beta_activity * np.log(base_activity / np.median(base_activity))
    )
    mu = np.exp(log_mu)
    r2 = None
    if config.dispersion is None:
        if config.extreme_fraction > 0 or config.beta_activity > 0:
            raise ScenarioError("analytic calibration needs extreme_fraction = 0 and beta_activity = 0")
        r = calibrate_dispersion(config.base_blocks, config.beta_toxicity * config.tox_spread, config.bayes_r2)
    else:
        r = float(config.dispersion)
    if config.extreme_fraction == 0 and config.beta_activity == 0:
        r2 = bayes_r2(config.base_blocks, config.beta_toxicity * config.tox_spread, r)
    blocks = rng.negative_binomial(r, r / (r + mu)).astype(np.int64)

    # per-user style and noise latents
    caps = rng.uniform(0.0, 0.15, size=n)
    digits = rng.uniform(0.0, 0.2, size=n)
    emoji = rng.uniform(0.0, 0.2, size=n)
    words = rng.integers(4, 25, size=n)
    url_rate = rng.gamma(1.0, 0.4, size=n)
    fav_domains = rng.integers(0, N_DOMAINS, size=(n, 3))
    other_tox = _sigmoid(-3.0 + rng.normal(0.0, 0.7, size=(n, 3)))
    domains = domain_names()
    b = _Builder()

    def ts():
        return win.start_us + int(rng.integers(0, span // second)) * second

    def later(t0):
        return t0 + int(rng.integers(0, max(1, (win.end_us - t0) // second))) * second

    # original posts and replies
    post_author: list[int] = []
    post_ids: list[str] = []
    post_ts: list[int] = []
    coupled_idx = [TOX_KEYS.index(k) for k in COUPLED_TOX]
    other_idx = [j for j in range(len(TOX_KEYS)) if j not in coupled_idx]
    for i in range(n):
        langs = _languages(rng, int(n_posts[i]), not lang_fail[i])
        for k in range(int(n_posts[i])):
            pid = f"p{len(post_ids):07d}"
            scores = np.empty(len(TOX_KEYS))
            noise = rng.normal(0.0, config.tox_noise, size=len(TOX_KEYS))
            scores[coupled_idx] = _sigmoid(_logit(tox_level[i]) + noise[coupled_idx])
            scores[other_idx] = _sigmoid(_logit(other_tox[i]) + noise[other_idx])
            tox = tuple(float(x) for x in np.clip(np.round(scores, 6), 1e-6, 1 - 1e-6))
            urls = []
            for _ in range(min(3, int(rng.poisson(url_rate[i])))):
                d = fav_domains[i, rng.integers(3)] if rng.random() < 0.7 else rng.integers(N_DOMAINS)
                host = ("www." if rng.random() < 0.3 else "") + domains[d]
                urls.append(f"https://{host}/a/{int(rng.integers(0, 10**6))}")
            text = _text(rng, int(words[i]), caps[i], digits[i], emoji[i])
            t = ts()
            if post_ids and rng.random() < REPLY_FRACTION:
                parent = int(rng.integers(len(post_ids)))
                if post_author[parent] != i:
                    b.add(t, "reply", "create", users[i], users[post_author[parent]], post_ids[parent], text, langs[k], urls, tox)
                    post_author.append(i)
                    post_ids.append(pid)
                    post_ts.append(t)
                    continue
            b.add(t, "post", "create", users[i], None, pid, text, langs[k], urls, tox)
            post_author.append(i)
            post_ids.append(pid)
            post_ts.append(t)
            if rng.random() < 0.03:
                b.add(later(t), "post", "delete", users[i], None, pid)
    authors = np.array(post_author, dtype=np.int64)

    # likes and reposts on other users' posts
    for kind, counts in (("like", n_likes), ("repost", n_reposts)):
        for i in range(n):
            for _ in range(int(counts[i])):
                j = int(rng.integers(len(post_ids)))
                if authors[j] == i:
                    continue
                t = ts()
                b.add(t, kind, "create", users[i], users[authors[j]], post_ids[j])
                if kind == "like" and rng.random() < 0.03:
                    b.add(later(t), kind, "delete", users[i], None, post_ids[j])

    # follows by preferential attachment
    urn: list[int] = []
    for i in rng.permutation(n).tolist():
        for _ in range(int(n_follows[i])):
            j = urn[int(rng.integers(len(urn)))] if urn and rng.random() < 0.7 else int(rng.integers(n))
            if j == i:
                continue
            urn.append(j)
            t = ts()
            b.add(t, "follow", "create", users[i], users[j])
            if rng.random() < 0.02:
                b.add(later(t), "follow", "delete", users[i], users[j])

    # blocks received, from distinct random blockers
    for i in range(n):
        k = int(blocks[i])
        if k == 0:
            continue
        pick = rng.choice(n - 1, size=k, replace=k > n - 1)
        for j in pick.tolist():
            blocker = j + (j >= i)
            t = ts()
            b.add(t, "block", "create", users[blocker], users[i])
            if rng.random() < 0.05:
                b.add(later(t), "block", "delete", users[blocker], users[i])

    events = b.events()
    replay = "".join(e.to_json() + "\n" for e in events).encode("utf-8")

    create_counts = {k: 0 for k in ("post", "reply", "repost", "like", "follow", "block")}
    actions = np.zeros(n, dtype=np.int64)
    index = {u: i for i, u in enumerate(users)}
    received = np.zeros(n, dtype=np.int64)
    for e in events:
        if e.action == "create":
            create_counts[e.kind] += 1
            actions[index[e.actor]] += 1
            if e.kind == "block":
                received[index[e.subject_user]] += 1
    assert np.array_equal(received, blocks)
    signal: dict[str, list[str]] = {}
    if config.beta_toxicity > 0:
        signal["Posts"] = [f"tox_{k}_mean" for k in COUPLED_TOX]
    if config.beta_activity > 0:
        signal["Action"] = ["posts_created", "likes_created", "reposts_created", "follows_created"]
    truth = GroundTruth(
        users=users,
        roster=[u for u, q in zip(users, qualify) if q],
        blocks_received={u: int(c) for u, c in zip(users, blocks)},
        expected_blocks={u: float(m) for u, m in zip(users, mu)},
        create_counts=create_counts,
        total_actions={u: int(a) for u, a in zip(users, actions)},
        extreme=[u for u, x in zip(users, extreme) if x],
        signal_groups=signal,
        dispersion=r,
        bayes_r2=r2,
        config=asdict(config),
    )
    return replay, truth
