"""Per-post toxicity scores: sidecar values or a pluggable scorer."""

from __future__ import annotations

import math
import re
from typing import Protocol, Sequence

import numpy as np

from ..events import TOX_KEYS, Event


class MissingToxicityError(ValueError):
    """A post has no sidecar toxicity scores."""


class ToxicityScorer(Protocol):
    def score(self, texts: Sequence[str]) -> np.ndarray:
        """Return an ``(n, 7)`` array of scores in (0, 1), columns in ``TOX_KEYS`` order."""
        ...


_TOKEN = re.compile(r"[\w']+", re.UNICODE)

# Small illustrative term lists; swap in a real model through ToxicityScorer.
_LEXICON = {
    "identity_attack": ("those people", "go back", "subhuman", "vermin"),
    "insult": ("idiot", "stupid", "moron", "loser", "dumb", "pathetic", "clown", "fool"),
    "obscene": ("damn", "crap", "hell", "bloody", "screw"),
    "threat": ("kill", "hurt", "destroy", "attack", "burn", "punch"),
    "sexually_explicit": ("nsfw", "nude", "explicit", "xxx"),
}


class LexiconScorer:
    """Term-density scorer squashed into (0, 1).

    ``score = sigmoid(offset + slope * matched_terms / tokens)``; ``toxicity``
    uses every list, ``severe_toxicity`` needs two distinct dimensions to fire.
    """

    def __init__(self, lexicon: dict[str, Sequence[str]] | None = None, offset: float = -4.0, slope: float = 25.0):
        self.lexicon = {k: tuple(v) for k, v in (lexicon or _LEXICON).items()}
        self.offset = offset
        self.slope = slope

    def _hits(self, lowered: str, tokens: list[str], terms: Sequence[str]) -> int:
        n = 0
        for t in terms:
            if " " in t:
                n += lowered.count(t)
            else:
                n += tokens.count(t)
        return n

    def score(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), len(TOX_KEYS)))
        for i, text in enumerate(texts):
            lowered = text.lower()
            tokens = _TOKEN.findall(lowered)
            denom = max(len(tokens), 1)
            hits = {k: self._hits(lowered, tokens, v) for k, v in self.lexicon.items()}
            dens = {k: h / denom for k, h in hits.items()}
            dens["toxicity"] = sum(hits.values()) / denom
            fired = sum(1 for h in hits.values() if h)
            dens["severe_toxicity"] = dens["toxicity"] if fired >= 2 else 0.0
            for j, key in enumerate(TOX_KEYS):
                out[i, j] = _sigmoid(self.offset + self.slope * dens.get(key, 0.0))
        return out


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def sidecar_scores(posts: Sequence[Event]) -> np.ndarray:
    out = np.empty((len(posts), len(TOX_KEYS)))
    for i, ev in enumerate(posts):
        if ev.tox is None:
            raise MissingToxicityError(f"post {ev.event_id!r} by {ev.actor!r} has no toxicity scores")
        out[i] = ev.tox
    return out


def score_posts(posts: Sequence[Event], mode: str = "sidecar", scorer: ToxicityScorer | None = None) -> np.ndarray:
    """Toxicity matrix for original posts, rows aligned with ``posts``."""
    if mode == "sidecar":
        return sidecar_scores(posts)
    if mode == "lexicon":
        scorer = scorer or LexiconScorer()
        return np.asarray(scorer.score([ev.text or "" for ev in posts]), dtype=float)
    raise ValueError(f"unknown toxicity mode {mode!r}")
