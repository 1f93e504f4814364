"""Per-post text metrics, categorical entropy and URL domains."""

from __future__ import annotations

import math
from collections import Counter
from typing import Hashable, Iterable
from urllib.parse import urlsplit

import regex

TEXT_METRICS = ("chars", "lowercase", "uppercase", "digits", "spaces", "emojis")

_PICTO = regex.compile(r"\p{Extended_Pictographic}")
_ALMOST_ONE = math.nextafter(1.0, 0.0)


def post_metrics(text: str) -> tuple[int, int, int, int, int, int]:
    """Character-class counts for one post, in ``TEXT_METRICS`` order.

    ``chars`` counts UTF-16 code units, so an astral-plane emoji counts twice
    there but once in ``emojis``.

    >>> post_metrics("Ab1 \\U0001F389")
    (6, 1, 1, 1, 1, 1)
    """
    chars = len(text.encode("utf-16-le")) // 2
    lower = sum(map(str.islower, text))
    upper = sum(map(str.isupper, text))
    digits = sum(map(str.isdigit, text))
    spaces = sum(map(str.isspace, text))
    emojis = len(_PICTO.findall(text))
    return chars, lower, upper, digits, spaces, emojis


def normalized_entropy(values: Iterable[Hashable]) -> float:
    """Shannon entropy of the empirical distribution divided by ``log k``.

    ``k`` is the number of distinct observed values. Returns 0 for empty or
    single-category samples and exactly 1 only for uniform counts.
    """
    counts = Counter(values)
    return entropy_from_counts(list(counts.values()))


def entropy_from_counts(counts) -> float:
    counts = [c for c in counts if c > 0]
    k = len(counts)
    if k < 2:
        return 0.0
    if all(c == counts[0] for c in counts):
        return 1.0
    total = float(sum(counts))
    h = -sum((c / total) * math.log(c / total) for c in counts)
    return min(max(h / math.log(k), 0.0), _ALMOST_ONE)


def registrable_domain(url: str) -> str | None:
    """Lowercased hostname with a leading ``www.`` removed, or None."""
    url = url.strip()
    if not url:
        return None
    if "://" not in url:
        url = "http://" + url
    try:
        host = urlsplit(url).hostname
    except ValueError:
        return None
    if not host:
        return None
    host = host.rstrip(".")
    if host.startswith("www."):
        host = host[4:]
    return host or None


def primary_language(tag: str) -> str:
    """``en-US`` -> ``en``."""
    return tag.strip().replace("_", "-").split("-", 1)[0].lower()
