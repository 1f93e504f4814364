"""Media-source lookups keyed by registrable domain."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .text import registrable_domain

BIAS = (
    "extreme_left",
    "left",
    "center_left",
    "center_right",
    "right",
    "extreme_right",
    "satire",
    "conspiracy",
    "pro_science",
)
CREDIBILITY = ("low", "medium", "high")
FACTUALITY = ("very_low", "low", "medium", "mostly", "high", "very_high", "mixed")

MBFC_COLUMNS = (
    tuple(f"bias_{b}" for b in BIAS)
    + tuple(f"credibility_{c}" for c in CREDIBILITY)
    + tuple(f"factuality_{f}" for f in FACTUALITY)
)


class DomainLookupError(ValueError):
    pass


def _label(text: str, allowed: tuple[str, ...], what: str) -> str:
    key = text.strip().lower().replace("-", "_").replace(" ", "_")
    if key not in allowed:
        raise DomainLookupError(f"unknown {what} category {text!r}")
    return key


@dataclass(frozen=True)
class MBFCRating:
    bias: str
    credibility: str
    factuality: str

    def columns(self) -> tuple[str, str, str]:
        return (f"bias_{self.bias}", f"credibility_{self.credibility}", f"factuality_{self.factuality}")


@dataclass(frozen=True)
class DomainLookup:
    mbfc: dict[str, MBFCRating] = field(default_factory=dict)
    quality: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_tsv(cls, mbfc_text: str = "", quality_text: str = "") -> "DomainLookup":
        mbfc = {}
        for lineno, line in enumerate(mbfc_text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DomainLookupError(f"mbfc line {lineno}: expected 4 tab-separated fields")
            dom = registrable_domain(parts[0])
            if dom is None:
                raise DomainLookupError(f"mbfc line {lineno}: bad domain {parts[0]!r}")
            mbfc[dom] = MBFCRating(
                _label(parts[1], BIAS, "bias"),
                _label(parts[2], CREDIBILITY, "credibility"),
                _label(parts[3], FACTUALITY, "factuality"),
            )
        quality = {}
        for lineno, line in enumerate(quality_text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DomainLookupError(f"quality line {lineno}: expected domain<TAB>score")
            dom = registrable_domain(parts[0])
            score = float(parts[1])
            if dom is None or not (0.0 <= score <= 1.0):
                raise DomainLookupError(f"quality line {lineno}: bad entry")
            quality[dom] = score
        return cls(mbfc, quality)

    @classmethod
    def load(cls, mbfc_path: str | os.PathLike | None, quality_path: str | os.PathLike | None):
        def read(p):
            if p is None:
                return ""
            with open(p, encoding="utf-8") as fh:
                return fh.read()

        return cls.from_tsv(read(mbfc_path), read(quality_path))

    def mbfc_tsv(self) -> str:
        return "".join(
            f"{d}\t{r.bias}\t{r.credibility}\t{r.factuality}\n" for d, r in sorted(self.mbfc.items())
        )

    def quality_tsv(self) -> str:
        return "".join(f"{d}\t{s!r}\n" for d, s in sorted(self.quality.items()))
