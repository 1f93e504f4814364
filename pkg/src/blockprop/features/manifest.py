"""Feature registry: ordered (name, group, description) entries."""

from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources

GROUPS = ("Action", "Derived", "Posts", "Domain", "Graph")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    group: str
    description: str = ""


@dataclass(frozen=True)
class FeatureManifest:
    entries: tuple[FeatureSpec, ...]
    version: str = "unversioned"

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ManifestError(f"duplicate feature names: {dup}")
        for e in self.entries:
            if e.group not in GROUPS:
                raise ManifestError(f"{e.name}: unknown group {e.group!r}")
        missing = [g for g in GROUPS if not any(e.group == g for e in self.entries)]
        if missing:
            raise ManifestError(f"empty feature groups: {missing}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    @property
    def groups(self) -> tuple[str, ...]:
        return tuple(e.group for e in self.entries)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def group_of(self, name: str) -> str:
        return self.entries[self.index(name)].group

    def members(self, group: str) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries if e.group == group)

    def to_tsv(self) -> str:
        lines = [f"# version: {self.version}"]
        lines += [f"{e.name}\t{e.group}\t{e.description}" for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "FeatureManifest":
        version = "unversioned"
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                if key.strip() == "version":
                    version = val.strip()
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ManifestError(f"line {lineno}: expected name<TAB>group<TAB>description")
            entries.append(FeatureSpec(parts[0].strip(), parts[1].strip(), "\t".join(parts[2:]).strip()))
        return cls(tuple(entries), version)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FeatureManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_tsv(fh.read())


def default_manifest() -> FeatureManifest:
    text = resources.files(__package__).joinpath("default_manifest.tsv").read_text(encoding="utf-8")
    return FeatureManifest.from_tsv(text)
