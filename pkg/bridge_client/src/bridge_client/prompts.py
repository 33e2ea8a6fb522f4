"""Parser for the newline-delimited prompt records carried in PROMPTS frames.

Each line is ``kind polarity axis slice voxels``; voxels are ``;``-joined
``i,j,k`` triples and ``-`` marks inapplicable fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class PromptParseError(Exception):
    pass


@dataclass
class ParsedPrompts:
    positive_voxels: list[tuple[int, int, int]] = field(default_factory=list)
    negative_voxels: list[tuple[int, int, int]] = field(default_factory=list)
    box: tuple[tuple[int, int, int], tuple[int, int, int]] | None = None


def _voxel(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise PromptParseError(f"bad voxel triple {text!r}")
    return (int(parts[0]), int(parts[1]), int(parts[2]))


def parse_prompts(text: str) -> ParsedPrompts:
    out = ParsedPrompts()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) != 5:
            raise PromptParseError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        kind, polarity, _axis, _slice, voxels = parts
        if kind == "box":
            lo, sep, hi = voxels.partition(";")
            if not sep:
                raise PromptParseError(f"line {lineno}: box needs two corners")
            out.box = (_voxel(lo), _voxel(hi))
            continue
        if kind not in ("point", "scribble"):
            raise PromptParseError(f"line {lineno}: unknown kind {kind!r}")
        if polarity not in ("positive", "negative"):
            raise PromptParseError(f"line {lineno}: unknown polarity {polarity!r}")
        target = (out.positive_voxels if polarity == "positive"
                  else out.negative_voxels)
        target.extend(_voxel(v) for v in voxels.split(";"))
    return out
