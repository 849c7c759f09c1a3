"""Coverage judge: is a summary grounded in the item body rather than its title/metadata?"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

from ..tools import Corpus, CorpusItem

MIN_RUN_WORDS = 4
REVIEWS_DIR = "artifacts/reviews"


@dataclass(frozen=True)
class GroundednessJudgment:
    item_id: str
    summary_present: bool
    grounded: bool
    evidence_span: str = ""


def _norm(text: str) -> str:
    return " " + " ".join(text.casefold().split()) + " "


def _meta_strings(item: CorpusItem) -> list[str]:
    out = [item.id, item.title]

    def walk(v):
        if isinstance(v, dict):
            for x in v.values():
                walk(x)
        elif isinstance(v, (list, tuple)):
            for x in v:
                walk(x)
        else:
            out.append(str(v))

    walk(item.metadata)
    return out


def judge_grounded(summary: str, item: CorpusItem, min_present: int = 1) -> GroundednessJudgment:
    """Grounded iff some run of >= 4 words is in the body but in no title/metadata field.

    Matching is case-folded over whitespace-separated words.  The evidence
    span is the longest body-matching run at the earliest qualifying start.
    """
    words = (summary or "").split()
    present = len(" ".join(words)) >= max(min_present, 1)
    if not present:
        return GroundednessJudgment(item.id, False, False)
    folded = [w.casefold() for w in words]
    body = _norm(item.body)
    excluded = [_norm(s) for s in _meta_strings(item)]

    def in_body(i: int, j: int) -> bool:
        return " " + " ".join(folded[i:j]) + " " in body

    for i in range(len(folded) - MIN_RUN_WORDS + 1):
        j = i + MIN_RUN_WORDS
        if not in_body(i, j):
            continue
        while j < len(folded) and in_body(i, j + 1):
            j += 1
        run = " " + " ".join(folded[i:j]) + " "
        if not any(run in ex for ex in excluded):
            return GroundednessJudgment(item.id, True, True, " ".join(words[i:j]))
    return GroundednessJudgment(item.id, True, False)


_SUMMARY = re.compile(r"^Summary:[ \t]*(.*?)(?=^Relevance:|\Z)", re.S | re.M)
_RELEVANCE = re.compile(r"^Relevance:[ \t]*(\d+)", re.M)


def review_path(item_id: str) -> str:
    return f"{REVIEWS_DIR}/{item_id}.md"


def render_review(summary: str, relevance: int) -> str:
    return f"Summary: {summary}\nRelevance: {relevance}\n"


def parse_review(text: str) -> tuple[str, int | None]:
    """Return (summary, relevance) from the two-field review layout."""
    m = _SUMMARY.search(text)
    summary = m.group(1).strip() if m else ""
    r = _RELEVANCE.search(text)
    return summary, int(r.group(1)) if r else None


def judge_workspace(task_dir: str | os.PathLike, corpus: Corpus,
                    min_present: int = 1) -> list[GroundednessJudgment]:
    """Judge every corpus item against its review file in a task directory."""
    base = Path(task_dir)
    out = []
    for item in corpus.items():
        p = base / review_path(item.id)
        text = p.read_text(encoding="utf-8", errors="replace") if p.is_file() else ""
        summary, _ = parse_review(text)
        out.append(judge_grounded(summary, item, min_present))
    return out


def coverage(judgments: list[GroundednessJudgment]) -> int:
    return sum(j.grounded for j in judgments)
