"""Seeded synthetic research-article corpus with planted, checkable facts.

Bodies are pseudo-words over a reduced alphabet (no c, f, p, w) so the planted
"Finding: ..." sentences and query keywords never occur by accident.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass
from pathlib import Path

from ..errors import ParameterError
from ..tools import Corpus

MIN_BODY_CHARS = 20_000
PLANTED_PER_ITEM = 3

_SYLLABLES = [c + v for c in "bdghklmnrstvz" for v in "aeiou"]
_TITLE_ADJ = ["Adaptive", "Sparse", "Robust", "Scalable", "Latent", "Hierarchical", "Causal",
              "Efficient", "Bayesian", "Contrastive", "Modular", "Stochastic", "Federated",
              "Recurrent", "Symbolic", "Neural"]
_TITLE_NOUN = ["Attention", "Planning", "Retrieval", "Memory", "Agents", "Graphs", "Transformers",
               "Reasoning", "Embeddings", "Optimization", "Inference", "Benchmarks", "Sampling",
               "Alignment", "Compression", "Search"]
_TITLE_TAIL = ["Long Documents", "Tool Use", "Scientific Text", "Open Domains", "Multi-Step Tasks",
               "Code Generation", "Dialogue", "Knowledge Bases", "Structured Data", "Robotics"]
_SURNAMES = ["Okafor", "Lindqvist", "Tanaka", "Moreau", "Haddad", "Kowalski", "Reyes", "Ivanova",
             "Mensah", "Larsen", "Quispe", "Novak", "Sato", "Abebe", "Keller", "Duarte"]
_VENUES = ["Workshop on Agents", "Conference on Learning", "Symposium on Text", "Journal of Systems"]
_VERBS = ["rose by", "fell by", "shifted by", "settled near"]
_UNITS = ["percent", "units", "points"]


@dataclass(frozen=True)
class SyntheticItem:
    id: str
    title: str
    metadata: dict
    body: str
    planted: tuple[str, ...]


def _word(rng: random.Random, lo: int = 2, hi: int = 4) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(lo, hi)))


def _sentence(rng: random.Random) -> str:
    words = [_word(rng) for _ in range(rng.randint(8, 16))]
    return words[0].capitalize() + " " + " ".join(words[1:]) + "."


def _planted(rng: random.Random, seen: set[str]) -> str:
    while True:
        s = (f"Finding: the {_word(rng, 2, 3)} {_word(rng, 2, 3)} "
             f"{rng.choice(_VERBS)} {rng.randint(11, 97)} {rng.choice(_UNITS)}.")
        if s not in seen:
            seen.add(s)
            return s


def generate_items(n: int, seed: int) -> list[SyntheticItem]:
    if n < 1:
        raise ParameterError("corpus needs at least one item")
    rng = random.Random(seed)
    seen: set[str] = set()
    items = []
    for i in range(n):
        item_id = f"item-{i:03d}"
        title = (f"{rng.choice(_TITLE_ADJ)} {rng.choice(_TITLE_NOUN)} for "
                 f"{rng.choice(_TITLE_TAIL)}")
        metadata = {
            "authors": [f"{chr(65 + rng.randrange(26))}. {rng.choice(_SURNAMES)}"
                        for _ in range(rng.randint(1, 4))],
            "year": rng.randint(2015, 2025),
            "venue": rng.choice(_VENUES),
        }
        sentences: list[str] = []
        size = 0
        while size < MIN_BODY_CHARS + 200:
            s = _sentence(rng)
            sentences.append(s)
            size += len(s) + 1
        planted = tuple(_planted(rng, seen) for _ in range(PLANTED_PER_ITEM))
        # spread facts over the body, never adjacent
        slots = sorted(rng.sample(range(1, len(sentences) // 2), PLANTED_PER_ITEM))
        slots = [2 * s for s in slots]
        for offset, (slot, fact) in enumerate(zip(slots, planted)):
            sentences.insert(slot + offset, fact)
        paragraphs = [" ".join(sentences[j:j + 7]) for j in range(0, len(sentences), 7)]
        items.append(SyntheticItem(item_id, title, metadata, "\n\n".join(paragraphs), planted))
    return items


def write_corpus(root: str | os.PathLike, items: list[SyntheticItem]) -> Corpus:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for item in items:
        d = root / item.id
        d.mkdir(exist_ok=True)
        meta = {"id": item.id, "title": item.title, "metadata": item.metadata}
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
        (d / "body.txt").write_text(item.body, encoding="utf-8")
    return Corpus(root)


def generate_corpus(root: str | os.PathLike, n: int, seed: int) -> Corpus:
    """Write ``n`` seeded items under ``root`` in the corpus directory format."""
    return write_corpus(root, generate_items(n, seed))
