"""Long-horizon literature-review protocol: repeated runs scored by coverage.

The scripted mock below plays every role from the request text alone: the
alpha agent finds the next unreviewed item, a reviewer reads it through
``answer_from_document`` and writes the review file, and the isolated reader
extracts sentences that match the query.  It has no other channel to the
workspace, so what it can do depends only on what the context shows it.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
import re
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

from ..backend import (
    SESSION_CONSOLIDATION,
    SESSION_READER,
    LLMBackend,
    LLMRequest,
    MockBackend,
    MockPolicy,
)
from ..context import ConsolidationPolicy
from ..errors import ParameterError
from ..hierarchy import AgentOutcome, AgentSpec, Engine, EngineConfig, Level, render_directive
from ..tools import Corpus
from ..workspace import Workspace
from .corpus import generate_corpus
from .judge import GroundednessJudgment, coverage, judge_workspace, render_review, review_path

logger = logging.getLogger(__name__)

REVIEWER_ROLE = "ROLE: reviewer."
ALPHA_ROLE = "ROLE: alpha."
READ_QUERY = "What findings does this document report?"

_STOP = {"what", "which", "does", "this", "that", "with", "from", "have", "there", "their",
         "about", "document", "report", "reports", "reported", "paper"}
_THOUGHT_WORDS = ["considering", "next", "step", "state", "listing", "order", "now", "then",
                  "check", "continue", "ok", "remaining", "so", "fine"]


@dataclass
class LitReviewConfig:
    n_items: int = 80
    runs: int = 10
    mode: str = "file_centric"
    seed: int = 42
    per_item_summary_min: int = 1
    context_limit: int = 16_384
    context_budget: int = 8192
    k: int = 10
    consolidation_interval: int = 25
    verbose_contexts: bool = False
    fsync: bool = False
    on_overflow: str = "truncate_head"

    def __post_init__(self):
        if self.n_items < 1 or self.runs < 1:
            raise ParameterError("n_items and runs must be >= 1")


def litreview_hierarchy(budget: int = 8192) -> list[AgentSpec]:
    return [
        AgentSpec(
            "alpha", Level.ALPHA,
            f"{ALPHA_ROLE} You coordinate a literature review. Delegate one item at a time "
            "to the reviewer and finish once every item has a review file.",
            frozenset({"reviewer", "list_dir"}), context_budget=budget,
        ),
        AgentSpec(
            "reviewer", Level.DOMAIN,
            f"{REVIEWER_ROLE} Review one item: read it with answer_from_document (never load "
            "the document itself), then write artifacts/reviews/<item_id>.md containing a "
            "'Summary:' line grounded in the content and a 'Relevance:' line with a score 1-5.",
            frozenset({"answer_from_document", "write_file", "read_file", "list_dir"}),
            context_budget=budget,
        ),
    ]


def litreview_objective(item_ids: list[str]) -> str:
    return (
        "Literature review over the listed items. For every item: (i) read it, (ii) produce "
        "a short summary, (iii) assign a relevance score from 1 to 5. Each review goes to "
        "artifacts/reviews/<item_id>.md with a 'Summary:' line and a 'Relevance:' line.\n"
        "ITEMS: " + " ".join(item_ids)
    )


# -- scripted mock -------------------------------------------------------------

def _rng_for(seed: int, req: LLMRequest) -> random.Random:
    h = hashlib.sha256(f"{seed}|{len(req.messages)}|{req.latest_user}".encode()).digest()
    return random.Random(int.from_bytes(h[:8], "big"))


def _keywords(query: str) -> list[str]:
    words = re.findall(r"[a-z0-9]+", query.lower())
    return [w[:5] for w in words if len(w) >= 4 and w not in _STOP]


def _sentences(text: str) -> list[str]:
    return [s for s in re.split(r"(?<=[.!?])\s+", text.strip()) if s]


def extractive_reader(req: LLMRequest) -> str:
    """Reader/reducer mock: quote sentences containing a query keyword prefix."""
    user = req.latest_user
    q = re.search(r"^QUERY: (.*)$", user, re.M)
    query = q.group(1) if q else ""
    if "\nFINDINGS:\n" in user:
        found: list[str] = []
        for line in user.split("\nFINDINGS:\n", 1)[1].splitlines():
            body = re.sub(r"^\[\d+\]\s*", "", line).strip()
            if body and body != "NONE":
                for s in _sentences(body):
                    if s not in found:
                        found.append(s)
        return " ".join(found) if found else "NOT FOUND"
    m = re.search(r"^EXCERPT (\d+)/(\d+):\n", user, re.M)
    if not m:
        return "NONE"
    idx, total = int(m.group(1)), int(m.group(2))
    pieces = _sentences(user[m.end():])
    # edge pieces may be cut mid-sentence; overlap guarantees they recur whole elsewhere
    lo = 0 if idx == 1 else 1
    hi = len(pieces) if idx == total else len(pieces) - 1
    keys = _keywords(query)
    hits = [s for s in pieces[lo:hi] if any(k in s.lower() for k in keys)]
    return " ".join(hits) if hits else "NONE"


class LitReviewScript:
    """Deterministic role-playing policy for the literature-review task.

    Replies carry a seeded free-text ``thought`` of varying length, standing in
    for sampling noise; it never reaches a bounded context but does grow a
    full-history one.
    """

    def __init__(self, seed: int = 0, thought_chars: tuple[int, int] = (40, 600)):
        self.seed = seed
        self.thought_chars = thought_chars

    def __call__(self, req: LLMRequest) -> str:
        if req.session_tag == SESSION_READER:
            return extractive_reader(req)
        text = req.text()
        if req.session_tag == SESSION_CONSOLIDATION:
            n = len(set(re.findall(r"artifacts/reviews/(item-\d+)\.md", text)))
            return f"PROGRESS: {n} review files visible in the workspace listing."
        rng = _rng_for(self.seed, req)
        if any(m.role == "system" and REVIEWER_ROLE in m.content for m in req.messages):
            return self._reviewer(text, rng)
        return self._alpha(text, rng)

    def _thought(self, rng: random.Random) -> str:
        target = rng.randint(*self.thought_chars)
        words: list[str] = []
        size = 0
        while size < target:
            w = rng.choice(_THOUGHT_WORDS)
            words.append(w)
            size += len(w) + 1
        return " ".join(words)

    def _reply(self, rng: random.Random, obj: dict) -> str:
        return render_directive({"thought": self._thought(rng), **obj})

    def _alpha(self, text: str, rng: random.Random) -> str:
        lists = re.findall(r"^ITEMS: (.*)$", text, re.M)
        if not lists:
            return self._reply(rng, {"action": "finish",
                                     "final_answer": "item list no longer in context; stopping"})
        items = re.findall(r"item-\d+", lists[-1])
        pending = [i for i in items if review_path(i) not in text]
        if not pending:
            return self._reply(rng, {"action": "finish",
                                     "final_answer": f"all {len(items)} items reviewed"})
        nxt = pending[0]
        return self._reply(rng, {"action": "tool", "tool": "reviewer",
                                 "args": {"objective": f"REVIEW {nxt}: read it, summarize it, "
                                                       "score its relevance."}})

    def _reviewer(self, text: str, rng: random.Random) -> str:
        m = re.search(r"REVIEW (item-\d+)", text)
        if not m:
            return self._reply(rng, {"action": "finish", "final_answer": "no item assigned"})
        item = m.group(1)
        path = review_path(item)
        if f"wrote {path}" in text:
            return self._reply(rng, {"action": "finish",
                                     "final_answer": f"Reviewed {item}; wrote {path}"})
        ans = re.search(rf"answer_from_document {item} \(\d+ chunks\): ([^\n]*)", text)
        if ans:
            summary = ans.group(1).strip().rstrip("…").strip()
            relevance = 1 + int(hashlib.sha256(item.encode()).hexdigest(), 16) % 5
            return self._reply(rng, {"action": "tool", "tool": "write_file",
                                     "args": {"path": path,
                                              "content": render_review(summary, relevance)}})
        return self._reply(rng, {"action": "tool", "tool": "answer_from_document",
                                 "args": {"source": "corpus_item", "id": item,
                                          "query": READ_QUERY}})


def litreview_mock(seed: int, context_limit: int = 16_384,
                   on_overflow: str = "truncate_head") -> MockBackend:
    return MockBackend(MockPolicy(context_limit=context_limit, on_overflow=on_overflow,
                                  default=LitReviewScript(seed)))


# -- runs ----------------------------------------------------------------------

@dataclass
class RunResult:
    run_index: int
    seed: int
    coverage: int
    judgments: list[GroundednessJudgment]
    outcome: AgentOutcome | None
    crash: str | None
    task_dir: Path
    overflows: int = 0


@dataclass
class CoverageReport:
    mode: str
    model: str
    config: dict
    runs: list[RunResult] = field(default_factory=list)

    @property
    def per_run_coverage(self) -> list[int]:
        return [r.coverage for r in self.runs]

    @property
    def max(self) -> int:
        return max(self.per_run_coverage)

    @property
    def min(self) -> int:
        return min(self.per_run_coverage)

    @property
    def avg(self) -> Fraction:
        cov = self.per_run_coverage
        return Fraction(sum(cov), len(cov))

    @property
    def variance(self) -> float:
        return statistics.pvariance(self.per_run_coverage)


BackendFactory = Callable[[int], LLMBackend]


def _engine_config(cfg: LitReviewConfig, mode: str) -> EngineConfig:
    return EngineConfig(k=cfg.k, consolidation=ConsolidationPolicy(cfg.consolidation_interval),
                        mode=mode, verbose_contexts=cfg.verbose_contexts)


def ensure_corpus(cfg: LitReviewConfig, corpus_dir: str | os.PathLike) -> Corpus:
    corpus = Corpus(corpus_dir)
    if len(corpus) != cfg.n_items:
        corpus = generate_corpus(corpus_dir, cfg.n_items, cfg.seed)
    return corpus


def run_once(cfg: LitReviewConfig, run_index: int, corpus: Corpus, out_root: str | os.PathLike,
             backend_factory: BackendFactory | None = None, *, mode: str | None = None,
             hierarchy: list[AgentSpec] | None = None) -> RunResult:
    """One run in a fresh workspace; a crash is recorded and the workspace scored as-is."""
    mode = mode or cfg.mode
    seed = cfg.seed + run_index
    factory = backend_factory or (lambda s: litreview_mock(s, cfg.context_limit, cfg.on_overflow))
    backend = factory(seed)
    ws = Workspace.init(out_root, f"{mode}-run{run_index:02d}", fsync=cfg.fsync)
    engine = Engine(ws, hierarchy or litreview_hierarchy(cfg.context_budget), backend,
                    corpus=corpus, config=_engine_config(cfg, mode))
    outcome, crash = None, None
    try:
        outcome = engine.run(litreview_objective(corpus.ids()))
    except Exception as exc:  # scored as partial coverage
        logger.warning("run %d crashed: %r", run_index, exc)
        crash = repr(exc)
    judgments = judge_workspace(ws.task_dir, corpus, cfg.per_item_summary_min)
    return RunResult(run_index, seed, coverage(judgments), judgments, outcome, crash,
                     ws.task_dir, getattr(backend, "overflows", 0))


class SimulatedCrash(BaseException):
    """Stands in for the process dying; not an Exception so nothing swallows it."""


class CrashingBackend:
    """Delegates to ``inner`` and dies on call number ``crash_at`` (1-based)."""

    def __init__(self, inner: LLMBackend, crash_at: int):
        self.inner = inner
        self.crash_at = crash_at
        self.calls = 0

    def complete(self, request: LLMRequest):
        self.calls += 1
        if self.calls >= self.crash_at:
            raise SimulatedCrash(f"killed at backend call {self.calls}")
        return self.inner.complete(request)


def interrupted_run(cfg: LitReviewConfig, run_index: int, corpus: Corpus,
                    out_root: str | os.PathLike, crash_at: int, *,
                    mode: str | None = None) -> RunResult:
    """Run until backend call ``crash_at``, then resume in a fresh engine and finish."""
    mode = mode or cfg.mode
    seed = cfg.seed + run_index
    ws = Workspace.init(out_root, f"{mode}-run{run_index:02d}-crash{crash_at}", fsync=cfg.fsync)
    engine = Engine(ws, litreview_hierarchy(cfg.context_budget),
                    CrashingBackend(litreview_mock(seed, cfg.context_limit, cfg.on_overflow),
                                    crash_at),
                    corpus=corpus, config=_engine_config(cfg, mode))
    try:
        engine.run(litreview_objective(corpus.ids()))
    except SimulatedCrash:
        pass
    res = resume_once(cfg, ws.task_dir, corpus,
                      litreview_mock(seed, cfg.context_limit, cfg.on_overflow))
    return RunResult(run_index, seed, res.coverage, res.judgments, res.outcome,
                     None, res.task_dir)


def resume_once(cfg: LitReviewConfig, task_dir: str | os.PathLike, corpus: Corpus,
                backend: LLMBackend, *, hierarchy: list[AgentSpec] | None = None) -> RunResult:
    """Resume an interrupted run from its workspace and score it."""
    task_dir = Path(task_dir)
    ws = Workspace.resume(task_dir.parent, task_dir.name, fsync=cfg.fsync)
    meta = Engine.read_meta(ws) or {}
    engine = Engine(ws, hierarchy or litreview_hierarchy(cfg.context_budget), backend,
                    corpus=corpus, config=_engine_config(cfg, meta.get("mode", cfg.mode)))
    outcome = engine.resume()
    judgments = judge_workspace(ws.task_dir, corpus, cfg.per_item_summary_min)
    return RunResult(-1, -1, coverage(judgments), judgments, outcome, None, ws.task_dir)


def run_litreview(cfg: LitReviewConfig, out_dir: str | os.PathLike,
                  backend_factory: BackendFactory | None = None, *,
                  corpus: Corpus | None = None, mode: str | None = None,
                  hierarchy: list[AgentSpec] | None = None, model: str = "mock") -> CoverageReport:
    """Run ``cfg.runs`` independent runs and aggregate their coverage."""
    mode = mode or cfg.mode
    out_dir = Path(out_dir)
    corpus = corpus or ensure_corpus(cfg, out_dir / "corpus")
    report = CoverageReport(mode, model, {**vars(cfg), "mode": mode})
    for r in range(cfg.runs):
        res = run_once(cfg, r, corpus, out_dir / "runs", backend_factory, mode=mode,
                       hierarchy=hierarchy)
        logger.info("%s run %d: coverage %d", mode, r, res.coverage)
        report.runs.append(res)
    return report


@dataclass
class AblationReport:
    file_centric: CoverageReport
    compressed_context: CoverageReport

    @property
    def gap(self) -> Fraction:
        return self.file_centric.avg - self.compressed_context.avg


def run_ablation_pair(cfg: LitReviewConfig, out_dir: str | os.PathLike,
                      backend_factory: BackendFactory | None = None, *,
                      hierarchy: list[AgentSpec] | None = None,
                      model: str = "mock") -> AblationReport:
    """Both modes over identical seeds and corpus."""
    if cfg.runs < 3:
        raise ParameterError("an ablation pair needs runs >= 3")
    out_dir = Path(out_dir)
    corpus = ensure_corpus(cfg, out_dir / "corpus")
    fc = run_litreview(cfg, out_dir, backend_factory, corpus=corpus, mode="file_centric",
                       hierarchy=hierarchy, model=model)
    cc = run_litreview(cfg, out_dir, backend_factory, corpus=corpus, mode="compressed_context",
                       hierarchy=hierarchy, model=model)
    return AblationReport(fc, cc)
