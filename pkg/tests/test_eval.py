import csv
import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcagent.backend import LLMRequest, Message, SESSION_READER
from fcagent.errors import ParameterError
from fcagent.eval.containment import SubstringIndex, window_hashes
from fcagent.eval.corpus import MIN_BODY_CHARS, generate_corpus, generate_items
from fcagent.eval.judge import (
    GroundednessJudgment,
    coverage,
    judge_grounded,
    judge_workspace,
    parse_review,
    render_review,
    review_path,
)
from fcagent.eval.litreview import (
    CoverageReport,
    LitReviewConfig,
    RunResult,
    extractive_reader,
    litreview_hierarchy,
    run_ablation_pair,
    run_litreview,
)
from fcagent.eval.report import render_table, write_reports
from fcagent.hierarchy import validate_hierarchy
from fcagent.tools import CorpusItem, default_registry
from fcagent.workspace import TransitionOp, Workspace


@pytest.fixture(scope="module")
def items():
    return generate_items(12, 42)


def test_corpus_deterministic(tmp_path):
    generate_corpus(tmp_path / "a", 5, 42)
    generate_corpus(tmp_path / "b", 5, 42)
    for p in sorted((tmp_path / "a").rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_corpus_planted_facts(tmp_path):
    corpus = generate_corpus(tmp_path / "c", 20, 7)
    assert len(corpus) == 20
    for syn in generate_items(20, 7):
        meta = (tmp_path / "c" / syn.id / "meta.json").read_text()
        body = (tmp_path / "c" / syn.id / "body.txt").read_text()
        assert len(body) >= MIN_BODY_CHARS
        assert len(set(syn.planted)) >= 3
        for fact in syn.planted:
            assert body.count(fact) == 1 and fact not in meta


def test_corpus_single_item(tmp_path):
    assert generate_corpus(tmp_path / "one", 1, 0).ids() == ["item-000"]
    with pytest.raises(ParameterError):
        generate_items(0, 0)


def as_item(syn):
    return CorpusItem(syn.id, syn.title, syn.metadata, syn.body)


def test_judge_planted_and_title(items):
    for syn in items:
        item = as_item(syn)
        j = judge_grounded(syn.planted[0], item)
        assert j.grounded and j.evidence_span == syn.planted[0]
        assert not judge_grounded(syn.title, item).grounded


def test_judge_empty():
    item = CorpusItem("x", "T", {}, "one two three four")
    j = judge_grounded("", item)
    assert j == GroundednessJudgment("x", False, False, "")
    assert not judge_grounded("   ", item).summary_present


def test_judge_normalization():
    item = CorpusItem("x", "Title", {}, "The  Quick\nbrown fox jumps")
    assert judge_grounded("the quick BROWN fox", item).grounded
    assert not judge_grounded("quick brown fox", item).grounded


def test_judge_excludes_metadata_runs():
    item = CorpusItem("x", "alpha beta gamma delta", {"venue": "w x y z"},
                      "alpha beta gamma delta and w x y z")
    assert not judge_grounded("alpha beta gamma delta", item).grounded
    assert not judge_grounded("w x y z", item).grounded
    assert judge_grounded("gamma delta and w", item).grounded


def brute_grounded(summary, item):
    words = [w.casefold() for w in summary.split()]
    body = " " + " ".join(item.body.casefold().split()) + " "
    metas = [" " + " ".join(str(s).casefold().split()) + " "
             for s in [item.id, item.title, *item.metadata.values()]]
    for i in range(len(words)):
        for j in range(i + 4, len(words) + 1):
            run = " " + " ".join(words[i:j]) + " "
            if run in body and not any(run in m for m in metas):
                return True
    return False


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "d", "A", "e"]), max_size=14), st.integers(0, 10**6))
def test_judge_matches_brute_force(words, seed):
    rng = random.Random(seed)
    body = " ".join(rng.choice("abcd") for _ in range(40))
    title = " ".join(rng.choice("abcd") for _ in range(6))
    item = CorpusItem("id", title, {"venue": " ".join(rng.choice("ab") for _ in range(5))}, body)
    assert judge_grounded(" ".join(words), item).grounded == brute_grounded(" ".join(words), item)


def test_review_layout_round_trip():
    text = render_review("Some summary\nover two lines", 4)
    assert parse_review(text) == ("Some summary\nover two lines", 4)
    assert parse_review("nothing") == ("", None)


def test_coverage_monotone(tmp_path, items):
    from fcagent.eval.corpus import write_corpus

    corpus = write_corpus(tmp_path / "c", items)
    ws = Workspace.init(tmp_path / "w", "t", fsync=False)
    prev = coverage(judge_workspace(ws.task_dir, corpus))
    assert prev == 0
    for syn in items:
        ws.apply(TransitionOp.create(review_path(syn.id), render_review(syn.planted[1], 3)))
        cur = coverage(judge_workspace(ws.task_dir, corpus))
        assert cur == prev + 1
        prev = cur


# -- reader mock ---------------------------------------------------------------

def reader_request(text):
    return LLMRequest((Message("system", "s"), Message("user", text)), session_tag=SESSION_READER)


def test_extractive_reader_drops_cut_edges():
    chunk = "nding: cut piece. Finding: whole one. Also findings here. Finding: cut at e"
    out = extractive_reader(reader_request(f"QUERY: findings?\nEXCERPT 2/3:\n{chunk}"))
    assert out == "Finding: whole one. Also findings here."
    out = extractive_reader(reader_request("QUERY: findings?\nEXCERPT 1/1:\nNo match."))
    assert out == "NONE"
    reduced = extractive_reader(reader_request(
        "QUERY: q\nFINDINGS:\n[1] A. B.\n[2] NONE\n[3] B. C."))
    assert reduced == "A. B. C."


# -- containment ---------------------------------------------------------------

def brute_shared(docs, text, n):
    grams = {d[i:i + n] for d in docs for i in range(len(d) - n + 1)}
    return {i for i in range(len(text) - n + 1) if text[i:i + n] in grams}


@settings(max_examples=80, deadline=None)
@given(st.lists(st.text("abc", max_size=60), max_size=4), st.text("abc", max_size=80),
       st.integers(1, 8))
def test_index_matches_brute_force(docs, text, n):
    found = {s.offset for s in SubstringIndex(docs, n).find(text)}
    assert found == brute_shared(docs, text, n)


def test_window_hash_consistency():
    t = "xyz" * 50 + "é" * 70
    h = window_hashes(t, 64)
    assert len(h) == len(t) - 63
    for i in (0, 5, 80):
        assert h[i] == window_hashes(t[i:i + 64], 64)[0]
    assert len(window_hashes("short", 64)) == 0


# -- protocol ------------------------------------------------------------------

def fake_report(cov):
    return CoverageReport("file_centric", "mock", {"n_items": 80}, [
        RunResult(i, i, c, [], None, None, None) for i, c in enumerate(cov)])


def test_report_arithmetic():
    rep = fake_report([80, 80, 78, 80, 80])
    assert (rep.max, rep.min, rep.avg) == (80, 78, Fraction(398, 5))
    assert float(rep.avg) == 79.6
    assert rep.min <= rep.avg <= rep.max


def test_table_columns():
    table = render_table([fake_report([3, 5])])
    header = [c.strip() for c in table.splitlines()[0].strip("|").split("|")]
    assert header == ["Setting", "Model", "Max", "Min", "Avg"]
    assert "4.0" in table


def test_hierarchy_is_valid():
    assert validate_hierarchy(litreview_hierarchy(), default_registry().names()) == []


def test_tiny_task_both_modes(tmp_path):
    rep = run_ablation_pair(LitReviewConfig(n_items=1, runs=3), tmp_path)
    assert rep.file_centric.per_run_coverage == [1, 1, 1]
    assert rep.compressed_context.per_run_coverage == [1, 1, 1]


def test_ablation_needs_three_runs(tmp_path):
    with pytest.raises(ParameterError):
        run_ablation_pair(LitReviewConfig(n_items=1, runs=2), tmp_path)


def test_file_centric_deterministic(tmp_path):
    cfg = LitReviewConfig(n_items=6, runs=1)
    a = run_litreview(cfg, tmp_path / "a")
    b = run_litreview(cfg, tmp_path / "b")
    assert a.per_run_coverage == b.per_run_coverage == [6]


def test_modes_agree_below_limit(tmp_path):
    rep = run_ablation_pair(LitReviewConfig(n_items=5, runs=3), tmp_path)
    for fc, cc in zip(rep.file_centric.runs, rep.compressed_context.runs):
        assert fc.overflows == cc.overflows == 0
        for item in ("item-000", "item-004"):
            assert (fc.task_dir / review_path(item)).read_bytes() == \
                (cc.task_dir / review_path(item)).read_bytes()


def test_ablation_direction_small(tmp_path):
    rep = run_ablation_pair(LitReviewConfig(n_items=40, runs=3), tmp_path)
    assert rep.file_centric.per_run_coverage == [40, 40, 40]
    assert rep.gap > 0
    assert rep.compressed_context.variance >= rep.file_centric.variance


def test_crash_is_scored_partially(tmp_path):
    class Dies:
        def __init__(self):
            self.n = 0

        def complete(self, request):
            self.n += 1
            if self.n > 60:
                raise RuntimeError("backend process died")
            return self.inner.complete(request)

    from fcagent.eval.litreview import litreview_mock

    def factory(seed):
        d = Dies()
        d.inner = litreview_mock(seed)
        return d

    rep = run_litreview(LitReviewConfig(n_items=20, runs=1), tmp_path, factory)
    (run,) = rep.runs
    assert run.crash and "backend process died" in run.crash
    assert 0 < run.coverage < 20


def test_write_reports(tmp_path):
    rep = run_ablation_pair(LitReviewConfig(n_items=2, runs=3), tmp_path / "runs")
    paths = write_reports(tmp_path / "out", rep)
    data = json.loads(paths["json"].read_text())
    assert set(data) == {"file_centric", "compressed_context", "gap"}
    assert set(data["file_centric"]) >= {"config", "per_run", "aggregate"}
    assert data["file_centric"]["aggregate"]["avg"] == 2.0
    rows = list(csv.DictReader(paths["csv"].open()))
    assert len(rows) == 6
    assert paths["plot"].read_bytes()[:4] == b"\x89PNG"
    assert "coverage gap" in paths["table"].read_text()
