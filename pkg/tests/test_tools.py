import os
import random
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcagent.backend import SESSION_READER, MockBackend, MockPolicy, MockRule
from fcagent.context import SUMMARY_CAP, read_contexts
from fcagent.errors import ConfigError, DocumentReadError, ParameterError, PathEscapeError, ToolError
from fcagent.eval.containment import SubstringIndex
from fcagent.eval.corpus import write_corpus, SyntheticItem
from fcagent.hierarchy import AgentSpec, EngineConfig, Level, run_agent
from fcagent.tools import (
    Corpus,
    DocumentRef,
    ToolContext,
    ToolDescriptor,
    ToolRegistry,
    answer_from_document,
    chunk_text,
    default_registry,
    list_dir,
    read_file,
    register_tool,
    search,
    write_file,
)
from fcagent.workspace import TransitionOp

from conftest import finish, tool


def test_register_and_listing():
    reg = ToolRegistry()
    register_tool(reg, ToolDescriptor("read_file", "read", {"path": "path"}), lambda a, c: "")
    assert "read_file" in reg.names()
    with pytest.raises(ConfigError):
        register_tool(reg, ToolDescriptor("read_file", "again"), lambda a, c: "")
    with pytest.raises(ConfigError):
        register_tool(reg, ToolDescriptor("finish", "reserved"), lambda a, c: "")
    d = default_registry()
    assert d.render() == default_registry().render()
    assert "- write_file(path: path, content: text):" in d.render()
    assert d.render(["list_dir"]).count("\n") == 1


def test_write_read_round_trip(ws):
    write_file(ws, "artifacts/a.txt", b"hello\x00world")
    r = read_file(ws, "artifacts/a.txt")
    assert r.data == b"hello\x00world" and r.eof


def test_read_with_cap_and_offsets(ws):
    write_file(ws, "a.txt", b"0123456789")
    r = read_file(ws, "a.txt", 0, 4)
    assert (r.data, r.next_offset, r.eof) == (b"0123", 4, False)
    r = read_file(ws, "a.txt", r.next_offset, 100)
    assert r.data == b"456789" and r.eof
    r = read_file(ws, "a.txt", 50)
    assert r.data == b"" and r.eof


def test_read_tool_renders_continuation(ws):
    write_file(ws, "a.txt", "x" * 5000)
    out = default_registry().call("read_file", {"path": "a.txt"}, ToolContext(ws, read_cap=4096))
    assert "[continue at offset 4096]" in out
    out = default_registry().call("read_file", {"path": "a.txt", "offset": 9999}, ToolContext(ws))
    assert out.endswith("[end of file]")


@pytest.mark.parametrize("path", ["../../etc", "/etc/passwd", "logs/transitions.jsonl"])
def test_path_escape(ws, path):
    with pytest.raises(PathEscapeError):
        write_file(ws, path, b"x")
    with pytest.raises(PathEscapeError):
        read_file(ws, path)


def test_symlink_escape(ws, tmp_path):
    outside = tmp_path / "outside"
    outside.mkdir()
    os.symlink(outside, ws.task_dir / "artifacts" / "link")
    with pytest.raises(PathEscapeError):
        write_file(ws, "artifacts/link/x.txt", b"x")


def test_missing_file(ws):
    with pytest.raises(ToolError):
        read_file(ws, "nope.txt")


def test_writes_go_through_transitions(ws):
    write_file(ws, "a.txt", b"1")
    write_file(ws, "a.txt", b"2")
    assert ws.step_counter == 2 and ws.files["a.txt"].created_step == 1


def test_list_dir(ws):
    write_file(ws, "artifacts/b.md", b"12")
    write_file(ws, "artifacts/a.md", b"1")
    assert list_dir(ws, "artifacts") == [("artifacts/a.md", 1, 2), ("artifacts/b.md", 2, 1)]


@settings(max_examples=50, deadline=None)
@given(data=st.binary(max_size=4096))
def test_read_write_property(tmp_path_factory, data):
    from fcagent.workspace import Workspace

    w = Workspace.init(tmp_path_factory.mktemp("rw"), "t", fsync=False)
    write_file(w, "x.bin", data)
    assert read_file(w, "x.bin", 0, 4096).data == data


# -- search ------------------------------------------------------------------

@pytest.fixture
def small_corpus(tmp_path):
    items = [
        SyntheticItem("a-1", "Sparse Attention", {}, "alpha beta", ()),
        SyntheticItem("a-2", "Dense Retrieval", {}, "gamma delta", ()),
        SyntheticItem("a-0", "Other", {}, "gamma", ()),
    ]
    return write_corpus(tmp_path / "corpus", items)


def test_search_title_match(small_corpus):
    assert search("retrieval", small_corpus)[0][0] == "a-2"


def test_search_no_match_and_empty(small_corpus, tmp_path):
    assert search("zebra", small_corpus) == []
    assert search("gamma", Corpus(tmp_path / "none")) == []


def test_search_tie_lower_id_first(small_corpus):
    assert [h[0] for h in search("gamma", small_corpus)] == ["a-0", "a-2"]


# -- external attention -------------------------------------------------------

def test_chunking():
    assert chunk_text("abc") == ["abc"]
    text = "".join(chr(97 + i % 26) for i in range(20000))
    chunks = chunk_text(text, 8000, 400)
    assert all(len(c) <= 8000 for c in chunks)
    assert chunks[1].startswith(chunks[0][-400:])
    assert chunks[-1].endswith(text[-10:])
    with pytest.raises(ParameterError):
        chunk_text("x", 100, 100)


def codeword_reader(request):
    m = re.search(r"CODEWORD=\w+", request.latest_user)
    if "FINDINGS" in request.latest_user:
        found = re.findall(r"CODEWORD=\w+", request.latest_user)
        return found[0] if found else "NOT FOUND"
    return m.group(0) if m else "NONE"


def reader_backend():
    return MockBackend(MockPolicy(rules=[MockRule("", codeword_reader, session=SESSION_READER)]))


def filler(n, seed=0):
    rng = random.Random(seed)
    return "".join(rng.choice("abcdefgh ") for _ in range(n))


def test_answer_from_document_codeword(ws):
    body = filler(25_000) + " CODEWORD=K7 " + filler(25_000, 1)
    write_file(ws, "artifacts/doc.txt", body)
    ans = answer_from_document("What is the codeword?", DocumentRef("workspace_file", "artifacts/doc.txt"),
                               reader_backend(), ws=ws)
    assert "K7" in ans.answer
    assert ans.chunks_consulted == len(chunk_text(body))
    assert len(ans.answer) <= SUMMARY_CAP


def test_answer_small_doc_and_empty_query(ws):
    write_file(ws, "d.txt", "short CODEWORD=Z1")
    ref = DocumentRef("workspace_file", "d.txt")
    assert answer_from_document("q", ref, reader_backend(), ws=ws).chunks_consulted == 1
    with pytest.raises(ParameterError):
        answer_from_document("  ", ref, reader_backend(), ws=ws)


def test_answer_unreadable_doc(ws):
    with pytest.raises(DocumentReadError):
        answer_from_document("q", DocumentRef("workspace_file", "missing.txt"), reader_backend(), ws=ws)
    with pytest.raises(ParameterError):
        DocumentRef("web", "x")


def test_answer_reduction_failure_reports_chunks(ws):
    write_file(ws, "d.txt", filler(20_000))
    backend = MockBackend(MockPolicy(rules=[
        MockRule("FINDINGS", lambda r: ""), MockRule("", "NONE")]))
    with pytest.raises(DocumentReadError) as info:
        answer_from_document("q", DocumentRef("workspace_file", "d.txt"), backend, ws=ws)
    assert info.value.chunks_consulted == 3


def test_reader_sessions_are_isolated(ws):
    write_file(ws, "d.txt", filler(9000) + "CODEWORD=Q2")
    m = reader_backend()
    m.keep_transcript = True
    answer_from_document("find it", DocumentRef("workspace_file", "d.txt"), m, ws=ws)
    for request, _ in m.transcript:
        assert request.session_tag == SESSION_READER
        assert len(request.messages) == 2


def test_containment_in_agent_run(ws):
    body = filler(25_000, 3) + " CODEWORD=K7 " + filler(25_000, 4)
    write_file(ws, "artifacts/heavy.txt", body)
    spec = AgentSpec("reader", Level.ATOMIC, allowed_tools={"answer_from_document", "write_file"})
    main = [tool("answer_from_document", query="codeword?", source="workspace_file",
                 path="artifacts/heavy.txt"),
            tool("write_file", path="artifacts/answer.md", content="K7"), finish("K7")]
    rules = [MockRule("", r, repeat_limit=1, session="main") for r in main]
    rules.append(MockRule("", codeword_reader, session=SESSION_READER))
    out = run_agent(spec, "Find the codeword.", ws, MockBackend(MockPolicy(rules=rules)),
                    config=EngineConfig(verbose_contexts=True))
    assert out.status == "done"
    contexts = read_contexts(ws.task_dir)
    assert len(contexts) == 3
    index = SubstringIndex([body])
    assert not any(index.contains_any(c["text"]) for c in contexts)
    assert any("K7" in c["text"] for c in contexts[1:])
