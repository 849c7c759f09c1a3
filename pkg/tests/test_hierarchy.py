import json

import pytest

from fcagent.backend import LLMRequest, MockBackend, MockPolicy, scripted
from fcagent.context import read_actions, read_contexts
from fcagent.errors import ConfigError, FcAgentError
from fcagent.hierarchy import (
    AgentSpec,
    Engine,
    EngineConfig,
    Level,
    REPAIR_INSTRUCTION,
    TaskNode,
    load_hierarchy,
    parse_directive,
    run_agent,
    validate_hierarchy,
)
from fcagent.tools import default_registry

from conftest import finish, tool

TOOLS = default_registry().names()


class RoleScript:
    """Replies per agent, chosen by the ``ROLE:`` marker in the system message."""

    def __init__(self, scripts):
        self.scripts = {k: list(v) for k, v in scripts.items()}
        self.requests = []

    def __call__(self, request: LLMRequest) -> str:
        self.requests.append(request)
        system = request.messages[0].content
        role = system.split("ROLE:", 1)[1].split()[0]
        queue = self.scripts[role]
        return queue.pop(0) if queue else finish(f"{role} idle")


def role_backend(**scripts):
    script = RoleScript(scripts)
    return MockBackend(MockPolicy(default=script)), script


def spec(agent_id, level, tools=(), **kw):
    return AgentSpec(agent_id, level, f"ROLE: {agent_id}", frozenset(tools), **kw)


def test_defaults_and_dict_round_trip():
    s = spec("a", Level.DOMAIN, ["write_file"])
    assert s.step_limit == 100
    assert AgentSpec.from_dict(s.to_dict()) == s
    assert AgentSpec.from_dict({"agent_id": "x", "level": "atomic"}).step_limit == 20


def test_validate_standard_tree():
    specs = [spec("alpha", Level.ALPHA, ["coder"]), spec("coder", Level.DOMAIN, ["writer"]),
             spec("writer", Level.ATOMIC, ["write_file"])]
    assert validate_hierarchy(specs, TOOLS) == []


def test_validate_reports_problems():
    problems = validate_hierarchy(
        [spec("alpha", Level.ALPHA, ["dom"]), spec("dom", Level.DOMAIN, ["write_file"]),
         spec("leaf", Level.ATOMIC, ["dom", "teleport"]), spec("leaf", Level.ATOMIC)], TOOLS)
    text = "\n".join(problems)
    assert "leaf (level 1) may not call dom (level 2)" in text
    assert "unknown tool 'teleport'" in text
    assert "duplicate agent_id 'leaf'" in text


def test_validate_same_level_and_roots():
    problems = validate_hierarchy([spec("a", Level.DOMAIN, ["b"]), spec("b", Level.DOMAIN)], TOOLS)
    assert any("may not call b" in p for p in problems)
    assert any("exactly one alpha" in p for p in problems)
    assert validate_hierarchy([spec("a", Level.ATOMIC)], TOOLS, require_root=False) == []
    problems = validate_hierarchy([spec("read_file", Level.ATOMIC, step_limit=-1)], TOOLS,
                                  require_root=False)
    assert any("shadows a tool" in p for p in problems)
    assert any("step_limit" in p for p in problems)


def test_load_hierarchy(tmp_path):
    p = tmp_path / "h.json"
    p.write_text(json.dumps({"agents": [spec("alpha", Level.ALPHA).to_dict()]}))
    assert load_hierarchy(p)[0].level is Level.ALPHA
    p.write_text("{")
    with pytest.raises(ConfigError):
        load_hierarchy(p)


@pytest.mark.parametrize("text,ok", [
    (tool("write_file", path="a", content="b"), True),
    (finish("x"), True),
    ('```json\n{"action": "delegate", "tool": "coder", "args": {"objective": "o"}}\n```', True),
    ("no fence here", False),
    (tool("a") + tool("b"), False),
    ("```json\n{not json}\n```", False),
    ('```json\n{"action": "finish"}\n```', False),
    ('```json\n{"action": "tool", "tool": "x", "args": []}\n```', False),
])
def test_parse_directive(text, ok):
    assert (parse_directive(text) is not None) == ok


def test_two_step_script(ws):
    backend = scripted([tool("write_file", path="artifacts/x.md", content="hi"), finish("wrote x")])
    out = run_agent(spec("w", Level.ATOMIC, ["write_file"]), "Write x.", ws, backend)
    assert (out.status, out.steps_used) == ("done", 2)
    assert ws.read_text("artifacts/x.md") == "hi"
    assert [r.step for r in read_actions(ws.task_dir)] == [1, 2]


def test_malformed_twice_then_finish(ws):
    backend = scripted(["garbage", "still garbage", finish()])
    out = run_agent(spec("w", Level.ATOMIC), "Do it.", ws, backend)
    assert out.status == "done" and out.steps_used == 2
    recs = read_actions(ws.task_dir)
    assert [(r.tool_name, r.status) for r in recs] == [("parse", "error"), ("finish", "ok")]
    assert [c["step"] for c in read_contexts(ws.task_dir)] == [1, 1, 2]


def test_repair_retry_succeeds(ws):
    backend = scripted(["oops", finish("fixed")])
    backend.keep_transcript = True
    out = run_agent(spec("w", Level.ATOMIC), "Do it.", ws, backend)
    assert out.status == "done" and out.steps_used == 1
    assert REPAIR_INSTRUCTION in backend.transcript[1][0].text()


def test_step_limit(ws):
    never = MockBackend(MockPolicy(default=tool("list_dir", path=".")))
    out = run_agent(spec("w", Level.ATOMIC, ["list_dir"], step_limit=50), "Loop.", ws, never)
    assert (out.status, out.steps_used) == ("step_limit_reached", 50)
    recs = read_actions(ws.task_dir)
    assert len([r for r in recs if r.tool_name != "consolidate"]) == 50
    assert [r.step for r in recs if r.tool_name == "consolidate"] == [25, 50]


def test_backend_failures_end_run(ws):
    dead = MockBackend(MockPolicy(context_limit=10, on_overflow="error"))
    out = run_agent(spec("w", Level.ATOMIC), "Anything.", ws, dead)
    assert out.status == "failed" and out.steps_used == 3
    assert all(r.tool_name == "backend" for r in read_actions(ws.task_dir))


def test_disallowed_tool_is_error_record(ws):
    backend = scripted([tool("write_file", path="a", content="b"), finish()])
    run_agent(spec("w", Level.ATOMIC, ["read_file"]), "x", ws, backend)
    first = read_actions(ws.task_dir)[0]
    assert first.status == "error" and "not allowed" in first.result_summary
    assert not ws.exists("a")


def delegation_specs(child_limit=100):
    return [spec("alpha", Level.ALPHA, ["coder"]),
            spec("coder", Level.DOMAIN, ["write_file"], step_limit=child_limit)]


def test_delegation_returns_summary_only(ws):
    backend, script = role_backend(
        alpha=[tool("coder", objective="Write artifacts/out.py"), finish("all done")],
        coder=[tool("write_file", path="artifacts/out.py", content="print('CHILD-SECRET')"),
               finish("coder wrote artifacts/out.py")],
    )
    engine = Engine(ws, delegation_specs(), backend, config=EngineConfig(verbose_contexts=True))
    out = engine.run("Build the thing.")
    assert out.status == "done"
    assert ws.read_text("artifacts/out.py") == "print('CHILD-SECRET')"
    recs = read_actions(ws.task_dir)
    alpha_recs = [r for r in recs if r.agent_id == "alpha"]
    assert [r.tool_name for r in alpha_recs] == ["coder", "finish"]
    assert alpha_recs[0].result_summary == "coder wrote artifacts/out.py"
    # parent contexts never see child trace lines
    ctxs = read_contexts(ws.task_dir)
    parent = [c["text"] for c in ctxs if c["agent_id"] == "alpha"]
    child = [c["text"] for c in ctxs if c["agent_id"] == "coder"]
    child_trace = {line for t in child for line in t.split("## RECENT ACTIONS\n")[1]
                   .split("## OBJECTIVE")[0].splitlines() if line.strip() and line != "(none)"}
    assert child_trace
    for t in parent:
        for line in child_trace:
            assert line not in t


def test_child_step_limit_is_parent_error(ws):
    backend, _ = role_backend(
        alpha=[tool("coder", objective="spin"), finish("gave up")],
        coder=[tool("list_dir", path=".")] * 10,
    )
    specs = [spec("alpha", Level.ALPHA, ["coder"]),
             spec("coder", Level.DOMAIN, ["list_dir"], step_limit=3)]
    out = Engine(ws, specs, backend).run("x")
    assert out.status == "done"
    rec = [r for r in read_actions(ws.task_dir) if r.tool_name == "coder"][0]
    assert rec.status == "error" and "step_limit_reached" in rec.result_summary


def test_delegation_needs_objective(ws):
    backend, _ = role_backend(alpha=[tool("coder"), finish()])
    Engine(ws, delegation_specs(), backend).run("x")
    rec = read_actions(ws.task_dir)[0]
    assert rec.status == "error" and "objective" in rec.result_summary


def test_engine_rejects_bad_hierarchy(ws):
    with pytest.raises(ConfigError):
        Engine(ws, [spec("a", Level.DOMAIN, ["b"]), spec("b", Level.DOMAIN)], scripted([]))


def test_serial_guard(ws):
    engine = Engine(ws, delegation_specs(), scripted([]))
    engine.nodes["alpha"] = TaskNode("alpha", None, "o", "alpha", "running")
    with pytest.raises(FcAgentError):
        engine.run_agent("coder", "second root")


def test_invocation_paths_and_depth(ws):
    backend, _ = role_backend(
        alpha=[tool("dom", objective="d"), finish()],
        dom=[tool("leaf", objective="l"), finish("dom ok")],
        leaf=[tool("list_dir"), finish("leaf ok")],
    )
    specs = [spec("alpha", Level.ALPHA, ["dom"]), spec("dom", Level.DOMAIN, ["leaf"]),
             spec("leaf", Level.ATOMIC, ["list_dir"])]
    Engine(ws, specs, backend).run("x")
    invs = {r.invocation for r in read_actions(ws.task_dir)}
    assert invs == {"alpha", "alpha/dom@1", "alpha/dom@1/leaf@2"}
    assert max(i.count("/") for i in invs) + 1 <= 3


def test_compressed_mode_accumulates_history(ws):
    backend = scripted([tool("list_dir"), tool("list_dir"), finish()])
    backend.keep_transcript = True
    run_agent(spec("w", Level.ATOMIC, ["list_dir"]), "Look around.", ws, backend,
              config=EngineConfig(mode="compressed_context"))
    sizes = [len(r.messages) for r, _ in backend.transcript]
    assert sizes == [2, 4, 6]
    last = backend.transcript[-1][0]
    assert [m.role for m in last.messages] == ["system", "user", "assistant", "user", "assistant", "user"]
    assert last.messages[3].content.startswith("RESULT list_dir (ok): ")


def test_resume_continues_alpha(ws):
    crash_after = 2

    class Crash(BaseException):
        pass

    backend, _ = role_backend(alpha=[tool("write_file", path=f"a{i}", content="x") for i in range(4)]
                              + [finish("four files")])
    calls = {"n": 0}
    real = backend.complete

    def flaky(req):
        calls["n"] += 1
        if calls["n"] > crash_after:
            raise Crash()
        return real(req)

    backend.complete = flaky
    specs = [spec("alpha", Level.ALPHA, ["write_file"])]
    with pytest.raises(Crash):
        Engine(ws, specs, backend).run("Write four files.")
    backend.complete = real
    from fcagent.workspace import Workspace

    ws2 = Workspace.resume(ws.root, ws.task_id, fsync=False)
    engine = Engine(ws2, specs, backend)
    out = engine.resume()
    assert out.status == "done"
    assert all(ws2.exists(f"a{i}") for i in range(4))
    assert [r.step for r in read_actions(ws2.task_dir)] == [1, 2, 3, 4, 5]
    assert engine.resume().status == "done"
