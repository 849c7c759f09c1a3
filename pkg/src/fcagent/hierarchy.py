"""Three-level agent hierarchy and the serial decision loop.

An agent's allowed tools may name lower-level agents; calling one runs that
agent to completion on the same workspace, and only its result summary comes
back to the caller (agent-as-a-tool).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable

from .backend import SESSION_MAIN, LLMBackend, LLMRequest, Message
from .context import (
    CONSOLIDATE_TOOL,
    DEFAULT_K,
    MIN_CONTEXT_BUDGET,
    OBJECTIVE_HEADER,
    ActionRecord,
    ActionWindow,
    ConsolidationPolicy,
    append_action,
    build_context,
    consolidate,
    log_context,
    read_actions,
    summarize,
)
from .errors import ConfigError, FcAgentError, ParameterError, PathEscapeError, ToolError
from .tools import Corpus, ToolContext, ToolRegistry, default_registry
from .workspace import RUN_META, Workspace

logger = logging.getLogger(__name__)


class Level(IntEnum):
    ATOMIC = 1
    DOMAIN = 2
    ALPHA = 3


DEFAULT_STEP_LIMITS = {Level.ALPHA: 200, Level.DOMAIN: 100, Level.ATOMIC: 20}
DEFAULT_CONTEXT_BUDGET = 8192

MODES = ("file_centric", "compressed_context")

DIRECTIVE_FORMAT = (
    "Reply with exactly one fenced JSON block, either\n"
    '```json\n{"action": "tool", "tool": "<name>", "args": {...}}\n```\n'
    'or, when the objective is complete,\n'
    '```json\n{"action": "finish", "final_answer": "<short summary>"}\n```'
)
REPAIR_INSTRUCTION = (
    "REPAIR: your previous reply was not a valid directive. " + DIRECTIVE_FORMAT
)


@dataclass(frozen=True)
class AgentSpec:
    agent_id: str
    level: Level
    role_preamble: str = ""
    allowed_tools: frozenset[str] = frozenset()
    step_limit: int = 0
    context_budget: int = DEFAULT_CONTEXT_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "allowed_tools", frozenset(self.allowed_tools))
        if not self.step_limit:
            object.__setattr__(self, "step_limit", DEFAULT_STEP_LIMITS[self.level])

    @classmethod
    def from_dict(cls, d: dict) -> AgentSpec:
        level = d["level"]
        if isinstance(level, str):
            level = Level[level.upper()]
        return cls(
            agent_id=d["agent_id"],
            level=level,
            role_preamble=d.get("role_preamble", ""),
            allowed_tools=frozenset(d.get("allowed_tools", ())),
            step_limit=int(d.get("step_limit", 0)),
            context_budget=int(d.get("context_budget", DEFAULT_CONTEXT_BUDGET)),
        )

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "level": self.level.name.lower(),
            "role_preamble": self.role_preamble,
            "allowed_tools": sorted(self.allowed_tools),
            "step_limit": self.step_limit,
            "context_budget": self.context_budget,
        }


@dataclass
class TaskNode:
    node_id: str
    parent_id: str | None
    objective: str
    assigned_agent: str
    status: str = "pending"
    result_summary: str = ""


@dataclass(frozen=True)
class AgentOutcome:
    status: str  # done | failed | step_limit_reached
    result_summary: str
    steps_used: int


def validate_hierarchy(specs: Iterable[AgentSpec], tool_names: Iterable[str] = (), *,
                       require_root: bool = True) -> list[str]:
    """List every problem in a hierarchy; an empty list means valid.

    ``require_root=False`` accepts partial hierarchies (no alpha agent).
    """
    specs = list(specs)
    tools = set(tool_names)
    problems: list[str] = []
    by_id: dict[str, AgentSpec] = {}
    for s in specs:
        if s.agent_id in by_id:
            problems.append(f"duplicate agent_id {s.agent_id!r}")
        by_id.setdefault(s.agent_id, s)
        if s.agent_id in tools:
            problems.append(f"agent_id {s.agent_id!r} shadows a tool")
    for s in specs:
        if s.step_limit < 1:
            problems.append(f"{s.agent_id}: step_limit must be >= 1")
        if s.context_budget < MIN_CONTEXT_BUDGET:
            problems.append(f"{s.agent_id}: context_budget below {MIN_CONTEXT_BUDGET}")
        for name in sorted(s.allowed_tools):
            if name in by_id:
                if by_id[name].level >= s.level:
                    problems.append(
                        f"{s.agent_id} (level {int(s.level)}) may not call "
                        f"{name} (level {int(by_id[name].level)})"
                    )
            elif name not in tools:
                problems.append(f"{s.agent_id}: unknown tool {name!r}")
    roots = [s.agent_id for s in by_id.values() if s.level is Level.ALPHA]
    if len(roots) > 1 or require_root and not roots:
        problems.append(f"expected exactly one alpha agent, found {len(roots)}")
    return problems


def load_hierarchy(path: str | os.PathLike) -> list[AgentSpec]:
    """Read ``{"agents": [...]}`` (or a bare list) of agent specs from JSON."""
    try:
        data = json.loads(Path(path).read_text())
        rows = data["agents"] if isinstance(data, dict) else data
        return [AgentSpec.from_dict(r) for r in rows]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load hierarchy {path}: {exc}") from exc


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- directives --------------------------------------------------------------

@dataclass(frozen=True)
class Directive:
    action: str  # tool | finish
    tool: str = ""
    args: dict = field(default_factory=dict)
    final_answer: str = ""


_FENCE = re.compile(r"```[ \t]*(?:json)?[ \t]*\n(.*?)```", re.S | re.I)


def parse_directive(text: str) -> Directive | None:
    """Parse the single fenced JSON directive in ``text``; None if malformed."""
    blocks = _FENCE.findall(text or "")
    if len(blocks) != 1:
        return None
    try:
        obj = json.loads(blocks[0])
    except ValueError:
        return None
    if not isinstance(obj, dict):
        return None
    action = obj.get("action")
    if action == "finish":
        answer = obj.get("final_answer")
        return Directive("finish", final_answer=answer) if isinstance(answer, str) else None
    if action in ("tool", "delegate"):
        tool, args = obj.get("tool"), obj.get("args", {})
        if isinstance(tool, str) and tool and isinstance(args, dict):
            return Directive("tool", tool=tool, args=args)
    return None


def render_directive(obj: dict) -> str:
    return "```json\n" + json.dumps(obj, ensure_ascii=False) + "\n```"


# -- engine ------------------------------------------------------------------

@dataclass
class EngineConfig:
    k: int = DEFAULT_K
    consolidation: ConsolidationPolicy = field(default_factory=ConsolidationPolicy)
    mode: str = "file_centric"
    verbose_contexts: bool = False
    max_backend_failures: int = 3
    max_response: int = 2048

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, not {self.mode!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")


class Engine:
    """Runs one task: a single active agent at a time over one workspace."""

    def __init__(self, ws: Workspace, specs: Iterable[AgentSpec], backend: LLMBackend,
                 registry: ToolRegistry | None = None, *, corpus: Corpus | None = None,
                 config: EngineConfig | None = None, hierarchy_digest: str = ""):
        self.ws = ws
        self.registry = registry if registry is not None else default_registry()
        specs = list(specs)
        problems = validate_hierarchy(specs, self.registry.names(), require_root=False)
        if problems:
            raise ConfigError("invalid hierarchy: " + "; ".join(problems))
        self.specs = {s.agent_id: s for s in specs}
        self.alpha = next((s for s in specs if s.level is Level.ALPHA), None)
        self.backend = backend
        self.config = config or EngineConfig()
        self.hierarchy_digest = hierarchy_digest
        self.tool_ctx = ToolContext(ws, backend, corpus)
        self.nodes: dict[str, TaskNode] = {}
        self.step = max((r.step for r in read_actions(ws.task_dir)), default=0)

    # -- task level ----------------------------------------------------------

    def run(self, objective: str) -> AgentOutcome:
        if self.alpha is None:
            raise ConfigError("hierarchy has no alpha agent")
        meta = {"objective": objective, "alpha": self.alpha.agent_id,
                "invocation": self.alpha.agent_id, "mode": self.config.mode,
                "hierarchy_digest": self.hierarchy_digest, "status": "running",
                "result_summary": ""}
        self._write_meta(meta)
        return self._finish_task(meta, self.run_agent(self.alpha, objective))

    def resume(self) -> AgentOutcome:
        meta = self.read_meta(self.ws)
        if meta is None or self.alpha is None:
            raise ConfigError("task has no run metadata or hierarchy has no alpha; cannot resume")
        if meta.get("status") == "done":
            return AgentOutcome("done", meta.get("result_summary", ""), 0)
        if self.hierarchy_digest and meta.get("hierarchy_digest") \
                and meta["hierarchy_digest"] != self.hierarchy_digest:
            logger.warning("hierarchy file changed since the task started; continuing")
        inv = meta["invocation"]
        own = [r for r in read_actions(self.ws.task_dir)
               if r.invocation == inv and r.tool_name != CONSOLIDATE_TOOL]
        window = ActionWindow(self.config.k, own[-self.config.k:])
        meta["status"] = "running"
        self._write_meta(meta)
        outcome = self.run_agent(self.alpha, meta["objective"], invocation=inv,
                                 window=window, steps_used=len(own))
        return self._finish_task(meta, outcome)

    def _finish_task(self, meta: dict, outcome: AgentOutcome) -> AgentOutcome:
        meta["status"] = outcome.status
        meta["result_summary"] = outcome.result_summary
        self._write_meta(meta)
        return outcome

    def _write_meta(self, meta: dict) -> None:
        path = self.ws.path(RUN_META)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(meta, indent=2, sort_keys=True))
        os.replace(tmp, path)

    @staticmethod
    def read_meta(ws_or_dir) -> dict | None:
        task_dir = ws_or_dir.task_dir if isinstance(ws_or_dir, Workspace) else Path(ws_or_dir)
        path = task_dir / RUN_META
        if not path.exists():
            return None
        return json.loads(path.read_text())

    # -- agent loop ----------------------------------------------------------

    def preamble(self, spec: AgentSpec) -> str:
        tools = self.registry.render(spec.allowed_tools)
        agents = "".join(
            f"- {a}(objective: text): delegate to agent {a} (level {int(self.specs[a].level)})\n"
            for a in sorted(spec.allowed_tools) if a in self.specs
        )
        role = spec.role_preamble.strip() or f"You are agent {spec.agent_id}."
        return f"{role}\n\nTOOLS:\n{tools}{agents}\n{DIRECTIVE_FORMAT}\n"

    def run_agent(self, spec: AgentSpec | str, objective: str, *, invocation: str | None = None,
                  window: ActionWindow | None = None, steps_used: int = 0,
                  parent: str | None = None) -> AgentOutcome:
        """Decision loop for one agent invocation.

        Each step: build the request, call the backend, parse one directive,
        execute it, and append exactly one action record.
        """
        spec = self.specs[spec] if isinstance(spec, str) else spec
        inv = invocation or spec.agent_id
        node = TaskNode(inv, parent, objective, spec.agent_id, "running")
        self._check_serial(node)
        self.nodes[inv] = node
        window = window if window is not None else ActionWindow(self.config.k)
        preamble = self.preamble(spec)
        history = [Message("system", preamble), Message("user", OBJECTIVE_HEADER + objective)]
        failures = 0
        while steps_used < spec.step_limit:
            self.step += 1
            t = self.step
            steps_used += 1
            self.ws.action_step = t
            directive, raw, err = self._decide(spec, inv, objective, preamble, window, history, t)
            if err is not None:
                kind, msg = err
                failures = failures + 1 if kind == "backend" else 0
                rec = ActionRecord.make(t, spec.agent_id, kind, "", msg, "error", inv)
                full_result = msg
            else:
                failures = 0
                rec, full_result = self._execute(spec, inv, directive, t)
            self._record(window, rec)
            if self.config.mode == "compressed_context":
                if raw:
                    history.append(Message("assistant", raw))
                history.append(Message("user", f"RESULT {rec.tool_name} ({rec.status}): {full_result}"))
            if directive is not None and directive.action == "finish":
                return self._close(node, AgentOutcome("done", rec.result_summary, steps_used))
            if failures >= self.config.max_backend_failures:
                return self._close(node, AgentOutcome(
                    "failed", f"backend failed {failures} times in a row: {rec.result_summary}",
                    steps_used))
            self._maybe_consolidate(spec, inv, objective, window, t)
        return self._close(node, AgentOutcome(
            "step_limit_reached", f"step limit {spec.step_limit} reached", steps_used))

    def _check_serial(self, node: TaskNode) -> None:
        running = [n for n in self.nodes.values() if n.status == "running"]
        if node.parent_id is None and running:
            raise FcAgentError("another agent is already running in this task")
        for n in running:
            if n.node_id != node.parent_id:
                raise FcAgentError(f"serial execution violated: {n.node_id} is running")

    def _close(self, node: TaskNode, outcome: AgentOutcome) -> AgentOutcome:
        node.status = "done" if outcome.status == "done" else "failed"
        node.result_summary = outcome.result_summary
        return outcome

    def _record(self, window: ActionWindow, rec: ActionRecord) -> None:
        append_action(self.ws, rec)
        window.record(rec)

    def _request(self, spec, preamble, objective, window, history, repair: bool) -> LLMRequest:
        max_resp = self.config.max_response
        if self.config.mode == "compressed_context":
            msgs = list(history)
            if repair:
                msgs.append(Message("user", REPAIR_INSTRUCTION))
            return LLMRequest(tuple(msgs), max_resp, SESSION_MAIN)
        obj = objective + ("\n\n" + REPAIR_INSTRUCTION if repair else "")
        ctx = build_context(self.ws.snapshot(spec.context_budget // 2), window, obj, preamble,
                            spec.context_budget, resnapshot=self.ws.snapshot)
        return LLMRequest(ctx.messages(), max_resp, SESSION_MAIN)

    def _call(self, spec, inv, t, req):
        log_context(self.ws, step=t, agent_id=spec.agent_id, invocation=inv, session=SESSION_MAIN,
                    request=req, verbose=self.config.verbose_contexts)
        return self.backend.complete(req)

    def _decide(self, spec, inv, objective, preamble, window, history, t):
        resp = self._call(spec, inv, t, self._request(spec, preamble, objective, window, history, False))
        if not resp.ok:
            return None, "", ("backend", resp.error)
        directive = parse_directive(resp.content)
        if directive is not None:
            return directive, resp.content, None
        first = resp.content
        resp = self._call(spec, inv, t, self._request(
            spec, preamble, objective, window, history + [Message("assistant", first)], True))
        if not resp.ok:
            return None, first, ("backend", resp.error)
        directive = parse_directive(resp.content)
        if directive is None:
            return None, resp.content, ("parse", "unparseable directive after one repair attempt")
        return directive, resp.content, None

    def _execute(self, spec: AgentSpec, inv: str, d: Directive, t: int):
        if d.action == "finish":
            return ActionRecord.make(t, spec.agent_id, "finish", "", d.final_answer, "ok", inv), \
                d.final_answer
        name, args = d.tool, d.args
        status = "ok"
        if name not in spec.allowed_tools:
            status, result = "error", f"tool {name!r} is not allowed for {spec.agent_id}"
        elif name in self.specs:
            outcome = self.delegate(spec, name, args.get("objective"), invocation=inv, step=t)
            if outcome.status == "done":
                result = outcome.result_summary
            else:
                status, result = "error", f"{outcome.status}: {outcome.result_summary}"
        else:
            try:
                result = self.registry.call(name, args, self.tool_ctx)
            except (ToolError, PathEscapeError, ParameterError) as exc:
                status, result = "error", f"{type(exc).__name__}: {exc}"
        return ActionRecord.make(t, spec.agent_id, name, args, result, status, inv), result

    def delegate(self, parent: AgentSpec | str, child_id: str, objective, *,
                 invocation: str | None = None, step: int | None = None) -> AgentOutcome:
        """Run ``child_id`` to completion for ``parent``; returns its outcome.

        The child starts from an empty action window and sees the shared
        workspace; nothing of its trace except the summary reaches the parent.
        """
        parent = self.specs[parent] if isinstance(parent, str) else parent
        child = self.specs.get(child_id)
        if child is None or child_id not in parent.allowed_tools or child.level >= parent.level:
            return AgentOutcome("failed", f"{parent.agent_id} may not delegate to {child_id}", 0)
        if not isinstance(objective, str) or not objective.strip():
            return AgentOutcome("failed", "delegation needs a non-empty 'objective'", 0)
        parent_inv = invocation or parent.agent_id
        parent_node = self.nodes.get(parent_inv)
        if parent_node is not None:
            parent_node.status = "pending"
        child_inv = f"{parent_inv}/{child_id}@{self.step if step is None else step}"
        try:
            outcome = self.run_agent(child, objective, invocation=child_inv, parent=parent_inv)
        finally:
            if parent_node is not None:
                parent_node.status = "running"
        return AgentOutcome(outcome.status, summarize(outcome.result_summary), outcome.steps_used)

    def _maybe_consolidate(self, spec, inv, objective, window, t) -> None:
        if self.config.mode != "file_centric" or not self.config.consolidation.due(t):
            return
        consolidate(self.ws, window, self.config.consolidation, self.backend, step=t,
                    objective=objective, preamble=self.preamble(spec),
                    budget=spec.context_budget, agent_id=spec.agent_id, invocation=inv,
                    verbose_contexts=self.config.verbose_contexts)


def run_agent(spec: AgentSpec, objective: str, ws: Workspace, backend: LLMBackend, *,
              specs: Iterable[AgentSpec] = (), registry: ToolRegistry | None = None,
              config: EngineConfig | None = None, corpus: Corpus | None = None) -> AgentOutcome:
    """One-shot helper: run ``spec`` (plus any ``specs`` it delegates to) on ``ws``."""
    all_specs = {s.agent_id: s for s in specs}
    all_specs[spec.agent_id] = spec
    engine = Engine(ws, all_specs.values(), backend, registry, corpus=corpus, config=config)
    return engine.run_agent(spec, objective)
