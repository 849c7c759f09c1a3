"""Bounded context reconstruction from a workspace snapshot and a short action window."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable

from .backend import SESSION_CONSOLIDATION, LLMBackend, LLMRequest, Message, estimate_size
from .errors import ConfigError, ParameterError, TransitionError
from .workspace import (
    ACTIONS_LOG,
    CONTEXTS_LOG,
    MIN_SNAPSHOT_BUDGET,
    PLAN,
    PROGRESS,
    StateSnapshot,
    TransitionOp,
    Workspace,
)

logger = logging.getLogger(__name__)

SUMMARY_CAP = 512
DEFAULT_K = 10
MIN_CONTEXT_BUDGET = 2048

STATE_HEADER = "## STATE\n"
ACTIONS_HEADER = "## RECENT ACTIONS\n"
OBJECTIVE_HEADER = "## OBJECTIVE\n"
NO_ACTIONS = "(none)\n"

CONSOLIDATE_TOOL = "consolidate"
CONSOLIDATION_INSTRUCTION = (
    "CONSOLIDATE: record task progress. Reply with 'PROGRESS:' followed by a short "
    "progress note. Add a line starting with 'PLAN:' followed by the full revised plan "
    "only if the plan must change."
)
CONSOLIDATION_PREAMBLE = "You maintain the plan and progress notes of a long-running task."

_WS = re.compile(r"\s+")


def summarize(text: str, cap: int = SUMMARY_CAP) -> str:
    """Collapse whitespace and cut to ``cap`` characters (ellipsis included)."""
    flat = _WS.sub(" ", str(text)).strip()
    if len(flat) <= cap:
        return flat
    return flat[: cap - 1] + "…"


@dataclass(frozen=True)
class ActionRecord:
    step: int
    agent_id: str
    tool_name: str
    args_summary: str = ""
    result_summary: str = ""
    status: str = "ok"
    timestamp: float = 0.0
    invocation: str = ""

    def __post_init__(self):
        if self.status not in ("ok", "error"):
            raise ParameterError(f"status must be ok/error, not {self.status!r}")
        if len(self.args_summary) > SUMMARY_CAP or len(self.result_summary) > SUMMARY_CAP:
            raise ParameterError("action summaries are capped at %d characters" % SUMMARY_CAP)

    @classmethod
    def make(cls, step: int, agent_id: str, tool_name: str, args="", result="",
             status: str = "ok", invocation: str = "") -> ActionRecord:
        if not isinstance(args, str):
            args = json.dumps(args, sort_keys=True, ensure_ascii=False)
        return cls(step, agent_id, tool_name, summarize(args), summarize(result), status,
                   time.time(), invocation)

    def render(self) -> str:
        return (
            f"[{self.step}] {self.agent_id} {self.tool_name} -> {self.status}\n"
            f"  args: {self.args_summary}\n"
            f"  result: {self.result_summary}\n"
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> ActionRecord:
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class ActionWindow:
    """Fixed-capacity buffer of the most recent actions, oldest first."""

    def __init__(self, capacity: int = DEFAULT_K, records: Iterable[ActionRecord] = ()):
        if capacity < 1:
            raise ParameterError("window capacity must be >= 1")
        self.capacity = capacity
        self._records: deque[ActionRecord] = deque(maxlen=capacity)
        for rec in records:
            self.record(rec)

    def record(self, rec: ActionRecord) -> ActionWindow:
        if self._records and rec.step <= self._records[-1].step:
            raise ParameterError(
                f"step {rec.step} not after last recorded step {self._records[-1].step}"
            )
        self._records.append(rec)
        return self

    @property
    def records(self) -> tuple[ActionRecord, ...]:
        return tuple(self._records)

    @property
    def steps(self) -> list[int]:
        return [r.step for r in self._records]

    def __len__(self) -> int:
        return len(self._records)


def record_action(win: ActionWindow, rec: ActionRecord) -> ActionWindow:
    return win.record(rec)


@dataclass(frozen=True)
class BoundedContext:
    system_preamble: str
    state_section: str
    actions_section: str
    objective_section: str
    budget: int
    total_size: int
    dropped_actions: int = 0

    @property
    def user_text(self) -> str:
        return (STATE_HEADER + self.state_section + ACTIONS_HEADER + self.actions_section
                + OBJECTIVE_HEADER + self.objective_section)

    def messages(self) -> tuple[Message, ...]:
        return (Message("system", self.system_preamble), Message("user", self.user_text))

    @property
    def text(self) -> str:
        return LLMRequest(self.messages()).text()


def _render_actions(records) -> str:
    return "".join(r.render() for r in records) if records else NO_ACTIONS


def build_context(
    snap: StateSnapshot,
    win: ActionWindow,
    objective: str,
    preamble: str,
    budget: int,
    *,
    resnapshot: Callable[[int], StateSnapshot] | None = None,
    size_fn: Callable[[str], int] = estimate_size,
) -> BoundedContext:
    """Assemble the per-step context within ``budget``.

    Over budget, the oldest actions go first; then the state is re-rendered at
    successively halved snapshot budgets (via ``resnapshot``), and as a last
    resort cut.  Preamble and objective are never shortened.
    """
    if budget < MIN_CONTEXT_BUDGET:
        raise ParameterError(f"context budget {budget} below minimum {MIN_CONTEXT_BUDGET}")
    if snap.budget > budget // 2:
        raise ParameterError(
            f"snapshot budget {snap.budget} exceeds half the context budget {budget}"
        )
    objective_section = objective if objective.endswith("\n") else objective + "\n"
    fixed = size_fn(preamble) + size_fn(STATE_HEADER + ACTIONS_HEADER + OBJECTIVE_HEADER
                                        + objective_section)
    if fixed + size_fn(NO_ACTIONS) > budget:
        raise ConfigError(
            f"preamble and objective need {fixed} characters; context budget is {budget}"
        )

    records = list(win.records)
    state = snap.text

    def total(state_text: str, recs) -> int:
        return fixed + size_fn(state_text) + size_fn(_render_actions(recs))

    dropped = 0
    while records and total(state, records) > budget:
        records.pop(0)
        dropped += 1
    if total(state, records) > budget and resnapshot is not None:
        b = snap.budget // 2
        while b >= MIN_SNAPSHOT_BUDGET:
            state = resnapshot(b).text
            if total(state, records) <= budget:
                break
            b //= 2
    if total(state, records) > budget:
        room = budget - total("", records)
        state = state[: max(room - 2, 0)] + "…\n" if room >= 2 else ""
    actions = _render_actions(records)
    ctx = BoundedContext(preamble, state, actions, objective_section, budget,
                         total(state, records), dropped)
    assert ctx.total_size <= budget
    return ctx


# -- logs ------------------------------------------------------------------

def _append_line(path: Path, line: str, fsync: bool = False) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
        fh.flush()
        if fsync:
            os.fsync(fh.fileno())


def append_action(ws: Workspace, rec: ActionRecord) -> None:
    _append_line(ws.path(ACTIONS_LOG), rec.to_json(), ws.fsync)


def read_actions(task_dir: str | os.PathLike) -> list[ActionRecord]:
    """Committed action records; a torn final line is ignored."""
    path = Path(task_dir) / ACTIONS_LOG
    if not path.exists():
        return []
    out = []
    for line in path.read_text(encoding="utf-8").splitlines(keepends=True):
        if not line.endswith("\n"):
            break
        try:
            out.append(ActionRecord.from_dict(json.loads(line)))
        except (ValueError, TypeError):
            logger.warning("skipping malformed action record")
    return out


def log_context(ws: Workspace, *, step: int, agent_id: str, invocation: str, session: str,
                request: LLMRequest, verbose: bool) -> str:
    """Append a hash (and with ``verbose`` the full text) of a sent request."""
    text = request.text()
    sha = hashlib.sha256(text.encode("utf-8")).hexdigest()
    entry = {"step": step, "agent_id": agent_id, "invocation": invocation,
             "session": session, "size": request.total_size(), "sha256": sha}
    if verbose:
        entry["text"] = text
    _append_line(ws.path(CONTEXTS_LOG), json.dumps(entry, ensure_ascii=False, sort_keys=True))
    return sha


def read_contexts(task_dir: str | os.PathLike) -> list[dict]:
    path = Path(task_dir) / CONTEXTS_LOG
    if not path.exists():
        return []
    out = []
    for line in path.read_text(encoding="utf-8").splitlines(keepends=True):
        if line.endswith("\n"):
            try:
                out.append(json.loads(line))
            except ValueError:
                pass
    return out


# -- consolidation ---------------------------------------------------------

@dataclass(frozen=True)
class ConsolidationPolicy:
    interval_steps: int = 25
    plan_budget: int = 1024
    progress_budget: int = 1024

    def __post_init__(self):
        if self.interval_steps < 1:
            raise ParameterError("interval_steps must be >= 1")

    def due(self, step: int) -> bool:
        return step > 0 and step % self.interval_steps == 0


def split_consolidation(text: str) -> tuple[str, str | None]:
    """Split a consolidation reply into (progress note, new plan or None)."""
    progress_lines, plan_lines, in_plan = [], [], False
    for line in text.strip().splitlines():
        stripped = line.strip()
        if not in_plan and stripped.upper().startswith("PLAN:"):
            in_plan = True
            plan_lines.append(stripped[5:].strip())
        elif in_plan:
            plan_lines.append(line)
        else:
            progress_lines.append(line)
    progress = "\n".join(progress_lines).strip()
    if progress.upper().startswith("PROGRESS:"):
        progress = progress[9:].strip()
    plan = "\n".join(plan_lines).strip() if in_plan else None
    return progress, plan or None


def consolidate(
    ws: Workspace,
    win: ActionWindow,
    policy: ConsolidationPolicy,
    backend: LLMBackend,
    *,
    step: int | None = None,
    objective: str = "",
    preamble: str = CONSOLIDATION_PREAMBLE,
    budget: int = 8192,
    agent_id: str = "engine",
    invocation: str = "",
    verbose_contexts: bool = False,
) -> Workspace:
    """Fold recent progress into progress.md (and plan.md) via one backend call.

    Best effort: a failed call is logged and skipped.
    """
    step = ws.action_step if step is None else step
    ws.action_step = step
    snap_budget = max(MIN_SNAPSHOT_BUDGET, budget // 2)
    task = (objective.rstrip() + "\n\n" if objective.strip() else "") + CONSOLIDATION_INSTRUCTION
    ctx = build_context(ws.snapshot(snap_budget), win, task, preamble, budget,
                        resnapshot=ws.snapshot)
    req = LLMRequest(ctx.messages(), session_tag=SESSION_CONSOLIDATION)
    log_context(ws, step=step, agent_id=agent_id, invocation=invocation,
                session=SESSION_CONSOLIDATION, request=req, verbose=verbose_contexts)
    resp = backend.complete(req)
    if not resp.ok:
        logger.warning("consolidation at step %d skipped: %s", step, resp.error)
        append_action(ws, ActionRecord.make(step, agent_id, CONSOLIDATE_TOOL, "",
                                            f"skipped: {resp.error}", "error", invocation))
        return ws
    note, plan = split_consolidation(resp.content)
    note = note[: policy.progress_budget]
    try:
        current = ws.read_text(PROGRESS)
        sep = "" if not current or current.endswith("\n") else "\n"
        ws.apply(TransitionOp.modify(PROGRESS, f"{current}{sep}### step {step}\n{note}\n"))
        if plan is not None:
            plan = plan[: policy.plan_budget]
            if plan.rstrip("\n") != ws.read_text(PLAN).rstrip("\n"):
                ws.apply(TransitionOp.modify(PLAN, plan + "\n"))
    except TransitionError as exc:  # pragma: no cover - plan/progress always exist
        logger.warning("consolidation write failed: %s", exc)
    append_action(ws, ActionRecord.make(step, agent_id, CONSOLIDATE_TOOL, "",
                                        note, "ok", invocation))
    return ws
