"""Task workspace: the on-disk, authoritative task state.

Every mutation goes through :meth:`Workspace.apply`, which commits a record to
``logs/transitions.jsonl`` (and the payload to ``logs/blobs/``) before touching
the target file.  :meth:`Workspace.resume` rebuilds the in-memory metadata
from that log and repairs the tree to match it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import posixpath
import shutil
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import (
    ParameterError,
    TransitionError,
    WorkspaceError,
    WorkspaceExistsError,
    WorkspaceNotFoundError,
)

logger = logging.getLogger(__name__)

PLAN = "plan.md"
PROGRESS = "progress.md"
ARTIFACTS_DIR = "artifacts"
LOGS_DIR = "logs"
TRANSITIONS_LOG = "logs/transitions.jsonl"
ACTIONS_LOG = "logs/actions.jsonl"
CONTEXTS_LOG = "logs/contexts.jsonl"
RUN_META = "logs/run.json"
BLOBS_DIR = "logs/blobs"

MIN_SNAPSHOT_BUDGET = 512

_RECORD_FIELDS = ("step", "kind", "target", "payload_digest", "payload_size", "timestamp")


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


EMPTY_DIGEST = digest(b"")


class TransitionKind(str, Enum):
    CREATE = "create"
    MODIFY = "modify"
    DELETE = "delete"


@dataclass(frozen=True)
class TransitionOp:
    kind: TransitionKind
    target: str
    payload: bytes | None = None

    @classmethod
    def create(cls, target: str, payload: bytes | str) -> TransitionOp:
        return cls(TransitionKind.CREATE, target, _as_bytes(payload))

    @classmethod
    def modify(cls, target: str, payload: bytes | str) -> TransitionOp:
        return cls(TransitionKind.MODIFY, target, _as_bytes(payload))

    @classmethod
    def delete(cls, target: str) -> TransitionOp:
        return cls(TransitionKind.DELETE, target)


@dataclass
class FileArtifact:
    relative_path: str
    byte_size: int
    created_step: int
    modified_step: int
    content_digest: str


@dataclass(frozen=True)
class StateSnapshot:
    task_id: str
    snapshot_step: int
    file_listing: tuple[tuple[str, int, int], ...]
    plan_excerpt: str
    progress_excerpt: str
    omitted_files: int
    text: str
    budget: int

    @property
    def rendered_size(self) -> int:
        return len(self.text)


def _as_bytes(payload: bytes | str) -> bytes:
    if isinstance(payload, str):
        return payload.encode("utf-8")
    return bytes(payload)


def normalize_target(path: str) -> str:
    """Return the canonical task-relative form of ``path``.

    Raises ValueError for empty, absolute, escaping, or reserved (``logs/``)
    paths.
    """
    if not isinstance(path, str) or not path.strip():
        raise ValueError("empty path")
    if "\x00" in path or "\\" in path:
        raise ValueError(f"illegal character in path {path!r}")
    if path.startswith("/") or (len(path) > 1 and path[1] == ":"):
        raise ValueError(f"absolute path {path!r}")
    norm = posixpath.normpath(path)
    if norm in (".", "") or norm == ".." or norm.startswith("../"):
        raise ValueError(f"path {path!r} escapes the task directory")
    if norm == LOGS_DIR or norm.startswith(LOGS_DIR + "/"):
        raise ValueError(f"path {path!r} is reserved")
    return norm


def _excerpt(text: str, limit: int) -> str:
    if limit <= 0:
        return ""
    if len(text) <= limit:
        return text
    return text[: limit - 1] + "…"


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


@dataclass
class Workspace:
    """Materialized persistent state of one task.

    Construct with :meth:`init` or :meth:`resume`, not directly.
    """

    root: Path
    task_id: str
    step_counter: int = 0
    files: dict[str, FileArtifact] = field(default_factory=dict)
    fsync: bool = True
    # agent step stamped on each transition record; set by the engine
    action_step: int = 0
    recovery_notes: list[str] = field(default_factory=list)

    @property
    def task_dir(self) -> Path:
        return self.root / self.task_id

    def path(self, rel: str) -> Path:
        return self.task_dir / rel

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def init(cls, root: str | os.PathLike, task_id: str, *, resume: bool = False,
             fsync: bool = True) -> Workspace:
        root = Path(root)
        _check_task_id(task_id)
        task_dir = root / task_id
        if task_dir.exists():
            if resume:
                return cls.resume(root, task_id, fsync=fsync)
            raise WorkspaceExistsError(f"task {task_id!r} already exists under {root}")
        try:
            root.mkdir(parents=True, exist_ok=True)
            task_dir.mkdir()
            for sub in (ARTIFACTS_DIR, LOGS_DIR, BLOBS_DIR):
                (task_dir / sub).mkdir(parents=True, exist_ok=True)
            for name in (PLAN, PROGRESS):
                (task_dir / name).write_bytes(b"")
            for name in (TRANSITIONS_LOG, ACTIONS_LOG):
                (task_dir / name).write_bytes(b"")
        except OSError as exc:
            shutil.rmtree(task_dir, ignore_errors=True)
            raise WorkspaceError(f"cannot initialize workspace at {task_dir}: {exc}") from exc
        ws = cls(root=root, task_id=task_id, fsync=fsync)
        ws.files = _initial_files()
        return ws

    @classmethod
    def resume(cls, root: str | os.PathLike, task_id: str, *, fsync: bool = True) -> Workspace:
        root = Path(root)
        task_dir = root / task_id
        log_path = task_dir / TRANSITIONS_LOG
        if not task_dir.is_dir() or not log_path.is_file():
            raise WorkspaceNotFoundError(f"no task {task_id!r} under {root}")
        ws = cls(root=root, task_id=task_id, fsync=fsync)
        records, valid_bytes, problem = read_transition_log(task_dir)
        if problem is not None:
            note = f"transition log: {problem}; resuming at step {len(records)}"
            logger.warning(note)
            ws.recovery_notes.append(note)
            with open(log_path, "r+b") as fh:
                fh.truncate(valid_bytes)
        files = _initial_files()
        for rec in records:
            _fold(files, rec)
        ws.files = files
        ws.step_counter = len(records)
        ws._reconcile_disk()
        return ws

    def _reconcile_disk(self) -> None:
        """Make the tree match the replayed metadata (redo/undo after a crash)."""
        for rel, art in self.files.items():
            p = self.path(rel)
            current = digest(p.read_bytes()) if p.is_file() else None
            if current != art.content_digest:
                self._write_file(rel, self._blob(art.content_digest))
                self._note(f"restored {rel} to step {art.modified_step}")
        for p in sorted(self.task_dir.rglob("*")):
            if not p.is_file():
                continue
            rel = p.relative_to(self.task_dir).as_posix()
            if rel.startswith(LOGS_DIR + "/") or rel in self.files:
                continue
            p.unlink()
            self._note(f"removed uncommitted file {rel}")

    def _note(self, msg: str) -> None:
        logger.warning(msg)
        self.recovery_notes.append(msg)

    # -- transitions -------------------------------------------------------

    def apply(self, op: TransitionOp) -> FileArtifact | None:
        """Apply one transition with write-ahead logging.

        Returns the new artifact metadata (None for delete).  Invalid ops
        raise TransitionError and leave the workspace untouched.
        """
        try:
            target = normalize_target(op.target)
        except ValueError as exc:
            raise TransitionError(str(exc)) from exc
        kind = TransitionKind(op.kind)
        present = target in self.files
        if kind is TransitionKind.CREATE and present:
            raise TransitionError(f"create: {target} already exists")
        if kind in (TransitionKind.MODIFY, TransitionKind.DELETE) and not present:
            raise TransitionError(f"{kind.value}: {target} does not exist")
        if kind is TransitionKind.DELETE:
            if op.payload is not None:
                raise TransitionError("delete carries no payload")
            if target in (PLAN, PROGRESS):
                raise TransitionError(f"{target} cannot be deleted")
        elif op.payload is None:
            raise TransitionError(f"{kind.value} requires a payload")
        if kind is TransitionKind.CREATE:
            parent = self.path(target).parent
            for anc in [parent, *parent.parents]:
                if anc == self.task_dir:
                    break
                if anc.exists() and not anc.is_dir():
                    raise TransitionError(f"create: parent of {target} is a file")
            if self.path(target).is_dir():
                raise TransitionError(f"create: {target} is a directory")

        payload = op.payload
        pdigest = digest(payload) if payload is not None else None
        if payload is not None:
            self._store_blob(pdigest, payload)
        step = self.step_counter + 1
        record = {
            "step": step,
            "kind": kind.value,
            "target": target,
            "payload_digest": pdigest,
            "payload_size": len(payload) if payload is not None else 0,
            "timestamp": time.time(),
            "action_step": self.action_step,
        }
        self._append_record(record)
        # committed; now materialize
        if kind is TransitionKind.DELETE:
            self.path(target).unlink(missing_ok=True)
        else:
            self._write_file(target, payload)
        _fold(self.files, record)
        self.step_counter = step
        return self.files.get(target)

    def _append_record(self, record: dict) -> None:
        line = (json.dumps(record, sort_keys=True) + "\n").encode("utf-8")
        with open(self.path(TRANSITIONS_LOG), "ab") as fh:
            fh.write(line)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())

    def _store_blob(self, key: str, payload: bytes) -> None:
        blob = self.path(BLOBS_DIR) / key
        if blob.exists():
            return
        tmp = blob.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            fh.write(payload)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())
        os.replace(tmp, blob)

    def _blob(self, key: str) -> bytes:
        if key == EMPTY_DIGEST:
            return b""
        return (self.path(BLOBS_DIR) / key).read_bytes()

    def _write_file(self, rel: str, data: bytes) -> None:
        p = self.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_name(p.name + ".fcagent-tmp")
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())
        os.replace(tmp, p)

    # -- queries -----------------------------------------------------------

    def exists(self, rel: str) -> bool:
        return rel in self.files

    def read(self, rel: str) -> bytes:
        if rel not in self.files:
            raise FileNotFoundError(rel)
        return self.path(rel).read_bytes()

    def read_text(self, rel: str) -> str:
        return self.read(rel).decode("utf-8", errors="replace")

    def state_digest(self) -> str:
        """Digest of the tracked file map (paths and content digests)."""
        h = hashlib.sha256()
        for rel in sorted(self.files):
            h.update(f"{rel}\0{self.files[rel].content_digest}\n".encode())
        return h.hexdigest()

    def file_digests(self) -> dict[str, str]:
        return {rel: art.content_digest for rel, art in sorted(self.files.items())}

    def snapshot(self, budget: int, excerpt_cap: int | None = None) -> StateSnapshot:
        """Render the bounded, deterministic view of the workspace.

        Plan and progress contribute head excerpts (each capped at
        ``excerpt_cap``, default ``budget // 8``); the listing holds path,
        size and modified step only.  When over budget, space goes to the
        plan excerpt first, then progress, then a prefix of the listing
        followed by an omission marker.
        """
        if budget < MIN_SNAPSHOT_BUDGET:
            raise ParameterError(
                f"snapshot budget {budget} below minimum {MIN_SNAPSHOT_BUDGET}"
            )
        cap = budget // 8 if excerpt_cap is None else excerpt_cap
        plan = _excerpt(self.read_text(PLAN), cap)
        progress = _excerpt(self.read_text(PROGRESS), cap)
        listing = tuple(
            (rel, art.byte_size, art.modified_step) for rel, art in sorted(self.files.items())
        )
        lines = [f"{rel}\t{size}\t{step}\n" for rel, size, step in listing]
        header = (
            f"workspace {self.task_id} | step {self.step_counter} | {len(listing)} files\n"
        )

        def render(plan_ex: str, prog_ex: str, shown: int) -> str:
            omitted = len(lines) - shown
            marker = f"… {omitted} more files\n" if omitted else ""
            return "".join(
                [header, "### plan.md\n", plan_ex, "\n", "### progress.md\n", prog_ex, "\n",
                 "### files (path, bytes, modified_step)\n", *lines[:shown], marker]
            )

        text = render(plan, progress, len(lines))
        shown = len(lines)
        if len(text) > budget:
            remaining = budget - len(render("", "", 0))
            plan = _excerpt(plan, min(len(plan), remaining))
            remaining -= len(plan)
            progress = _excerpt(progress, min(len(progress), remaining))
            remaining -= len(progress)
            shown = 0
            for line in lines:
                if len(line) > remaining:
                    break
                remaining -= len(line)
                shown += 1
            text = render(plan, progress, shown)
        assert len(text) <= budget
        return StateSnapshot(
            task_id=self.task_id,
            snapshot_step=self.step_counter,
            file_listing=listing[:shown],
            plan_excerpt=plan,
            progress_excerpt=progress,
            omitted_files=len(listing) - shown,
            text=text,
            budget=budget,
        )


def _check_task_id(task_id: str) -> None:
    if not task_id or task_id in (".", "..") or "/" in task_id or "\\" in task_id \
            or "\x00" in task_id or task_id.startswith("."):
        raise ParameterError(f"task_id {task_id!r} is not filesystem-safe")


def _initial_files() -> dict[str, FileArtifact]:
    return {name: FileArtifact(name, 0, 0, 0, EMPTY_DIGEST) for name in (PLAN, PROGRESS)}


def _fold(files: dict[str, FileArtifact], rec: dict) -> None:
    target, step = rec["target"], rec["step"]
    if rec["kind"] == TransitionKind.DELETE.value:
        files.pop(target, None)
        return
    prev = files.get(target)
    files[target] = FileArtifact(
        relative_path=target,
        byte_size=rec["payload_size"],
        created_step=prev.created_step if prev else step,
        modified_step=step,
        content_digest=rec["payload_digest"],
    )


def read_transition_log(task_dir: Path) -> tuple[list[dict], int, str | None]:
    """Parse the committed prefix of a task's transition log.

    A record is committed once its terminating newline is on disk.  Returns
    ``(records, byte_length_of_valid_prefix, problem_or_None)``; parsing stops
    at the first malformed, out-of-sequence, or blob-less record.
    """
    raw = (task_dir / TRANSITIONS_LOG).read_bytes()
    blobs = task_dir / BLOBS_DIR
    records: list[dict] = []
    offset = 0
    files = _initial_files()
    while offset < len(raw):
        end = raw.find(b"\n", offset)
        if end == -1:
            return records, offset, f"partial record at byte {offset} discarded"
        try:
            rec = json.loads(raw[offset:end])
            problem = _check_record(rec, len(records) + 1, files, blobs)
        except (ValueError, TypeError, KeyError) as exc:
            problem = f"unparseable record ({exc})"
        if problem:
            return records, offset, f"record {len(records) + 1}: {problem}"
        _fold(files, rec)
        records.append(rec)
        offset = end + 1
    return records, offset, None


def committed_files(task_dir: str | os.PathLike) -> tuple[dict[str, FileArtifact], str | None]:
    """File metadata as of the last committed transition, without touching the tree."""
    records, _, problem = read_transition_log(Path(task_dir))
    files = _initial_files()
    for rec in records:
        _fold(files, rec)
    return files, problem


def _check_record(rec: dict, expected_step: int, files: dict, blobs: Path) -> str | None:
    if not isinstance(rec, dict) or any(k not in rec for k in _RECORD_FIELDS):
        return "missing fields"
    if rec["step"] != expected_step:
        return f"expected step {expected_step}, found {rec['step']}"
    kind = TransitionKind(rec["kind"])
    target = normalize_target(rec["target"])
    if target != rec["target"]:
        return "non-canonical target"
    present = target in files
    if kind is TransitionKind.CREATE and present or kind is not TransitionKind.CREATE and not present:
        return f"{kind.value} inconsistent with file set"
    if kind is not TransitionKind.DELETE:
        key = rec["payload_digest"]
        if key != EMPTY_DIGEST:
            blob = blobs / str(key)
            if not blob.is_file() or digest(blob.read_bytes()) != key:
                return "payload blob missing or corrupt"
    return None


def replay(source_task_dir: str | os.PathLike, root: str | os.PathLike, task_id: str,
           upto: int | None = None, *, fsync: bool = False) -> Workspace:
    """Rebuild a task's state into a fresh workspace from its transition log."""
    source = Path(source_task_dir)
    records, _, problem = read_transition_log(source)
    if problem:
        logger.warning("replay: %s", problem)
    ws = Workspace.init(root, task_id, fsync=fsync)
    blobs = source / BLOBS_DIR
    for rec in records[:upto]:
        kind = TransitionKind(rec["kind"])
        if kind is TransitionKind.DELETE:
            op = TransitionOp.delete(rec["target"])
        else:
            key = rec["payload_digest"]
            payload = b"" if key == EMPTY_DIGEST else (blobs / key).read_bytes()
            op = TransitionOp(kind, rec["target"], payload)
        ws.action_step = rec.get("action_step", 0)
        ws.apply(op)
    return ws


def tree_digest(directory: str | os.PathLike, *, exclude_logs: bool = False) -> str:
    """Digest of every regular file (path + bytes) under ``directory``."""
    base = Path(directory)
    h = hashlib.sha256()
    for p in sorted(base.rglob("*")):
        if not p.is_file():
            continue
        rel = p.relative_to(base).as_posix()
        if exclude_logs and (rel == LOGS_DIR or rel.startswith(LOGS_DIR + "/")):
            continue
        h.update(rel.encode() + b"\0" + hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()
