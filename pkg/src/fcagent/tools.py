"""Tool registry, workspace file tools, local search, and isolated document reading."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from .backend import SESSION_READER, LLMBackend, LLMRequest, Message
from .context import SUMMARY_CAP, summarize
from .errors import (
    ConfigError,
    DocumentReadError,
    ParameterError,
    PathEscapeError,
    ToolError,
    TransitionError,
)
from .workspace import TransitionOp, Workspace, normalize_target

DEFAULT_READ_CAP = 4096
CHUNK_SIZE = 8000
CHUNK_OVERLAP = 400


class Effects(str, Enum):
    READ_ONLY = "read_only"
    WORKSPACE_WRITE = "workspace_write"
    EXTERNAL_CALL = "external_call"


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    arg_schema: dict[str, str] = field(default_factory=dict)
    effects: Effects = Effects.READ_ONLY

    def signature(self) -> str:
        args = ", ".join(f"{k}: {v}" for k, v in self.arg_schema.items())
        return f"{self.name}({args})"


@dataclass
class ToolContext:
    """What a tool may touch while it runs."""

    ws: Workspace
    backend: LLMBackend | None = None
    corpus: Corpus | None = None
    read_cap: int = DEFAULT_READ_CAP


ToolImpl = Callable[[dict, ToolContext], str]

RESERVED_NAMES = frozenset({"finish", "backend", "parse", "consolidate"})


class ToolRegistry:
    def __init__(self):
        self._tools: dict[str, tuple[ToolDescriptor, ToolImpl]] = {}

    def register(self, desc: ToolDescriptor, impl: ToolImpl) -> ToolRegistry:
        if desc.name in self._tools:
            raise ConfigError(f"tool {desc.name!r} already registered")
        if desc.name in RESERVED_NAMES or not re.fullmatch(r"[A-Za-z_][\w.-]*", desc.name):
            raise ConfigError(f"illegal tool name {desc.name!r}")
        self._tools[desc.name] = (desc, impl)
        return self

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def names(self) -> list[str]:
        return sorted(self._tools)

    def descriptor(self, name: str) -> ToolDescriptor:
        return self._tools[name][0]

    def call(self, name: str, args: dict, ctx: ToolContext) -> str:
        if name not in self._tools:
            raise ToolError(f"unknown tool {name!r}")
        if not isinstance(args, dict):
            raise ToolError("tool arguments must be an object")
        return self._tools[name][1](args, ctx)

    def render(self, names: Any = None) -> str:
        """Deterministic listing of tools (optionally restricted to ``names``)."""
        chosen = self.names() if names is None else sorted(n for n in names if n in self._tools)
        return "".join(
            f"- {self.descriptor(n).signature()}: {self.descriptor(n).description}\n"
            for n in chosen
        )


def register_tool(reg: ToolRegistry, desc: ToolDescriptor, impl: ToolImpl) -> ToolRegistry:
    return reg.register(desc, impl)


# -- file tools --------------------------------------------------------------

def resolve_path(ws: Workspace, path: str) -> str:
    """Validate a tool path; returns the task-relative form."""
    try:
        rel = normalize_target(path)
    except ValueError as exc:
        raise PathEscapeError(str(exc)) from exc
    real_root = os.path.realpath(ws.task_dir)
    real = os.path.realpath(ws.task_dir / rel)
    if real != real_root and not real.startswith(real_root + os.sep):
        raise PathEscapeError(f"path {path!r} escapes the task directory")
    return rel


@dataclass(frozen=True)
class ReadResult:
    data: bytes
    offset: int
    next_offset: int
    size: int

    @property
    def eof(self) -> bool:
        return self.next_offset >= self.size


def write_file(ws: Workspace, path: str, data: bytes | str) -> str:
    rel = resolve_path(ws, path)
    op = TransitionOp.modify(rel, data) if ws.exists(rel) else TransitionOp.create(rel, data)
    try:
        ws.apply(op)
    except TransitionError as exc:
        raise ToolError(str(exc)) from exc
    return rel


def read_file(ws: Workspace, path: str, offset: int = 0, cap: int = DEFAULT_READ_CAP) -> ReadResult:
    rel = resolve_path(ws, path)
    if not ws.exists(rel):
        raise ToolError(f"not found: {rel}")
    if offset < 0:
        raise ToolError("offset must be >= 0")
    data = ws.read(rel)
    chunk = data[offset: offset + cap]
    return ReadResult(chunk, offset, offset + len(chunk), len(data))


def list_dir(ws: Workspace, path: str = ".") -> list[tuple[str, int, int]]:
    prefix = "" if path in ("", ".", "./") else resolve_path(ws, path).rstrip("/") + "/"
    return [(rel, a.byte_size, a.modified_step) for rel, a in sorted(ws.files.items())
            if rel.startswith(prefix)]


def _tool_write(args: dict, ctx: ToolContext) -> str:
    path, content = args.get("path"), args.get("content")
    if not isinstance(path, str) or not isinstance(content, str):
        raise ToolError("write_file needs string 'path' and 'content'")
    rel = write_file(ctx.ws, path, content)
    return f"wrote {rel} ({len(content.encode('utf-8'))} bytes)"


def _tool_read(args: dict, ctx: ToolContext) -> str:
    path = args.get("path")
    if not isinstance(path, str):
        raise ToolError("read_file needs a string 'path'")
    try:
        offset = int(args.get("offset", 0))
    except (TypeError, ValueError) as exc:
        raise ToolError("offset must be an integer") from exc
    res = read_file(ctx.ws, path, offset, ctx.read_cap)
    marker = "[end of file]" if res.eof else f"[continue at offset {res.next_offset}]"
    return (f"--- {path} bytes {res.offset}-{res.next_offset} of {res.size} ---\n"
            f"{res.data.decode('utf-8', errors='replace')}\n{marker}")


def _tool_list(args: dict, ctx: ToolContext) -> str:
    rows = list_dir(ctx.ws, str(args.get("path", ".")))
    if not rows:
        return "(no files)"
    return "\n".join(f"{rel}\t{size}\t{step}" for rel, size, step in rows)


# -- corpus and search -------------------------------------------------------

@dataclass(frozen=True)
class CorpusItem:
    id: str
    title: str
    metadata: dict
    body: str
    meta_raw: str = ""


class Corpus:
    """Directory of ``<id>/meta.json`` + ``<id>/body.txt`` items."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._cache: dict[str, CorpusItem] = {}

    def ids(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / "meta.json").is_file())

    def __len__(self) -> int:
        return len(self.ids())

    def get(self, item_id: str) -> CorpusItem:
        if item_id not in self._cache:
            d = self.root / item_id
            if "/" in item_id or item_id.startswith(".") or not (d / "meta.json").is_file():
                raise KeyError(item_id)
            raw = (d / "meta.json").read_text(encoding="utf-8")
            meta = json.loads(raw)
            body = (d / "body.txt").read_text(encoding="utf-8")
            self._cache[item_id] = CorpusItem(meta["id"], meta.get("title", ""),
                                              meta.get("metadata", {}), body, raw)
        return self._cache[item_id]

    def items(self) -> list[CorpusItem]:
        return [self.get(i) for i in self.ids()]


_TOKEN = re.compile(r"[a-z0-9]+")


def search(query: str, corpus: Corpus | None, top_n: int = 5) -> list[tuple[str, str, str]]:
    """Keyword ranking over titles (weight 3) and bodies (weight 1).

    Ties break on item id ascending; items scoring zero are dropped.
    """
    terms = set(_TOKEN.findall(query.lower()))
    if corpus is None or not terms:
        return []
    scored = []
    for item in corpus.items():
        title_tokens = _TOKEN.findall(item.title.lower())
        body_tokens = _TOKEN.findall(item.body.lower())
        score = 3 * sum(t in terms for t in title_tokens) + sum(t in terms for t in body_tokens)
        if score:
            scored.append((-score, item.id, item))
    scored.sort(key=lambda s: (s[0], s[1]))
    out = []
    for _, _, item in scored[:top_n]:
        out.append((item.id, item.title, summarize(item.body, 120)))
    return out


def _tool_search(args: dict, ctx: ToolContext) -> str:
    query = args.get("query")
    if not isinstance(query, str):
        raise ToolError("search needs a string 'query'")
    hits = search(query, ctx.corpus, int(args.get("top_n", 5)))
    if not hits:
        return "(no results)"
    return "\n".join(f"{i}\t{t}" for i, t, _ in hits)


# -- external attention ------------------------------------------------------

@dataclass(frozen=True)
class DocumentRef:
    source: str  # "workspace_file" | "corpus_item"
    identifier: str
    media: str = "plain_text"

    def __post_init__(self):
        if self.source not in ("workspace_file", "corpus_item"):
            raise ParameterError(f"unknown document source {self.source!r}")
        if self.media not in ("plain_text", "pdf_text_extracted"):
            raise ParameterError(f"unknown media {self.media!r}")


@dataclass(frozen=True)
class ExternalAnswer:
    answer: str
    chunks_consulted: int
    session_tokens_estimate: int


READER_SYSTEM = (
    "You read one excerpt of a document in isolation. Quote the sentences that answer "
    "the query, or reply NONE."
)
REDUCER_SYSTEM = (
    "Combine the per-excerpt findings into one short answer to the query. "
    "Reply NOT FOUND if no finding answers it."
)


def chunk_text(text: str, size: int = CHUNK_SIZE, overlap: int = CHUNK_OVERLAP) -> list[str]:
    if size <= overlap or overlap < 0:
        raise ParameterError("chunk size must exceed overlap")
    if len(text) <= size:
        return [text]
    step = size - overlap
    chunks = []
    start = 0
    while True:
        chunks.append(text[start:start + size])
        if start + size >= len(text):
            return chunks
        start += step


def load_document(doc: DocumentRef, ws: Workspace | None, corpus: Corpus | None) -> str:
    try:
        if doc.source == "corpus_item":
            if corpus is None:
                raise DocumentReadError("no corpus loaded")
            return corpus.get(doc.identifier).body
        if ws is None:
            raise DocumentReadError("no workspace")
        rel = resolve_path(ws, doc.identifier)
        return ws.read(rel).decode("utf-8", errors="replace")
    except (KeyError, OSError, ValueError, FileNotFoundError) as exc:
        raise DocumentReadError(f"cannot read {doc.source} {doc.identifier!r}: {exc}") from exc


def answer_from_document(
    query: str,
    doc: DocumentRef,
    backend: LLMBackend,
    *,
    ws: Workspace | None = None,
    corpus: Corpus | None = None,
    chunk_size: int = CHUNK_SIZE,
    overlap: int = CHUNK_OVERLAP,
    answer_cap: int = SUMMARY_CAP,
) -> ExternalAnswer:
    """Answer ``query`` from ``doc`` using throwaway reader sessions.

    Each chunk is read in its own request that carries only the reader
    instruction, the query, and the chunk; one more request reduces the
    findings.  Only the capped answer is returned.
    """
    if not isinstance(query, str) or not query.strip():
        raise ParameterError("query must be non-empty")
    text = load_document(doc, ws, corpus)
    chunks = chunk_text(text, chunk_size, overlap)
    findings: list[str] = []
    used = 0
    for i, chunk in enumerate(chunks):
        req = LLMRequest(
            (Message("system", READER_SYSTEM),
             Message("user", f"QUERY: {query}\nEXCERPT {i + 1}/{len(chunks)}:\n{chunk}")),
            session_tag=SESSION_READER,
        )
        resp = backend.complete(req)
        used += req.total_size() + len(resp.content)
        if not resp.ok:
            raise DocumentReadError(f"reader failed on chunk {i + 1}: {resp.error}", i)
        findings.append(summarize(resp.content, answer_cap))
    listed = "\n".join(f"[{i + 1}] {f}" for i, f in enumerate(findings))
    req = LLMRequest(
        (Message("system", REDUCER_SYSTEM), Message("user", f"QUERY: {query}\nFINDINGS:\n{listed}")),
        session_tag=SESSION_READER,
    )
    resp = backend.complete(req)
    used += req.total_size() + len(resp.content)
    if not resp.ok:
        raise DocumentReadError(f"reduction failed: {resp.error}", len(chunks))
    return ExternalAnswer(summarize(resp.content, answer_cap), len(chunks), used)


def _tool_answer(args: dict, ctx: ToolContext) -> str:
    query = args.get("query")
    source = args.get("source", "corpus_item")
    ident = args.get("id") or args.get("path")
    if not isinstance(query, str) or not isinstance(ident, str):
        raise ToolError("answer_from_document needs string 'query' and 'id' (or 'path')")
    if ctx.backend is None:
        raise ToolError("no backend for document reading")
    try:
        doc = DocumentRef(source, ident)
        ans = answer_from_document(query, doc, ctx.backend, ws=ctx.ws, corpus=ctx.corpus)
    except ParameterError as exc:
        raise ToolError(str(exc)) from exc
    return f"answer_from_document {ident} ({ans.chunks_consulted} chunks): {ans.answer}"


def default_registry() -> ToolRegistry:
    reg = ToolRegistry()
    reg.register(ToolDescriptor("read_file", "read part of a workspace file",
                                {"path": "path", "offset": "int"}), _tool_read)
    reg.register(ToolDescriptor("write_file", "create or overwrite a workspace file",
                                {"path": "path", "content": "text"}, Effects.WORKSPACE_WRITE),
                 _tool_write)
    reg.register(ToolDescriptor("list_dir", "list workspace files under a directory",
                                {"path": "path"}), _tool_list)
    reg.register(ToolDescriptor("search", "keyword search over the local corpus",
                                {"query": "text", "top_n": "int"}), _tool_search)
    reg.register(ToolDescriptor("answer_from_document",
                                "answer a query from a document without loading it",
                                {"query": "text", "source": "corpus_item|workspace_file",
                                 "id": "corpus id or path"}, Effects.EXTERNAL_CALL),
                 _tool_answer)
    return reg
