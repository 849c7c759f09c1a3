"""INI run configuration.

::

    [run]
    workspace_root = work
    task_id = demo
    objective = Write a short report.
    hierarchy_file = hierarchy.json
    mode = file_centric            ; or compressed_context
    corpus_dir = corpus            ; optional

    [context]
    k = 10
    consolidation_interval = 25
    plan_budget = 1024
    progress_budget = 1024
    budget = 8192                  ; optional, overrides every agent's context_budget

    [backend]
    kind = mock                    ; mock | http
    mock_policy = policy.json      ; mock: JSON rules file
    script = litreview             ; mock: built-in lit-review responder instead
    endpoint = http://localhost:8000/v1
    model = gpt-oss-20b
    api_key_env = OPENAI_API_KEY
    timeout = 60
    retries = 3
    max_response = 2048

    [eval]
    n_items = 80
    runs = 10
    seed = 42
    context_limit = 16384
    out_dir = eval_out

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .backend import HTTPBackend, LLMBackend, MockBackend, load_mock_policy
from .context import MIN_CONTEXT_BUDGET, ConsolidationPolicy
from .errors import ConfigError
from .hierarchy import MODES, AgentSpec, EngineConfig, load_hierarchy

BACKEND_KINDS = ("mock", "http")


@dataclass
class BackendConfig:
    kind: str = "mock"
    mock_policy: Path | None = None
    script: str = ""
    context_limit: int | None = None
    on_overflow: str | None = None
    endpoint: str = ""
    model: str = "mock"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    retries: int = 3
    max_response: int = 2048


@dataclass
class EvalConfig:
    n_items: int = 80
    runs: int = 10
    seed: int = 42
    per_item_summary_min: int = 1
    context_limit: int = 16_384
    on_overflow: str = "truncate_head"
    context_budget: int = 8192
    out_dir: Path = Path("eval_out")
    hierarchy_file: Path | None = None
    plot: bool = True


@dataclass
class RunConfig:
    source: Path
    workspace_root: Path = Path("work")
    task_id: str = ""
    objective: str = ""
    hierarchy_file: Path | None = None
    corpus_dir: Path | None = None
    mode: str = "file_centric"
    k: int = 10
    consolidation_interval: int = 25
    plan_budget: int = 1024
    progress_budget: int = 1024
    budget: int | None = None
    verbose_contexts: bool = False
    fsync: bool = True
    backend: BackendConfig = field(default_factory=BackendConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            k=self.k,
            consolidation=ConsolidationPolicy(self.consolidation_interval, self.plan_budget,
                                              self.progress_budget),
            mode=self.mode, verbose_contexts=self.verbose_contexts,
            max_response=self.backend.max_response,
        )

    def require_run(self) -> None:
        missing = [n for n in ("task_id", "objective") if not getattr(self, n)]
        if self.hierarchy_file is None:
            missing.append("hierarchy_file")
        if missing:
            raise ConfigError(f"[run] is missing {', '.join(missing)}")

    def load_specs(self) -> list[AgentSpec]:
        if self.hierarchy_file is None:
            raise ConfigError("[run] hierarchy_file is required")
        specs = load_hierarchy(self.hierarchy_file)
        if self.budget is not None:
            specs = [replace(s, context_budget=self.budget) for s in specs]
        return specs

    def make_backend(self, seed: int = 0) -> LLMBackend:
        b = self.backend
        if b.kind == "http":
            return HTTPBackend.from_env(b.endpoint, b.model, b.api_key_env or None,
                                        timeout=b.timeout, retries=b.retries)
        if b.script == "litreview":
            from .eval.litreview import litreview_mock

            return litreview_mock(seed, b.context_limit or 1_000_000,
                                  b.on_overflow or "truncate_head")
        policy = load_mock_policy(b.mock_policy) if b.mock_policy else None
        backend = MockBackend(policy) if policy else MockBackend()
        if b.context_limit is not None:
            backend.policy.context_limit = b.context_limit
        if b.on_overflow is not None:
            backend.policy.on_overflow = b.on_overflow
        return backend


def _path(base: Path, value: str | None) -> Path | None:
    if not value:
        return None
    p = Path(os.path.expanduser(value))
    return p if p.is_absolute() else base / p


def load_config(path: str | os.PathLike) -> RunConfig:
    """Parse and validate a config file; every problem raises ConfigError."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    base = path.resolve().parent
    try:
        return _build(parser, path, base)
    except (ValueError, configparser.Error) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def _build(p: configparser.ConfigParser, path: Path, base: Path) -> RunConfig:
    run = p["run"] if p.has_section("run") else {}
    ctx = p["context"] if p.has_section("context") else {}
    be = p["backend"] if p.has_section("backend") else {}
    ev = p["eval"] if p.has_section("eval") else {}

    def geti(sec, key, default):
        return int(sec[key]) if key in sec else default

    def getb(sec, key, default):
        if key not in sec:
            return default
        v = sec[key].strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: not a boolean: {sec[key]!r}")

    backend = BackendConfig(
        kind=be.get("kind", "mock").strip(),
        mock_policy=_path(base, be.get("mock_policy")),
        script=be.get("script", "").strip(),
        context_limit=geti(be, "context_limit", None),
        on_overflow=be.get("on_overflow") or None,
        endpoint=be.get("endpoint", ""),
        model=be.get("model", "mock"),
        api_key_env=be.get("api_key_env", "OPENAI_API_KEY"),
        timeout=float(be.get("timeout", 60)),
        retries=geti(be, "retries", 3),
        max_response=geti(be, "max_response", 2048),
    )
    evalc = EvalConfig(
        n_items=geti(ev, "n_items", 80),
        runs=geti(ev, "runs", 10),
        seed=geti(ev, "seed", 42),
        per_item_summary_min=geti(ev, "per_item_summary_min", 1),
        context_limit=geti(ev, "context_limit", 16_384),
        on_overflow=ev.get("on_overflow", "truncate_head"),
        context_budget=geti(ev, "context_budget", 8192),
        out_dir=_path(base, ev.get("out_dir", "eval_out")),
        hierarchy_file=_path(base, ev.get("hierarchy_file")),
        plot=getb(ev, "plot", True),
    )
    cfg = RunConfig(
        source=path,
        workspace_root=_path(base, run.get("workspace_root", "work")),
        task_id=run.get("task_id", "").strip(),
        objective=run.get("objective", "").strip(),
        hierarchy_file=_path(base, run.get("hierarchy_file")),
        corpus_dir=_path(base, run.get("corpus_dir")),
        mode=run.get("mode", "file_centric").strip(),
        k=geti(ctx, "k", 10),
        consolidation_interval=geti(ctx, "consolidation_interval", 25),
        plan_budget=geti(ctx, "plan_budget", 1024),
        progress_budget=geti(ctx, "progress_budget", 1024),
        budget=geti(ctx, "budget", None),
        verbose_contexts=getb(ctx, "verbose_contexts", False),
        fsync=getb(run, "fsync", True),
        backend=backend,
        eval=evalc,
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    problems = []
    if cfg.mode not in MODES:
        problems.append(f"mode must be one of {MODES}")
    if cfg.k < 1:
        problems.append("k must be >= 1")
    if cfg.consolidation_interval < 1:
        problems.append("consolidation_interval must be >= 1")
    if cfg.budget is not None and cfg.budget < MIN_CONTEXT_BUDGET:
        problems.append(f"budget must be >= {MIN_CONTEXT_BUDGET}")
    if cfg.eval.context_budget < MIN_CONTEXT_BUDGET:
        problems.append(f"eval context_budget must be >= {MIN_CONTEXT_BUDGET}")
    if cfg.eval.n_items < 1 or cfg.eval.runs < 1:
        problems.append("eval n_items and runs must be >= 1")
    for name, p in (("hierarchy_file", cfg.hierarchy_file), ("corpus_dir", cfg.corpus_dir),
                    ("mock_policy", cfg.backend.mock_policy),
                    ("eval hierarchy_file", cfg.eval.hierarchy_file)):
        if p is not None and not p.exists():
            problems.append(f"{name} does not exist: {p}")
    b = cfg.backend
    if b.kind not in BACKEND_KINDS:
        problems.append(f"backend kind must be one of {BACKEND_KINDS}")
    if b.kind == "http" and not (b.endpoint and b.model):
        problems.append("http backend needs endpoint and model")
    if b.script not in ("", "litreview"):
        problems.append(f"unknown mock script {b.script!r}")
    if b.on_overflow not in (None, "error", "truncate_head") \
            or cfg.eval.on_overflow not in ("error", "truncate_head"):
        problems.append("on_overflow must be 'error' or 'truncate_head'")
    if b.retries < 1:
        problems.append("retries must be >= 1")
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems))

