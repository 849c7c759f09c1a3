"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .context import read_actions, read_contexts
from .errors import (
    ConfigError,
    FcAgentError,
    ParameterError,
    WorkspaceError,
    WorkspaceNotFoundError,
)
from .hierarchy import Engine, file_digest, validate_hierarchy
from .tools import Corpus, default_registry
from .workspace import TRANSITIONS_LOG, Workspace, committed_files

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
CORPUS_IDS = "{corpus_ids}"

logger = logging.getLogger("fcagent")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS so a flag given before the subcommand is not reset by the subparser
    common.add_argument("--verbose-contexts", action="store_true", default=argparse.SUPPRESS,
                        help="log the full text of every context, not just its hash")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="fcagent", parents=[common],
                                description="Long-horizon agent runtime with file-centric state.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run (or resume) a task")
    r.add_argument("--config", required=True)
    r.add_argument("--resume", action="store_true")

    e = sub.add_parser("eval", parents=[common], help="literature-review coverage evaluation")
    e.add_argument("--config", required=True)
    e.add_argument("--ablation", action="store_true",
                   help="run file_centric and compressed_context on the same seeds")

    i = sub.add_parser("inspect", parents=[common], help="read-only view of a task")
    i.add_argument("task_id")
    i.add_argument("--what", required=True, choices=("files", "actions", "contexts"))
    i.add_argument("--step", type=int)
    where = i.add_mutually_exclusive_group()
    where.add_argument("--config", help="take workspace_root from this config")
    where.add_argument("--root", help="workspace root directory (default: .)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    verbosity = getattr(args, "verbose", 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(verbosity, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "inspect":
            root = Path(args.root or ".")
            if args.config:
                root = load_config(args.config).workspace_root
            return cmd_inspect(root, args.task_id, args.what, args.step)
        cfg = load_config(args.config)
        if getattr(args, "verbose_contexts", False):
            cfg.verbose_contexts = True
        if args.command == "run":
            return cmd_resume(cfg) if args.resume else cmd_run(cfg)
        return cmd_eval(cfg, args.ablation)
    except (ConfigError, ParameterError, WorkspaceNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FcAgentError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


# -- run ---------------------------------------------------------------------

def _prepare(cfg: RunConfig):
    cfg.require_run()
    specs = cfg.load_specs()
    problems = validate_hierarchy(specs, default_registry().names())
    if problems:
        raise ConfigError("invalid hierarchy: " + "; ".join(problems))
    corpus = Corpus(cfg.corpus_dir) if cfg.corpus_dir else None
    return specs, corpus


def _print_outcome(outcome) -> int:
    print(f"status: {outcome.status}")
    print(f"steps_used: {outcome.steps_used}")
    print(f"result: {outcome.result_summary}")
    return EXIT_OK if outcome.status == "done" else EXIT_FAILURE


def cmd_run(cfg: RunConfig) -> int:
    """Start a new task; the hierarchy is validated before anything is created."""
    specs, corpus = _prepare(cfg)
    objective = cfg.objective
    if CORPUS_IDS in objective:
        objective = objective.replace(CORPUS_IDS, " ".join(corpus.ids() if corpus else []))
    backend = cfg.make_backend()
    try:
        ws = Workspace.init(cfg.workspace_root, cfg.task_id, fsync=cfg.fsync)
    except WorkspaceError as exc:
        raise ConfigError(f"{exc} (use --resume to continue it)") from exc
    engine = Engine(ws, specs, backend, corpus=corpus, config=cfg.engine_config(),
                    hierarchy_digest=file_digest(cfg.hierarchy_file))
    try:
        outcome = engine.run(objective)
    except FcAgentError as exc:
        logger.error("run aborted: %s", exc)
        return EXIT_FAILURE
    print(f"task: {ws.task_dir}")
    return _print_outcome(outcome)


def cmd_resume(cfg: RunConfig) -> int:
    specs, corpus = _prepare(cfg)
    task_dir = Path(cfg.workspace_root) / cfg.task_id
    if not task_dir.is_dir():
        raise WorkspaceNotFoundError(f"no task {cfg.task_id!r} under {cfg.workspace_root}")
    meta = Engine.read_meta(task_dir)
    if meta is not None and meta.get("status") == "done":
        print(f"already done: {meta.get('result_summary', '')}")
        return EXIT_OK
    ws = Workspace.resume(cfg.workspace_root, cfg.task_id, fsync=cfg.fsync)
    for note in ws.recovery_notes:
        print(f"recovered: {note}", file=sys.stderr)
    if meta is not None and meta.get("mode"):
        cfg.mode = meta["mode"]
    engine = Engine(ws, specs, cfg.make_backend(), corpus=corpus, config=cfg.engine_config(),
                    hierarchy_digest=file_digest(cfg.hierarchy_file))
    try:
        outcome = engine.resume()
    except ConfigError:
        raise
    except FcAgentError as exc:
        logger.error("resume aborted: %s", exc)
        return EXIT_FAILURE
    print(f"task: {ws.task_dir}")
    return _print_outcome(outcome)


# -- eval --------------------------------------------------------------------

def cmd_eval(cfg: RunConfig, ablation: bool) -> int:
    from .eval.litreview import LitReviewConfig, run_ablation_pair, run_litreview
    from .eval.report import write_reports
    from .hierarchy import load_hierarchy

    ev = cfg.eval
    out = Path(ev.out_dir)
    if (out / "runs").exists():
        raise ConfigError(f"{out / 'runs'} already exists; choose another out_dir")
    lr = LitReviewConfig(
        n_items=ev.n_items, runs=ev.runs, mode=cfg.mode, seed=ev.seed,
        per_item_summary_min=ev.per_item_summary_min, context_limit=ev.context_limit,
        context_budget=ev.context_budget, k=cfg.k,
        consolidation_interval=cfg.consolidation_interval,
        verbose_contexts=cfg.verbose_contexts, fsync=False, on_overflow=ev.on_overflow,
    )
    hierarchy = load_hierarchy(ev.hierarchy_file) if ev.hierarchy_file else None
    if cfg.backend.kind == "http":
        backend = cfg.make_backend()

        def factory(seed):
            return backend
    else:
        factory = None
    model = cfg.backend.model
    if ablation:
        result = run_ablation_pair(lr, out, factory, hierarchy=hierarchy, model=model)
    else:
        result = run_litreview(lr, out, factory, hierarchy=hierarchy, model=model)
    paths = write_reports(out, result, plot=ev.plot)
    print(paths["table"].read_text(), end="")
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return EXIT_OK


# -- inspect -----------------------------------------------------------------

def cmd_inspect(root: Path, task_id: str, what: str, step: int | None = None) -> int:
    """Render one view of a task without touching any of its files."""
    task_dir = Path(root) / task_id
    if not (task_dir / TRANSITIONS_LOG).is_file():
        raise WorkspaceNotFoundError(f"no task {task_id!r} under {root}")
    if what == "files":
        files, problem = committed_files(task_dir)
        print("path\tbytes\tcreated_step\tmodified_step")
        for rel, art in sorted(files.items()):
            print(f"{rel}\t{art.byte_size}\t{art.created_step}\t{art.modified_step}")
        if problem:
            print(f"# transition log: {problem}")
    elif what == "actions":
        for rec in read_actions(task_dir):
            if step is None or rec.step == step:
                print(rec.to_json())
    else:
        entries = [c for c in read_contexts(task_dir) if step is None or c["step"] == step]
        if step is not None and not entries:
            print(f"error: no context logged at step {step}", file=sys.stderr)
            return EXIT_USAGE
        for c in entries:
            print(f"### context step={c['step']} agent={c['agent_id']} session={c['session']} "
                  f"size={c['size']} sha256={c['sha256']}")
            if step is not None:
                if "text" in c:
                    sys.stdout.write(c["text"] + "\n")
                else:
                    print("(text not logged; rerun with --verbose-contexts)")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
