"""Command-line entry point."""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import sys
from datetime import date
from pathlib import Path

import click

from . import prefs
from .config import ConfigError, RunConfig, build_judges, build_runtime, load_config
from .judge import aggregate_pass1, average_sheets, judge_answer, judge_reports
from .llm import ScriptError, TranscriptError, TransportError, RequestRejected
from .orchestrator import REPORT, TaskSpec, write_trajectories
from .runner import load_tasks, make_orchestrator, run_batch
from .web import WebError

logger = logging.getLogger("webreason")

EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_SCRIPT = 4


def _guard(fn):
    """Map runtime failures onto distinct exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, TranscriptError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except ScriptError as exc:
            click.echo(f"script error: {exc}", err=True)
            sys.exit(EXIT_SCRIPT)
        except (TransportError, RequestRejected, WebError) as exc:
            click.echo(f"transport error: {exc}", err=True)
            sys.exit(EXIT_TRANSPORT)

    return wrapper


def _config(ctx: click.Context, **overrides) -> RunConfig:
    cfg = load_config(ctx.obj.get("config"))
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, Path(value) if key in ("transcript", "judge_transcript", "fixtures", "output")
                    else value)
    return cfg


def _out_dir(cfg: RunConfig, explicit: str | None, key: str) -> Path:
    if explicit:
        out = Path(explicit)
    else:
        out = cfg.output / date.today().isoformat() / hashlib.sha256(key.encode("utf-8")).hexdigest()[:12]
    out.mkdir(parents=True, exist_ok=True)
    return out


mode_opt = click.option("--mode", type=click.Choice(["live", "record", "replay"]), default=None)
transcript_opt = click.option("--transcript", type=click.Path(dir_okay=False), default=None,
                              help="Transcript to replay from or record into.")
fixtures_opt = click.option("--fixtures", type=click.Path(file_okay=False), default=None,
                            help="Web fixture directory.")
out_opt = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="TOML configuration file.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config_path, verbose):
    """Web-searching reasoning agent runtime."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config"] = config_path


@main.command()
@click.argument("question")
@mode_opt
@transcript_opt
@fixtures_opt
@out_opt
@click.option("--template", type=click.Choice(["qwq", "r1"]), default=None)
@click.option("--task-id", default="")
@click.pass_context
@_guard
def solve(ctx, question, mode, transcript, fixtures, out, template, task_id):
    """Answer QUESTION; prints the answer and writes trajectory.jsonl."""
    if not question.strip():
        raise click.UsageError("question must be non-empty")
    cfg = _config(ctx, mode=mode, transcript=transcript, fixtures=fixtures, template=template).validate()
    rt = build_runtime(cfg)
    traj = make_orchestrator(rt, cfg).solve(TaskSpec(question, task_id=task_id, template=cfg.template))
    out_dir = _out_dir(cfg, out, question)
    write_trajectories(out_dir / "trajectory.jsonl", [traj])
    if traj.termination == "error":
        click.echo(f"trajectory ended with an error: {traj.error}", err=True)
        sys.exit(EXIT_TRANSPORT)
    click.echo(traj.answer.value if traj.answer else "")


@main.command()
@click.argument("question")
@mode_opt
@transcript_opt
@fixtures_opt
@out_opt
@click.option("--plan-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Use this research plan instead of generating one.")
@click.option("--task-id", default="")
@click.pass_context
@_guard
def report(ctx, question, mode, transcript, fixtures, out, plan_file, task_id):
    """Write a research report on QUESTION to report.md."""
    if not question.strip():
        raise click.UsageError("question must be non-empty")
    cfg = _config(ctx, mode=mode, transcript=transcript, fixtures=fixtures).validate()
    plan = Path(plan_file).read_text(encoding="utf-8").strip() if plan_file else None
    rt = build_runtime(cfg)
    traj, state = make_orchestrator(rt, cfg).write_report(TaskSpec(question, REPORT, task_id=task_id, plan=plan))
    out_dir = _out_dir(cfg, out, question)
    write_trajectories(out_dir / "trajectory.jsonl", [traj])
    (out_dir / "report.md").write_text(state.report + "\n", encoding="utf-8")
    if traj.termination == "error":
        click.echo(f"trajectory ended with an error: {traj.error}", err=True)
        sys.exit(EXIT_TRANSPORT)
    click.echo(str(out_dir / "report.md"))


@main.command()
@click.argument("tasks", type=click.Path(exists=True, dir_okay=False))
@mode_opt
@click.option("--transcripts", type=click.Path(file_okay=False), default=None,
              help="Replay: directory of <task_id>.jsonl scripts plus judge.jsonl.")
@fixtures_opt
@out_opt
@click.option("--workers", type=int, default=None)
@click.pass_context
@_guard
def batch(ctx, tasks, mode, transcripts, fixtures, out, workers):
    """Solve every task in TASKS (JSON Lines), judge, and report Pass@1."""
    try:
        task_list = load_tasks(tasks)
    except (ValueError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"bad task file: {exc}")
    if not task_list:
        raise click.UsageError("task file is empty")
    cfg = _config(ctx, mode=mode, fixtures=fixtures, workers=workers)
    if cfg.mode == "replay":
        if not transcripts:
            raise ConfigError("replay batch requires --transcripts")
        tdir = Path(transcripts)
        cfg.transcript = tdir / "judge.jsonl"
        cfg.validate()

        def runtime_for(task):
            return build_runtime(cfg, tdir / f"{task.task_id}.jsonl")

        judges = build_judges(cfg, tdir / "judge.jsonl")
    else:
        cfg.validate()
        shared = build_runtime(cfg)

        def runtime_for(task):
            return shared

        judges = build_judges(cfg)
    result = run_batch(task_list, runtime_for, cfg, judges)
    out_dir = _out_dir(cfg, out, Path(tasks).read_text(encoding="utf-8"))
    result.write(out_dir)
    s = result.summary
    click.echo(f"Pass@1 {s.correct}/{s.total} = {s.overall:.4f}")


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def records_from_files(trajectories: list[dict], verdicts: list[dict]) -> list[prefs.TrajectoryRecord]:
    """Join trajectory dumps with verdicts by trajectory id (task id when unambiguous)."""
    by_traj = {}
    for t in trajectories:
        by_traj[t["trajectory_id"]] = t
    joined: dict[str, dict] = {}
    unknown = []
    for v in verdicts:
        key = v.get("trajectory_id")
        if not key:
            tid = v.get("task_id")
            matches = [k for k, t in by_traj.items() if t["task"]["task_id"] == tid]
            key = matches[0] if len(matches) == 1 else None
        if key is None or key not in by_traj:
            unknown.append(v.get("trajectory_id") or v.get("task_id"))
            continue
        joined[key] = v
    if unknown:
        raise ConfigError(f"verdicts reference unknown trajectories: {sorted(map(str, unknown))}")
    records = []
    for key, t in by_traj.items():
        v = joined.get(key)
        if v is None:
            logger.warning("no verdict for trajectory %s; excluded", key)
            continue
        verdict = v.get("verdict", "unknown")
        correct = verdict if verdict in (prefs.CORRECT, prefs.INCORRECT) else prefs.UNKNOWN
        counters = t.get("counters", {})
        records.append(prefs.TrajectoryRecord(
            task_id=t["task"]["task_id"], chain=t.get("chain", ""), correct=correct,
            total_tool_calls=counters.get("total_tool_calls", 0), output_length=counters.get("output_length", 0),
            injected_tokens=counters.get("injected_tokens", 0), report_quality=v.get("report_quality"),
            instruction=t.get("prompt", ""), query=t["task"]["query"], index=t["task"].get("sample", 0),
            trajectory_id=key,
        ))
    return records


@main.command("build-prefs")
@click.argument("trajectories", type=click.Path(exists=True, dir_okay=False))
@click.argument("verdicts", type=click.Path(exists=True, dir_okay=False))
@click.option("--gamma", type=float, default=prefs.DEFAULT_GAMMA, show_default=True)
@click.option("--include-injected", is_flag=True, help="Count injected tool output in output length.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="pairs.jsonl", show_default=True)
@_guard
def build_prefs(trajectories, verdicts, gamma, include_injected, out_path):
    """Build preference pairs from trajectories joined with verdicts."""
    if gamma <= 1:
        raise click.BadParameter("gamma must exceed 1", param_hint="--gamma")
    records = records_from_files(_read_jsonl(trajectories), _read_jsonl(verdicts))
    pairs = prefs.build_pairs(records, gamma, include_injected)
    prefs.write_pairs(out_path, pairs)
    click.echo(f"{len(pairs)} pairs -> {out_path}")


@main.command()
@click.argument("inputs", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(["answers", "reports"]), default="answers", show_default=True)
@mode_opt
@transcript_opt
@out_opt
@click.pass_context
@_guard
def judge(ctx, inputs, kind, mode, transcript, out):
    """Judge predictions (answers) or competing reports from INPUTS (JSON Lines)."""
    cfg = _config(ctx, mode=mode, judge_transcript=transcript)
    if cfg.mode != "replay":
        cfg.validate()
    judges = build_judges(cfg)
    rows = _read_jsonl(inputs)
    if not rows:
        raise click.UsageError("input file is empty")
    out_dir = _out_dir(cfg, out, Path(inputs).read_text(encoding="utf-8"))
    if kind == "answers":
        client = next(iter(judges.values()))
        verdicts = [judge_answer(client, r["question"], str(r["labeled"]), str(r["predicted"]), r.get("task_id", ""),
                                 split=r.get("split", "")) for r in rows]
        with open(out_dir / "verdicts.jsonl", "w", encoding="utf-8") as fh:
            for v in verdicts:
                fh.write(json.dumps(v.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
        s = aggregate_pass1(verdicts)
        (out_dir / "summary.json").write_text(json.dumps(s.to_dict(), indent=2, sort_keys=True) + "\n")
        click.echo(f"Pass@1 {s.correct}/{s.total} = {s.overall:.4f}")
        return
    with open(out_dir / "sheets.jsonl", "w", encoding="utf-8") as fh:
        for r in rows:
            sheets = judge_reports(judges, r["question"], r["reports"], r.get("seed"), r.get("task_id", ""))
            avg = average_sheets(sheets) if any(s.valid for s in sheets) else None
            fh.write(json.dumps({"task_id": r.get("task_id", ""), "sheets": [s.to_dict() for s in sheets],
                                 "average": avg}, sort_keys=True) + "\n")
            if avg:
                click.echo(f"{r.get('task_id', '')}: " + ", ".join(
                    f"system {i}: {a['overall']:.2f}" for i, a in enumerate(avg)))


@main.command("replay-verify")
@click.argument("trajectory", type=click.Path(exists=True, dir_okay=False))
@click.option("--transcript", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--fixtures", type=click.Path(exists=True, file_okay=False), required=True)
@click.pass_context
@_guard
def replay_verify(ctx, trajectory, transcript, fixtures):
    """Re-run a recorded trajectory and check it reproduces byte-for-byte."""
    cfg = _config(ctx, mode="replay", transcript=transcript, fixtures=fixtures).validate()
    lines = [line.rstrip("\n") for line in open(trajectory, encoding="utf-8") if line.strip()]
    if len(lines) != 1:
        raise ConfigError("replay-verify takes a file with exactly one trajectory")
    recorded = json.loads(lines[0])
    task = TaskSpec.from_dict(recorded["task"])
    rt = build_runtime(cfg)
    orch = make_orchestrator(rt, cfg)
    traj = orch.write_report(task)[0] if task.mode == REPORT else orch.solve(task)
    if traj.to_json() != lines[0]:
        click.echo(f"MISMATCH {recorded['trajectory_id']}", err=True)
        sys.exit(1)
    if rt.script is not None and not rt.script.exhausted:
        click.echo(f"MISMATCH {recorded['trajectory_id']}: transcript has unused records", err=True)
        sys.exit(1)
    click.echo(f"OK {recorded['trajectory_id']}")


if __name__ == "__main__":
    main()
