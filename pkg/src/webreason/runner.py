"""Batch execution: concurrent trajectories, then judging and Pass@1."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

from .config import Runtime, RunConfig
from .judge import UNPARSEABLE, JudgeVerdict, Pass1Summary, aggregate_pass1, judge_answer
from .llm import LLMClient, LLMError
from .orchestrator import Orchestrator, ReasoningTrajectory, TaskSpec, last_five_lines
from .web import WebError

logger = logging.getLogger(__name__)


@dataclass
class BatchTask:
    task_id: str
    question: str
    answer: str = ""
    split: str = ""
    template: str = "qwq"

    @classmethod
    def from_dict(cls, d: dict, line: int = 0) -> BatchTask:
        question = d.get("question", d.get("query"))
        if not question:
            raise ValueError(f"task on line {line} has no question")
        return cls(str(d.get("task_id") or f"task-{line}"), question, str(d.get("answer", "")),
                   d.get("split", ""), d.get("template", "qwq"))


def load_tasks(path: str | Path) -> list[BatchTask]:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if line.strip():
                tasks.append(BatchTask.from_dict(json.loads(line), no))
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError("task ids must be unique")
    return tasks


def make_orchestrator(rt: Runtime, cfg: RunConfig) -> Orchestrator:
    return Orchestrator(rt.model, rt.assistant, rt.web, tool_cap=cfg.tool_cap,
                        search_k=cfg.search.k, explorer_budget=cfg.explorer)


@dataclass
class BatchResult:
    trajectories: list[dict]
    verdicts: list[JudgeVerdict]
    summary: Pass1Summary

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "trajectories.jsonl", "w", encoding="utf-8") as fh:
            for t in self.trajectories:
                fh.write(json.dumps(t, ensure_ascii=False, sort_keys=True) + "\n")
        with open(out / "verdicts.jsonl", "w", encoding="utf-8") as fh:
            for v in self.verdicts:
                fh.write(json.dumps(v.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
        (out / "summary.json").write_text(json.dumps(self.summary.to_dict(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
        (out / "summary.csv").write_text(self.summary.to_csv(), encoding="utf-8")


def _solve_one(task: BatchTask, runtime_for: Callable[[BatchTask], Runtime], cfg: RunConfig
               ) -> ReasoningTrajectory | dict:
    spec = TaskSpec(task.question, task_id=task.task_id, template=task.template)
    try:
        return make_orchestrator(runtime_for(task), cfg).solve(spec)
    except (LLMError, WebError, OSError, ValueError) as exc:
        logger.error("task %s failed: %s", task.task_id, exc)
        return {"trajectory_id": f"{spec.id}:0", "task": spec.to_dict(), "termination": "error",
                "error": f"{type(exc).__name__}: {exc}", "answer": None, "chain": ""}


def run_batch(tasks: list[BatchTask], runtime_for: Callable[[BatchTask], Runtime], cfg: RunConfig,
              judges: Mapping[str, LLMClient], workers: int | None = None) -> BatchResult:
    """Solve concurrently, then judge in input order with the first judge."""
    if not tasks:
        raise ValueError("batch has no tasks")
    workers = workers or cfg.workers
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda t: _solve_one(t, runtime_for, cfg), tasks))
    judge = next(iter(judges.values()))
    verdicts = []
    dumps = []
    for task, res in zip(tasks, results):
        if isinstance(res, dict):
            dumps.append(res)
            verdicts.append(JudgeVerdict(task.task_id, UNPARSEABLE, "", res["trajectory_id"], task.split))
            continue
        dumps.append(res.to_dict())
        predicted = res.answer.value if res.answer else last_five_lines(res.chain)
        verdicts.append(judge_answer(judge, task.question, task.answer, predicted, task.task_id,
                                     trajectory_id=res.trajectory_id, split=task.split))
    return BatchResult(dumps, verdicts, aggregate_pass1(verdicts))
