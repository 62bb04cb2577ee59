"""Main reasoning loop for problem solving and report generation.

The backbone model generates until one of the mode's pause markers, the
runtime executes the tool, splices its output into the chain and lets the
model carry on.  Termination is EOS, the token budget, or a fatal tool error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import prompts
from .explorer import DeepWebExplorer, ExplorerBudget, ExplorerRequest
from .llm import (EOS, LENGTH, STOP_HIT, GenerationParams, LLMClient, LLMError, RequestRejected, ScriptError,
                  TransportError, estimate_tokens, user)
from .protocol import DEFAULT_MARKERS, MarkerTable, StreamCursor, Tool, strip_spans, trailing_call
from .web import (FixtureMiss, InvalidURL, PageContent, PageUnavailable, ProviderError, QuotaExceeded,
                  UnsupportedContent, WebAccess)
from .workshop import DocumentMemory, ReportState, ReportWorkshop, WorkshopError

logger = logging.getLogger(__name__)

PROBLEM_SOLVING = "problem_solving"
REPORT = "report_generation"
MODES = (PROBLEM_SOLVING, REPORT)

TERM_EOS = "eos"
TERM_LENGTH = "length_limit"
TERM_ERROR = "error"

PREVIOUSLY_SEARCHED = "[This query was previously searched; the earlier result is repeated below.]"
REPORT_TOOLS = {Tool.WRITE_SECTION, Tool.CHECK_ARTICLE, Tool.EDIT_ARTICLE}


def mode_stops(mode: str, markers: MarkerTable = DEFAULT_MARKERS) -> tuple[str, ...]:
    if mode == PROBLEM_SOLVING:
        return (markers.end(Tool.SEARCH_QUERY),)
    return (markers.end(Tool.SEARCH_QUERY), markers.end(Tool.WRITE_SECTION),
            markers.end(Tool.EDIT_ARTICLE), markers.begin(Tool.CHECK_ARTICLE))


@dataclass
class TaskSpec:
    query: str
    mode: str = PROBLEM_SOLVING
    task_id: str = ""
    template: str = "qwq"
    params: GenerationParams | None = None
    plan: str | None = None
    sample: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == PROBLEM_SOLVING and self.plan is not None:
            raise ValueError("a plan is only meaningful in report mode")
        if self.template not in prompts.TASK_TEMPLATES:
            raise ValueError(f"unknown instruction template {self.template!r}")

    @property
    def id(self) -> str:
        return self.task_id or hashlib.sha256(f"{self.mode}\n{self.query}".encode()).hexdigest()[:16]

    def instruction(self) -> str:
        if self.mode == PROBLEM_SOLVING:
            return prompts.problem_solving_prompt(self.query, self.template)
        return prompts.report_prompt(self.query, self.plan or "")

    def to_dict(self) -> dict:
        return {"task_id": self.id, "mode": self.mode, "query": self.query, "template": self.template,
                "plan": self.plan, "params": self.params.to_dict() if self.params else None,
                "sample": self.sample}

    @classmethod
    def from_dict(cls, d: dict) -> TaskSpec:
        params = d.get("params")
        return cls(query=d["query"], mode=d.get("mode", PROBLEM_SOLVING), task_id=d.get("task_id", ""),
                   template=d.get("template", "qwq"),
                   params=GenerationParams.from_dict(params) if params else None, plan=d.get("plan"),
                   sample=d.get("sample", 0))


# -- answer extraction -------------------------------------------------------

@dataclass(frozen=True)
class AnswerExtraction:
    pattern: str  # boxed | answer_prefix | last_five_lines_fallback
    value: str

    def to_dict(self) -> dict:
        return {"pattern": self.pattern, "value": self.value}


def _last_boxed(text: str) -> str | None:
    start = text.rfind("\\boxed{")
    while start >= 0:
        i = start + len("\\boxed{")
        depth = 1
        j = i
        while j < len(text):
            if text[j] == "{":
                depth += 1
            elif text[j] == "}":
                depth -= 1
                if depth == 0:
                    return text[i:j]
            j += 1
        # unbalanced; try an earlier one
        start = text.rfind("\\boxed{", 0, start)
    return None


_ANSWER = re.compile(r"ANSWER:[ \t]*(.*)")


def last_five_lines(text: str) -> str:
    return "\n".join(text.rstrip().split("\n")[-5:])


def extract_answer(chain: str, task: TaskSpec | None = None, markers: MarkerTable = DEFAULT_MARKERS
                   ) -> AnswerExtraction:
    """Boxed answer, else an ``ANSWER:`` line, else the last five lines."""
    text = strip_spans(chain, {Tool.SEARCH_RESULT, Tool.CLICK_RESULT, Tool.CHECK_ARTICLE}, markers)
    boxed = _last_boxed(text)
    if boxed is not None:
        return AnswerExtraction("boxed", boxed.strip())
    hits = _ANSWER.findall(text)
    for raw in reversed(hits):
        value = raw.replace("**", "").strip()
        if value:
            return AnswerExtraction("answer_prefix", value)
    return AnswerExtraction("last_five_lines_fallback", last_five_lines(text))


# -- trajectory --------------------------------------------------------------

@dataclass
class ToolCall:
    kind: str
    payload: str
    result: str
    cached: bool = False
    refused: bool = False
    error: bool = False
    detail: dict | None = None  # explorer session, intent, ...

    def to_dict(self) -> dict:
        return {"kind": self.kind, "payload": self.payload, "result": self.result, "cached": self.cached,
                "refused": self.refused, "error": self.error, "detail": self.detail}


@dataclass
class ReasoningTrajectory:
    task: TaskSpec
    prompt: str = ""
    chain: str = ""
    tool_calls: list[ToolCall] = field(default_factory=list)
    answer: AnswerExtraction | None = None
    termination: str | None = None
    error: str | None = None
    output_length: int = 0
    injected_tokens: int = 0
    defects: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    report: str | None = None
    plan: str | None = None

    @property
    def total_tool_calls(self) -> int:
        return sum(1 for c in self.tool_calls if not c.refused)

    @property
    def trajectory_id(self) -> str:
        return f"{self.task.id}:{self.task.sample}"

    @property
    def counters(self) -> dict:
        return {"total_tool_calls": self.total_tool_calls, "output_length": self.output_length,
                "injected_tokens": self.injected_tokens}

    def to_dict(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "task": self.task.to_dict(),
            "prompt": self.prompt,
            "chain": self.chain,
            "tool_calls": [c.to_dict() for c in self.tool_calls],
            "answer": self.answer.to_dict() if self.answer else None,
            "termination": self.termination,
            "error": self.error,
            "counters": self.counters,
            "defects": self.defects,
            "warnings": self.warnings,
            "report": self.report,
            "plan": self.plan,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


def write_trajectories(path: str | Path, trajectories) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write((t if isinstance(t, str) else t.to_json()) + "\n")


def load_trajectories(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- orchestrator ------------------------------------------------------------

class _Run:
    """Mutable state of one trajectory."""

    def __init__(self, task: TaskSpec, markers: MarkerTable):
        self.traj = ReasoningTrajectory(task)
        self.cursor = StreamCursor(markers=markers)
        self.search_cache: dict[str, str] = {}
        self.searches = 0
        self.memory = DocumentMemory()
        self.state = ReportState()

    def append(self, text: str) -> None:
        self.traj.chain += text
        self.cursor.feed(text)


class Orchestrator:
    def __init__(self, model: LLMClient, assistant: LLMClient, web: WebAccess, *,
                 markers: MarkerTable = DEFAULT_MARKERS, tool_cap: int = 15, search_k: int = 10,
                 explorer_budget: ExplorerBudget | None = None, explorer: DeepWebExplorer | None = None,
                 workshop: ReportWorkshop | None = None):
        self.model = model
        self.assistant = assistant
        self.web = web
        self.markers = markers
        self.tool_cap = tool_cap
        self.search_k = search_k
        self.explorer_budget = explorer_budget or ExplorerBudget()
        self.explorer = explorer or DeepWebExplorer(model, assistant, web, markers, search_k=search_k)
        self.workshop = workshop or ReportWorkshop(assistant)

    # public operations

    def solve(self, task: TaskSpec) -> ReasoningTrajectory:
        if task.mode != PROBLEM_SOLVING:
            raise ValueError("solve() takes a problem-solving task")
        run = self._loop(task)
        traj = run.traj
        if traj.termination in (TERM_EOS, TERM_LENGTH):
            traj.answer = extract_answer(traj.chain, task, self.markers)
        return traj

    def write_report(self, task: TaskSpec) -> tuple[ReasoningTrajectory, ReportState]:
        if task.mode != REPORT:
            raise ValueError("write_report() takes a report-generation task")
        plan = task.plan if task.plan is not None else self.generate_plan(task.query)
        run = self._loop(replace(task, plan=plan))
        run.traj.task = task
        run.traj.plan = plan
        run.traj.report = run.state.report
        return run.traj, run.state

    def generate_plan(self, question: str) -> str:
        out = self.assistant.generate([user(prompts.render("search_plan", query=question))])
        return out.text.strip()

    def generate_search_intent(self, chain_so_far: str, query: str | None = None) -> str:
        if not chain_so_far.strip():
            raise ValueError("search intent needs a non-empty reasoning chain")
        fallback = query or ""
        if query is None:
            cur = StreamCursor(markers=self.markers)
            cur.feed(chain_so_far)
            fallback = cur.latest_payload(Tool.SEARCH_QUERY) or ""
        try:
            text = self.assistant.generate(
                [user(prompts.render("search_intent", previous_thoughts=chain_so_far))]).text.strip()
        except ScriptError:
            raise
        except LLMError as exc:
            logger.warning("search intent generation failed, using the raw query: %s", exc)
            return fallback
        return text or fallback

    # loop

    def _loop(self, task: TaskSpec) -> _Run:
        run = _Run(task, self.markers)
        traj = run.traj
        traj.prompt = task.instruction()
        history = [user(traj.prompt)]
        params = task.params or self.model.params
        stops = mode_stops(task.mode, self.markers)
        budget = params.max_new_tokens
        generated = 0
        started = False
        try:
            while True:
                remaining = budget - generated
                if remaining <= 0:
                    traj.termination = TERM_LENGTH
                    break
                p = params.with_(max_new_tokens=remaining, stop_sequences=stops)
                if started:
                    out = self.model.continue_generation(history, traj.chain, p)
                else:
                    out = self.model.generate(history, p)
                    started = True
                generated += out.usage.completion_tokens
                run.append(out.text)
                if out.stop_reason == EOS:
                    traj.termination = TERM_EOS
                    break
                if out.stop_reason == LENGTH:
                    traj.termination = TERM_LENGTH
                    break
                assert out.stop_reason == STOP_HIT
                self._dispatch(run, out.matched_stop)
        except (QuotaExceeded, TransportError, RequestRejected) as exc:
            logger.error("trajectory %s stopped: %s", task.id, exc)
            traj.termination = TERM_ERROR
            traj.error = f"{type(exc).__name__}: {exc}"
        traj.output_length = generated
        traj.defects = [d.to_dict() for d in run.cursor.finalize()]
        if task.mode == PROBLEM_SOLVING:
            for ev in run.cursor.events:
                if ev.tool in REPORT_TOOLS or ev.tool in (Tool.CLICK_LINK, Tool.CLICK_RESULT):
                    traj.warnings.append(f"inert out-of-mode {ev.tool.value} span at {ev.span[0]}")
        for w in traj.warnings:
            logger.warning("%s: %s", task.id, w)
        return run

    def _inject(self, run: _Run, text: str) -> None:
        run.append(text)
        run.traj.injected_tokens += estimate_tokens(text)

    def _wrap(self, tool: Tool, body: str) -> str:
        return "\n\n" + self.markers.wrap(tool, body) + "\n\n"

    def _dispatch(self, run: _Run, stop: str) -> None:
        m = self.markers
        if stop == m.end(Tool.SEARCH_QUERY):
            query = trailing_call(run.cursor, Tool.SEARCH_QUERY)
            if query is None:
                run.traj.warnings.append(f"orphan {stop} at {len(run.traj.chain) - len(stop)}")
                return
            result = self._search(run, query)
            self._inject(run, self._wrap(Tool.SEARCH_RESULT, result))
        elif stop == m.begin(Tool.CHECK_ARTICLE):
            outline = self.workshop.check_outline(run.state).render()
            run.traj.tool_calls.append(ToolCall("check_article", "", outline))
            self._inject(run, (outline + "\n" if outline else "") + m.end(Tool.CHECK_ARTICLE) + "\n\n")
        elif stop == m.end(Tool.WRITE_SECTION):
            payload = trailing_call(run.cursor, Tool.WRITE_SECTION)
            if payload is None:
                run.traj.warnings.append(f"orphan {stop} at {len(run.traj.chain) - len(stop)}")
                return
            name, _, goal = payload.strip().partition("\n")
            try:
                run.state = self.workshop.write_section(run.state, run.memory, name.strip(), goal.strip(),
                                                        run.traj.task.query, run.traj.chain)
                run.traj.tool_calls.append(ToolCall("write_section", payload, ""))
            except WorkshopError as exc:
                run.traj.tool_calls.append(ToolCall("write_section", payload, str(exc), error=True))
                self._inject(run, f"\n\n[Section writing failed: {exc}]\n\n")
        elif stop == m.end(Tool.EDIT_ARTICLE):
            payload = trailing_call(run.cursor, Tool.EDIT_ARTICLE)
            if payload is None:
                run.traj.warnings.append(f"orphan {stop} at {len(run.traj.chain) - len(stop)}")
                return
            try:
                run.state = self.workshop.edit_report(run.state, run.memory, payload.strip())
                run.traj.tool_calls.append(ToolCall("edit_article", payload, ""))
            except WorkshopError as exc:
                run.traj.tool_calls.append(ToolCall("edit_article", payload, str(exc), error=True))
                self._inject(run, f"\n\n[Article editing failed: {exc}]\n\n")
        else:
            raise AssertionError(f"unexpected stop {stop!r}")

    def _search(self, run: _Run, query: str) -> str:
        traj = run.traj
        key = query.strip()
        if run.searches >= self.tool_cap:
            result = (f"Search limit reached ({self.tool_cap} searches). "
                      "Continue with the information already gathered.")
            traj.tool_calls.append(ToolCall("search", query, result, refused=True))
            return result
        run.searches += 1
        if key in run.search_cache:
            result = f"{PREVIOUSLY_SEARCHED}\n\n{run.search_cache[key]}"
            traj.tool_calls.append(ToolCall("search", query, result, cached=True))
            return result
        intent = self.generate_search_intent(traj.chain, query)
        try:
            hits = self.web.search(key, self.search_k)
        except (ProviderError, FixtureMiss, ValueError) as exc:
            result = f"Search failed: {exc}"
            traj.tool_calls.append(ToolCall("search", query, result, error=True, detail={"intent": intent}))
            return result
        pages: list[PageContent] = []
        for h in hits:
            try:
                pages.append(self.web.fetch(h.url))
            except (PageUnavailable, UnsupportedContent, FixtureMiss, InvalidURL) as exc:
                logger.info("skipping %s: %s", h.url, exc)
        session = self.explorer.run(ExplorerRequest(key, intent, pages, self.explorer_budget, hits))
        result = session.output
        if traj.task.mode == REPORT:
            run.memory.memorize(pages + session.pages)
        run.search_cache[key] = result
        traj.tool_calls.append(ToolCall("search", query, result, detail={
            "intent": intent, "hits": [h.to_dict() for h in hits], "explorer": session.to_dict()}))
        return result
