"""LLM-as-judge: answer equivalence, listwise report scoring and Pass@1."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import prompts
from .llm import ChatTurn, LLMClient, LLMError, ScriptError, user
from .prompts import CRITERIA, SLOTS

logger = logging.getLogger(__name__)

CORRECT, INCORRECT, UNPARSEABLE = "correct", "incorrect", "unparseable"
REASK = "Your reply could not be parsed. Reply with only the JSON object in the requested format."

_JSON_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)\n\s*```", re.DOTALL)


@dataclass(frozen=True)
class JudgeVerdict:
    task_id: str
    verdict: str
    raw: str = ""
    trajectory_id: str = ""
    split: str = ""

    @property
    def is_correct(self) -> bool:
        return self.verdict == CORRECT

    def to_dict(self) -> dict:
        d = {"task_id": self.task_id, "verdict": self.verdict, "raw": self.raw}
        if self.trajectory_id:
            d["trajectory_id"] = self.trajectory_id
        if self.split:
            d["split"] = self.split
        return d

    @classmethod
    def from_dict(cls, d: dict) -> JudgeVerdict:
        return cls(d["task_id"], d["verdict"], d.get("raw", ""), d.get("trajectory_id", ""), d.get("split", ""))


def parse_verdict(reply: str) -> str:
    """Strict grammar: exactly "Correct" or "Incorrect" after trimming."""
    text = reply.strip()
    if text == "Correct":
        return CORRECT
    if text == "Incorrect":
        return INCORRECT
    return UNPARSEABLE


def judge_answer(judge: LLMClient, question: str, labeled: str, predicted: str, task_id: str = "",
                 **meta) -> JudgeVerdict:
    prompt = prompts.render("judge_answer", question=question, labeled_answer=labeled, pred_answer=predicted)
    try:
        raw = judge.generate([user(prompt)]).text
    except ScriptError:
        raise
    except LLMError as exc:
        logger.warning("judge failed for %s: %s", task_id, exc)
        return JudgeVerdict(task_id, UNPARSEABLE, "", **meta)
    return JudgeVerdict(task_id, parse_verdict(raw), raw, **meta)


# -- listwise report scoring -------------------------------------------------

@dataclass(frozen=True)
class ReportScoreSheet:
    judge: str
    permutation: tuple[int, ...]  # slot i shows system permutation[i]
    seed: int
    scores: tuple[dict, ...] = ()  # per true system, criterion -> score
    valid: bool = True
    raw: str = ""

    @property
    def slot_count(self) -> int:
        return len(self.permutation)

    def to_dict(self) -> dict:
        return {"judge": self.judge, "permutation": list(self.permutation), "seed": self.seed,
                "slot_count": self.slot_count, "scores": [dict(s) for s in self.scores],
                "valid": self.valid, "raw": self.raw}


def default_seed(key: str) -> int:
    return int(hashlib.sha256(key.encode("utf-8")).hexdigest()[:16], 16)


def shuffle_order(n: int, seed: int) -> tuple[int, ...]:
    perm = list(range(n))
    random.Random(seed).shuffle(perm)
    return tuple(perm)


def unpermute(slot_scores: Mapping[str, dict], permutation: Sequence[int]) -> tuple[dict, ...]:
    """Map per-slot-letter scores back to system order."""
    out: list[dict | None] = [None] * len(permutation)
    for slot, system in enumerate(permutation):
        out[system] = dict(slot_scores[SLOTS[slot]])
    return tuple(out)


def parse_score_json(text: str, n: int) -> dict[str, dict]:
    """Return {"A": {criterion: score}, ...}; raises ValueError on any shape problem."""
    m = _JSON_FENCE.search(text)
    if m:
        blob = m.group(1)
    else:
        i, j = text.find("{"), text.rfind("}")
        if i < 0 or j < i:
            raise ValueError("no JSON object in reply")
        blob = text[i:j + 1]
    data = json.loads(blob)
    out = {}
    for letter in SLOTS[:n]:
        entry = data.get(f"System {letter}")
        if not isinstance(entry, dict):
            raise ValueError(f"missing System {letter}")
        scores = {}
        for c in CRITERIA:
            v = entry.get(c)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0 <= v <= 10:
                raise ValueError(f"bad score for System {letter} / {c}: {v!r}")
            scores[c] = float(v)
        out[letter] = scores
    return out


def judge_reports(judges: Mapping[str, LLMClient], question: str, reports: Sequence[str],
                  seed: int | None = None, task_id: str = "") -> list[ReportScoreSheet]:
    """One sheet per judge; every judge sees the same shuffled order."""
    n = len(reports)
    if not 2 <= n <= 5:
        raise ValueError("listwise judging takes 2 to 5 reports")
    if seed is None:
        seed = default_seed(task_id or question)
    perm = shuffle_order(n, seed)
    prompt = prompts.judge_report_prompt(question, [reports[s] for s in perm])
    sheets = []
    for name, client in judges.items():
        history: list[ChatTurn] = [user(prompt)]
        raw = ""
        slot_scores = None
        for attempt in range(2):
            try:
                raw = client.generate(history).text
            except ScriptError:
                raise
            except LLMError as exc:
                logger.warning("report judge %s failed: %s", name, exc)
                break
            try:
                slot_scores = parse_score_json(raw, n)
                break
            except (ValueError, json.JSONDecodeError) as exc:
                logger.info("judge %s reply unparseable (attempt %d): %s", name, attempt + 1, exc)
                history = history + [ChatTurn("assistant", raw), user(REASK)]
        if slot_scores is None:
            sheets.append(ReportScoreSheet(name, perm, seed, (), False, raw))
        else:
            sheets.append(ReportScoreSheet(name, perm, seed, unpermute(slot_scores, perm), True, raw))
    return sheets


def average_sheets(sheets: Sequence[ReportScoreSheet]) -> list[dict]:
    """Per-system mean over valid sheets of each criterion, plus an ``overall`` mean."""
    valid = [s for s in sheets if s.valid]
    if not valid:
        raise ValueError("no valid score sheets to average")
    n = len(valid[0].scores)
    out = []
    for system in range(n):
        avg = OrderedDict((c, sum(s.scores[system][c] for s in valid) / len(valid)) for c in CRITERIA)
        avg["overall"] = sum(avg[c] for c in CRITERIA) / len(CRITERIA)
        out.append(dict(avg))
    return out


# -- Pass@1 ------------------------------------------------------------------

@dataclass(frozen=True)
class Pass1Summary:
    overall: float
    correct: int
    total: int
    splits: dict = field(default_factory=dict)  # split -> {"accuracy", "correct", "total"}

    def to_dict(self) -> dict:
        return {"overall": self.overall, "correct": self.correct, "total": self.total, "splits": self.splits}

    def to_csv(self) -> str:
        rows = ["split,correct,total,accuracy"]
        for name, s in self.splits.items():
            rows.append(f"{name},{s['correct']},{s['total']},{s['accuracy']:.4f}")
        rows.append(f"overall,{self.correct},{self.total},{self.overall:.4f}")
        return "\n".join(rows) + "\n"


def aggregate_pass1(verdicts: Sequence[JudgeVerdict], splits: Sequence[str] | None = None) -> Pass1Summary:
    """Accuracy per split and overall; unparseable counts as incorrect."""
    if not verdicts:
        raise ValueError("Pass@1 of an empty verdict list is undefined")
    if splits is None:
        splits = [v.split for v in verdicts]
    if len(splits) != len(verdicts):
        raise ValueError("splits must align with verdicts")
    per: dict[str, list[int]] = {}
    for v, s in zip(verdicts, splits):
        c = per.setdefault(s or "all", [0, 0])
        c[0] += v.is_correct
        c[1] += 1
    correct = sum(v.is_correct for v in verdicts)
    table = {k: {"accuracy": c / t, "correct": c, "total": t} for k, (c, t) in sorted(per.items())}
    return Pass1Summary(correct / len(verdicts), correct, len(verdicts), table)
