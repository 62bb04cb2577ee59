"""Preference pairs from sampled trajectories, the DPO loss, and round bookkeeping."""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

CORRECT, INCORRECT, UNKNOWN = "correct", "incorrect", "unknown"
RULE_CORRECTNESS = "correctness"
RULE_TOOLS = "tool_efficiency"
RULE_CONCISE = "conciseness"
DEFAULT_GAMMA = 2.0


@dataclass(frozen=True)
class TrajectoryRecord:
    task_id: str
    chain: str
    correct: str = UNKNOWN
    total_tool_calls: int = 0
    output_length: int = 0
    report_quality: float | None = None
    instruction: str = ""
    query: str = ""
    index: int = 0
    injected_tokens: int = 0
    trajectory_id: str = ""

    def __post_init__(self):
        if self.correct not in (CORRECT, INCORRECT, UNKNOWN):
            raise ValueError(f"correct must be correct/incorrect/unknown, got {self.correct!r}")
        if self.total_tool_calls < 0:
            raise ValueError("total_tool_calls must be >= 0")

    @property
    def is_report(self) -> bool:
        return self.report_quality is not None

    def length(self, include_injected: bool = False) -> int:
        return self.output_length + (self.injected_tokens if include_injected else 0)


@dataclass(frozen=True)
class PreferencePair:
    task_id: str
    instruction: str
    query: str
    chosen: str
    rejected: str
    rule: str
    margin: dict = field(default_factory=dict)
    chosen_index: int = 0
    rejected_index: int = 0

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "instruction": self.instruction, "query": self.query,
                "chosen": self.chosen, "rejected": self.rejected, "rule": self.rule, "margin": self.margin,
                "chosen_index": self.chosen_index, "rejected_index": self.rejected_index}


def _pair(w: TrajectoryRecord, l: TrajectoryRecord, rule: str, margin: dict) -> PreferencePair | None:
    if w.chain == l.chain:
        return None
    return PreferencePair(w.task_id, w.instruction or l.instruction, w.query or l.query, w.chain, l.chain,
                          rule, margin, w.index, l.index)


def compare(a: TrajectoryRecord, b: TrajectoryRecord, gamma: float = DEFAULT_GAMMA,
            include_injected: bool = False) -> PreferencePair | None:
    """Apply the prioritized rules: correctness, then fewer tool calls, then conciseness."""
    if a.task_id != b.task_id:
        raise ValueError(f"records belong to different tasks: {a.task_id!r} vs {b.task_id!r}")
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")

    if a.is_report and b.is_report:
        if a.report_quality != b.report_quality:
            w, l = (a, b) if a.report_quality > b.report_quality else (b, a)
            return _pair(w, l, RULE_CORRECTNESS, {"quality_delta": w.report_quality - l.report_quality})
        # equal quality: treated like two correct answers
    else:
        ca, cb = a.correct == CORRECT, b.correct == CORRECT
        if ca != cb:
            w, l = (a, b) if ca else (b, a)
            return _pair(w, l, RULE_CORRECTNESS, {})
        if not ca:
            return None

    if a.total_tool_calls != b.total_tool_calls:
        w, l = (a, b) if a.total_tool_calls < b.total_tool_calls else (b, a)
        return _pair(w, l, RULE_TOOLS, {"call_delta": l.total_tool_calls - w.total_tool_calls})

    la, lb = a.length(include_injected), b.length(include_injected)
    lo, hi = min(la, lb), max(la, lb)
    if hi == 0:
        return None
    ratio = math.inf if lo == 0 else hi / lo
    if ratio > gamma:
        w, l = (a, b) if la < lb else (b, a)
        return _pair(w, l, RULE_CONCISE, {"length_ratio": ratio})
    return None


def build_pairs(records: Iterable[TrajectoryRecord] | dict, gamma: float = DEFAULT_GAMMA,
                include_injected: bool = False) -> list[PreferencePair]:
    """Compare every unordered pair within each task group, in (task id, index) order."""
    if isinstance(records, dict):
        records = [r for group in records.values() for r in group]
    groups: dict[str, list[TrajectoryRecord]] = defaultdict(list)
    for r in records:
        groups[r.task_id].append(r)
    pairs = []
    for task_id in sorted(groups):
        group = sorted(groups[task_id], key=lambda r: (r.index, r.trajectory_id))
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                p = compare(group[i], group[j], gamma, include_injected)
                if p is not None:
                    pairs.append(p)
    return pairs


def write_pairs(path: str | Path, pairs: list[PreferencePair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


# -- DPO loss ----------------------------------------------------------------

@dataclass(frozen=True)
class LogProbSet:
    logp_w_policy: float
    logp_w_ref: float
    logp_l_policy: float
    logp_l_ref: float
    beta: float = 0.1

    def __post_init__(self):
        vals = (self.logp_w_policy, self.logp_w_ref, self.logp_l_policy, self.logp_l_ref, self.beta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("log-probabilities and beta must be finite")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")

    @property
    def margin(self) -> float:
        return (self.logp_w_policy - self.logp_w_ref) - (self.logp_l_policy - self.logp_l_ref)


def softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def dpo_loss(lp: LogProbSet) -> float:
    """-log sigmoid(beta * margin), in nats."""
    return softplus(-lp.beta * lp.margin)


def dpo_grad_w_policy(lp: LogProbSet) -> float:
    """Analytic derivative of :func:`dpo_loss` with respect to ``logp_w_policy``."""
    return -lp.beta * sigmoid(-lp.beta * lp.margin)


# -- iterative rounds --------------------------------------------------------

@dataclass(frozen=True)
class RoundState:
    round: int = 0
    pairs: tuple[PreferencePair, ...] = ()
    reference_tag: str = "base"

    @staticmethod
    def policy_tag(round_index: int) -> str:
        return f"round-{round_index}"


def advance_round(state: RoundState, new_pairs: list[PreferencePair]) -> RoundState:
    """Replace the pair set and make the current policy the next reference."""
    if not new_pairs:
        raise ValueError("a round needs at least one preference pair")
    return RoundState(state.round + 1, tuple(new_pairs), RoundState.policy_tag(state.round))
