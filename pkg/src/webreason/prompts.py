"""Prompt templates shipped as text assets under ``templates/``."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib.resources import files

TEMPLATE_VERSION = "1"

_FIELD = re.compile(r"\{(\w+)\}")
RULE = "-" * 40


@lru_cache(maxsize=None)
def template(name: str) -> str:
    text = files("webreason").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")
    return text.rstrip("\n")


def fill(text: str, **fields: str) -> str:
    """Single-pass ``{name}`` substitution; unknown braces are left alone.

    Templates contain literal braces (``{[Relevant information]}``, JSON
    skeletons), so ``str.format`` is not usable.
    """
    missing = set(fields) - set(_FIELD.findall(text))
    if missing:
        raise KeyError(f"template has no field(s) {sorted(missing)}")
    return _FIELD.sub(lambda m: str(fields[m.group(1)]) if m.group(1) in fields else m.group(0), text)


def render(name: str, **fields: str) -> str:
    return fill(template(name), **fields)


TASK_TEMPLATES = {"qwq": "task_qwq", "r1": "task_r1"}


def problem_solving_prompt(question: str, style: str = "qwq") -> str:
    """Tool instruction followed by the model-family task instruction."""
    return template("problem_solving") + "\n\n" + render(TASK_TEMPLATES[style], question=question)


def report_prompt(question: str, plan: str) -> str:
    return render("report", question=question, plan=plan)


def explorer_prompt(search_query: str, search_intent: str, search_result: str) -> str:
    return render("explorer", search_query=search_query, search_intent=search_intent, search_result=search_result)


SLOTS = "ABCDE"
CRITERIA = ("Overall Comprehensiveness", "Thoroughness of Discussion", "Factuality", "Coherence")


def _system_list(n: int) -> str:
    letters = list(SLOTS[:n])
    return ", ".join(letters[:-1]) + " and " + letters[-1]


def judge_report_prompt(question: str, reports: list[str]) -> str:
    """Listwise report-quality prompt for 2 to 5 systems, slot order as given."""
    n = len(reports)
    if not 2 <= n <= 5:
        raise ValueError("listwise judging takes 2 to 5 reports")
    header = render("judge_report_header", system_list=_system_list(n))
    parts = [f"Research Question:\n\n{question}\n\n{header}\n"]
    for letter, text in zip(SLOTS, reports):
        parts.append(f"{RULE}\nResearch article generated by system {letter}:\n{RULE}\n\n{text}\n\n{RULE}\n")
    skeleton = ",\n".join(
        f'  "System {letter}": {{\n' + ",\n".join(f'    "{c}": ' for c in CRITERIA) + "\n  }"
        for letter in SLOTS[:n]
    )
    parts.append(
        f"Research Question:\n\n{question}\n\n{header}\n\n"
        "Please analyze each article and provide the final scores in the following JSON format:\n"
        f"```json\n{{\n{skeleton}\n}}\n```"
    )
    return "\n".join(parts)
