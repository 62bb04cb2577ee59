"""Report drafting: document memory, lexical retrieval and the write/check/edit tools."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import prompts
from .llm import LLMClient, LLMError, ScriptError, user
from .web import PageContent, normalize_url

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"[^\W_]+")
_ATX = re.compile(r"^ {0,3}(#{1,6})(?:[ \t]+(.*?))?(?:[ \t]+#+)?[ \t]*$")
_FENCE = re.compile(r"^ {0,3}(`{3,}|~{3,})")


class WorkshopError(Exception):
    """A writing tool failed; the report state is unchanged."""


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


# -- document memory ---------------------------------------------------------

@dataclass(frozen=True)
class MemoryEntry:
    url: str
    title: str
    text: str
    index: int

    @property
    def document(self) -> str:
        """The text the lexical index sees."""
        return f"{self.title}\n{self.text}" if self.title else self.text


@dataclass
class DocumentMemory:
    entries: list[MemoryEntry] = field(default_factory=list)
    _urls: set[str] = field(default_factory=set, repr=False)
    _tf: list[Counter] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def memorize(self, pages: list[PageContent]) -> int:
        added = 0
        for page in pages:
            url = normalize_url(page.url)
            if url in self._urls:
                continue
            entry = MemoryEntry(url, page.title, page.text, len(self.entries))
            self.entries.append(entry)
            self._urls.add(url)
            self._tf.append(Counter(tokenize(entry.document)))
            added += 1
        return added

    def scores(self, query: str) -> list[float]:
        """Cosine similarity of tf-idf vectors, smoothed idf ln((1+N)/(1+df)) + 1."""
        n = len(self.entries)
        df: Counter = Counter()
        for tf in self._tf:
            df.update(tf.keys())
        idf = {t: math.log((1 + n) / (1 + c)) + 1.0 for t, c in df.items()}
        q = Counter(t for t in tokenize(query) if t in idf)
        qv = {t: c * idf[t] for t, c in q.items()}
        qn = math.sqrt(sum(v * v for v in qv.values()))
        out = []
        for tf in self._tf:
            dn = math.sqrt(sum((c * idf[t]) ** 2 for t, c in tf.items()))
            if qn == 0 or dn == 0:
                out.append(0.0)
                continue
            dot = sum(v * tf[t] * idf[t] for t, v in qv.items() if t in tf)
            out.append(dot / (qn * dn))
        return out

    def retrieve(self, query: str, k: int = 5) -> list[MemoryEntry]:
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.scores(query)
        order = sorted(range(len(self.entries)), key=lambda i: (-scores[i], i))
        return [self.entries[i] for i in order[:k]]

    def export_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps({"url": e.url, "title": e.title, "text": e.text}, ensure_ascii=False) + "\n")


def retrieve(memory: DocumentMemory, query: str, k: int = 5) -> list[MemoryEntry]:
    return memory.retrieve(query, k)


# -- report state ------------------------------------------------------------

@dataclass(frozen=True)
class HistoryEntry:
    tool: str
    instruction: str
    digest: str

    def to_dict(self) -> dict:
        return {"tool": self.tool, "instruction": self.instruction, "sha256": self.digest}


@dataclass(frozen=True)
class ReportState:
    report: str = ""
    revision: int = 0
    history: tuple[HistoryEntry, ...] = ()

    def advance(self, tool: str, instruction: str, report: str) -> ReportState:
        digest = hashlib.sha256(report.encode("utf-8")).hexdigest()
        return replace(self, report=report, revision=self.revision + 1,
                       history=self.history + (HistoryEntry(tool, instruction, digest),))

    def to_dict(self) -> dict:
        return {"report": self.report, "revision": self.revision,
                "history": [h.to_dict() for h in self.history]}


@dataclass(frozen=True)
class Heading:
    level: int
    title: str
    line: int


def headings(markdown: str) -> list[Heading]:
    """ATX headings outside fenced code blocks."""
    out = []
    fence: str | None = None
    for no, line in enumerate(markdown.split("\n")):
        m = _FENCE.match(line)
        if fence is not None:
            if m and m.group(1)[0] == fence[0] and len(m.group(1)) >= len(fence) \
                    and not line.strip()[len(m.group(1)):].strip():
                fence = None
            continue
        if m:
            fence = m.group(1)
            continue
        h = _ATX.match(line)
        if h:
            out.append(Heading(len(h.group(1)), (h.group(2) or "").strip(), no))
    return out


@dataclass(frozen=True)
class Outline:
    items: tuple[tuple[int, str], ...] = ()

    @classmethod
    def of(cls, markdown: str) -> Outline:
        return cls(tuple((h.level, h.title) for h in headings(markdown)))

    @property
    def titles(self) -> list[str]:
        return [t for _, t in self.items]

    def render(self) -> str:
        return "\n".join("#" * level + " " + title for level, title in self.items)


def _strip_echo(body: str, section_name: str) -> str:
    """Drop a leading heading that just repeats the section name, and a wrapping fence."""
    body = body.strip()
    m = re.fullmatch(r"```(?:markdown|md)?\n(.*)\n```", body, re.DOTALL)
    if m:
        body = m.group(1).strip()
    first, _, rest = body.partition("\n")
    h = _ATX.match(first)
    if h and (h.group(2) or "").strip().lower() == section_name.strip().lower():
        body = rest.strip()
    return body


def place_section(report: str, section_name: str, body: str) -> str:
    """Append ``## section_name`` or replace the body of an existing one."""
    block = f"## {section_name}\n\n{body}".rstrip()
    lines = report.split("\n") if report else []
    hs = headings(report)
    target = next((h for h in hs if h.level == 2 and h.title == section_name), None)
    if target is None:
        return f"{report.rstrip()}\n\n{block}" if report.strip() else block
    nxt = next((h.line for h in hs if h.line > target.line and h.level <= 2), len(lines))
    before = "\n".join(lines[:target.line]).rstrip()
    after = "\n".join(lines[nxt:]).strip("\n")
    parts = [p for p in (before, block, after) if p]
    return "\n\n".join(parts)


def parse_edit_output(text: str) -> str:
    start = text.find("```markdown\n")
    if start < 0:
        raise WorkshopError("edit output lacks a ```markdown fenced block")
    body_start = start + len("```markdown\n")
    end = text.rfind("\n```")
    if end < body_start - 1:
        raise WorkshopError("edit output has an unterminated ```markdown block")
    body = text[body_start:max(end, body_start)].strip("\n")
    if not body.strip():
        raise WorkshopError("edit output has an empty ```markdown block")
    return body


def format_documents(entries: list[MemoryEntry], doc_chars: int | None = None) -> str:
    if not entries:
        return "None"
    blocks = []
    for i, e in enumerate(entries, 1):
        text = e.text[:doc_chars] if doc_chars else e.text
        blocks.append(f"**Document {i}:**\nTitle: {e.title}\nURL: {e.url}\n{text}")
    return "\n\n".join(blocks)


class ReportWorkshop:
    """The three writing tools, each executed by the assistant model."""

    def __init__(self, assistant: LLMClient, k: int = 5, doc_chars: int | None = None):
        self.assistant = assistant
        self.k = k
        self.doc_chars = doc_chars

    def _ask(self, prompt: str) -> str:
        try:
            return self.assistant.generate([user(prompt)]).text
        except ScriptError:
            raise
        except LLMError as exc:
            raise WorkshopError(f"assistant failed: {exc}") from exc

    def write_section(self, state: ReportState, memory: DocumentMemory, section_name: str,
                      content_goal: str, question: str, prior_thoughts: str) -> ReportState:
        section_name = section_name.strip()
        if not section_name:
            raise WorkshopError("section name is empty")
        docs = memory.retrieve(f"{section_name} {content_goal}", self.k) if len(memory) else []
        prompt = prompts.render(
            "write_section",
            section_name=section_name,
            relevant_documents=format_documents(docs, self.doc_chars),
            question=question,
            previous_thoughts=prior_thoughts,
            current_article=self.check_outline(state).render(),
            task=content_goal,
        )
        body = _strip_echo(self._ask(prompt), section_name)
        if not body:
            raise WorkshopError(f"assistant returned no content for section {section_name!r}")
        return state.advance("write_section", f"{section_name}\n{content_goal}",
                             place_section(state.report, section_name, body))

    def check_outline(self, state: ReportState) -> Outline:
        return Outline.of(state.report)

    def edit_report(self, state: ReportState, memory: DocumentMemory | None, edit_instruction: str) -> ReportState:
        # memory is accepted for symmetry; the edit template takes no documents
        if not state.report.strip():
            raise WorkshopError("cannot edit an empty report")
        prompt = prompts.render("edit_article", edit_instruction=edit_instruction, article=state.report)
        return state.advance("edit_article", edit_instruction, parse_edit_output(self._ask(prompt)))
