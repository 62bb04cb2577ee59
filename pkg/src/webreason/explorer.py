"""Deep web explorer: a bounded search/click sub-agent driven by the backbone model.

The explorer receives a query, its intent and the pages already fetched for
it, then reasons on its own chain, issuing searches (snippets only) and link
clicks (page summarized by the assistant model) until it writes a
"Final Information" block.  That block, or a degraded tail of the chain when
the budget runs out, is what the main reasoning chain receives.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from . import prompts
from .llm import STOP_HIT, LLMClient, LLMError, ScriptError, user
from .protocol import DEFAULT_MARKERS, MarkerTable, StreamCursor, Tool, ToolEvent, strip_spans, trailing_call
from .web import (FixtureMiss, InvalidURL, PageContent, PageUnavailable, ProviderError, SearchHit,
                  UnsupportedContent, WebAccess, is_fetchable, normalize_url)

logger = logging.getLogger(__name__)

MAX_REFUSALS = 2
DEGRADED_PREFIX = "[Degraded output: the explorer ran out of budget before writing Final Information]"

_SENTINEL = re.compile(
    r"^[ \t]*(?:#{1,6}[ \t]*)?(?:\*\*|__)?[ \t]*final information[ \t]*:?[ \t]*(?:\*\*|__)?[ \t]*:?[ \t]*$",
    re.IGNORECASE | re.MULTILINE,
)


@dataclass(frozen=True)
class ExplorerBudget:
    max_turns: int = 10
    max_tokens: int = 16_384
    max_clicks: int = 5

    def __post_init__(self):
        for name in ("max_turns", "max_tokens", "max_clicks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class ExplorerRequest:
    query: str
    intent: str = ""
    initial_pages: list[PageContent] = field(default_factory=list)
    budget: ExplorerBudget = field(default_factory=ExplorerBudget)
    initial_hits: list[SearchHit] = field(default_factory=list)

    def __post_init__(self):
        if not self.query or not self.query.strip():
            raise ValueError("explorer query must be non-empty")


@dataclass(frozen=True)
class FinalInformation:
    text: str
    source_urls: tuple[str, ...] = ()


@dataclass(frozen=True)
class Exhausted:
    """Budget ran out without a Final Information block."""

    text: str
    reason: str


@dataclass
class ExplorerAction:
    kind: str  # "search" | "click"
    event: ToolEvent
    result: str
    cached: bool = False
    error: bool = False

    def to_dict(self) -> dict:
        return {"kind": self.kind, "event": self.event.to_dict(), "result": self.result,
                "cached": self.cached, "error": self.error}


@dataclass
class ExplorerSession:
    request: ExplorerRequest
    chain: str = ""
    actions: list[ExplorerAction] = field(default_factory=list)
    visited: list[str] = field(default_factory=list)
    pages: list[PageContent] = field(default_factory=list)
    outcome: FinalInformation | Exhausted | None = None
    generated_tokens: int = 0
    refusals: int = 0
    search_cache: dict[str, str] = field(default_factory=dict)
    click_cache: dict[str, str] = field(default_factory=dict)

    @property
    def clicks(self) -> int:
        return sum(1 for a in self.actions if a.kind == "click")

    @property
    def searches(self) -> int:
        return sum(1 for a in self.actions if a.kind == "search")

    @property
    def output(self) -> str:
        if isinstance(self.outcome, FinalInformation):
            return self.outcome.text
        if isinstance(self.outcome, Exhausted):
            return f"{DEGRADED_PREFIX}\n{self.outcome.text}".rstrip()
        return ""

    @property
    def degraded(self) -> bool:
        return not isinstance(self.outcome, FinalInformation)

    def to_dict(self) -> dict:
        return {
            "query": self.request.query,
            "intent": self.request.intent,
            "chain": self.chain,
            "actions": [a.to_dict() for a in self.actions],
            "visited": list(self.visited),
            "outcome": type(self.outcome).__name__ if self.outcome else None,
            "output": self.output,
            "generated_tokens": self.generated_tokens,
        }


def extract_final_information(chain: str) -> FinalInformation | None:
    """Text following the last "Final Information" heading line, if any."""
    last = None
    for m in _SENTINEL.finditer(chain):
        last = m
    if last is None:
        return None
    return FinalInformation(chain[last.end():].strip())


def format_hits(hits: list[SearchHit]) -> str:
    blocks = [f"**Web Page {h.rank}:**\nTitle: {h.title}\nURL: {h.url}\nSnippet: {h.snippet}" for h in hits]
    return "\n\n".join(blocks) if blocks else "No results found."


def format_pages(hits: list[SearchHit], pages: list[PageContent], page_chars: int | None = None) -> str:
    """Searched-web-pages block for the explorer prompt."""
    by_url = {p.url: p for p in pages}
    blocks = []
    seen = set()
    for i, h in enumerate(hits, 1):
        page = by_url.get(h.url)
        seen.add(h.url)
        block = f"**Web Page {i}:**\nTitle: {h.title}\nURL: {h.url}\nSnippet: {h.snippet}"
        if page is not None and page.text:
            block += "\nContent:\n" + (page.text[:page_chars] if page_chars else page.text)
        blocks.append(block)
    for p in pages:
        if p.url in seen:
            continue
        i = len(blocks) + 1
        text = p.text[:page_chars] if page_chars else p.text
        blocks.append(f"**Web Page {i}:**\nTitle: {p.title}\nURL: {p.url}\nContent:\n{text}")
    return "\n\n".join(blocks) if blocks else "No web pages were retrieved."


def last_paragraph(chain: str, markers: MarkerTable = DEFAULT_MARKERS) -> str:
    own = strip_spans(chain, {Tool.SEARCH_RESULT, Tool.CLICK_RESULT}, markers)
    paras = [p.strip() for p in re.split(r"\n\s*\n", own) if p.strip()]
    return paras[-1] if paras else ""


class DeepWebExplorer:
    def __init__(self, model: LLMClient, assistant: LLMClient, web: WebAccess,
                 markers: MarkerTable = DEFAULT_MARKERS, page_chars: int | None = None, search_k: int = 10):
        self.model = model
        self.assistant = assistant
        self.web = web
        self.markers = markers
        self.page_chars = page_chars
        self.search_k = search_k

    def _inject(self, session: ExplorerSession, cursor: StreamCursor, tool: Tool, body: str) -> None:
        text = "\n\n" + self.markers.wrap(tool, body) + "\n\n"
        session.chain += text
        cursor.feed(text)

    def run(self, request: ExplorerRequest) -> ExplorerSession:
        session = ExplorerSession(request)
        budget = request.budget
        history = [user(prompts.explorer_prompt(
            request.query, request.intent, format_pages(request.initial_hits, request.initial_pages, self.page_chars)))]
        stops = (self.markers.end(Tool.SEARCH_QUERY), self.markers.end(Tool.CLICK_LINK))
        cursor = StreamCursor(markers=self.markers)
        started = False
        reason = "token budget exhausted"
        while True:
            remaining = budget.max_tokens - session.generated_tokens
            if remaining <= 0:
                break
            params = self.model.params.with_(max_new_tokens=remaining, stop_sequences=stops)
            if started:
                out = self.model.continue_generation(history, session.chain, params)
            else:
                out = self.model.generate(history, params)
                started = True
            session.generated_tokens += out.usage.completion_tokens
            session.chain += out.text
            cursor.feed(out.text)
            if out.stop_reason != STOP_HIT:
                reason = "length limit" if out.stop_reason == "length_limit" else "ended without final information"
                break
            kind, result_kind = ((Tool.SEARCH_QUERY, Tool.SEARCH_RESULT) if out.matched_stop == stops[0]
                                 else (Tool.CLICK_LINK, Tool.CLICK_RESULT))
            payload = trailing_call(cursor, kind)
            if payload is None:
                logger.warning("explorer emitted %s without a begin marker", out.matched_stop)
                self._inject(session, cursor, result_kind, "Malformed tool call: missing begin marker.")
                session.refusals += 1
            else:
                n = len(session.chain)
                ev = ToolEvent(kind, payload, (n - len(payload) - len(self.markers.begin(kind))
                                               - len(self.markers.end(kind)), n))
                tool_fn = self.search if kind is Tool.SEARCH_QUERY else self.click
                self._inject(session, cursor, result_kind, tool_fn(session, payload, ev))
            if session.refusals > MAX_REFUSALS:
                reason = "tool budget exhausted"
                break

        final = extract_final_information(session.chain)
        if final is not None:
            session.outcome = FinalInformation(final.text, tuple(session.visited))
        else:
            session.outcome = Exhausted(last_paragraph(session.chain, self.markers), reason)
        return session

    # -- tools --------------------------------------------------------------

    def _refuse(self, session: ExplorerSession, what: str) -> str:
        session.refusals += 1
        return (f"You have reached the {what} limit for this exploration. Do not call any more tools; "
                "write your findings now, beginning with **Final Information**.")

    def search(self, session: ExplorerSession, query: str, event: ToolEvent | None = None) -> str:
        """Run a snippet-only search and return the text to inject."""
        event = event or ToolEvent(Tool.SEARCH_QUERY, query, (len(session.chain), len(session.chain)))
        if len(session.actions) >= session.request.budget.max_turns:
            return self._refuse(session, "tool-action")
        key = query.strip()
        if key in session.search_cache:
            result = session.search_cache[key]
            session.actions.append(ExplorerAction("search", event, result, cached=True))
            return result
        try:
            hits = self.web.search(key, self.search_k)
        except (ProviderError, FixtureMiss, ValueError) as exc:
            result = f"Search failed: {exc}"
            session.actions.append(ExplorerAction("search", event, result, error=True))
            return result
        result = format_hits(hits)
        session.search_cache[key] = result
        session.actions.append(ExplorerAction("search", event, result))
        return result

    def click(self, session: ExplorerSession, url: str, event: ToolEvent | None = None) -> str:
        """Fetch ``url``, summarize it against a click intent, return the text to inject."""
        event = event or ToolEvent(Tool.CLICK_LINK, url, (len(session.chain), len(session.chain)))
        budget = session.request.budget
        if len(session.actions) >= budget.max_turns:
            return self._refuse(session, "tool-action")
        if session.clicks >= budget.max_clicks:
            return self._refuse(session, "click")
        raw = url.strip()
        if not is_fetchable(raw):
            result = f"Malformed link: {raw!r} is not a valid http(s) URL."
            session.actions.append(ExplorerAction("click", event, result, error=True))
            return result
        key = normalize_url(raw)
        if key in session.click_cache:
            result = session.click_cache[key]
            session.actions.append(ExplorerAction("click", event, result, cached=True))
            return result
        try:
            page = self.web.fetch(raw)
        except PageUnavailable as exc:
            what = f"status {exc.status}" if exc.status is not None else exc.reason or "error"
            result = f"Failed to fetch {raw} ({what})."
            session.actions.append(ExplorerAction("click", event, result, error=True))
            return result
        except (UnsupportedContent, FixtureMiss, InvalidURL) as exc:
            result = f"Failed to fetch {raw} ({exc})."
            session.actions.append(ExplorerAction("click", event, result, error=True))
            return result
        intent = self._assist(prompts.render("click_intent", question=session.request.query,
                                             prev_reasoning=session.chain), session.request.intent)
        summary = self._assist(
            prompts.render("click_summary", click_intent=intent, url=page.url, page_content=page.text),
            page.text[:3000],
        )
        session.visited.append(key)
        session.pages.append(page)
        session.click_cache[key] = summary
        session.actions.append(ExplorerAction("click", event, summary))
        return summary

    def _assist(self, prompt: str, fallback: str) -> str:
        try:
            text = self.assistant.generate([user(prompt)]).text.strip()
        except ScriptError:
            raise
        except LLMError as exc:
            logger.warning("assistant call failed, using fallback: %s", exc)
            return fallback
        return text or fallback
