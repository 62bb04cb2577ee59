"""Special-token tool protocol.

The reasoning model calls tools by emitting paired markers such as
``<|begin_search_query|> ... <|end_search_query|>`` inside its generation.
:class:`StreamCursor` consumes the decoded text in arbitrary chunks and emits a
:class:`ToolEvent` each time a begin/end pair of the same kind completes.
Chunk boundaries may fall anywhere, including inside a marker; the emitted
event sequence only depends on the total text fed.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Mapping


class Tool(str, enum.Enum):
    SEARCH_QUERY = "search_query"
    SEARCH_RESULT = "search_result"
    CLICK_LINK = "click_link"
    CLICK_RESULT = "click_result"
    WRITE_SECTION = "write_section"
    CHECK_ARTICLE = "check_article"
    EDIT_ARTICLE = "edit_article"


@dataclass(frozen=True)
class Marker:
    """One of the fourteen marker literals: a tool kind plus its side."""

    tool: Tool
    begin: bool

    @property
    def name(self) -> str:
        return f"{'begin' if self.begin else 'end'}_{self.tool.value}"


class MarkerTable:
    """Literal string forms of the begin/end markers.

    The default table uses ``<|begin_<kind>|>`` / ``<|end_<kind>|>``; pass
    ``overrides`` (tool -> (begin, end)) to test alternate vocabularies.
    """

    def __init__(self, overrides: Mapping[Tool, tuple[str, str]] | None = None):
        literals = {t: (f"<|begin_{t.value}|>", f"<|end_{t.value}|>") for t in Tool}
        if overrides:
            literals.update(overrides)
        flat = [s for pair in literals.values() for s in pair]
        if len(set(flat)) != len(flat) or any(not s for s in flat):
            raise ValueError("marker literals must be distinct and non-empty")
        self._literals = literals
        self._by_literal = {}
        for tool, (b, e) in literals.items():
            self._by_literal[b] = Marker(tool, True)
            self._by_literal[e] = Marker(tool, False)
        self.max_len = max(len(s) for s in flat)

    def begin(self, tool: Tool) -> str:
        return self._literals[tool][0]

    def end(self, tool: Tool) -> str:
        return self._literals[tool][1]

    def literal(self, marker: Marker) -> str:
        return self.begin(marker.tool) if marker.begin else self.end(marker.tool)

    def marker_for(self, literal: str) -> Marker:
        return self._by_literal[literal]

    def literals(self) -> list[str]:
        return list(self._by_literal)

    def wrap(self, tool: Tool, payload: str) -> str:
        return f"{self.begin(tool)}{payload}{self.end(tool)}"


DEFAULT_MARKERS = MarkerTable()


@dataclass(frozen=True)
class ToolEvent:
    tool: Tool
    payload: str
    span: tuple[int, int]  # [begin marker start, end marker end) in the stream

    def to_dict(self) -> dict:
        return {"tool": self.tool.value, "payload": self.payload, "span": list(self.span)}


@dataclass(frozen=True)
class ProtocolDefect:
    kind: str  # "unterminated" | "orphan_end"
    tool: Tool
    span: tuple[int, int]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "tool": self.tool.value, "span": list(self.span)}


class _Matcher:
    """Leftmost-longest literal search that knows when a match is final."""

    def __init__(self, literals: list[str]):
        self.literals = sorted(literals, key=len, reverse=True)
        self.regex = re.compile("|".join(re.escape(s) for s in self.literals))
        self.max_len = max(len(s) for s in literals)

    def _partial_at(self, buf: str, start: int) -> bool:
        rest = buf[start:]
        return any(len(lit) > len(rest) and lit.startswith(rest) for lit in self.literals)

    def search(self, buf: str, pos: int) -> tuple[re.Match | None, int]:
        """Return (final match or None, safe scan position).

        A match is only final when no marker that could still complete with
        more input starts at or before it.
        """
        n = len(buf)
        tail_start = max(pos, n - self.max_len + 1)
        hold = next((s for s in range(tail_start, n) if self._partial_at(buf, s)), n)
        m = self.regex.search(buf, pos)
        if m is not None and m.start() < hold:
            return m, m.end()
        return None, hold


@dataclass
class StreamCursor:
    """Incremental marker scanner over an accumulated generation stream.

    ``buffer`` is always the exact concatenation of every chunk fed.  Text at
    the end of the buffer that might be the start of a marker stays pending
    until more text (or :meth:`finalize`) resolves it.
    """

    markers: MarkerTable = field(default_factory=lambda: DEFAULT_MARKERS)
    buffer: str = ""
    events: list[ToolEvent] = field(default_factory=list)
    defects: list[ProtocolDefect] = field(default_factory=list)
    _pos: int = 0
    _open: tuple[Tool, int] | None = None  # tool and begin-marker offset
    _matchers: dict = field(default_factory=dict, repr=False)

    @property
    def pending(self) -> str:
        """Unresolved suffix that may still turn into a marker."""
        return self.buffer[self._pos:]

    @property
    def open_tool(self) -> Tool | None:
        return self._open[0] if self._open else None

    def _matcher(self) -> _Matcher:
        key = self._open[0] if self._open else None
        if key not in self._matchers:
            if key is None:
                lits = self.markers.literals()
            else:
                lits = [self.markers.begin(key), self.markers.end(key)]
            self._matchers[key] = _Matcher(lits)
        return self._matchers[key]

    def feed(self, chunk: str) -> list[ToolEvent]:
        self.buffer += chunk
        new: list[ToolEvent] = []
        while True:
            m, safe = self._matcher().search(self.buffer, self._pos)
            if m is None:
                # nothing before `safe` can start a marker any more
                self._pos = safe
                return new
            marker = self.markers.marker_for(m.group(0))
            self._pos = m.end()
            if marker.begin:
                if self._open is not None:
                    tool, start = self._open
                    self.defects.append(ProtocolDefect("unterminated", tool, (start, m.start())))
                self._open = (marker.tool, m.start())
            elif self._open is None:
                self.defects.append(ProtocolDefect("orphan_end", marker.tool, (m.start(), m.end())))
            else:
                tool, start = self._open
                payload_start = start + len(self.markers.begin(tool))
                ev = ToolEvent(tool, self.buffer[payload_start:m.start()], (start, m.end()))
                self.events.append(ev)
                new.append(ev)
                self._open = None

    def finalize(self) -> list[ProtocolDefect]:
        """Report every unpaired marker once the stream has ended."""
        defects = list(self.defects)
        if self._open is not None:
            tool, start = self._open
            defects.append(ProtocolDefect("unterminated", tool, (start, len(self.buffer))))
        return defects

    def latest_payload(self, tool: Tool) -> str | None:
        for ev in reversed(self.events):
            if ev.tool is tool:
                return ev.payload
        return None


def parse(text: str, markers: MarkerTable = DEFAULT_MARKERS) -> StreamCursor:
    """Feed ``text`` whole into a fresh cursor."""
    cur = StreamCursor(markers=markers)
    cur.feed(text)
    return cur


def strip_spans(text: str, tools: set[Tool], markers: MarkerTable = DEFAULT_MARKERS) -> str:
    """Remove completed spans of the given tools (markers included) from ``text``."""
    cur = parse(text, markers)
    out, last = [], 0
    for ev in cur.events:
        if ev.tool in tools:
            out.append(text[last:ev.span[0]])
            last = ev.span[1]
    out.append(text[last:])
    return "".join(out)


def trailing_call(cursor: StreamCursor, tool: Tool) -> str | None:
    """Payload of the ``tool`` call whose end marker closes the buffer.

    Normally this is the cursor's last event.  If the scanner was inside some
    other open span (an out-of-mode marker the model never closed), fall back
    to the last begin marker of ``tool`` in the raw text.  ``None`` means the
    end marker has no begin at all.
    """
    markers = cursor.markers
    buf = cursor.buffer
    end = markers.end(tool)
    if cursor.events and cursor.events[-1].tool is tool and cursor.events[-1].span[1] == len(buf):
        return cursor.events[-1].payload
    if not buf.endswith(end):
        return None
    begin = markers.begin(tool)
    i = buf.rfind(begin, 0, len(buf) - len(end))
    if i < 0:
        return None
    return buf[i + len(begin):len(buf) - len(end)]
