"""Readable-text extraction for fetched pages.

HTML is reduced to markdown-like text: headings, paragraphs, list items,
table rows and link anchors (with absolute hrefs) survive; scripts, styles
and navigation landmarks are dropped.  PDFs go through ``pypdf``.
"""

from __future__ import annotations

import io
import re
from html.parser import HTMLParser
from urllib.parse import urljoin

SKIP_TAGS = {"script", "style", "noscript", "nav", "header", "footer", "aside", "svg", "form", "template", "iframe"}
BLOCK_TAGS = {"p", "div", "section", "article", "main", "blockquote", "pre", "br", "hr", "dl", "dt", "dd",
              "ul", "ol", "table", "figure", "figcaption"}
VOID_TAGS = {"br", "hr", "img", "input", "meta", "link", "area", "base", "col", "embed", "source", "wbr"}


class _Readable(HTMLParser):
    def __init__(self, base_url: str):
        super().__init__(convert_charrefs=True)
        self.base_url = base_url
        self.lines: list[str] = []
        self.cur: list[str] = []
        self.skip = 0
        self.title = ""
        self._in_title = False
        self._href: str | None = None
        self._anchor: list[str] = []
        self._row: list[str] | None = None
        self._cell: list[str] | None = None
        self._prefix = ""

    def _flush(self):
        text = re.sub(r"\s+", " ", "".join(self.cur)).strip()
        if text:
            self.lines.append(self._prefix + text)
        self.cur = []
        self._prefix = ""

    def _emit(self, s: str):
        if self._cell is not None:
            self._cell.append(s)
        elif self._href is not None:
            self._anchor.append(s)
        else:
            self.cur.append(s)

    def handle_starttag(self, tag, attrs):
        if self.skip:
            if tag in SKIP_TAGS and tag not in VOID_TAGS:
                self.skip += 1
            return
        if tag in SKIP_TAGS:
            self.skip = 1
            return
        if tag == "title":
            self._in_title = True
        elif tag in ("h1", "h2", "h3", "h4", "h5", "h6"):
            self._flush()
            self._prefix = "#" * int(tag[1]) + " "
        elif tag == "li":
            self._flush()
            self._prefix = "- "
        elif tag == "tr":
            self._flush()
            self._row = []
        elif tag in ("td", "th") and self._row is not None:
            self._cell = []
        elif tag == "a":
            href = dict(attrs).get("href")
            if href and not href.startswith(("javascript:", "#", "mailto:")):
                self._href = urljoin(self.base_url, href)
                self._anchor = []
        elif tag in BLOCK_TAGS:
            self._flush()

    def handle_endtag(self, tag):
        if self.skip:
            if tag in SKIP_TAGS:
                self.skip -= 1
            return
        if tag == "title":
            self._in_title = False
        elif tag in ("h1", "h2", "h3", "h4", "h5", "h6", "li", "p"):
            self._flush()
        elif tag in ("td", "th") and self._cell is not None and self._row is not None:
            self._row.append(re.sub(r"\s+", " ", "".join(self._cell)).strip())
            self._cell = None
        elif tag == "tr" and self._row is not None:
            if any(self._row):
                self.lines.append("| " + " | ".join(self._row) + " |")
            self._row = None
        elif tag == "a" and self._href is not None:
            anchor = re.sub(r"\s+", " ", "".join(self._anchor)).strip()
            href, self._href = self._href, None
            self._emit(f"[{anchor}]({href})" if anchor else f"<{href}>")
        elif tag in BLOCK_TAGS:
            self._flush()

    def handle_data(self, data):
        if self.skip:
            return
        if self._in_title:
            self.title += data
            return
        self._emit(data)

    def result(self) -> str:
        self._flush()
        return "\n\n".join(self.lines)


def html_to_text(html: str, base_url: str = "") -> tuple[str, str]:
    """Return ``(title, readable_text)`` for an HTML document."""
    p = _Readable(base_url)
    p.feed(html)
    p.close()
    return p.title.strip(), p.result()


def pdf_to_text(data: bytes) -> tuple[str, str]:
    from pypdf import PdfReader

    reader = PdfReader(io.BytesIO(data))
    title = ""
    if reader.metadata and reader.metadata.title:
        title = str(reader.metadata.title)
    pages = [(page.extract_text() or "").strip() for page in reader.pages]
    return title, "\n\n".join(p for p in pages if p)


class UnsupportedContent(Exception):
    def __init__(self, content_type: str):
        super().__init__(f"unsupported content type {content_type!r}")
        self.content_type = content_type


def extract(body: bytes, content_type: str, url: str = "") -> tuple[str, str]:
    ctype = (content_type or "").split(";")[0].strip().lower()
    if ctype == "application/pdf" or (not ctype and body[:5] == b"%PDF-"):
        return pdf_to_text(body)
    if ctype in ("text/html", "application/xhtml+xml", ""):
        return html_to_text(body.decode("utf-8", errors="replace"), url)
    if ctype.startswith("text/"):
        return "", body.decode("utf-8", errors="replace").strip()
    raise UnsupportedContent(ctype)
