"""Web search and page fetching, live or from a recorded fixture store."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol
from urllib.parse import urlsplit, urlunsplit
from urllib.robotparser import RobotFileParser

import httpx

from .extract import UnsupportedContent, extract
from .llm import RateLimiter

logger = logging.getLogger(__name__)

DEFAULT_TEXT_CAP = 30_000
DEFAULT_PORTS = {"http": 80, "https": 443}
USER_AGENT = "webreason/0.1 (+research agent)"

__all__ = [
    "SearchHit", "PageContent", "WebAccess", "FixtureStore", "normalize_url",
    "WebError", "ProviderError", "QuotaExceeded", "PageUnavailable", "UnsupportedContent", "FixtureMiss",
]


class WebError(Exception):
    pass


class ProviderError(WebError):
    """Search provider failed; retryable."""


class QuotaExceeded(WebError):
    """Search provider refused for quota/auth reasons; fatal."""


class PageUnavailable(WebError):
    def __init__(self, url: str, status: int | None, reason: str = ""):
        super().__init__(f"page unavailable ({status if status is not None else reason or 'error'}): {url}")
        self.url = url
        self.status = status
        self.reason = reason


class FixtureMiss(WebError):
    """Fixture store has no entry for the request (network is never tried)."""


class InvalidURL(WebError, ValueError):
    pass


def normalize_url(url: str) -> str:
    """Canonical form used for dedup and fixture keys.

    >>> normalize_url("HTTPS://Example.com:443/a/#x")
    'https://example.com/a'
    """
    try:
        parts = urlsplit(url.strip())
        port = parts.port
    except ValueError as exc:
        raise InvalidURL(f"unparseable URL {url!r}: {exc}") from exc
    scheme = parts.scheme.lower()
    if not scheme or not parts.hostname:
        raise InvalidURL(f"unparseable URL {url!r}")
    host = parts.hostname.lower()
    if ":" in host:
        host = f"[{host}]"
    if port is not None and port != DEFAULT_PORTS.get(scheme):
        host = f"{host}:{port}"
    userinfo = parts.netloc.rpartition("@")[0]
    netloc = f"{userinfo}@{host}" if userinfo else host
    path = parts.path.rstrip("/")
    return urlunsplit((scheme, netloc, path, parts.query, ""))


def is_fetchable(url: str) -> bool:
    try:
        return urlsplit(normalize_url(url)).scheme in ("http", "https")
    except InvalidURL:
        return False


@dataclass(frozen=True)
class SearchHit:
    rank: int
    title: str
    url: str
    snippet: str

    def to_dict(self) -> dict:
        return {"rank": self.rank, "title": self.title, "url": self.url, "snippet": self.snippet}

    @classmethod
    def from_dict(cls, d: dict) -> SearchHit:
        return cls(int(d["rank"]), d.get("title", ""), d["url"], d.get("snippet", ""))


@dataclass(frozen=True)
class PageContent:
    url: str
    text: str
    title: str = ""
    truncated: bool = False
    raw_length: int = 0
    fetched_at: str = ""

    def to_dict(self) -> dict:
        return {"url": self.url, "title": self.title, "text": self.text, "truncated": self.truncated,
                "raw_length": self.raw_length, "fetched_at": self.fetched_at}


def apply_cap(page: PageContent, cap: int) -> PageContent:
    """Keep the head of the extracted text, dropping the tail past ``cap``."""
    raw = len(page.text)
    if raw <= cap:
        return replace(page, truncated=False, raw_length=raw)
    return replace(page, text=page.text[:cap], truncated=True, raw_length=raw)


def _rerank(hits: list[SearchHit]) -> list[SearchHit]:
    return [replace(h, rank=i) for i, h in enumerate(hits, 1)]


class SearchProvider(Protocol):
    def search(self, query: str, k: int) -> list[SearchHit]: ...


class PageFetcher(Protocol):
    def fetch(self, url: str) -> PageContent: ...


# --------------------------------------------------------------------------
# Live adapters
# --------------------------------------------------------------------------


class BingSearch:
    """Bing Web Search v7 adapter."""

    endpoint = "https://api.bing.microsoft.com/v7.0/search"

    def __init__(self, api_key: str, market: str = "en-US", timeout: float = 20.0,
                 transport: httpx.BaseTransport | None = None, endpoint: str | None = None):
        self.endpoint = endpoint or self.endpoint
        self.market = market
        self.http = httpx.Client(headers={"Ocp-Apim-Subscription-Key": api_key}, timeout=timeout,
                                 transport=transport)

    def search(self, query: str, k: int) -> list[SearchHit]:
        try:
            resp = self.http.get(self.endpoint, params={"q": query, "mkt": self.market, "count": k,
                                                        "setLang": self.market.split("-")[0]})
        except httpx.TransportError as exc:
            raise ProviderError(f"search transport failure: {exc}") from exc
        if resp.status_code in (401, 403, 429):
            raise QuotaExceeded(f"search provider refused ({resp.status_code}): {resp.text[:300]}")
        if resp.status_code >= 400:
            raise ProviderError(f"search provider error {resp.status_code}")
        items = (resp.json().get("webPages") or {}).get("value") or []
        hits = [SearchHit(0, it.get("name", ""), it.get("url", ""), it.get("snippet", "")) for it in items]
        return _rerank(hits)[:k]


class HttpFetcher:
    """Fetches pages over HTTP with per-host politeness and robots.txt."""

    def __init__(self, timeout: float = 30.0, per_host_rps: float = 1.0, respect_robots: bool = True,
                 transport: httpx.BaseTransport | None = None):
        self.http = httpx.Client(headers={"User-Agent": USER_AGENT}, timeout=timeout,
                                 follow_redirects=True, transport=transport)
        self.per_host_rps = per_host_rps
        self.respect_robots = respect_robots
        self._limiters: dict[str, RateLimiter] = {}
        self._robots: dict[str, RobotFileParser | None] = {}
        self._lock = threading.Lock()

    def _limiter(self, host: str) -> RateLimiter:
        with self._lock:
            if host not in self._limiters:
                self._limiters[host] = RateLimiter(self.per_host_rps)
            return self._limiters[host]

    def _allowed(self, url: str) -> bool:
        parts = urlsplit(url)
        origin = f"{parts.scheme}://{parts.netloc}"
        with self._lock:
            known = origin in self._robots
            rp = self._robots.get(origin)
        if not known:
            rp = None
            try:
                resp = self.http.get(origin + "/robots.txt")
                if resp.status_code == 200:
                    rp = RobotFileParser()
                    rp.parse(resp.text.splitlines())
            except httpx.HTTPError:
                rp = None
            with self._lock:
                self._robots[origin] = rp
        return rp is None or rp.can_fetch(USER_AGENT, url)

    def fetch(self, url: str) -> PageContent:
        if self.respect_robots and not self._allowed(url):
            raise PageUnavailable(url, None, "disallowed by robots.txt")
        self._limiter(urlsplit(url).netloc).wait()
        try:
            resp = self.http.get(url)
        except httpx.TimeoutException as exc:
            raise PageUnavailable(url, None, "timeout") from exc
        except httpx.TransportError as exc:
            raise PageUnavailable(url, None, str(exc)) from exc
        if resp.status_code >= 400:
            raise PageUnavailable(url, resp.status_code)
        title, text = extract(resp.content, resp.headers.get("content-type", ""), str(resp.url))
        return PageContent(url=url, title=title, text=text, raw_length=len(text),
                           fetched_at=datetime.now(timezone.utc).isoformat(timespec="seconds"))


# --------------------------------------------------------------------------
# Fixture store
# --------------------------------------------------------------------------


class FixtureStore:
    """Directory of JSON files keyed by a hash of (operation, query-or-url).

    Layout: ``<root>/<operation>_<sha256[:20]>.json`` where the hash covers
    ``json.dumps([operation, key])``; search keys are the stripped query,
    fetch keys the normalized URL.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    @staticmethod
    def key(operation: str, value: str) -> str:
        if operation == "fetch":
            value = normalize_url(value)
        else:
            value = value.strip()
        digest = hashlib.sha256(json.dumps([operation, value], ensure_ascii=False).encode("utf-8")).hexdigest()
        return f"{operation}_{digest[:20]}"

    def path(self, operation: str, value: str) -> Path:
        return self.root / f"{self.key(operation, value)}.json"

    def read(self, operation: str, value: str) -> dict:
        p = self.path(operation, value)
        if not p.exists():
            raise FixtureMiss(f"no fixture for {operation} {value!r} ({p.name})")
        return json.loads(p.read_text(encoding="utf-8"))

    def write(self, operation: str, value: str, entry: dict) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(operation, value)
        entry = {"operation": operation, "key": value, **entry}
        p.write_text(json.dumps(entry, ensure_ascii=False, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return p

    # convenience writers, used by recorders and fixture builders
    def put_search(self, query: str, hits: list[SearchHit]) -> Path:
        return self.write("search", query.strip(), {"hits": [h.to_dict() for h in hits]})

    def put_page(self, url: str, text: str | None = None, title: str = "", *, body: bytes | None = None,
                 content_type: str = "text/html", status: int = 200, fetched_at: str = "") -> Path:
        entry: dict = {"status": status, "title": title, "content_type": content_type, "fetched_at": fetched_at}
        if body is not None:
            entry["body_b64"] = base64.b64encode(body).decode("ascii")
        else:
            entry["text"] = text or ""
        return self.write("fetch", normalize_url(url), entry)


class FixtureSearch:
    def __init__(self, store: FixtureStore):
        self.store = store
        self.calls = 0

    def search(self, query: str, k: int) -> list[SearchHit]:
        self.calls += 1
        entry = self.store.read("search", query)
        if entry.get("error") == "quota":
            raise QuotaExceeded(entry.get("message", "quota exhausted"))
        if entry.get("error"):
            raise ProviderError(entry.get("message", "provider error"))
        return [SearchHit.from_dict(h) for h in entry["hits"]][:k]


class FixtureFetcher:
    def __init__(self, store: FixtureStore):
        self.store = store
        self.calls = 0

    def fetch(self, url: str) -> PageContent:
        self.calls += 1
        entry = self.store.read("fetch", url)
        status = entry.get("status", 200)
        if status >= 400:
            raise PageUnavailable(url, status)
        if "body_b64" in entry:
            title, text = extract(base64.b64decode(entry["body_b64"]), entry.get("content_type", ""), url)
            title = entry.get("title") or title
        else:
            title, text = entry.get("title", ""), entry["text"]
        return PageContent(url=url, title=title, text=text, raw_length=len(text),
                           fetched_at=entry.get("fetched_at", ""))


class RecordingSearch:
    def __init__(self, inner: SearchProvider, store: FixtureStore):
        self.inner, self.store = inner, store

    def search(self, query: str, k: int) -> list[SearchHit]:
        hits = self.inner.search(query, k)
        self.store.put_search(query, hits)
        return hits


class RecordingFetcher:
    def __init__(self, inner: PageFetcher, store: FixtureStore):
        self.inner, self.store = inner, store

    def fetch(self, url: str) -> PageContent:
        try:
            page = self.inner.fetch(url)
        except PageUnavailable as exc:
            if exc.status is not None:
                self.store.put_page(url, "", status=exc.status)
            raise
        self.store.put_page(url, page.text, page.title, fetched_at=page.fetched_at)
        return page


# --------------------------------------------------------------------------
# Facade
# --------------------------------------------------------------------------


class WebAccess:
    """What the agents see: ``search`` and ``fetch`` with caps and retries."""

    def __init__(self, provider: SearchProvider, fetcher: PageFetcher, text_cap: int = DEFAULT_TEXT_CAP,
                 max_attempts: int = 3, backoff: float = 1.0, sleep=time.sleep):
        self.provider = provider
        self.fetcher = fetcher
        self.text_cap = text_cap
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep

    @classmethod
    def from_fixtures(cls, root: str | Path, **kw) -> WebAccess:
        store = FixtureStore(root)
        return cls(FixtureSearch(store), FixtureFetcher(store), **kw)

    def search(self, query: str, k: int = 10) -> list[SearchHit]:
        if not query or not query.strip():
            raise ValueError("search query must be non-empty")
        if k < 1:
            raise ValueError("k must be >= 1")
        delay = self.backoff
        for attempt in range(1, self.max_attempts + 1):
            try:
                hits = self.provider.search(query.strip(), k)
                break
            except ProviderError:
                if attempt == self.max_attempts:
                    raise
                self._sleep(delay)
                delay *= 2
        hits = [replace(h, url=_safe_normalize(h.url)) for h in hits]
        return _rerank(hits)[:k]

    def fetch(self, url: str) -> PageContent:
        if not is_fetchable(url):
            raise InvalidURL(f"not an http(s) URL: {url!r}")
        page = self.fetcher.fetch(url)
        return apply_cap(replace(page, url=normalize_url(url)), self.text_cap)


def _safe_normalize(url: str) -> str:
    try:
        return normalize_url(url)
    except InvalidURL:
        return url
