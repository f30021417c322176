"""Service-agnostic HTTP toxicity scorer with a persistent cache and rate limiting.

The credential is read from an environment variable named in the config and
never from a flag or file. Requests are ``POST {request_field: text, **request_extra}``.
The JSON response is mapped to the eight attributes through dotted paths,
e.g. ``attributeScores.TOXICITY.summaryScore.value``.
"""

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field

import httpx

from .fileio import digest_bytes
from .text import normalize
from .toxicity import ATTRIBUTES, AttributeScores

log = logging.getLogger(__name__)

TRANSIENT_STATUSES = frozenset({408, 429, 500, 502, 503, 504})


class ConfigurationError(RuntimeError):
    pass


class RemoteScoringError(RuntimeError):
    def __init__(self, status, body, message=None):
        self.status = status
        self.body = body
        super().__init__(message or f"remote scorer returned HTTP {status}: {body[:500]}")


@dataclass(frozen=True)
class RemoteScorerConfig:
    endpoint: str
    credential_env: str = "EMPADETOX_API_KEY"
    rps: float = 1.0
    max_attempts: int = 5
    backoff_base: float = 0.5
    backoff_max: float = 30.0
    timeout: float = 30.0
    request_field: str = "text"
    request_extra: dict = field(default_factory=dict)
    response_fields: dict = field(default_factory=lambda: {a: a for a in ATTRIBUTES})
    auth_header: str | None = "Authorization"
    auth_scheme: str = "Bearer"
    credential_param: str | None = None
    scorer_id: str = "remote"
    scorer_version: str = "1"

    def __post_init__(self):
        if not self.rps > 0:
            raise ValueError(f"rps must be > 0, got {self.rps}")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        missing = [a for a in ATTRIBUTES if a not in self.response_fields]
        if missing:
            raise ValueError(f"response_fields must map every attribute; missing {missing}")
        if not self.endpoint.startswith(("http://", "https://")):
            raise ValueError(f"endpoint must be an http(s) URL, got {self.endpoint!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown remote scorer options: {sorted(unknown)}")
        return cls(**d)

    def credential(self) -> str:
        value = os.environ.get(self.credential_env)
        if not value:
            raise ConfigurationError(f"remote scorer credential missing: set the {self.credential_env} environment variable")
        return value


class RateLimiter:
    """Spaces calls at least ``1/rps`` seconds apart across all threads sharing it."""

    def __init__(self, rps: float, clock=time.monotonic, sleep=time.sleep):
        if not rps > 0:
            raise ValueError("rps must be > 0")
        self.interval = 1.0 / rps
        self._clock = clock
        self._sleep = sleep
        self._next = None
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            if self._next is not None and now < self._next:
                self._sleep(self._next - now)
                now = self._clock()
            self._next = now + self.interval


_limiters: dict = {}
_limiters_lock = threading.Lock()


def shared_limiter(endpoint: str, rps: float) -> RateLimiter:
    """One limiter per (endpoint, rps) for the whole process."""
    with _limiters_lock:
        key = (endpoint, float(rps))
        if key not in _limiters:
            _limiters[key] = RateLimiter(rps)
        return _limiters[key]


def text_digest(text: str) -> str:
    return digest_bytes(normalize(text).encode("utf-8"))


class ScoreCache:
    """Append-only JSONL map from (text digest, scorer id, scorer version) to scores.

    A truncated trailing line (from a crash mid-write) is dropped on open.
    """

    def __init__(self, path=None):
        self.path = path
        self._data = {}
        self._lock = threading.Lock()
        if path is not None and os.path.exists(path):
            self._load()

    def _load(self):
        with open(self.path, "rb") as f:
            raw = f.read()
        good_end = raw.rfind(b"\n") + 1
        if good_end < len(raw):
            log.warning("%s: dropping partial trailing cache record (%d bytes)", self.path, len(raw) - good_end)
            with open(self.path, "r+b") as f:
                f.truncate(good_end)
        for lineno, line in enumerate(raw[:good_end].decode("utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (rec["digest"], rec["scorer"], rec["version"])
                self._data[key] = AttributeScores.from_dict(rec["scores"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{self.path}:{lineno}: corrupt cache record: {e}") from None

    def __len__(self):
        return len(self._data)

    @staticmethod
    def key(text, scorer_id, version):
        return (text_digest(text), scorer_id, str(version))

    def get(self, text, scorer_id, version):
        return self._data.get(self.key(text, scorer_id, version))

    def put(self, text, scorer_id, version, scores: AttributeScores) -> None:
        key = self.key(text, scorer_id, version)
        with self._lock:
            if key in self._data:
                return
            self._data[key] = scores
            if self.path is not None:
                rec = {"digest": key[0], "scorer": key[1], "version": key[2], "scores": scores.to_dict()}
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(rec, sort_keys=True) + "\n")
                    f.flush()
                    os.fsync(f.fileno())


def _dig(obj, path: str):
    for part in path.split("."):
        if isinstance(obj, list):
            obj = obj[int(part)]
        else:
            obj = obj[part]
    return obj


class RemoteScorer:
    """Callable scorer: cache first, then a rate-limited POST with retries."""

    def __init__(self, config: RemoteScorerConfig, cache: ScoreCache | None = None, transport=None, limiter=None, sleep=time.sleep):
        config.credential()  # fail before any request
        self.config = config
        self.cache = cache if cache is not None else ScoreCache()
        self.limiter = limiter or shared_limiter(config.endpoint, config.rps)
        self._sleep = sleep
        self._client = httpx.Client(transport=transport, timeout=config.timeout)
        self.requests_sent = 0

    scorer_id = property(lambda self: self.config.scorer_id)

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, text):
        cfg = self.config
        cred = cfg.credential()
        headers, params = {}, {}
        if cfg.auth_header:
            headers[cfg.auth_header] = f"{cfg.auth_scheme} {cred}".strip()
        if cfg.credential_param:
            params[cfg.credential_param] = cred
        body = dict(cfg.request_extra)
        body[cfg.request_field] = text
        self.limiter.acquire()
        self.requests_sent += 1
        return self._client.post(cfg.endpoint, json=body, headers=headers, params=params)

    def _parse(self, resp):
        try:
            data = resp.json()
            values = {a: float(_dig(data, p)) for a, p in self.config.response_fields.items()}
            return AttributeScores(**values)
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise RemoteScoringError(resp.status_code, resp.text, f"unusable scorer response: {e}") from None

    def __call__(self, text: str) -> AttributeScores:
        cfg = self.config
        hit = self.cache.get(text, cfg.scorer_id, cfg.scorer_version)
        if hit is not None:
            return hit
        last = None
        for attempt in range(1, cfg.max_attempts + 1):
            try:
                resp = self._request(text)
            except httpx.TransportError as e:
                last = RemoteScoringError(None, "", f"transport error: {e}")
                delay = None
            else:
                if resp.status_code < 300:
                    scores = self._parse(resp)
                    self.cache.put(text, cfg.scorer_id, cfg.scorer_version, scores)
                    return scores
                if resp.status_code not in TRANSIENT_STATUSES:
                    raise RemoteScoringError(resp.status_code, resp.text)
                last = RemoteScoringError(resp.status_code, resp.text)
                delay = _retry_after(resp)
            if attempt < cfg.max_attempts:
                if delay is None:
                    delay = min(cfg.backoff_max, cfg.backoff_base * 2 ** (attempt - 1))
                log.info("transient scorer failure (%s); retry %d in %.2fs", last, attempt, delay)
                self._sleep(delay)
        raise last


def _retry_after(resp):
    value = resp.headers.get("Retry-After")
    try:
        return max(0.0, float(value)) if value is not None else None
    except ValueError:
        return None


def score_remote(text: str, config: RemoteScorerConfig, cache: ScoreCache, transport=None) -> AttributeScores:
    """One-off remote score; prefer a long-lived :class:`RemoteScorer` for batches."""
    with RemoteScorer(config, cache, transport=transport) as scorer:
        return scorer(text)
