"""Uniform access to chat-completion providers.

Every completion is keyed by a platform-stable fingerprint of the model
id and the full prompt text (UTF-8, LF newlines). The gateway caches
records on disk under ``<cache>/<provider>/<fingerprint>.json``; a cache
directory recorded once doubles as a replay archive, which makes whole
pipelines reproducible offline and bit-identical across machines.

Providers are configured declaratively (endpoint, auth header,
request/response field names), so adding a vendor needs no code. Requests
run at temperature 0 by default; run-indexed fingerprints are used only
when sampling is stochastic (temperature > 0 or a provider that cannot
pin generation), otherwise repeated runs share one cache entry.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import requests

from .core import NarframeError, ParseError

log = logging.getLogger(__name__)

DEFAULT_CONCURRENCY = 4
DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_BACKOFF_S = 0.5

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class ProviderError(NarframeError):
    """The provider returned an error or an unusable response."""

    def __init__(self, message: str, status: int | None = None, body: str = ""):
        excerpt = body[:200]
        detail = f" (status {status})" if status is not None else ""
        super().__init__(f"{message}{detail}{': ' + excerpt if excerpt else ''}")
        self.status = status
        self.body_excerpt = excerpt


class CredentialsMissing(NarframeError):
    """The provider's API key environment variable is not set."""


class ReplayMiss(NarframeError):
    """The replay archive has no record for the request fingerprint."""


@dataclass(frozen=True)
class CompletionRequest:
    """One chat completion: instruction prompt plus the article payload."""

    model_id: str
    prompt: str
    article_text: str
    temperature: float = 0.0
    max_output: int = 1024
    run_index: int = 0

    def __post_init__(self):
        if not self.prompt or not self.article_text:
            raise ValueError("prompt and article text must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def full_text(self) -> str:
        return f"{self.prompt}\n\n{self.article_text}"


@dataclass(frozen=True)
class CompletionRecord:
    fingerprint: str
    provider: str
    model_id: str
    raw_response: str
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "provider": self.provider,
            "model_id": self.model_id,
            "raw_response": self.raw_response,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CompletionRecord":
        return cls(
            fingerprint=data["fingerprint"],
            provider=data["provider"],
            model_id=data["model_id"],
            raw_response=data["raw_response"],
            timestamp=data.get("timestamp", ""),
        )


def _normalize(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def fingerprint(model_id: str, full_prompt: str, run_index: int | None = None) -> str:
    """Stable request key: SHA-256 over the model id and normalized prompt.

    `run_index` participates only for stochastic generation, where runs
    must stay distinct.
    """
    payload = f"{model_id}\x00{_normalize(full_prompt)}"
    if run_index is not None:
        payload += f"\x00run={run_index}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ProviderConfig:
    """Declarative description of one chat-completion HTTP endpoint."""

    name: str
    endpoint: str
    model: str
    api_key_env: str
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    model_field: str = "model"
    messages_field: str = "messages"
    system_field: str = ""  # when set, system prompt goes to this top-level field
    temperature_field: str = "temperature"
    max_tokens_field: str = "max_tokens"
    supports_temperature: bool = True
    deterministic: bool = True
    response_path: str = "choices.0.message.content"
    extra_headers: tuple[tuple[str, str], ...] = ()
    timeout_s: float = 120.0


def parse_provider_configs(text: str) -> dict[str, ProviderConfig]:
    """Parse the key: value provider blocks (one block per provider)."""
    configs: dict[str, ProviderConfig] = {}
    block: dict[str, str] = {}
    block_line = 0

    def close_block():
        if not block:
            return
        required = ("provider", "endpoint", "model", "api_key_env")
        missing = [k for k in required if k not in block]
        if missing:
            raise ParseError(f"provider block missing keys {missing}", block_line)
        extras = []
        for pair in block.get("extra_headers", "").split(","):
            pair = pair.strip()
            if not pair:
                continue
            if "=" not in pair:
                raise ParseError(f"extra header {pair!r} is not name=value", block_line)
            name, _, header_value = pair.partition("=")
            extras.append((name.strip(), header_value.strip()))
        configs[block["provider"]] = ProviderConfig(
            name=block["provider"],
            endpoint=block["endpoint"],
            model=block["model"],
            api_key_env=block["api_key_env"],
            auth_header=block.get("auth_header", "Authorization"),
            auth_scheme=block.get("auth_scheme", "Bearer"),
            model_field=block.get("model_field", "model"),
            messages_field=block.get("messages_field", "messages"),
            system_field=block.get("system_field", ""),
            temperature_field=block.get("temperature_field", "temperature"),
            max_tokens_field=block.get("max_tokens_field", "max_tokens"),
            supports_temperature=block.get("supports_temperature", "true").lower() != "false",
            deterministic=block.get("deterministic", "true").lower() != "false",
            response_path=block.get("response_path", "choices.0.message.content"),
            extra_headers=tuple(extras),
        )
        block.clear()

    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if ":" not in stripped:
            raise ParseError(f"expected 'key: value', got {stripped!r}", line_no)
        key, _, value = stripped.partition(":")
        key = key.strip()
        value = value.strip()
        if key == "provider":
            close_block()
            block["provider"] = value
            block_line = line_no
        else:
            if "provider" not in block:
                raise ParseError(f"key {key!r} outside a provider block", line_no)
            block[key] = value
    close_block()
    return configs


def load_provider_configs(path: str | Path | None = None) -> dict[str, ProviderConfig]:
    if path is None:
        text = resources.files("narframe").joinpath("data/providers.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_provider_configs(text)


def _walk_path(payload, path: str):
    node = payload
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, dict):
            node = node[part]
        else:
            raise KeyError(part)
    return node


class HttpProvider:
    """Generic chat-completion HTTP provider driven by a ProviderConfig."""

    def __init__(self, config: ProviderConfig,
                 max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                 backoff_s: float = DEFAULT_BACKOFF_S):
        self.config = config
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def deterministic(self) -> bool:
        return self.config.deterministic

    @property
    def model_id(self) -> str:
        return self.config.model

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise CredentialsMissing(
                f"set {self.config.api_key_env} to use provider {self.config.name!r}"
            )
        value = f"{self.config.auth_scheme} {key}".strip()
        headers = {self.config.auth_header: value, "Content-Type": "application/json"}
        headers.update(dict(self.config.extra_headers))
        return headers

    def _payload(self, req: CompletionRequest) -> dict:
        cfg = self.config
        payload: dict = {cfg.model_field: req.model_id}
        if cfg.system_field:
            payload[cfg.system_field] = req.prompt
            payload[cfg.messages_field] = [{"role": "user", "content": req.article_text}]
        else:
            payload[cfg.messages_field] = [
                {"role": "system", "content": req.prompt},
                {"role": "user", "content": req.article_text},
            ]
        if cfg.supports_temperature:
            payload[cfg.temperature_field] = req.temperature
        payload[cfg.max_tokens_field] = req.max_output
        return payload

    def complete(self, req: CompletionRequest, fp: str) -> str:
        headers = self._headers()  # credentials checked before any network call
        payload = self._payload(req)
        last_error: ProviderError | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                response = requests.post(
                    self.config.endpoint, json=payload, headers=headers,
                    timeout=self.config.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = ProviderError(f"transport failure: {exc}")
                log.warning("provider %s attempt %d failed: %s", self.name, attempt + 1, exc)
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_error = ProviderError(
                    "retryable provider failure", response.status_code, response.text
                )
                log.warning("provider %s attempt %d got status %d",
                            self.name, attempt + 1, response.status_code)
                continue
            if response.status_code != 200:
                raise ProviderError("provider rejected request",
                                    response.status_code, response.text)
            try:
                body = response.json()
                return str(_walk_path(body, self.config.response_path))
            except (ValueError, KeyError, IndexError) as exc:
                raise ProviderError(
                    f"cannot extract {self.config.response_path!r} from response: {exc}",
                    response.status_code, response.text,
                ) from exc
        raise last_error if last_error else ProviderError("provider failed with no response")


class ReplayProvider:
    """Serves recorded responses from an archive directory; never goes online.

    The model id defaults to the one found in the archive's records, so
    replayed requests fingerprint identically to the recording run.
    """

    name = "replay"
    deterministic = True

    def __init__(self, archive_dir: str | Path, model_id: str | None = None):
        self.archive_dir = Path(archive_dir)
        self.model_id = model_id or self._inferred_model() or "replay"

    def _inferred_model(self) -> str | None:
        if not self.archive_dir.is_dir():
            return None
        for path in sorted(self.archive_dir.rglob("*.json")):
            try:
                return json.loads(path.read_text("utf-8")).get("model_id")
            except (ValueError, OSError):
                continue
        return None

    def _lookup(self, fp: str) -> CompletionRecord | None:
        candidates = [self.archive_dir / f"{fp}.json"]
        if self.archive_dir.is_dir():
            candidates += sorted(self.archive_dir.glob(f"*/{fp}.json"))
        for path in candidates:
            if path.is_file():
                return CompletionRecord.from_dict(json.loads(path.read_text("utf-8")))
        return None

    def complete(self, req: CompletionRequest, fp: str) -> str:
        record = self._lookup(fp)
        if record is None:
            # Archives recorded from stochastic providers key by run index.
            for alt in (fingerprint(req.model_id, req.full_text(), req.run_index),
                        fingerprint(req.model_id, req.full_text(), None)):
                if alt != fp:
                    record = self._lookup(alt)
                    if record is not None:
                        break
        if record is None:
            raise ReplayMiss(f"no recorded response for fingerprint {fp}")
        return record.raw_response


class StaticProvider:
    """Deterministic in-process provider backed by a callable.

    Useful for dry runs and for recording reproducible fixture archives.
    """

    def __init__(self, respond: Callable[[CompletionRequest], str],
                 name: str = "static", model_id: str = "static-model",
                 deterministic: bool = True):
        self._respond = respond
        self.name = name
        self.model_id = model_id
        self.deterministic = deterministic

    def complete(self, req: CompletionRequest, fp: str) -> str:
        return self._respond(req)


@dataclass(frozen=True)
class RecordSummary:
    total: int
    fetched: int
    from_cache: int
    distinct_fingerprints: int
    failures: dict


class Gateway:
    """Caching front for one provider.

    With caching enabled the number of live provider calls equals the
    number of distinct fingerprints: concurrent duplicates are serialized
    per fingerprint, and cache writes are atomic (write-temp-then-rename).
    """

    def __init__(
        self,
        provider,
        cache_dir: str | Path | None = None,
        concurrency: int = DEFAULT_CONCURRENCY,
    ):
        self.provider = provider
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.concurrency = max(1, concurrency)
        self.live_calls = 0
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def fingerprint_for(self, req: CompletionRequest) -> str:
        run_indexed = req.temperature > 0 or not self.provider.deterministic
        return fingerprint(req.model_id, req.full_text(), req.run_index if run_indexed else None)

    def _cache_path(self, fp: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / self.provider.name / f"{fp}.json"

    def _read_cache(self, fp: str) -> CompletionRecord | None:
        path = self._cache_path(fp)
        if path is None or not path.is_file():
            return None
        return CompletionRecord.from_dict(json.loads(path.read_text("utf-8")))

    def _write_cache(self, record: CompletionRecord) -> None:
        path = self._cache_path(record.fingerprint)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
                json.dump(record.to_dict(), handle, ensure_ascii=False, sort_keys=True)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    def _lock_for(self, fp: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(fp, threading.Lock())

    def complete(self, req: CompletionRequest) -> CompletionRecord:
        """Return the (possibly cached) completion record for a request."""
        fp = self.fingerprint_for(req)
        record = self._read_cache(fp)
        if record is not None:
            return record
        with self._lock_for(fp):
            record = self._read_cache(fp)
            if record is not None:
                return record
            text = self.provider.complete(req, fp)
            record = CompletionRecord(
                fingerprint=fp,
                provider=self.provider.name,
                model_id=req.model_id,
                raw_response=text,
                timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            )
            self.live_calls += 1
            self._write_cache(record)
            return record

    def complete_many(
        self, requests_batch: Sequence[CompletionRequest]
    ) -> list[CompletionRecord | NarframeError]:
        """Complete a batch with bounded concurrency; errors are returned
        per item instead of aborting the batch."""

        def one(req: CompletionRequest):
            try:
                return self.complete(req)
            except NarframeError as exc:
                return exc

        if len(requests_batch) <= 1:
            return [one(req) for req in requests_batch]
        with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
            return list(pool.map(one, requests_batch))

    def record_session(
        self,
        items: Iterable[tuple[str, CompletionRequest]],
        manifest_path: str | Path | None = None,
    ) -> RecordSummary:
        """Fetch-and-cache a batch of keyed requests, resumably.

        Items whose fingerprint is already cached are skipped; repeated
        deterministic runs therefore collapse to one record each, with
        per-run accounting preserved in the manifest.
        """
        if self.cache_dir is None:
            raise ValueError("record_session requires a cache directory")
        items = list(items)
        fetched = 0
        from_cache = 0
        failures: dict[str, str] = {}
        manifest_lines = []
        fingerprints = set()
        for key, req in items:
            fp = self.fingerprint_for(req)
            fingerprints.add(fp)
            cached_before = self._read_cache(fp) is not None
            try:
                self.complete(req)
            except NarframeError as exc:
                failures[key] = str(exc)
                continue
            if cached_before:
                from_cache += 1
            else:
                fetched += 1
            manifest_lines.append(
                {"key": key, "fingerprint": fp, "run_index": req.run_index,
                 "cached": cached_before}
            )
        if manifest_path is not None:
            with open(manifest_path, "w", encoding="utf-8", newline="\n") as handle:
                for line in manifest_lines:
                    handle.write(json.dumps(line, sort_keys=True) + "\n")
        return RecordSummary(
            total=len(items),
            fetched=fetched,
            from_cache=from_cache,
            distinct_fingerprints=len(fingerprints),
            failures=failures,
        )


def make_gateway(
    provider_name: str,
    cache_dir: str | Path | None = None,
    replay_dir: str | Path | None = None,
    provider_configs: dict[str, ProviderConfig] | None = None,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> Gateway:
    """Build a gateway for a named provider, or for a replay archive."""
    if replay_dir is not None:
        return Gateway(ReplayProvider(replay_dir),
                       cache_dir=None, concurrency=concurrency)
    configs = provider_configs or load_provider_configs()
    if provider_name not in configs:
        raise NarframeError(
            f"unknown provider {provider_name!r}; configured: {sorted(configs)}"
        )
    return Gateway(HttpProvider(configs[provider_name]),
                   cache_dir=cache_dir, concurrency=concurrency)
