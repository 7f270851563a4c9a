"""Chat-completion transport.

Speaks the common ``{model, messages, temperature}`` →
``{choices: [{message: {content}}]}`` JSON shape over HTTP.  Requests can be
replayed from (or recorded into) a fixture directory keyed by a hash of the
request body, which is how offline tests exercise the live code path.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from pathlib import Path
from typing import Any, Callable, Optional

import httpx

logger = logging.getLogger(__name__)

RETRYABLE = {408, 409, 425, 500, 502, 503, 504}


class TransportError(RuntimeError):
    """Retries exhausted without a usable response."""


class LlmConfigError(RuntimeError):
    """Request rejected as malformed or unauthorised; retrying will not help."""


class MissingCredentialError(LlmConfigError):
    def __init__(self, variable: str):
        self.variable = variable
        super().__init__(f"environment variable {variable} is not set")


def request_hash(body: dict) -> str:
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _completion_text(payload: dict) -> str:
    try:
        return payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"unexpected response shape: {exc!r}") from exc


class LlmClient:
    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key_env: Optional[str] = None,
        temperature: float = 0.7,
        timeout: float = 60.0,
        max_attempts: int = 5,
        base_delay: float = 1.0,
        factor: float = 2.0,
        fixture_dir: Optional[str | Path] = None,
        record_dir: Optional[str | Path] = None,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.temperature = temperature
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.factor = factor
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.record_dir = Path(record_dir) if record_dir else None
        self.sleep = sleep
        self.trace: list[dict[str, Any]] = []
        self._api_key = None
        if api_key_env and self.fixture_dir is None:
            self._api_key = os.environ.get(api_key_env)
            if not self._api_key:
                raise MissingCredentialError(api_key_env)
        self._http = None
        if self.fixture_dir is None:
            self._http = httpx.Client(timeout=timeout, transport=transport)

    @property
    def url(self) -> str:
        if self.endpoint.endswith("/chat/completions"):
            return self.endpoint
        return f"{self.endpoint}/chat/completions"

    def _headers(self) -> dict[str, str]:
        h = {"Content-Type": "application/json"}
        if self._api_key:
            h["Authorization"] = f"Bearer {self._api_key}"
        return h

    def _log(self, body: dict, status: Optional[int], response: Any, attempt: int) -> None:
        headers = self._headers()
        if "Authorization" in headers:
            headers["Authorization"] = "Bearer ***"
        self.trace.append(
            {
                "url": self.url,
                "headers": headers,
                "request": body,
                "request_hash": request_hash(body),
                "attempt": attempt,
                "status": status,
                "response": response,
            }
        )

    def _delay(self, attempt: int, response: Optional[httpx.Response]) -> float:
        if response is not None and response.status_code == 429:
            hint = response.headers.get("retry-after")
            if hint:
                try:
                    return max(0.0, float(hint))
                except ValueError:
                    pass
        return self.base_delay * self.factor ** (attempt - 1)

    def chat(self, messages: list[dict[str, str]], **params: Any) -> str:
        body = {"model": self.model, "messages": messages, "temperature": self.temperature, **params}
        if self.fixture_dir is not None:
            return self._replay(body)
        for attempt in range(1, self.max_attempts + 1):
            response = None
            try:
                response = self._http.post(self.url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                self._log(body, None, f"transport error: {exc}", attempt)
                logger.warning("LLM request failed (%s), attempt %d/%d", exc, attempt, self.max_attempts)
            else:
                status = response.status_code
                if status < 400:
                    payload = response.json()
                    self._log(body, status, payload, attempt)
                    text = _completion_text(payload)
                    if self.record_dir is not None:
                        self.record_dir.mkdir(parents=True, exist_ok=True)
                        path = self.record_dir / f"{request_hash(body)}.json"
                        path.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
                    return text
                self._log(body, status, response.text, attempt)
                if status != 429 and status not in RETRYABLE and status < 500:
                    raise LlmConfigError(f"HTTP {status} from {self.url}: {response.text[:200]}")
                logger.warning("LLM request got HTTP %d, attempt %d/%d", status, attempt, self.max_attempts)
            if attempt < self.max_attempts:
                self.sleep(self._delay(attempt, response))
        raise TransportError(f"no usable response from {self.url} after {self.max_attempts} attempts")

    def _replay(self, body: dict) -> str:
        key = request_hash(body)
        path = self.fixture_dir / f"{key}.json"
        if not path.exists():
            self._log(body, None, "fixture missing", 1)
            raise TransportError(f"no recorded fixture {path.name}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        self._log(body, 200, payload, 1)
        return _completion_text(payload)

    def close(self) -> None:
        if self._http is not None:
            self._http.close()


def llm_chat(endpoint: str, model: str, messages: list[dict[str, str]], params: Optional[dict] = None, **client_kw) -> str:
    """One-shot convenience wrapper around :class:`LlmClient`."""
    params = dict(params or {})
    temperature = params.pop("temperature", 0.7)
    client = LlmClient(endpoint, model, temperature=temperature, **client_kw)
    try:
        return client.chat(messages, **params)
    finally:
        client.close()


def client_from_params(params: dict, **overrides) -> LlmClient:
    return LlmClient(
        params["endpoint"],
        params["model"],
        api_key_env=params.get("api_key_env"),
        temperature=float(params.get("temperature", 0.7)),
        fixture_dir=params.get("fixture_dir"),
        record_dir=params.get("record_dir"),
        **overrides,
    )
