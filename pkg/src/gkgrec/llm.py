"""OpenAI-compatible chat-completions client used by the optional LLM paths."""
from __future__ import annotations

import logging
import math
import os
import re
import time
from typing import Protocol

from .embed import RemoteServiceError
from .prompts import OPTION_LETTERS

logger = logging.getLogger(__name__)

_LEADING = re.compile(r"^\W*([A-T])(?:\s*$|[.:)])")
_NAMED = re.compile(r"\b(?:option|answer|is)\W*([A-T])\b", re.IGNORECASE)


class TextGenerator(Protocol):
    def complete(self, prompt: str, temperature: float = 0.0) -> str: ...

    def letter_logprobs(self, prompt: str) -> dict[str, float] | None: ...


class ChatClient:
    """Minimal chat-completions client with retry and exponential backoff."""

    def __init__(self, url: str | None = None, model: str = "default",
                 api_key: str | None = None, max_retries: int = 3,
                 backoff: float = 0.5, timeout: float = 60.0, client=None):
        self.url = url or os.environ.get("GKG_LLM_URL", "")
        if not self.url:
            raise RemoteServiceError("no chat endpoint (set GKG_LLM_URL)")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get("GKG_API_KEY", "")
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self._client = client

    def _request(self, prompt: str, temperature: float, logprobs: bool) -> dict:
        import httpx

        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "logprobs": logprobs,
        }
        if logprobs:
            body["top_logprobs"] = 20
            body["max_tokens"] = 1
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        client = self._client or httpx.Client(timeout=self.timeout)
        last = None
        try:
            for attempt in range(self.max_retries):
                try:
                    resp = client.post(self.url, json=body, headers=headers)
                    if resp.status_code == 429 or resp.status_code >= 500:
                        raise httpx.HTTPStatusError(f"status {resp.status_code}",
                                                    request=resp.request, response=resp)
                    resp.raise_for_status()
                    return resp.json()
                except (httpx.HTTPError, ValueError) as exc:
                    last = exc
                    logger.warning("chat request failed (attempt %d): %s", attempt + 1, exc)
                    time.sleep(self.backoff * 2 ** attempt)
        finally:
            if self._client is None:
                client.close()
        raise RemoteServiceError(f"chat endpoint failed after {self.max_retries} tries: {last}")

    def complete(self, prompt: str, temperature: float = 0.0) -> str:
        data = self._request(prompt, temperature, logprobs=False)
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise RemoteServiceError("malformed chat response") from None

    def letter_logprobs(self, prompt: str) -> dict[str, float] | None:
        data = self._request(prompt, 0.0, logprobs=True)
        try:
            first = data["choices"][0]["logprobs"]["content"][0]
        except (KeyError, IndexError, TypeError):
            return None
        out: dict[str, float] = {}
        for cand in first.get("top_logprobs", []) or [first]:
            tok = str(cand.get("token", "")).strip()
            if tok in OPTION_LETTERS and len(tok) == 1:
                out[tok] = max(out.get(tok, -math.inf), float(cand["logprob"]))
        return out or None


def parse_letter(text: str) -> str | None:
    """Option letter from a reply such as ``"H"``, ``"H. Title"`` or ``"Answer: H"``."""
    m = _LEADING.match(text) or _NAMED.search(text)
    return m.group(1).upper() if m else None
