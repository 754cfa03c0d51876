"""Chat-completion clients: a live HTTP one and a scripted mock."""

from __future__ import annotations

import json
import os
from pathlib import Path

import httpx

from ..errors import ExternalServiceError, UsageError

MOCK_SCHEME = "mock:"


class MockChatClient:
    """Replays scripted replies in order and records every request."""

    def __init__(self, responses: list[str]):
        if not all(isinstance(r, str) for r in responses):
            raise UsageError("mock responses must be strings")
        self.responses = list(responses)
        self.requests: list[list[dict]] = []

    @classmethod
    def from_file(cls, path) -> MockChatClient:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot load mock responses from {path}: {exc}") from exc
        if not isinstance(data, list):
            raise UsageError(f"{path}: mock file must hold a JSON list of strings")
        return cls(data)

    @property
    def calls(self) -> int:
        return len(self.requests)

    def complete(self, messages: list[dict]) -> str:
        if self.calls >= len(self.responses):
            raise ExternalServiceError(f"mock client ran out of scripted replies after {self.calls} calls")
        self.requests.append(messages)
        return self.responses[self.calls - 1]


class HttpChatClient:
    """OpenAI-style ``/chat/completions`` over HTTP."""

    def __init__(self, endpoint: str, model: str, api_key_env: str = "OPENAI_API_KEY", timeout: float = 120.0, transport=None):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.transport = transport  # injectable for tests

    def complete(self, messages: list[dict]) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise UsageError(f"environment variable {self.api_key_env} is not set")
        body = {"model": self.model, "messages": messages, "temperature": 0}
        try:
            with httpx.Client(timeout=self.timeout, transport=self.transport) as http:
                resp = http.post(self.endpoint, json=body, headers={"Authorization": f"Bearer {key}"})
                resp.raise_for_status()
                data = resp.json()
        except httpx.HTTPError as exc:
            raise ExternalServiceError(f"chat request to {self.endpoint} failed: {exc}") from exc
        except ValueError as exc:
            raise ExternalServiceError(f"chat endpoint returned non-JSON: {exc}") from exc
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ExternalServiceError(f"unexpected chat response shape: {str(data)[:200]}") from exc
        if isinstance(content, list):  # some servers echo content parts
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        return str(content)


def make_client(endpoint: str, model: str = "gpt-4o", api_key_env: str = "OPENAI_API_KEY"):
    """``mock:<path>`` gives a :class:`MockChatClient`; anything else is an HTTP endpoint."""
    if endpoint.startswith(MOCK_SCHEME):
        return MockChatClient.from_file(endpoint[len(MOCK_SCHEME) :])
    if not endpoint.startswith(("http://", "https://")):
        raise UsageError(f"llm.endpoint must be http(s):// or {MOCK_SCHEME}<file>, got {endpoint!r}")
    return HttpChatClient(endpoint, model, api_key_env)
