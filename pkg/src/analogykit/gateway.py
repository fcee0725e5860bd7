"""Uniform access to text, image, and caption model backends.

Live backends speak a chat-completions-style HTTP contract so any
compatible provider can be dropped in by configuration; credentials are
read from the environment variable each backend names and never appear
in logs, errors, or serialized artifacts. The mock kinds (see mocks.py)
need no endpoint and no credentials.

Retry policy: transport failures, timeouts, 429 and 5xx responses retry
with exponential backoff up to max_retries; auth failures and other 4xx
fail immediately.
"""

from __future__ import annotations

import base64
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

import httpx

from .errors import (
    BackendResponseError,
    ConfigError,
    GatewayAuthError,
    GatewayError,
    GatewayTimeoutError,
    RetriesExhaustedError,
    ValidationError,
)
from .mocks import MockCaptionBackend, MockImageBackend, MockTextBackend

logger = logging.getLogger(__name__)

ALLOWED_IMAGE_DIMENSIONS = (512, 768, 1024)


class BackendKind(str, Enum):
    LIVE_TEXT = "live_text"
    LIVE_IMAGE = "live_image"
    LIVE_CAPTION = "live_caption"
    MOCK_TEXT = "mock_text"
    MOCK_IMAGE = "mock_image"
    MOCK_CAPTION = "mock_caption"

    @property
    def is_mock(self) -> bool:
        return self.value.startswith("mock_")


@dataclass
class TextRequest:
    prompt: str
    max_tokens: int = 1024
    temperature: float = 0.2
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.prompt.strip():
            raise ValidationError("text prompt must be non-empty")
        if self.max_tokens <= 0:
            raise ValidationError("max_tokens must be positive")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValidationError("temperature must lie in [0, 2]")


@dataclass
class ImageRequest:
    prompt: str
    width: int = 512
    height: int = 512
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.prompt.strip():
            raise ValidationError("image prompt must be non-empty")
        for side in (self.width, self.height):
            if side not in ALLOWED_IMAGE_DIMENSIONS:
                raise ValidationError(
                    f"image dimension {side} not in allowed set "
                    f"{ALLOWED_IMAGE_DIMENSIONS}"
                )


@dataclass
class BackendConfig:
    kind: BackendKind
    endpoint: Optional[str] = None
    credential_ref: Optional[str] = None
    model: Optional[str] = None
    timeout_ms: int = 30_000
    max_retries: int = 2
    backoff_base_ms: int = 250

    def __post_init__(self) -> None:
        if isinstance(self.kind, str):
            self.kind = BackendKind(self.kind)
        if self.kind.is_mock:
            if self.endpoint or self.credential_ref:
                raise ConfigError(
                    "backends",
                    f"{self.kind.value} must not set endpoint or credential_ref",
                )
        else:
            if not self.endpoint or not self.credential_ref:
                raise ConfigError(
                    "backends",
                    f"{self.kind.value} requires both endpoint and credential_ref",
                )
        if self.max_retries < 0:
            raise ConfigError("backends", "max_retries must be >= 0")

    def credential(self) -> str:
        assert self.credential_ref is not None
        value = os.environ.get(self.credential_ref)
        if not value:
            raise GatewayAuthError(
                f"credential environment variable '{self.credential_ref}' is not set"
            )
        return value


@dataclass
class CallStats:
    """Retry accounting for the most recent and cumulative calls."""

    attempts: int = 0
    retries: int = 0
    delays: list[float] = field(default_factory=list)
    last_attempts: int = 0
    last_retries: int = 0


class _Retryable(Exception):
    """Internal marker: this attempt failed but another may succeed."""

    def __init__(self, message: str, timeout: bool = False):
        super().__init__(message)
        self.timeout = timeout


def _sanitize(text: str, secrets: list[str]) -> str:
    for secret in secrets:
        if secret:
            text = text.replace(secret, "[redacted]")
    return text


class _MockTextAdapter:
    """Presents the mock text backend under the live request signature."""

    def __init__(self, default_seed: int = 0):
        self._backend = MockTextBackend(default_seed)

    def complete(self, request: TextRequest) -> str:
        return self._backend.complete(request.prompt, request.seed)


class LiveTextBackend:
    def __init__(self, config: BackendConfig):
        self.config = config

    def complete(self, request: TextRequest) -> str:
        payload: dict[str, Any] = {
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        if self.config.model:
            payload["model"] = self.config.model
        body = _post_json(self.config, payload)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendResponseError(
                f"text backend response missing choices[0].message.content: {exc}"
            ) from exc


class LiveImageBackend:
    def __init__(self, config: BackendConfig):
        self.config = config

    def generate(
        self, prompt: str, width: int, height: int, seed: int | None = None
    ) -> tuple[bytes, dict]:
        payload: dict[str, Any] = {
            "prompt": prompt,
            "width": width,
            "height": height,
            "n": 1,
            "response_format": "b64_json",
        }
        if seed is not None:
            payload["seed"] = seed
        if self.config.model:
            payload["model"] = self.config.model
        body = _post_json(self.config, payload)
        try:
            b64 = body["data"][0]["b64_json"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendResponseError(
                f"image backend response missing data[0].b64_json: {exc}"
            ) from exc
        try:
            return base64.b64decode(b64), {}
        except ValueError as exc:
            raise BackendResponseError(f"image payload is not valid base64: {exc}") from exc


class LiveCaptionBackend:
    def __init__(self, config: BackendConfig, instruction: str = ""):
        self.config = config
        self.instruction = instruction

    def caption(self, image_bytes: bytes) -> str:
        if not image_bytes:
            raise BackendResponseError("cannot caption an empty image")
        payload: dict[str, Any] = {
            "image_b64": base64.b64encode(image_bytes).decode("ascii"),
        }
        if self.instruction:
            payload["prompt"] = self.instruction
        if self.config.model:
            payload["model"] = self.config.model
        body = _post_json(self.config, payload)
        caption = body.get("caption") or body.get("text")
        if not isinstance(caption, str) or not caption:
            raise BackendResponseError("caption backend returned no caption text")
        return caption


def _post_json(config: BackendConfig, payload: dict[str, Any]) -> dict[str, Any]:
    """Single HTTP attempt; raises _Retryable for failures worth retrying."""
    credential = config.credential()
    timeout = config.timeout_ms / 1000.0
    try:
        response = httpx.post(
            config.endpoint,
            json=payload,
            headers={"Authorization": f"Bearer {credential}"},
            timeout=timeout,
        )
    except httpx.TimeoutException:
        raise _Retryable(f"timeout after {config.timeout_ms} ms", timeout=True)
    except httpx.HTTPError as exc:
        raise _Retryable(_sanitize(f"transport error: {exc}", [credential]))

    if response.status_code in (401, 403):
        raise GatewayAuthError(f"backend rejected credentials (HTTP {response.status_code})")
    if response.status_code == 429 or response.status_code >= 500:
        raise _Retryable(f"HTTP {response.status_code}")
    if response.status_code >= 400:
        raise BackendResponseError(
            _sanitize(f"HTTP {response.status_code}: {response.text[:200]}", [credential])
        )
    try:
        return response.json()
    except ValueError as exc:
        raise BackendResponseError(f"backend response is not valid JSON: {exc}") from exc


class ModelGateway:
    """Facade over the three backends with retries and an in-flight cap."""

    def __init__(
        self,
        text: BackendConfig,
        image: BackendConfig,
        caption: BackendConfig,
        *,
        max_inflight_per_backend: int = 4,
        caption_instruction: str = "",
        mock_seed: int = 0,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.configs = {"text": text, "image": image, "caption": caption}
        self._sleeper = sleeper
        self._limits = {
            name: threading.BoundedSemaphore(max_inflight_per_backend)
            for name in self.configs
        }
        self.stats = {name: CallStats() for name in self.configs}
        self._stats_lock = threading.Lock()

        self._text = (
            _MockTextAdapter(mock_seed) if text.kind.is_mock else LiveTextBackend(text)
        )
        self._image = (
            MockImageBackend() if image.kind.is_mock else LiveImageBackend(image)
        )
        self._caption = (
            MockCaptionBackend()
            if caption.kind.is_mock
            else LiveCaptionBackend(caption, caption_instruction)
        )

    @property
    def all_mock(self) -> bool:
        return all(c.kind.is_mock for c in self.configs.values())

    def describe(self) -> dict[str, str]:
        return {name: c.kind.value for name, c in self.configs.items()}

    # -- operations ------------------------------------------------------

    def complete_text(self, request: TextRequest) -> str:
        return self._call("text", lambda: self._text.complete(request))

    def generate_image(self, request: ImageRequest) -> tuple[bytes, dict]:
        return self._call(
            "image",
            lambda: self._image.generate(
                request.prompt, request.width, request.height, request.seed
            ),
        )

    def caption_image(self, image_bytes: bytes) -> str:
        return self._call("caption", lambda: self._caption.caption(image_bytes))

    # -- retry machinery ---------------------------------------------------

    def _call(self, backend_name: str, attempt: Callable[[], Any]) -> Any:
        config = self.configs[backend_name]
        max_attempts = config.max_retries + 1
        failures: list[_Retryable] = []
        with self._limits[backend_name]:
            for attempt_index in range(max_attempts):
                if attempt_index > 0:
                    delay = (config.backoff_base_ms / 1000.0) * (2 ** (attempt_index - 1))
                    with self._stats_lock:
                        self.stats[backend_name].delays.append(delay)
                    self._sleeper(delay)
                self._record_attempt(backend_name, attempt_index)
                try:
                    result = attempt()
                except _Retryable as exc:
                    failures.append(exc)
                    logger.warning(
                        "%s backend attempt %d/%d failed: %s",
                        backend_name,
                        attempt_index + 1,
                        max_attempts,
                        exc,
                    )
                    continue
                except GatewayError:
                    raise
                return result
        if failures and all(f.timeout for f in failures):
            raise GatewayTimeoutError(
                f"{backend_name} backend timed out on all {max_attempts} attempts"
            )
        last = failures[-1] if failures else None
        raise RetriesExhaustedError(
            f"{backend_name} backend failed: {last}", attempts=max_attempts
        )

    def _record_attempt(self, backend_name: str, attempt_index: int) -> None:
        with self._stats_lock:
            s = self.stats[backend_name]
            if attempt_index == 0:
                s.last_attempts = 0
                s.last_retries = 0
            s.attempts += 1
            s.last_attempts += 1
            if attempt_index > 0:
                s.retries += 1
                s.last_retries += 1


def mock_gateway(seed: int = 0) -> ModelGateway:
    """Gateway wired entirely to the deterministic mock family."""
    return ModelGateway(
        text=BackendConfig(kind=BackendKind.MOCK_TEXT),
        image=BackendConfig(kind=BackendKind.MOCK_IMAGE),
        caption=BackendConfig(kind=BackendKind.MOCK_CAPTION),
        mock_seed=seed,
    )
