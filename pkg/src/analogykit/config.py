"""Service configuration: one YAML file plus environment overrides.

Every validation failure raises ConfigError naming the offending field,
so a bad deployment fails at startup with an actionable message instead
of midway through a session.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .engine import EngineConfig
from .errors import ConfigError
from .gateway import BackendConfig, BackendKind, ModelGateway
from .video import TimingConfig

ENV_DATA_ROOT = "ANALOGYKIT_DATA_ROOT"
ENV_PORT = "ANALOGYKIT_PORT"


@dataclass
class ServiceConfig:
    data_root: Path = Path("./data")
    host: str = "127.0.0.1"
    port: int = 8321
    cors_allow_all: bool = False
    static_dir: Optional[Path] = None
    seed: Optional[int] = 0
    text_backend: BackendConfig = field(
        default_factory=lambda: BackendConfig(kind=BackendKind.MOCK_TEXT)
    )
    image_backend: BackendConfig = field(
        default_factory=lambda: BackendConfig(kind=BackendKind.MOCK_IMAGE)
    )
    caption_backend: BackendConfig = field(
        default_factory=lambda: BackendConfig(kind=BackendKind.MOCK_CAPTION)
    )
    repair_budget: int = 2
    image_size: int = 512
    candidates_per_attempt: int = 1
    timing: TimingConfig = field(default_factory=TimingConfig)
    encoder: str = "ffmpeg"
    fallback_archive: bool = True
    max_inflight_per_backend: int = 4

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            seed=self.seed,
            repair_budget=self.repair_budget,
            image_size=self.image_size,
            candidates_per_attempt=self.candidates_per_attempt,
            timing=self.timing,
            encoder=self.encoder,
            fallback_enabled=self.fallback_archive,
        )

    def build_gateway(self) -> ModelGateway:
        return ModelGateway(
            text=self.text_backend,
            image=self.image_backend,
            caption=self.caption_backend,
            max_inflight_per_backend=self.max_inflight_per_backend,
            mock_seed=self.seed or 0,
        )


def _expect(doc: dict, key: str, kind: type, default: Any, path: str) -> Any:
    value = doc.get(key, default)
    if value is None and default is None:
        return None
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}{key}", f"expected {kind.__name__}, got bool")
    if not isinstance(value, kind):
        raise ConfigError(
            f"{path}{key}", f"expected {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _parse_backend(doc: Any, name: str) -> BackendConfig:
    path = f"backends.{name}."
    if not isinstance(doc, dict):
        raise ConfigError(f"backends.{name}", "expected a mapping")
    kind_raw = doc.get("kind")
    try:
        kind = BackendKind(kind_raw)
    except ValueError:
        raise ConfigError(
            f"{path}kind",
            f"{kind_raw!r} is not one of {[k.value for k in BackendKind]}",
        )
    return BackendConfig(
        kind=kind,
        endpoint=doc.get("endpoint"),
        credential_ref=doc.get("credential_ref"),
        model=doc.get("model"),
        timeout_ms=_expect(doc, "timeout_ms", int, 30_000, path),
        max_retries=_expect(doc, "max_retries", int, 2, path),
        backoff_base_ms=_expect(doc, "backoff_base_ms", int, 250, path),
    )


def load_config(path: Optional[str | Path] = None) -> ServiceConfig:
    """Parse the config file (all-mock defaults when absent) and apply
    environment overrides."""
    doc: dict[str, Any] = {}
    if path is not None:
        file_path = Path(path)
        if not file_path.exists():
            raise ConfigError("config", f"file not found: {file_path}")
        try:
            loaded = yaml.safe_load(file_path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"not valid YAML: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be a mapping")
        doc = loaded

    config = ServiceConfig()

    config.data_root = Path(_expect(doc, "data_root", str, "./data", ""))
    config.host = _expect(doc, "host", str, config.host, "")
    config.port = _expect(doc, "port", int, config.port, "")
    if not 1 <= config.port <= 65535:
        raise ConfigError("port", f"{config.port} outside 1..65535")
    config.cors_allow_all = _expect(doc, "cors_allow_all", bool, False, "")
    static_dir = doc.get("static_dir")
    if static_dir is not None:
        if not isinstance(static_dir, str):
            raise ConfigError("static_dir", "expected a path string")
        config.static_dir = Path(static_dir)
    if "seed" in doc:
        seed = doc["seed"]
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
            raise ConfigError("seed", "expected an integer or null")
        config.seed = seed

    backends = doc.get("backends", {})
    if not isinstance(backends, dict):
        raise ConfigError("backends", "expected a mapping")
    if "text" in backends:
        config.text_backend = _parse_backend(backends["text"], "text")
    if "image" in backends:
        config.image_backend = _parse_backend(backends["image"], "image")
    if "caption" in backends:
        config.caption_backend = _parse_backend(backends["caption"], "caption")

    coverage = doc.get("coverage", {})
    if not isinstance(coverage, dict):
        raise ConfigError("coverage", "expected a mapping")
    config.repair_budget = _expect(coverage, "repair_budget", int, 2, "coverage.")
    if config.repair_budget < 0:
        raise ConfigError("coverage.repair_budget", "must be >= 0")

    image = doc.get("image", {})
    if not isinstance(image, dict):
        raise ConfigError("image", "expected a mapping")
    config.image_size = _expect(image, "size", int, 512, "image.")
    config.candidates_per_attempt = _expect(
        image, "candidates_per_attempt", int, 1, "image."
    )
    if config.image_size not in (512, 768, 1024):
        raise ConfigError("image.size", f"{config.image_size} not in (512, 768, 1024)")

    video = doc.get("video", {})
    if not isinstance(video, dict):
        raise ConfigError("video", "expected a mapping")
    resolution = video.get("resolution", [1280, 720])
    if (
        not isinstance(resolution, (list, tuple))
        or len(resolution) != 2
        or not all(isinstance(v, int) and v > 0 for v in resolution)
    ):
        raise ConfigError("video.resolution", "expected [width, height] positive ints")
    per_scene = video.get("per_scene_ms", {})
    if isinstance(per_scene, list):
        per_scene = {i + 1: v for i, v in enumerate(per_scene)}
    if not isinstance(per_scene, dict) or not all(
        isinstance(v, int) and v > 0 for v in per_scene.values()
    ):
        raise ConfigError("video.per_scene_ms", "expected positive durations")
    config.timing = TimingConfig(
        fps=_expect(video, "fps", int, 30, "video."),
        resolution=(resolution[0], resolution[1]),
        segment_ms=_expect(video, "segment_ms", int, 5_000, "video."),
        per_scene_ms={int(k): v for k, v in per_scene.items()},
        crossfade_ms=_expect(video, "crossfade_ms", int, 500, "video."),
        zoom_end_scale=float(video.get("zoom_end_scale", 0.85)),
    )
    if not 0.1 <= config.timing.zoom_end_scale <= 1.0:
        raise ConfigError("video.zoom_end_scale", "must lie in [0.1, 1.0]")
    config.encoder = _expect(video, "encoder", str, "ffmpeg", "video.")
    config.fallback_archive = _expect(video, "fallback_archive", bool, True, "video.")

    parallelism = doc.get("parallelism", {})
    if not isinstance(parallelism, dict):
        raise ConfigError("parallelism", "expected a mapping")
    config.max_inflight_per_backend = _expect(
        parallelism, "max_inflight_per_backend", int, 4, "parallelism."
    )
    if config.max_inflight_per_backend < 1:
        raise ConfigError("parallelism.max_inflight_per_backend", "must be >= 1")

    if os.environ.get(ENV_DATA_ROOT):
        config.data_root = Path(os.environ[ENV_DATA_ROOT])
    if os.environ.get(ENV_PORT):
        try:
            config.port = int(os.environ[ENV_PORT])
        except ValueError:
            raise ConfigError("port", f"env {ENV_PORT} is not an integer")

    return config
