"""Scriptable front door for the pipeline.

Runs the whole concept-to-video flow non-interactively (embedding the
engine in-process so zero services are needed; `--api URL` switches to a
remote server), verifies coverage checklists standalone, and exports
stored sessions.

Exit codes: 0 ok, 2 usage, 3 not found, 4 stage failure, 5 backend failure.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path
from typing import Optional

import click
import httpx

from .config import ServiceConfig, load_config
from .coverage import verify_text
from .engine import PipelineEngine
from .errors import (
    AnalogyKitError,
    ConfigError,
    EncoderError,
    EncoderMissingError,
    GatewayError,
    NotFoundError,
    SessionBusyError,
    StageError,
    ValidationError,
    WrongStateError,
)
from .gateway import BackendConfig, BackendKind
from .model import ComponentChecklist, PipelineSession, ProbeSource, SessionState
from .store import FilesystemStore, to_json
from .storyboard import storyboard_markdown

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_STAGE_FAILURE = 4
EXIT_BACKEND_FAILURE = 5

_MEDIA_SUFFIX = {"video/mp4": ".mp4", "application/zip": ".zip"}


def _fail(code: int, message: str) -> "click.exceptions.Exit":
    click.echo(f"error: {message}", err=True)
    return click.exceptions.Exit(code)


def _exit_code_for(exc: AnalogyKitError) -> int:
    if isinstance(exc, (ValidationError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, NotFoundError):
        return EXIT_NOT_FOUND
    if isinstance(exc, GatewayError):
        return EXIT_BACKEND_FAILURE
    if isinstance(
        exc, (StageError, EncoderError, EncoderMissingError, WrongStateError, SessionBusyError)
    ):
        return EXIT_STAGE_FAILURE
    return EXIT_STAGE_FAILURE


def _load_service_config(
    config_path: Optional[str], mock: bool, seed: Optional[int], data_root: Optional[str]
) -> ServiceConfig:
    config = load_config(config_path)
    if mock:
        config.text_backend = BackendConfig(kind=BackendKind.MOCK_TEXT)
        config.image_backend = BackendConfig(kind=BackendKind.MOCK_IMAGE)
        config.caption_backend = BackendConfig(kind=BackendKind.MOCK_CAPTION)
    if seed is not None:
        config.seed = seed
    if data_root is not None:
        config.data_root = Path(data_root)
    return config


@click.group()
def main() -> None:
    """Turn a STEM concept into an analogy storyboard and slideshow video."""


@main.command()
@click.option("--concept", "concept_name", required=True, help="STEM concept to explain.")
@click.option(
    "--subject",
    type=click.Choice(["math", "physics", "programming", "other"]),
    default="other",
)
@click.option(
    "--learner-level",
    type=click.Choice(["novice", "intermediate", "advanced"]),
    default=None,
)
@click.option(
    "--choose",
    "choose_index",
    type=click.IntRange(1, 3),
    default=1,
    show_default=True,
    help="Which of the three analogies to develop.",
)
@click.option("--mock", is_flag=True, help="Use the offline deterministic mock backends.")
@click.option("--seed", type=int, default=None, help="Override the generation seed.")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False),
    default="analogykit-out",
    show_default=True,
)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--data-root", type=click.Path(file_okay=False), default=None)
@click.option("--api", "api_url", default=None, help="Drive a remote server instead.")
def run(
    concept_name: str,
    subject: str,
    learner_level: Optional[str],
    choose_index: int,
    mock: bool,
    seed: Optional[int],
    out_dir: str,
    config_path: Optional[str],
    data_root: Optional[str],
    api_url: Optional[str],
) -> None:
    """Run the full pipeline for one concept and write all artifacts."""
    try:
        if api_url is not None:
            session_doc = _run_remote(
                api_url, concept_name, subject, learner_level, choose_index
            )
            _write_remote_artifacts(api_url, session_doc, Path(out_dir))
            click.echo(f"done: artifacts in {out_dir}")
            return

        config = _load_service_config(config_path, mock, seed, data_root)
        if data_root is None and config_path is None:
            config.data_root = Path(out_dir) / "data"
        engine = PipelineEngine(
            FilesystemStore(config.data_root),
            config.build_gateway(),
            config=config.engine_config(),
        )

        session = engine.create_session(
            _make_concept(concept_name, subject, learner_level)
        )
        click.echo(f"session {session.id}")

        click.echo("stage: validate")
        check = engine.validate_concept(session.id)
        if check.verdict.value == "not_a_concept":
            raise StageError(f"concept rejected: {check.rationale}")
        click.echo(f"  verdict: {check.verdict.value}")

        click.echo("stage: analogies")
        triple = engine.generate_analogies(session.id)
        for position, analogy in enumerate(triple, start=1):
            marker = "*" if position == choose_index else " "
            click.echo(f"  {marker} {position}. {analogy.title}")
        engine.choose_analogy(session.id, triple[choose_index - 1].id)

        click.echo("stage: storyboard")
        storyboard = engine.run_storyboard_stage(session.id)
        for scene in storyboard.scenes:
            ratio = scene.coverage[-1].report.coverage_ratio if scene.coverage else 0.0
            click.echo(f"  scene {scene.index}: coverage {ratio:.2f}")

        click.echo("stage: video")
        video_ref = engine.run_video_stage(session.id)
        click.echo(f"  artifact: {video_ref.media_type} ({video_ref.byte_length} bytes)")

        final = engine.get_session(session.id)
        _write_artifacts(engine, final, Path(out_dir))
        click.echo(f"done: artifacts in {out_dir}")
    except AnalogyKitError as exc:
        raise _fail(_exit_code_for(exc), str(exc))


def _make_concept(name: str, subject: str, learner_level: Optional[str]):
    from .model import Concept

    return Concept(name=name, subject=subject, learner_level=learner_level)


def _write_artifacts(
    engine: PipelineEngine, session: PipelineSession, out_dir: Path
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "session.json").write_text(to_json(session.to_doc()), encoding="utf-8")
    storyboard = session.storyboard
    assert storyboard is not None
    (out_dir / "storyboard.json").write_text(
        to_json(storyboard.to_doc()), encoding="utf-8"
    )
    image_paths = {}
    for scene in storyboard.scenes:
        if scene.image is None:
            continue
        name = f"scene_{scene.index}.png"
        (out_dir / name).write_bytes(engine.store.get_blob(scene.image))
        image_paths[scene.index] = name
    analogy_title = next(
        (a.title for a in session.analogies or [] if a.id == storyboard.analogy_id),
        "analogy",
    )
    (out_dir / "storyboard.md").write_text(
        storyboard_markdown(storyboard, session.concept, analogy_title, image_paths),
        encoding="utf-8",
    )
    if session.video is not None:
        suffix = _MEDIA_SUFFIX.get(session.video.media_type, ".bin")
        (out_dir / f"video{suffix}").write_bytes(engine.store.get_blob(session.video))


# -- remote mode -------------------------------------------------------------


def _run_remote(
    api_url: str,
    concept_name: str,
    subject: str,
    learner_level: Optional[str],
    choose_index: int,
) -> dict:
    base = api_url.rstrip("/")
    with httpx.Client(base_url=base, timeout=300.0) as client:
        response = client.post(
            "/sessions",
            json={
                "name": concept_name,
                "subject": subject,
                "learner_level": learner_level,
            },
        )
        _raise_for_remote(response)
        session_id = response.json()["id"]
        click.echo(f"session {session_id}")

        for stage, path in [
            ("validate", f"/sessions/{session_id}/validate"),
            ("analogies", f"/sessions/{session_id}/analogies"),
        ]:
            click.echo(f"stage: {stage}")
            _remote_stage(client, path, stage)

        session = client.get(f"/sessions/{session_id}").json()
        if session["state"] == "failed":
            raise StageError(session.get("failure_reason") or "concept rejected")
        analogies = session["analogies"]
        choice = analogies[choose_index - 1]["id"]
        response = client.post(
            f"/sessions/{session_id}/choose", json={"analogy_id": choice}
        )
        _raise_for_remote(response)

        for stage, path in [
            ("storyboard", f"/sessions/{session_id}/storyboard"),
            ("video", f"/sessions/{session_id}/video"),
        ]:
            click.echo(f"stage: {stage}")
            _remote_stage(client, path, stage)

        return client.get(f"/sessions/{session_id}").json()


def _remote_stage(client: httpx.Client, path: str, stage: str) -> None:
    response = client.post(path)
    _raise_for_remote(response)
    if response.status_code != 202:
        return  # stage already completed; stored result returned
    job = response.json()
    while True:
        time.sleep(0.1)
        status = client.get(job["status_url"]).json()
        if status["status"] == "succeeded":
            return
        if status["status"] == "failed":
            raise StageError(f"{stage} failed: {status.get('error')}")


def _raise_for_remote(response: httpx.Response) -> None:
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        if response.status_code == 404:
            raise NotFoundError(detail)
        if response.status_code == 502:
            raise GatewayError(detail)
        raise StageError(f"HTTP {response.status_code}: {detail}")


def _write_remote_artifacts(api_url: str, session: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "session.json").write_text(
        json.dumps(session, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    base = api_url.rstrip("/")
    with httpx.Client(base_url=base, timeout=60.0) as client:
        storyboard = session.get("storyboard") or {}
        for scene in storyboard.get("scenes", []):
            image = scene.get("image")
            if image:
                data = client.get(f"/blobs/{image['hash']}").content
                (out_dir / f"scene_{scene['index']}.png").write_bytes(data)
        video = session.get("video")
        if video:
            suffix = _MEDIA_SUFFIX.get(video["media_type"], ".bin")
            data = client.get(f"/blobs/{video['hash']}").content
            (out_dir / f"video{suffix}").write_bytes(data)


# -- coverage ----------------------------------------------------------------


@main.group()
def coverage() -> None:
    """Standalone component-coverage tools."""


@coverage.command("verify")
@click.option(
    "--checklist",
    "checklist_file",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="ComponentChecklist JSON document.",
)
@click.option(
    "--text",
    "text_file",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="Probe text (scene description or image caption).",
)
@click.option(
    "--source",
    type=click.Choice(["scene_description", "image_caption"]),
    default="image_caption",
    show_default=True,
)
def coverage_verify(checklist_file: str, text_file: str, source: str) -> None:
    """Verify a probe text against a checklist; prints the report."""
    try:
        checklist = ComponentChecklist.from_doc(
            json.loads(Path(checklist_file).read_text(encoding="utf-8"))
        )
    except (json.JSONDecodeError, KeyError, AnalogyKitError) as exc:
        raise _fail(EXIT_USAGE, f"cannot read checklist: {exc}")
    probe = Path(text_file).read_text(encoding="utf-8")
    report = verify_text(checklist, probe, ProbeSource(source))
    click.echo(json.dumps(report.to_doc(), indent=2, sort_keys=True))
    if report.missing_required:
        click.echo(
            "missing required: " + ", ".join(report.missing_required), err=True
        )


# -- export ------------------------------------------------------------------


@main.command()
@click.option("--session", "session_id", required=True)
@click.option("--format", "fmt", type=click.Choice(["doc", "markdown"]), default="doc")
@click.option("--out", "out_file", type=click.Path(dir_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--data-root", type=click.Path(file_okay=False), default=None)
def export(
    session_id: str,
    fmt: str,
    out_file: Optional[str],
    config_path: Optional[str],
    data_root: Optional[str],
) -> None:
    """Export a stored session as a document or educator markdown."""
    try:
        config = _load_service_config(config_path, mock=False, seed=None, data_root=data_root)
        store = FilesystemStore(config.data_root)
        session = store.load_session(session_id)
        if fmt == "doc":
            payload = to_json(session.to_doc())
        else:
            if session.storyboard is None:
                raise StageError("session has no storyboard to export")
            analogy_title = next(
                (
                    a.title
                    for a in session.analogies or []
                    if a.id == session.storyboard.analogy_id
                ),
                "analogy",
            )
            payload = storyboard_markdown(
                session.storyboard, session.concept, analogy_title
            )
        if out_file:
            Path(out_file).write_text(payload, encoding="utf-8")
            click.echo(f"wrote {out_file}")
        else:
            click.echo(payload)
    except AnalogyKitError as exc:
        raise _fail(_exit_code_for(exc), str(exc))


# -- serve ---------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def serve(config_path: Optional[str]) -> None:
    """Start the HTTP API (and UI, when a built bundle is configured)."""
    from .api import serve as start_service

    try:
        config = load_config(config_path)
        service = start_service(config)
        click.echo(f"listening on http://{config.host}:{config.port}")
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            service.stop()
    except AnalogyKitError as exc:
        raise _fail(_exit_code_for(exc), str(exc))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
