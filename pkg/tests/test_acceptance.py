"""Acceptance criteria, one test per criterion.

Each test prints `ACCEPTANCE <name>: PASS|FAIL` (visible with `pytest -s`
or in captured output). Tolerances are pinned here, not configurable.
"""

from __future__ import annotations

import functools
import io
import json
import random
import time
import zipfile

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from analogykit.api import create_app
from analogykit.cli import main as cli_main
from analogykit.config import ServiceConfig
from analogykit.coverage import coverage_loop, extract_checklist, verify_text
from analogykit.engine import ALLOWED_TRANSITIONS, EngineConfig, PipelineEngine
from analogykit.errors import AnalogyKitError, IntegrityError
from analogykit.gateway import mock_gateway
from analogykit.model import (
    Concept,
    ProbeSource,
    Scene,
    SessionState,
    Subject,
)
from analogykit.store import FilesystemStore
from analogykit.video import TimingConfig, find_encoder
from conftest import drive_to_storyboard

FAST_TIMING = TimingConfig(resolution=(320, 180), segment_ms=1_000, crossfade_ms=200)


def criterion(name):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                print(f"\nACCEPTANCE {name}: FAIL")
                raise
            print(f"\nACCEPTANCE {name}: PASS")
            return result

        return wrapper

    return decorate


# ---------------------------------------------------------------------------
# 1. End-to-end mock run


@criterion("end-to-end mock run")
def test_end_to_end_mock_run(tmp_path):
    runner = CliRunner()
    outs = [tmp_path / "run1", tmp_path / "run2"]
    durations = []
    for out in outs:
        started = time.monotonic()
        result = runner.invoke(
            cli_main,
            ["run", "--concept", "Newton's First Law", "--subject", "physics",
             "--mock", "--seed", "0", "--out", str(out)],
        )
        durations.append(time.monotonic() - started)
        assert result.exit_code == 0, result.output

    assert max(durations) < 10.0, f"run took {max(durations):.1f}s, budget is 10s"

    session = json.loads((outs[0] / "session.json").read_text())
    assert len(session["analogies"]) == 3
    assert len(session["storyboard"]["scenes"]) == 4
    images = list(outs[0].glob("scene_*.png"))
    assert len(images) == 4
    assert len(list(outs[0].glob("video.*"))) == 1

    first = (outs[0] / "storyboard.json").read_bytes()
    second = (outs[1] / "storyboard.json").read_bytes()
    assert first == second, "storyboard documents differ between seeded runs"


# ---------------------------------------------------------------------------
# 2. State-machine property suite


STATE_RANK = {
    SessionState.CREATED: 0,
    SessionState.CONCEPT_VALIDATED: 1,
    SessionState.ANALOGIES_READY: 2,
    SessionState.ANALOGY_CHOSEN: 3,
    SessionState.STORYBOARD_READY: 4,
    SessionState.VIDEO_READY: 5,
    SessionState.FAILED: 6,
}

CONCEPT_POOL = [
    ("Newton's First Law", Subject.PHYSICS),
    ("Object-Oriented Programming", Subject.PROGRAMMING),
    ("Voltage and Current", Subject.PHYSICS),
    ("Eigenvalues", Subject.MATH),
    ("asdfgh", Subject.OTHER),
]


def _adversarial_op(rng, engine, session_id):
    """Any operation at random, very often invalid for the current state."""
    roll = rng.random()
    if roll < 0.2:
        return engine.validate_concept(session_id)
    if roll < 0.4:
        return engine.generate_analogies(session_id)
    if roll < 0.55:
        session = engine.get_session(session_id)
        if session.analogies and rng.random() > 0.3:
            return engine.choose_analogy(session_id, rng.choice(session.analogies).id)
        return engine.choose_analogy(session_id, "bogus-id")
    if roll < 0.7:
        return engine.run_storyboard_stage(session_id, force=rng.random() < 0.3)
    if roll < 0.85:
        index = rng.choice([0, 1, 2, 3, 4, 7])
        if rng.random() < 0.5:
            return engine.edit_scene(session_id, index, new_description="edited")
        return engine.edit_scene(session_id, index, new_image_prompt=f"visual {index}")
    if roll < 0.92:
        return engine.regenerate_scene(session_id, rng.choice([1, 2, 3, 4]))
    return engine.run_video_stage(session_id, force=rng.random() < 0.3)


def _guided_op(rng, engine, session_id):
    """Mostly advance the pipeline, sometimes take a sanctioned backward edge."""
    state = engine.get_session(session_id).state
    if state == SessionState.CREATED:
        return engine.validate_concept(session_id)
    if state == SessionState.CONCEPT_VALIDATED:
        return engine.generate_analogies(session_id)
    if state == SessionState.ANALOGIES_READY:
        session = engine.get_session(session_id)
        return engine.choose_analogy(session_id, rng.choice(session.analogies).id)
    if state == SessionState.ANALOGY_CHOSEN:
        if rng.random() < 0.15:  # re-pick before building
            session = engine.get_session(session_id)
            return engine.choose_analogy(session_id, rng.choice(session.analogies).id)
        return engine.run_storyboard_stage(session_id)
    if state == SessionState.STORYBOARD_READY:
        roll = rng.random()
        if roll < 0.15:
            return engine.edit_scene(
                session_id, rng.choice([1, 2, 3, 4]), new_description="edited"
            )
        if roll < 0.25:
            return engine.regenerate_scene(session_id, rng.choice([1, 2, 3, 4]))
        if roll < 0.35:  # backtrack: re-pick the analogy
            session = engine.get_session(session_id)
            return engine.choose_analogy(session_id, rng.choice(session.analogies).id)
        return engine.run_video_stage(session_id)
    if state == SessionState.VIDEO_READY:
        roll = rng.random()
        if roll < 0.4:  # edits invalidate the finished video
            return engine.edit_scene(
                session_id, rng.choice([1, 2, 3, 4]), new_description="post-video edit"
            )
        if roll < 0.6:
            return engine.regenerate_scene(session_id, rng.choice([1, 2, 3, 4]))
        return engine.run_video_stage(session_id, force=True)
    # failed: nothing legal remains; poke a random op at it
    return _adversarial_op(rng, engine, session_id)


def _random_op(rng, engine, session_id):
    if rng.random() < 0.35:
        return _adversarial_op(rng, engine, session_id)
    return _guided_op(rng, engine, session_id)


@criterion("state-machine property suite (1000 sequences)")
def test_state_machine_property_suite(tmp_path):
    rng = random.Random(20260810)
    engine = PipelineEngine(
        FilesystemStore(tmp_path / "fsm"),
        mock_gateway(seed=0),
        config=EngineConfig(timing=FAST_TIMING),
    )

    for sequence in range(1000):
        name, subject = CONCEPT_POOL[rng.randrange(len(CONCEPT_POOL))]
        session = engine.create_session(Concept(name=name, subject=subject))
        previous = session.state
        for _ in range(rng.randint(3, 7)):
            try:
                _random_op(rng, engine, session.id)
            except AnalogyKitError:
                current = engine.get_session(session.id).state
                assert current == previous, (
                    f"rejected op moved state {previous} -> {current}"
                )
                continue
            loaded = engine.get_session(session.id)
            loaded.validate()  # cardinality + field-population invariants
            if loaded.state != previous:
                assert (previous, loaded.state) in ALLOWED_TRANSITIONS, (
                    f"illegal transition {previous.value} -> {loaded.state.value}"
                )
                if STATE_RANK[loaded.state] < STATE_RANK[previous]:
                    # backtracking hygiene: downstream artifacts nulled
                    if loaded.state == SessionState.ANALOGY_CHOSEN:
                        assert loaded.storyboard is None or (
                            previous != SessionState.STORYBOARD_READY
                        )
                        assert loaded.video is None
                    if loaded.state == SessionState.STORYBOARD_READY:
                        assert loaded.video is None
            previous = loaded.state


# ---------------------------------------------------------------------------
# 3. Coverage reproduction


@criterion("coverage failure reproduction and repair")
def test_coverage_reproduction(tmp_path):
    gateway = mock_gateway(seed=0)
    store = FilesystemStore(tmp_path / "cov")
    from analogykit.prompts import default_library

    library = default_library()
    concept = Concept(name="Voltage and Current", subject=Subject.PHYSICS)
    from analogykit.model import Analogy, ComponentMapping

    analogy = Analogy(
        id="water1",
        title="Two water tanks",
        scenario=(
            "Water flows through a narrow tube connected between two water "
            "tanks, one tank having significantly more water than the other."
        ),
        mappings=[
            ComponentMapping("electric voltage", "water level difference"),
            ComponentMapping("electric current", "water flow"),
            ComponentMapping("the conducting wire", "connecting tube"),
            ComponentMapping("the charge reservoirs", "two water tanks"),
        ],
    )
    checklist = extract_checklist(concept, analogy, gateway, library)

    # the observed failure: tanks drawn with unequal levels, tube missing
    failure_caption = "two water tanks, one fuller than the other"
    report = verify_text(checklist, failure_caption, ProbeSource.IMAGE_CAPTION)
    assert {"connecting tube"} <= set(report.missing_required)

    listing = "; ".join(i.canonical for i in checklist.items)
    scene = Scene(
        index=1,
        image_prompt=(
            analogy.scenario + f"\nThe image must clearly include: {listing}."
        ),
        description="Two tanks joined by a tube.",
    )
    result = coverage_loop(scene, checklist, gateway, store, budget=2, seed=1)
    trail_ratios = [a.report.coverage_ratio for a in result.coverage]
    assert len(result.coverage) == 2, "expected exactly one repair iteration"
    assert trail_ratios[-1] == 1.0
    assert trail_ratios == sorted(trail_ratios), "ratio decreased across the trail"


# ---------------------------------------------------------------------------
# 4. Video math


@criterion("video math")
def test_video_math(engine, newton, store):
    from analogykit.model import Rect
    from analogykit.video import build_manifest, interpolate_motion, render

    session_id, storyboard = drive_to_storyboard(engine, newton)
    manifest = build_manifest(storyboard)
    assert manifest.total_duration_ms == 20_000  # exact, 4 x 5000 ms

    segment = manifest.segments[0]
    a, b = segment.motion_start, segment.motion_end
    for k in range(100):
        t = k / 99
        rect = interpolate_motion(segment, t)
        assert rect.x == (1 - t) * a.x + t * b.x
        assert rect.y == (1 - t) * a.y + t * b.y
        assert rect.w == (1 - t) * a.w + t * b.w
        assert rect.h == (1 - t) * a.h + t * b.h

    if find_encoder("ffmpeg"):
        import subprocess

        ref = render(manifest, store)
        assert ref.media_type == "video/mp4"
        probe = subprocess.run(
            ["ffprobe", "-v", "quiet", "-show_entries", "format=duration",
             "-of", "json", str(store._blob_path(ref.hash))],
            capture_output=True, text=True,
        )
        duration_ms = float(json.loads(probe.stdout)["format"]["duration"]) * 1000
        assert abs(duration_ms - 20_000) <= 100
    else:
        ref = render(manifest, store, encoder="ffmpeg")  # falls back: not installed
        assert ref.media_type == "application/zip"
        archive = zipfile.ZipFile(io.BytesIO(store.get_blob(ref)))
        names = archive.namelist()
        keyframes = [n for n in names if n.startswith("keyframes/")]
        assert len(keyframes) == 20
        assert "manifest.json" in names


# ---------------------------------------------------------------------------
# 5. Store properties


@criterion("store properties (10k round-trips)")
def test_store_properties(tmp_path):
    store = FilesystemStore(tmp_path / "blobstore")
    rng = random.Random(1234)

    seen = {}
    for _ in range(10_000):
        data = rng.randbytes(rng.randint(0, 64))
        ref = store.put_blob(data, "application/octet-stream")
        assert store.get_blob(ref) == data
        seen[ref.hash] = data
    count_after_first_pass = store.blob_count()
    assert count_after_first_pass == len(seen)

    # duplicate puts do not grow the store
    for hash_, data in list(seen.items())[:500]:
        ref = store.put_blob(data, "application/octet-stream")
        assert ref.hash == hash_
    assert store.blob_count() == count_after_first_pass

    # single-byte tampering triggers an integrity error
    victim_hash = next(h for h, d in seen.items() if len(d) > 0)
    path = store._blob_path(victim_hash)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        store.get_blob_by_hash(victim_hash)


# ---------------------------------------------------------------------------
# 6. API conformance


@criterion("API conformance")
def test_api_conformance(tmp_path):
    engine = PipelineEngine(
        FilesystemStore(tmp_path / "api"),
        mock_gateway(seed=0),
        config=EngineConfig(timing=FAST_TIMING),
    )
    app = create_app(ServiceConfig(), engine=engine)
    started_jobs: list[str] = []

    with TestClient(app) as client:
        session_id = client.post(
            "/sessions", json={"name": "Newton's First Law", "subject": "physics"}
        ).json()["id"]

        # out-of-order call rejected with 409
        premature = client.post(
            f"/sessions/{session_id}/choose", json={"analogy_id": "x"}
        )
        assert premature.status_code == 409

        def run_stage(path):
            response = client.post(path)
            assert response.status_code == 202, response.text
            job = response.json()
            started_jobs.append(job["id"])
            deadline = time.time() + 30
            while time.time() < deadline:
                status = client.get(job["status_url"]).json()
                if status["status"] in ("succeeded", "failed"):
                    assert status["status"] == "succeeded", status.get("error")
                    return
                time.sleep(0.02)
            raise AssertionError("job timed out")

        run_stage(f"/sessions/{session_id}/validate")
        run_stage(f"/sessions/{session_id}/analogies")
        session = client.get(f"/sessions/{session_id}").json()
        client.post(
            f"/sessions/{session_id}/choose",
            json={"analogy_id": session["analogies"][0]["id"]},
        )
        run_stage(f"/sessions/{session_id}/storyboard")
        run_stage(f"/sessions/{session_id}/video")

        final = client.get(f"/sessions/{session_id}").json()
        assert final["state"] == "video_ready"

        # a second out-of-order probe mid-lifecycle
        out_of_order = client.post(f"/sessions/{session_id}/analogies")
        assert out_of_order.status_code in (200, 409)

        # every started job's SSE stream terminates with exactly one terminal event
        for job_id in started_jobs:
            events = []
            with client.stream("GET", f"/jobs/{job_id}/events") as stream:
                for line in stream.iter_lines():
                    if line.startswith("data: "):
                        events.append(json.loads(line[len("data: "):]))
            terminals = [e for e in events if e["terminal"]]
            assert len(terminals) == 1, f"job {job_id} had {len(terminals)} terminal events"
            assert events[-1]["terminal"]
