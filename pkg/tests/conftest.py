from __future__ import annotations

import pytest

from analogykit.engine import EngineConfig, PipelineEngine
from analogykit.gateway import mock_gateway
from analogykit.model import Concept, Subject
from analogykit.prompts import default_library
from analogykit.store import FilesystemStore
from analogykit.video import TimingConfig


@pytest.fixture
def store(tmp_path):
    return FilesystemStore(tmp_path / "data")


@pytest.fixture
def gateway():
    return mock_gateway(seed=0)


@pytest.fixture
def library():
    return default_library()


@pytest.fixture
def engine(store, gateway):
    return PipelineEngine(store, gateway)


@pytest.fixture
def fast_engine(store, gateway):
    """Engine tuned for cheap video rendering in randomized tests."""
    config = EngineConfig(
        timing=TimingConfig(resolution=(320, 180), segment_ms=1_000, crossfade_ms=200)
    )
    return PipelineEngine(store, gateway, config=config)


@pytest.fixture
def newton():
    return Concept(name="Newton's First Law", subject=Subject.PHYSICS)


def drive_to_choice(engine, concept) -> tuple[str, list]:
    """Create a session and advance it to analogies_ready; returns (id, triple)."""
    session = engine.create_session(concept)
    engine.validate_concept(session.id)
    triple = engine.generate_analogies(session.id)
    return session.id, triple


def drive_to_storyboard(engine, concept, choice: int = 0):
    session_id, triple = drive_to_choice(engine, concept)
    engine.choose_analogy(session_id, triple[choice].id)
    storyboard = engine.run_storyboard_stage(session_id)
    return session_id, storyboard
