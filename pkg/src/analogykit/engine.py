"""Session state machine and stage orchestration.

One engine serves many sessions concurrently; within a session, stage
operations are mutually exclusive via a per-session lease (a second call
while a job runs is rejected as busy). Stage results commit to the store
only on success, so a transient backend failure leaves the session in
its prior state and the stage can simply be retried.

Sessions move along:

    created -> concept_validated -> analogies_ready -> analogy_chosen
            -> storyboard_ready -> video_ready

with three sanctioned backward moves (re-pick analogy, regenerate
storyboard, scene edits invalidating a finished video) and a terminal
``failed`` reached only when concept vetting rejects the input outright.
Every backward move nulls downstream artifacts.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

from .coverage import DEFAULT_REPAIR_BUDGET
from .errors import (
    NotFoundError,
    SessionBusyError,
    StageError,
    ValidationError,
    WrongStateError,
)
from .gateway import ModelGateway, TextRequest
from .model import (
    Analogy,
    BlobRef,
    ComponentMapping,
    Concept,
    DefinitionCheck,
    GenerationJob,
    JobKind,
    JobStatus,
    PipelineSession,
    ProgressRecord,
    Scene,
    SessionState,
    Storyboard,
    Verdict,
)
from .prompts import TemplateId, TemplateLibrary, analogy_quality_gate, default_library
from .storyboard import (
    build_storyboard,
    edit_scene as apply_scene_edit,
    learner_clause,
    regenerate_scene_image,
)
from .store import Store
from .util import MonotonicClock, derive_id, new_id
from .video import TimingConfig, build_manifest, render

logger = logging.getLogger(__name__)

# Every state change a session may commit. Property tests replay random
# operation sequences and assert observed transitions stay inside this set.
ALLOWED_TRANSITIONS: frozenset[tuple[SessionState, SessionState]] = frozenset(
    {
        (SessionState.CREATED, SessionState.CONCEPT_VALIDATED),
        (SessionState.CONCEPT_VALIDATED, SessionState.ANALOGIES_READY),
        (SessionState.ANALOGIES_READY, SessionState.ANALOGY_CHOSEN),
        (SessionState.ANALOGY_CHOSEN, SessionState.STORYBOARD_READY),
        (SessionState.STORYBOARD_READY, SessionState.VIDEO_READY),
        # backtracking edges
        (SessionState.ANALOGY_CHOSEN, SessionState.ANALOGIES_READY),
        (SessionState.STORYBOARD_READY, SessionState.ANALOGY_CHOSEN),
        (SessionState.VIDEO_READY, SessionState.STORYBOARD_READY),
        # in-place regeneration
        (SessionState.ANALOGY_CHOSEN, SessionState.ANALOGY_CHOSEN),
        (SessionState.STORYBOARD_READY, SessionState.STORYBOARD_READY),
        (SessionState.VIDEO_READY, SessionState.VIDEO_READY),
    }
    | {
        (state, SessionState.FAILED)
        for state in SessionState
        if state != SessionState.FAILED
    }
)

_ANALOGY_RETRIES = 1  # one full regeneration after the first failed attempt


@dataclass
class EngineConfig:
    seed: Optional[int] = 0
    repair_budget: int = DEFAULT_REPAIR_BUDGET
    image_size: int = 512
    candidates_per_attempt: int = 1
    timing: TimingConfig = field(default_factory=TimingConfig)
    encoder: str = "ffmpeg"
    fallback_enabled: bool = True


class JobRegistry:
    """In-memory record of generation jobs and their progress streams."""

    def __init__(self, clock: MonotonicClock):
        self._jobs: dict[str, GenerationJob] = {}
        self._done: dict[str, threading.Event] = {}
        self._lock = threading.RLock()
        self._clock = clock

    def create(self, session_id: str, kind: JobKind) -> GenerationJob:
        job = GenerationJob(id=new_id(), session_id=session_id, kind=kind)
        with self._lock:
            self._jobs[job.id] = job
            self._done[job.id] = threading.Event()
        return job

    def get(self, job_id: str) -> GenerationJob:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise NotFoundError(f"no job with id {job_id}")
            return replace(job, progress_events=list(job.progress_events))

    def mark_running(self, job_id: str) -> None:
        with self._lock:
            self._jobs[job_id].status = JobStatus.RUNNING

    def emit(
        self, job_id: str, stage_label: str, fraction: float, message: str | None = None
    ) -> None:
        with self._lock:
            job = self._jobs[job_id]
            if job.status in (JobStatus.SUCCEEDED, JobStatus.FAILED):
                raise ValidationError(f"job {job_id} already terminal")
            last = job.progress_events[-1].fraction if job.progress_events else 0.0
            if fraction < last:
                raise ValidationError(
                    f"job progress must be non-decreasing ({fraction} < {last})"
                )
            job.progress_events.append(
                ProgressRecord(self._clock.now(), stage_label, fraction, message)
            )

    def finish(self, job_id: str, error: str | None = None) -> None:
        with self._lock:
            job = self._jobs[job_id]
            if job.status in (JobStatus.SUCCEEDED, JobStatus.FAILED):
                return
            last = job.progress_events[-1].fraction if job.progress_events else 0.0
            if error is None:
                job.status = JobStatus.SUCCEEDED
                job.progress_events.append(
                    ProgressRecord(self._clock.now(), "done", 1.0, None, terminal=True)
                )
            else:
                job.status = JobStatus.FAILED
                job.error = error
                job.progress_events.append(
                    ProgressRecord(self._clock.now(), "failed", last, error, terminal=True)
                )
            self._done[job_id].set()

    def wait(self, job_id: str, timeout: float | None = None) -> GenerationJob:
        with self._lock:
            event = self._done.get(job_id)
        if event is None:
            raise NotFoundError(f"no job with id {job_id}")
        event.wait(timeout)
        return self.get(job_id)

    def events_since(self, job_id: str, index: int) -> tuple[list[ProgressRecord], bool]:
        """New events from the given index plus whether the job is terminal."""
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise NotFoundError(f"no job with id {job_id}")
            events = list(job.progress_events[index:])
            done = job.status in (JobStatus.SUCCEEDED, JobStatus.FAILED)
            return events, done


class PipelineEngine:
    def __init__(
        self,
        store: Store,
        gateway: ModelGateway,
        library: TemplateLibrary | None = None,
        config: EngineConfig | None = None,
    ):
        self.store = store
        self.gateway = gateway
        self.library = library or default_library()
        self.config = config or EngineConfig()
        self.clock = MonotonicClock()
        self.jobs = JobRegistry(self.clock)
        self._leases: dict[str, str] = {}
        self._lease_guard = threading.Lock()

    # -- leases -----------------------------------------------------------

    def _acquire_lease(self, session_id: str, kind: str) -> None:
        with self._lease_guard:
            running = self._leases.get(session_id)
            if running is not None:
                raise SessionBusyError(session_id, running)
            self._leases[session_id] = kind

    def _release_lease(self, session_id: str) -> None:
        with self._lease_guard:
            self._leases.pop(session_id, None)

    # -- session plumbing ---------------------------------------------------

    def _commit(self, session: PipelineSession) -> None:
        session.updated_at = self.clock.now()
        session.validate()
        self.store.save_session(session)

    def create_session(self, concept: Concept) -> PipelineSession:
        now = self.clock.now()
        session = PipelineSession(
            id=new_id(),
            state=SessionState.CREATED,
            concept=concept,
            created_at=now,
            updated_at=now,
        )
        session.validate()
        self.store.save_session(session)
        return session

    def get_session(self, session_id: str) -> PipelineSession:
        return self.store.load_session(session_id)

    def list_sessions(self, offset: int = 0, limit: int = 50) -> list[PipelineSession]:
        return self.store.list_sessions(offset, limit)

    def _require_state(
        self, session: PipelineSession, *allowed: SessionState
    ) -> None:
        if session.state not in allowed:
            raise WrongStateError(
                session.state.value, tuple(s.value for s in allowed)
            )

    # -- stage execution skeleton ------------------------------------------

    def _run_stage(
        self,
        session_id: str,
        kind: JobKind,
        runner: Callable[[PipelineSession, GenerationJob], Any],
        preflight: Callable[[PipelineSession], None],
        wait: bool,
    ):
        self._acquire_lease(session_id, kind.value)
        try:
            session = self.store.load_session(session_id)
            preflight(session)
        except BaseException:
            self._release_lease(session_id)
            raise
        job = self.jobs.create(session_id, kind)

        result_box: list[Any] = []

        def run() -> None:
            try:
                self.jobs.mark_running(job.id)
                result_box.append(runner(session, job))
                self.jobs.finish(job.id)
            except Exception as exc:
                logger.warning("job %s (%s) failed: %s", job.id, kind.value, exc)
                self.jobs.finish(job.id, error=str(exc))
                if wait:
                    raise
            finally:
                self._release_lease(session_id)

        if wait:
            run()
            return job, result_box[0]
        thread = threading.Thread(target=run, name=f"analogykit-{kind.value}", daemon=True)
        thread.start()
        return job, None

    # -- operations ----------------------------------------------------------

    def validate_concept(self, session_id: str) -> DefinitionCheck:
        _, result = self._run_stage(
            session_id,
            JobKind.VALIDATE,
            self._stage_validate,
            lambda s: self._require_state(s, SessionState.CREATED),
            wait=True,
        )
        return result

    def start_validate(self, session_id: str) -> GenerationJob:
        job, _ = self._run_stage(
            session_id,
            JobKind.VALIDATE,
            self._stage_validate,
            lambda s: self._require_state(s, SessionState.CREATED),
            wait=False,
        )
        return job

    def generate_analogies(self, session_id: str) -> list[Analogy]:
        _, result = self._run_stage(
            session_id,
            JobKind.ANALOGIES,
            self._stage_analogies,
            lambda s: self._require_state(s, SessionState.CONCEPT_VALIDATED),
            wait=True,
        )
        return result

    def start_analogies(self, session_id: str) -> GenerationJob:
        job, _ = self._run_stage(
            session_id,
            JobKind.ANALOGIES,
            self._stage_analogies,
            lambda s: self._require_state(s, SessionState.CONCEPT_VALIDATED),
            wait=False,
        )
        return job

    def choose_analogy(self, session_id: str, analogy_id: str) -> PipelineSession:
        self._acquire_lease(session_id, "choose")
        try:
            session = self.store.load_session(session_id)
            self._require_state(
                session,
                SessionState.ANALOGIES_READY,
                SessionState.ANALOGY_CHOSEN,
                SessionState.STORYBOARD_READY,
            )
            assert session.analogies is not None
            if analogy_id not in {a.id for a in session.analogies}:
                raise NotFoundError(
                    f"analogy id {analogy_id} is not part of this session's triple"
                )
            if session.chosen_analogy_id == analogy_id:
                return session
            session.chosen_analogy_id = analogy_id
            session.storyboard = None
            session.video = None
            session.state = SessionState.ANALOGY_CHOSEN
            self._commit(session)
            return session
        finally:
            self._release_lease(session_id)

    def run_storyboard_stage(self, session_id: str, force: bool = False) -> Storyboard:
        _, result = self._run_stage(
            session_id,
            JobKind.STORYBOARD,
            lambda s, j: self._stage_storyboard(s, j, force),
            lambda s: self._preflight_storyboard(s, force),
            wait=True,
        )
        return result

    def start_storyboard(self, session_id: str, force: bool = False) -> GenerationJob:
        job, _ = self._run_stage(
            session_id,
            JobKind.STORYBOARD,
            lambda s, j: self._stage_storyboard(s, j, force),
            lambda s: self._preflight_storyboard(s, force),
            wait=False,
        )
        return job

    def run_video_stage(self, session_id: str, force: bool = False) -> BlobRef:
        _, result = self._run_stage(
            session_id,
            JobKind.VIDEO,
            lambda s, j: self._stage_video(s, j),
            lambda s: self._preflight_video(s, force),
            wait=True,
        )
        return result

    def start_video(self, session_id: str, force: bool = False) -> GenerationJob:
        job, _ = self._run_stage(
            session_id,
            JobKind.VIDEO,
            lambda s, j: self._stage_video(s, j),
            lambda s: self._preflight_video(s, force),
            wait=False,
        )
        return job

    def edit_scene(
        self,
        session_id: str,
        index: int,
        new_description: Optional[str] = None,
        new_image_prompt: Optional[str] = None,
    ) -> PipelineSession:
        self._acquire_lease(session_id, "edit")
        try:
            session = self.store.load_session(session_id)
            self._require_state(
                session, SessionState.STORYBOARD_READY, SessionState.VIDEO_READY
            )
            assert session.storyboard is not None
            session.storyboard = apply_scene_edit(
                session.storyboard, index, new_description, new_image_prompt
            )
            if session.video is not None:
                session.video = None
                session.state = SessionState.STORYBOARD_READY
            self._commit(session)
            return session
        finally:
            self._release_lease(session_id)

    def regenerate_scene(self, session_id: str, index: int) -> Scene:
        _, result = self._run_stage(
            session_id,
            JobKind.SCENE_IMAGE,
            lambda s, j: self._stage_scene_image(s, j, index),
            lambda s: self._preflight_scene_image(s, index),
            wait=True,
        )
        return result

    def start_regenerate_scene(self, session_id: str, index: int) -> GenerationJob:
        job, _ = self._run_stage(
            session_id,
            JobKind.SCENE_IMAGE,
            lambda s, j: self._stage_scene_image(s, j, index),
            lambda s: self._preflight_scene_image(s, index),
            wait=False,
        )
        return job

    # -- stage bodies ---------------------------------------------------------

    def _stage_validate(self, session: PipelineSession, job: GenerationJob) -> DefinitionCheck:
        self.jobs.emit(job.id, "checking definition", 0.2)
        prompt = self.library.render(
            TemplateId.DEFINITION_CHECK,
            {
                "concept": session.concept.name,
                "subject": session.concept.subject.value,
                "learner_clause": learner_clause(session.concept),
            },
        )
        raw = self.gateway.complete_text(TextRequest(prompt=prompt, seed=self.config.seed))
        payload = self.library.parse(TemplateId.DEFINITION_CHECK, raw).payload
        verdict = Verdict(payload["verdict"])
        definition = payload["definition"].strip()
        if verdict == Verdict.NOT_A_CONCEPT:
            definition = ""
        elif not definition:
            raise StageError(f"backend returned verdict '{verdict.value}' without a definition")
        check = DefinitionCheck(
            concept=session.concept,
            definition=definition,
            verdict=verdict,
            rationale=payload["rationale"],
        )
        self.jobs.emit(job.id, "verdict received", 0.8, message=verdict.value)
        session.definition_check = check
        if verdict == Verdict.NOT_A_CONCEPT:
            session.state = SessionState.FAILED
            session.failure_reason = f"concept rejected: {check.rationale}"
        else:
            session.state = SessionState.CONCEPT_VALIDATED
        self._commit(session)
        return check

    def _stage_analogies(self, session: PipelineSession, job: GenerationJob) -> list[Analogy]:
        assert session.definition_check is not None
        base_prompt = self.library.render(
            TemplateId.ANALOGY_TRIPLE,
            {
                "concept": session.concept.name,
                "definition": session.definition_check.definition,
                "learner_clause": learner_clause(session.concept),
            },
        )
        prompt = base_prompt
        last_problem = ""
        for attempt in range(_ANALOGY_RETRIES + 1):
            self.jobs.emit(
                job.id, "generating analogies", 0.2 + 0.4 * attempt,
                message=None if attempt == 0 else "regenerating",
            )
            raw = self.gateway.complete_text(
                TextRequest(prompt=prompt, seed=self.config.seed)
            )
            try:
                payload = self.library.parse(TemplateId.ANALOGY_TRIPLE, raw).payload
            except StageError as exc:
                last_problem = str(exc)
                prompt = (
                    f"{base_prompt}\nYour previous reply could not be parsed. "
                    "Reply with only the JSON object."
                )
                continue
            triple = [
                Analogy(
                    id=derive_id(
                        "analogy", self.config.seed, session.concept.name,
                        entry["title"], position,
                    ),
                    title=entry["title"],
                    scenario=entry["scenario"],
                    mappings=[
                        ComponentMapping(m["concept_component"], m["analogy_component"])
                        for m in entry["mappings"]
                    ],
                )
                for position, entry in enumerate(payload["analogies"])
            ]
            gate = analogy_quality_gate(triple)
            if gate.ok:
                session.analogies = triple
                session.state = SessionState.ANALOGIES_READY
                self._commit(session)
                return triple
            last_problem = "; ".join(gate.violations)
            prompt = (
                f"{base_prompt}\nYour previous reply was rejected: {last_problem}. "
                "Make the three analogies clearly distinct."
            )
        raise StageError(f"analogies failed the distinctness gate: {last_problem}")

    def _preflight_storyboard(self, session: PipelineSession, force: bool) -> None:
        if force:
            self._require_state(
                session, SessionState.ANALOGY_CHOSEN, SessionState.STORYBOARD_READY
            )
        else:
            self._require_state(session, SessionState.ANALOGY_CHOSEN)

    def _stage_storyboard(
        self, session: PipelineSession, job: GenerationJob, force: bool
    ) -> Storyboard:
        assert session.analogies is not None and session.chosen_analogy_id is not None
        analogy = next(
            a for a in session.analogies if a.id == session.chosen_analogy_id
        )
        self.jobs.emit(job.id, "building storyboard", 0.05)

        def on_progress(label: str, fraction: float) -> None:
            self.jobs.emit(job.id, label, 0.05 + fraction * 0.9)

        storyboard = build_storyboard(
            session.concept,
            analogy,
            self.gateway,
            self.store,
            self.library,
            seed=self.config.seed,
            repair_budget=self.config.repair_budget,
            image_size=self.config.image_size,
            candidates_per_attempt=self.config.candidates_per_attempt,
            on_progress=on_progress,
        )
        session.storyboard = storyboard
        session.video = None
        session.state = SessionState.STORYBOARD_READY
        self._commit(session)
        return storyboard

    def _preflight_video(self, session: PipelineSession, force: bool) -> None:
        if force:
            self._require_state(
                session, SessionState.STORYBOARD_READY, SessionState.VIDEO_READY
            )
        else:
            self._require_state(session, SessionState.STORYBOARD_READY)
        assert session.storyboard is not None
        for scene in session.storyboard.scenes:
            if scene.image is None:
                raise ValidationError(
                    f"scene {scene.index} has no image; regenerate it before rendering"
                )

    def _stage_video(self, session: PipelineSession, job: GenerationJob) -> BlobRef:
        assert session.storyboard is not None
        self.jobs.emit(job.id, "building manifest", 0.1)
        manifest = build_manifest(session.storyboard, self.config.timing)
        self.jobs.emit(job.id, "rendering video", 0.3)
        ref = render(
            manifest,
            self.store,
            encoder=self.config.encoder,
            fallback_enabled=self.config.fallback_enabled,
        )
        session.video = ref
        session.state = SessionState.VIDEO_READY
        self._commit(session)
        return ref

    def _preflight_scene_image(self, session: PipelineSession, index: int) -> None:
        self._require_state(
            session, SessionState.STORYBOARD_READY, SessionState.VIDEO_READY
        )
        assert session.storyboard is not None
        scene = session.storyboard.scene(index)
        if not scene.image_prompt.strip():
            raise ValidationError(f"scene {index} has no image prompt")

    def _stage_scene_image(
        self, session: PipelineSession, job: GenerationJob, index: int
    ) -> Scene:
        assert session.storyboard is not None
        self.jobs.emit(job.id, f"regenerating scene {index}", 0.2)
        scene = regenerate_scene_image(
            session.storyboard,
            index,
            self.gateway,
            self.store,
            repair_budget=self.config.repair_budget,
            image_size=self.config.image_size,
            seed=self.config.seed,
            candidates_per_attempt=self.config.candidates_per_attempt,
        )
        session.storyboard = replace(
            session.storyboard,
            scenes=[scene if s.index == index else s for s in session.storyboard.scenes],
        )
        if session.video is not None:
            session.video = None
            session.state = SessionState.STORYBOARD_READY
        self._commit(session)
        return scene
