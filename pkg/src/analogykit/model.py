"""Domain types for the concept-to-video pipeline.

Every type serializes to a plain JSON-compatible document via ``to_doc`` /
``from_doc``. Enums serialize as lowercase snake-case strings, timestamps
as RFC 3339 UTC. Document key order is fixed so serialized artifacts are
byte-comparable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Optional

from .errors import ValidationError
from .util import parse_rfc3339, rfc3339

MAX_CONCEPT_NAME_LEN = 200
SCENE_COUNT = 4
ANALOGY_COUNT = 3


class Subject(str, Enum):
    MATH = "math"
    PHYSICS = "physics"
    PROGRAMMING = "programming"
    OTHER = "other"


class LearnerLevel(str, Enum):
    NOVICE = "novice"
    INTERMEDIATE = "intermediate"
    ADVANCED = "advanced"


class Verdict(str, Enum):
    VALID = "valid"
    AMBIGUOUS = "ambiguous"
    NOT_A_CONCEPT = "not_a_concept"


class SessionState(str, Enum):
    CREATED = "created"
    CONCEPT_VALIDATED = "concept_validated"
    ANALOGIES_READY = "analogies_ready"
    ANALOGY_CHOSEN = "analogy_chosen"
    STORYBOARD_READY = "storyboard_ready"
    VIDEO_READY = "video_ready"
    FAILED = "failed"


# Progress order of the non-terminal states; FAILED sits outside the ladder.
STATE_ORDER = {
    SessionState.CREATED: 0,
    SessionState.CONCEPT_VALIDATED: 1,
    SessionState.ANALOGIES_READY: 2,
    SessionState.ANALOGY_CHOSEN: 3,
    SessionState.STORYBOARD_READY: 4,
    SessionState.VIDEO_READY: 5,
}


def state_at_least(state: SessionState, floor: SessionState) -> bool:
    if state == SessionState.FAILED or floor == SessionState.FAILED:
        return False
    return STATE_ORDER[state] >= STATE_ORDER[floor]


class JobKind(str, Enum):
    VALIDATE = "validate"
    ANALOGIES = "analogies"
    STORYBOARD = "storyboard"
    SCENE_IMAGE = "scene_image"
    VIDEO = "video"


class JobStatus(str, Enum):
    QUEUED = "queued"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


class Criticality(str, Enum):
    REQUIRED = "required"
    OPTIONAL = "optional"


class ProbeSource(str, Enum):
    SCENE_DESCRIPTION = "scene_description"
    IMAGE_CAPTION = "image_caption"


class Transition(str, Enum):
    CUT = "cut"
    CROSSFADE = "crossfade"


@dataclass
class Concept:
    """The pipeline's input: a named STEM concept."""

    name: str
    subject: Subject = Subject.OTHER
    learner_level: Optional[LearnerLevel] = None

    def __post_init__(self) -> None:
        self.name = self.name.strip()
        if not self.name:
            raise ValidationError("concept name must be non-empty after trimming")
        if len(self.name) > MAX_CONCEPT_NAME_LEN:
            raise ValidationError(
                f"concept name exceeds {MAX_CONCEPT_NAME_LEN} characters"
            )
        if isinstance(self.subject, str):
            self.subject = Subject(self.subject)
        if isinstance(self.learner_level, str):
            self.learner_level = LearnerLevel(self.learner_level)

    def to_doc(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "subject": self.subject.value,
            "learner_level": self.learner_level.value if self.learner_level else None,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "Concept":
        return cls(
            name=doc["name"],
            subject=Subject(doc.get("subject", "other")),
            learner_level=(
                LearnerLevel(doc["learner_level"]) if doc.get("learner_level") else None
            ),
        )


@dataclass
class DefinitionCheck:
    """Outcome of vetting a concept before any generation happens."""

    concept: Concept
    definition: str
    verdict: Verdict
    rationale: str

    def __post_init__(self) -> None:
        if isinstance(self.verdict, str):
            self.verdict = Verdict(self.verdict)
        has_definition = bool(self.definition.strip())
        if self.verdict == Verdict.NOT_A_CONCEPT and has_definition:
            raise ValidationError("a rejected concept must not carry a definition")
        if self.verdict != Verdict.NOT_A_CONCEPT and not has_definition:
            raise ValidationError(f"verdict '{self.verdict.value}' requires a definition")

    def to_doc(self) -> dict[str, Any]:
        return {
            "concept": self.concept.to_doc(),
            "definition": self.definition,
            "verdict": self.verdict.value,
            "rationale": self.rationale,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "DefinitionCheck":
        return cls(
            concept=Concept.from_doc(doc["concept"]),
            definition=doc["definition"],
            verdict=Verdict(doc["verdict"]),
            rationale=doc["rationale"],
        )


@dataclass
class ComponentMapping:
    """One concept-component to analogy-component correspondence."""

    concept_component: str
    analogy_component: str

    def to_doc(self) -> dict[str, Any]:
        return {
            "concept_component": self.concept_component,
            "analogy_component": self.analogy_component,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "ComponentMapping":
        return cls(doc["concept_component"], doc["analogy_component"])


@dataclass
class Analogy:
    """A titled source-domain scenario with explicit component mappings."""

    id: str
    title: str
    scenario: str
    mappings: list[ComponentMapping]

    def __post_init__(self) -> None:
        if not self.mappings:
            raise ValidationError("an analogy needs at least one component mapping")

    def to_doc(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "scenario": self.scenario,
            "mappings": [m.to_doc() for m in self.mappings],
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "Analogy":
        return cls(
            id=doc["id"],
            title=doc["title"],
            scenario=doc["scenario"],
            mappings=[ComponentMapping.from_doc(m) for m in doc["mappings"]],
        )


@dataclass(frozen=True)
class BlobRef:
    """Pointer to content-addressed bytes in the store."""

    hash: str
    media_type: str
    byte_length: int

    def __post_init__(self) -> None:
        if len(self.hash) != 64 or any(c not in "0123456789abcdef" for c in self.hash):
            raise ValidationError("blob hash must be 64 lowercase hex characters")
        if self.byte_length < 0:
            raise ValidationError("blob byte_length must be >= 0")

    def to_doc(self) -> dict[str, Any]:
        return {
            "hash": self.hash,
            "media_type": self.media_type,
            "byte_length": self.byte_length,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "BlobRef":
        return cls(doc["hash"], doc["media_type"], doc["byte_length"])


@dataclass
class ChecklistItem:
    canonical: str
    aliases: list[str] = field(default_factory=list)
    criticality: Criticality = Criticality.REQUIRED

    def __post_init__(self) -> None:
        if isinstance(self.criticality, str):
            self.criticality = Criticality(self.criticality)
        if not self.canonical.strip():
            raise ValidationError("checklist item canonical name must be non-empty")

    def to_doc(self) -> dict[str, Any]:
        return {
            "canonical": self.canonical,
            "aliases": list(self.aliases),
            "criticality": self.criticality.value,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "ChecklistItem":
        return cls(
            canonical=doc["canonical"],
            aliases=list(doc.get("aliases", [])),
            criticality=Criticality(doc.get("criticality", "required")),
        )


@dataclass
class ComponentChecklist:
    """The visual components an analogy's depiction must contain."""

    analogy_id: str
    items: list[ChecklistItem]

    def __post_init__(self) -> None:
        canonicals = [item.canonical for item in self.items]
        if len(set(canonicals)) != len(canonicals):
            raise ValidationError("checklist canonical names must be pairwise distinct")
        if not any(i.criticality == Criticality.REQUIRED for i in self.items):
            raise ValidationError("checklist needs at least one required item")

    @property
    def required_items(self) -> list[ChecklistItem]:
        return [i for i in self.items if i.criticality == Criticality.REQUIRED]

    def to_doc(self) -> dict[str, Any]:
        return {
            "analogy_id": self.analogy_id,
            "items": [i.to_doc() for i in self.items],
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "ComponentChecklist":
        return cls(
            analogy_id=doc["analogy_id"],
            items=[ChecklistItem.from_doc(i) for i in doc["items"]],
        )


@dataclass
class CoverageReport:
    """Which checklist components a probe text mentioned, and which
    required ones it missed."""

    analogy_id: str
    probe_source: ProbeSource
    matched: list[str]
    missing_required: list[str]
    coverage_ratio: float

    def __post_init__(self) -> None:
        if isinstance(self.probe_source, str):
            self.probe_source = ProbeSource(self.probe_source)
        self.matched = sorted(self.matched)
        self.missing_required = sorted(self.missing_required)
        if set(self.matched) & set(self.missing_required):
            raise ValidationError("matched and missing_required sets must be disjoint")
        if not 0.0 <= self.coverage_ratio <= 1.0:
            raise ValidationError("coverage_ratio must lie in [0, 1]")

    def to_doc(self) -> dict[str, Any]:
        return {
            "analogy_id": self.analogy_id,
            "probe_source": self.probe_source.value,
            "matched": list(self.matched),
            "missing_required": list(self.missing_required),
            "coverage_ratio": self.coverage_ratio,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "CoverageReport":
        return cls(
            analogy_id=doc["analogy_id"],
            probe_source=ProbeSource(doc["probe_source"]),
            matched=list(doc["matched"]),
            missing_required=list(doc["missing_required"]),
            coverage_ratio=doc["coverage_ratio"],
        )


@dataclass
class CoverageAttempt:
    """One image attempt inside the coverage repair loop."""

    prompt: str
    image: BlobRef
    caption: str
    report: CoverageReport

    def to_doc(self) -> dict[str, Any]:
        return {
            "prompt": self.prompt,
            "image": self.image.to_doc(),
            "caption": self.caption,
            "report": self.report.to_doc(),
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "CoverageAttempt":
        return cls(
            prompt=doc["prompt"],
            image=BlobRef.from_doc(doc["image"]),
            caption=doc["caption"],
            report=CoverageReport.from_doc(doc["report"]),
        )


@dataclass
class Scene:
    """One of the four storyboard scenes."""

    index: int
    image_prompt: str
    description: str
    image: Optional[BlobRef] = None
    coverage: Optional[list[CoverageAttempt]] = None
    edited_by_user: bool = False

    def __post_init__(self) -> None:
        if not 1 <= self.index <= SCENE_COUNT:
            raise ValidationError(f"scene index must be between 1 and {SCENE_COUNT}")
        if self.image is not None and not self.coverage:
            raise ValidationError("a scene with an image must carry its coverage trail")

    def to_doc(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "image_prompt": self.image_prompt,
            "description": self.description,
            "image": self.image.to_doc() if self.image else None,
            "coverage": [a.to_doc() for a in self.coverage] if self.coverage else None,
            "edited_by_user": self.edited_by_user,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "Scene":
        return cls(
            index=doc["index"],
            image_prompt=doc["image_prompt"],
            description=doc["description"],
            image=BlobRef.from_doc(doc["image"]) if doc.get("image") else None,
            coverage=(
                [CoverageAttempt.from_doc(a) for a in doc["coverage"]]
                if doc.get("coverage")
                else None
            ),
            edited_by_user=doc.get("edited_by_user", False),
        )


@dataclass
class Storyboard:
    """Narrative plus exactly four ordered scenes for one analogy."""

    analogy_id: str
    narrative: str
    scenes: list[Scene]
    checklist: ComponentChecklist
    template_versions: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.scenes) != SCENE_COUNT:
            raise ValidationError(
                f"storyboard must contain exactly {SCENE_COUNT} scenes, "
                f"got {len(self.scenes)}"
            )
        if {s.index for s in self.scenes} != set(range(1, SCENE_COUNT + 1)):
            raise ValidationError("scene indices must be exactly {1, 2, 3, 4}")
        self.scenes = sorted(self.scenes, key=lambda s: s.index)

    def scene(self, index: int) -> Scene:
        for s in self.scenes:
            if s.index == index:
                return s
        raise ValidationError(f"no scene with index {index}")

    def to_doc(self) -> dict[str, Any]:
        return {
            "analogy_id": self.analogy_id,
            "narrative": self.narrative,
            "scenes": [s.to_doc() for s in self.scenes],
            "checklist": self.checklist.to_doc(),
            "template_versions": dict(sorted(self.template_versions.items())),
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "Storyboard":
        return cls(
            analogy_id=doc["analogy_id"],
            narrative=doc["narrative"],
            scenes=[Scene.from_doc(s) for s in doc["scenes"]],
            checklist=ComponentChecklist.from_doc(doc["checklist"]),
            template_versions=dict(doc.get("template_versions", {})),
        )


@dataclass(frozen=True)
class Rect:
    """Axis-aligned crop rectangle normalized to the unit square."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValidationError("rect width and height must be positive")
        if not (0 <= self.x and 0 <= self.y and self.x + self.w <= 1 + 1e-9
                and self.y + self.h <= 1 + 1e-9):
            raise ValidationError("rect must lie within the unit square")

    def to_doc(self) -> dict[str, Any]:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "Rect":
        return cls(doc["x"], doc["y"], doc["w"], doc["h"])


FULL_FRAME = Rect(0.0, 0.0, 1.0, 1.0)


@dataclass
class VideoSegment:
    scene_index: int
    image: BlobRef
    caption: str
    duration_ms: int
    motion_start: Rect = FULL_FRAME
    motion_end: Rect = FULL_FRAME
    transition_out: Transition = Transition.CUT
    transition_ms: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.transition_out, str):
            self.transition_out = Transition(self.transition_out)
        if self.duration_ms <= 0:
            raise ValidationError("segment duration_ms must be positive")
        if self.transition_ms < 0 or self.transition_ms >= self.duration_ms:
            raise ValidationError("transition_ms must satisfy 0 <= t < duration_ms")

    def to_doc(self) -> dict[str, Any]:
        return {
            "scene_index": self.scene_index,
            "image": self.image.to_doc(),
            "caption": self.caption,
            "duration_ms": self.duration_ms,
            "motion": {
                "start_rect": self.motion_start.to_doc(),
                "end_rect": self.motion_end.to_doc(),
            },
            "transition_out": self.transition_out.value,
            "transition_ms": self.transition_ms,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "VideoSegment":
        return cls(
            scene_index=doc["scene_index"],
            image=BlobRef.from_doc(doc["image"]),
            caption=doc["caption"],
            duration_ms=doc["duration_ms"],
            motion_start=Rect.from_doc(doc["motion"]["start_rect"]),
            motion_end=Rect.from_doc(doc["motion"]["end_rect"]),
            transition_out=Transition(doc["transition_out"]),
            transition_ms=doc["transition_ms"],
        )


@dataclass
class VideoManifest:
    segments: list[VideoSegment]
    fps: int = 30
    resolution: tuple[int, int] = (1280, 720)
    total_duration_ms: int = 0

    def __post_init__(self) -> None:
        if len(self.segments) != SCENE_COUNT:
            raise ValidationError(
                f"manifest must contain exactly {SCENE_COUNT} segments"
            )
        self.segments = sorted(self.segments, key=lambda s: s.scene_index)
        self.resolution = (int(self.resolution[0]), int(self.resolution[1]))
        expected = sum(s.duration_ms for s in self.segments)
        if self.total_duration_ms == 0:
            self.total_duration_ms = expected
        elif self.total_duration_ms != expected:
            raise ValidationError(
                f"total_duration_ms {self.total_duration_ms} does not match "
                f"segment sum {expected}"
            )
        if self.fps <= 0:
            raise ValidationError("fps must be positive")

    def to_doc(self) -> dict[str, Any]:
        return {
            "segments": [s.to_doc() for s in self.segments],
            "fps": self.fps,
            "resolution": list(self.resolution),
            "total_duration_ms": self.total_duration_ms,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "VideoManifest":
        return cls(
            segments=[VideoSegment.from_doc(s) for s in doc["segments"]],
            fps=doc.get("fps", 30),
            resolution=tuple(doc.get("resolution", (1280, 720))),
            total_duration_ms=doc.get("total_duration_ms", 0),
        )


@dataclass
class PipelineSession:
    """State-machine record for one concept's journey to a video."""

    id: str
    state: SessionState
    concept: Concept
    created_at: datetime
    updated_at: datetime
    definition_check: Optional[DefinitionCheck] = None
    analogies: Optional[list[Analogy]] = None
    chosen_analogy_id: Optional[str] = None
    storyboard: Optional[Storyboard] = None
    video: Optional[BlobRef] = None
    failure_reason: Optional[str] = None

    def validate(self) -> None:
        """Check the state-dependent field-population invariants."""
        s = self.state
        if s != SessionState.FAILED:
            checks = [
                (SessionState.CONCEPT_VALIDATED, self.definition_check, "definition_check"),
                (SessionState.ANALOGIES_READY, self.analogies, "analogies"),
                (SessionState.ANALOGY_CHOSEN, self.chosen_analogy_id, "chosen_analogy_id"),
                (SessionState.STORYBOARD_READY, self.storyboard, "storyboard"),
                (SessionState.VIDEO_READY, self.video, "video"),
            ]
            for floor, value, name in checks:
                if state_at_least(s, floor) and value is None:
                    raise ValidationError(f"state {s.value} requires {name} to be set")
                if not state_at_least(s, floor) and value is not None:
                    raise ValidationError(f"state {s.value} forbids {name} being set")
        else:
            if not self.failure_reason:
                raise ValidationError("failed sessions must record a failure_reason")
        if self.analogies is not None:
            if len(self.analogies) != ANALOGY_COUNT:
                raise ValidationError(
                    f"a session must hold exactly {ANALOGY_COUNT} analogies"
                )
            titles = [a.title.casefold() for a in self.analogies]
            if len(set(titles)) != len(titles):
                raise ValidationError("analogy titles must be pairwise distinct")
        if self.chosen_analogy_id is not None and self.analogies is not None:
            if self.chosen_analogy_id not in {a.id for a in self.analogies}:
                raise ValidationError("chosen_analogy_id must reference a stored analogy")

    def to_doc(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "state": self.state.value,
            "concept": self.concept.to_doc(),
            "definition_check": (
                self.definition_check.to_doc() if self.definition_check else None
            ),
            "analogies": (
                [a.to_doc() for a in self.analogies] if self.analogies else None
            ),
            "chosen_analogy_id": self.chosen_analogy_id,
            "storyboard": self.storyboard.to_doc() if self.storyboard else None,
            "video": self.video.to_doc() if self.video else None,
            "created_at": rfc3339(self.created_at),
            "updated_at": rfc3339(self.updated_at),
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "PipelineSession":
        return cls(
            id=doc["id"],
            state=SessionState(doc["state"]),
            concept=Concept.from_doc(doc["concept"]),
            created_at=parse_rfc3339(doc["created_at"]),
            updated_at=parse_rfc3339(doc["updated_at"]),
            definition_check=(
                DefinitionCheck.from_doc(doc["definition_check"])
                if doc.get("definition_check")
                else None
            ),
            analogies=(
                [Analogy.from_doc(a) for a in doc["analogies"]]
                if doc.get("analogies")
                else None
            ),
            chosen_analogy_id=doc.get("chosen_analogy_id"),
            storyboard=(
                Storyboard.from_doc(doc["storyboard"]) if doc.get("storyboard") else None
            ),
            video=BlobRef.from_doc(doc["video"]) if doc.get("video") else None,
            failure_reason=doc.get("failure_reason"),
        )


@dataclass
class ProgressRecord:
    """One progress tick inside a generation job."""

    timestamp: datetime
    stage_label: str
    fraction: float
    message: Optional[str] = None
    terminal: bool = False

    def to_doc(self) -> dict[str, Any]:
        return {
            "timestamp": rfc3339(self.timestamp),
            "stage_label": self.stage_label,
            "fraction": self.fraction,
            "message": self.message,
            "terminal": self.terminal,
        }


@dataclass
class GenerationJob:
    """Bookkeeping record for one asynchronous stage run."""

    id: str
    session_id: str
    kind: JobKind
    status: JobStatus = JobStatus.QUEUED
    progress_events: list[ProgressRecord] = field(default_factory=list)
    error: Optional[str] = None

    def to_doc(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "session_id": self.session_id,
            "kind": self.kind.value,
            "status": self.status.value,
            "progress_events": [e.to_doc() for e in self.progress_events],
            "error": self.error,
        }
