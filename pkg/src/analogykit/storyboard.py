"""Builds the narrative and the exactly-four-scene storyboard for a
chosen analogy, running every scene image through the coverage loop;
also owns scene edits and per-scene regeneration."""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Optional

from .coverage import DEFAULT_REPAIR_BUDGET, coverage_loop, extract_checklist
from .errors import StageError, ValidationError
from .gateway import ModelGateway, TextRequest
from .model import (
    SCENE_COUNT,
    Analogy,
    ComponentChecklist,
    Concept,
    Scene,
    Storyboard,
)
from .prompts import TemplateId, TemplateLibrary
from .store import Store
from .util import stable_hash


def learner_clause(concept: Concept) -> str:
    if concept.learner_level is None:
        return ""
    return f"Learner level: {concept.learner_level.value}."


def _mappings_line(analogy: Analogy) -> str:
    return "; ".join(
        f"{m.concept_component} -> {m.analogy_component}" for m in analogy.mappings
    )


def component_requirements_clause(checklist: ComponentChecklist) -> str:
    """The enumeration appended to every image prompt.

    Image generators drop merely-implied parts, so each checklist item is
    named explicitly; the mock image backend keys off this exact line.
    """
    listing = "; ".join(item.canonical for item in checklist.items)
    return f"\nThe image must clearly include: {listing}."


def scene_seed(base_seed: Optional[int], scene_index: int) -> Optional[int]:
    if base_seed is None:
        return None
    return stable_hash("scene", base_seed, scene_index) % (2**31)


def build_storyboard(
    concept: Concept,
    analogy: Analogy,
    gateway: ModelGateway,
    store: Store,
    library: TemplateLibrary,
    *,
    seed: Optional[int] = None,
    repair_budget: int = DEFAULT_REPAIR_BUDGET,
    image_size: int = 512,
    candidates_per_attempt: int = 1,
    on_progress: Optional[Callable[[str, float], None]] = None,
) -> Storyboard:
    """Narrative first, then four scenes, then checklist, then images."""
    clause = learner_clause(concept)

    def progress(label: str, fraction: float) -> None:
        if on_progress is not None:
            on_progress(label, fraction)

    progress("narrative", 0.0)

    narrative_prompt = library.render(
        TemplateId.NARRATIVE,
        {
            "concept": concept.name,
            "analogy_title": analogy.title,
            "analogy_scenario": analogy.scenario,
            "mappings": _mappings_line(analogy),
            "learner_clause": clause,
        },
    )
    narrative_raw = gateway.complete_text(TextRequest(prompt=narrative_prompt, seed=seed))
    narrative = library.parse(TemplateId.NARRATIVE, narrative_raw).payload["narrative"]

    scenes_prompt = library.render(
        TemplateId.STORYBOARD_SCENES,
        {
            "concept": concept.name,
            "analogy_title": analogy.title,
            "narrative": narrative,
            "components": "; ".join(m.analogy_component for m in analogy.mappings),
            "learner_clause": clause,
        },
    )
    progress("scenes", 0.2)
    scenes_raw = gateway.complete_text(TextRequest(prompt=scenes_prompt, seed=seed))
    entries = library.parse(TemplateId.STORYBOARD_SCENES, scenes_raw).payload["scenes"]
    if len(entries) != SCENE_COUNT:
        raise StageError(
            f"storyboard stage produced {len(entries)} scenes, expected {SCENE_COUNT}"
        )

    progress("checklist", 0.3)
    checklist = extract_checklist(concept, analogy, gateway, library, seed=seed)
    requirements = component_requirements_clause(checklist)

    scenes: list[Scene] = []
    for position, entry in enumerate(sorted(entries, key=lambda e: e["index"])):
        progress(f"scene {position + 1} image", 0.35 + 0.16 * position)
        image_prompt = library.render(
            TemplateId.IMAGE_PROMPT,
            {"scene": entry["visual"], "component_requirements": requirements},
        )
        draft = Scene(
            index=position + 1,
            image_prompt=image_prompt,
            description=entry["description"],
        )
        scenes.append(
            coverage_loop(
                draft,
                checklist,
                gateway,
                store,
                budget=repair_budget,
                image_size=image_size,
                seed=scene_seed(seed, draft.index),
                candidates_per_attempt=candidates_per_attempt,
            )
        )

    return Storyboard(
        analogy_id=analogy.id,
        narrative=narrative,
        scenes=scenes,
        checklist=checklist,
        template_versions=library.versions(),
    )


def edit_scene(
    storyboard: Storyboard,
    index: int,
    new_description: Optional[str] = None,
    new_image_prompt: Optional[str] = None,
) -> Storyboard:
    """Replace scene fields; a changed image prompt clears the image and
    its coverage trail because the stored image no longer matches."""
    if not 1 <= index <= SCENE_COUNT:
        raise ValidationError(f"scene index {index} out of range 1..{SCENE_COUNT}")
    if new_description is None and new_image_prompt is None:
        raise ValidationError("edit_scene needs at least one field to change")

    scene = storyboard.scene(index)
    updated = replace(scene, edited_by_user=True)
    if new_description is not None:
        updated = replace(updated, description=new_description)
    if new_image_prompt is not None and new_image_prompt != scene.image_prompt:
        updated = replace(updated, image_prompt=new_image_prompt, image=None, coverage=None)

    return replace(
        storyboard,
        scenes=[updated if s.index == index else s for s in storyboard.scenes],
    )


def regenerate_scene_image(
    storyboard: Storyboard,
    index: int,
    gateway: ModelGateway,
    store: Store,
    *,
    repair_budget: int = DEFAULT_REPAIR_BUDGET,
    image_size: int = 512,
    seed: Optional[int] = None,
    candidates_per_attempt: int = 1,
) -> Scene:
    """Run the coverage loop fresh for one scene; replaces image and trail."""
    if not 1 <= index <= SCENE_COUNT:
        raise ValidationError(f"scene index {index} out of range 1..{SCENE_COUNT}")
    scene = storyboard.scene(index)
    if not scene.image_prompt.strip():
        raise ValidationError(f"scene {index} has no image prompt to regenerate from")
    cleared = replace(scene, image=None, coverage=None)
    return coverage_loop(
        cleared,
        storyboard.checklist,
        gateway,
        store,
        budget=repair_budget,
        image_size=image_size,
        seed=scene_seed(seed, index),
        candidates_per_attempt=candidates_per_attempt,
    )


def storyboard_markdown(
    storyboard: Storyboard,
    concept: Concept,
    analogy_title: str,
    image_paths: Optional[dict[int, str]] = None,
) -> str:
    """Human-readable export: title, narrative, four captioned image refs."""
    image_paths = image_paths or {}
    lines = [
        f"# {concept.name}: {analogy_title}",
        "",
        storyboard.narrative,
        "",
    ]
    for scene in storyboard.scenes:
        location = image_paths.get(
            scene.index,
            f"blob:{scene.image.hash}" if scene.image else "(no image)",
        )
        lines.append(f"## Scene {scene.index}")
        lines.append("")
        if scene.image:
            lines.append(f"![Scene {scene.index}]({location})")
            lines.append("")
        lines.append(scene.description)
        lines.append("")
    return "\n".join(lines)
