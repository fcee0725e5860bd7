"""Component-coverage checking and the image repair loop.

Multi-component analogies routinely lose parts when handed to an image
generator (two tanks drawn, the connecting tube dropped). This module
extracts the checklist of components a depiction must contain, verifies
probe text (scene description or image caption) against it lexically,
and rewrites image prompts with emphasis clauses until the caption
covers every required component or the budget runs out.

Matching is deliberately lexical: canonical or alias phrases, matched on
token boundaries over normalized text. Deterministic and offline-friendly;
embedding-based matching would be a future extension.
"""

from __future__ import annotations

import re
from dataclasses import replace
from typing import Optional

from .errors import GatewayError, ValidationError
from .gateway import ImageRequest, ModelGateway, TextRequest
from .model import (
    Analogy,
    ChecklistItem,
    ComponentChecklist,
    Concept,
    CoverageAttempt,
    CoverageReport,
    Criticality,
    ProbeSource,
    Scene,
)
from .prompts import TemplateId, TemplateLibrary
from .store import Store

DEFAULT_REPAIR_BUDGET = 2

_WORD_RE = re.compile(r"[a-z0-9']+")


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, strip punctuation, collapse whitespace; return tokens."""
    return _WORD_RE.findall(text.casefold())


def contains_phrase(probe_tokens: list[str], phrase: str) -> bool:
    """True when the phrase occurs in the probe as a token-boundary run."""
    needle = normalize_tokens(phrase)
    if not needle:
        return False
    n = len(needle)
    return any(
        probe_tokens[i : i + n] == needle for i in range(len(probe_tokens) - n + 1)
    )


def _plural_variants(phrase: str) -> list[str]:
    last = phrase.split()[-1] if phrase.split() else ""
    variants = []
    if last.endswith("s") and len(last) > 3:
        variants.append(phrase[: len(phrase) - 1])
    elif last:
        variants.append(phrase + "s")
    return variants


def augment_aliases(item: ChecklistItem) -> ChecklistItem:
    """Lowercase aliases and add naive singular/plural variants."""
    seen: dict[str, None] = {}
    canonical = item.canonical.casefold().strip()
    for alias in [a.casefold().strip() for a in item.aliases]:
        if alias and alias != canonical:
            seen.setdefault(alias, None)
    for variant in _plural_variants(canonical):
        if variant != canonical:
            seen.setdefault(variant, None)
    return ChecklistItem(
        canonical=canonical, aliases=list(seen), criticality=item.criticality
    )


def extract_checklist(
    concept: Concept,
    analogy: Analogy,
    gateway: ModelGateway,
    library: TemplateLibrary,
    *,
    seed: Optional[int] = None,
) -> ComponentChecklist:
    """Checklist of visual components this analogy's depiction must show.

    One item per mapped analogy component is guaranteed even when the
    extraction model forgets some; the model may add further scenario
    elements on top.
    """
    if not analogy.mappings:
        raise ValidationError("analogy has no component mappings to extract from")
    prompt = library.render(
        TemplateId.CHECKLIST_EXTRACT,
        {
            "concept": concept.name,
            "analogy_title": analogy.title,
            "analogy_scenario": analogy.scenario,
            "mappings": "; ".join(
                f"{m.concept_component} -> {m.analogy_component}"
                for m in analogy.mappings
            ),
        },
    )
    raw = gateway.complete_text(TextRequest(prompt=prompt, seed=seed))
    parsed = library.parse(TemplateId.CHECKLIST_EXTRACT, raw)

    items: list[ChecklistItem] = []
    seen: set[str] = set()
    for entry in parsed.payload["items"]:
        item = augment_aliases(
            ChecklistItem(
                canonical=entry["canonical"],
                aliases=list(entry.get("aliases", [])),
                criticality=Criticality(entry.get("criticality", "required")),
            )
        )
        if item.canonical not in seen:
            seen.add(item.canonical)
            items.append(item)
    for mapping in analogy.mappings:
        component = mapping.analogy_component.casefold().strip()
        if not _component_covered(component, items) and component not in seen:
            seen.add(component)
            items.append(augment_aliases(ChecklistItem(canonical=component)))
    return ComponentChecklist(analogy_id=analogy.id, items=items)


def _component_covered(component: str, items: list[ChecklistItem]) -> bool:
    """A mapping component counts as covered when it lexically overlaps an
    existing item ("the motionless skater" is covered by alias "skater")."""
    component_tokens = normalize_tokens(component)
    for item in items:
        for phrase in (item.canonical, *item.aliases):
            if contains_phrase(component_tokens, phrase) or contains_phrase(
                normalize_tokens(phrase), component
            ):
                return True
    return False


def verify_text(
    checklist: ComponentChecklist,
    probe_text: str,
    source: ProbeSource,
) -> CoverageReport:
    """Match checklist items against a probe text. Pure function.

    An item matches iff its canonical name or any alias occurs in the
    normalized probe as a token-boundary phrase.
    """
    probe_tokens = normalize_tokens(probe_text)
    matched: list[str] = []
    missing_required: list[str] = []
    required_total = 0
    required_matched = 0
    for item in checklist.items:
        phrases = [item.canonical, *item.aliases]
        hit = any(contains_phrase(probe_tokens, phrase) for phrase in phrases)
        if item.criticality == Criticality.REQUIRED:
            required_total += 1
            if hit:
                required_matched += 1
            else:
                missing_required.append(item.canonical)
        if hit:
            matched.append(item.canonical)
    ratio = required_matched / required_total if required_total else 1.0
    return CoverageReport(
        analogy_id=checklist.analogy_id,
        probe_source=source,
        matched=matched,
        missing_required=missing_required,
        coverage_ratio=ratio,
    )


def repair_prompt(image_prompt: str, report: CoverageReport) -> str:
    """Append one emphasis clause per missing required component.

    Idempotent: re-applying with the same missing set adds nothing new.
    """
    if not report.missing_required:
        raise ValidationError("repair_prompt requires a non-empty missing_required set")
    result = image_prompt
    for canonical in report.missing_required:
        clause = f"The image MUST clearly show: {canonical}."
        if clause not in result:
            result = f"{result}\n{clause}"
    return result


def coverage_loop(
    scene: Scene,
    checklist: ComponentChecklist,
    gateway: ModelGateway,
    store: Store,
    *,
    budget: int = DEFAULT_REPAIR_BUDGET,
    image_size: int = 512,
    seed: Optional[int] = None,
    candidates_per_attempt: int = 1,
) -> Scene:
    """Generate, caption, verify; repair and regenerate while budget lasts.

    Returns the scene with the best attempt's image attached (highest
    coverage ratio, ties broken toward the latest) and the full report
    trail. A backend error aborts the loop and returns the best attempt
    so far, or re-raises when no attempt succeeded.
    """
    if budget < 0:
        raise ValidationError("repair budget must be >= 0")
    if not scene.image_prompt.strip():
        raise ValidationError(f"scene {scene.index} has no image prompt")

    attempts: list[CoverageAttempt] = []
    prompt = scene.image_prompt
    try:
        for round_index in range(budget + 1):
            report = None
            for candidate in range(max(1, candidates_per_attempt)):
                request_seed = None if seed is None else seed + candidate
                image_bytes, _meta = gateway.generate_image(
                    ImageRequest(
                        prompt=prompt,
                        width=image_size,
                        height=image_size,
                        seed=request_seed,
                    )
                )
                ref = store.put_blob(image_bytes, "image/png")
                caption = gateway.caption_image(image_bytes)
                report = verify_text(checklist, caption, ProbeSource.IMAGE_CAPTION)
                attempts.append(CoverageAttempt(prompt, ref, caption, report))
                if not report.missing_required:
                    break
            assert report is not None
            best_so_far = max(a.report.coverage_ratio for a in attempts)
            if best_so_far >= 1.0 or round_index == budget:
                break
            prompt = repair_prompt(prompt, _freshest_incomplete(attempts).report)
    except GatewayError:
        if not attempts:
            raise

    best = max(
        enumerate(attempts), key=lambda pair: (pair[1].report.coverage_ratio, pair[0])
    )[1]
    return replace(scene, image=best.image, coverage=attempts)


def _freshest_incomplete(attempts: list[CoverageAttempt]) -> CoverageAttempt:
    for attempt in reversed(attempts):
        if attempt.report.missing_required:
            return attempt
    return attempts[-1]
