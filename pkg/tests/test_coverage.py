"""Coverage verification, prompt repair, and the bounded repair loop."""

from __future__ import annotations

import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from analogykit.coverage import (
    augment_aliases,
    contains_phrase,
    coverage_loop,
    extract_checklist,
    normalize_tokens,
    repair_prompt,
    verify_text,
)
from analogykit.errors import RetriesExhaustedError, ValidationError
from analogykit.gateway import ImageRequest
from analogykit.model import (
    Analogy,
    ChecklistItem,
    ComponentChecklist,
    ComponentMapping,
    Concept,
    CoverageReport,
    Criticality,
    ProbeSource,
    Scene,
    Subject,
)
from analogykit.mocks import MockImageBackend, parse_prompt_components
from analogykit.util import stable_hash

WATER_ITEMS = [
    ("two water tanks", ["water tanks", "pair of tanks"]),
    ("connecting tube", ["narrow tube", "connecting pipe"]),
    (
        "water level difference",
        ["one tank fuller", "fuller than the other", "different water levels"],
    ),
    ("water flow", ["flowing water", "water flowing"]),
]


def water_checklist() -> ComponentChecklist:
    return ComponentChecklist(
        analogy_id="water1",
        items=[ChecklistItem(canonical=c, aliases=a) for c, a in WATER_ITEMS],
    )


def water_analogy() -> Analogy:
    return Analogy(
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


class TestVerifyText:
    def test_missing_connecting_tube_detected(self):
        caption = "two water tanks, one fuller than the other"
        report = verify_text(water_checklist(), caption, ProbeSource.IMAGE_CAPTION)
        assert "connecting tube" in report.missing_required
        assert "two water tanks" in report.matched
        assert report.coverage_ratio == pytest.approx(2 / 4)

    def test_empty_probe_all_missing(self):
        report = verify_text(water_checklist(), "", ProbeSource.IMAGE_CAPTION)
        assert report.coverage_ratio == 0.0
        assert set(report.missing_required) == {c for c, _ in WATER_ITEMS}
        assert report.matched == []

    def test_probe_with_every_alias_reaches_full_coverage(self):
        probe = (
            "A pair of tanks joined by a narrow tube; one tank fuller, "
            "with water flowing through."
        )
        report = verify_text(water_checklist(), probe, ProbeSource.IMAGE_CAPTION)

        # Independent brute-force oracle: padded-substring scan over the
        # normalized text instead of token-sequence matching.
        def normalize(text):
            return " " + " ".join(re.findall(r"[a-z0-9']+", text.casefold())) + " "

        haystack = normalize(probe)
        expected_matched = set()
        for canonical, aliases in WATER_ITEMS:
            if any(normalize(p).strip(" ") in haystack.strip(" ") or
                   f" {normalize(p).strip()} " in haystack
                   for p in [canonical, *aliases]):
                expected_matched.add(canonical)
        assert expected_matched == {c for c, _ in WATER_ITEMS}
        assert set(report.matched) == expected_matched
        assert report.coverage_ratio == 1.0

    def test_token_boundaries_respected(self):
        checklist = ComponentChecklist(
            analogy_id="x", items=[ChecklistItem(canonical="cat")]
        )
        report = verify_text(checklist, "a catalog of animals", ProbeSource.IMAGE_CAPTION)
        assert report.matched == []

    def test_punctuation_and_case_normalized(self):
        report = verify_text(
            water_checklist(),
            "CONNECTING-TUBE!! plus Water   Flow...",
            ProbeSource.IMAGE_CAPTION,
        )
        assert "connecting tube" in report.matched
        assert "water flow" in report.matched

    def test_optional_items_do_not_affect_ratio(self):
        checklist = ComponentChecklist(
            analogy_id="x",
            items=[
                ChecklistItem(canonical="anchor"),
                ChecklistItem(canonical="seagull", criticality=Criticality.OPTIONAL),
            ],
        )
        report = verify_text(checklist, "an anchor on the beach", ProbeSource.IMAGE_CAPTION)
        assert report.coverage_ratio == 1.0
        assert "seagull" not in report.missing_required

    @settings(max_examples=80, deadline=None)
    @given(
        base=st.text(alphabet="abcdefg tank tube flow ", max_size=80),
        extra=st.text(alphabet="abcdefg tank tube flow level water ", max_size=60),
    )
    def test_monotone_in_probe_text(self, base, extra):
        checklist = water_checklist()
        before = verify_text(checklist, base, ProbeSource.IMAGE_CAPTION)
        after = verify_text(checklist, base + " " + extra, ProbeSource.IMAGE_CAPTION)
        assert set(before.matched) <= set(after.matched)
        assert after.coverage_ratio >= before.coverage_ratio


class TestRepairPrompt:
    def make_report(self, missing):
        return CoverageReport(
            analogy_id="water1",
            probe_source=ProbeSource.IMAGE_CAPTION,
            matched=[],
            missing_required=missing,
            coverage_ratio=0.0,
        )

    def test_one_clause_per_missing_item(self):
        prompt = repair_prompt("base prompt", self.make_report(["connecting tube"]))
        clauses = re.findall(r"The image MUST clearly show: ([^.\n]+)\.", prompt)
        assert clauses == ["connecting tube"]

    def test_idempotent(self):
        report = self.make_report(["connecting tube", "water flow"])
        once = repair_prompt("base prompt", report)
        twice = repair_prompt(once, report)
        assert once == twice

    def test_empty_missing_rejected(self):
        with pytest.raises(ValidationError):
            repair_prompt("base", self.make_report([]))


class TestExtractChecklist:
    def test_water_fixture_items(self, gateway, library):
        checklist = extract_checklist(
            Concept(name="Voltage and Current", subject=Subject.PHYSICS),
            water_analogy(),
            gateway,
            library,
        )
        canonicals = {item.canonical for item in checklist.items}
        assert canonicals == {
            "two water tanks",
            "connecting tube",
            "water level difference",
            "water flow",
        }
        assert all(i.criticality == Criticality.REQUIRED for i in checklist.items)

    def test_deterministic(self, gateway, library):
        concept = Concept(name="Voltage and Current", subject=Subject.PHYSICS)
        first = extract_checklist(concept, water_analogy(), gateway, library)
        second = extract_checklist(concept, water_analogy(), gateway, library)
        assert first.to_doc() == second.to_doc()

    def test_empty_mappings_precondition(self, gateway, library):
        analogy = water_analogy()
        analogy.mappings = []
        with pytest.raises(ValidationError):
            extract_checklist(Concept(name="X"), analogy, gateway, library)

    def test_mapping_components_guaranteed(self, gateway, library):
        """Every mapped analogy component ends up covered by some item."""
        concept = Concept(name="Unknown Flux Topic", subject=Subject.PHYSICS)
        analogy = Analogy(
            id="a9",
            title="A bucket brigade",
            scenario="People pass buckets of water down a line to a fire.",
            mappings=[
                ComponentMapping("charge", "buckets of water"),
                ComponentMapping("wire", "the line of people"),
            ],
        )
        checklist = extract_checklist(concept, analogy, gateway, library)
        phrases = [
            p for item in checklist.items for p in (item.canonical, *item.aliases)
        ]
        for component in ("buckets of water", "the line of people"):
            tokens = normalize_tokens(component)
            assert any(
                contains_phrase(tokens, p) or contains_phrase(normalize_tokens(p), component)
                for p in phrases
            )

    def test_alias_augmentation(self):
        item = augment_aliases(ChecklistItem(canonical="Connecting Tube", aliases=["PIPE"]))
        assert item.canonical == "connecting tube"
        assert "pipe" in item.aliases
        assert "connecting tubes" in item.aliases


def water_scene(checklist) -> Scene:
    listing = "; ".join(i.canonical for i in checklist.items)
    prompt = (
        "Water flows through a narrow tube connected between two water tanks, "
        "one tank having significantly more water than the other."
        f"\nThe image must clearly include: {listing}."
    )
    return Scene(index=1, image_prompt=prompt, description="Two tanks, one fuller.")


def find_seed_dropping(prompt: str, component: str, items: list[str]) -> int:
    """Deterministically locate a seed whose hash drops the given component."""
    target = items.index(component)
    for seed in range(500):
        if stable_hash("drop", seed, prompt) % len(items) == target:
            return seed
    raise AssertionError("no seed found in range")


class TestCoverageLoop:
    def test_one_repair_reaches_full_coverage(self, gateway, store):
        checklist = water_checklist()
        scene = water_scene(checklist)
        items = [i.canonical for i in checklist.items]
        seed = find_seed_dropping(scene.image_prompt, "connecting tube", items)

        result = coverage_loop(scene, checklist, gateway, store, budget=2, seed=seed)
        trail = result.coverage
        assert len(trail) == 2
        assert "connecting tube" in trail[0].report.missing_required
        assert trail[0].report.coverage_ratio == pytest.approx(3 / 4)
        assert trail[1].report.coverage_ratio == 1.0
        ratios = [a.report.coverage_ratio for a in trail]
        assert ratios == sorted(ratios)  # non-decreasing across the trail
        assert result.image == trail[1].image

    def test_budget_zero_single_unrepaired_attempt(self, gateway, store):
        checklist = water_checklist()
        scene = water_scene(checklist)
        result = coverage_loop(scene, checklist, gateway, store, budget=0, seed=1)
        assert len(result.coverage) == 1
        assert result.coverage[0].report.missing_required  # unrepaired
        assert result.image == result.coverage[0].image

    def test_constant_ratio_returns_best_with_full_trail(self, store):
        checklist = ComponentChecklist(
            analogy_id="x",
            items=[
                ChecklistItem("alpha"),
                ChecklistItem("beta"),
                ChecklistItem("gamma"),
                ChecklistItem("delta"),
                ChecklistItem("epsilon"),
            ],
        )

        class StuckGateway:
            """Caption always covers the same 3 of 5 components."""

            def __init__(self):
                self._image = MockImageBackend()

            def generate_image(self, request: ImageRequest):
                return self._image.generate(
                    request.prompt, request.width, request.height, request.seed
                )

            def caption_image(self, image_bytes: bytes) -> str:
                return "alpha, beta and gamma are visible."

        scene = Scene(index=1, image_prompt="abstract shapes", description="d")
        result = coverage_loop(scene, checklist, StuckGateway(), store, budget=2)
        assert len(result.coverage) == 3  # budget + 1 attempts
        assert all(
            a.report.coverage_ratio == pytest.approx(3 / 5) for a in result.coverage
        )
        # ties break toward the latest attempt
        assert result.image == result.coverage[-1].image

    def test_backend_error_returns_best_so_far(self, store):
        checklist = water_checklist()

        class FlakyGateway:
            def __init__(self):
                self._image = MockImageBackend()
                self.calls = 0

            def generate_image(self, request: ImageRequest):
                self.calls += 1
                if self.calls > 1:
                    raise RetriesExhaustedError("image backend down", attempts=3)
                return self._image.generate(
                    request.prompt, request.width, request.height, request.seed
                )

            def caption_image(self, image_bytes: bytes) -> str:
                return "two water tanks only"

        scene = water_scene(checklist)
        result = coverage_loop(scene, checklist, FlakyGateway(), store, budget=2)
        assert len(result.coverage) == 1
        assert result.image is not None

    def test_backend_error_with_no_attempts_raises(self, store):
        class DeadGateway:
            def generate_image(self, request):
                raise RetriesExhaustedError("image backend down", attempts=3)

            def caption_image(self, image_bytes):
                raise AssertionError("unreachable")

        scene = Scene(index=1, image_prompt="anything", description="d")
        with pytest.raises(RetriesExhaustedError):
            coverage_loop(scene, water_checklist(), DeadGateway(), store, budget=2)

    def test_negative_budget_rejected(self, gateway, store):
        scene = Scene(index=1, image_prompt="p", description="d")
        with pytest.raises(ValidationError):
            coverage_loop(scene, water_checklist(), gateway, store, budget=-1)

    def test_repair_visible_in_second_prompt(self, gateway, store):
        checklist = water_checklist()
        scene = water_scene(checklist)
        result = coverage_loop(scene, checklist, gateway, store, budget=2, seed=1)
        if len(result.coverage) > 1:
            listed, musts = parse_prompt_components(result.coverage[1].prompt)
            assert musts  # the second attempt carried emphasis clauses
