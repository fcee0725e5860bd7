"""Prompt templates and strict parsing of model responses.

Templates are data files (one YAML document each) loaded at startup, not
compiled-in strings; each carries a version tag that gets recorded into
the sessions it produced. Rendering is pure placeholder substitution;
parsing validates the response against the template's JSON schema, with
one structured-repair pass (strip prose and fences, re-extract the JSON
block) before giving up.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import jsonschema
import yaml

from .errors import ParseError, ValidationError
from .model import Analogy

# Pairwise scenario token overlap at or above this makes two analogies
# "not distinct" even when their titles differ.
JACCARD_LIMIT = 0.8


class TemplateId(str, Enum):
    DEFINITION_CHECK = "definition_check"
    ANALOGY_TRIPLE = "analogy_triple"
    NARRATIVE = "narrative"
    STORYBOARD_SCENES = "storyboard_scenes"
    CHECKLIST_EXTRACT = "checklist_extract"
    IMAGE_PROMPT = "image_prompt"
    CAPTION_PROBE = "caption_probe"


@dataclass(frozen=True)
class PromptTemplate:
    id: TemplateId
    version: str
    body: str
    required_placeholders: frozenset[str]
    output_schema: Optional[dict[str, Any]] = None

    def __post_init__(self) -> None:
        found = placeholders_in(self.body)
        missing = self.required_placeholders - found
        if missing:
            raise ValidationError(
                f"template {self.id.value}: required placeholders "
                f"{sorted(missing)} never appear in the body"
            )
        unknown = found - self.required_placeholders
        if unknown:
            raise ValidationError(
                f"template {self.id.value}: body placeholders {sorted(unknown)} "
                "are not declared required"
            )
        if self.id != TemplateId.IMAGE_PROMPT and not self.output_schema:
            raise ValidationError(
                f"template {self.id.value} must declare an output_schema"
            )


@dataclass
class ParsedResponse:
    template_id: TemplateId
    payload: Any
    raw: str
    repair_attempts: int = 0


def placeholders_in(body: str) -> frozenset[str]:
    names = set()
    for match in string.Template.pattern.finditer(body):
        name = match.group("named") or match.group("braced")
        if name:
            names.add(name)
    return frozenset(names)


def _load_template_file(path: Path) -> PromptTemplate:
    doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    try:
        return PromptTemplate(
            id=TemplateId(doc["id"]),
            version=str(doc["version"]),
            body=doc["body"],
            required_placeholders=frozenset(doc.get("required_placeholders", [])),
            output_schema=doc.get("output_schema"),
        )
    except KeyError as exc:
        raise ValidationError(f"template file {path.name} is missing field {exc}") from exc


class TemplateLibrary:
    """All templates for one deployment; immutable after load."""

    def __init__(self, templates: dict[TemplateId, PromptTemplate]):
        missing = set(TemplateId) - set(templates)
        if missing:
            raise ValidationError(
                f"template set incomplete, missing: {sorted(t.value for t in missing)}"
            )
        self._templates = dict(templates)

    @classmethod
    def from_dir(cls, directory: Path) -> "TemplateLibrary":
        templates = {}
        for path in sorted(directory.glob("*.yaml")):
            template = _load_template_file(path)
            templates[template.id] = template
        return cls(templates)

    def get(self, template_id: TemplateId) -> PromptTemplate:
        return self._templates[TemplateId(template_id)]

    def versions(self) -> dict[str, str]:
        return {t.id.value: t.version for t in self._templates.values()}

    # -- operations ----------------------------------------------------

    def render(self, template_id: TemplateId, bindings: dict[str, str]) -> str:
        """Substitute bindings into the template body.

        Unknown binding keys are ignored; a missing required placeholder
        raises naming the placeholder.
        """
        template = self.get(template_id)
        missing = template.required_placeholders - set(bindings)
        if missing:
            raise ValidationError(
                f"render({template.id.value}): missing placeholder(s) "
                f"{', '.join(sorted(missing))}"
            )
        relevant = {k: bindings[k] for k in template.required_placeholders}
        return string.Template(template.body).substitute(relevant)

    def parse(self, template_id: TemplateId, raw_text: str) -> ParsedResponse:
        """Parse and schema-validate a model response.

        If the raw text is not directly valid, one repair pass strips
        code fences and surrounding prose and re-extracts the structured
        block before failing.
        """
        template = self.get(template_id)
        if template.output_schema is None:
            raise ValidationError(
                f"template {template.id.value} has no output schema to parse against"
            )

        attempt_error: Exception | None = None
        try:
            payload = json.loads(raw_text)
            jsonschema.validate(payload, template.output_schema)
            return ParsedResponse(template.id, payload, raw_text, repair_attempts=0)
        except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
            attempt_error = exc

        repaired = extract_structured_block(raw_text)
        if repaired is not None:
            try:
                payload = json.loads(repaired)
                jsonschema.validate(payload, template.output_schema)
                return ParsedResponse(template.id, payload, raw_text, repair_attempts=1)
            except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
                attempt_error = exc

        raise ParseError(
            f"response for template {template.id.value} is not schema-valid "
            f"after repair: {attempt_error}"
        )


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_structured_block(text: str) -> Optional[str]:
    """Best-effort recovery of a JSON object/array from prose-wrapped text."""
    fenced = _FENCE_RE.search(text)
    if fenced:
        candidate = fenced.group(1).strip()
        if candidate:
            return candidate
    for opener, closer in (("{", "}"), ("[", "]")):
        start = text.find(opener)
        if start == -1:
            continue
        depth = 0
        in_string = False
        escaped = False
        for pos in range(start, len(text)):
            ch = text[pos]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == opener:
                depth += 1
            elif ch == closer:
                depth -= 1
                if depth == 0:
                    return text[start : pos + 1]
        # unbalanced; try the other bracket kind
    return None


@dataclass
class QualityReport:
    """Distinctness verdict for a generated analogy triple."""

    ok: bool
    violations: list[str] = field(default_factory=list)


def scenario_tokens(text: str) -> frozenset[str]:
    return frozenset(re.findall(r"[a-z0-9']+", text.casefold()))


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def analogy_quality_gate(triple: list[Analogy]) -> QualityReport:
    """Apply the distinctness criterion to a triple of analogies.

    Pure function: reports violations, never raises on content.
    """
    if len(triple) != 3:
        raise ValidationError(f"quality gate expects exactly 3 analogies, got {len(triple)}")
    violations = []
    for i in range(3):
        for j in range(i + 1, 3):
            a, b = triple[i], triple[j]
            if a.title.casefold().strip() == b.title.casefold().strip():
                violations.append(
                    f"analogies {i + 1} and {j + 1} share the title {a.title!r}"
                )
            overlap = jaccard(scenario_tokens(a.scenario), scenario_tokens(b.scenario))
            if overlap >= JACCARD_LIMIT:
                violations.append(
                    f"analogies {i + 1} and {j + 1} have near-identical scenarios "
                    f"(token overlap {overlap:.2f})"
                )
    return QualityReport(ok=not violations, violations=violations)


@lru_cache(maxsize=1)
def default_library() -> TemplateLibrary:
    """Templates bundled with the package."""
    with resources.as_file(resources.files("analogykit") / "templates") as path:
        return TemplateLibrary.from_dir(Path(path))
