"""Deterministic mock backends for text, image, and caption models.

The mocks make the full pipeline runnable offline: identical request
(including seed) always yields identical bytes, across process restarts,
because every choice is driven by sha256 arithmetic rather than RNG
state.

Mock image protocol: a real PNG placard (solid background colored by
hash, prompt text rendered) followed by a reserved trailing sidecar
block listing which component phrases the "generator" depicted. The mock
caption backend reads that sidecar back, which gives the coverage
validator something real to probe. To imitate the known failure mode of
text-to-image models dropping parts of multi-component scenes, the mock
generator omits one enumerated component per image unless the prompt
carries an emphasis clause ("The image MUST clearly show: ..."), in
which case it complies fully.
"""

from __future__ import annotations

import colorsys
import io
import json
import re
import textwrap
from dataclasses import dataclass, field
from typing import Optional

from PIL import Image, ImageDraw, ImageFont, UnidentifiedImageError

from .errors import BackendResponseError
from .util import stable_hash

SIDECAR_MARKER = b"\n----ANALOGYKIT-SIDECAR-V1----\n"

# Prompt line the prompt engine emits to enumerate checklist components.
INCLUDE_LINE_RE = re.compile(
    r"The image must clearly include:\s*([^\n]+)", re.IGNORECASE
)
# Emphasis clause appended by the coverage repair loop.
MUST_CLAUSE_RE = re.compile(r"The image MUST clearly show: ([^.\n]+)\.")

_FIELD_RES = {
    "concept": re.compile(r"^Concept:\s*(.+)$", re.MULTILINE),
    "subject": re.compile(r"^Subject area:\s*(.+)$", re.MULTILINE),
    "definition": re.compile(r"^Definition:\s*(.+)$", re.MULTILINE),
    "analogy_title": re.compile(r"^(?:Chosen analogy|Analogy):\s*(.+)$", re.MULTILINE),
    "scenario": re.compile(r"^Scenario:\s*(.+)$", re.MULTILINE),
    "mappings": re.compile(r"^Component mappings:\s*(.+)$", re.MULTILINE),
    "narrative": re.compile(r"^Narrative:\s*(.+)$", re.MULTILINE),
    "components": re.compile(
        r"^Visual components that must remain depictable:\s*(.+)$", re.MULTILINE
    ),
}


def _extract(prompt: str, name: str) -> str:
    match = _FIELD_RES[name].search(prompt)
    return match.group(1).strip() if match else ""


# ---------------------------------------------------------------------------
# Canned teaching content for well-known demo concepts


@dataclass
class CannedAnalogy:
    title: str
    scenario: str
    mappings: list[tuple[str, str]]
    checklist: Optional[list[tuple[str, list[str]]]] = None
    scenes: Optional[list[tuple[str, str]]] = None
    narrative: Optional[str] = None


@dataclass
class CannedConcept:
    definition: str
    rationale: str
    analogies: list[CannedAnalogy] = field(default_factory=list)


_SKATING = CannedAnalogy(
    title="Skating on ice",
    scenario=(
        "An ice skater stands motionless in the middle of a frozen pond. "
        "A friend gives her one firm push from behind and lets go. "
        "She glides on and on in a straight line across the smooth ice, "
        "until she tilts her blades and the scraping slows her to a stop."
    ),
    mappings=[
        ("an object at rest", "the motionless skater"),
        ("an unbalanced external force", "the push from behind"),
        ("motion continuing unchanged", "the gliding skater"),
        ("a force that ends the motion", "the blades digging into the ice"),
    ],
    checklist=[
        ("ice skater", ["skater", "figure skater"]),
        ("frozen pond", ["ice rink", "sheet of ice", "the ice"]),
        ("push from behind", ["firm push", "pushing hands", "a push"]),
        (
            "tilted skate blades",
            ["skate blades", "blades digging in", "blades digging into the ice"],
        ),
    ],
    scenes=[
        (
            "An ice skater standing perfectly still at the center of a wide "
            "frozen pond, arms relaxed, breath visible in cold air",
            "At rest the skater stays exactly where she is; nothing pushes "
            "her, so nothing about her motion changes.",
        ),
        (
            "A friend's gloved hands giving the skater one firm push from "
            "behind on the frozen pond, her body just starting to lean forward",
            "One push from outside sets her moving. The push is the "
            "unbalanced force that changes her state of rest.",
        ),
        (
            "The skater gliding alone across smooth ice in a long straight "
            "line, nobody touching her, the pond stretching out ahead",
            "With nothing left to push or slow her, she keeps the same speed "
            "and the same direction entirely on her own.",
        ),
        (
            "Close view of the skater's tilted skate blades shaving the ice "
            "and kicking up frost as she slows to a stop",
            "Digging the blades in adds friction - an outside force - and "
            "only that outside force brings her back to rest.",
        ),
    ],
    narrative=(
        "Picture a skater standing dead still on a frozen pond. She will "
        "stand there forever unless something pushes her - and then a "
        "friend does, one firm shove from behind. Off she goes, and here is "
        "the surprising part: on smooth ice she just keeps gliding, same "
        "speed, same direction, with nobody touching her at all. Motion "
        "does not need a constant push; it needs a push only to change. "
        "When she finally wants to stop, she has to tilt her blades so the "
        "ice scrapes against her - another outside force. Rest stays rest, "
        "and motion stays motion, until something from outside interferes."
    ),
)

_STALLED_CAR = CannedAnalogy(
    title="Pushing a stalled car",
    scenario=(
        "A car with a dead engine sits in the road and refuses to move. "
        "Three people lean into the back bumper and strain until it "
        "finally creeps forward. Once rolling it wants to keep rolling, "
        "and they have to run along just to steer it into the breakdown lane."
    ),
    mappings=[
        ("an object at rest", "the stalled car"),
        ("an unbalanced external force", "the people pushing the bumper"),
        ("resistance to changes in motion", "the heavy strain to get it creeping"),
    ],
)

_SOCCER_BALL = CannedAnalogy(
    title="The stationary soccer ball",
    scenario=(
        "A soccer ball rests on the penalty spot, perfectly still. It "
        "never rolls on its own, no matter how long the players wait. "
        "Only when a boot strikes it does it fly, and it keeps flying "
        "until grass and air drag it back to a standstill."
    ),
    mappings=[
        ("an object at rest", "the ball on the penalty spot"),
        ("an unbalanced external force", "the kick"),
        ("a force that ends the motion", "the drag of grass and air"),
    ],
)

_WATER_TANKS = CannedAnalogy(
    title="Two water tanks",
    scenario=(
        "Water flows through a narrow tube connected between two water "
        "tanks, one tank having significantly more water than the other. "
        "The bigger the difference in water level, the harder the water "
        "pushes through the tube, and the faster it flows until the two "
        "levels even out."
    ),
    mappings=[
        ("electric voltage", "water level difference"),
        ("electric current", "water flow"),
        ("the conducting wire", "connecting tube"),
        ("the charge reservoirs", "two water tanks"),
    ],
    checklist=[
        ("two water tanks", ["water tanks", "pair of tanks", "both tanks"]),
        (
            "connecting tube",
            ["narrow tube", "connecting pipe", "tube between the tanks"],
        ),
        (
            "water level difference",
            [
                "different water levels",
                "one tank fuller",
                "fuller than the other",
                "higher water level",
            ],
        ),
        ("water flow", ["flowing water", "water flowing", "stream of water"]),
    ],
    scenes=[
        (
            "Two transparent water tanks side by side on a bench, the left "
            "tank filled nearly to the brim and the right tank almost empty, "
            "a narrow tube connected between them near the base",
            "Two tanks hold different amounts of water. The difference in "
            "water level is the pressure waiting to do something - that is "
            "the voltage.",
        ),
        (
            "Close view of the narrow connecting tube between the two water "
            "tanks, water just beginning to move through it from the fuller "
            "tank, the water level difference clearly visible",
            "The tube is the only path between the tanks - the wire of our "
            "circuit. The moment it connects them, water starts to flow.",
        ),
        (
            "Water flow streaming through the connecting tube from the "
            "fuller tank to the emptier one, arrows of motion in the water, "
            "two water tanks with visibly unequal levels",
            "The moving water is the current. A bigger level difference "
            "pushes more water through each second.",
        ),
        (
            "The two water tanks now holding nearly equal water levels, only "
            "a trickle of water flow left in the connecting tube",
            "As the levels even out, the push weakens and the flow dies "
            "down - no voltage difference, no current.",
        ),
    ],
    narrative=(
        "Set two water tanks on a bench and join them with one narrow tube "
        "near the base. Fill the left tank high and leave the right one "
        "nearly empty. The lopsided water levels are a stored push: the "
        "higher the difference, the harder the water leans on the tube. "
        "Open the path and water streams across - that moving stream is "
        "the current, and the level difference driving it is the voltage. "
        "Watch the levels creep toward each other and the stream thin out, "
        "because a smaller difference pushes less water through. When the "
        "levels match, the flow stops entirely."
    ),
)

_HIGHWAY = CannedAnalogy(
    title="Cars on a sloped highway",
    scenario=(
        "A line of cars rolls downhill from a packed parking garage toward "
        "an empty one. The steeper the slope between the garages, the "
        "faster the traffic streams along the single connecting road."
    ),
    mappings=[
        ("electric voltage", "the slope between the garages"),
        ("electric current", "the stream of cars"),
        ("the conducting wire", "the connecting road"),
    ],
)

_WATERFALL = CannedAnalogy(
    title="A waterfall over a dam",
    scenario=(
        "A reservoir sits high behind a dam while the river runs far "
        "below. Water spilling over the top crashes down the height "
        "difference, and the taller the dam, the harder the falling "
        "water drives the mill wheel at the bottom."
    ),
    mappings=[
        ("electric voltage", "the height of the dam"),
        ("electric current", "the falling water"),
        ("electrical power", "the turning mill wheel"),
    ],
)

_LEGO = CannedAnalogy(
    title="Building with Lego bricks",
    scenario=(
        "A child keeps a box of Lego bricks, each brick a small "
        "self-contained thing with studs that decide how it can connect. "
        "On the box lid are pictures of structures of Lego - a house, a "
        "car - and every build follows one of those pictures while the "
        "individual bricks do the actual work of being walls and wheels."
    ),
    mappings=[
        ("objects", "Lego bricks"),
        ("classes", "Lego structures"),
        ("methods", "the ways bricks snap together"),
    ],
    checklist=[
        ("lego bricks", ["bricks", "plastic bricks"]),
        ("lego structures", ["structures of lego", "built structure", "lego house"]),
        ("child building", ["hands assembling", "builder"]),
    ],
)

_COOKIE = CannedAnalogy(
    title="A cookie-cutter bakery",
    scenario=(
        "A baker owns one star-shaped cookie cutter hanging on the wall. "
        "From that single cutter she stamps out dozens of cookies, every "
        "one star-shaped, yet each cookie gets its own icing and its own "
        "fate on a different plate."
    ),
    mappings=[
        ("classes", "the cookie cutter"),
        ("objects", "the individual cookies"),
        ("instance state", "each cookie's own icing"),
    ],
)

_BLUEPRINT = CannedAnalogy(
    title="Blueprints and houses",
    scenario=(
        "An architect draws one blueprint for a suburb. Builders raise "
        "twenty houses from it: identical floor plans, but every family "
        "paints different walls and plants a different garden, and what "
        "happens in one house never rearranges the rooms of another."
    ),
    mappings=[
        ("classes", "the blueprint"),
        ("objects", "the built houses"),
        ("encapsulation", "each house's own walls"),
    ],
)

CANNED_CONCEPTS: dict[str, CannedConcept] = {
    "newton's first law": CannedConcept(
        definition=(
            "Newton's First Law states that an object at rest stays at rest "
            "and an object in motion keeps moving at the same speed and in "
            "the same direction unless an unbalanced external force acts on "
            "it. The property of matter that resists such changes in motion "
            "is called inertia, so the law is also known as the law of "
            "inertia."
        ),
        rationale=(
            "A cornerstone of classical mechanics with a precise, standard "
            "formulation."
        ),
        analogies=[_SKATING, _STALLED_CAR, _SOCCER_BALL],
    ),
    "object-oriented programming": CannedConcept(
        definition=(
            "Object-oriented programming is a way of structuring software "
            "around objects: bundles of data and the operations that belong "
            "to that data. Classes describe what a kind of object looks like "
            "and can do, while each object created from a class keeps its "
            "own state, which makes large programs easier to organize, "
            "reuse, and change."
        ),
        rationale="A standard, well-defined programming paradigm.",
        analogies=[_LEGO, _COOKIE, _BLUEPRINT],
    ),
    "voltage and current": CannedConcept(
        definition=(
            "Voltage is the difference in electric potential between two "
            "points - the push available to move charge - while current is "
            "the rate at which charge actually flows past a point. A larger "
            "voltage across the same conductor drives a larger current, "
            "which is the relationship Ohm's law makes precise."
        ),
        rationale="Two related, precisely defined electrical quantities.",
        analogies=[_WATER_TANKS, _HIGHWAY, _WATERFALL],
    ),
}

# Alternate spellings that resolve to the same fixtures.
_CANNED_ALIASES = {
    "newtons first law": "newton's first law",
    "newton's first law of motion": "newton's first law",
    "oop": "object-oriented programming",
    "object oriented programming": "object-oriented programming",
    "voltage and electric current": "voltage and current",
    "electric voltage and current": "voltage and current",
}

_NOT_CONCEPTS = {"asdfgh", "qwerty", "zzzzz"}
_AMBIGUOUS_CONCEPTS = {"force", "wave", "set"}


def _canned_for(name: str) -> Optional[CannedConcept]:
    key = name.casefold().strip()
    key = _CANNED_ALIASES.get(key, key)
    return CANNED_CONCEPTS.get(key)


# Source domains for concepts without canned fixtures; three get picked
# per concept by hash, so repeated runs agree byte-for-byte.
_GENERIC_DOMAINS: list[dict] = [
    {
        "title": "A relay race handoff",
        "setting": "a relay race on a sunlit running track",
        "parts": ["the baton", "the outgoing runner", "the handoff zone"],
        "scenario": (
            "Four sprinters share one race on a sunlit track. Everything "
            "hangs on the baton: the incoming runner carries it flat out, "
            "the outgoing runner matches speed inside the painted handoff "
            "zone, and the exchange has to happen without anyone stopping."
        ),
    },
    {
        "title": "A restaurant kitchen at rush hour",
        "setting": "a restaurant kitchen in the middle of dinner service",
        "parts": ["the order tickets", "the line cooks", "the finished plates"],
        "scenario": (
            "Dinner service hits and order tickets start printing faster "
            "than anyone can read them aloud. The head chef calls them out, "
            "line cooks fire their stations in parallel, and finished "
            "plates land under the heat lamps in exactly the order the "
            "dining room expects."
        ),
    },
    {
        "title": "A library card catalog",
        "setting": "an old library reading room with wooden catalog drawers",
        "parts": ["the catalog drawers", "the index cards", "the bookshelves"],
        "scenario": (
            "A reader who wants one book out of a million does not wander "
            "the shelves. She walks to the wooden catalog drawers, flips "
            "through index cards sorted by a known rule, and each card "
            "points straight to a shelf and a spine."
        ),
    },
    {
        "title": "A train station timetable",
        "setting": "a busy railway station concourse",
        "parts": ["the departure board", "the waiting trains", "the platforms"],
        "scenario": (
            "On the station concourse, the departure board flips through "
            "destinations while trains idle at numbered platforms. "
            "Passengers never negotiate with a locomotive; they trust the "
            "board, walk to the listed platform, and the system moves "
            "thousands of strangers without a single collision."
        ),
    },
    {
        "title": "A garden irrigation system",
        "setting": "a vegetable garden laced with drip lines",
        "parts": ["the water barrel", "the drip lines", "the garden beds"],
        "scenario": (
            "A rain barrel feeds a web of thin drip lines that snake "
            "through the garden beds. Gravity does the quiet work: water "
            "leaves the barrel, splits at every junction, and each bed "
            "gets its measured trickle whether the gardener watches or not."
        ),
    },
    {
        "title": "A postal sorting office",
        "setting": "a postal sorting office the night before delivery",
        "parts": ["the mailbags", "the sorting racks", "the delivery routes"],
        "scenario": (
            "Overnight, mailbags spill thousands of envelopes onto the "
            "sorting racks. Workers read only the code on each envelope, "
            "drop it into the matching pigeonhole, and by dawn every "
            "delivery route leaves with its letters already in walking "
            "order."
        ),
    },
]


def pick_generic_domains(seed: int | None, prompt: str) -> list[dict]:
    """Three distinct source domains chosen by hash; test oracles mirror this."""
    start = stable_hash(seed or 0, prompt) % len(_GENERIC_DOMAINS)
    return [_GENERIC_DOMAINS[(start + k) % len(_GENERIC_DOMAINS)] for k in range(3)]


_SUBJECT_PHRASES = {
    "math": "mathematics",
    "physics": "physics",
    "programming": "computing",
    "other": "science and engineering",
}


class MockTextBackend:
    """Produces schema-valid JSON for every prompt the pipeline renders.

    Dispatch keys off the response-shape markers the templates embed, so
    the mock needs no out-of-band signal about which template called it.
    """

    def __init__(self, default_seed: int = 0):
        self.default_seed = default_seed

    def complete(self, prompt: str, seed: int | None = None) -> str:
        effective_seed = self.default_seed if seed is None else seed
        if '"verdict"' in prompt:
            return self._definition_check(prompt)
        if '"analogies"' in prompt:
            return self._analogy_triple(prompt, effective_seed)
        if '"scenes"' in prompt:
            return self._storyboard_scenes(prompt)
        if '"narrative"' in prompt:
            return self._narrative(prompt)
        if '"criticality"' in prompt:
            return self._checklist(prompt)
        if '"caption"' in prompt:
            return json.dumps({"caption": "A plain illustration."})
        # Free-form prompt: deterministic filler derived from hash(seed, prompt).
        words = ["signal", "gear", "orbit", "lattice", "current", "vector"]
        idx = stable_hash(effective_seed, prompt) % len(words)
        return f"mock-completion:{words[idx]}"

    # -- per-template builders ------------------------------------------

    def _definition_check(self, prompt: str) -> str:
        name = _extract(prompt, "concept")
        subject = _extract(prompt, "subject") or "other"
        key = name.casefold().strip()
        canned = _canned_for(name)
        if key in _NOT_CONCEPTS:
            doc = {
                "verdict": "not_a_concept",
                "definition": "",
                "rationale": (
                    f"'{name}' does not name any recognizable concept; it "
                    "reads as keyboard noise."
                ),
            }
        elif canned is not None:
            doc = {
                "verdict": "valid",
                "definition": canned.definition,
                "rationale": canned.rationale,
            }
        elif key in _AMBIGUOUS_CONCEPTS:
            doc = {
                "verdict": "ambiguous",
                "definition": (
                    f"In everyday teaching, '{name}' most commonly refers to "
                    f"a core notion of {_SUBJECT_PHRASES.get(subject, 'science')} "
                    "that describes how a quantity or structure behaves under "
                    "well-defined rules; the exact meaning depends on the "
                    "course context."
                ),
                "rationale": (
                    f"'{name}' is a real term but names different things in "
                    "different subfields."
                ),
            }
        else:
            subject_phrase = _SUBJECT_PHRASES.get(subject, "science and engineering")
            doc = {
                "verdict": "valid",
                "definition": (
                    f"{name} is a foundational idea in {subject_phrase}. It "
                    "describes a repeatable relationship between the parts of "
                    "a system: given its inputs and governing rules, the "
                    "behavior it names will occur the same way every time, "
                    "which is what makes it teachable and testable."
                ),
                "rationale": (
                    f"'{name}' reads as a coherent, teachable topic in "
                    f"{subject_phrase}."
                ),
            }
        return json.dumps(doc)

    def _analogy_triple(self, prompt: str, seed: int) -> str:
        name = _extract(prompt, "concept")
        canned = _canned_for(name)
        if canned is not None and canned.analogies:
            analogies = [
                {
                    "title": a.title,
                    "scenario": a.scenario,
                    "mappings": [
                        {"concept_component": c, "analogy_component": m}
                        for c, m in a.mappings
                    ],
                }
                for a in canned.analogies
            ]
        else:
            analogies = []
            for domain in pick_generic_domains(seed, prompt):
                parts = domain["parts"]
                analogies.append(
                    {
                        "title": domain["title"],
                        "scenario": domain["scenario"],
                        "mappings": [
                            {
                                "concept_component": f"the overall process of {name}",
                                "analogy_component": domain["setting"],
                            },
                            {
                                "concept_component": f"what {name} acts on",
                                "analogy_component": parts[0],
                            },
                            {
                                "concept_component": f"what drives {name} forward",
                                "analogy_component": parts[1],
                            },
                            {
                                "concept_component": f"the outcome {name} produces",
                                "analogy_component": parts[2],
                            },
                        ],
                    }
                )
        return json.dumps({"analogies": analogies})

    def _narrative(self, prompt: str) -> str:
        name = _extract(prompt, "concept")
        title = _extract(prompt, "analogy_title")
        scenario = _extract(prompt, "scenario")
        canned = self._canned_analogy(name, title)
        if canned is not None and canned.narrative:
            return json.dumps({"narrative": canned.narrative})
        text = (
            f"{scenario} Hold that picture while we walk through it once "
            f"more, slowly: everything in the scene stands for a piece of "
            f"{name}, and the story only works because each piece plays its "
            "part at the right moment. Watch the scene from start to finish "
            "and you have watched the concept happen."
        )
        return json.dumps({"narrative": text})

    def _storyboard_scenes(self, prompt: str) -> str:
        name = _extract(prompt, "concept")
        title = _extract(prompt, "analogy_title")
        components_line = _extract(prompt, "components")
        parts = [p.strip() for p in components_line.split(";") if p.strip()]
        canned = self._canned_analogy(name, title)
        if canned is not None and canned.scenes:
            scenes = [
                {"index": i + 1, "visual": visual, "description": description}
                for i, (visual, description) in enumerate(canned.scenes)
            ]
        else:
            setting = title.casefold() if title else "the scene"
            first = parts[0] if parts else "the first element"
            second = parts[1] if len(parts) > 1 else first
            last = parts[-1] if parts else "the result"
            listing = ", ".join(parts) if parts else "the scene"
            scenes = [
                {
                    "index": 1,
                    "visual": (
                        f"A wide establishing view of {setting}, calm and "
                        f"motionless, with {listing} all plainly visible"
                    ),
                    "description": (
                        f"Here is our stage. Every piece you can see stands "
                        f"for a part of {name}."
                    ),
                },
                {
                    "index": 2,
                    "visual": (
                        f"Close view of {first} at the moment things begin "
                        f"to move, {second} poised beside it"
                    ),
                    "description": (
                        "The action starts here, with the first component "
                        "doing its job."
                    ),
                },
                {
                    "index": 3,
                    "visual": (
                        f"{second} in full motion, energy flowing through "
                        f"the scene, {listing} interacting"
                    ),
                    "description": (
                        "Now the parts work together; this interaction is "
                        "the heart of the concept."
                    ),
                },
                {
                    "index": 4,
                    "visual": (
                        f"The aftermath: {last} showing the settled end "
                        f"state of {setting}"
                    ),
                    "description": (
                        f"The process completes. What you watched is "
                        f"{name}, played out step by step."
                    ),
                },
            ]
        return json.dumps({"scenes": scenes})

    def _checklist(self, prompt: str) -> str:
        name = _extract(prompt, "concept")
        title = _extract(prompt, "analogy_title")
        mappings_line = _extract(prompt, "mappings")
        canned = self._canned_analogy(name, title)
        if canned is not None and canned.checklist:
            items = [
                {"canonical": canonical, "aliases": aliases, "criticality": "required"}
                for canonical, aliases in canned.checklist
            ]
        else:
            components = []
            for pair in mappings_line.split(";"):
                if "->" in pair:
                    components.append(pair.split("->", 1)[1].strip())
            items = [
                {"canonical": component, "aliases": [], "criticality": "required"}
                for component in dict.fromkeys(c.casefold() for c in components if c)
            ]
            if not items:
                items = [
                    {"canonical": "the main subject", "aliases": [], "criticality": "required"}
                ]
        return json.dumps({"items": items})

    def _canned_analogy(self, concept_name: str, title: str) -> Optional[CannedAnalogy]:
        canned = _canned_for(concept_name)
        if canned is None:
            return None
        wanted = title.casefold().strip()
        for analogy in canned.analogies:
            if analogy.title.casefold() == wanted:
                return analogy
        return None


# ---------------------------------------------------------------------------
# Mock image + caption backends


def parse_prompt_components(prompt: str) -> tuple[list[str], list[str]]:
    """Split an image prompt into (enumerated components, MUST-clause items)."""
    listed: list[str] = []
    include = INCLUDE_LINE_RE.search(prompt)
    if include:
        raw = include.group(1).strip().rstrip(".")
        listed = [part.strip() for part in raw.split(";") if part.strip()]
    musts = [m.strip() for m in MUST_CLAUSE_RE.findall(prompt)]
    return listed, musts


def depicted_components(prompt: str, seed: int) -> list[str]:
    """What the mock generator actually 'draws' for this prompt.

    Without emphasis clauses it drops exactly one enumerated component,
    chosen by hash; with any MUST clause present it complies fully.
    """
    listed, musts = parse_prompt_components(prompt)
    if musts:
        merged: list[str] = []
        seen = set()
        for phrase in listed + musts:
            key = phrase.casefold()
            if key not in seen:
                seen.add(key)
                merged.append(phrase)
        return merged
    if not listed:
        return []
    drop = stable_hash("drop", seed, prompt) % len(listed)
    return [phrase for i, phrase in enumerate(listed) if i != drop]


def _background_color(prompt: str, seed: int) -> tuple[int, int, int]:
    hue = (stable_hash("bg", seed, prompt) % 360) / 360.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.45, 0.85)
    return int(r * 255), int(g * 255), int(b * 255)


def _load_font(size: int):
    try:
        return ImageFont.load_default(size=size)
    except TypeError:  # older Pillow without sized default font
        return ImageFont.load_default()


class MockImageBackend:
    """Draws a deterministic placard and appends the sidecar block.

    Renders are memoized: the output is a pure function of
    (prompt, size, seed), and test suites hit the same requests often.
    """

    _CACHE_LIMIT = 256

    def __init__(self) -> None:
        self._cache: dict[tuple[str, int, int, int], tuple[bytes, dict]] = {}

    def generate(
        self, prompt: str, width: int, height: int, seed: int | None = None
    ) -> tuple[bytes, dict]:
        effective_seed = seed or 0
        key = (prompt, width, height, effective_seed)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        depicted = depicted_components(prompt, effective_seed)
        image = Image.new("RGB", (width, height), _background_color(prompt, effective_seed))
        draw = ImageDraw.Draw(image)
        margin = width // 16
        band_height = height // 5
        draw.rectangle([0, 0, width, band_height], fill=(25, 25, 35))
        title_font = _load_font(max(14, width // 28))
        body_font = _load_font(max(12, width // 40))
        draw.text(
            (margin, band_height // 3),
            f"mock render / seed {effective_seed}",
            fill=(240, 240, 240),
            font=title_font,
        )
        wrapped = textwrap.fill(prompt[:320], width=48)
        draw.multiline_text(
            (margin, band_height + margin),
            wrapped,
            fill=(20, 20, 30),
            font=body_font,
            spacing=4,
        )
        if depicted:
            bullet_y = height - margin - 14 * len(depicted[:6])
            for phrase in depicted[:6]:
                draw.text((margin, bullet_y), f"- {phrase}", fill=(20, 20, 30), font=body_font)
                bullet_y += 14
        buffer = io.BytesIO()
        image.save(buffer, format="PNG")
        sidecar = {"prompt": prompt, "seed": effective_seed, "depicted": depicted}
        data = (
            buffer.getvalue()
            + SIDECAR_MARKER
            + json.dumps(sidecar, sort_keys=True).encode("utf-8")
        )
        if len(self._cache) >= self._CACHE_LIMIT:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = (data, dict(sidecar))
        return data, dict(sidecar)


def read_sidecar(image_bytes: bytes) -> Optional[dict]:
    marker_at = image_bytes.rfind(SIDECAR_MARKER)
    if marker_at == -1:
        return None
    try:
        return json.loads(image_bytes[marker_at + len(SIDECAR_MARKER):])
    except json.JSONDecodeError:
        return None


class MockCaptionBackend:
    """Echoes back the sidecar tokens, the way a perfect captioner would."""

    def caption(self, image_bytes: bytes) -> str:
        if not image_bytes:
            raise BackendResponseError("cannot caption an empty image")
        sidecar = read_sidecar(image_bytes)
        if sidecar is not None:
            depicted = sidecar.get("depicted", [])
            if depicted:
                return "The picture clearly shows " + ", ".join(depicted) + "."
            return "A stylized illustration with a short text placard."
        try:
            with Image.open(io.BytesIO(image_bytes)) as image:
                width, height = image.size
        except UnidentifiedImageError as exc:
            raise BackendResponseError(f"cannot decode image bytes: {exc}") from exc
        return f"An illustration, {width} by {height} pixels."
