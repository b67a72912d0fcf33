"""Linking-rod feature schema: spec validation, triplets, canonical text.

The schema (entities, attributes, enumerated values) lives in a JSON data
file so that new part families can be described without code changes; only
the shipped linking-rod schema is validated end to end.
"""

from __future__ import annotations

import enum
import json
import re
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import NamedTuple

from .errors import ParseError, ParseWarning, SchemaError, SpecError

RELATION = "structural feature"

_SENTENCE_RE = re.compile(r"^the\s+(.+?)\s+of\s+the\s+(.+?)\s+is\s+(.+)$")


class SizeClass(enum.IntEnum):
    """Quantized magnitude of a dimensional attribute, small < medium < large."""

    SMALL = 0
    MEDIUM = 1
    LARGE = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "SizeClass":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown size class {label!r}") from None


def _norm(name: str) -> str:
    return " ".join(name.lower().split())


def _as_class(value) -> SizeClass:
    if isinstance(value, str):
        return SizeClass.from_label(value)
    return SizeClass(value)


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str  # "structure" | "size"
    values: tuple[str, ...] = ()
    optional: bool = False
    # (other attribute name, allowed values); attribute applies only when met
    requires: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def applies(self, structure_assignments: dict[str, str]) -> bool:
        for attr, allowed in self.requires:
            if structure_assignments.get(attr) not in allowed:
                return False
        return True


@dataclass(frozen=True)
class Entity:
    name: str
    attributes: tuple[Attribute, ...]

    def attribute(self, name: str) -> Attribute | None:
        name = _norm(name)
        for attr in self.attributes:
            if attr.name == name:
                return attr
        return None


@dataclass(frozen=True)
class FeatureSchema:
    """Entity/attribute/value vocabulary of one part family."""

    name: str
    root: str
    entities: tuple[Entity, ...]
    hole_pairs: tuple[tuple[str, tuple[str, str]], ...] = ()

    def entity(self, name: str) -> Entity | None:
        name = _norm(name)
        for ent in self.entities:
            if ent.name == name:
                return ent
        return None

    @property
    def feature_entities(self) -> tuple[Entity, ...]:
        return tuple(e for e in self.entities if e.name != self.root)

    @property
    def hole_entity_names(self) -> frozenset[str]:
        return frozenset(n for _, pair in self.hole_pairs for n in pair)

    def terms(self) -> frozenset[str]:
        """Every word of the schema vocabulary (entities, attributes, values)."""
        words: set[str] = set()
        for ent in self.entities:
            words.update(ent.name.split())
            for attr in ent.attributes:
                words.update(attr.name.split())
                for value in attr.values:
                    words.update(value.split())
        words.update(c.label for c in SizeClass)
        return frozenset(words)


def load_schema(data: dict) -> FeatureSchema:
    """Build a FeatureSchema from parsed JSON, checking well-formedness."""
    try:
        root = _norm(data["root"])
        raw_entities = data["entities"]
    except KeyError as exc:
        raise SchemaError(f"schema missing required field {exc}") from None

    entities = []
    for raw in raw_entities:
        attrs = []
        seen = set()
        for a in raw.get("attributes", ()):
            name = _norm(a["name"])
            if name in seen:
                raise SchemaError(
                    f"duplicate attribute {name!r} in entity {raw['name']!r}")
            seen.add(name)
            kind = a.get("kind", "structure")
            if kind not in ("structure", "size"):
                raise SchemaError(f"attribute {name!r}: unknown kind {kind!r}")
            values = tuple(_norm(v) for v in a.get("values", ()))
            if kind == "structure" and not values:
                raise SchemaError(f"structure attribute {name!r} has no values")
            if kind == "size" and values:
                raise SchemaError(f"size attribute {name!r} must not list values")
            if len(set(values)) != len(values):
                raise SchemaError(f"attribute {name!r} has duplicate values")
            requires = tuple(
                (_norm(k), tuple(_norm(v) for v in vs))
                for k, vs in a.get("requires", {}).items())
            attrs.append(Attribute(name, kind, values, bool(a.get("optional")), requires))
        entities.append(Entity(_norm(raw["name"]), tuple(attrs)))

    names = [e.name for e in entities]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate entity names")
    if root not in names:
        raise SchemaError(f"root entity {root!r} not defined")

    for ent in entities:
        for attr in ent.attributes:
            for req_attr, req_values in attr.requires:
                target = ent.attribute(req_attr)
                if target is None:
                    raise SchemaError(
                        f"{ent.name}.{attr.name} requires unknown attribute {req_attr!r}")
                for v in req_values:
                    if v not in target.values:
                        raise SchemaError(
                            f"{ent.name}.{attr.name} requires unknown value {v!r}")

    pairs = tuple(
        (style, (_norm(a), _norm(b)))
        for style, (a, b) in data.get("hole_pairs", {}).items())
    for _, (a, b) in pairs:
        if a not in names or b not in names:
            raise SchemaError(f"hole pair references unknown entity: {a!r}/{b!r}")

    return FeatureSchema(_norm(data.get("name", root)), root, tuple(entities), pairs)


@lru_cache(maxsize=1)
def default_schema() -> FeatureSchema:
    """The shipped linking-rod schema (eight feature entities under the root)."""
    text = resources.files("rodfind.data").joinpath("linking_rod_schema.json").read_text("utf-8")
    schema = load_schema(json.loads(text))
    if len(schema.feature_entities) != 8:
        raise SchemaError("linking-rod schema must define exactly 8 feature entities")
    return schema


class FeatureTriplet(NamedTuple):
    subject: str
    predicate: str
    object: str


@dataclass
class LinkingRodSpec:
    """One rod's structure-class and size-class assignments, keyed by entity."""

    structure: dict[str, dict[str, str]] = field(default_factory=dict)
    sizes: dict[str, dict[str, SizeClass]] = field(default_factory=dict)

    def __post_init__(self):
        self.structure = {
            _norm(e): {_norm(a): _norm(v) for a, v in attrs.items()}
            for e, attrs in self.structure.items() if attrs}
        self.sizes = {
            _norm(e): {_norm(a): _as_class(v) for a, v in attrs.items()}
            for e, attrs in self.sizes.items() if attrs}

    def entity_names(self) -> list[str]:
        names = list(self.structure)
        names.extend(n for n in self.sizes if n not in self.structure)
        return names

    @property
    def link_type(self) -> str | None:
        return self.structure.get("link", {}).get("main structure")

    def structure_of(self, entity: str) -> dict[str, str]:
        return self.structure.get(_norm(entity), {})

    def size_of(self, entity: str, attr: str) -> SizeClass | None:
        return self.sizes.get(_norm(entity), {}).get(_norm(attr))

    def replace_sizes(self, sizes: dict[str, dict[str, SizeClass]]) -> "LinkingRodSpec":
        return LinkingRodSpec(
            {e: dict(a) for e, a in self.structure.items()},
            {e: dict(a) for e, a in sizes.items()})


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str]


def _resolve_violations(spec: LinkingRodSpec, schema: FeatureSchema) -> list[str]:
    """Check that every assignment names a schema attribute it is allowed to use."""
    out = []
    for ename in spec.entity_names():
        ent = schema.entity(ename)
        if ent is None:
            out.append(f"unknown entity {ename!r}")
            continue
        if ename == schema.root:
            out.append(f"root entity {ename!r} takes no assignments")
            continue
        struct = spec.structure.get(ename, {})
        for aname, value in struct.items():
            attr = ent.attribute(aname)
            if attr is None:
                out.append(f"{ename}: unknown attribute {aname!r}")
            elif attr.kind != "structure":
                out.append(f"{ename}.{aname}: size attribute assigned a structure value")
            elif value not in attr.values:
                out.append(f"{ename}.{aname}: unknown value {value!r}")
            elif not attr.applies(struct):
                out.append(f"{ename}.{aname}: not applicable to this structure")
        for aname in spec.sizes.get(ename, {}):
            attr = ent.attribute(aname)
            if attr is None:
                out.append(f"{ename}: unknown attribute {aname!r}")
            elif attr.kind != "size":
                out.append(f"{ename}.{aname}: structure attribute assigned a size class")
            elif not attr.applies(struct):
                out.append(f"{ename}.{aname}: not applicable to this structure")
    return out


def validate_spec(spec: LinkingRodSpec, schema: FeatureSchema | None = None) -> ValidationReport:
    """Full validity gate: resolvability, completeness, and co-constraints.

    Violations are data, not exceptions; callers that need a hard gate raise
    SpecError themselves.
    """
    schema = schema or default_schema()
    violations = _resolve_violations(spec, schema)

    # Mandatory attributes for each present entity.
    for ename in spec.entity_names():
        ent = schema.entity(ename)
        if ent is None or ename == schema.root:
            continue
        struct = spec.structure.get(ename, {})
        sizes = spec.sizes.get(ename, {})
        for attr in ent.attributes:
            if attr.optional or not attr.applies(struct):
                continue
            assigned = attr.name in struct if attr.kind == "structure" else attr.name in sizes
            if not assigned:
                violations.append(f"{ename}: missing mandatory attribute {attr.name!r}")

    # Co-constraints for the rod family (encoded rules, not schema data).
    if spec.link_type == "binary link":
        if schema.entity("shaft") is not None and "shaft" not in spec.entity_names():
            violations.append("missing mandatory entity: shaft")
        present = [n for n in spec.entity_names() if n in schema.hole_entity_names]
        matched = False
        for style, (a, b) in schema.hole_pairs:
            if a in present and b in present and len(present) == 2:
                matched = True
                _check_hole_pair(spec, style, a, b, violations)
        if not matched:
            if len(present) == 1:
                pair = next(((a, b) for _, (a, b) in schema.hole_pairs
                             if present[0] in (a, b)), None)
                missing = pair[0] if pair and pair[1] == present[0] else (pair[1] if pair else "?")
                violations.append(f"missing mandatory entity: {missing}")
            else:
                violations.append(
                    "binary link requires exactly two pivot holes forming one naming pair, "
                    f"found {present or 'none'}")

    return ValidationReport(not violations, violations)


def _check_hole_pair(spec, style, a, b, violations):
    """Rule: larger/smaller naming is used iff the inner diameters differ."""
    ia = spec.size_of(a, "inner diameter")
    ib = spec.size_of(b, "inner diameter")
    if ia is None or ib is None:
        return
    if style == "larger_smaller":
        if ia == ib:
            violations.append(
                "pivot holes have the same inner diameter but are named larger/smaller")
        elif ia < ib:
            violations.append(
                "larger pivot hole must have the larger inner diameter")
    else:
        if ia != ib:
            violations.append(
                f"pivot holes with different inner diameters must use "
                f"larger/smaller naming, not {a}/{b}")


def _require_resolvable(spec: LinkingRodSpec, schema: FeatureSchema):
    violations = _resolve_violations(spec, schema)
    if violations:
        raise SpecError("spec does not resolve against the schema", violations)


def _attribute_items(spec: LinkingRodSpec, schema: FeatureSchema):
    """Assigned attributes in canonical order (schema entity order, then
    schema attribute order)."""
    for ent in schema.entities:
        if ent.name == schema.root or ent.name not in spec.entity_names():
            continue
        struct = spec.structure.get(ent.name, {})
        sizes = spec.sizes.get(ent.name, {})
        for attr in ent.attributes:
            if attr.name in struct:
                yield ent.name, attr.name, struct[attr.name]
            elif attr.name in sizes:
                yield ent.name, attr.name, sizes[attr.name].label


def spec_to_triplets(spec: LinkingRodSpec, schema: FeatureSchema | None = None) -> list[FeatureTriplet]:
    """Canonical triplet list: a structural-feature link per present entity
    plus one triplet per assigned attribute, in schema order."""
    schema = schema or default_schema()
    _require_resolvable(spec, schema)
    triplets = []
    present = set(spec.entity_names())
    for ent in schema.entities:
        if ent.name == schema.root or ent.name not in present:
            continue
        triplets.append(FeatureTriplet(schema.root, RELATION, ent.name))
        struct = spec.structure.get(ent.name, {})
        sizes = spec.sizes.get(ent.name, {})
        for attr in ent.attributes:
            if attr.name in struct:
                triplets.append(FeatureTriplet(ent.name, attr.name, struct[attr.name]))
            elif attr.name in sizes:
                triplets.append(FeatureTriplet(ent.name, attr.name, sizes[attr.name].label))
    return triplets


def render_text(spec: LinkingRodSpec, schema: FeatureSchema | None = None) -> str:
    """Canonical description: one sentence per assigned attribute, pattern
    "the <attribute> of the <entity> is <value>", semicolon separated,
    first letter capitalized, final period."""
    schema = schema or default_schema()
    _require_resolvable(spec, schema)
    sentences = [
        f"the {attr} of the {entity} is {value}"
        for entity, attr, value in _attribute_items(spec, schema)]
    if not sentences:
        raise SpecError("spec has no assigned attributes to describe")
    text = "; ".join(sentences) + "."
    return text[0].upper() + text[1:]


def _resolve_name(phrase: str, names: list[str], what: str) -> str:
    if phrase in names:
        return phrase
    suffix = [n for n in names if n.endswith(" " + phrase) or n == phrase]
    if len(suffix) == 1:
        return suffix[0]
    if len(suffix) > 1:
        raise ParseError(
            f"ambiguous {what} reference {phrase!r}: candidates {sorted(suffix)}")
    raise ParseError(f"unknown {what} {phrase!r}")


def parse_text(text: str, schema: FeatureSchema | None = None, *,
               lenient: bool = False) -> LinkingRodSpec:
    """Inverse of render_text.

    Strict mode raises ParseError on the first unrecognizable sentence; in
    lenient mode such sentences are skipped with a ParseWarning and every
    recognized sentence is still applied.  A text with no recognizable
    sentence is an error in both modes.
    """
    schema = schema or default_schema()
    structure: dict[str, dict[str, str]] = {}
    sizes: dict[str, dict[str, SizeClass]] = {}
    recognized = 0

    sentences = [s.strip() for s in _norm(text).rstrip(".").split(";")]
    sentences = [s for s in sentences if s]
    for sentence in sentences:
        try:
            _apply_sentence(sentence, schema, structure, sizes)
        except ParseError as exc:
            if not lenient:
                raise
            warnings.warn(ParseWarning(f"skipped sentence {sentence!r}: {exc}"))
        else:
            recognized += 1
    if recognized == 0:
        raise ParseError("no recognizable sentence in description")
    return LinkingRodSpec(structure, sizes)


def _apply_sentence(sentence, schema, structure, sizes):
    m = _SENTENCE_RE.match(sentence)
    if m is None:
        raise ParseError('sentence does not match "the <attribute> of the <entity> is <value>"')
    attr_phrase, entity_phrase, value = (g.strip() for g in m.groups())

    entity_name = _resolve_name(entity_phrase, [e.name for e in schema.entities], "entity")
    if entity_name == schema.root:
        raise ParseError(f"root entity {entity_name!r} takes no attributes")
    ent = schema.entity(entity_name)
    attr_name = _resolve_name(attr_phrase, [a.name for a in ent.attributes], "attribute")
    attr = ent.attribute(attr_name)

    if attr.kind == "size":
        try:
            parsed = SizeClass.from_label(value)
        except ValueError:
            raise ParseError(
                f"{entity_name}.{attr_name}: {value!r} is not a size class") from None
        bucket = sizes.setdefault(entity_name, {})
    else:
        if value not in attr.values:
            raise ParseError(f"{entity_name}.{attr_name}: unknown value {value!r}")
        parsed = value
        bucket = structure.setdefault(entity_name, {})

    if attr_name in bucket and bucket[attr_name] != parsed:
        raise ParseError(
            f"{entity_name}.{attr_name} assigned twice with conflicting values")
    bucket[attr_name] = parsed
