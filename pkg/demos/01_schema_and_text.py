"""Feature schema walkthrough: specs, triplets, canonical text, parsing.

Run: python demos/01_schema_and_text.py
"""

from rodfind import (
    LinkingRodSpec,
    default_schema,
    parse_text,
    render_text,
    spec_to_triplets,
    validate_spec,
)

schema = default_schema()
print("feature entities:", [e.name for e in schema.feature_entities])

# the arc-shaped rod of the worked corpus example
spec = LinkingRodSpec(
    structure={"link": {"main structure": "binary link"},
               "shaft": {"main structure": "arc-shaped vertical slab",
                         "cross section": "rectangle"}},
    sizes={"shaft": {"radius": "large", "length": "medium", "thickness": "large"},
           "first pivot hole": {"inner diameter": "large",
                                "outer diameter": "large", "depth": "large"},
           "second pivot hole": {"inner diameter": "large",
                                 "outer diameter": "large", "depth": "large"}})

report = validate_spec(spec)
print("\nvalid:", report.ok)

print("\nfirst few triplets:")
for triplet in spec_to_triplets(spec)[:6]:
    print("  ", tuple(triplet))

text = render_text(spec)
print("\ncanonical description:\n ", text)

assert parse_text(text) == spec
print("\nparse(render(spec)) == spec: True")

# lenient parsing tolerates an off-vocabulary sentence
import warnings

broken = text.replace("the radius of the shaft", "the bend radius of the shaft")
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    partial = parse_text(broken, lenient=True)
print(f"lenient parse skipped {len(caught)} sentence(s); "
      f"radius recovered: {partial.size_of('shaft', 'radius')}")
