import pytest
from hypothesis import given, strategies as st

from skillnlu.interaction_model import SlotRef, validate_interaction_model
from skillnlu.ontology import (
    ActionTemplate,
    EntityType,
    OntologyError,
    RequiredProperty,
    check_compatibility,
    compile_builtin_intent,
    load_ontology,
)


@pytest.fixture(scope="module")
def onto():
    return load_ontology()


def test_call_needs_callable(onto):
    res = check_compatibility(onto.action("CallAction"), {"object": onto.entity("Color")})
    assert res.status == "incompatible" and res.missing == ("callable",)
    assert not res.compatible


def test_add_action_compatible(onto):
    res = check_compatibility(
        onto.action("AddAction"),
        {"object": onto.entity("GroceryItem"), "targetCollection": onto.entity("ShoppingList")},
    )
    assert res.compatible and res.missing == () and res.unbound == ()


def test_empty_binding_is_incomplete(onto):
    act = onto.action("SearchAction")
    res = check_compatibility(act, {})
    assert res.status == "incomplete"
    assert res.missing == tuple(r.property for r in act.required_properties.values())
    assert res.unbound == tuple(act.required_properties)


def test_unknown_role(onto):
    with pytest.raises(OntologyError):
        check_compatibility(onto.action("CallAction"), {"callee": onto.entity("Person")})


def test_search_action_slots(onto):
    ci = onto.compile("SearchAction", location="City", startDate="Date")
    assert [r for r, _ in ci.slots] == ["location", "startDate"]
    assert ci.name == "SearchAction.City.Date"


def test_add_action_samples_use_both_roles(onto):
    ci = onto.compile("AddAction", object="GroceryItem", targetCollection="ShoppingList")
    for u in ci.samples:
        refs = {t.name for t in u.template if isinstance(t, SlotRef)}
        assert refs == {"object", "targetCollection"}
        assert u.intent == ci.name


def test_no_surface_forms(onto):
    with pytest.raises(OntologyError, match="no surface forms"):
        onto.compile("NavigateAction", destination="City")


def test_incompatible_compile(onto):
    with pytest.raises(OntologyError, match="incompatible"):
        onto.compile("PlayAction", object="Person")


def test_unbound_template_property(onto):
    with pytest.raises(OntologyError, match="unbound"):
        onto.compile("AddAction", object="Song")


def test_template_with_undeclared_property():
    with pytest.raises(OntologyError):
        ActionTemplate("X", {"a": RequiredProperty("p")}, ("do {b}",))


def test_compiled_fragments_validate(onto):
    for act in onto.actions.values():
        if not act.carrier_templates:
            continue
        roles = list(act.required_properties)
        choices = [onto.compatible_entities(act.name, r) for r in roles]
        binding = {r: c[0] for r, c in zip(roles, choices)}
        ci = compile_builtin_intent(act, binding)
        report = validate_interaction_model(ci.to_interaction_model("builtin"))
        assert report.buildable, (act.name, report.messages())


def test_compatible_entities(onto):
    names = {e.name for e in onto.compatible_entities("CallAction", "object")}
    assert names == {"LocalBusiness", "Person"}


props = st.sets(st.sampled_from(["a", "b", "c", "d"]), max_size=4)


@given(props, props, props)
def test_compatibility_is_monotone(p_obj, p_extra, required):
    req = sorted(required) or ["a"]
    act = ActionTemplate("Act", {f"r{i}": RequiredProperty(p) for i, p in enumerate(req)}, ())
    ent = EntityType("E", frozenset(p_obj))
    binding = {r: ent for r in act.required_properties}
    before = check_compatibility(act, binding)
    after = check_compatibility(act, {r: ent.with_properties(*p_extra) for r in binding})
    if before.compatible:
        assert after.compatible
    assert set(after.missing) <= set(before.missing)


def test_bundled_file_errors(tmp_path):
    bad = tmp_path / "o.json"
    bad.write_text('{"properties": [], "entities": [{"name": "E", "properties": ["x"]}]}')
    with pytest.raises(OntologyError):
        load_ontology(bad)
    with pytest.raises(OntologyError):
        load_ontology().entity("Unicorn")
