from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from riva.harness import corpus_path
from riva.spec import (
    DuplicatePropertyId,
    Predicate,
    PredicateKind,
    Property,
    ResourceDecl,
    SpecError,
    SpecSyntaxError,
    Specification,
    UnknownSubject,
    Verdict,
    VerdictValue,
    load_spec,
    parse_spec,
    serialize_spec,
)

SMALL = """\
specification demo
meta owner = "ops"

resource web {
  ip = "10.0.0.1"   # primary
  port = 443
}

property web-reach: reachable on web
property: logs_clean("ERROR") on web -- no errors
"""


def test_parse_small_document():
    spec = parse_spec(SMALL)
    assert spec.id == "demo"
    assert spec.metadata == {"owner": "ops"}
    assert spec.resource("web").attributes == {"ip": "10.0.0.1", "port": 443}
    assert spec.property_ids == ["web-reach", "L10"]
    assert spec.property("L10").description == "no errors"
    assert spec.property("web-reach").predicate.kind is PredicateKind.REACHABLE


def test_serialize_golden():
    spec = parse_spec(SMALL)
    assert serialize_spec(spec) == (
        "specification demo\n"
        'meta owner = "ops"\n'
        "\n"
        "resource web {\n"
        '  ip = "10.0.0.1"\n'
        "  port = 443\n"
        "}\n"
        "\n"
        "property web-reach: reachable on web -- web is reachable at its declared address\n"
        'property L10: logs_clean("ERROR") on web -- no errors\n'
    )


@pytest.mark.parametrize("path", sorted(corpus_path("specs").glob("*.spec")), ids=lambda p: p.stem)
def test_corpus_specs_round_trip(path):
    spec = load_spec(path)
    assert parse_spec(serialize_spec(spec)) == spec


def test_duplicate_property_id():
    with pytest.raises(DuplicatePropertyId):
        parse_spec("resource a {}\nproperty p: reachable on a\nproperty p: service_running on a\n")


def test_unknown_subject():
    with pytest.raises(UnknownSubject):
        parse_spec("resource a {}\nproperty p: reachable on b\n")


def test_syntax_error_reports_line():
    with pytest.raises(SpecSyntaxError) as err:
        parse_spec("resource a {}\nproperty p: nonsense(1) on a\n")
    assert err.value.line == 2


@pytest.mark.parametrize(
    "args",
    [("latency_ms", 10, 1), ("latency_ms", "x", 1)],
)
def test_metric_range_validation(args):
    with pytest.raises(SpecError):
        Predicate(PredicateKind.METRIC_IN_RANGE, args)


def test_bad_regex_rejected():
    with pytest.raises(SpecError):
        Predicate(PredicateKind.LOGS_CLEAN, ("(unclosed",))


def test_empty_spec_rejected():
    with pytest.raises(SpecError):
        Specification("x", (ResourceDecl("a", {}),), ())


def test_verdict_evidence_must_cite_k_records():
    Verdict(VerdictValue.VIOLATED, "", (0, 1)).check(2)
    Verdict(VerdictValue.INCONCLUSIVE, "", ()).check(2)
    with pytest.raises(SpecError):
        Verdict(VerdictValue.SATISFIED, "", (0,)).check(2)
    with pytest.raises(SpecError):
        Verdict(VerdictValue.SATISFIED, "", (0, 0)).check(2)


scalars = st.one_of(
    st.booleans(),
    st.integers(-10_000, 10_000),
    st.text(st.characters(blacklist_categories=("Cs", "Cc")), max_size=12),
    st.none(),
)
names = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)


@given(attrs=st.dictionaries(names, scalars, max_size=4), expected=scalars, attr=names)
def test_round_trip_random_attributes(attrs, expected, attr):
    spec = Specification(
        "rt",
        (ResourceDecl("res", attrs),),
        (Property("p1", "res", Predicate(PredicateKind.ATTRIBUTE_EQUALS, (attr, expected))),),
    )
    again = parse_spec(serialize_spec(spec))
    assert again.resource("res").attributes == attrs
    assert again.property("p1").predicate.args == (attr, expected)
