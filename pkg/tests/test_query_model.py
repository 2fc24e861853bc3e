import json
from collections import deque
from decimal import ROUND_HALF_UP, Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import flat_space, obj, press_space, qm_device, qm_query, qm_text, query, var
from infoengine.errors import InvalidValue, MalformedDocument, MissingField, UnresolvableNode
from infoengine.nodes import AddressSpace, NodeRef, RefKind
from infoengine.query_model import (
    effective_destination,
    estimate_state_space,
    estimate_volume,
    expand_depth,
    human_bytes,
    parse_query_model,
)


def oracle_expand(space: AddressSpace, root_ref: NodeRef, depth: int) -> set[str]:
    """Breadth-first walk with explicit levels; order ignored."""
    root = space.resolve(root_ref)
    found = set()
    queue = deque([(root, 0)])
    while queue:
        node, level = queue.popleft()
        if node.is_variable:
            found.add(node.node_ref.canonical)
        if level < depth:
            queue.extend((c, level + 1) for c in node.children)
    return found


class TestNodeRef:
    def test_canonical_forms(self):
        assert NodeRef(2, "Press.Force").canonical == "ns=2;s=Press.Force"
        assert NodeRef(0, "Objects/Press", RefKind.BROWSE_PATH).canonical == "ns=0;bp=Objects/Press"

    @given(st.integers(0, 65535), st.text(min_size=1).filter(lambda s: ";" not in s),
           st.sampled_from(list(RefKind)))
    def test_parse_inverts_canonical(self, ns, ident, kind):
        ref = NodeRef(ns, ident, kind)
        assert NodeRef.parse(ref.canonical) == ref


class TestParse:
    def test_minimal_document(self):
        doc = parse_query_model(qm_text([qm_device("press-1", [qm_query("Press.Force", 100)])]))
        dq = doc.device_queries[0]
        assert dq.device.name == "press-1"
        assert dq.queries[0].interval_millis == 100
        assert effective_destination(dq.queries[0]) == "ns=2;s=Press.Force"

    def test_round_trip_through_json(self):
        text = qm_text([qm_device("a", [qm_query("X", 10, destination="t/x")]),
                        qm_device("b", [qm_query("Y", 20, depth=2)], "pubSub")])
        doc = parse_query_model(text)
        assert parse_query_model(doc.dumps()) == doc

    def test_interval_zero_rejected(self):
        with pytest.raises(InvalidValue) as info:
            parse_query_model(qm_text([qm_device("a", [qm_query("X", 0)])]))
        assert info.value.path == "intervalMillis"

    def test_duplicate_device_rejected(self):
        text = qm_text([qm_device("a", [qm_query("X")]), qm_device("a", [qm_query("Y")])])
        with pytest.raises(InvalidValue, match="duplicate device name"):
            parse_query_model(text)

    def test_retention_below_interval(self):
        with pytest.raises(InvalidValue):
            parse_query_model(qm_text([qm_device("a", [qm_query("X", 1000, retention=999)])]))

    def test_unknown_key(self):
        bad = qm_query("X")
        bad["samplingRate"] = 5
        with pytest.raises(InvalidValue, match="unknown keys"):
            parse_query_model(qm_text([qm_device("a", [bad])]))

    def test_missing_field(self):
        bad = qm_query("X")
        del bad["depth"]
        with pytest.raises(MissingField):
            parse_query_model(qm_text([qm_device("a", [bad])]))

    def test_not_json(self):
        with pytest.raises(MalformedDocument):
            parse_query_model("{not json")

    def test_duplicate_query_for_same_destination(self):
        with pytest.raises(InvalidValue):
            parse_query_model(qm_text([qm_device("a", [qm_query("X"), qm_query("X", 50)])]))

    def test_same_node_two_destinations_allowed(self):
        doc = parse_query_model(qm_text([qm_device(
            "a", [qm_query("X", destination="fast"), qm_query("X", destination="slow")])]))
        assert len(doc.device_queries[0].queries) == 2


class TestExpandDepth:
    def test_depth_zero_on_variable(self):
        assert expand_depth(query("Press.Force"), press_space()) == [NodeRef(2, "Press.Force")]

    def test_depth_zero_on_object_is_empty(self):
        assert expand_depth(query("Press"), press_space()) == []

    def test_depth_one_sorted_by_browse_name(self):
        refs = expand_depth(query("Press", depth=1), press_space())
        assert [r.id for r in refs] == ["Press.Count", "Press.Force", "Press.Stroke"]

    def test_depth_two_reaches_motor(self):
        refs = expand_depth(query("Press", depth=2), press_space())
        assert len(refs) == 5

    def test_unresolvable(self):
        with pytest.raises(UnresolvableNode):
            expand_depth(query("Nope"), press_space())

    @settings(max_examples=50)
    @given(st.integers(0, 4))
    def test_matches_bfs_oracle(self, depth):
        space = press_space()
        for node in space.nodes():
            q = query(node.node_ref.id, depth=depth, ns=node.node_ref.ns)
            got = [r.canonical for r in expand_depth(q, space)]
            assert len(got) == len(set(got))
            assert set(got) == oracle_expand(space, node.node_ref, depth)


class TestStateSpace:
    def test_union_per_device(self):
        spaces = {"a": flat_space("A", 1), "b": flat_space("B", 2), "c": flat_space("C", 3)}
        text = qm_text([qm_device(n, [qm_query(n.upper(), depth=1)]) for n in "abc"])
        est = estimate_state_space(parse_query_model(text), spaces)
        assert est.per_device == {"a": 1, "b": 2, "c": 3}
        assert est.total == 6

    def test_browse_path_and_node_id_count_once(self):
        space = press_space()
        bp = {"nodeRef": {"ns": 2, "id": "Objects/Press/Force", "kind": "browsePath"},
              "intervalMillis": 100, "depth": 0, "retentionMillis": 1000, "destination": "bp"}
        text = qm_text([qm_device("p", [qm_query("Press.Force", 100), bp])])
        est = estimate_state_space(parse_query_model(text), {"p": space})
        assert est.total == 1

    def test_missing_address_space(self):
        text = qm_text([qm_device("p", [qm_query("Press.Force")])])
        with pytest.raises(UnresolvableNode):
            estimate_state_space(parse_query_model(text), {})


def oracle_human(n: int) -> str:
    for label, exp in (("GB", 30), ("MB", 20), ("KB", 10)):
        if n >= 2**exp:
            return f"{(Decimal(n) / Decimal(2**exp)).quantize(Decimal('0.01'), ROUND_HALF_UP)} {label}"
    return f"{n} B"


class TestVolume:
    # published figures for 1 KiB samples at 1 Hz
    @pytest.mark.parametrize("horizon,expected", [
        ("day", "84.38 MB"), ("month", "2.47 GB"), ("year", "30.08 GB")])
    def test_published_figures(self, horizon, expected):
        assert estimate_volume(1024, 1, horizon).human == expected

    # [DERIVED] bytes = sampleBytes * rate * seconds
    def test_bytes_exact(self):
        assert estimate_volume(1024, 1, "day").bytes == 1024 * 86_400
        assert estimate_volume(100, 10, "year").bytes == 100 * 10 * 365 * 86_400

    @given(st.integers(0, 2**50))
    def test_human_bytes_matches_decimal_oracle(self, n):
        # the two only disagree on exact half-way cases, which binary floats hit rarely
        got, want = human_bytes(n), oracle_human(n)
        if got != want:
            value, unit = want.split()
            assert unit == got.split()[1]
            assert abs(float(got.split()[0]) - float(value)) <= 0.01 + 1e-9

    def test_bad_inputs(self):
        with pytest.raises(InvalidValue):
            estimate_volume(0, 1, "day")
        with pytest.raises(InvalidValue):
            estimate_volume(1, 0, "day")
        with pytest.raises(InvalidValue):
            estimate_volume(1, 1, "week")


def test_address_space_json_round_trip():
    space = AddressSpace(obj("Objects", [var("X", unit="bar")], ns=0))
    again = AddressSpace.from_json(json.loads(json.dumps(space.root.to_json())))
    assert again.root == space.root


class TestDestination:
    def test_explicit(self):
        assert effective_destination(query("Motor.Temp", destination="plant/temps")) == "plant/temps"

    def test_node_id_default(self):
        assert effective_destination(query("Motor.Temp")) == "ns=2;s=Motor.Temp"

    def test_browse_path_default(self):
        q = query("x")
        q = type(q)(NodeRef(0, "Objects/Pump/Flow", RefKind.BROWSE_PATH), 100, 0, 1000, None)
        assert effective_destination(q) == "ns=0;bp=Objects/Pump/Flow"


class TestMoreExpansion:
    def nested(self, reverse=False):
        leaves = [var(f"Cell.Inner.{n}") for n in ("C", "A", "B")]
        if reverse:
            leaves.reverse()
        return AddressSpace(obj("Cell", [obj("Cell.Inner", leaves)]))

    def test_object_under_object(self):
        space = self.nested()
        assert expand_depth(query("Cell", depth=1), space) == []
        refs = expand_depth(query("Cell", depth=2), space)
        assert [r.id for r in refs] == ["Cell.Inner.A", "Cell.Inner.B", "Cell.Inner.C"]
        assert {r.canonical for r in refs} == oracle_expand(space, NodeRef(2, "Cell"), 2)

    def test_child_order_irrelevant(self):
        assert expand_depth(query("Cell", depth=2), self.nested()) == \
               expand_depth(query("Cell", depth=2), self.nested(reverse=True))

    def test_two_devices_two_points(self):
        spaces = {"a": flat_space("A", 2), "b": flat_space("B", 2)}
        text = qm_text([qm_device(n, [qm_query(n.upper(), depth=1)]) for n in "ab"])
        est = estimate_state_space(parse_query_model(text), spaces)
        assert list(est.per_device.values()) == [2, 2] and est.total == 4


class TestVolumeLinearity:
    def test_one_byte_day(self):
        assert estimate_volume(1, 1, "day").bytes == 86_400

    @given(st.integers(1, 10_000), st.integers(1, 50), st.integers(1, 1000),
           st.sampled_from(["day", "month", "year"]))
    def test_linear_in_bytes_and_rate(self, b, k, rate, horizon):
        base = estimate_volume(b, rate, horizon).bytes
        assert estimate_volume(k * b, rate, horizon).bytes == k * base
        assert estimate_volume(b, k * rate, horizon).bytes == k * base
