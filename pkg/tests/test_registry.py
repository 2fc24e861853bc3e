import pytest

from helpers import device_query, flat_space, press_space, query
from infoengine.clock import VirtualClock
from infoengine.errors import DuplicateDevice, UnknownDevice, UnknownMetadataKey, UnresolvableNode
from infoengine.nodes import NodeRef
from infoengine.registry import DeviceStatus, MetadataEntry, Registry, node_topic


class TestRegistration:
    def test_ids_and_schedule(self):
        reg = Registry(clock=VirtualClock(500))
        rec = reg.register_device(device_query("press-1", [query("Press", depth=1, destination="press")]),
                                  press_space())
        assert rec.device_id == "dev-1"
        assert rec.registered_at == 500
        assert [e.topic for e in rec.schedule] == [
            "press/ns=2;s=Press.Count", "press/ns=2;s=Press.Force", "press/ns=2;s=Press.Stroke"]
        assert all(e.activated_at == 500 for e in rec.schedule)
        rec2 = reg.register_device(device_query("oven", [query("O.V0", destination="oven")]),
                                   flat_space("O", 1))
        assert rec2.device_id == "dev-2"

    def test_depth_zero_uses_destination(self):
        assert node_topic(query("X", destination="x"), NodeRef(2, "X")) == "x"
        assert node_topic(query("X"), NodeRef(2, "X")) == "ns=2;s=X"

    def test_duplicate_name(self):
        reg = Registry()
        dq = device_query("p", [query("Press.Force")])
        reg.register_device(dq, press_space())
        with pytest.raises(DuplicateDevice):
            reg.register_device(dq, press_space())

    def test_unresolvable_names_device(self):
        with pytest.raises(UnresolvableNode) as info:
            Registry().register_device(device_query("p", [query("Nope")]), press_space())
        assert "p" in str(info.value)

    def test_metadata_from_address_space(self):
        reg = Registry()
        reg.register_device(device_query("p", [query("Press.Force")]), press_space())
        meta = reg.get_metadata("dev-1:ns=2;s=Press.Force")
        assert meta.display_name == "Force"
        assert meta.engineering_unit == "kN"
        assert meta.address_space_path == "Objects/Press/Force"

    def test_overlapping_queries_deduplicated(self):
        reg = Registry()
        rec = reg.register_device(device_query("p", [
            query("Press", depth=1, destination="a"), query("Press.Force", destination="b")]),
            press_space())
        assert len(rec.schedule) == 4
        assert len(reg.metadata_keys()) == 3


class TestLifecycle:
    def test_suspend_resume(self):
        reg = Registry()
        reg.register_device(device_query("p", [query("Press.Force")]), press_space())
        reg.suspend_device("dev-1")
        assert reg.get_device("dev-1").status is DeviceStatus.SUSPENDED
        assert reg.active_schedule() == []
        reg.resume_device("dev-1")
        assert len(reg.active_schedule()) == 1

    def test_unknown_device(self):
        with pytest.raises(UnknownDevice):
            Registry().suspend_device("dev-9")

    def test_topic_retention_takes_max(self):
        reg = Registry()
        reg.register_device(device_query("a", [query("A.V0", retention=1000, destination="t")]),
                            flat_space("A", 1))
        reg.register_device(device_query("b", [query("B.V0", retention=5000, destination="t")]),
                            flat_space("B", 1))
        assert reg.topic_retention() == {"t": 5000}

    def test_metadata_update_and_delete(self):
        reg = Registry()
        reg.register_device(device_query("p", [query("Press.Force")]), press_space())
        key = "dev-1:ns=2;s=Press.Force"
        old = reg.get_metadata(key)
        reg.update_metadata(key, MetadataEntry("ignored", "Pressing force", "N", old.data_type,
                                               old.address_space_path, ()))
        assert reg.get_metadata(key).metadata_key == key
        assert reg.get_metadata(key).engineering_unit == "N"
        reg.delete_metadata(key)
        with pytest.raises(UnknownMetadataKey):
            reg.get_metadata(key)


def test_snapshot_persistence(tmp_path):
    path = tmp_path / "registry.json"
    reg = Registry(path, clock=VirtualClock(0))
    reg.register_device(device_query("p", [query("Press", depth=2, destination="p")]), press_space())
    reg.register_device(device_query("o", [query("O.V0")]), flat_space("O", 1))
    reg.suspend_device("dev-2")
    again = Registry(path)
    assert again.snapshot() == reg.snapshot()
    assert again.list_devices() == reg.list_devices()
    rec = again.register_device(device_query("q", [query("Q.V0")]), flat_space("Q", 1))
    assert rec.device_id == "dev-3"


class TestScheduleExamples:
    def test_empty(self):
        assert Registry().active_schedule() == [] and Registry().list_devices() == []

    def test_single_query(self):
        reg = Registry()
        rec = reg.register_device(device_query("p", [query("Press.Force")]), press_space())
        assert len(rec.schedule) == 1 and len(reg.metadata_keys()) == 1

    def test_two_devices_five_entries(self):
        reg = Registry()
        reg.register_device(device_query("a", [query("A", depth=1)]), flat_space("A", 2))
        reg.register_device(device_query("b", [query("B", depth=1)]), flat_space("B", 3))
        entries = reg.active_schedule()
        assert len(entries) == 5
        assert {(e.interval_millis, e.retention_millis) for e in entries} == {(100, 60_000)}
        reg.register_device(device_query("c", [query("C.V0")]), flat_space("C", 1))
        assert len(reg.list_devices()) == 3
