import pytest

from helpers import device_query, flat_space, press_space, query
from infoengine.buffer import Buffer
from infoengine.clock import VirtualClock
from infoengine.codec import decode_envelope
from infoengine.errors import SourceUnavailable
from infoengine.ingress import IngestConfig, MetadataMode, fetch_once, run_scheduler
from infoengine.nodes import NodeRef
from infoengine.registry import Registry
from infoengine.source import Ramp, SimDevice, SourcePool


def setup(queries, space=None, name="dev", signals=None):
    clock = VirtualClock(0)
    reg = Registry(clock=clock)
    space = space or flat_space("D", 3)
    device = SimDevice(name, space, signals=signals or {})
    reg.register_device(device_query(name, queries), space)
    return reg, Buffer(), SourcePool([device]), IngestConfig(clock=clock), device


class FlakyDevice(SimDevice):
    def read(self, refs, at):
        if at in (200, 500):
            raise ConnectionError("link down")
        return super().read(refs, at)


class TestScheduler:
    def test_tick_count_inclusive(self):
        reg, buf, pool, cfg, dev = setup([query("D.V0", 100, destination="t")])
        report = run_scheduler(reg, buf, pool, cfg, until=1000)
        assert report.appended == {"t": 11}
        assert buf.topic("t").timestamps() == list(range(0, 1001, 100))
        assert dev.read_count == 11

    def test_consecutive_runs_do_not_repeat(self):
        reg, buf, pool, cfg, _ = setup([query("D.V0", 100, destination="t")])
        run_scheduler(reg, buf, pool, cfg, until=400)
        run_scheduler(reg, buf, pool, cfg, until=700, since=400)
        ts = [decode_envelope(r.payload).source_ts for r in buf.read("t")]
        assert ts == list(range(0, 701, 100))

    def test_two_intervals(self):
        reg, buf, pool, cfg, dev = setup([query("D.V0", 200, destination="a"),
                                          query("D.V1", 300, destination="b")])
        report = run_scheduler(reg, buf, pool, cfg, until=900)
        assert report.appended == {"a": 5, "b": 4}
        # ticks 0 and 600 are shared by both entries and cost one read each
        assert dev.read_count == 7

    def test_depth_entries_batched_per_device(self):
        reg, buf, pool, cfg, dev = setup([query("Press", 100, depth=1, destination="p")],
                                         press_space(), "press")
        run_scheduler(reg, buf, pool, cfg, until=500)
        assert dev.read_count == 6
        assert len(buf.topics()) == 3

    def test_suspension_mid_run(self):
        reg, buf, pool, cfg, _ = setup([query("D.V0", 100, destination="t")])

        def on_tick(t):
            if t == 300:
                reg.suspend_device("dev-1")
            if t == 700:
                reg.resume_device("dev-1")

        run_scheduler(reg, buf, pool, cfg, until=1000, on_tick=on_tick)
        ts = [decode_envelope(r.payload).source_ts for r in buf.read("t")]
        assert ts == [0, 100, 200, 700, 800, 900, 1000]

    def test_failures_recorded_not_fatal(self):
        clock = VirtualClock(0)
        reg = Registry(clock=clock)
        space = flat_space("D", 1)
        dev = FlakyDevice("dev", space)
        reg.register_device(device_query("dev", [query("D.V0", 100, destination="t")]), space)
        buf = Buffer()
        report = run_scheduler(reg, buf, SourcePool([dev]), IngestConfig(clock=clock), until=1000)
        assert report.appended == {"t": 9}
        assert [e.at for e in report.errors] == [200, 500]
        assert "SourceUnavailable" in report.errors[0].message

    def test_missing_adapter_recorded(self):
        reg, buf, _, cfg, _ = setup([query("D.V0", 100, destination="t")])
        report = run_scheduler(reg, buf, SourcePool(), cfg, until=200)
        assert len(report.errors) == 3
        assert buf.read("t") == []

    def test_clock_advanced(self):
        reg, buf, pool, cfg, _ = setup([query("D.V0", 100, destination="t")])
        run_scheduler(reg, buf, pool, cfg, until=350)
        assert cfg.clock.now() == 300


class TestEnvelopes:
    def test_inline_and_reference(self):
        space = flat_space("D", 1)
        ref = NodeRef(2, "D.V0")
        reg, buf, pool, cfg, dev = setup([query("D.V0", 100, destination="t")], space,
                                         signals={ref.canonical: Ramp(1.0)})
        entry = reg.active_schedule()[0]
        inline = fetch_once(dev, entry, 2000, cfg, reg)[0]
        assert inline.meta == reg.get_metadata(entry.metadata_key).to_json()
        assert inline.value == pytest.approx(2.0)
        ref_cfg = IngestConfig(metadata_mode=MetadataMode.REFERENCE, clock=cfg.clock)
        by_ref = fetch_once(dev, entry, 2000, ref_cfg, reg)[0]
        assert by_ref.meta is None and by_ref.meta_key == "dev-1:ns=2;s=D.V0"

    def test_seq_equals_offset(self):
        reg, buf, pool, cfg, _ = setup([query("D.V0", 100, destination="t")])
        run_scheduler(reg, buf, pool, cfg, until=500)
        assert all(decode_envelope(r.payload).seq == r.offset for r in buf.read("t"))

    def test_adapter_exception_wrapped(self):
        space = flat_space("D", 1)
        reg, _, _, cfg, _ = setup([query("D.V0", 100)], space)
        with pytest.raises(SourceUnavailable):
            fetch_once(FlakyDevice("dev", space), reg.active_schedule()[0], 200, cfg, reg)


def test_intervals_100_and_200_over_400():
    reg, buf, pool, cfg, _ = setup([query("D.V0", 100, destination="a"),
                                    query("D.V1", 200, destination="b")])
    report = run_scheduler(reg, buf, pool, cfg, until=400)
    assert report.appended == {"a": 5, "b": 3}


def test_two_runs_byte_identical():
    def run():
        space = flat_space("D", 2)
        reg, buf, pool, cfg, _ = setup([query("D", 100, depth=1, destination="d")], space)
        run_scheduler(reg, buf, pool, cfg, until=2000)
        return {t: [r.payload for r in buf.read(t)] for t in buf.topics()}

    assert run() == run()
