import pytest

from infoengine.bench import BenchConfig, run_bench
from infoengine.errors import InvalidValue


class TestScenarios:
    def test_direct_m_times_k(self):
        report = run_bench(BenchConfig(1, 3, 5, "A"))
        assert report.per_source_reads == 15
        assert report.total_network_messages == 15

    def test_buffered_k(self):
        report = run_bench(BenchConfig(1, 3, 5, "B"))
        assert report.per_source_reads == 5
        assert report.buffer_side_messages == 15
        assert report.historic_source_reads == 0

    @pytest.mark.parametrize("n,m,k", [(2, 4, 10), (3, 1, 7), (1, 8, 20)])
    def test_closed_forms(self, n, m, k):
        a = run_bench(BenchConfig(n, m, k, "A"))
        b = run_bench(BenchConfig(n, m, k, "B"))
        assert (a.per_source_reads, a.total_network_messages) == (m * k, n * m * k)
        assert (b.per_source_reads, b.source_side_messages, b.buffer_side_messages) == (k, n * k, n * m * k)
        assert a.per_source_reads == m * b.per_source_reads

    def test_buffered_load_independent_of_sinks(self):
        reads = {run_bench(BenchConfig(2, m, 10, "B")).per_source_reads for m in (1, 2, 5, 9)}
        assert reads == {10}

    def test_report_json(self):
        out = run_bench(BenchConfig(2, 4, 10, "A")).to_json()
        assert out["totalNetworkMessages"] == 80
        assert set(out) == {"scenario", "n", "m", "k", "perSourceReads", "sourceSideMessages",
                            "bufferSideMessages", "totalNetworkMessages", "historicSourceReads"}

    @pytest.mark.parametrize("args", [(0, 1, 1, "A"), (1, 0, 1, "A"), (1, 1, 0, "B"), (1, 1, 1, "C")])
    def test_invalid_config(self, args):
        with pytest.raises(InvalidValue):
            BenchConfig(*args)
