import json
from pathlib import Path

import pytest

from infoengine.api.app import create_app
from infoengine.cli import EXIT_OK, EXIT_VALIDATION, main
from infoengine.engine import Engine

DEMO = Path(__file__).resolve().parent.parent / "demo"
FORCE = "press/ns=2;s=Press.Force"


@pytest.fixture
def app(tmp_path):
    return create_app(Engine(tmp_path / "data"))


def ie(app, *argv):
    return main([str(a) for a in argv], app=app)


class TestStateless:
    def test_estimate(self, app, capsys):
        assert ie(app, "estimate", DEMO / "single_point.qm.json") == EXIT_OK
        assert capsys.readouterr().out.splitlines()[0] == "84.38 MB/day, 2.47 GB/month, 30.08 GB/year"

    def test_estimate_state_space_line(self, app, capsys):
        ie(app, "estimate", DEMO / "plant.qm.json")
        assert "state space dimension 4" in capsys.readouterr().out

    def test_bench(self, app, capsys):
        assert ie(app, "bench", "--scenario", "A", "-n", 2, "-m", 4, "-k", 10) == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["totalNetworkMessages"] == 80 and out["perSourceReads"] == 40

    def test_malformed_register(self, app, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"version": 1, "deviceQueries": [{"device": {}}]}')
        assert ie(app, "register", bad) == EXIT_VALIDATION
        assert capsys.readouterr().err.startswith("error:")

    def test_missing_file(self, app, capsys):
        assert ie(app, "register", "/nonexistent/x.json") == EXIT_VALIDATION
        assert "cannot read" in capsys.readouterr().err

    def test_usage_error(self, app):
        assert ie(app, "bench", "--scenario", "Z", "-n", 1, "-m", 1, "-k", 1) == EXIT_VALIDATION


class TestFlow:
    def test_register_run_tail_pipeline(self, app, tmp_path, capsys):
        assert ie(app, "register", DEMO / "plant.qm.json") == EXIT_OK
        assert capsys.readouterr().out.splitlines() == [
            "dev-1\tpress-1\t3 schedule entries", "dev-2\toven-1\t1 schedule entries"]

        assert ie(app, "run", "--until", 3000) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["appended"][FORCE] == 31

        ie(app, "topics")
        names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
        assert FORCE in names and "oven/temp" in names

        ie(app, "tail", FORCE, "--from-offset", 0, "--max", 2)
        lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
        assert [e["seq"] for e in lines] == [0, 1]

        assert ie(app, "pipeline", "run", DEMO / "press_mean.pipeline.json") == EXIT_OK
        assert json.loads(capsys.readouterr().out) == {"in": 31, "out": 4}

        out = tmp_path / "traj.csv"
        assert ie(app, "trajectory", "--topics", f"{FORCE},oven/temp", "--from", 0, "--to", 1000,
                  "--grid", 250, "--out", out) == EXIT_OK
        assert out.read_text().splitlines()[0] == f"timestamp,oven/temp,{FORCE}"

    def test_state_survives_restart(self, tmp_path, capsys):
        data = tmp_path / "data"
        ie(create_app(Engine(data)), "register", DEMO / "plant.qm.json")
        ie(create_app(Engine(data)), "run", "--until", 500)
        capsys.readouterr()
        assert ie(create_app(Engine(data)), "run", "--until", 500) == EXIT_VALIDATION
        ie(create_app(Engine(data)), "run", "--until", 1000)
        assert json.loads(capsys.readouterr().out)["appended"][FORCE] == 5

    def test_suspend_unknown(self, app, capsys):
        assert ie(app, "suspend", "dev-7") == EXIT_VALIDATION
        assert "UnknownDevice" in capsys.readouterr().err
