import json

import pytest
from fastapi.testclient import TestClient
from pydantic import ValidationError

from dnslab import cli
from dnslab.service import app
from dnslab.tasks import TASKS, ExperimentConfig, TaskError, dumps, run

SMALL = {"grid_sizes": [0.125], "samples": 3}


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_config_defaults_and_validation():
    cfg = ExperimentConfig(task="assemble")
    assert cfg.grid_sizes == [1 / 16] and cfg.tol("adjoint") == 1e-10
    with pytest.raises(ValidationError):
        ExperimentConfig(task="assemble", grid_sizes=[])
    with pytest.raises(ValidationError):
        ExperimentConfig(task="assemble", grid_sizes=[-0.1])
    with pytest.raises(ValidationError):
        ExperimentConfig(task="assemble", tolerances={"adjoint": 0})
    with pytest.raises(ValidationError):
        ExperimentConfig(task="teleport")


@pytest.mark.parametrize("task, extra", [
    ("verify-identities", {"max_s": 4}),
    ("symbol-check", {"max_s": 3, "samples": 5}),
    ("assemble", {"s": 2}),
    ("adjoint-check", {"s": 1}),
    ("hodge", {"s": 1}),
    ("neumann", {"s": 1}),
])
def test_run_small(task, extra):
    report = run({"task": task, **SMALL, **extra})
    assert report["task"] == task and report["passed"]
    assert report["criteria"] and all({"name", "passed", "value", "threshold"} <= set(c) for c in report["criteria"])
    json.dumps(report)


def test_report_is_deterministic():
    cfg = {"task": "adjoint-check", **SMALL}
    assert dumps(run(cfg)) == dumps(run(cfg))


def test_zero_field_hodge():
    rep = run({"task": "hodge", "field": "zero", **SMALL})
    g = rep["measurements"]["grids"][0]
    assert g["norm_f1"] == g["norm_f2"] == g["norm_h"] == 0


def test_task_errors_are_wrapped():
    with pytest.raises(TaskError):
        run({"task": "hodge", "q": 0, **SMALL})


def test_outputs_written(tmp_path):
    out, dump, table = tmp_path / "r.json", tmp_path / "ops", tmp_path / "t.csv"
    run({"task": "assemble", "s": 1, **SMALL, "out": str(out), "dump_ops": str(dump)})
    assert json.loads(out.read_text())["task"] == "assemble"
    names = {p.name for p in dump.iterdir()}
    assert "nodes_h0.125.bin" in names and "dbar_q0_h0.125.mtx" in names
    run({"task": "neumann", "grid_sizes": [0.2, 0.125], "samples": 2, "csv": str(table)})
    assert table.read_text().splitlines()[0] == "h,max_ratio"


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["adjoint-check", "--h", "0.125", "--quiet"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert cli.main(["adjoint-check", "--h", "0.125", "--tol", "adjoint=1e-30", "--quiet"]) == 1
    assert "FAIL" in capsys.readouterr().out
    assert cli.main(["hodge", "--h", "0.125", "--q", "0"]) == 2
    assert cli.main(["assemble", "--h", "-1"]) == 2


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"task": "neumann", "s": 0, "samples": 2, "grid_sizes": [0.125]}))
    out = tmp_path / "rep.json"
    args = cli.build_parser().parse_args(["hodge", "--config", str(cfg), "--out", str(out)])
    c = cli.make_config(args)
    assert c.task == "hodge" and c.s == 0 and c.samples == 2
    assert cli.main(["hodge", "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["config"]["s"] == 0


def test_service_endpoints(client):
    assert client.get("/health").json()["status"] == "ok"
    assert client.get("/tasks").json() == list(TASKS)
    r = client.post("/run", json={"task": "adjoint-check", **SMALL})
    assert r.status_code == 200 and r.json()["passed"]
    assert client.post("/run", json={"task": "hodge", "q": 0, **SMALL}).status_code == 422
    assert client.post("/run", json={"task": "nope"}).status_code == 422


def test_service_ignores_file_outputs(client, tmp_path):
    target = tmp_path / "x.json"
    r = client.post("/run", json={"task": "adjoint-check", **SMALL, "out": str(target)})
    assert r.status_code == 200 and not target.exists()


def test_cli_remote(monkeypatch, client, tmp_path, capsys):
    import httpx

    def fake_post(url, json=None, timeout=None):
        assert url == "http://svc/run"
        return client.post("/run", json=json)

    monkeypatch.setattr(httpx, "post", fake_post)
    out = tmp_path / "remote.json"
    code = cli.main(["adjoint-check", "--h", "0.125", "--server", "http://svc/", "--out", str(out)])
    assert code == 0 and json.loads(out.read_text())["task"] == "adjoint-check"
    assert cli.main(["hodge", "--h", "0.125", "--q", "0", "--server", "http://svc"]) == 2
