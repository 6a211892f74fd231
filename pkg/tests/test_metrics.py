import json
import os
import threading

import httpx
import pytest

from floatfl.metrics import (
    CampaignRunner,
    HubMonitor,
    LogEvent,
    MetricsHub,
    serve_metrics,
)
from floatfl.server import InProcessBackend, RoundReport
from floatfl.sim import DatasetSpec, default_task, partition_iid, synthesize
from floatfl.client import ClientCore, DeviceProfile
from floatfl.datafiles import save_examples
from floatfl.protocol import CampaignConfig
from floatfl.seeding import derive_seed

DATASET = DatasetSpec(num_classes=3, feature_dim=5, val_per_class=10)


def make_report(round_no, acc=0.5, committed=True):
    return RoundReport(
        round=round_no,
        fitted_clients=["a", "b"],
        failed_clients=[],
        eval_loss=1.0 - acc / 2,
        eval_accuracy=acc,
        eval_mode_used="server",
        wall_time_ms=12,
        committed=committed,
    )


def make_config(tmp_path, n=3, rounds=3, **overrides):
    pool, validation = synthesize(DATASET, 1, train_per_class=n * 6)
    path = tmp_path / "validation.json"
    save_examples(path, validation)
    kw = dict(
        rounds=rounds,
        task=default_task(DATASET, 6),
        num_clients=n,
        min_fit_clients=n,
        seed=3,
        eval_mode="server",
        validation_path=str(path),
        round_timeout_ms=2000,
    )
    kw.update(overrides)
    return CampaignConfig(**kw), pool


def make_backend(pool, n):
    stores = partition_iid(pool, n, 6, seed=2)
    clients = [
        ClientCore(f"client-{i}", store, DeviceProfile(), seed=derive_seed(2, i))
        for i, store in enumerate(stores)
    ]
    return InProcessBackend(clients)


@pytest.fixture
def service(tmp_path):
    hub = MetricsHub(str(tmp_path / "state"))
    started = []

    config_holder = {}
    runner_holder = {}

    def starter(campaign_id):
        started.append(campaign_id)
        runner = runner_holder.get("runner")
        if runner is not None:
            runner.submit(campaign_id)

    httpd = serve_metrics(hub, ("127.0.0.1", 0), starter=starter)
    base = "http://%s:%d" % httpd.server_address[:2]
    yield hub, base, started, runner_holder
    httpd.shutdown()
    hub.close()


# ---------------------------------------------------------------------------
# persistence


def test_rounds_jsonl_has_one_line_per_round(tmp_path):
    hub = MetricsHub(str(tmp_path))
    config, _ = make_config(tmp_path)
    cid = hub.create_campaign(config)
    for r in range(1, 6):
        hub.append_round(cid, make_report(r))
    hub.set_status(cid, {"status": "Exhausted", "current_round": 5})
    lines = open(os.path.join(tmp_path, cid, "rounds.jsonl")).read().strip().splitlines()
    assert len(lines) == 5
    parsed = [RoundReport.from_dict(json.loads(line)) for line in lines]
    assert [p.round for p in parsed] == [1, 2, 3, 4, 5]


def test_events_jsonl_parses_as_log_events(tmp_path):
    hub = MetricsHub(str(tmp_path))
    config, _ = make_config(tmp_path)
    cid = hub.create_campaign(config)
    monitor = HubMonitor(hub, cid)
    monitor.event("INFO", "round 1 starting", 1)
    monitor.event("ERROR", "client c3 failed", 1)
    hub.append_round(cid, make_report(1))
    hub.set_status(cid, {"status": "Exhausted", "current_round": 1})
    lines = open(os.path.join(tmp_path, cid, "events.jsonl")).read().strip().splitlines()
    events = [LogEvent.from_dict(json.loads(line)) for line in lines]
    assert [e.level for e in events] == ["INFO", "ERROR"]


def test_config_json_is_task_body(tmp_path):
    hub = MetricsHub(str(tmp_path))
    config, _ = make_config(tmp_path)
    cid = hub.create_campaign(config)
    stored = json.load(open(os.path.join(tmp_path, cid, "config.json")))
    assert stored == config.task.to_dict()
    hub.close()


def test_replaying_rounds_jsonl_matches_api(tmp_path, service):
    hub, base, _, _ = service
    config, _ = make_config(tmp_path)
    cid = hub.create_campaign(config)
    for r in range(1, 4):
        hub.append_round(cid, make_report(r, acc=0.1 * r))
    hub.set_status(cid, {"status": "Exhausted", "current_round": 3})

    api_rounds = httpx.get(f"{base}/campaigns/{cid}/rounds").json()
    path = os.path.join(hub.base_dir, cid, "rounds.jsonl")
    replayed = [json.loads(line) for line in open(path).read().strip().splitlines()]
    assert api_rounds == replayed
    assert [r["eval_accuracy"] for r in replayed] == [0.1, 0.2, 0.30000000000000004]


# ---------------------------------------------------------------------------
# HTTP endpoints


def test_campaign_lifecycle_over_http(tmp_path, service):
    hub, base, started, runner_holder = service
    config, pool = make_config(tmp_path, rounds=2)
    backend = make_backend(pool, 3)
    runner = CampaignRunner(backend, hub)
    runner.start()
    runner_holder["runner"] = runner

    resp = httpx.post(f"{base}/campaigns", json=config.to_dict())
    assert resp.status_code == 201
    cid = resp.json()["id"]
    assert started == [cid]

    hub.record(cid).done.wait(timeout=20)
    summaries = httpx.get(f"{base}/campaigns").json()
    me = next(s for s in summaries if s["campaign_id"] == cid)
    assert me["status"] == "Exhausted"
    assert me["current_round"] == 2 and me["rounds_total"] == 2
    assert me["latest_accuracy"] is not None

    rounds = httpx.get(f"{base}/campaigns/{cid}/rounds").json()
    assert [r["round"] for r in rounds] == [1, 2]

    events = httpx.get(f"{base}/campaigns/{cid}/events").json()
    assert any("committed" in e["message"] for e in events)
    info_only = httpx.get(f"{base}/campaigns/{cid}/events", params={"level": "INFO"}).json()
    assert all(e["level"] == "INFO" for e in info_only)

    fetched = httpx.get(f"{base}/campaigns/{cid}/config").json()
    assert fetched == config.to_dict()
    runner.stop()


def test_post_invalid_config_returns_violations(tmp_path, service):
    _, base, _, _ = service
    config, _ = make_config(tmp_path)
    raw = config.to_dict()
    raw["min_fit_clients"] = raw["num_clients"] + 5
    resp = httpx.post(f"{base}/campaigns", json=raw)
    assert resp.status_code == 400
    assert any("min_fit_clients" in v for v in resp.json()["violations"])


def test_post_garbage_config_400(service):
    _, base, _, _ = service
    resp = httpx.post(f"{base}/campaigns", content=b"{not json")
    assert resp.status_code == 400


def test_unknown_campaign_404(service):
    _, base, _, _ = service
    for what in ("rounds", "events", "config"):
        resp = httpx.get(f"{base}/campaigns/ghost/{what}")
        assert resp.status_code == 404
        assert "error" in resp.json()
    assert httpx.post(f"{base}/campaigns/ghost/abort").status_code == 404


def test_abort_idempotent_and_noop_when_finished(tmp_path, service):
    hub, base, _, _ = service
    config, _ = make_config(tmp_path)
    cid = hub.create_campaign(config)
    hub.set_status(cid, {"status": "Exhausted", "current_round": 0})
    first = httpx.post(f"{base}/campaigns/{cid}/abort").json()
    second = httpx.post(f"{base}/campaigns/{cid}/abort").json()
    assert first["status"] == "Exhausted" == second["status"]
    assert not hub.record(cid).abort_event.is_set()


def test_abort_running_campaign_sets_event(tmp_path, service):
    hub, base, _, _ = service
    config, _ = make_config(tmp_path)
    cid = hub.create_campaign(config)
    resp = httpx.post(f"{base}/campaigns/{cid}/abort")
    assert resp.status_code == 200
    assert hub.record(cid).abort_event.is_set()
    again = httpx.post(f"{base}/campaigns/{cid}/abort")
    assert again.status_code == 200  # idempotent


# ---------------------------------------------------------------------------
# stream


def read_stream(base, cid, out, ready=None):
    with httpx.stream("GET", f"{base}/campaigns/{cid}/stream", timeout=30) as resp:
        if ready is not None:
            ready.set()
        for line in resp.iter_lines():
            if line.startswith("data: "):
                out.append(json.loads(line[6:]))


def test_stream_delivers_every_round_exactly_once(tmp_path, service):
    hub, base, _, _ = service
    config, pool = make_config(tmp_path, rounds=4)
    cid = hub.create_campaign(config)

    got: list[dict] = []
    ready = threading.Event()
    reader = threading.Thread(target=read_stream, args=(base, cid, got, ready), daemon=True)
    reader.start()
    assert ready.wait(timeout=5)

    runner = CampaignRunner(make_backend(pool, 3), hub)
    runner.start()
    runner.submit(cid)
    hub.record(cid).done.wait(timeout=20)
    reader.join(timeout=10)
    assert not reader.is_alive()

    rounds = [obj["round"]["round"] for obj in got if obj["kind"] == "round"]
    assert rounds == [1, 2, 3, 4]
    statuses = [obj["summary"]["status"] for obj in got if obj["kind"] == "status"]
    assert statuses[-1] == "Exhausted"
    runner.stop()


def test_stream_replays_backlog_for_completed_campaign(tmp_path, service):
    hub, base, _, _ = service
    config, _ = make_config(tmp_path, rounds=3)
    cid = hub.create_campaign(config)
    for r in range(1, 4):
        hub.append_round(cid, make_report(r))
    hub.set_status(cid, {"status": "Exhausted", "current_round": 3})

    got: list[dict] = []
    read_stream(base, cid, got)  # returns when the server closes the stream
    rounds = [obj["round"]["round"] for obj in got if obj["kind"] == "round"]
    assert rounds == [1, 2, 3]


def test_post_with_pretrained_path_resolves_weights(tmp_path, service):
    import numpy as np
    from floatfl.model import init_parameters, save_weights

    hub, base, _, _ = service
    config, _ = make_config(tmp_path)
    pretrained = init_parameters(config.task.model, 55)
    weights_path = tmp_path / "weights.bin"
    save_weights(weights_path, pretrained.values)
    raw = config.to_dict()
    raw["pretrained_path"] = str(weights_path)
    resp = httpx.post(f"{base}/campaigns", json=raw)
    assert resp.status_code == 201
    record = hub.record(resp.json()["id"])
    assert np.array_equal(record.config.task.initial_params.values, pretrained.values)

    raw["pretrained_path"] = str(tmp_path / "missing.bin")
    resp = httpx.post(f"{base}/campaigns", json=raw)
    assert resp.status_code == 400
