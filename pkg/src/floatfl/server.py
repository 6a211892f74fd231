"""Campaign server: participant selection, the round state machine, both
evaluation modes, and the TCP service clients connect to.

The orchestrator is transport-agnostic: it drives either the live
TcpClientPool or the InProcessBackend used by the simulation harness. The
in-process backend advances a virtual clock instead of sleeping, so
simulated campaigns are deterministic down to reported wall times.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import socket
import sys
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregation import ClientUpdate, EvalResult, fed_avg, weighted_metrics
from .client import ClientCore, TaskRefused
from .datafiles import load_examples
from .errors import ConfigError, FloatError, ProtocolError
from .model import (
    LabeledExample,
    ParameterVector,
    forward_loss,
    init_parameters,
    load_pretrained,
)
from .protocol import (
    CampaignConfig,
    Channel,
    ClientTaskConfig,
    Message,
    ResourceCriteria,
    client_update_from_body,
    eval_result_from_body,
    params_to_b64,
)
from .seeding import (
    STREAM_INIT,
    STREAM_SELECTION,
    STREAM_TIEBREAK,
    STREAM_VALIDATION,
    derive_seed,
    rng_for,
)

log = logging.getLogger("float.server")

STATUS_WAITING = "Waiting"
STATUS_RUNNING = "Running"
STATUS_CONVERGED = "Converged"
STATUS_EXHAUSTED = "Exhausted"
STATUS_ABORTED = "Aborted"
TERMINAL_STATUSES = (STATUS_CONVERGED, STATUS_EXHAUSTED, STATUS_ABORTED)


@dataclass
class RoundReport:
    """Outcome record for one attempted round."""

    round: int
    fitted_clients: list[str]
    failed_clients: list[tuple[str, str]]
    eval_loss: float
    eval_accuracy: float
    eval_mode_used: str
    wall_time_ms: int
    committed: bool

    def to_dict(self) -> dict:
        def scrub(x: float):
            return None if math.isnan(x) else x

        return {
            "committed": self.committed,
            "eval_accuracy": scrub(self.eval_accuracy),
            "eval_loss": scrub(self.eval_loss),
            "eval_mode_used": self.eval_mode_used,
            "failed_clients": [[cid, reason] for cid, reason in self.failed_clients],
            "fitted_clients": list(self.fitted_clients),
            "round": self.round,
            "wall_time_ms": self.wall_time_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundReport":
        def unscrub(x):
            return float("nan") if x is None else float(x)

        return cls(
            round=int(d["round"]),
            fitted_clients=[str(c) for c in d["fitted_clients"]],
            failed_clients=[(str(c), str(r)) for c, r in d["failed_clients"]],
            eval_loss=unscrub(d["eval_loss"]),
            eval_accuracy=unscrub(d["eval_accuracy"]),
            eval_mode_used=str(d["eval_mode_used"]),
            wall_time_ms=int(d["wall_time_ms"]),
            committed=bool(d["committed"]),
        )


@dataclass
class CampaignState:
    config: CampaignConfig
    global_params: ParameterVector
    current_round: int = 0
    connected_pool: dict = field(default_factory=dict)
    history: list[RoundReport] = field(default_factory=list)
    status: str = STATUS_WAITING


def meets_criteria(resources: dict, criteria: ResourceCriteria) -> bool:
    return (
        resources.get("memory_mb", 0) >= criteria.min_memory_mb
        and resources.get("battery_pct", 0) >= criteria.min_battery_pct
        and (bool(resources.get("on_wifi", False)) or not criteria.require_wifi)
    )


def select_participants(
    pool: dict,
    n: int,
    criteria: ResourceCriteria,
    rng_seed: int | np.random.Generator,
) -> list[str]:
    """Resource-gated uniform sample without replacement.

    The pool is ordered canonically (lexicographic client id) before
    sampling, so the draw depends only on membership and the seed/stream.
    """
    eligible = sorted(cid for cid, res in pool.items() if meets_criteria(res, criteria))
    if not eligible:
        return []
    rng = np.random.default_rng(rng_seed) if isinstance(rng_seed, int) else rng_seed
    k = min(n, len(eligible))
    picked = rng.choice(len(eligible), size=k, replace=False)
    return sorted(eligible[i] for i in picked)


def evaluate_server(params: ParameterVector, validation_path) -> tuple[float, float]:
    """Loss/accuracy of params over the entire server-held validation file."""
    return forward_loss(params, load_examples(validation_path))


class CampaignMonitor:
    """No-op monitoring hooks; the metrics hub provides a live implementation."""

    def event(self, level: str, message: str, round_no: int | None = None) -> None:
        pass

    def round_complete(self, report: RoundReport) -> None:
        pass

    def status_change(self, summary: dict) -> None:
        pass


# ---------------------------------------------------------------------------
# client backends


class InProcessBackend:
    """Drives ClientCore instances directly with a virtual clock.

    fail_round clients silently produce nothing, charging the round the
    full timeout; otherwise a round costs the max compute delay among the
    clients instructed in parallel.
    """

    def __init__(self, clients: list[ClientCore]):
        self.clients = {c.client_id: c for c in clients}
        self._virtual_ms = 0
        self.campaign_id = ""

    def bind_campaign(self, campaign_id: str, task: ClientTaskConfig) -> None:
        self.campaign_id = campaign_id
        for cid in list(self.clients):
            try:
                self.clients[cid].receive_task(task)
            except TaskRefused as refusal:
                log.warning("client %s refused task: %s", cid, refusal.reason)
                del self.clients[cid]

    def pool_snapshot(self) -> dict:
        return {cid: core.resource_body() for cid, core in self.clients.items()}

    def wait_for_clients(self, count: int, criteria: ResourceCriteria, timeout_s=None) -> bool:
        eligible = [
            cid for cid, res in self.pool_snapshot().items() if meets_criteria(res, criteria)
        ]
        return len(eligible) >= count

    def clock_ms(self) -> int:
        return self._virtual_ms

    def fit(self, round_no: int, cids: list[str], params: ParameterVector, timeout_ms: int):
        updates, failures = [], []
        timed_out = False
        busy_ms = 0
        for cid in cids:
            core = self.clients.get(cid)
            if core is None:
                failures.append((cid, "disconnect"))
                continue
            outcome = core.fit(round_no, params.values.copy())
            if outcome is None:
                timed_out = True
                failures.append((cid, "timeout"))
                continue
            busy_ms = max(busy_ms, core.profile.compute_delay_ms)
            if isinstance(outcome, str):
                failures.append((cid, outcome))
            else:
                updates.append(outcome)
        self._virtual_ms += timeout_ms if timed_out else busy_ms
        return updates, failures

    def evaluate(self, round_no: int, cids: list[str], params: ParameterVector, timeout_ms: int):
        results, failures = [], []
        for cid in cids:
            core = self.clients.get(cid)
            if core is None:
                failures.append((cid, "disconnect"))
                continue
            outcome = core.evaluate(round_no, params.values.copy())
            if isinstance(outcome, str):
                failures.append((cid, outcome))
            else:
                results.append(outcome)
        return results, failures


class _Collector:
    """Per-round barrier where connection handlers deposit replies."""

    def __init__(self, round_no: int, expected: set[str]):
        self.round_no = round_no
        self.expected = expected
        self.results: dict[str, object] = {}
        self.cond = threading.Condition()

    def deposit(self, cid: str, item) -> None:
        with self.cond:
            if cid in self.expected and cid not in self.results:
                self.results[cid] = item
                self.cond.notify_all()

    def await_all(self, timeout_s: float) -> dict:
        deadline = time.monotonic() + timeout_s
        with self.cond:
            while len(self.results) < len(self.expected):
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                self.cond.wait(remaining)
            return dict(self.results)


class _Failure:
    def __init__(self, reason: str):
        self.reason = reason


class _Connection:
    def __init__(self, client_id: str, channel: Channel):
        self.client_id = client_id
        self.channel = channel
        self.send_lock = threading.Lock()
        self.resources = {"memory_mb": 0, "battery_pct": 0, "on_wifi": False}
        self.configured_for = ""

    def send(self, msg: Message) -> None:
        with self.send_lock:
            self.channel.send(msg)


class TcpClientPool:
    """Listens for client connections and brokers instructions/replies."""

    def __init__(self, listen_addr: tuple[str, int] = ("127.0.0.1", 0)):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(listen_addr)
        self._sock.listen(64)
        self._lock = threading.RLock()
        self._conns: dict[str, _Connection] = {}
        self._collector: _Collector | None = None
        self._campaign_id = ""
        self._task: ClientTaskConfig | None = None
        self._pool_changed = threading.Condition(self._lock)
        self._closing = False
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._sock.getsockname()[:2]
        return host, port

    # -- campaign wiring ---------------------------------------------------

    def bind_campaign(self, campaign_id: str, task: ClientTaskConfig) -> None:
        with self._lock:
            self._campaign_id = campaign_id
            self._task = task
            conns = list(self._conns.values())
        for conn in conns:
            self._send_task(conn)

    def _send_task(self, conn: _Connection) -> None:
        with self._lock:
            task, campaign = self._task, self._campaign_id
        if task is None or conn.configured_for == campaign:
            return
        try:
            conn.send(Message("TaskConfig", campaign, 0, task.to_dict()))
            conn.configured_for = campaign
        except OSError:
            self._drop(conn.client_id)

    def pool_snapshot(self) -> dict:
        with self._lock:
            return {cid: dict(conn.resources) for cid, conn in self._conns.items()}

    def wait_for_clients(
        self, count: int, criteria: ResourceCriteria, timeout_s: float | None = None
    ) -> bool:
        deadline = None if timeout_s is None else time.monotonic() + timeout_s
        with self._pool_changed:
            while True:
                eligible = [
                    cid
                    for cid, conn in self._conns.items()
                    if meets_criteria(conn.resources, criteria)
                ]
                if len(eligible) >= count:
                    return True
                if self._closing:
                    return False
                wait = 0.5 if deadline is None else deadline - time.monotonic()
                if wait <= 0:
                    return False
                self._pool_changed.wait(min(wait, 0.5))

    def clock_ms(self) -> int:
        return int(time.monotonic() * 1000)

    # -- rounds --------------------------------------------------------------

    def _instruct(
        self,
        msg_type: str,
        round_no: int,
        cids: list[str],
        params: ParameterVector,
        timeout_ms: int,
    ) -> dict:
        collector = _Collector(round_no, set(cids))
        with self._lock:
            self._collector = collector
            conns = {cid: self._conns.get(cid) for cid in cids}
        body = {"params": params_to_b64(params.values)}
        for cid, conn in conns.items():
            if conn is None:
                collector.deposit(cid, _Failure("disconnect"))
                continue
            self._send_task(conn)
            try:
                conn.send(Message(msg_type, self._campaign_id, round_no, body))
            except OSError:
                self._drop(cid)
                collector.deposit(cid, _Failure("disconnect"))
        collected = collector.await_all(timeout_ms / 1000.0)
        with self._lock:
            self._collector = None
        return collected

    def fit(self, round_no: int, cids: list[str], params: ParameterVector, timeout_ms: int):
        collected = self._instruct("FitInstruction", round_no, cids, params, timeout_ms)
        updates, failures = [], []
        for cid in cids:
            item = collected.get(cid)
            if isinstance(item, ClientUpdate):
                updates.append(item)
            elif isinstance(item, _Failure):
                failures.append((cid, item.reason))
            else:
                failures.append((cid, "timeout"))
        return updates, failures

    def evaluate(self, round_no: int, cids: list[str], params: ParameterVector, timeout_ms: int):
        collected = self._instruct("EvalInstruction", round_no, cids, params, timeout_ms)
        results, failures = [], []
        for cid in cids:
            item = collected.get(cid)
            if isinstance(item, EvalResult):
                results.append(item)
            elif isinstance(item, _Failure):
                failures.append((cid, item.reason))
            else:
                failures.append((cid, "timeout"))
        return results, failures

    # -- connection handling ---------------------------------------------------

    def _accept_loop(self) -> None:
        while True:
            try:
                sock, _ = self._sock.accept()
            except OSError:
                return  # listener closed
            threading.Thread(target=self._serve, args=(Channel(sock),), daemon=True).start()

    def _serve(self, channel: Channel) -> None:
        client_id = None
        try:
            first = channel.recv(timeout=10.0)
            if first is None or first.type != "JoinRequest":
                channel.close()
                return
            client_id = first.body["client_id"]
            conn = _Connection(client_id, channel)
            with self._lock:
                if client_id in self._conns:
                    channel.send(
                        Message(
                            "Failure",
                            self._campaign_id,
                            0,
                            {"client_id": client_id, "reason": "duplicate-id"},
                        )
                    )
                    channel.close()
                    return
                self._conns[client_id] = conn
                self._pool_changed.notify_all()
            conn.send(Message("JoinAccept", self._campaign_id, 0, {"client_id": client_id}))
            self._send_task(conn)
            log.info("client %s joined", client_id)
            self._read_loop(conn)
        except (ProtocolError, TimeoutError, OSError) as exc:
            log.warning("connection error for %s: %s", client_id or "<joining>", exc)
        finally:
            if client_id is not None:
                self._drop(client_id)
            channel.close()

    def _read_loop(self, conn: _Connection) -> None:
        while True:
            msg = conn.channel.recv(timeout=None)
            if msg is None or msg.type == "Disconnect":
                return
            if msg.type == "ResourceReport":
                with self._lock:
                    conn.resources = {
                        "memory_mb": msg.body["memory_mb"],
                        "battery_pct": msg.body["battery_pct"],
                        "on_wifi": msg.body["on_wifi"],
                    }
                    self._pool_changed.notify_all()
            elif msg.type in ("FitResult", "EvalResult", "Failure"):
                self._route_reply(conn, msg)
            else:
                log.debug("ignoring %s from %s", msg.type, conn.client_id)

    def _route_reply(self, conn: _Connection, msg: Message) -> None:
        if msg.type == "Failure" and msg.body["reason"] in ("class-mismatch", "task-declined"):
            log.warning("client %s refused task: %s", conn.client_id, msg.body["reason"])
            raise ProtocolError(f"client refused task: {msg.body['reason']}")
        with self._lock:
            collector = self._collector
            task = self._task
        if collector is None or msg.round != collector.round_no:
            log.debug("stale %s from %s for round %d", msg.type, conn.client_id, msg.round)
            return
        if msg.type == "FitResult" and task is not None:
            try:
                collector.deposit(conn.client_id, client_update_from_body(msg.body, task.model))
            except ProtocolError as exc:
                log.warning("bad update from %s: %s", conn.client_id, exc)
                collector.deposit(conn.client_id, _Failure("bad-update"))
        elif msg.type == "EvalResult":
            collector.deposit(conn.client_id, eval_result_from_body(msg.body))
        elif msg.type == "Failure":
            collector.deposit(conn.client_id, _Failure(msg.body["reason"]))

    def _drop(self, client_id: str) -> None:
        with self._lock:
            conn = self._conns.pop(client_id, None)
            collector = self._collector
            self._pool_changed.notify_all()
        if collector is not None:
            collector.deposit(client_id, _Failure("disconnect"))
        if conn is not None:
            conn.channel.close()

    def close(self) -> None:
        with self._lock:
            self._closing = True
            conns = list(self._conns.values())
            self._conns.clear()
            self._pool_changed.notify_all()
        for conn in conns:
            try:
                conn.send(Message("Disconnect", self._campaign_id, 0, {}))
            except OSError:
                pass
            conn.channel.close()
        self._sock.close()


# ---------------------------------------------------------------------------
# orchestration


class Campaign:
    """The round state machine for one campaign."""

    def __init__(
        self,
        config: CampaignConfig,
        backend,
        campaign_id: str = "campaign",
        monitor: CampaignMonitor | None = None,
        abort: threading.Event | None = None,
    ):
        problems = config.validate()
        if problems:
            raise ConfigError("invalid campaign config: " + "; ".join(problems))
        self.config = config
        self.backend = backend
        self.campaign_id = campaign_id
        self.monitor = monitor or CampaignMonitor()
        self.abort = abort or threading.Event()

        self.validation_data: list[LabeledExample] | None = None
        if config.eval_mode == "server":
            self.validation_data = load_examples(config.validation_path)
            dim = self.validation_data[0].features.size
            if dim != config.task.model.input_dim:
                raise ConfigError(
                    f"validation features have dim {dim}, model expects "
                    f"{config.task.model.input_dim}"
                )
            if any(ex.label >= config.task.model.num_classes for ex in self.validation_data):
                raise ConfigError("validation labels exceed the model's class count")

        initial = config.task.initial_params
        global_params = init_parameters(
            config.task.model, derive_seed(config.seed, STREAM_INIT), initial
        )
        self.state = CampaignState(config=config, global_params=global_params)

        # Independent streams: round selection, validator selection, tie-breaks.
        self._select_rng = rng_for(config.seed, STREAM_SELECTION)
        self._validate_rng = rng_for(config.seed, STREAM_VALIDATION)
        self._tiebreak_rng = rng_for(config.seed, STREAM_TIEBREAK)  # reserved

        self.backend.bind_campaign(
            campaign_id, replace(config.task, initial_params=global_params)
        )

    # -- helpers -------------------------------------------------------------

    def _set_status(self, status: str) -> None:
        self.state.status = status
        self.monitor.status_change(self.summary())

    def summary(self) -> dict:
        latest = self.state.history[-1] if self.state.history else None
        return {
            "campaign_id": self.campaign_id,
            "status": self.state.status,
            "current_round": self.state.current_round,
            "rounds_total": self.config.rounds,
            "latest_loss": None if latest is None or math.isnan(latest.eval_loss) else latest.eval_loss,
            "latest_accuracy": None
            if latest is None or math.isnan(latest.eval_accuracy)
            else latest.eval_accuracy,
            "connected_clients": len(self.state.connected_pool),
        }

    def _evaluate(self, round_no: int) -> tuple[float, float, str]:
        cfg = self.config
        if cfg.eval_mode == "server":
            assert self.validation_data is not None
            loss, acc = forward_loss(self.state.global_params, self.validation_data)
            return loss, acc, "server"
        return self.evaluate_clients(round_no)

    def evaluate_clients(self, round_no: int) -> tuple[float, float, str]:
        """Sample validators from the eligible pool and combine their metrics."""
        cfg = self.config
        pool = self.state.connected_pool
        eligible = {
            cid: res for cid, res in pool.items() if meets_criteria(res, cfg.selection_criteria)
        }
        if not eligible:
            return float("nan"), float("nan"), "none"
        n_validators = math.ceil(cfg.validator_fraction * len(eligible))
        validators = select_participants(
            eligible, n_validators, cfg.selection_criteria, self._validate_rng
        )
        results, failures = self.backend.evaluate(
            round_no, validators, self.state.global_params, cfg.round_timeout_ms
        )
        for cid, reason in failures:
            self.monitor.event("ERROR", f"validator {cid} failed: {reason}", round_no)
        if not results:
            self.monitor.event("ERROR", "no validators responded", round_no)
            return float("nan"), float("nan"), "none"
        loss, acc = weighted_metrics(sorted(results, key=lambda r: r.client_id))
        return loss, acc, "client"

    # -- rounds ---------------------------------------------------------------

    def run_round(self, round_no: int) -> RoundReport:
        cfg = self.config
        started_ms = self.backend.clock_ms()
        pool = self.backend.pool_snapshot()
        self.state.connected_pool = pool
        self.monitor.event(
            "INFO", f"round {round_no} starting with {len(pool)} connected clients", round_no
        )

        eligible = {
            cid: res for cid, res in pool.items() if meets_criteria(res, cfg.selection_criteria)
        }
        self.monitor.event("DEBUG", f"eligible clients: {sorted(eligible)}", round_no)

        updates: list[ClientUpdate] = []
        failures: list[tuple[str, str]] = []
        if len(eligible) < cfg.min_fit_clients:
            self.monitor.event(
                "ERROR",
                f"round {round_no} cannot start: {len(eligible)} eligible < "
                f"min_fit_clients {cfg.min_fit_clients}",
                round_no,
            )
        else:
            selected = select_participants(
                eligible, cfg.num_clients, cfg.selection_criteria, self._select_rng
            )
            self.monitor.event("DEBUG", f"selected trainers: {selected}", round_no)
            updates, failures = self.backend.fit(
                round_no, selected, self.state.global_params, cfg.round_timeout_ms
            )
            updates.sort(key=lambda u: u.client_id)
            for cid, reason in failures:
                self.monitor.event("ERROR", f"client {cid} failed round {round_no}: {reason}", round_no)

        committed = len(updates) >= cfg.min_fit_clients
        if committed:
            self.state.global_params = fed_avg(updates)
            self.monitor.event(
                "INFO", f"round {round_no} committed with {len(updates)} updates", round_no
            )
        else:
            self.monitor.event(
                "ERROR",
                f"round {round_no} discarded: {len(updates)} updates < quorum "
                f"{cfg.min_fit_clients}",
                round_no,
            )

        loss, accuracy, mode_used = self._evaluate(round_no)
        if not math.isnan(accuracy):
            self.monitor.event(
                "INFO",
                f"round {round_no} evaluation ({mode_used}): loss={loss:.6f} "
                f"accuracy={accuracy:.4f}",
                round_no,
            )
        report = RoundReport(
            round=round_no,
            fitted_clients=sorted(u.client_id for u in updates),
            failed_clients=sorted(failures),
            eval_loss=loss,
            eval_accuracy=accuracy,
            eval_mode_used=mode_used,
            wall_time_ms=max(0, self.backend.clock_ms() - started_ms),
            committed=committed,
        )
        self.state.history.append(report)
        self.state.current_round = round_no
        self.monitor.round_complete(report)
        return report

    def run(self, join_wait_s: float | None = None) -> CampaignState:
        cfg = self.config
        self._set_status(STATUS_WAITING)
        self.backend.wait_for_clients(cfg.min_fit_clients, cfg.selection_criteria, join_wait_s)
        self._set_status(STATUS_RUNNING)
        final = STATUS_EXHAUSTED
        for round_no in range(1, cfg.rounds + 1):
            if self.abort.is_set():
                final = STATUS_ABORTED
                self.monitor.event("INFO", f"abort requested before round {round_no}", round_no)
                break
            if not self.backend.pool_snapshot():
                final = STATUS_ABORTED
                self.monitor.event("ERROR", "no connected clients, aborting campaign", round_no)
                break
            report = self.run_round(round_no)
            if (
                cfg.target_accuracy is not None
                and not math.isnan(report.eval_accuracy)
                and report.eval_accuracy >= cfg.target_accuracy
            ):
                final = STATUS_CONVERGED
                self.monitor.event(
                    "INFO",
                    f"target accuracy {cfg.target_accuracy} reached at round {round_no}",
                    round_no,
                )
                break
        self.state.connected_pool = self.backend.pool_snapshot()
        self._set_status(final)
        return self.state


def run_campaign(
    config: CampaignConfig,
    backend,
    campaign_id: str = "campaign",
    monitor: CampaignMonitor | None = None,
    abort: threading.Event | None = None,
    join_wait_s: float | None = None,
) -> CampaignState:
    """Run a campaign to completion and return its final state."""
    return Campaign(config, backend, campaign_id, monitor, abort).run(join_wait_s)


# ---------------------------------------------------------------------------
# CLI


def load_campaign_file(path) -> CampaignConfig:
    """Parse a campaign config file, resolving an optional pretrained_path."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"campaign config not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"campaign config {path} is not valid JSON: {exc}")
    pretrained_path = raw.pop("pretrained_path", None)
    config = CampaignConfig.from_dict(raw)
    if pretrained_path:
        params = load_pretrained(pretrained_path, config.task.model)
        config = config.with_initial_params(params)
    return config


def main(argv=None) -> int:
    from .metrics import CampaignRunner, MetricsHub, serve_metrics

    ap = argparse.ArgumentParser(prog="float-server", description="Campaign server")
    ap.add_argument("--config", help="campaign config JSON (optional; API can start campaigns)")
    ap.add_argument("--listen", default="127.0.0.1:8765", help="client listener host:port")
    ap.add_argument("--metrics-listen", default="127.0.0.1:8080", help="HTTP API host:port")
    ap.add_argument("--log-level", default="info", choices=["info", "debug"])
    ap.add_argument("--state-dir", default="./campaigns", help="persistence directory")
    ap.add_argument("--once", action="store_true", help="exit when the initial campaign ends")
    ap.add_argument("--join-wait-s", type=float, default=None, help="max wait for clients")
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    from .client import parse_addr

    pool = TcpClientPool(parse_addr(args.listen))
    hub = MetricsHub(args.state_dir, pool_size_fn=lambda: len(pool.pool_snapshot()))
    runner = CampaignRunner(pool, hub, join_wait_s=args.join_wait_s)
    runner.start()
    httpd = serve_metrics(hub, parse_addr(args.metrics_listen), starter=runner.submit)

    ready = {
        "fl_addr": "%s:%d" % pool.address,
        "metrics_addr": "%s:%d" % httpd.server_address[:2],
    }
    print(json.dumps(ready, sort_keys=True), flush=True)

    first_id = None
    if args.config:
        try:
            config = load_campaign_file(args.config)
        except FloatError as exc:
            log.error("%s", exc)
            return 1
        first_id = hub.create_campaign(config)
        runner.submit(first_id)

    try:
        if args.once and first_id is not None:
            hub.record(first_id).done.wait()
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        runner.stop()
        httpd.shutdown()
        pool.close()
        hub.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
