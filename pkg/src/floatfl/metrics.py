"""Campaign persistence and the live-monitoring HTTP surface.

Each campaign owns an append-only directory of JSONL files plus the task
config.json document. The hub fans out rounds/events/status changes to
server-push subscribers; HTTP handlers only ever see immutable snapshots,
never live campaign state.

Endpoints (JSON bodies, UTF-8):
  GET  /campaigns                     list of campaign summaries
  POST /campaigns                     start a campaign from a config body
  GET  /campaigns/{id}/rounds         round reports so far
  GET  /campaigns/{id}/events[?level] log events, optionally filtered
  GET  /campaigns/{id}/config         the campaign config as submitted
  GET  /campaigns/{id}/stream         text/event-stream of rounds/events/status
  POST /campaigns/{id}/abort          request abort (idempotent)
"""

from __future__ import annotations

import json
import logging
import os
import queue
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .errors import FloatError
from .protocol import CampaignConfig, canonical_json
from .server import (
    STATUS_ABORTED,
    TERMINAL_STATUSES,
    CampaignMonitor,
    RoundReport,
    run_campaign,
)

log = logging.getLogger("float.metrics")

LOG_LEVELS = ("INFO", "DEBUG", "ERROR")


@dataclass(frozen=True)
class LogEvent:
    timestamp_ms: int
    level: str
    source: str
    message: str
    round: int | None = None

    def __post_init__(self):
        if self.level not in LOG_LEVELS:
            raise FloatError(f"log level must be one of {LOG_LEVELS}")

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "message": self.message,
            "round": self.round,
            "source": self.source,
            "timestamp_ms": self.timestamp_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogEvent":
        return cls(
            timestamp_ms=int(d["timestamp_ms"]),
            level=str(d["level"]),
            source=str(d["source"]),
            message=str(d["message"]),
            round=None if d.get("round") is None else int(d["round"]),
        )


class _CampaignStore:
    """Append-only JSONL persistence for one campaign.

    Events are buffered and flushed at round boundaries; a disk failure
    degrades to in-memory monitoring without touching training.
    """

    def __init__(self, directory: str):
        self.directory = directory
        self.broken = False
        self._closed = False
        try:
            os.makedirs(directory, exist_ok=True)
            self._events = open(os.path.join(directory, "events.jsonl"), "a", encoding="utf-8")
            self._rounds = open(os.path.join(directory, "rounds.jsonl"), "a", encoding="utf-8")
        except OSError as exc:
            log.error("campaign store %s unavailable: %s", directory, exc)
            self.broken = True

    def write_config(self, name: str, text: str) -> None:
        if self.broken:
            return
        try:
            with open(os.path.join(self.directory, name), "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            self._degrade(exc)

    def append_event(self, event: LogEvent) -> None:
        if self.broken:
            return
        try:
            self._events.write(canonical_json(event.to_dict()) + "\n")
        except (OSError, ValueError) as exc:
            self._degrade(exc)

    def append_round(self, report: RoundReport) -> None:
        if self.broken:
            return
        try:
            self._rounds.write(canonical_json(report.to_dict()) + "\n")
            self._rounds.flush()
            os.fsync(self._rounds.fileno())
            self._events.flush()
        except (OSError, ValueError) as exc:
            self._degrade(exc)

    def _degrade(self, exc: Exception) -> None:
        log.error("campaign store %s failed, continuing in memory: %s", self.directory, exc)
        self.broken = True

    def close(self) -> None:
        if self.broken or self._closed:
            return
        self._closed = True
        try:
            self._events.flush()
            self._rounds.flush()
            self._events.close()
            self._rounds.close()
        except OSError:
            pass


@dataclass
class CampaignRecord:
    campaign_id: str
    config: CampaignConfig
    store: _CampaignStore
    status: str = "Waiting"
    current_round: int = 0
    latest_loss: float | None = None
    latest_accuracy: float | None = None
    rounds: list[RoundReport] = field(default_factory=list)
    events: list[LogEvent] = field(default_factory=list)
    timeline: list[dict] = field(default_factory=list)
    abort_event: threading.Event = field(default_factory=threading.Event)
    done: threading.Event = field(default_factory=threading.Event)
    subscribers: list["queue.Queue[dict | None]"] = field(default_factory=list)


class MetricsHub:
    """Owns campaign records, persistence, and stream fan-out."""

    def __init__(self, base_dir: str, pool_size_fn=lambda: 0):
        self.base_dir = base_dir
        self.pool_size_fn = pool_size_fn
        self._lock = threading.RLock()
        self._records: dict[str, CampaignRecord] = {}
        self._counter = 0

    # -- lifecycle -----------------------------------------------------------

    def create_campaign(self, config: CampaignConfig, campaign_id: str | None = None) -> str:
        with self._lock:
            if campaign_id is None:
                self._counter += 1
                campaign_id = f"campaign-{self._counter:04d}-{int(time.time())}"
            store = _CampaignStore(os.path.join(self.base_dir, campaign_id))
            store.write_config("config.json", config.task.to_json())
            store.write_config("campaign.json", canonical_json(config.to_dict()))
            self._records[campaign_id] = CampaignRecord(campaign_id, config, store)
            return campaign_id

    def record(self, campaign_id: str) -> CampaignRecord:
        with self._lock:
            if campaign_id not in self._records:
                raise KeyError(campaign_id)
            return self._records[campaign_id]

    def campaign_ids(self) -> list[str]:
        with self._lock:
            return list(self._records)

    def close(self) -> None:
        with self._lock:
            for rec in self._records.values():
                rec.store.close()
                for sub in rec.subscribers:
                    sub.put(None)

    # -- writes (called by the orchestrator thread) ---------------------------

    def append_event(self, campaign_id: str, event: LogEvent) -> None:
        with self._lock:
            rec = self._records[campaign_id]
            rec.events.append(event)
            rec.store.append_event(event)
            self._publish(rec, {"kind": "event", "event": event.to_dict()})

    def append_round(self, campaign_id: str, report: RoundReport) -> None:
        with self._lock:
            rec = self._records[campaign_id]
            rec.rounds.append(report)
            rec.current_round = report.round
            d = report.to_dict()
            rec.latest_loss = d["eval_loss"]
            rec.latest_accuracy = d["eval_accuracy"]
            rec.store.append_round(report)
            self._publish(rec, {"kind": "round", "round": d})

    def set_status(self, campaign_id: str, summary: dict) -> None:
        with self._lock:
            rec = self._records[campaign_id]
            rec.status = summary["status"]
            rec.current_round = summary["current_round"]
            self._publish(rec, {"kind": "status", "summary": self._summary(rec)})
            if rec.status in TERMINAL_STATUSES:
                rec.done.set()
                for sub in rec.subscribers:
                    sub.put(None)
                rec.subscribers.clear()
                rec.store.close()

    def _publish(self, rec: CampaignRecord, obj: dict) -> None:
        rec.timeline.append(obj)
        for sub in rec.subscribers:
            sub.put(obj)

    # -- reads (HTTP handlers) -------------------------------------------------

    def _summary(self, rec: CampaignRecord) -> dict:
        return {
            "campaign_id": rec.campaign_id,
            "status": rec.status,
            "current_round": rec.current_round,
            "rounds_total": rec.config.rounds,
            "latest_loss": rec.latest_loss,
            "latest_accuracy": rec.latest_accuracy,
            "connected_clients": int(self.pool_size_fn()),
        }

    def summaries(self) -> list[dict]:
        with self._lock:
            return [self._summary(rec) for rec in self._records.values()]

    def rounds(self, campaign_id: str) -> list[dict]:
        with self._lock:
            return [r.to_dict() for r in self.record(campaign_id).rounds]

    def events(self, campaign_id: str, level: str | None = None) -> list[dict]:
        with self._lock:
            evs = self.record(campaign_id).events
            if level is not None:
                evs = [e for e in evs if e.level == level]
            return [e.to_dict() for e in evs]

    def config_dict(self, campaign_id: str) -> dict:
        with self._lock:
            return self.record(campaign_id).config.to_dict()

    def subscribe(self, campaign_id: str):
        """Atomically snapshot the timeline and register for live pushes.

        Returns (backlog, live queue); the queue yields None when the
        campaign has reached a terminal status.
        """
        with self._lock:
            rec = self.record(campaign_id)
            backlog = list(rec.timeline)
            sub: "queue.Queue[dict | None]" = queue.Queue()
            if rec.status in TERMINAL_STATUSES:
                sub.put(None)
            else:
                rec.subscribers.append(sub)
            return backlog, sub

    def unsubscribe(self, campaign_id: str, sub) -> None:
        with self._lock:
            try:
                self.record(campaign_id).subscribers.remove(sub)
            except (KeyError, ValueError):
                pass

    def abort(self, campaign_id: str) -> str:
        """Request an abort; idempotent, a no-op on finished campaigns."""
        with self._lock:
            rec = self.record(campaign_id)
            if rec.status in TERMINAL_STATUSES:
                return rec.status
            rec.abort_event.set()
            return rec.status


class HubMonitor(CampaignMonitor):
    """Bridges orchestrator callbacks into the hub."""

    def __init__(self, hub: MetricsHub, campaign_id: str, source: str = "fl-server"):
        self.hub = hub
        self.campaign_id = campaign_id
        self.source = source

    def event(self, level: str, message: str, round_no: int | None = None) -> None:
        self.hub.append_event(
            self.campaign_id,
            LogEvent(int(time.time() * 1000), level, self.source, message, round_no),
        )

    def round_complete(self, report: RoundReport) -> None:
        self.hub.append_round(self.campaign_id, report)

    def status_change(self, summary: dict) -> None:
        self.hub.set_status(self.campaign_id, summary)


class CampaignRunner(threading.Thread):
    """Runs submitted campaigns one at a time against the shared client pool."""

    def __init__(self, backend, hub: MetricsHub, join_wait_s: float | None = None):
        super().__init__(daemon=True, name="campaign-runner")
        self.backend = backend
        self.hub = hub
        self.join_wait_s = join_wait_s
        self._queue: "queue.Queue[str | None]" = queue.Queue()

    def submit(self, campaign_id: str) -> None:
        self._queue.put(campaign_id)

    def stop(self) -> None:
        self._queue.put(None)

    def run(self) -> None:
        while True:
            campaign_id = self._queue.get()
            if campaign_id is None:
                return
            rec = self.hub.record(campaign_id)
            monitor = HubMonitor(self.hub, campaign_id)
            if rec.abort_event.is_set():
                self.hub.set_status(
                    campaign_id,
                    {"status": STATUS_ABORTED, "current_round": rec.current_round},
                )
                continue
            try:
                run_campaign(
                    rec.config,
                    self.backend,
                    campaign_id=campaign_id,
                    monitor=monitor,
                    abort=rec.abort_event,
                    join_wait_s=self.join_wait_s,
                )
            except FloatError as exc:
                log.error("campaign %s failed: %s", campaign_id, exc)
                monitor.event("ERROR", f"campaign failed: {exc}")
                self.hub.set_status(
                    campaign_id,
                    {"status": STATUS_ABORTED, "current_round": rec.current_round},
                )


# ---------------------------------------------------------------------------
# HTTP service

_ROUTE_CAMPAIGN = re.compile(r"^/campaigns/([^/]+)/(rounds|events|stream|abort|config)$")


def _make_handler(hub: MetricsHub, starter):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        # -- helpers --

        def _json(self, status: int, obj) -> None:
            data = json.dumps(obj).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(data)

        def _not_found(self, campaign_id: str) -> None:
            self._json(404, {"error": f"unknown campaign {campaign_id!r}"})

        def _read_body(self) -> bytes:
            length = int(self.headers.get("Content-Length", 0))
            return self.rfile.read(length)

        # -- verbs --

        def do_OPTIONS(self):  # CORS preflight for the dashboard
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            url = urlparse(self.path)
            if url.path == "/campaigns":
                self._json(200, hub.summaries())
                return
            m = _ROUTE_CAMPAIGN.match(url.path)
            if not m:
                self._json(404, {"error": f"no route {url.path!r}"})
                return
            campaign_id, what = m.group(1), m.group(2)
            try:
                if what == "rounds":
                    self._json(200, hub.rounds(campaign_id))
                elif what == "events":
                    level = parse_qs(url.query).get("level", [None])[0]
                    if level is not None and level not in LOG_LEVELS:
                        self._json(400, {"error": f"level must be one of {LOG_LEVELS}"})
                        return
                    self._json(200, hub.events(campaign_id, level))
                elif what == "config":
                    self._json(200, hub.config_dict(campaign_id))
                elif what == "stream":
                    self._stream(campaign_id)
                else:
                    self._json(405, {"error": "use POST for abort"})
            except KeyError:
                self._not_found(campaign_id)

        def do_POST(self):
            url = urlparse(self.path)
            if url.path == "/campaigns":
                self._create_campaign()
                return
            m = _ROUTE_CAMPAIGN.match(url.path)
            if m and m.group(2) == "abort":
                try:
                    status = hub.abort(m.group(1))
                except KeyError:
                    self._not_found(m.group(1))
                    return
                self._json(200, {"campaign_id": m.group(1), "status": status})
                return
            self._json(404, {"error": f"no route {url.path!r}"})

        def _create_campaign(self):
            try:
                payload = json.loads(self._read_body().decode("utf-8"))
                pretrained_path = payload.pop("pretrained_path", None)
                config = CampaignConfig.from_dict(payload)
                if pretrained_path:
                    from .model import load_pretrained

                    config = config.with_initial_params(
                        load_pretrained(pretrained_path, config.task.model)
                    )
            except (ValueError, FloatError) as exc:
                self._json(400, {"error": "unparseable campaign config", "violations": [str(exc)]})
                return
            violations = config.validate()
            if violations:
                self._json(400, {"error": "invalid campaign config", "violations": violations})
                return
            campaign_id = hub.create_campaign(config)
            starter(campaign_id)
            self._json(201, {"id": campaign_id})

        def _stream(self, campaign_id: str):
            backlog, sub = hub.subscribe(campaign_id)
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Connection", "close")
            self.end_headers()
            try:
                for obj in backlog:
                    self._push(obj)
                while True:
                    try:
                        obj = sub.get(timeout=15.0)
                    except queue.Empty:
                        self.wfile.write(b": keep-alive\n\n")
                        self.wfile.flush()
                        continue
                    if obj is None:
                        return
                    self._push(obj)
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                hub.unsubscribe(campaign_id, sub)

        def _push(self, obj: dict) -> None:
            self.wfile.write(b"data: " + json.dumps(obj).encode("utf-8") + b"\n\n")
            self.wfile.flush()

    return Handler


def serve_metrics(hub: MetricsHub, listen_addr: tuple[str, int], starter=None):
    """Start the HTTP service in a background thread; returns the server."""
    if starter is None:
        starter = lambda campaign_id: None
    httpd = ThreadingHTTPServer(listen_addr, _make_handler(hub, starter))
    httpd.daemon_threads = True
    thread = threading.Thread(target=httpd.serve_forever, daemon=True, name="metrics-http")
    thread.start()
    return httpd
