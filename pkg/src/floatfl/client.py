"""Client-side runtime: local data store, resource gating, and the
campaign session that trains and evaluates on server instruction.

The functional core (ClientCore) is shared between the standalone TCP
process started by the CLI and the in-process simulated clients used by
the sweep harness, so both run identical training code.
"""

from __future__ import annotations

import argparse
import json
import logging
import socket
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .aggregation import ClientUpdate, EvalResult
from .datafiles import load_examples
from .errors import ConfigError, FloatError, ProtocolError
from .model import LabeledExample, ParameterVector, forward_loss, local_train, round_seed
from .protocol import Channel, ClientTaskConfig, Message, params_from_b64, params_to_b64
from .seeding import derive_seed

log = logging.getLogger("float.client")


@dataclass
class DeviceProfile:
    """Simulated device-resource profile, including fault injection."""

    memory_mb: int = 2048
    battery_pct: int = 100
    on_wifi: bool = True
    compute_delay_ms: int = 0
    fail_round: int | None = None

    def __post_init__(self):
        if self.memory_mb < 1 or not 0 <= self.battery_pct <= 100 or self.compute_delay_ms < 0:
            raise ConfigError("invalid device profile")

    def report_body(self, client_id: str) -> dict:
        return {
            "battery_pct": self.battery_pct,
            "client_id": client_id,
            "memory_mb": self.memory_mb,
            "on_wifi": self.on_wifi,
        }

    def to_dict(self) -> dict:
        return {
            "battery_pct": self.battery_pct,
            "compute_delay_ms": self.compute_delay_ms,
            "fail_round": self.fail_round,
            "memory_mb": self.memory_mb,
            "on_wifi": self.on_wifi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        return cls(
            memory_mb=int(d.get("memory_mb", 2048)),
            battery_pct=int(d.get("battery_pct", 100)),
            on_wifi=bool(d.get("on_wifi", True)),
            compute_delay_ms=int(d.get("compute_delay_ms", 0)),
            fail_round=None if d.get("fail_round") is None else int(d["fail_round"]),
        )


@dataclass
class LocalStore:
    """A client's private dataset, split once into train and held-out eval."""

    train_split: list[LabeledExample]
    eval_split: list[LabeledExample]
    per_class_counts: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.per_class_counts:
            counts: dict[int, int] = {}
            for ex in self.train_split + self.eval_split:
                counts[ex.label] = counts.get(ex.label, 0) + 1
            self.per_class_counts = counts

    @classmethod
    def from_examples(
        cls, examples: list[LabeledExample], seed: int, eval_fraction: float = 0.2
    ) -> "LocalStore":
        """Hold out eval_fraction per class (floored), deterministically."""
        rng = np.random.default_rng(seed)
        by_class: dict[int, list[LabeledExample]] = {}
        for ex in examples:
            by_class.setdefault(ex.label, []).append(ex)
        train, evals = [], []
        for label in sorted(by_class):
            group = by_class[label]
            order = rng.permutation(len(group))
            n_eval = int(len(group) * eval_fraction)
            evals.extend(group[i] for i in order[:n_eval])
            train.extend(group[i] for i in order[n_eval:])
        return cls(train_split=train, eval_split=evals)

    @property
    def labels(self) -> set[int]:
        return set(self.per_class_counts)


class TaskRefused(FloatError):
    """Raised when the client declines a task (consent or class mismatch)."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ClientCore:
    """Task handling and training logic, transport-independent."""

    def __init__(
        self,
        client_id: str,
        store: LocalStore,
        profile: DeviceProfile,
        seed: int = 0,
        accept_task: bool = True,
    ):
        self.client_id = client_id
        self.store = store
        self.profile = profile
        self.seed = seed
        self.accept_task = accept_task
        self.task: ClientTaskConfig | None = None

    def receive_task(self, task: ClientTaskConfig) -> None:
        """Adopt a task, or raise TaskRefused (consent gate, class check)."""
        if not self.accept_task:
            raise TaskRefused("task-declined")
        config_ids = {cid for cid, _ in task.classes}
        if not self.store.labels <= config_ids:
            raise TaskRefused("class-mismatch")
        self.task = task

    def _materialize(self, values: np.ndarray) -> ParameterVector:
        assert self.task is not None, "fit/eval before task config"
        spec = self.task.model
        if values.size != spec.param_count:
            raise ProtocolError(
                f"instruction carries {values.size} values, model needs {spec.param_count}"
            )
        return ParameterVector(values, spec.layer_spans(), spec.freeze_mask())

    def fit(self, round_no: int, values: np.ndarray) -> ClientUpdate | str | None:
        """Train one task-configured pass; None simulates a crash (no reply)."""
        if self.profile.fail_round is not None and self.profile.fail_round == round_no:
            return None
        if not self.store.train_split:
            return "no-data"
        params = self._materialize(values)
        assert self.task is not None
        trained, n, mean_loss = local_train(
            params,
            self.store.train_split,
            self.task.hyperparameters,
            round_seed(self.seed, round_no),
        )
        return ClientUpdate(self.client_id, trained, n, mean_loss)

    def evaluate(self, round_no: int, values: np.ndarray) -> EvalResult | str:
        if not self.store.eval_split:
            return "no-eval-data"
        params = self._materialize(values)
        loss, accuracy = forward_loss(params, self.store.eval_split)
        return EvalResult(self.client_id, len(self.store.eval_split), loss, accuracy)

    def resource_body(self) -> dict:
        return self.profile.report_body(self.client_id)


JOIN_RETRIES = 5
JOIN_BACKOFF_S = 0.2


class ClientSession:
    """A live connection to the campaign server, speaking the wire protocol."""

    def __init__(self, server_addr: tuple[str, int], core: ClientCore):
        self.server_addr = server_addr
        self.core = core
        self.campaign = ""
        self.channel: Channel | None = None

    # -- connection -------------------------------------------------------

    def join(self, timeout: float = 10.0) -> None:
        """Connect (bounded backoff), announce ourselves, await acceptance."""
        delay = JOIN_BACKOFF_S
        last_err: Exception | None = None
        for _ in range(JOIN_RETRIES):
            try:
                sock = socket.create_connection(self.server_addr, timeout=timeout)
                break
            except OSError as exc:
                last_err = exc
                time.sleep(delay)
                delay = min(delay * 2, 2.0)
        else:
            raise ConnectionError(f"server unreachable after {JOIN_RETRIES} attempts: {last_err}")
        self.channel = Channel(sock)
        self._send("JoinRequest", {"client_id": self.core.client_id})
        self.report_resources()
        msg = self.channel.recv(timeout)
        if msg is None:
            raise ConnectionError("server closed the connection during join")
        if msg.type == "Failure":
            raise ConnectionError(f"join rejected: {msg.body['reason']}")
        if msg.type != "JoinAccept":
            raise ProtocolError(f"expected JoinAccept, got {msg.type}")
        self.campaign = msg.campaign
        log.info("%s joined campaign %r", self.core.client_id, self.campaign)

    def _send(self, msg_type: str, body: dict, round_no: int = 0) -> None:
        assert self.channel is not None
        self.channel.send(Message(msg_type, self.campaign, round_no, body))

    def report_resources(self, round_no: int = 0) -> None:
        self._send("ResourceReport", self.core.resource_body(), round_no)

    # -- instruction handlers ----------------------------------------------

    def handle_task(self, msg: Message) -> None:
        task = ClientTaskConfig.from_dict(msg.body)
        try:
            self.core.receive_task(task)
        except TaskRefused as refusal:
            self._send("Failure", {"client_id": self.core.client_id, "reason": refusal.reason})
            raise
        log.info(
            "%s accepted task: %d classes, %d points per class expected",
            self.core.client_id,
            len(task.classes),
            task.points_per_class,
        )

    def handle_fit(self, msg: Message) -> None:
        if self.core.profile.compute_delay_ms:
            time.sleep(self.core.profile.compute_delay_ms / 1000.0)
        outcome = self.core.fit(msg.round, params_from_b64(msg.body["params"]))
        if outcome is None:
            log.warning("%s simulating crash in round %d", self.core.client_id, msg.round)
            return
        if isinstance(outcome, str):
            self._send(
                "Failure", {"client_id": self.core.client_id, "reason": outcome}, msg.round
            )
            return
        body = {
            "client_id": outcome.client_id,
            "num_examples": outcome.num_examples,
            "params": params_to_b64(outcome.params.values),
            "train_loss": float(outcome.train_loss),
        }
        self._send("FitResult", body, msg.round)
        self.report_resources(msg.round)

    def handle_eval(self, msg: Message) -> None:
        outcome = self.core.evaluate(msg.round, params_from_b64(msg.body["params"]))
        if isinstance(outcome, str):
            self._send(
                "Failure", {"client_id": self.core.client_id, "reason": outcome}, msg.round
            )
            return
        body = {
            "accuracy": float(outcome.accuracy),
            "client_id": outcome.client_id,
            "loss": float(outcome.loss),
            "num_examples": outcome.num_examples,
        }
        self._send("EvalResult", body, msg.round)

    # -- main loop ----------------------------------------------------------

    def run(self) -> None:
        """Serve instructions until the server disconnects."""
        assert self.channel is not None
        while True:
            try:
                msg = self.channel.recv(timeout=None)
            except OSError:
                log.info("%s connection closed", self.core.client_id)
                return
            if msg is None or msg.type == "Disconnect":
                log.info("%s disconnected", self.core.client_id)
                return
            if msg.campaign:
                self.campaign = msg.campaign
            if msg.type == "TaskConfig":
                self.handle_task(msg)
            elif msg.type == "FitInstruction":
                self.handle_fit(msg)
            elif msg.type == "EvalInstruction":
                self.handle_eval(msg)
            else:
                log.debug("%s ignoring %s", self.core.client_id, msg.type)

    def close(self) -> None:
        if self.channel is not None:
            try:
                self._send("Disconnect", {})
            except OSError:
                pass
            self.channel.close()
            self.channel = None


def parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"address must be host:port, got {text!r}")
    return host, int(port)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="float-client", description="Campaign client runtime")
    ap.add_argument("--server", required=True, help="server address host:port")
    ap.add_argument("--id", required=True, help="client identifier")
    ap.add_argument("--data", required=True, help="local dataset JSON file")
    ap.add_argument("--profile", required=True, help="device profile JSON file")
    ap.add_argument("--accept-task", action="store_true", help="consent to the campaign task")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--log-level", default="info", choices=["info", "debug"])
    args = ap.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()), format="%(message)s")

    try:
        with open(args.profile, "r", encoding="utf-8") as fh:
            profile = DeviceProfile.from_dict(json.load(fh))
        store = LocalStore.from_examples(
            load_examples(args.data), seed=derive_seed(args.seed, 17)
        )
        core = ClientCore(args.id, store, profile, seed=args.seed, accept_task=args.accept_task)
        session = ClientSession(parse_addr(args.server), core)
        session.join()
        session.run()
    except TaskRefused as refusal:
        log.error("task refused: %s", refusal.reason)
        return 2
    except (FloatError, ConnectionError, OSError) as exc:
        log.error("client failed: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
