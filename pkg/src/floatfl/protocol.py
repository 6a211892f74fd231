"""Framed JSON message channel between campaign server and clients.

Wire format, bit-exact: each frame is a u32 big-endian payload length
followed by that many bytes of UTF-8 JSON with lexicographically sorted
keys. Top-level keys: "type", "campaign", "round", "body". Parameter
arrays travel as base64 of little-endian float64, never as JSON numbers.

This module also owns the campaign/task configuration schemas. The task
configuration body doubles as the standalone config.json document pushed
to client devices.
"""

from __future__ import annotations

import base64
import binascii
import json
import socket
import struct
from dataclasses import dataclass, field, replace
import numpy as np

from .aggregation import ClientUpdate, EvalResult
from .errors import ProtocolError
from .model import Hyperparameters, ModelSpec, ParameterVector

MESSAGE_TYPES = (
    "JoinRequest",
    "JoinAccept",
    "TaskConfig",
    "FitInstruction",
    "FitResult",
    "EvalInstruction",
    "EvalResult",
    "ResourceReport",
    "Failure",
    "Disconnect",
)

MAX_FRAME_BYTES = 64 * 1024 * 1024  # corrupt-prefix guard


# ---------------------------------------------------------------------------
# parameter payload codec


def params_to_b64(values: np.ndarray) -> str:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ProtocolError("cannot encode non-finite parameter values")
    return base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii")


def params_from_b64(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError, AttributeError) as exc:
        raise ProtocolError(f"invalid base64 parameter payload: {exc}")
    if len(raw) % 8 != 0:
        raise ProtocolError("parameter payload length is not a multiple of 8")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def canonical_json(obj) -> str:
    """Deterministic JSON used for every serialized object in the framework."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------------------------
# configuration schemas


@dataclass(frozen=True)
class ResourceCriteria:
    """Participation gate evaluated against client resource reports."""

    min_memory_mb: int = 0
    min_battery_pct: int = 0
    require_wifi: bool = False

    def to_dict(self) -> dict:
        return {
            "min_battery_pct": self.min_battery_pct,
            "min_memory_mb": self.min_memory_mb,
            "require_wifi": self.require_wifi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResourceCriteria":
        return cls(
            min_memory_mb=int(d.get("min_memory_mb", 0)),
            min_battery_pct=int(d.get("min_battery_pct", 0)),
            require_wifi=bool(d.get("require_wifi", False)),
        )


@dataclass(frozen=True)
class ClientTaskConfig:
    """Per-campaign task definition shipped to client devices (config.json)."""

    model: ModelSpec
    initial_params: ParameterVector | None
    fine_tune_only: bool
    points_per_class: int
    classes: tuple[tuple[int, str], ...]
    hyperparameters: Hyperparameters

    def validate(self) -> list[str]:
        problems = []
        if not self.classes:
            problems.append("classes must be non-empty")
        ids = [c[0] for c in self.classes]
        if ids != list(range(len(ids))):
            problems.append("class ids must be 0..k-1 in order")
        if self.classes and len(self.classes) != self.model.num_classes:
            problems.append(
                f"{len(self.classes)} class descriptions for {self.model.num_classes}-class model"
            )
        if self.points_per_class < 1:
            problems.append("points_per_class must be >= 1")
        if self.fine_tune_only != self.model.fine_tune_only:
            problems.append("fine_tune_only flag must match model.fine_tune_only")
        if self.initial_params is not None and len(self.initial_params) != self.model.param_count:
            problems.append(
                f"initial_params has {len(self.initial_params)} values, "
                f"model needs {self.model.param_count}"
            )
        return problems

    def to_dict(self) -> dict:
        return {
            "classes": [[cid, desc] for cid, desc in self.classes],
            "fine_tune_only": self.fine_tune_only,
            "hyperparameters": {
                "batch_size": self.hyperparameters.batch_size,
                "learning_rate": self.hyperparameters.learning_rate,
                "local_epochs": self.hyperparameters.local_epochs,
                "momentum": self.hyperparameters.momentum,
            },
            "initial_params": None
            if self.initial_params is None
            else params_to_b64(self.initial_params.values),
            "model": {
                "fine_tune_only": self.model.fine_tune_only,
                "hidden_dim": self.model.hidden_dim,
                "input_dim": self.model.input_dim,
                "num_classes": self.model.num_classes,
            },
            "points_per_class": self.points_per_class,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClientTaskConfig":
        try:
            m = d["model"]
            spec = ModelSpec(
                input_dim=int(m["input_dim"]),
                hidden_dim=int(m["hidden_dim"]),
                num_classes=int(m["num_classes"]),
                fine_tune_only=bool(m["fine_tune_only"]),
            )
            hp_d = d["hyperparameters"]
            hp = Hyperparameters(
                learning_rate=float(hp_d["learning_rate"]),
                momentum=float(hp_d["momentum"]),
                batch_size=int(hp_d["batch_size"]),
                local_epochs=int(hp_d["local_epochs"]),
            )
            raw_params = d.get("initial_params")
            initial = None
            if raw_params is not None:
                values = params_from_b64(raw_params)
                if values.size != spec.param_count:
                    raise ProtocolError(
                        f"initial_params carries {values.size} values, "
                        f"model needs {spec.param_count}"
                    )
                initial = ParameterVector(values, spec.layer_spans(), spec.freeze_mask())
            classes = tuple((int(cid), str(desc)) for cid, desc in d["classes"])
            return cls(
                model=spec,
                initial_params=initial,
                fine_tune_only=bool(d["fine_tune_only"]),
                points_per_class=int(d["points_per_class"]),
                classes=classes,
                hyperparameters=hp,
            )
        except ProtocolError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed task config: {exc!r}")

    def to_json(self) -> str:
        """The standalone config.json document (byte-stable)."""
        return canonical_json(self.to_dict())


@dataclass(frozen=True)
class CampaignConfig:
    """Server-side campaign definition."""

    rounds: int
    task: ClientTaskConfig
    num_clients: int
    min_fit_clients: int
    seed: int
    strategy: str = "FedAvg"
    eval_mode: str = "server"
    validation_path: str | None = None
    validator_fraction: float = 0.2
    target_accuracy: float | None = None
    round_timeout_ms: int = 30_000
    selection_criteria: ResourceCriteria = field(default_factory=ResourceCriteria)

    def validate(self) -> list[str]:
        problems = []
        if self.rounds < 1:
            problems.append("rounds must be >= 1")
        if self.strategy != "FedAvg":
            problems.append(f"unknown aggregation strategy {self.strategy!r}")
        if self.eval_mode not in ("server", "client"):
            problems.append(f"eval_mode must be 'server' or 'client', got {self.eval_mode!r}")
        if self.eval_mode == "server" and not self.validation_path:
            problems.append("server evaluation requires validation_path")
        if self.eval_mode == "client" and not 0.0 < self.validator_fraction <= 1.0:
            problems.append("validator_fraction must lie in (0, 1]")
        if self.num_clients < 1:
            problems.append("num_clients must be >= 1")
        if self.min_fit_clients < 1:
            problems.append("min_fit_clients must be >= 1")
        if self.min_fit_clients > self.num_clients:
            problems.append("min_fit_clients must not exceed num_clients")
        if self.target_accuracy is not None and not 0.0 <= self.target_accuracy <= 1.0:
            problems.append("target_accuracy must lie in [0, 1]")
        if self.round_timeout_ms < 1:
            problems.append("round_timeout_ms must be positive")
        problems.extend(self.task.validate())
        return problems

    def to_dict(self) -> dict:
        return {
            "eval_mode": self.eval_mode,
            "min_fit_clients": self.min_fit_clients,
            "num_clients": self.num_clients,
            "round_timeout_ms": self.round_timeout_ms,
            "rounds": self.rounds,
            "seed": self.seed,
            "selection_criteria": self.selection_criteria.to_dict(),
            "strategy": self.strategy,
            "target_accuracy": self.target_accuracy,
            "task": self.task.to_dict(),
            "validation_path": self.validation_path,
            "validator_fraction": self.validator_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        try:
            return cls(
                rounds=int(d["rounds"]),
                task=ClientTaskConfig.from_dict(d["task"]),
                num_clients=int(d["num_clients"]),
                min_fit_clients=int(d["min_fit_clients"]),
                seed=int(d["seed"]),
                strategy=str(d.get("strategy", "FedAvg")),
                eval_mode=str(d.get("eval_mode", "server")),
                validation_path=d.get("validation_path"),
                validator_fraction=float(d.get("validator_fraction", 0.2)),
                target_accuracy=None
                if d.get("target_accuracy") is None
                else float(d["target_accuracy"]),
                round_timeout_ms=int(d.get("round_timeout_ms", 30_000)),
                selection_criteria=ResourceCriteria.from_dict(d.get("selection_criteria", {})),
            )
        except ProtocolError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed campaign config: {exc!r}")

    def with_initial_params(self, params: ParameterVector) -> "CampaignConfig":
        return replace(self, task=replace(self.task, initial_params=params))


# ---------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class Message:
    type: str
    campaign: str
    round: int
    body: dict

    def __post_init__(self):
        if self.type not in MESSAGE_TYPES:
            raise ProtocolError(f"unknown message type {self.type!r}")
        if not isinstance(self.campaign, str):
            raise ProtocolError("campaign id must be a string")
        if not isinstance(self.round, int) or isinstance(self.round, bool) or self.round < 0:
            raise ProtocolError("round must be a non-negative integer")
        if not isinstance(self.body, dict):
            raise ProtocolError("message body must be an object")


def _is_str(v) -> bool:
    return isinstance(v, str)


def _is_bool(v) -> bool:
    return isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_finite_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _is_params(v) -> bool:
    if not isinstance(v, str):
        return False
    try:
        params_from_b64(v)
        return True
    except ProtocolError:
        return False


def _is_pos_int(v) -> bool:
    return _is_int(v) and v >= 1


def _is_nonneg_int(v) -> bool:
    return _is_int(v) and v >= 0


def _is_battery(v) -> bool:
    return _is_int(v) and 0 <= v <= 100


def _is_accuracy(v) -> bool:
    return _is_finite_num(v) and 0.0 <= v <= 1.0


def _is_task_body(body: dict) -> bool:
    try:
        ClientTaskConfig.from_dict(body)
        return True
    except ProtocolError:
        return False


_BODY_SCHEMAS: dict[str, dict] = {
    "JoinRequest": {"client_id": _is_str},
    "JoinAccept": {"client_id": _is_str},
    "FitInstruction": {"params": _is_params},
    "FitResult": {
        "client_id": _is_str,
        "num_examples": _is_pos_int,
        "params": _is_params,
        "train_loss": _is_finite_num,
    },
    "EvalInstruction": {"params": _is_params},
    "EvalResult": {
        "accuracy": _is_accuracy,
        "client_id": _is_str,
        "loss": _is_finite_num,
        "num_examples": _is_pos_int,
    },
    "ResourceReport": {
        "battery_pct": _is_battery,
        "client_id": _is_str,
        "memory_mb": _is_nonneg_int,
        "on_wifi": _is_bool,
    },
    "Failure": {"client_id": _is_str, "reason": _is_str},
    "Disconnect": {},
}


def validate_body(msg_type: str, body: dict) -> None:
    """Strict per-type schema check; unknown or missing keys are rejected."""
    if msg_type == "TaskConfig":
        if not _is_task_body(body):
            raise ProtocolError("malformed TaskConfig body")
        return
    schema = _BODY_SCHEMAS[msg_type]
    if set(body.keys()) != set(schema.keys()):
        raise ProtocolError(
            f"{msg_type} body keys {sorted(body)} do not match schema {sorted(schema)}"
        )
    for key, pred in schema.items():
        if not pred(body[key]):
            raise ProtocolError(f"{msg_type} body field {key!r} is invalid")


def encode(msg: Message) -> bytes:
    """Frame a message: u32 big-endian body length, then canonical JSON."""
    validate_body(msg.type, msg.body)
    try:
        payload = canonical_json(
            {"body": msg.body, "campaign": msg.campaign, "round": msg.round, "type": msg.type}
        ).encode("utf-8")
    except ValueError as exc:
        raise ProtocolError(f"cannot encode message: {exc}")
    return struct.pack(">I", len(payload)) + payload


def decode_frames(buffer: bytes) -> tuple[list[Message], bytes]:
    """Pull every complete frame off the front of buffer.

    Returns (messages, remainder); a truncated trailing frame is left in the
    remainder untouched (the needs-more-data signal). Malformed bodies raise
    ProtocolError, after which the connection must be closed.
    """
    messages = []
    view = buffer
    while True:
        if len(view) < 4:
            return messages, view
        (length,) = struct.unpack(">I", view[:4])
        if length > MAX_FRAME_BYTES:
            raise ProtocolError(f"frame of {length} bytes exceeds limit")
        if len(view) < 4 + length:
            return messages, view
        payload = view[4 : 4 + length]
        view = view[4 + length :]
        messages.append(_parse_payload(payload))


def decode(data: bytes) -> Message:
    """Decode exactly one complete frame; truncation raises NeedMoreData."""
    messages, rest = decode_frames(data)
    if not messages:
        raise NeedMoreData(f"incomplete frame ({len(data)} bytes)")
    if rest or len(messages) > 1:
        raise ProtocolError("decode expects exactly one frame")
    return messages[0]


class NeedMoreData(Exception):
    """The buffer does not yet hold a complete frame."""


def _parse_payload(payload: bytes) -> Message:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"frame payload is not UTF-8 JSON: {exc}")
    if not isinstance(obj, dict) or set(obj.keys()) != {"body", "campaign", "round", "type"}:
        raise ProtocolError("frame must carry exactly type/campaign/round/body")
    if not isinstance(obj["type"], str) or obj["type"] not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {obj.get('type')!r}")
    msg = Message(obj["type"], obj["campaign"], obj["round"], obj["body"])
    validate_body(msg.type, msg.body)
    return msg


# ---------------------------------------------------------------------------
# typed payload helpers


def fit_result_body(update: ClientUpdate) -> dict:
    return {
        "client_id": update.client_id,
        "num_examples": update.num_examples,
        "params": params_to_b64(update.params.values),
        "train_loss": float(update.train_loss),
    }


def client_update_from_body(body: dict, spec: ModelSpec) -> ClientUpdate:
    values = params_from_b64(body["params"])
    if values.size != spec.param_count:
        raise ProtocolError(
            f"update carries {values.size} values, model needs {spec.param_count}"
        )
    params = ParameterVector(values, spec.layer_spans(), spec.freeze_mask())
    return ClientUpdate(
        client_id=body["client_id"],
        params=params,
        num_examples=body["num_examples"],
        train_loss=body["train_loss"],
    )


def eval_result_body(result: EvalResult) -> dict:
    return {
        "accuracy": float(result.accuracy),
        "client_id": result.client_id,
        "loss": float(result.loss),
        "num_examples": result.num_examples,
    }


def eval_result_from_body(body: dict) -> EvalResult:
    return EvalResult(
        client_id=body["client_id"],
        num_examples=body["num_examples"],
        loss=body["loss"],
        accuracy=body["accuracy"],
    )


# ---------------------------------------------------------------------------
# socket channel


class Channel:
    """One connection's framing state; not shared between connections."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buffer = b""
        self._pending: list[Message] = []

    def send(self, msg: Message) -> None:
        self._sock.sendall(encode(msg))

    def recv(self, timeout: float | None = None) -> Message | None:
        """Next message, or None on clean EOF. Raises TimeoutError on timeout."""
        while not self._pending:
            self._sock.settimeout(timeout)
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise TimeoutError("timed out waiting for a frame")
            if not chunk:
                if self._buffer:
                    raise ProtocolError("connection closed mid-frame")
                return None
            self._buffer += chunk
            msgs, self._buffer = decode_frames(self._buffer)
            self._pending.extend(msgs)
        return self._pending.pop(0)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
