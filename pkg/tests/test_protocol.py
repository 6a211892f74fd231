import base64
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floatfl.errors import ProtocolError
from floatfl.model import Hyperparameters, ModelSpec, init_parameters
from floatfl.protocol import (
    CampaignConfig,
    ClientTaskConfig,
    Message,
    NeedMoreData,
    ResourceCriteria,
    decode,
    decode_frames,
    encode,
    params_from_b64,
    params_to_b64,
)

# ---------------------------------------------------------------------------
# strategies

ids = st.text(min_size=1, max_size=12)
finite = st.floats(min_value=-1e9, max_value=1e9, allow_nan=False)
params_b64 = st.lists(finite, min_size=0, max_size=6).map(
    lambda vs: params_to_b64(np.array(vs))
)


def task_body():
    spec = ModelSpec(2, 3, 2)
    task = ClientTaskConfig(
        model=spec,
        initial_params=init_parameters(spec, 1),
        fine_tune_only=False,
        points_per_class=4,
        classes=((0, "left"), (1, "right")),
        hyperparameters=Hyperparameters(),
    )
    return st.just(task.to_dict())


_BODIES = {
    "JoinRequest": st.fixed_dictionaries({"client_id": ids}),
    "JoinAccept": st.fixed_dictionaries({"client_id": ids}),
    "TaskConfig": task_body(),
    "FitInstruction": st.fixed_dictionaries({"params": params_b64}),
    "FitResult": st.fixed_dictionaries(
        {
            "client_id": ids,
            "num_examples": st.integers(1, 10_000),
            "params": params_b64,
            "train_loss": finite,
        }
    ),
    "EvalInstruction": st.fixed_dictionaries({"params": params_b64}),
    "EvalResult": st.fixed_dictionaries(
        {
            "accuracy": st.floats(0, 1, allow_nan=False),
            "client_id": ids,
            "loss": finite,
            "num_examples": st.integers(1, 10_000),
        }
    ),
    "ResourceReport": st.fixed_dictionaries(
        {
            "battery_pct": st.integers(0, 100),
            "client_id": ids,
            "memory_mb": st.integers(0, 1 << 20),
            "on_wifi": st.booleans(),
        }
    ),
    "Failure": st.fixed_dictionaries({"client_id": ids, "reason": ids}),
    "Disconnect": st.just({}),
}


@st.composite
def messages(draw):
    msg_type = draw(st.sampled_from(sorted(_BODIES)))
    return Message(
        type=msg_type,
        campaign=draw(st.text(max_size=10)),
        round=draw(st.integers(0, 1_000_000)),
        body=draw(_BODIES[msg_type]),
    )


# ---------------------------------------------------------------------------
# framing


def sample_message(**overrides):
    kw = dict(type="JoinRequest", campaign="c1", round=0, body={"client_id": "alice"})
    kw.update(overrides)
    return Message(**kw)


@settings(max_examples=200, deadline=None)
@given(messages())
def test_roundtrip_identity(msg):
    assert decode(encode(msg)) == msg


def test_frame_prefix_is_body_length():
    data = encode(Message("Disconnect", "c", 3, {}))
    (length,) = struct.unpack(">I", data[:4])
    assert length == len(data) - 4
    body = json.loads(data[4:].decode("utf-8"))
    assert body["type"] == "Disconnect" and body["body"] == {}


def test_fit_result_params_decode_exactly():
    values = np.array([1.0, 2.0])
    msg = Message(
        "FitResult",
        "c",
        1,
        {"client_id": "a", "num_examples": 2, "params": params_to_b64(values), "train_loss": 0.5},
    )
    decoded = decode(encode(msg))
    # independent decoding: base64 then IEEE-754 little-endian doubles
    raw = base64.b64decode(decoded.body["params"])
    assert struct.unpack("<2d", raw) == (1.0, 2.0)


def test_truncated_prefix_needs_more_data():
    msgs, rest = decode_frames(b"\x00\x00\x01")
    assert msgs == [] and rest == b"\x00\x00\x01"
    with pytest.raises(NeedMoreData):
        decode(b"\x00\x00\x01")


def test_truncated_body_needs_more_data():
    data = encode(sample_message())
    msgs, rest = decode_frames(data[:-3])
    assert msgs == [] and rest == data[:-3]


def test_unknown_type_rejected():
    payload = json.dumps(
        {"body": {}, "campaign": "c", "round": 0, "type": "Bogus"}
    ).encode()
    with pytest.raises(ProtocolError):
        decode_frames(struct.pack(">I", len(payload)) + payload)


def test_malformed_json_rejected():
    payload = b"{nope"
    with pytest.raises(ProtocolError):
        decode_frames(struct.pack(">I", len(payload)) + payload)


def test_missing_top_level_key_rejected():
    payload = json.dumps({"campaign": "c", "round": 0, "type": "Disconnect"}).encode()
    with pytest.raises(ProtocolError):
        decode_frames(struct.pack(">I", len(payload)) + payload)


def test_unexpected_body_key_rejected():
    payload = json.dumps(
        {
            "body": {"client_id": "a", "features": [1, 2]},
            "campaign": "c",
            "round": 0,
            "type": "JoinRequest",
        }
    ).encode()
    with pytest.raises(ProtocolError):
        decode_frames(struct.pack(">I", len(payload)) + payload)


def test_two_back_to_back_frames_recovered_in_order():
    first = sample_message(body={"client_id": "a"})
    second = sample_message(type="Disconnect", round=5, body={})
    buffer = encode(first) + encode(second)
    msgs, rest = decode_frames(buffer)
    assert msgs == [first, second] and rest == b""


def test_frame_stream_split_at_every_offset():
    first = sample_message()
    second = sample_message(type="Failure", body={"client_id": "a", "reason": "x"})
    buffer = encode(first) + encode(second)
    for cut in range(len(buffer) + 1):
        got, rest = decode_frames(buffer[:cut])
        got2, rest2 = decode_frames(rest + buffer[cut:])
        assert got + got2 == [first, second] and rest2 == b""


def test_encode_rejects_non_finite_params():
    with pytest.raises(ProtocolError):
        params_to_b64(np.array([1.0, np.nan]))
    with pytest.raises(ProtocolError):
        encode(
            Message(
                "EvalResult",
                "c",
                0,
                {"accuracy": 0.5, "client_id": "a", "loss": float("inf"), "num_examples": 1},
            )
        )


def test_params_b64_roundtrip_bit_exact():
    values = np.array([0.1, -1.5e300, 7e-320, 0.0])
    assert np.array_equal(params_from_b64(params_to_b64(values)), values)


def test_params_b64_rejects_garbage():
    with pytest.raises(ProtocolError):
        params_from_b64("!!!not base64!!!")
    with pytest.raises(ProtocolError):
        params_from_b64(base64.b64encode(b"12345").decode())  # not a multiple of 8


def test_message_invariants():
    with pytest.raises(ProtocolError):
        Message("JoinRequest", "c", -1, {"client_id": "a"})
    with pytest.raises(ProtocolError):
        Message("NotAType", "c", 0, {})


def test_encoded_bytes_deterministic():
    msg = sample_message()
    assert encode(msg) == encode(msg)


# ---------------------------------------------------------------------------
# task / campaign config schemas


def make_task(fine_tune=False, with_params=True):
    spec = ModelSpec(3, 4, 3, fine_tune_only=fine_tune)
    return ClientTaskConfig(
        model=spec,
        initial_params=init_parameters(spec, 2) if with_params else None,
        fine_tune_only=fine_tune,
        points_per_class=10,
        classes=tuple((c, f"class {c}") for c in range(3)),
        hyperparameters=Hyperparameters(),
    )


def test_task_config_roundtrip():
    task = make_task(fine_tune=True)
    back = ClientTaskConfig.from_dict(task.to_dict())
    assert back.model == task.model
    assert back.classes == task.classes
    assert back.hyperparameters == task.hyperparameters
    assert np.array_equal(back.initial_params.values, task.initial_params.values)
    assert back.initial_params.frozen.sum() == task.model.freeze_mask().sum()


def test_task_config_json_byte_stable():
    a = make_task().to_json()
    b = make_task().to_json()
    assert a == b
    assert json.loads(a)  # valid standalone document


def test_task_config_validation():
    task = make_task()
    assert task.validate() == []
    bad = ClientTaskConfig(
        model=task.model,
        initial_params=None,
        fine_tune_only=True,  # disagrees with model.fine_tune_only
        points_per_class=0,
        classes=((1, "one"), (0, "zero")),
        hyperparameters=Hyperparameters(),
    )
    problems = bad.validate()
    assert any("class ids" in p for p in problems)
    assert any("points_per_class" in p for p in problems)
    assert any("fine_tune_only" in p for p in problems)


def test_campaign_config_roundtrip_and_validation(tmp_path):
    config = CampaignConfig(
        rounds=5,
        task=make_task(),
        num_clients=4,
        min_fit_clients=3,
        seed=11,
        eval_mode="server",
        validation_path=str(tmp_path / "val.json"),
        target_accuracy=0.9,
        selection_criteria=ResourceCriteria(min_battery_pct=20, require_wifi=True),
    )
    back = CampaignConfig.from_dict(config.to_dict())
    assert back.to_dict() == config.to_dict()
    assert config.validate() == []

    bad = CampaignConfig.from_dict({**config.to_dict(), "min_fit_clients": 9})
    assert any("min_fit_clients" in p for p in bad.validate())
    bad2 = CampaignConfig.from_dict({**config.to_dict(), "validation_path": None})
    assert any("validation_path" in p for p in bad2.validate())
    bad3 = CampaignConfig.from_dict({**config.to_dict(), "strategy": "QffedAvg"})
    assert any("strategy" in p for p in bad3.validate())


def test_campaign_config_client_mode_fraction():
    config = CampaignConfig(
        rounds=1,
        task=make_task(),
        num_clients=2,
        min_fit_clients=1,
        seed=0,
        eval_mode="client",
        validator_fraction=1.0,
    )
    assert config.validate() == []
    bad = CampaignConfig.from_dict({**config.to_dict(), "validator_fraction": 0.0})
    assert any("validator_fraction" in p for p in bad.validate())
