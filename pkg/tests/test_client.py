import threading

import numpy as np
import pytest

from floatfl.aggregation import ClientUpdate, EvalResult
from floatfl.client import (
    ClientCore,
    ClientSession,
    DeviceProfile,
    LocalStore,
    TaskRefused,
)
from floatfl.model import (
    Hyperparameters,
    LabeledExample,
    ModelSpec,
    forward_loss,
    init_parameters,
    local_train,
    round_seed,
)
from floatfl.protocol import ClientTaskConfig, ResourceCriteria
from floatfl.server import TcpClientPool, meets_criteria
from floatfl.sim import DatasetSpec, synthesize

from conftest import make_batch


def make_task(spec=None, fine_tune=False, points=10):
    spec = spec or ModelSpec(4, 6, 3, fine_tune_only=fine_tune)
    return ClientTaskConfig(
        model=spec,
        initial_params=None,
        fine_tune_only=spec.fine_tune_only,
        points_per_class=points,
        classes=tuple((c, f"class {c}") for c in range(spec.num_classes)),
        hyperparameters=Hyperparameters(),
    )


def make_store(spec, per_class=10, seed=0):
    pool, _ = synthesize(
        DatasetSpec(num_classes=spec.num_classes, feature_dim=spec.input_dim),
        seed,
        train_per_class=per_class,
    )
    return LocalStore.from_examples(pool, seed=seed)


def make_core(spec=None, accept=True, profile=None, seed=3, per_class=10):
    spec = spec or ModelSpec(4, 6, 3)
    store = make_store(spec, per_class=per_class, seed=seed)
    core = ClientCore("c1", store, profile or DeviceProfile(), seed=seed, accept_task=accept)
    core.receive_task(make_task(spec)) if accept else None
    return core


# ---------------------------------------------------------------------------
# LocalStore


def test_store_split_disjoint_and_stable(small_spec):
    examples = make_batch(small_spec, 50, seed=1)
    a = LocalStore.from_examples(examples, seed=9)
    b = LocalStore.from_examples(examples, seed=9)
    assert [id(x) for x in a.train_split] == [id(x) for x in b.train_split]
    assert [id(x) for x in a.eval_split] == [id(x) for x in b.eval_split]
    assert set(map(id, a.train_split)).isdisjoint(map(id, a.eval_split))
    assert len(a.train_split) + len(a.eval_split) == 50


def test_store_split_is_twenty_percent_per_class(small_spec):
    examples = []
    for c in range(small_spec.num_classes):
        examples.extend(
            LabeledExample(np.full(small_spec.input_dim, float(i)), c) for i in range(20)
        )
    store = LocalStore.from_examples(examples, seed=4)
    eval_by_class = {}
    for ex in store.eval_split:
        eval_by_class[ex.label] = eval_by_class.get(ex.label, 0) + 1
    assert all(count == 4 for count in eval_by_class.values())
    assert store.per_class_counts == {c: 20 for c in range(small_spec.num_classes)}


# ---------------------------------------------------------------------------
# task handling


def test_task_accept_and_class_subset(small_spec):
    core = make_core(small_spec)
    assert core.task is not None


def test_class_mismatch_refused(small_spec):
    store = make_store(small_spec)
    store.per_class_counts[7] = 1  # local data with an unknown class id
    core = ClientCore("c1", store, DeviceProfile())
    with pytest.raises(TaskRefused) as err:
        core.receive_task(make_task(small_spec))
    assert err.value.reason == "class-mismatch"


def test_consent_gate(small_spec):
    core = make_core(small_spec, accept=False)
    with pytest.raises(TaskRefused) as err:
        core.receive_task(make_task(small_spec))
    assert err.value.reason == "task-declined"


# ---------------------------------------------------------------------------
# fit / evaluate


def test_fit_fine_tune_keeps_hidden_layer_bits(small_spec):
    spec = ModelSpec(4, 6, 3, fine_tune_only=True)
    core = make_core(spec)
    params = init_parameters(spec, 5)
    out = core.fit(1, params.values.copy())
    assert isinstance(out, ClientUpdate)
    mask = spec.freeze_mask()
    assert np.array_equal(out.params.values[mask], params.values[mask])
    assert not np.array_equal(out.params.values[~mask], params.values[~mask])


def test_fit_matches_direct_local_train(small_spec):
    core = make_core(small_spec, seed=8)
    params = init_parameters(small_spec, 1)
    update = core.fit(3, params.values.copy())
    assert isinstance(update, ClientUpdate)
    expected, n, loss = local_train(
        params, core.store.train_split, core.task.hyperparameters, round_seed(8, 3)
    )
    assert np.array_equal(update.params.values, expected.values)
    assert update.num_examples == n == len(core.store.train_split)
    assert update.train_loss == loss


def test_fit_num_examples_constant_across_rounds(small_spec):
    core = make_core(small_spec)
    params = init_parameters(small_spec, 1)
    counts = {core.fit(r, params.values.copy()).num_examples for r in range(1, 4)}
    assert counts == {len(core.store.train_split)}


def test_fit_fail_round_crashes_silently(small_spec):
    core = make_core(small_spec, profile=DeviceProfile(fail_round=2))
    params = init_parameters(small_spec, 1)
    assert core.fit(2, params.values.copy()) is None
    assert core.fit(1, params.values.copy()) is not None


def test_fit_no_data(small_spec):
    core = make_core(small_spec)
    core.store.train_split = []
    assert core.fit(1, init_parameters(small_spec, 1).values) == "no-data"


def test_evaluate_matches_forward_loss(small_spec):
    core = make_core(small_spec)
    params = init_parameters(small_spec, 2)
    result = core.evaluate(1, params.values.copy())
    assert isinstance(result, EvalResult)
    loss, acc = forward_loss(params, core.store.eval_split)
    assert result.loss == loss and result.accuracy == acc
    assert result.num_examples == len(core.store.eval_split)


def test_evaluate_no_eval_data(small_spec):
    core = make_core(small_spec)
    core.store.eval_split = []
    assert core.evaluate(1, init_parameters(small_spec, 1).values) == "no-eval-data"


def test_resource_report_roundtrips_profile(small_spec):
    profile = DeviceProfile(memory_mb=512, battery_pct=37, on_wifi=False)
    core = make_core(small_spec, profile=profile)
    body = core.resource_body()
    assert body == {
        "battery_pct": 37,
        "client_id": "c1",
        "memory_mb": 512,
        "on_wifi": False,
    }
    assert not meets_criteria(body, ResourceCriteria(require_wifi=True))
    assert meets_criteria(body, ResourceCriteria(min_battery_pct=30))


# ---------------------------------------------------------------------------
# live sessions against a real pool


@pytest.fixture
def live_pool():
    pool = TcpClientPool(("127.0.0.1", 0))
    yield pool
    pool.close()


def start_session(pool, core) -> ClientSession:
    session = ClientSession(pool.address, core)
    session.join()
    thread = threading.Thread(target=session.run, daemon=True)
    thread.start()
    return session


def test_duplicate_join_rejected(live_pool, small_spec):
    first = make_core(small_spec)
    start_session(live_pool, first)
    dup = ClientCore("c1", make_store(small_spec), DeviceProfile())
    session = ClientSession(live_pool.address, dup)
    with pytest.raises(ConnectionError, match="duplicate-id"):
        session.join()


def test_profile_update_changes_eligibility(live_pool, small_spec):
    profile = DeviceProfile(battery_pct=10)
    core = ClientCore("c-low", make_store(small_spec), profile, accept_task=True)
    session = start_session(live_pool, core)
    live_pool.wait_for_clients(1, ResourceCriteria(), timeout_s=5)

    criteria = ResourceCriteria(min_battery_pct=20)
    snapshot = live_pool.pool_snapshot()
    assert not meets_criteria(snapshot["c-low"], criteria)

    profile.battery_pct = 95  # recharge, then re-report
    session.report_resources()
    assert live_pool.wait_for_clients(1, criteria, timeout_s=5)
    assert meets_criteria(live_pool.pool_snapshot()["c-low"], criteria)


def test_disconnect_removes_from_pool(live_pool, small_spec):
    core = make_core(small_spec)
    session = start_session(live_pool, core)
    live_pool.wait_for_clients(1, ResourceCriteria(), timeout_s=5)
    session.close()
    deadline_pool = {}
    for _ in range(100):
        deadline_pool = live_pool.pool_snapshot()
        if not deadline_pool:
            break
        threading.Event().wait(0.05)
    assert deadline_pool == {}
