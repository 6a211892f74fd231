"""Deterministic experiment driver: synthetic datasets, IID partitioning,
client-count/data-volume sweeps, and per-round resource measurement.

Synthetic data replaces curated photos with Gaussian blobs on axis-aligned
class means (pairwise distance = class_separation). Defaults below were
calibrated so the reference classifier trained with the default
hyperparameters (lr 0.001, momentum 0.9, batch 32, one local epoch)
comfortably clears 0.9 validation accuracy within 20 federated rounds at
n=10 clients and 20 examples per class; see README for the sweep numbers.

Sweeps run clients in-process with a virtual clock, so rerunning the same
sweep spec reproduces the output CSVs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import resource
import statistics
import subprocess
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .client import ClientCore, DeviceProfile, LocalStore
from .datafiles import save_examples
from .errors import ConfigError, FloatError
from .model import Hyperparameters, LabeledExample, ModelSpec, init_parameters, local_train
from .protocol import CampaignConfig, ClientTaskConfig, ResourceCriteria, canonical_json
from .seeding import derive_seed
from .server import InProcessBackend, run_campaign

log = logging.getLogger("float.sim")

SIM_HIDDEN_DIM = 256  # calibrated width; see module docstring
CSV_HEADER = "n,x,seed,round,loss,accuracy,wall_ms"


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 5
    feature_dim: int = 16
    class_separation: float = 10.0
    noise_sigma: float = 1.0
    val_per_class: int = 100

    def __post_init__(self):
        if min(self.num_classes, self.feature_dim, self.val_per_class) < 1:
            raise ConfigError("dataset sizes must be positive")
        if self.class_separation <= 0 or self.noise_sigma <= 0:
            raise ConfigError("class_separation and noise_sigma must be positive")
        if self.feature_dim < self.num_classes:
            raise ConfigError("feature_dim must be >= num_classes for axis-aligned means")

    def to_dict(self) -> dict:
        return {
            "class_separation": self.class_separation,
            "feature_dim": self.feature_dim,
            "noise_sigma": self.noise_sigma,
            "num_classes": self.num_classes,
            "val_per_class": self.val_per_class,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(
            num_classes=int(d.get("num_classes", 5)),
            feature_dim=int(d.get("feature_dim", 16)),
            class_separation=float(d.get("class_separation", 10.0)),
            noise_sigma=float(d.get("noise_sigma", 1.0)),
            val_per_class=int(d.get("val_per_class", 100)),
        )


@dataclass(frozen=True)
class SweepSpec:
    client_counts: tuple[int, ...] = (10, 20, 50, 100)
    per_class_counts: tuple[int, ...] = (10, 20)
    rounds: int = 20
    seeds: tuple[int, ...] = (1, 2, 3)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        if not self.client_counts or not self.per_class_counts or not self.seeds:
            raise ConfigError("sweep lists must be non-empty")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")

    def to_dict(self) -> dict:
        return {
            "client_counts": list(self.client_counts),
            "dataset": self.dataset.to_dict(),
            "per_class_counts": list(self.per_class_counts),
            "rounds": self.rounds,
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        return cls(
            client_counts=tuple(int(n) for n in d.get("client_counts", (10, 20, 50, 100))),
            per_class_counts=tuple(int(x) for x in d.get("per_class_counts", (10, 20))),
            rounds=int(d.get("rounds", 20)),
            seeds=tuple(int(s) for s in d.get("seeds", (1, 2, 3))),
            dataset=DatasetSpec.from_dict(d.get("dataset", {})),
        )


def class_means(spec: DatasetSpec) -> np.ndarray:
    """Axis-aligned means with pairwise distance exactly class_separation."""
    means = np.zeros((spec.num_classes, spec.feature_dim))
    scale = spec.class_separation / np.sqrt(2.0)
    for c in range(spec.num_classes):
        means[c, c] = scale
    return means


def synthesize(
    spec: DatasetSpec, seed: int, train_per_class: int = 200
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Deterministic per seed: (training pool, validation set)."""
    rng = np.random.default_rng(derive_seed(seed, 101))
    means = class_means(spec)
    train, validation = [], []
    for c in range(spec.num_classes):
        pts = means[c] + rng.normal(0.0, spec.noise_sigma, size=(train_per_class, spec.feature_dim))
        train.extend(LabeledExample(p, c) for p in pts)
    for c in range(spec.num_classes):
        pts = means[c] + rng.normal(
            0.0, spec.noise_sigma, size=(spec.val_per_class, spec.feature_dim)
        )
        validation.extend(LabeledExample(p, c) for p in pts)
    return train, validation


def partition_iid(
    pool: list[LabeledExample], n_clients: int, x_per_class: int, seed: int
) -> list[LocalStore]:
    """Give every client exactly x_per_class examples of every class.

    Assignments are disjoint across clients and deterministic per seed.
    """
    by_class: dict[int, list[LabeledExample]] = {}
    for ex in pool:
        by_class.setdefault(ex.label, []).append(ex)
    for label in sorted(by_class):
        need = n_clients * x_per_class
        if len(by_class[label]) < need:
            raise ConfigError(
                f"class {label} has {len(by_class[label])} examples, "
                f"need {need} for {n_clients} clients x {x_per_class}"
            )
    rng = np.random.default_rng(derive_seed(seed, 202))
    assignments: list[list[LabeledExample]] = [[] for _ in range(n_clients)]
    for label in sorted(by_class):
        group = by_class[label]
        order = rng.permutation(len(group))
        for i in range(n_clients):
            chunk = order[i * x_per_class : (i + 1) * x_per_class]
            assignments[i].extend(group[j] for j in chunk)
    return [
        LocalStore.from_examples(examples, seed=derive_seed(seed, 203, i))
        for i, examples in enumerate(assignments)
    ]


def default_task(dataset: DatasetSpec, x_per_class: int, fine_tune: bool = False) -> ClientTaskConfig:
    model = ModelSpec(
        input_dim=dataset.feature_dim,
        hidden_dim=SIM_HIDDEN_DIM,
        num_classes=dataset.num_classes,
        fine_tune_only=fine_tune,
    )
    return ClientTaskConfig(
        model=model,
        initial_params=None,
        fine_tune_only=fine_tune,
        points_per_class=x_per_class,
        classes=tuple((c, f"synthetic blob class {c}") for c in range(dataset.num_classes)),
        hyperparameters=Hyperparameters(),
    )


def build_sim_clients(
    stores: list[LocalStore], seed: int, profiles: list[DeviceProfile] | None = None
) -> list[ClientCore]:
    clients = []
    for i, store in enumerate(stores):
        profile = profiles[i] if profiles else DeviceProfile()
        clients.append(
            ClientCore(
                f"client-{i:03d}", store, profile, seed=derive_seed(seed, 301, i)
            )
        )
    return clients


def run_cell(
    dataset: DatasetSpec,
    n_clients: int,
    x_per_class: int,
    seed: int,
    rounds: int,
    validation_path: str,
    pool: list[LabeledExample],
):
    """One sweep cell: partition, campaign, history."""
    stores = partition_iid(pool, n_clients, x_per_class, derive_seed(seed, n_clients, x_per_class))
    clients = build_sim_clients(stores, derive_seed(seed, n_clients, x_per_class, 7))
    config = CampaignConfig(
        rounds=rounds,
        task=default_task(dataset, x_per_class),
        num_clients=n_clients,
        min_fit_clients=n_clients,
        seed=seed,
        eval_mode="server",
        validation_path=validation_path,
        round_timeout_ms=60_000,
        selection_criteria=ResourceCriteria(),
    )
    backend = InProcessBackend(clients)
    state = run_campaign(config, backend, campaign_id=f"sim-n{n_clients}-x{x_per_class}-s{seed}")
    return state


def run_sweep(spec: SweepSpec, out_dir: str) -> dict:
    """Sweep every (n, x, seed) cell; write results.csv and summary.csv."""
    os.makedirs(out_dir, exist_ok=True)
    data_dir = os.path.join(out_dir, "datasets")
    os.makedirs(data_dir, exist_ok=True)

    max_per_class = max(n * x for n in spec.client_counts for x in spec.per_class_counts)
    result_rows = [CSV_HEADER]
    summary_rows = ["n,x,seed,status,final_round,final_accuracy"]
    for seed in spec.seeds:
        pool, validation = synthesize(spec.dataset, seed, train_per_class=max_per_class)
        validation_path = os.path.join(data_dir, f"validation-seed{seed}.json")
        save_examples(validation_path, validation)
        for n in spec.client_counts:
            for x in spec.per_class_counts:
                try:
                    state = run_cell(
                        spec.dataset, n, x, seed, spec.rounds, validation_path, pool
                    )
                except FloatError as exc:
                    log.error("cell n=%d x=%d seed=%d failed: %s", n, x, seed, exc)
                    summary_rows.append(f"{n},{x},{seed},error: {exc},0,")
                    continue
                for report in state.history:
                    result_rows.append(
                        f"{n},{x},{seed},{report.round},{report.eval_loss!r},"
                        f"{report.eval_accuracy!r},{report.wall_time_ms}"
                    )
                final = state.history[-1]
                summary_rows.append(
                    f"{n},{x},{seed},{state.status},{final.round},{final.eval_accuracy!r}"
                )
                log.info(
                    "cell n=%d x=%d seed=%d: final accuracy %.4f",
                    n, x, seed, final.eval_accuracy,
                )

    results_path = os.path.join(out_dir, "results.csv")
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(results_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(result_rows) + "\n")
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(summary_rows) + "\n")
    return {"results": results_path, "summary": summary_path}


# ---------------------------------------------------------------------------
# round-time / memory measurement


def _measure_in_process(
    fine_tune: bool, runs: int, seed: int, input_dim: int, hidden_dim: int, examples_per_class: int
) -> dict:
    """Time `runs` single-epoch local rounds and report our own peak RSS."""
    dataset = DatasetSpec(feature_dim=input_dim)
    pool, _ = synthesize(dataset, seed, train_per_class=examples_per_class)
    store = LocalStore.from_examples(pool, seed=derive_seed(seed, 401))
    model = ModelSpec(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        num_classes=dataset.num_classes,
        fine_tune_only=fine_tune,
    )
    hp = Hyperparameters()
    params = init_parameters(model, derive_seed(seed, 402))
    local_train(params, store.train_split, hp, derive_seed(seed, 400))  # warm-up, untimed
    round_ms = []
    for r in range(1, runs + 1):
        t0 = time.perf_counter()
        params, _, _ = local_train(params, store.train_split, hp, derive_seed(seed, 403, r))
        round_ms.append((time.perf_counter() - t0) * 1000.0)
    peak_rss_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    return {
        "mode": "fine-tune" if fine_tune else "full-retrain",
        "round_ms": round_ms,
        "median_round_ms": statistics.median(round_ms),
        "peak_rss_mb": peak_rss_mb,
        "trained_params": int((~params.frozen).sum()),
        "frozen_params": int(params.frozen.sum()),
    }


def measure_round(
    fine_tune: bool,
    runs: int = 5,
    seed: int = 0,
    input_dim: int = 256,
    hidden_dim: int = 384,
    examples_per_class: int = 400,
    subprocess_mode: bool = True,
) -> dict:
    """Measure one client's per-round wall time and peak resident memory.

    With subprocess_mode the workload runs in a fresh interpreter (pinned to
    one BLAS thread for stable timing) so the reported peak RSS belongs to
    exactly one client process.
    """
    if not subprocess_mode:
        return _measure_in_process(
            fine_tune, runs, seed, input_dim, hidden_dim, examples_per_class
        )
    cmd = [
        sys.executable,
        "-c",
        "import sys; from floatfl.sim import main; sys.exit(main(sys.argv[1:]))",
        "measure-worker",
        "--fine-tune" if fine_tune else "--full-retrain",
        "--runs", str(runs),
        "--seed", str(seed),
        "--input-dim", str(input_dim),
        "--hidden-dim", str(hidden_dim),
        "--examples-per-class", str(examples_per_class),
    ]
    env = dict(os.environ)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        env[var] = "1"
    out = subprocess.run(cmd, capture_output=True, text=True, check=True, env=env)
    return json.loads(out.stdout)


def measure_table(runs: int = 5, seed: int = 0, **kwargs) -> dict:
    """Fine-tune vs full-retrain rows, analogous to an on-device resource table."""
    rows = [
        measure_round(True, runs=runs, seed=seed, **kwargs),
        measure_round(False, runs=runs, seed=seed, **kwargs),
    ]
    return {"rows": rows}


def render_measure_table(report: dict) -> str:
    lines = [f"{'mode':<14} {'median round':>14} {'peak memory':>13} {'trained params':>15}"]
    for row in report["rows"]:
        lines.append(
            f"{row['mode']:<14} {row['median_round_ms']:>11.1f} ms "
            f"{row['peak_rss_mb']:>10.1f} MB {row['trained_params']:>15d}"
        )
    return "\n".join(lines)


def parse_measure_report(text: str) -> dict:
    """Inverse of the JSON report writer (reports are stored as JSON)."""
    report = json.loads(text)
    if "rows" not in report or not isinstance(report["rows"], list):
        raise ConfigError("measure report must carry a 'rows' list")
    return report


# ---------------------------------------------------------------------------
# data seeding for live demos


def seed_data_files(
    out_dir: str,
    n_clients: int,
    x_per_class: int,
    seed: int = 1,
    rounds: int = 5,
    dataset: DatasetSpec | None = None,
    compute_delay_ms: int = 0,
) -> dict:
    """Write client data/profile files plus a ready-to-run campaign config."""
    dataset = dataset or DatasetSpec()
    os.makedirs(out_dir, exist_ok=True)
    pool, validation = synthesize(dataset, seed, train_per_class=n_clients * x_per_class)
    validation_path = os.path.abspath(os.path.join(out_dir, "validation.json"))
    save_examples(validation_path, validation)
    stores = partition_iid(pool, n_clients, x_per_class, derive_seed(seed, n_clients, x_per_class))
    for i, store in enumerate(stores):
        save_examples(
            os.path.join(out_dir, f"client-{i:03d}-data.json"),
            store.train_split + store.eval_split,
        )
        profile = DeviceProfile(compute_delay_ms=compute_delay_ms)
        with open(
            os.path.join(out_dir, f"client-{i:03d}-profile.json"), "w", encoding="utf-8"
        ) as fh:
            fh.write(canonical_json(profile.to_dict()))
    config = CampaignConfig(
        rounds=rounds,
        task=default_task(dataset, x_per_class),
        num_clients=n_clients,
        min_fit_clients=max(1, n_clients - 1),
        seed=seed,
        eval_mode="server",
        validation_path=validation_path,
        round_timeout_ms=30_000,
    )
    config_path = os.path.join(out_dir, "campaign.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(config.to_dict()))
    return {"campaign": config_path, "validation": validation_path, "clients": n_clients}


# ---------------------------------------------------------------------------
# CLI


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="float-sim", description="Simulation harness")
    sub = ap.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="run a client-count/data-volume sweep")
    p_sweep.add_argument("--spec", required=True, help="sweep spec JSON file")
    p_sweep.add_argument("--out", required=True, help="output directory")

    p_measure = sub.add_parser("measure", help="measure per-round time and memory")
    p_measure.add_argument("--fine-tune", required=True, choices=["true", "false", "both"])
    p_measure.add_argument("--out", required=True, help="output report JSON file")
    p_measure.add_argument("--runs", type=int, default=5)
    p_measure.add_argument("--seed", type=int, default=0)

    p_seed = sub.add_parser("seed-data", help="generate client data/profiles and a campaign file")
    p_seed.add_argument("--out", required=True)
    p_seed.add_argument("--clients", type=int, default=5)
    p_seed.add_argument("--per-class", type=int, default=20)
    p_seed.add_argument("--seed", type=int, default=1)
    p_seed.add_argument("--rounds", type=int, default=5)
    p_seed.add_argument("--compute-delay-ms", type=int, default=0)

    p_worker = sub.add_parser("measure-worker")  # internal: single-process measurement
    mode = p_worker.add_mutually_exclusive_group(required=True)
    mode.add_argument("--fine-tune", action="store_true", dest="fine_tune")
    mode.add_argument("--full-retrain", action="store_false", dest="fine_tune")
    p_worker.add_argument("--runs", type=int, default=5)
    p_worker.add_argument("--seed", type=int, default=0)
    p_worker.add_argument("--input-dim", type=int, default=256)
    p_worker.add_argument("--hidden-dim", type=int, default=256)
    p_worker.add_argument("--examples-per-class", type=int, default=200)

    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.command == "sweep":
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = SweepSpec.from_dict(json.load(fh))
        paths = run_sweep(spec, args.out)
        print(json.dumps(paths, sort_keys=True))
    elif args.command == "measure":
        if args.fine_tune == "both":
            report = measure_table(runs=args.runs, seed=args.seed)
        else:
            report = {
                "rows": [measure_round(args.fine_tune == "true", runs=args.runs, seed=args.seed)]
            }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
        print(render_measure_table(report))
    elif args.command == "seed-data":
        info = seed_data_files(
            args.out,
            args.clients,
            args.per_class,
            seed=args.seed,
            rounds=args.rounds,
            compute_delay_ms=args.compute_delay_ms,
        )
        print(json.dumps(info, sort_keys=True))
    elif args.command == "measure-worker":
        report = _measure_in_process(
            args.fine_tune,
            args.runs,
            args.seed,
            args.input_dim,
            args.hidden_dim,
            args.examples_per_class,
        )
        print(json.dumps(report, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
