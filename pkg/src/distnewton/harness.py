"""Synchronous distributed training loop, simulated in-process.

Each round every worker reads the same parameter snapshot, runs its local
SGD steps on its own shard batches, and reports (theta_k, grad at
theta_k).  Only when all m reports are in does the server aggregate, so
the barrier is the end of the worker loop itself.  Workers may execute on
a thread pool; results land in worker-indexed slots and every reduction
runs in worker order, which keeps runs bit-identical regardless of
scheduling.

Worker randomness comes from independent streams keyed by
(seed, worker_id, global_round), so no worker's draw depends on any
other's, and a fixed seed pins the whole trajectory.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, emit_config
from .data import Dataset, load_idx, shard, synthetic_blobs
from .objectives import Batch, MlpObjective, MlpSpec, QuadraticObjective, RosenbrockObjective
from .operator import (
    WorkerReport,
    build_operator,
    center_reports,
    lr_cap,
    newton_update,
)

STATUS_COMPLETED = "completed"
STATUS_DIVERGED = "diverged"


class DivergedError(RuntimeError):
    """A worker or the server produced non-finite numbers."""


class ConfigIncompleteError(ValueError):
    """The config and supplied data do not line up."""


@dataclass(frozen=True)
class RoundStats:
    sigma: np.ndarray  # full singular spectrum of the round (empty for averaging)
    j: int
    tau_used: float

    @property
    def sigma_max(self) -> float:
        return float(self.sigma[0]) if self.sigma.size else 0.0


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_nll: float
    sigma_max: float
    retained_j: float
    wall_time_s: float


@dataclass(frozen=True)
class RunHistory:
    config: dict          # resolved key -> serialized value
    records: list
    status: str

    @property
    def final_nll(self) -> float:
        return self.records[-1].train_nll if self.records else float("nan")


def per_worker_batch_sizes(global_batch: int, m: int) -> list[int]:
    """Split the global batch across workers; remainder to lowest indices."""
    base, rem = divmod(global_batch, m)
    return [base + (1 if k < rem else 0) for k in range(m)]


def rounds_per_epoch(n_samples: int, global_batch: int, local_steps: int) -> int:
    """Rounds so one epoch consumes about the whole dataset once.

    Every round each worker uses local_steps batches for updates plus one
    for the reported gradient, so a round costs (local_steps + 1) *
    global_batch samples in total, independent of m.  That keeps the
    fixed-global-batch comparison fair across worker counts.
    """
    return max(1, n_samples // ((local_steps + 1) * global_batch))


class _WorkerFeed:
    """Batch schedule for one worker and one epoch.

    The worker's shard (in permutation order) is cut into consecutive
    chunks of its per-worker batch size, tiling the shard if the round
    count needs more chunks than one pass provides.
    """

    def __init__(self, dataset: Dataset, indices: np.ndarray, batch_size: int, chunks: int):
        needed = chunks * batch_size
        if indices.shape[0] == 0:
            raise ValueError("worker received an empty shard")
        reps = -(-needed // indices.shape[0])  # ceil
        self.indices = np.tile(indices, reps)[:needed] if reps > 1 else indices[:needed]
        self.dataset = dataset
        self.batch_size = batch_size

    def batch(self, chunk: int) -> Batch:
        sel = self.indices[chunk * self.batch_size : (chunk + 1) * self.batch_size]
        return Batch(self.dataset.inputs[:, sel], self.dataset.labels[sel])


def worker_round(theta_read, objective, batches, local_steps, local_lr, rng, jitter=0.0):
    """One worker's round: s local SGD steps, then the report gradient.

    `batches` supplies local_steps + 1 minibatches (None entries for
    deterministic objectives).  The reported gradient is evaluated at the
    updated parameters on the final, fresh batch.  Optional jitter
    perturbs the starting point; it is what makes workers explore
    different regions when the objective itself has no stochasticity.
    """
    theta = np.asarray(theta_read, dtype=np.float64).copy()
    if jitter > 0.0:
        theta += jitter * rng.standard_normal(theta.shape[0])
    # overflow here is a detected outcome (divergence), not an anomaly
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(local_steps):
            theta -= local_lr * objective.gradient(theta, batches[step])
        grad = objective.gradient(theta, batches[local_steps])
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(grad))):
        raise DivergedError("worker produced non-finite parameters or gradient")
    return WorkerReport(theta, grad)


def server_round(reports, lam, tau, use_lr_cap, aggregator):
    """Aggregate one round of reports into the next shared parameters.

    distnewton: center the reports, build the rank-j operator, take the
    quasi-Newton step (optionally capping tau at 1/sigma_max).
    sgd_average: plain parameter averaging, the baseline server.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("server_round: no reports")
    if aggregator == "sgd_average":
        theta_new = np.mean(np.column_stack([r.theta for r in reports]), axis=1)
        return theta_new, RoundStats(np.empty(0), 0, tau)
    batch = center_reports(reports)
    op = build_operator(batch, lam)
    tau_used = lr_cap(tau, op) if use_lr_cap else tau
    theta_bar, g_bar = batch.theta_bar, batch.g_bar
    del batch  # the centered matrices are dead weight past this point
    theta_new = newton_update(op, theta_bar, g_bar, tau_used)
    return theta_new, RoundStats(op.sigma_full, op.j, tau_used)


def build_objective(cfg: ExperimentConfig):
    if cfg.objective_kind == "quadratic":
        return QuadraticObjective.seeded(cfg.objective_dim, cfg.quad_condition, cfg.objective_seed)
    if cfg.objective_kind == "rosenbrock":
        return RosenbrockObjective(cfg.objective_dim)
    return MlpObjective(MlpSpec(tuple(cfg.mlp_layers), cfg.activation))


def load_dataset(cfg: ExperimentConfig) -> Dataset | None:
    if cfg.objective_kind != "mlp" or cfg.data_kind == "none":
        return None
    if cfg.data_kind == "mnist":
        ds = load_idx(cfg.data_images, cfg.data_labels)
    else:
        ds = synthetic_blobs(
            cfg.synth_features,
            cfg.synth_classes,
            cfg.synth_samples,
            cfg.synth_seed,
            spread=cfg.synth_spread,
            density=cfg.synth_density,
        )
    if cfg.data_limit > 0:
        ds = ds.subset(cfg.data_limit)
    return ds


def initial_theta(cfg: ExperimentConfig, objective) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed])
    if isinstance(objective, MlpObjective):
        return objective.init_theta(rng)
    return rng.standard_normal(objective.dim)


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def run_experiment(cfg: ExperimentConfig, dataset=None, threads=1, round_observer=None) -> RunHistory:
    """Run the full synchronous experiment described by cfg.

    Per epoch the dataset is resharded with a fresh seeded permutation and
    rounds run until the epoch's sample budget is spent; the full-train
    NLL is recorded after each epoch.  Any non-finite parameter, gradient,
    or loss stops the run with status 'diverged' (a flag record with NaN
    loss marks the broken epoch).  `round_observer`, when given, is called
    after every server aggregation with (epoch, round, theta_read,
    reports, theta_new, stats).
    """
    cfg.validate()
    objective = build_objective(cfg)
    if dataset is None:
        dataset = load_dataset(cfg)
    if isinstance(objective, MlpObjective):
        if dataset is None:
            raise ConfigIncompleteError("mlp objective needs a dataset")
        if dataset.feature_count != cfg.mlp_layers[0]:
            raise ConfigIncompleteError(
                f"dataset has {dataset.feature_count} features, model expects {cfg.mlp_layers[0]}"
            )
        full_batch = Batch(dataset.inputs, dataset.labels)
    else:
        full_batch = None

    theta = initial_theta(cfg, objective)
    resolved = {line.split(" = ")[0]: line.split(" = ", 1)[1] for line in emit_config(cfg).splitlines()}
    records: list[EpochRecord] = []
    stochastic = bool(getattr(objective, "is_stochastic", False)) and dataset is not None
    s = cfg.local_steps
    if stochastic:
        n_rounds = rounds_per_epoch(dataset.sample_count, cfg.global_batch, s)
        sizes = per_worker_batch_sizes(cfg.global_batch, cfg.m)
    else:
        n_rounds = 1

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    status = STATUS_COMPLETED
    try:
        for epoch in range(cfg.epochs):
            tic = time.perf_counter()
            sigma_max = 0.0
            j_total = 0.0
            if stochastic:
                plan = shard(dataset, cfg.m, _epoch_seed(cfg.seed, epoch))
                feeds = [
                    _WorkerFeed(dataset, plan.worker_indices(k), sizes[k], n_rounds * (s + 1))
                    for k in range(cfg.m)
                ]
            diverged = False
            for rnd in range(n_rounds):
                global_round = epoch * n_rounds + rnd

                def one_worker(k, snapshot=theta, rid=global_round):
                    rng = np.random.default_rng([cfg.seed, k, rid])
                    if stochastic:
                        base = rnd * (s + 1)
                        batches = [feeds[k].batch(base + t) for t in range(s + 1)]
                    else:
                        batches = [None] * (s + 1)
                    return worker_round(
                        snapshot, objective, batches, s, cfg.local_lr, rng, cfg.worker_jitter
                    )

                try:
                    if pool is not None:
                        reports = list(pool.map(one_worker, range(cfg.m)))
                    else:
                        reports = [one_worker(k) for k in range(cfg.m)]
                    theta_new, stats = server_round(
                        reports, cfg.lam, cfg.server_tau, cfg.use_lr_cap, cfg.aggregator
                    )
                    if not np.all(np.isfinite(theta_new)):
                        raise DivergedError("server produced non-finite parameters")
                except DivergedError:
                    diverged = True
                    break
                if round_observer is not None:
                    round_observer(epoch, rnd, theta, reports, theta_new, stats)
                theta = theta_new
                sigma_max = max(sigma_max, stats.sigma_max)
                j_total += stats.j

            wall = time.perf_counter() - tic
            if diverged:
                records.append(EpochRecord(epoch, float("nan"), sigma_max, j_total / n_rounds, wall))
                status = STATUS_DIVERGED
                break
            with np.errstate(over="ignore", invalid="ignore"):
                nll = objective.value(theta, full_batch)
            records.append(EpochRecord(epoch, nll, sigma_max, j_total / n_rounds, wall))
            if not np.isfinite(nll):
                status = STATUS_DIVERGED
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return RunHistory(resolved, records, status)
