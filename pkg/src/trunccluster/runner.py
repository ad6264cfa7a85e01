"""Training runs for the six algorithms, traces, parity and speedup accounting."""

from __future__ import annotations

import enum
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    Dataset,
    DistanceCounter,
    DistanceKind,
    InvalidArgument,
    ModelParams,
    all_distances,
    nearest_distances,
    nearest_sq_distances,
    paired_distances,
)
from .gmm_em import free_energy_from_dists, init_sigma_sq, log_likelihood, mstep
from .seeding import seed_means_dsq
from .var_estep import (
    NeighborIndex,
    TruncationState,
    estimate_neighbors,
    exhaustive_neighbors,
    init_search_space,
    init_truncation,
    search_truncation,
    truncated_responsibilities,
    update_truncation,
)

SCHEMA_VERSION = 1
CONVERGENCE_PATIENCE = 3


class Algorithm(str, enum.Enum):
    GMM_FULL = "gmm_full"
    KMEANS_FULL = "kmeans_full"
    VAR_GMM_X = "var_gmm_x"
    VAR_GMM_S = "var_gmm_s"
    VAR_KMEANS_X = "var_kmeans_x"
    VAR_KMEANS_S = "var_kmeans_s"

    @property
    def variational(self) -> bool:
        return self.value.startswith("var_")

    @property
    def gmm(self) -> bool:
        return "gmm" in self.value

    @property
    def estimated(self) -> bool:
        return self.value.endswith("_s")


@dataclass(frozen=True)
class RunConfig:
    """One training run.

    ``c_prime`` may be left as None: it is forced to G for var-GMM, to 1 for
    the k-means family and to C for the full GMM. ``max_iters`` caps EM
    iterations; initial E-steps come on top of it.
    """

    algorithm: Algorithm
    n_clusters: int
    g: Optional[int] = None
    c_prime: Optional[int] = None
    explore: bool = False
    initial_esteps: int = 0
    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0
    with_loglik: bool = False
    deterministic: bool = False
    threads: int = 1

    def __post_init__(self):
        alg = Algorithm(self.algorithm)
        object.__setattr__(self, "algorithm", alg)
        c = self.n_clusters
        if c < 1:
            raise InvalidArgument(f"need C >= 1, got {c}")
        if self.initial_esteps < 0 or self.max_iters < 0:
            raise InvalidArgument("initial_esteps and max_iters must be >= 0")
        if not self.tol > 0:
            raise InvalidArgument(f"tol must be positive, got {self.tol}")
        if self.threads < 1:
            raise InvalidArgument("threads must be >= 1")
        g, cp = self.g, self.c_prime
        if not alg.variational:
            g = c
            cp = c if alg is Algorithm.GMM_FULL else 1
            if self.explore:
                raise InvalidArgument("exploration applies only to the variational algorithms")
        else:
            if g is None:
                raise InvalidArgument(f"{alg.value} needs a neighborhood size G")
            if not 1 <= g <= c:
                raise InvalidArgument(f"need 1 <= G <= C, got G={g}, C={c}")
            if alg.gmm:
                if cp is not None and cp != g:
                    raise InvalidArgument(
                        f"var-GMM uses C'=G (got C'={cp}, G={g})")
                cp = g
            else:
                if cp is not None and cp != 1:
                    raise InvalidArgument(f"var-k-means keeps C'=1 (got C'={cp})")
                if g < 2:
                    raise InvalidArgument(
                        f"var-k-means requires C'=1 < G <= C (got G={g}, C={c})")
                cp = 1
        object.__setattr__(self, "g", int(g))
        object.__setattr__(self, "c_prime", int(cp))

    @property
    def effective_threads(self) -> int:
        return 1 if self.deterministic else self.threads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["algorithm"] = self.algorithm.value
        return d


@dataclass
class IterationRecord:
    index: int
    free_energy: float
    quantization_error: float
    log_likelihood: Optional[float]
    data_to_cluster_evals: int
    cluster_to_cluster_evals: int
    wall_seconds: float

    def to_json(self) -> str:
        d = {"schema": SCHEMA_VERSION}
        d.update(asdict(self))
        return json.dumps(d)


@dataclass
class RunTrace:
    algorithm: str
    n_points: int
    n_clusters: int
    c_prime: int
    g: int
    explore: bool
    initial_esteps: int
    records: list = field(default_factory=list)
    converged: bool = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def quantization_errors(self) -> np.ndarray:
        return np.array([r.quantization_error for r in self.records])

    @property
    def free_energies(self) -> np.ndarray:
        return np.array([r.free_energy for r in self.records])

    @property
    def final_quantization_error(self) -> float:
        return self.records[-1].quantization_error

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def meta(self) -> dict:
        return {k: getattr(self, k) for k in
                ("algorithm", "n_points", "n_clusters", "c_prime", "g", "explore",
                 "initial_esteps", "converged")}


def quantization_error(data: Dataset, params: ModelParams,
                       counter: DistanceCounter | None = None) -> float:
    """sum_n min_c ||y(n) - mu_c||^2 over all C clusters."""
    _, sq = nearest_sq_distances(data.points, params.means)
    if counter is not None:
        counter.add(DistanceKind.DATA_CLUSTER, data.n_points * params.n_clusters)
    return float(sq.sum())


def params_digest(params: ModelParams) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(params.means, dtype="<f8").tobytes())
    h.update(np.float64(params.sigma_sq).astype("<f8").tobytes())
    return h.hexdigest()


Observer = Callable[[str, int, ModelParams, TruncationState], None]


class _Trainer:
    """Holds the per-run mutable state: params, K(n), G_c and the RNG streams."""

    def __init__(self, config: RunConfig, data: Dataset):
        self.cfg = config
        self.data = data
        self.threads = config.effective_threads
        self.train = DistanceCounter()
        self.evals = DistanceCounter()
        self.seeding = DistanceCounter()
        seed_ss, init_ss, explore_ss, fill_ss = np.random.SeedSequence(config.seed).spawn(4)
        self.explore_rng = np.random.default_rng(explore_ss)
        self.fill_rng = np.random.default_rng(fill_ss)

        c = config.n_clusters
        means = seed_means_dsq(data, c, seed_ss, self.seeding)
        self.params = ModelParams(means, init_sigma_sq(data, means))
        self.nbrs: NeighborIndex | None = None
        self.first_search: np.ndarray | None = None
        alg = config.algorithm
        if alg.variational:
            init_rng = np.random.default_rng(init_ss)
            sets, self.nbrs = init_truncation(data.n_points, c, config.c_prime, config.g, init_rng)
            self.trunc = TruncationState(sets, self._member_dists(sets, self.evals))
            if alg.estimated:
                self.first_search = init_search_space(sets, c, config.g, init_rng)
        else:
            self.trunc = self._full_truncation(self.evals)

    def _member_dists(self, sets: np.ndarray, counter: DistanceCounter) -> np.ndarray:
        n, k = sets.shape
        rows = np.repeat(np.arange(n), k)
        d = paired_distances(self.data.points, self.params.means, rows, sets.ravel(), counter,
                             threads=self.threads)
        return d.reshape(n, k)

    def _full_truncation(self, counter: DistanceCounter) -> TruncationState:
        y, means = self.data.points, self.params.means
        if self.cfg.algorithm is Algorithm.GMM_FULL:
            d = all_distances(y, means, counter, threads=self.threads)
            n, c = d.shape
            return TruncationState(np.broadcast_to(np.arange(c), (n, c)).copy(), d)
        j, d = nearest_distances(y, means, counter, threads=self.threads)
        return TruncationState(j[:, None], d[:, None])

    def estep(self) -> None:
        cfg = self.cfg
        alg = cfg.algorithm
        if not alg.variational:
            self.trunc = self._full_truncation(self.train)
            return
        if not alg.estimated:
            self.nbrs = exhaustive_neighbors(self.params, cfg.g, self.train, self.threads)
        if self.first_search is not None:
            self.trunc, search = search_truncation(
                self.data, self.params, self.trunc.sets, self.first_search, cfg.explore,
                self.explore_rng, self.train, self.threads)
            self.first_search = None
        else:
            self.trunc, search = update_truncation(
                self.data, self.params, self.trunc.sets, self.nbrs, cfg.explore,
                self.explore_rng, self.train, self.threads)
        if alg.estimated:
            self.nbrs, _ = estimate_neighbors(search, self.trunc, cfg.n_clusters, cfg.g,
                                              previous=self.nbrs, rng=self.fill_rng)

    def mstep(self) -> None:
        resp = truncated_responsibilities(self.trunc, self.params.sigma_sq)
        self.params = mstep(self.data, resp, self.params)

    def free_energy(self, fresh: bool) -> float:
        d = self._member_dists(self.trunc.sets, self.evals) if fresh else self.trunc.dists
        return free_energy_from_dists(d, self.cfg.n_clusters, self.data.dims, self.params.sigma_sq)

    def record(self, index: int, fresh: bool, started: float) -> IterationRecord:
        d2c, c2c = self.train.snapshot()
        self.train.reset()
        ll = None
        if self.cfg.with_loglik:
            ll = log_likelihood(self.data, self.params, self.evals, threads=self.threads)
        wall = 0.0 if self.cfg.deterministic else time.perf_counter() - started
        return IterationRecord(
            index=index,
            free_energy=self.free_energy(fresh),
            quantization_error=quantization_error(self.data, self.params, self.evals),
            log_likelihood=ll,
            data_to_cluster_evals=d2c,
            cluster_to_cluster_evals=c2c,
            wall_seconds=wall,
        )


def run(config: RunConfig, data: Dataset, observer: Observer | None = None
        ) -> tuple[ModelParams, TruncationState, RunTrace]:
    """Seed, optionally run E-only iterations, then alternate E and M steps.

    Stops once the relative change of the quantization error stays below
    ``tol`` for three consecutive EM iterations, or after ``max_iters``.
    ``observer(phase, index, params, trunc)`` is called after seeding
    ("init") and after every E-step ("estep") and M-step ("mstep").
    """
    if config.n_clusters > data.n_points:
        raise InvalidArgument(f"C={config.n_clusters} exceeds N={data.n_points}")
    t0 = time.perf_counter()
    tr = _Trainer(config, data)
    trace = RunTrace(config.algorithm.value, data.n_points, config.n_clusters, config.c_prime,
                     config.g, config.explore, config.initial_esteps)
    notify = observer or (lambda *a: None)
    trace.records.append(tr.record(0, fresh=False, started=t0))
    notify("init", 0, tr.params, tr.trunc)

    index = 0
    for _ in range(config.initial_esteps):
        index += 1
        t = time.perf_counter()
        tr.estep()
        notify("estep", index, tr.params, tr.trunc)
        trace.records.append(tr.record(index, fresh=False, started=t))

    quiet = 0
    prev_q = trace.records[-1].quantization_error
    for _ in range(config.max_iters):
        index += 1
        t = time.perf_counter()
        tr.estep()
        notify("estep", index, tr.params, tr.trunc)
        tr.mstep()
        notify("mstep", index, tr.params, tr.trunc)
        rec = tr.record(index, fresh=True, started=t)
        trace.records.append(rec)
        q = rec.quantization_error
        change = abs(prev_q - q) / max(abs(prev_q), np.finfo(float).tiny)
        quiet = quiet + 1 if change < config.tol else 0
        prev_q = q
        if quiet >= CONVERGENCE_PATIENCE:
            trace.converged = True
            break
    # K(n) distances are refreshed against the final parameters
    tr.trunc = TruncationState(tr.trunc.sets, tr._member_dists(tr.trunc.sets, tr.evals))
    return tr.params, tr.trunc, trace


# -- protocol helpers ------------------------------------------------------------

def _mean_curve(traces: list[RunTrace]) -> np.ndarray:
    length = max(len(t) for t in traces)
    rows = []
    for t in traces:
        q = t.quantization_errors
        rows.append(np.concatenate([q, np.full(length - q.size, q[-1])]))
    return np.mean(np.stack(rows), axis=0)


def iterations_to_parity(variant_traces: list[RunTrace], baseline_traces: list[RunTrace]
                         ) -> Optional[int]:
    """First iteration (initial E-steps included) at which the variants' mean
    quantization error is at or below the baselines' mean final error.

    Finished runs hold their last value. Returns None if never reached.
    """
    if not variant_traces or not baseline_traces:
        raise InvalidArgument("need at least one variant and one baseline trace")
    target = float(np.mean([t.final_quantization_error for t in baseline_traces]))
    hits = np.nonzero(_mean_curve(variant_traces) <= target)[0]
    return int(hits[0]) if hits.size else None


def convergence_index(trace: RunTrace) -> int:
    """First iteration whose quantization error already equals the final one."""
    q = trace.quantization_errors
    return int(np.nonzero(q <= q[-1])[0][0])


def theoretical_speedup(n_clusters: int, c_prime: int, g: int, explore: bool) -> float:
    """C over the per-point search-space bound C'G (+1), which never exceeds C."""
    return n_clusters / min(n_clusters, c_prime * g + (1 if explore else 0))


def mean_evals_per_iteration(trace: RunTrace) -> float:
    evals = [r.data_to_cluster_evals for r in trace.records[1:]]
    if not evals:
        return float("nan")
    return float(np.mean(evals))


def speedup_report(variant_trace: RunTrace, baseline_trace: RunTrace) -> tuple[float, float]:
    """(theoretical minimum, measured) saved data-to-cluster distance evaluations."""
    if not len(variant_trace) or not len(baseline_trace):
        raise InvalidArgument("traces must not be empty")
    v = variant_trace
    theory = theoretical_speedup(v.n_clusters, v.c_prime, v.g, v.explore)
    measured = mean_evals_per_iteration(baseline_trace) / mean_evals_per_iteration(v)
    return theory, measured


def speedup_vs_full(trace: RunTrace) -> tuple[float, float]:
    """Speedup against the N*C evaluations of one full E-step, without a baseline run."""
    theory = theoretical_speedup(trace.n_clusters, trace.c_prime, trace.g, trace.explore)
    measured = trace.n_points * trace.n_clusters / mean_evals_per_iteration(trace)
    return theory, measured


def summary(config: RunConfig, params: ModelParams, trace: RunTrace,
            parity_target: float | None = None) -> dict:
    parity = None
    if parity_target is not None:
        hits = np.nonzero(trace.quantization_errors <= parity_target)[0]
        parity = int(hits[0]) if hits.size else None
    theory, measured = speedup_vs_full(trace)
    last = trace.records[-1]
    return {
        "schema": SCHEMA_VERSION,
        "config": config.to_dict(),
        "trace": trace.meta(),
        "iterations": len(trace) - 1,
        "final": {
            "free_energy": last.free_energy,
            "quantization_error": last.quantization_error,
            "log_likelihood": last.log_likelihood,
            "sigma_sq": params.sigma_sq,
        },
        "params_digest": params_digest(params),
        "parity_target": parity_target,
        "parity_iteration": parity,
        "parity_reached": parity is not None if parity_target is not None else None,
        "speedup": {
            "theoretical_min": theory,
            "measured": None if math.isnan(measured) else measured,
        },
    }
