"""Equilibrium simulation of the network CTMC with customer identities.

Each replicate starts from an independent draw of the product-form
stationary law and runs the jump chain on [0, t]. At a service completion
one resident of the queue, chosen uniformly, moves. Every transition along
a link in C is recorded together with the identity of the moving customer,
so per-customer crossing counts (clusters) can be read off the trace.

Replicate ``i`` of a run with ``base_seed`` draws from a Philox stream keyed
by ``(base_seed, i)``; replicates are therefore independent of scheduling
and can run on several threads.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import SimulationOverflow, TrackingDisabled
from .network_model import (
    LinearEffort,
    TrafficSolution,
    _spec,
    link_matrix,
    make_links,
    sample_stationary_state,
    stationary_dists,
)

THREADS_ENV = "JACKSON_FLOWS_THREADS"
_U64 = (1 << 64) - 1


# --------------------------------------------------------------------------
# jitted event loop
# --------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _phi(j, n, phi_vals, phi_len, phi_lin):
    if n <= 0:
        return 0.0
    if phi_lin[j] > 0.0:
        return phi_lin[j] * n
    m = n if n < phi_len[j] else phi_len[j]
    return phi_vals[j, m - 1]


@numba.njit(cache=True, nogil=True)
def _grow_rows(a, new_cols):
    out = np.empty((a.shape[0], new_cols), dtype=a.dtype)
    out[:, : a.shape[1]] = a
    return out


@numba.njit(cache=True, nogil=True)
def _grow(a, new_len):
    out = np.zeros(new_len, dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


@numba.njit(cache=True, nogil=True)
def _run(rng, nu, dest_cum, phi_vals, phi_len, phi_lin, init, in_C, t_end,
         track, occ_cap, n_batches, max_events):
    J = nu.shape[0]
    nu_tot = nu.sum()
    n = init.copy()
    rates = np.empty(J)
    for j in range(J):
        rates[j] = _phi(j, n[j], phi_vals, phi_len, phi_lin)

    cap = 16
    for j in range(J):
        if 2 * n[j] + 16 > cap:
            cap = 2 * n[j] + 16
    mem = np.empty((J, cap), dtype=np.int64)
    ccount = np.zeros(max(1024, 2 * init.sum() + 1024), dtype=np.int64)
    next_id = 0
    if track:
        for j in range(J):
            for i in range(n[j]):
                mem[j, i] = next_id
                next_id += 1

    ev_cap = 1024
    ev_t = np.empty(ev_cap)
    ev_from = np.empty(ev_cap, dtype=np.int64)
    ev_to = np.empty(ev_cap, dtype=np.int64)
    ev_c = np.empty(ev_cap, dtype=np.int64)
    n_ev = 0

    occ = np.zeros((J, occ_cap + 1))
    batch = np.zeros((n_batches, J + 1, J + 1), dtype=np.int64)

    time = 0.0
    n_events = 0
    overflow = False
    while True:
        R = nu_tot + rates.sum()
        dt = rng.exponential(1.0 / R)
        last = time + dt > t_end
        hold = t_end - time if last else dt
        for j in range(J):
            occ[j, n[j] if n[j] < occ_cap else occ_cap] += hold
        if last:
            break
        time += dt

        u = rng.random() * R
        cid = -1
        if u < nu_tot:
            q = J - 1
            acc = 0.0
            for j in range(J):
                acc += nu[j]
                if u < acc:
                    q = j
                    break
            src = 0
            dst = q + 1
            if track:
                cid = next_id
                next_id += 1
                if next_id > ccount.shape[0]:
                    ccount = _grow(ccount, 2 * ccount.shape[0])
        else:
            u -= nu_tot
            q = -1
            acc = 0.0
            for j in range(J):
                acc += rates[j]
                if rates[j] > 0.0:
                    q = j
                    if u < acc:
                        break
            src = q + 1
            # drawn even when untracked so the sample path does not depend on tracking
            pick = rng.random()
            if track:
                idx = int(pick * n[q])
                if idx >= n[q]:
                    idx = n[q] - 1
                cid = mem[q, idx]
                mem[q, idx] = mem[q, n[q] - 1]
            n[q] -= 1
            rates[q] = _phi(q, n[q], phi_vals, phi_len, phi_lin)
            v = rng.random()
            dst = J
            for d in range(J + 1):
                if v < dest_cum[q, d]:
                    dst = d
                    break

        if dst > 0:
            q = dst - 1
            if track:
                if n[q] >= mem.shape[1]:
                    mem = _grow_rows(mem, 2 * mem.shape[1])
                mem[q, n[q]] = cid
            n[q] += 1
            rates[q] = _phi(q, n[q], phi_vals, phi_len, phi_lin)

        b = int(time / t_end * n_batches)
        if b >= n_batches:
            b = n_batches - 1
        batch[b, src, dst] += 1
        if in_C[src, dst]:
            if n_ev >= ev_t.shape[0]:
                ev_t = _grow(ev_t, 2 * ev_t.shape[0])
                ev_from = _grow(ev_from, 2 * ev_from.shape[0])
                ev_to = _grow(ev_to, 2 * ev_to.shape[0])
                ev_c = _grow(ev_c, 2 * ev_c.shape[0])
            ev_t[n_ev] = time
            ev_from[n_ev] = src
            ev_to[n_ev] = dst
            ev_c[n_ev] = cid
            n_ev += 1
            if track:
                ccount[cid] += 1

        n_events += 1
        if n_events >= max_events:
            overflow = True
            break

    return (ev_t[:n_ev], ev_from[:n_ev], ev_to[:n_ev], ev_c[:n_ev], ccount[:next_id],
            occ, batch, n_events, overflow)


# --------------------------------------------------------------------------
# python layer
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    t: float
    n_replicates: int = 1
    base_seed: int = 0
    customer_tracking: bool = True
    warmup: str = "stationary-init"  # or "none": start empty
    max_events: int = 10**9

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be positive")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be >= 1")
        if self.warmup not in ("stationary-init", "none"):
            raise ValueError(f"unknown warmup {self.warmup!r}")


def replicate_rng(base_seed: int, replicate_index: int) -> np.random.Generator:
    key = np.array([base_seed & _U64, replicate_index & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True, eq=False)
class _Prepared:
    J: int
    nu: np.ndarray
    dest_cum: np.ndarray
    phi_vals: np.ndarray
    phi_len: np.ndarray
    phi_lin: np.ndarray
    dists: list
    in_C: np.ndarray
    links: tuple


def _prepare(network, traffic: TrafficSolution, links) -> _Prepared:
    spec = _spec(network)
    J = spec.J
    links = make_links(links, J) if links else ()
    dest = np.concatenate([spec.mu[:, None], spec.routing], axis=1)
    dest_cum = np.cumsum(dest, axis=1)
    dest_cum[:, -1] = np.inf

    width = max(len(getattr(phi, "values", (0,))) for phi in spec.service)
    phi_vals = np.zeros((J, width))
    phi_len = np.ones(J, dtype=np.int64)
    phi_lin = np.zeros(J)
    for j, phi in enumerate(spec.service):
        if isinstance(phi, LinearEffort):
            phi_lin[j] = phi.rate
        elif hasattr(phi, "values"):
            phi_vals[j, : len(phi.values)] = phi.values
            phi_len[j] = len(phi.values)
        else:
            phi_vals[j, 0] = phi.rate
    return _Prepared(J, np.asarray(spec.nu, dtype=float), dest_cum, phi_vals, phi_len, phi_lin,
                     stationary_dists(spec, traffic), link_matrix(links, J), links)


def _initial_state(prep: _Prepared, warmup: str, rng) -> np.ndarray:
    if warmup == "none":
        return np.zeros(prep.J, dtype=np.int64)
    return sample_stationary_state(prep.dists, rng)


def _kernel(prep, rng, init, t, track, occ_cap=0, n_batches=1, max_events=10**9):
    return _run(rng, prep.nu, prep.dest_cum, prep.phi_vals, prep.phi_len, prep.phi_lin,
                init, prep.in_C, float(t), bool(track), int(occ_cap), int(n_batches), int(max_events))


@dataclass(frozen=True, eq=False)
class FlowTrace:
    """Transitions along C during [0, t] for one replicate.

    ``customer_ids``/``crossings`` list every customer with at least one
    in-window crossing and how many it made (empty when tracking is off).
    """

    t: float
    links: tuple
    times: np.ndarray
    link_from: np.ndarray
    link_to: np.ndarray
    customers: np.ndarray
    customer_ids: np.ndarray
    crossings: np.ndarray
    initial_state: np.ndarray
    replicate_index: int
    tracked: bool

    @property
    def count(self) -> int:
        return int(self.times.shape[0])

    @property
    def m_hat(self) -> int:
        return int(self.customer_ids.shape[0])


def simulate_window(network, traffic: TrafficSolution, links, config: SimConfig,
                    replicate_index: int = 0) -> FlowTrace:
    prep = _prepare(network, traffic, links)
    return _simulate_prepared(prep, config, replicate_index)


def _simulate_prepared(prep: _Prepared, config: SimConfig, replicate_index: int) -> FlowTrace:
    rng = replicate_rng(config.base_seed, replicate_index)
    init = _initial_state(prep, config.warmup, rng)
    ev_t, ev_f, ev_to, ev_c, ccount, _, _, _, overflow = _kernel(
        prep, rng, init, config.t, config.customer_tracking, max_events=config.max_events)
    if overflow:
        raise SimulationOverflow(f"more than {config.max_events} events in replicate {replicate_index}")
    ids = np.flatnonzero(ccount)
    return FlowTrace(t=config.t, links=prep.links, times=ev_t, link_from=ev_f, link_to=ev_to,
                     customers=ev_c, customer_ids=ids, crossings=ccount[ids], initial_state=init,
                     replicate_index=replicate_index, tracked=config.customer_tracking)


@dataclass(frozen=True)
class ClusterDiagnostics:
    """Window-truncated view of the cluster decomposition of one trace."""

    m_hat: int
    mean_cluster_size: float
    max_cluster_size: int


def cluster_diagnostics(trace: FlowTrace) -> ClusterDiagnostics:
    if not trace.tracked:
        raise TrackingDisabled("cluster diagnostics need customer_tracking=True")
    if trace.m_hat == 0:
        return ClusterDiagnostics(0, 0.0, 0)
    return ClusterDiagnostics(trace.m_hat, trace.count / trace.m_hat, int(trace.crossings.max()))


@dataclass(frozen=True, eq=False)
class CountSamples:
    """Xi_{C,t} across replicates plus per-replicate cluster summaries."""

    counts: np.ndarray
    m_hat: np.ndarray
    mean_cluster_size: np.ndarray
    max_cluster_size: np.ndarray
    base_seed: int
    t: float
    links: tuple = field(default=())

    @property
    def n(self) -> int:
        return int(self.counts.shape[0])

    @property
    def replicate_indices(self) -> np.ndarray:
        return np.arange(self.n)

    def average_cluster_size(self) -> float:
        """Mean cluster size averaged over replicates that saw a crossing."""
        hit = self.m_hat > 0
        return float(self.mean_cluster_size[hit].mean()) if hit.any() else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "count", "m_hat", "mean_cluster_size", "max_cluster_size"])
            for i in range(self.n):
                w.writerow([i, int(self.counts[i]), int(self.m_hat[i]),
                            repr(float(self.mean_cluster_size[i])), int(self.max_cluster_size[i])])

    @classmethod
    def from_csv(cls, path, base_seed: int = 0, t: float = float("nan"), links=()) -> "CountSamples":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda name, typ: np.array([typ(r[name]) for r in rows], dtype=typ)  # noqa: E731
        return cls(counts=col("count", int), m_hat=col("m_hat", int),
                   mean_cluster_size=col("mean_cluster_size", float),
                   max_cluster_size=col("max_cluster_size", int),
                   base_seed=base_seed, t=t, links=tuple(links))


def _worker_count(n_tasks: int) -> int:
    env = os.environ.get(THREADS_ENV)
    limit = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(limit, n_tasks))


def replicate_counts(network, traffic: TrafficSolution, links, config: SimConfig) -> CountSamples:
    prep = _prepare(network, traffic, links)

    def one(i):
        tr = _simulate_prepared(prep, config, i)
        if not tr.tracked:
            return tr.count, 0, 0.0, 0
        d = cluster_diagnostics(tr)
        return tr.count, d.m_hat, d.mean_cluster_size, d.max_cluster_size

    idx = range(config.n_replicates)
    workers = _worker_count(config.n_replicates)
    if workers == 1:
        rows = [one(i) for i in idx]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, idx, chunksize=64))
    counts, m_hat, mean_cs, max_cs = (np.array(c) for c in zip(*rows))
    return CountSamples(counts=counts.astype(np.int64), m_hat=m_hat.astype(np.int64),
                        mean_cluster_size=mean_cs.astype(float), max_cluster_size=max_cs.astype(np.int64),
                        base_seed=config.base_seed, t=config.t, links=prep.links)


def write_event_log(trace: FlowTrace, path) -> None:
    """Dump a trace as CSV: time,link_from,link_to,customer_id."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "link_from", "link_to", "customer_id"])
        for row in zip(trace.times, trace.link_from, trace.link_to, trace.customers):
            w.writerow([repr(float(row[0])), int(row[1]), int(row[2]), int(row[3])])


# --------------------------------------------------------------------------
# long single run
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StationarityRun:
    """Time averages of one long equilibrium run.

    ``occupancy[j, m]`` is the fraction of time queue j+1 held m customers
    (the last column lumps everything >= its index). ``link_rates`` and
    ``link_rate_se`` are (J+1, J+1) with batch-means standard errors.
    """

    horizon: float
    n_events: int
    occupancy: np.ndarray
    link_counts: np.ndarray
    link_rates: np.ndarray
    link_rate_se: np.ndarray


def stationarity_run(network, traffic: TrafficSolution, n_events: int, seed: int = 0,
                     n_batches: int = 50, occ_cap: int = 200) -> StationarityRun:
    """Run until the expected number of events reaches ``n_events``."""
    spec = _spec(network)
    prep = _prepare(spec, traffic, ())
    horizon = n_events / (spec.nu.sum() + traffic.alpha.sum())
    rng = replicate_rng(seed, 0)
    init = _initial_state(prep, "stationary-init", rng)
    *_, occ, batch, done, _ = _kernel(prep, rng, init, horizon, False, occ_cap, n_batches)
    per_batch = batch / (horizon / n_batches)
    return StationarityRun(
        horizon=horizon,
        n_events=int(done),
        occupancy=occ / horizon,
        link_counts=batch.sum(axis=0),
        link_rates=batch.sum(axis=0) / horizon,
        link_rate_se=per_batch.std(axis=0, ddof=1) / np.sqrt(n_batches),
    )
