"""Static description of an open Jackson network and its equilibrium quantities.

Queues are labelled ``1..J`` in every public interface (links, errors);
label ``0`` is the outside of the network. Arrays indexed by queue only
(``nu``, ``mu``, ``alpha``) are 0-based, so queue ``j`` lives at ``j - 1``.
Arrays over the ``J + 1`` states (flow rates, route chains) use the label
directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .errors import (
    InvalidLinkSet,
    NetworkError,
    NonMonotoneServiceEffort,
    NotIrreducible,
    RowSumViolation,
    SingularSystem,
    Unstable,
)

ROW_SUM_TOL = 1e-12
STABILITY_MARGIN = 1e-9
DEFAULT_TAIL_TOL = 1e-12


# --------------------------------------------------------------------------
# service effort
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantEffort:
    """phi(m) = rate for every m >= 1 (single server)."""

    rate: float

    def __call__(self, m: int) -> float:
        return self.rate if m >= 1 else 0.0

    @property
    def capacity(self) -> float:
        return self.rate

    def to_dict(self) -> dict:
        return {"type": "constant", "rate": self.rate}


@dataclass(frozen=True)
class RampEffort:
    """phi(1..m*) given explicitly, constant phi(m*) afterwards (m*-server shape)."""

    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __call__(self, m: int) -> float:
        if m <= 0:
            return 0.0
        return self.values[min(m, len(self.values)) - 1]

    @property
    def capacity(self) -> float:
        return self.values[-1]

    def to_dict(self) -> dict:
        return {"type": "ramp", "values": list(self.values)}


@dataclass(frozen=True)
class LinearEffort:
    """phi(m) = rate * m (infinite server)."""

    rate: float

    def __call__(self, m: int) -> float:
        return self.rate * m if m >= 1 else 0.0

    @property
    def capacity(self) -> float:
        return math.inf

    def to_dict(self) -> dict:
        return {"type": "linear", "rate": self.rate}


ServiceEffort = Union[ConstantEffort, RampEffort, LinearEffort]


def effort_from_dict(d: dict) -> ServiceEffort:
    kind = d["type"]
    if kind == "constant":
        return ConstantEffort(float(d["rate"]))
    if kind == "ramp":
        return RampEffort(tuple(d["values"]))
    if kind == "linear":
        return LinearEffort(float(d["rate"]))
    raise NetworkError(f"unknown service effort type {kind!r}")


# --------------------------------------------------------------------------
# network spec
# --------------------------------------------------------------------------


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Open Jackson network.

    Attributes:
        nu: exogenous Poisson arrival rate into each queue, shape (J,).
        routing: ``routing[i, j]`` is the probability of moving from queue
            i+1 to queue j+1 after service, shape (J, J).
        mu: exit probability from each queue, shape (J,).
        service: one service-effort function per queue.
    """

    nu: np.ndarray
    routing: np.ndarray
    mu: np.ndarray
    service: tuple

    def __post_init__(self):
        object.__setattr__(self, "nu", _frozen(self.nu))
        object.__setattr__(self, "routing", _frozen(np.atleast_2d(self.routing)))
        object.__setattr__(self, "mu", _frozen(self.mu))
        object.__setattr__(self, "service", tuple(self.service))
        J = self.nu.shape[0]
        if self.nu.ndim != 1 or self.mu.shape != (J,) or self.routing.shape != (J, J) or len(self.service) != J:
            raise NetworkError(
                f"inconsistent dimensions: nu {self.nu.shape}, mu {self.mu.shape}, "
                f"routing {self.routing.shape}, service {len(self.service)}"
            )

    @property
    def J(self) -> int:
        return self.nu.shape[0]

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkSpec":
        queues = doc["queues"]
        return cls(
            nu=[q["nu"] for q in queues],
            routing=doc["routing"],
            mu=[q["mu"] for q in queues],
            service=[effort_from_dict(q["service"]) for q in queues],
        )

    def to_dict(self) -> dict:
        return {
            "queues": [
                {"nu": float(self.nu[j]), "mu": float(self.mu[j]), "service": self.service[j].to_dict()}
                for j in range(self.J)
            ],
            "routing": self.routing.tolist(),
        }


def load_network(path) -> NetworkSpec:
    """Read a network JSON file (see ``schemas/network.schema.json``)."""
    from .schema import validate_network_document

    doc = json.loads(Path(path).read_text())
    validate_network_document(doc)
    return NetworkSpec.from_dict(doc)


# --------------------------------------------------------------------------
# links
# --------------------------------------------------------------------------


def make_links(links: Sequence, J: int) -> tuple:
    """Normalise a link set to a sorted tuple of ``(j, k)`` pairs.

    Raises InvalidLinkSet for an empty set, out-of-range labels or ``(0, 0)``.
    Zero-flow links are rejected later, once the traffic is known.
    """
    out = set()
    for link in links:
        j, k = (int(x) for x in link)
        if not (0 <= j <= J and 0 <= k <= J):
            raise InvalidLinkSet(f"link ({j},{k}) outside 0..{J}")
        if j == 0 and k == 0:
            raise InvalidLinkSet("link (0,0) is not a transition")
        out.add((j, k))
    if not out:
        raise InvalidLinkSet("link set is empty")
    return tuple(sorted(out))


def link_matrix(links, J: int) -> np.ndarray:
    """Boolean (J+1, J+1) indicator of the links in C."""
    m = np.zeros((J + 1, J + 1), dtype=np.bool_)
    for j, k in links:
        m[j, k] = True
    return m


# --------------------------------------------------------------------------
# traffic
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrafficSolution:
    """Total arrival rates and equilibrium link flow rates.

    ``rho[j, k]`` is the flow rate along link (j, k) with 0 = outside:
    ``rho[0, k] = nu_k``, ``rho[j, 0] = alpha_j mu_j``,
    ``rho[j, k] = alpha_j lambda_jk``.
    """

    alpha: np.ndarray
    rho: np.ndarray
    residual: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha))
        object.__setattr__(self, "rho", _frozen(self.rho))

    def rho_C(self, links) -> float:
        return float(sum(self.rho[j, k] for j, k in links))


def solve_traffic(network) -> TrafficSolution:
    """Solve alpha = nu + routing^T alpha and derive the link flow rates."""
    spec = _spec(network)
    J = spec.J
    A = np.eye(J) - spec.routing.T
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e12:
        raise SingularSystem("traffic equations (I - routing^T) are numerically singular")
    alpha = np.linalg.solve(A, spec.nu)
    # one step of iterative refinement
    alpha = alpha + np.linalg.solve(A, spec.nu - A @ alpha)
    residual = float(np.max(np.abs(alpha - spec.nu - spec.routing.T @ alpha)))

    rho = np.zeros((J + 1, J + 1))
    rho[0, 1:] = spec.nu
    rho[1:, 0] = alpha * spec.mu
    rho[1:, 1:] = alpha[:, None] * spec.routing
    return TrafficSolution(alpha=alpha, rho=rho, residual=residual)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ValidatedNetwork:
    """A NetworkSpec that passed every structural check, with metadata."""

    spec: NetworkSpec
    traffic: TrafficSolution
    load: np.ndarray  # alpha_j / sup phi_j (0 for infinite-server queues)
    notes: tuple = field(default=())

    @property
    def J(self) -> int:
        return self.spec.J


def _spec(network) -> NetworkSpec:
    return network.spec if isinstance(network, ValidatedNetwork) else network


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        s = stack.pop()
        for n in np.flatnonzero(adj[s] & ~seen):
            seen[n] = True
            stack.append(n)
    return seen


def _check_effort(j: int, phi) -> None:
    if isinstance(phi, RampEffort):
        v = np.asarray(phi.values)
        if v.size == 0 or not np.all(np.isfinite(v)) or v[0] <= 0 or np.any(np.diff(v) < 0):
            raise NonMonotoneServiceEffort(j)
    elif not (math.isfinite(phi.rate) and phi.rate > 0):
        raise NonMonotoneServiceEffort(j, "rate must be finite and positive")


def validate_network(spec: NetworkSpec) -> ValidatedNetwork:
    """Check row sums, rates, service efforts, irreducibility and stability."""
    J = spec.J
    arrays = (spec.nu, spec.mu, spec.routing)
    if any(not np.all(np.isfinite(a)) or np.any(a < 0) for a in arrays):
        raise NetworkError("rates and probabilities must be finite and nonnegative")
    if spec.nu.sum() <= 0:
        raise NetworkError("total exogenous arrival rate must be positive")
    for i in range(J):
        total = float(spec.routing[i].sum() + spec.mu[i])
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise RowSumViolation(i + 1, total)
    for j, phi in enumerate(spec.service):
        _check_effort(j + 1, phi)

    # forward-chain digraph on {0, 1..J}
    adj = np.zeros((J + 1, J + 1), dtype=bool)
    adj[0, 1:] = spec.nu > 0
    adj[1:, 0] = spec.mu > 0
    adj[1:, 1:] = spec.routing > 0
    from_outside = _reachable(adj, 0)
    to_outside = _reachable(adj.T.copy(), 0)
    bad = [j for j in range(1, J + 1) if not (from_outside[j] and to_outside[j])]
    if bad:
        raise NotIrreducible(bad)

    traffic = solve_traffic(spec)
    load = np.zeros(J)
    for j, phi in enumerate(spec.service):
        cap = phi.capacity
        if math.isfinite(cap):
            load[j] = traffic.alpha[j] / cap
            if traffic.alpha[j] >= cap * (1 - STABILITY_MARGIN):
                raise Unstable(j + 1, float(traffic.alpha[j]), cap)
    return ValidatedNetwork(spec=spec, traffic=traffic, load=load)


# --------------------------------------------------------------------------
# product-form stationary law
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StationaryDist:
    """Truncated stationary queue-length law of one queue.

    ``pmf[k]`` for k = 0..K is normalised over the truncated support;
    ``tail_bound`` bounds the neglected relative mass beyond K.
    """

    queue: int
    pmf: np.ndarray
    log_normalizer: float
    tail_bound: float

    def __post_init__(self):
        object.__setattr__(self, "pmf", _frozen(self.pmf))

    @property
    def truncation(self) -> int:
        return self.pmf.shape[0] - 1

    @property
    def normalizer(self) -> float:
        return math.exp(self.log_normalizer)

    @property
    def mean(self) -> float:
        return float(np.arange(self.pmf.shape[0]) @ self.pmf)


def stationary_queue_dist(network, traffic: TrafficSolution, j: int,
                          tail_tol: float = DEFAULT_TAIL_TOL,
                          max_terms: int = 50_000_000) -> StationaryDist:
    """Stationary law of queue ``j`` (1-based): P(N_j = k) proportional to alpha^k / prod phi(r)."""
    spec = _spec(network)
    phi = spec.service[j - 1]
    alpha = float(traffic.alpha[j - 1])
    if alpha <= 0:
        return StationaryDist(queue=j, pmf=np.array([1.0]), log_normalizer=0.0, tail_bound=0.0)
    cap = phi.capacity
    if math.isfinite(cap) and alpha / cap >= 1 - STABILITY_MARGIN:
        raise Unstable(j, alpha, cap)

    log_alpha = math.log(alpha)
    log_tol = math.log(tail_tol)
    logs = [0.0]
    log_z = 0.0
    # Ratios alpha/phi(k+1) are nonincreasing in k, so the tail past K is
    # dominated by a geometric series with ratio alpha/phi(K+2).
    k = 0
    while True:
        nxt = logs[-1] + log_alpha - math.log(phi(k + 1))
        ratio_after = alpha / phi(k + 2)
        if ratio_after < 1:
            log_tail = nxt - math.log1p(-ratio_after) - log_z
            if log_tail < log_tol:
                break
        logs.append(nxt)
        log_z = float(np.logaddexp(log_z, nxt))
        k += 1
        if k > max_terms:
            raise Unstable(j, alpha, cap)
    logs = np.asarray(logs)
    log_z = float(logsumexp(logs))
    return StationaryDist(queue=j, pmf=np.exp(logs - log_z), log_normalizer=log_z,
                          tail_bound=float(math.exp(log_tail)))


def stationary_dists(network, traffic: TrafficSolution, tail_tol: float = DEFAULT_TAIL_TOL) -> list:
    spec = _spec(network)
    return [stationary_queue_dist(spec, traffic, j, tail_tol) for j in range(1, spec.J + 1)]


def sample_stationary_state(dists: Sequence[StationaryDist], rng: np.random.Generator,
                            size: int | None = None) -> np.ndarray:
    """Independent inverse-CDF draws, one per queue.

    Returns shape (J,), or (size, J) when ``size`` is given.
    """
    n = 1 if size is None else size
    state = np.empty((n, len(dists)), dtype=np.int64)
    for i, d in enumerate(dists):
        cdf = np.cumsum(d.pmf)
        u = rng.random(n) * cdf[-1]
        state[:, i] = np.minimum(np.searchsorted(cdf, u, side="right"), d.truncation)
    return state[0] if size is None else state
