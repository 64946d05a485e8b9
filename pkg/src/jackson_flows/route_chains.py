"""Loop statistics of a customer's route with respect to a link set C.

A customer observed crossing link (j, k) has an independent past route
(the backward customer chain started at j) and future route (the forward
chain started at k). Counting C-crossings along both gives

    w_C(jk)     probability the observed crossing is its only one
    eps_C(jk)   expected number of additional crossings
    sigma_C(jk) second factorial moment of the total crossing count

All three come from linear systems on the transient states 1..J of the
(J+1)-state chain, with 0 (outside) absorbing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DepthTooSmall, SingularSystem, ZeroFlowLink
from .network_model import TrafficSolution, _frozen, _spec, link_matrix, make_links

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True, eq=False)
class RouteChain:
    direction: str
    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", _frozen(self.P))

    @property
    def J(self) -> int:
        return self.P.shape[0] - 1

    def crossing_indicator(self, links) -> np.ndarray:
        """``X[s, l]`` is True when a chain step s -> l crosses a link in C.

        A backward step s -> l is the forward transition l -> s.
        """
        inC = link_matrix(links, self.J)
        return inC if self.direction == FORWARD else inC.T.copy()


def forward_chain(network, traffic: TrafficSolution) -> RouteChain:
    spec = _spec(network)
    J = spec.J
    P = np.zeros((J + 1, J + 1))
    P[0, 1:] = spec.nu / spec.nu.sum()
    P[1:, 0] = spec.mu
    P[1:, 1:] = spec.routing
    return RouteChain(FORWARD, P)


def backward_chain(network, traffic: TrafficSolution) -> RouteChain:
    """Time-reversed customer chain: p*_kj = alpha_j lambda_jk / alpha_k."""
    spec = _spec(network)
    J = spec.J
    alpha = traffic.alpha
    out = spec.mu * alpha
    P = np.zeros((J + 1, J + 1))
    P[0, 1:] = out / out.sum()
    P[1:, 0] = spec.nu / alpha
    P[1:, 1:] = (alpha[:, None] * spec.routing).T / alpha[:, None]
    return RouteChain(BACKWARD, P)


@dataclass(frozen=True, eq=False)
class CrossingMoments:
    """Per start state s in 0..J (0 is terminal: f=1, m1=s2=0).

    f: probability that the rest of the route crosses no C-link.
    m1: expected number of C-crossings on the rest of the route.
    s2: second factorial moment of that number.
    """

    f: np.ndarray
    m1: np.ndarray
    s2: np.ndarray

    def at(self, s: int) -> tuple:
        return float(self.f[s]), float(self.m1[s]), float(self.s2[s])


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    if A.shape[0] == 0:
        return b
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e12:
        raise SingularSystem("route chain does not reach the outside state")
    return np.linalg.solve(A, b)


def crossing_moments(chain: RouteChain, links) -> CrossingMoments:
    links = make_links(links, chain.J)
    P = chain.P
    X = chain.crossing_indicator(links).astype(float)
    J = chain.J
    Q = P[1:, 1:]
    I = np.eye(J)
    PX = P * X

    f_rhs = P[1:, 0] * (1.0 - X[1:, 0])
    f = _solve(I - Q * (1.0 - X[1:, 1:]), f_rhs)
    m1 = _solve(I - Q, PX[1:].sum(axis=1))
    s2 = _solve(I - Q, 2.0 * PX[1:, 1:] @ m1)

    pad = lambda head, v: np.concatenate(([head], v))  # noqa: E731
    return CrossingMoments(f=pad(1.0, f), m1=pad(0.0, m1), s2=pad(0.0, s2))


# --------------------------------------------------------------------------
# brute-force oracle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleMoments:
    """Route-sum estimate from one start state with rigorous error bounds.

    The true values satisfy ``f in [f, f + f_err]``, ``m1 in [m1, m1 + m1_err]``
    and ``s2 in [s2, s2 + s2_err]``.
    """

    start: int
    f: float
    m1: float
    s2: float
    f_err: float
    m1_err: float
    s2_err: float
    depth: int

    @property
    def max_err(self) -> float:
        return max(self.f_err, self.m1_err, self.s2_err)


def _contraction(Q: np.ndarray) -> tuple:
    """Smallest k with ||Q^k||_inf < 1, and that norm."""
    M = np.eye(Q.shape[0])
    for k in range(1, 4 * Q.shape[0] + 2):
        M = M @ Q
        c = float(np.abs(M).sum(axis=1).max()) if M.size else 0.0
        if c < 1.0:
            return k, c
    raise SingularSystem("route chain does not reach the outside state")


def route_oracle(chain: RouteChain, links, start: int, max_depth: int = 60,
                 tol: float = 1e-10, early_stop: bool = True) -> OracleMoments:
    """Sum over every route of length <= max_depth from ``start``.

    Routes are aggregated by (current state, crossings so far): the
    propagated vectors carry the probability mass, the mass that has not
    crossed C yet, and the first and second factorial moments of the
    crossing count. Routes still inside the network after ``max_depth``
    steps are bounded through ||Q^k||_inf < 1 on the transient block.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    links = make_links(links, chain.J)
    J = chain.J
    if start == 0:
        return OracleMoments(0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)

    P = chain.P
    X = chain.crossing_indicator(links).astype(float)
    PX = P * X
    PnX = P - PX
    k, c = _contraction(P[1:, 1:])
    tail1 = k / (1.0 - c)
    tail2 = k * k * (1.0 / (1.0 - c) + 2.0 * c / (1.0 - c) ** 2)

    mass = np.zeros(J + 1)
    mass[start] = 1.0
    clean = mass.copy()
    M1 = np.zeros(J + 1)
    M2 = np.zeros(J + 1)
    f_acc = m1_acc = s2_acc = 0.0

    depth = 0
    errs = (1.0, np.inf, np.inf)
    for depth in range(1, max_depth + 1):
        M2 = M2 @ P + 2.0 * (M1 @ PX)
        M1 = M1 @ P + mass @ PX
        clean = clean @ PnX
        mass = mass @ P
        f_acc += clean[0]
        m1_acc += M1[0]
        s2_acc += M2[0]
        mass[0] = clean[0] = M1[0] = M2[0] = 0.0

        resid = mass.sum()
        e_steps = resid * tail1
        errs = (clean.sum(), e_steps, 2.0 * depth * e_steps + resid * tail2)
        if resid == 0.0 or (early_stop and max(errs) <= 1e-6 * tol):
            break

    out = OracleMoments(start, float(f_acc), float(m1_acc + M1.sum()), float(s2_acc + M2.sum()),
                        float(errs[0]), float(errs[1]), float(errs[2]), depth)
    if out.max_err > tol:
        raise DepthTooSmall(depth, out.max_err, tol)
    return out


# --------------------------------------------------------------------------
# link statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinkStats:
    """Per-link and rho-weighted loop statistics for a link set C."""

    links: tuple
    rho: np.ndarray
    w: np.ndarray
    eps: np.ndarray
    sigma: np.ndarray
    w_past: np.ndarray
    w_future: np.ndarray

    @property
    def rho_C(self) -> float:
        return float(self.rho.sum())

    def _avg(self, v) -> float:
        return float(v @ self.rho / self.rho.sum())

    @property
    def w_C(self) -> float:
        return self._avg(self.w)

    @property
    def eps_C(self) -> float:
        return self._avg(self.eps)

    @property
    def sigma_C(self) -> float:
        return self._avg(self.sigma)

    @property
    def touches_outside(self) -> bool:
        return any(j == 0 or k == 0 for j, k in self.links)

    @property
    def no_loop(self) -> bool:
        return bool(np.all(self.eps <= 1e-14))

    def per_link(self) -> list:
        return [
            {"link": [j, k], "rho": float(r), "w": float(w), "eps": float(e), "sigma": float(s)}
            for (j, k), r, w, e, s in zip(self.links, self.rho, self.w, self.eps, self.sigma)
        ]

    def to_dict(self) -> dict:
        return {
            "rho_C": self.rho_C,
            "w_C": self.w_C,
            "eps_C": self.eps_C,
            "sigma_C": self.sigma_C,
            "links": self.per_link(),
        }


def link_stats(network, traffic: TrafficSolution, links) -> LinkStats:
    spec = _spec(network)
    links = make_links(links, spec.J)
    rho = np.array([traffic.rho[j, k] for j, k in links])
    for (j, k), r in zip(links, rho):
        if not r > 0:
            raise ZeroFlowLink(j, k)

    fut = crossing_moments(forward_chain(spec, traffic), links)
    past = crossing_moments(backward_chain(spec, traffic), links)
    # index 0 of either chain is terminal (f=1, m1=s2=0), which is exactly
    # the convention for arrival links (no past) and departure links (no future)
    js = np.array([j for j, _ in links])
    ks = np.array([k for _, k in links])
    fb, mb, sb = past.f[js], past.m1[js], past.s2[js]
    ff, mf, sf = fut.f[ks], fut.m1[ks], fut.s2[ks]
    return LinkStats(
        links=links,
        rho=rho,
        w=fb * ff,
        eps=mb + mf,
        sigma=sb + sf + 2.0 * mb * mf + 2.0 * (mb + mf),
        w_past=fb,
        w_future=ff,
    )
