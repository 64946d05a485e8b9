"""Exception hierarchy.

Queue indices in messages are 1-based; 0 always denotes the outside of the
network.
"""


class JacksonFlowsError(Exception):
    """Base class for every error raised by this package."""


class NetworkError(JacksonFlowsError):
    """The network specification is invalid or cannot be analysed."""


class RowSumViolation(NetworkError):
    def __init__(self, queue, total):
        self.queue = queue
        self.total = total
        super().__init__(
            f"RowSumViolation({queue}): routing row plus exit probability sums to {total!r}, expected 1"
        )


class NotIrreducible(NetworkError):
    def __init__(self, queues):
        self.queues = tuple(queues)
        super().__init__(f"NotIrreducible: queues {list(self.queues)} are not on a closed outside->queue->outside cycle")


class Unstable(NetworkError):
    def __init__(self, queue, alpha, capacity):
        self.queue = queue
        self.alpha = alpha
        self.capacity = capacity
        super().__init__(f"Unstable({queue}): arrival rate {alpha!r} >= service capacity {capacity!r}")


class NonMonotoneServiceEffort(NetworkError):
    def __init__(self, queue, reason="service effort must be nondecreasing with phi(1) > 0"):
        self.queue = queue
        super().__init__(f"NonMonotoneServiceEffort({queue}): {reason}")


class SingularSystem(NetworkError):
    pass


class InvalidLinkSet(NetworkError):
    pass


class ZeroFlowLink(NetworkError):
    def __init__(self, j, k):
        self.link = (j, k)
        super().__init__(f"ZeroFlowLink({j},{k}): link carries no equilibrium traffic")


class DepthTooSmall(JacksonFlowsError):
    def __init__(self, depth, bound, tol):
        self.depth = depth
        self.bound = bound
        self.tol = tol
        super().__init__(f"DepthTooSmall: truncation bound {bound:.3e} at depth {depth} exceeds tolerance {tol:.3e}")


class TrackingDisabled(JacksonFlowsError):
    pass


class SimulationOverflow(JacksonFlowsError):
    pass


class InsufficientSamples(JacksonFlowsError):
    pass


class ZeroMean(JacksonFlowsError):
    pass


class NonpositiveMean(JacksonFlowsError):
    pass


class NonpositiveDenominator(JacksonFlowsError):
    pass
