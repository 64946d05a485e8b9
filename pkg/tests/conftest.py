import numpy as np
import pytest

from jackson_flows.network_model import ConstantEffort, NetworkSpec, validate_network

ACCEPTANCE = []


def feedback_spec(rate=5.0):
    return NetworkSpec(nu=[1.0], routing=[[0.2]], mu=[0.8], service=[ConstantEffort(rate)])


def tandem_spec():
    return NetworkSpec(
        nu=[1.0, 0.0],
        routing=[[0.0, 1.0], [0.0, 0.0]],
        mu=[0.0, 1.0],
        service=[ConstantEffort(5.0), ConstantEffort(5.0)],
    )


def random_network(rng, max_J=4, min_exit=0.05):
    """Random irreducible open network with J <= max_J queues."""
    while True:
        J = int(rng.integers(1, max_J + 1))
        mu = rng.uniform(min_exit, 1.0, J)
        mu[rng.random(J) < 0.3] = 0.0
        R = rng.random((J, J)) * (rng.random((J, J)) < 0.6)
        for i in range(J):
            if R[i].sum() > 0:
                R[i] *= (1 - mu[i]) / R[i].sum()
        mu = 1.0 - R.sum(axis=1)
        nu = rng.uniform(0.1, 2.0, J) * (rng.random(J) < 0.7)
        if nu.sum() == 0:
            nu[0] = 1.0
        spec = NetworkSpec(nu=nu, routing=R, mu=mu, service=[ConstantEffort(1e6)] * J)
        try:
            net = validate_network(spec)
        except Exception:
            continue
        rho = net.traffic.rho
        links = [(j, k) for j in range(J + 1) for k in range(J + 1) if rho[j, k] > 0]
        size = int(rng.integers(1, min(4, len(links)) + 1))
        pick = rng.choice(len(links), size=size, replace=False)
        return net, tuple(links[i] for i in sorted(pick))


@pytest.fixture(scope="session")
def feedback():
    return validate_network(feedback_spec())


@pytest.fixture(scope="session")
def tandem():
    return validate_network(tandem_spec())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line[1])
