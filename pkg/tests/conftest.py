import numpy as np
import pytest

from cvrpsd.instance import CvrpInstance, make_tour

# Example-1 layout: customer 1 due north of the depot, customers 2, 4, 3, 5
# strung out eastwards in tour order.
EXAMPLE1_COORDS = [(0, 0), (0, 10), (10, 0), (12, 0), (11, 0), (13, 0)]
EXAMPLE1_TOUR = (1, 2, 4, 3, 5)
EXAMPLE1_Q = 17
# demands listed by customer id
EXAMPLE1_DEMANDS = ([14, 15, 8, 1, 8], [8, 1, 5, 7, 2])


@pytest.fixture
def collinear():
    """Depot at x=0, customers 1..3 at x=1..3, Q=10."""
    return CvrpInstance.from_coords([(0, 0), (1, 0), (2, 0), (3, 0)], [4, 5, 4], 10, name="line3")


@pytest.fixture
def example1():
    inst = CvrpInstance.from_coords(EXAMPLE1_COORDS, EXAMPLE1_DEMANDS[0], EXAMPLE1_Q, name="example1")
    return inst, make_tour(inst, EXAMPLE1_TOUR)


def random_case(rng: np.random.Generator, n: int, integer: bool, q_hi: int = 12):
    """Random symmetric cost matrix, random tour and demands."""
    if integer:
        c = rng.integers(0, 50, size=(n + 1, n + 1))
    else:
        c = rng.uniform(0, 50, size=(n + 1, n + 1))
    c = np.triu(c, 1)
    c = c + c.T
    Q = int(rng.integers(q_hi // 2, 2 * q_hi))
    inst = CvrpInstance.from_cost_matrix(c, np.zeros(n, dtype=int), Q)
    tour = make_tour(inst, rng.permutation(np.arange(1, n + 1)))
    demands = rng.integers(0, q_hi + 1, size=n)
    return inst, tour, demands


def line_instance(n: int, capacity: int = 10**6) -> CvrpInstance:
    return CvrpInstance.from_coords([(float(x), 0.0) for x in range(n + 1)], [1] * n, capacity,
                                    name=f"line{n}")


# one (criterion, passed, detail) entry per acceptance check, echoed at the end of the run
ACCEPTANCE: list[tuple[int, bool, str]] = []


def record_acceptance(k: int, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((k, passed, detail))
    print(f"ACCEPTANCE {k}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
