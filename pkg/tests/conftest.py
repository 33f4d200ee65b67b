import numpy as np
import pytest

from iph_schwarz import (BrokenP1Space, PenaltyField, TraceSpace,
                         assemble_hybrid, generate_structured, partition_mesh)

ETA = 1.0
ALPHA = 6.0


def source(x, y):
    return (ETA + 2.0 * np.pi ** 2) * np.sin(np.pi * x) * np.sin(np.pi * y)


def zero_source(x, y):
    return np.zeros_like(x)


def make_system(n=8, domain="unit-square", strategy="two-straight", m=None,
                eta=ETA, alpha=ALPHA, f=source, mode="single"):
    mesh = generate_structured(n, domain)
    part = partition_mesh(mesh, strategy, m=m)
    trace = TraceSpace(part, mode)
    bs = assemble_hybrid(part, trace, eta, PenaltyField(alpha), f, mesh=mesh)
    return bs


@pytest.fixture(scope="session")
def square8():
    return make_system(8)


@pytest.fixture(scope="session")
def square8_zero_source():
    return make_system(8, f=zero_source)


@pytest.fixture(scope="session")
def square8_multi():
    return make_system(8, mode="per-subdomain")


@pytest.fixture(scope="session")
def quadrants8():
    return make_system(8, strategy="quadrants", m=2, mode="per-subdomain")


@pytest.fixture(scope="session")
def lshape8():
    return make_system(8, domain="l-shape")
