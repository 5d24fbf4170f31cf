import numpy as np
import pytest

from stringmelt.spin1 import aklt_ground_state, aklt_hamiltonian, quench_hamiltonian


@pytest.fixture(scope="session")
def aklt6():
    return aklt_hamiltonian(6)


@pytest.fixture(scope="session")
def ground6():
    return aklt_ground_state(6)


@pytest.fixture(scope="session")
def quench6():
    return quench_hamiltonian(6, 0.2, 0.2)
