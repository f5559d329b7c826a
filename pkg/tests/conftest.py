import numpy as np
import pytest

from spinboson.kernel import KernelSpec, build_kernel


@pytest.fixture(scope="session")
def indicator_kernel():
    return build_kernel(KernelSpec.indicator(1.0))


@pytest.fixture(scope="session")
def zero_kernel():
    return build_kernel(KernelSpec.h_table([[0.0, 0.0], [1.0, 0.0]]))


@pytest.fixture(scope="session")
def table_kernel(indicator_kernel):
    """h_table kernel sampled from the cutoff-1 indicator kernel."""
    ss = np.concatenate([[0.0], np.geomspace(1e-3, 60.0, 600)])
    return build_kernel(KernelSpec.h_table(np.column_stack([ss, indicator_kernel.h(ss)])))
