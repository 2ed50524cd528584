import warnings

import pytest

from heatlift.carnot import CarnotGroup, build_split_coordinates
from heatlift.fields import VectorField, lie_closure
from heatlift.kernel import HeatKernel
from heatlift.poly import DilationWeights
from heatlift.saturation import SaturatedKernel

warnings.filterwarnings("ignore", message="Using `httpx` with `starlette.testclient`")


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance pass/fail lines where capture cannot eat them."""
    import sys

    lines = []
    for name, mod in list(sys.modules.items()):
        if name.rpartition(".")[2] == "test_acceptance" and mod is not None:
            lines = getattr(mod, "_LINES", [])
            break
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def grushin_fields():
    return [VectorField.from_strings(["1", "0"]),
            VectorField.from_strings(["0", "x1"])]


@pytest.fixture(scope="session")
def grushin_basis():
    return lie_closure(grushin_fields(), DilationWeights([1, 2]))


@pytest.fixture(scope="session")
def grushin_group(grushin_basis):
    return build_split_coordinates(grushin_basis)


@pytest.fixture(scope="session")
def grushin_kernel(grushin_group):
    kernel = HeatKernel(grushin_group)
    kernel.ensure_table()
    return kernel


@pytest.fixture(scope="session")
def grushin_sat(grushin_group, grushin_kernel):
    return SaturatedKernel(grushin_group, grushin_kernel)


@pytest.fixture(scope="session")
def abelian_sat():
    group = CarnotGroup.abelian(1, 1)
    kernel = HeatKernel(group)
    return SaturatedKernel(group, kernel, rel_tol=1e-8)


@pytest.fixture(scope="session")
def engel_basis():
    fields = [VectorField.from_strings(["1", "0", "0"]),
              VectorField.from_strings(["0", "x1", "x1^2"])]
    return lie_closure(fields, DilationWeights([1, 2, 3]))


@pytest.fixture(scope="session")
def engel_group(engel_basis):
    return build_split_coordinates(engel_basis)
