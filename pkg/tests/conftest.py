from importlib import resources

import pytest

from lumen.core import assemble
from lumen.devices import bundled_devices, find_device

ACCEPTANCE_LINES = []


def program_source(name):
    return resources.files("lumen").joinpath(f"data/programs/{name}.asm").read_text()


@pytest.fixture(scope="session")
def devices():
    return bundled_devices()


@pytest.fixture(scope="session")
def blue(devices):
    return find_device(devices, "5 mm blue LED")


@pytest.fixture(scope="session")
def red_diffuse(devices):
    return find_device(devices, "red diffuse")


@pytest.fixture(scope="session")
def sweep_target():
    return assemble(program_source("sweep_target"))


@pytest.fixture(scope="session")
def opcode_coverage():
    return assemble(program_source("opcode_coverage"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
