import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).resolve().parent
DATA_DIR = TESTS_DIR / "data"

# make the oracle helpers importable as plain modules
if str(TESTS_DIR) not in sys.path:
    sys.path.insert(0, str(TESTS_DIR))


@pytest.fixture(scope="session")
def h4_fcidump_path():
    return DATA_DIR / "h4_chain.fcidump"


@pytest.fixture(scope="session")
def h6_fcidump_path():
    return DATA_DIR / "h6_chain.fcidump"


@pytest.fixture(scope="session")
def h4_bundle_path():
    return DATA_DIR / "h4_chain.npz"


@pytest.fixture(scope="session")
def h6_bundle_path():
    return DATA_DIR / "h6_chain.npz"


@pytest.fixture(scope="session")
def h4_ham(h4_fcidump_path):
    from embedci.hamio import parse_fcidump

    return parse_fcidump(h4_fcidump_path.read_text())


@pytest.fixture(scope="session")
def h6_ham(h6_fcidump_path):
    from embedci.hamio import parse_fcidump

    return parse_fcidump(h6_fcidump_path.read_text())


@pytest.fixture(scope="session")
def h4_bundle(h4_bundle_path):
    from embedci.hamio import load_meanfield_bundle

    return load_meanfield_bundle(h4_bundle_path)


@pytest.fixture(scope="session")
def h6_bundle(h6_bundle_path):
    from embedci.hamio import load_meanfield_bundle

    return load_meanfield_bundle(h6_bundle_path)
