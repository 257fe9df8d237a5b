"""Makes the flat top-level modules importable from tests/ and registers the suite options"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def pytest_addoption(parser):
    parser.addoption(
        "--full-scale",
        action="store_true",
        default=False,
        help="run the slow acceptance checks at their full graph counts and execution budgets",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale check, reduced scale unless --full-scale")
