import random
from typing import Callable, List, Tuple

import pytest

from cfg_model import Cfg, load_dot_file
from config import config
from ir_program import Program, load_program_file
from target_generator import GeneratorSpec, generate_target

TARGETS_DIR = config.get_targets_dir()


def build_random_dag(rng: random.Random, max_blocks: int, max_points: int) -> Tuple[Cfg, List[str]]:
    """Rooted DAG over blocks 0..n-1 (entry 0) with error points on distinct non-entry blocks"""
    n = rng.randint(2, max_blocks)
    edges = set()
    for block in range(1, n):
        edges.add((rng.randrange(block), block))
    for _ in range(rng.randint(0, n)):
        src = rng.randrange(n - 1)
        edges.add((src, rng.randint(src + 1, n - 1)))
    hosts = rng.sample(range(1, n), rng.randint(1, min(max_points, n - 1)))
    sites = {f"ep{i}": [block] for i, block in enumerate(hosts)}
    cfg = Cfg({b: f"b{b}" for b in range(n)}, 0, [(s, d, None) for s, d in sorted(edges)], sites)
    return cfg, list(sites)


@pytest.fixture
def targets_dir():
    return TARGETS_DIR


@pytest.fixture
def load_target() -> Callable[[str], Program]:
    def load(name: str) -> Program:
        return load_program_file(str(TARGETS_DIR / name))
    return load


@pytest.fixture
def fig2_program(load_target) -> Program:
    return load_target("fig2.ir")


@pytest.fixture
def fig2_cfg() -> Cfg:
    return load_dot_file(str(TARGETS_DIR / "fig2.dot"))


@pytest.fixture
def random_dag():
    return build_random_dag


@pytest.fixture
def random_program() -> Callable[[int], Program]:
    """Generated multi-motif program; same seed, same program"""
    def make(seed: int, **shape) -> Program:
        shape.setdefault('motifs', {'switch': 1, 'chain': 1, 'diamond': 1, 'double-fault': 1})
        shape.setdefault('density', 1)
        return generate_target(GeneratorSpec(seed=seed, **shape)).program
    return make


@pytest.fixture
def full_scale(request) -> bool:
    return request.config.getoption("--full-scale")
