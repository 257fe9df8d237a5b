"""
Coverage-guided SFI fuzzer.

Each execution pairs a program input with an error sequence. Seeds are scheduled
round-robin weighted by energy; every seed first runs its all-zero and single-fault
sequences before random input and error-sequence mutation starts. Seeds that reach new
branch edges or new context-qualified error sequences are kept.
"""

import hashlib
import logging
import math
import random
import re
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

from dotenv import dotenv_values

from backend.utils.artifacts import safe_name, write_csv, write_jsonl, write_text
from cfg_model import BlockId, Cfg
from concolic import CampaignComplete, EmitTestCase, SchedulerAgent
from config import config
from errors import ConfigError
from ir_program import Program
from target_vm import ExecutionTrace, Outcome, TargetVM

logger = logging.getLogger(__name__)

TIME_SERIES_COLUMNS = ("executions", "wall_ms", "branch_edges", "error_sequences", "bugs")
MUTATION_OPS = ("bit-flip", "byte-set", "byte-delta", "resize", "splice")
DEFAULT_SEED = bytes(64)

INITIAL = "initial"
MUTATION = "mutation"
CONCOLIC = "concolic"


# -- budget ------------------------------------------------------------------------------

@dataclass(frozen=True)
class Budget:
    """Execution count (``100000execs``) or wall time (``30s``)"""

    executions: Optional[int] = None
    seconds: Optional[float] = None

    @classmethod
    def parse(cls, text) -> "Budget":
        if isinstance(text, Budget):
            return text
        if isinstance(text, int):
            value = text
            budget = cls(executions=value)
        else:
            match = re.fullmatch(r"\s*(-?\d+(?:\.\d+)?)\s*(execs|s)?\s*", str(text))
            if not match:
                raise ConfigError(f"invalid budget {text!r}; expected <N>execs or <S>s")
            value = float(match[1])
            if match[2] == "s":
                budget = cls(seconds=value)
            else:
                if value != int(value):
                    raise ConfigError(f"execution budget must be an integer: {text!r}")
                budget = cls(executions=int(value))
        if value <= 0:
            raise ConfigError("budget must be positive")
        return budget

    @property
    def deterministic(self) -> bool:
        return self.executions is not None

    def __str__(self) -> str:
        return f"{self.executions}execs" if self.deterministic else f"{self.seconds:g}s"


# -- seeds and coverage ------------------------------------------------------------------

@dataclass
class Seed:
    input: bytes
    error_seq: Tuple[int, ...] = ()
    provenance: str = INITIAL
    energy: int = 1
    iterations: int = 0
    encounters: Optional[int] = None
    last_trace: Optional[ExecutionTrace] = field(default=None, repr=False)

    def __post_init__(self):
        if self.energy < 0:
            raise ValueError("energy must be non-negative")


@dataclass
class PointCoverage:
    seen: bool = False
    fault_covered: bool = False


def sequence_triples(trace: ExecutionTrace, context_insensitive: bool = False) -> Tuple[Tuple[str, int, int], ...]:
    return tuple(
        (e.label, 0 if context_insensitive else e.context.hash, e.injected) for e in trace.encounters
    )


def sequence_digest(triples: Sequence[Tuple[str, int, int]]) -> str:
    """Order-sensitive digest of (label, context hash, bit) triples"""
    h = hashlib.blake2b(digest_size=16)
    for label, ctx, bit in triples:
        h.update(f"{label}\x1f{ctx:016x}\x1f{bit}\x1e".encode())
    return h.hexdigest()


def trace_digest(trace: ExecutionTrace) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(",".join(map(str, trace.path)).encode())
    for e in trace.encounters:
        h.update(f"|{e.label}:{e.context.hash:016x}:{e.injected}".encode())
    h.update(trace.describe().encode())
    return h.hexdigest()


class CoverageLedger:
    """Monotone record of branch edges, error sequences and per-point coverage"""

    def __init__(self, context_insensitive: bool = False):
        self.context_insensitive = context_insensitive
        self.branch_edges = set()
        self.error_sequences: Dict[str, Tuple[Tuple[str, int, int], ...]] = {}
        self.per_point: Dict[Tuple[str, int], PointCoverage] = {}

    def update(self, trace: ExecutionTrace) -> Tuple[int, bool]:
        """Record a trace; returns (new branch edges, whether the sequence is new)"""
        before = len(self.branch_edges)
        self.branch_edges |= trace.branch_edges
        triples = sequence_triples(trace, self.context_insensitive)
        new_sequence = False
        if triples:
            digest = sequence_digest(triples)
            if digest not in self.error_sequences:
                self.error_sequences[digest] = triples
                new_sequence = True
        for label, ctx, bit in triples:
            point = self.per_point.setdefault((label, ctx), PointCoverage())
            point.seen = True
            point.fault_covered = point.fault_covered or bool(bit)
        return len(self.branch_edges) - before, new_sequence

    def fault_covered_labels(self) -> frozenset:
        return frozenset(label for (label, _), cov in self.per_point.items() if cov.fault_covered)

    def seen_labels(self) -> frozenset:
        return frozenset(label for (label, _), cov in self.per_point.items() if cov.seen)

    def snapshot(self) -> dict:
        return {
            'branch_edges': len(self.branch_edges),
            'error_sequences': len(self.error_sequences),
            'points_seen': len(self.seen_labels()),
            'points_fault_covered': len(self.fault_covered_labels()),
        }


@dataclass(frozen=True)
class BugReport:
    label: str
    input: bytes
    error_seq: Tuple[int, ...]
    trace_digest: str
    crash_block: BlockId
    crash_block_name: str
    error_handling: bool
    depth: Optional[int]
    found_at: int
    provenance: str

    @property
    def dedup_key(self) -> Tuple[str, BlockId]:
        return self.label, self.crash_block

    def is_deep(self, threshold: int) -> bool:
        return self.depth is not None and self.depth >= threshold

    def to_dict(self) -> dict:
        return {
            'label': self.label,
            'input': self.input.hex(),
            'error_seq': "".join(map(str, self.error_seq)),
            'trace_digest': self.trace_digest,
            'crash_block': self.crash_block_name,
            'error_handling': self.error_handling,
            'depth': self.depth,
            'found_at': self.found_at,
            'provenance': self.provenance,
        }

    def repro_text(self) -> str:
        return (
            f"label={self.label}\n"
            f"input={self.input.hex()}\n"
            f"errors={''.join(map(str, self.error_seq))}\n"
        )


@dataclass(frozen=True)
class Sample:
    executions: int
    wall_ms: float
    branch_edges: int
    error_sequences: int
    bugs: int

    def row(self) -> Tuple:
        return self.executions, f"{self.wall_ms:.3f}", self.branch_edges, self.error_sequences, self.bugs


# -- mutation ----------------------------------------------------------------------------

def mutate_input(
    seed: Seed,
    rng: random.Random,
    max_len: Optional[int] = None,
    corpus: Sequence[bytes] = (),
    op: Optional[str] = None,
) -> bytes:
    """Apply one mutation from the standard stack; the result never exceeds ``max_len``"""
    limit = config.vm['max_input_len'] if max_len is None else max_len
    data = bytearray(seed.input[:limit])
    op = op or rng.choice(MUTATION_OPS)
    if op in ("bit-flip", "byte-delta") and not data:
        op = "byte-set"
    if op == "bit-flip":
        pos = rng.randrange(len(data))
        data[pos] ^= 1 << rng.randrange(8)
    elif op == "byte-set":
        if not data:
            data.append(rng.randrange(256))
        else:
            data[rng.randrange(len(data))] = rng.randrange(256)
    elif op == "byte-delta":
        pos = rng.randrange(len(data))
        delta = rng.randint(1, 35) * rng.choice((-1, 1))
        data[pos] = (data[pos] + delta) % 256
    elif op == "resize":
        new_len = rng.randint(0, min(limit, 2 * len(data) + 8))
        if new_len < len(data):
            del data[new_len:]
        else:
            data.extend(rng.randrange(256) for _ in range(new_len - len(data)))
    elif op == "splice":
        other = rng.choice(list(corpus)) if corpus else bytes(data)
        cut = rng.randint(0, len(data))
        start = rng.randint(0, len(other))
        data = data[:cut] + bytearray(other[start:])
    else:
        raise ValueError(f"unknown mutation {op!r}")
    return bytes(data[:limit])


def mutate_error_sequence(seed: Seed, trace: ExecutionTrace, rng: random.Random,
                          iteration: Optional[int] = None) -> Tuple[int, ...]:
    """
    Error sequence for the seed's next run.

    Iteration 0 is all-zero and iterations 1..n inject a single fault at encounter
    i-1; later iterations flip 1..ceil(n/4) bits of the parent sequence.
    """
    n = len(trace.encounters)
    if n == 0:
        return ()
    step = seed.iterations if iteration is None else iteration
    if step == 0:
        return (0,) * n
    if step <= n:
        return tuple(1 if i == step - 1 else 0 for i in range(n))
    parent = list(seed.error_seq[:n]) + [0] * max(0, n - len(seed.error_seq))
    flips = rng.randint(1, math.ceil(n / 4))
    for pos in rng.sample(range(n), flips):
        parent[pos] ^= 1
    return tuple(parent)


# -- the loop ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FuzzSettings:
    energy_concolic: int = 16
    energy_coverage: int = 4
    energy_default: int = 1
    sample_every: int = 100
    context_insensitive: bool = False
    max_input_len: int = 4096
    step_budget: int = 1_000_000
    deep_depth_threshold: int = 64

    @classmethod
    def from_config(cls, **overrides) -> "FuzzSettings":
        campaign = config.campaign
        values = {
            'energy_concolic': campaign['energy_concolic'],
            'energy_coverage': campaign['energy_coverage'],
            'energy_default': campaign['energy_default'],
            'sample_every': campaign['sample_every'],
            'context_insensitive': campaign['context_insensitive'],
            'max_input_len': config.vm['max_input_len'],
            'step_budget': config.vm['step_budget'],
            'deep_depth_threshold': campaign['deep_depth_threshold'],
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class FuzzResult:
    ledger: CoverageLedger
    bugs: List[BugReport]
    series: List[Sample]
    executions: int
    emitted: int = 0
    first_cover: Dict[str, int] = field(default_factory=dict)

    def write(self, out_dir: Path) -> None:
        write_csv((s.row() for s in self.series), TIME_SERIES_COLUMNS, out_dir / "timeseries.csv")
        write_jsonl((b.to_dict() for b in self.bugs), out_dir / "bugs.jsonl")
        labels = [b.label for b in self.bugs]
        for bug in self.bugs:
            name = safe_name(bug.label)
            if labels.count(bug.label) > 1:
                name = f"{name}__{safe_name(bug.crash_block_name)}"
            write_text(bug.repro_text(), out_dir / "repro" / f"{name}.repro")


class Fuzzer:
    """Single-worker SFI fuzzer over one program"""

    def __init__(
        self,
        program: Program,
        settings: Optional[FuzzSettings] = None,
        vm: Optional[TargetVM] = None,
        seed: int = 0,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.settings = settings or FuzzSettings.from_config()
        self.vm = vm or TargetVM(program, max_input_len=self.settings.max_input_len)
        self.program = program
        self.cfg: Cfg = self.vm.cfg
        self.rng = random.Random(seed)
        self.clock = clock
        self.ledger = CoverageLedger(self.settings.context_insensitive)
        self.queue: List[Seed] = []
        self.cursor = 0
        self.used = 0
        self.pending: Deque[Tuple[bytes, Tuple[int, ...], str]] = deque()
        self.bugs: Dict[Tuple[str, BlockId], BugReport] = {}
        self.first_cover: Dict[str, int] = {}
        self.executions = 0
        self.steps = 0
        self.deterministic = True

    # queue handling

    def add_seed(self, seed: Seed, front: bool = False) -> None:
        if front:
            self.queue.insert(self.cursor, seed)
            self.used = 0
        else:
            self.queue.append(seed)

    def _next_seed(self) -> Seed:
        seed = self.queue[self.cursor]
        if self.used >= max(seed.energy, 1):
            self.cursor = (self.cursor + 1) % len(self.queue)
            self.used = 0
            seed = self.queue[self.cursor]
        self.used += 1
        return seed

    def _plan(self, seed: Seed) -> Tuple[bytes, Tuple[int, ...]]:
        if seed.encounters is None or seed.last_trace is None:
            return seed.input, seed.error_seq
        if seed.iterations <= seed.encounters:
            return seed.input, mutate_error_sequence(seed, seed.last_trace, self.rng)
        corpus = [s.input for s in self.queue]
        data = mutate_input(seed, self.rng, self.settings.max_input_len, corpus)
        return data, mutate_error_sequence(seed, seed.last_trace, self.rng)

    # one execution

    def run_one(self, data: bytes, error_seq: Tuple[int, ...], provenance: str) -> ExecutionTrace:
        trace = self.vm.execute(data, error_seq, self.settings.step_budget)
        self.executions += 1
        self.steps += trace.steps
        new_edges, new_sequence = self.ledger.update(trace)
        for encounter in trace.encounters:
            if encounter.injected and encounter.label not in self.first_cover:
                self.first_cover[encounter.label] = self.executions

        if trace.outcome is Outcome.CRASH:
            self._record_bug(data, trace, provenance)
            consumed = len(trace.encounters)
            if any(error_seq[:consumed]) and any(error_seq[consumed:]):
                # the crash hid deeper faults; retry them with earlier faults masked
                self.pending.append((data, (0,) * consumed + tuple(error_seq[consumed:]), provenance))

        if new_edges or new_sequence:
            self.add_seed(Seed(data, trace.error_sequence, MUTATION, self.settings.energy_coverage))
        return trace

    def _record_bug(self, data: bytes, trace: ExecutionTrace, provenance: str) -> None:
        key = (trace.crash_label, trace.crash_block)
        if key in self.bugs:
            return
        report = BugReport(
            label=trace.crash_label,
            input=data,
            error_seq=trace.error_sequence,
            trace_digest=trace_digest(trace),
            crash_block=trace.crash_block,
            crash_block_name=self.cfg.name(trace.crash_block),
            error_handling=trace.faults_injected > 0,
            depth=self.cfg.depth(trace.crash_block),
            found_at=self.executions,
            provenance=provenance,
        )
        self.bugs[key] = report
        self.logger.info(f"🐞 New bug {report.label} at {report.crash_block_name} "
                         f"(execution {self.executions}, faults={trace.faults_injected})")

    def _sample(self, started: float) -> Sample:
        if self.deterministic:
            # virtual milliseconds at one VM step per microsecond
            wall_ms = self.steps / 1000.0
        else:
            wall_ms = (self.clock() - started) * 1000.0
        return Sample(self.executions, wall_ms, len(self.ledger.branch_edges),
                      len(self.ledger.error_sequences), len(self.bugs))

    def run(
        self,
        seeds: Sequence[bytes],
        budget: Budget,
        scheduler: Optional[SchedulerAgent] = None,
    ) -> FuzzResult:
        budget = Budget.parse(budget)
        self.deterministic = budget.deterministic
        for data in seeds or [DEFAULT_SEED]:
            self.add_seed(Seed(bytes(data[:self.settings.max_input_len]), (), INITIAL, self.settings.energy_default))

        series: List[Sample] = []
        started = self.clock()
        emitted = 0
        if scheduler is not None:
            scheduler.start()

        def exhausted() -> bool:
            if budget.executions is not None:
                return self.executions >= budget.executions
            return self.clock() - started >= budget.seconds

        while not exhausted():
            if scheduler is not None:
                for action in scheduler.receive():
                    if isinstance(action, EmitTestCase):
                        emitted += 1
                        self.add_seed(Seed(action.input, (), CONCOLIC, self.settings.energy_concolic), front=True)
                    elif isinstance(action, CampaignComplete):
                        self.logger.info(f"✅ Scheduler finished: {action.reason}")

            if self.pending:
                data, error_seq, provenance = self.pending.popleft()
                trace = self.run_one(data, error_seq, provenance)
            else:
                seed = self._next_seed()
                data, error_seq = self._plan(seed)
                trace = self.run_one(data, error_seq, seed.provenance)
                if seed.encounters is None:
                    seed.encounters = len(trace.encounters)
                    seed.last_trace = trace
                seed.iterations += 1

            if scheduler is not None:
                scheduler.submit(trace)
                scheduler.pump()

            if self.executions % self.settings.sample_every == 0:
                series.append(self._sample(started))

        if not series or series[-1].executions != self.executions:
            series.append(self._sample(started))
        self.logger.info(f"📊 {self.executions} executions, {len(self.ledger.branch_edges)} edges, "
                         f"{len(self.ledger.error_sequences)} error sequences, {len(self.bugs)} bug(s)")
        return FuzzResult(self.ledger, list(self.bugs.values()), series, self.executions, emitted,
                          dict(self.first_cover))


def fuzz_loop(
    program: Program,
    seeds: Sequence[bytes],
    budget,
    scheduler: Optional[SchedulerAgent] = None,
    settings: Optional[FuzzSettings] = None,
    rng_seed: int = 0,
    vm: Optional[TargetVM] = None,
) -> FuzzResult:
    """Run one fuzzing campaign; coverage is reported on the VM's derived Cfg"""
    fuzzer = Fuzzer(program, settings, vm, rng_seed)
    return fuzzer.run(seeds, budget, scheduler)


# -- replay ------------------------------------------------------------------------------

@dataclass(frozen=True)
class Reproducer:
    label: str
    input: bytes
    error_seq: Tuple[int, ...]


def load_reproducer(path: str) -> Reproducer:
    values = dotenv_values(path)
    try:
        label = values['label']
        data = bytes.fromhex(values.get('input') or "")
        bits = tuple(int(c) for c in (values.get('errors') or ""))
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"malformed reproducer {path}: {e}") from e
    if not label or any(b not in (0, 1) for b in bits):
        raise ConfigError(f"malformed reproducer {path}")
    return Reproducer(label, data, bits)


def replay(program: Program, reproducer: Reproducer, vm: Optional[TargetVM] = None) -> Tuple[bool, ExecutionTrace]:
    """Re-execute a reproducer; True when it crashes with the recorded label"""
    vm = vm or TargetVM(program)
    trace = vm.execute(reproducer.input, reproducer.error_seq)
    reproduced = trace.outcome is Outcome.CRASH and trace.crash_label == reproducer.label
    return reproduced, trace
