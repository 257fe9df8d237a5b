"""
Synthetic target generator.

Builds IR programs from motif regions (see ``backend/motifs``) separated by straight-line
spacer blocks, so error points of different regions never share an ancestor within the
clustering distance. Every program ships with a ground-truth JSON describing the planted
error points, intended clusters and planted bugs; each planted bug is confirmed at
generation time by searching the fault combinations over its region's error points.
"""

import itertools
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from backend.motifs import MOTIF_TYPES, MotifContext, MotifFragment, PlantedBug, build_motif
from backend.utils.artifacts import ensure_dir, write_json, write_text
from errors import GenerationError
from ir_program import Program, dump_program, load_program
from target_vm import Outcome, TargetVM

logger = logging.getLogger(__name__)

MAX_POINTS_PER_FUNCTION = 64
MAX_MAGIC_BYTES = 6


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape of a generated corpus; ``count`` programs share everything but their RNG stream"""

    seed: int = 0
    functions: int = 1
    motifs: Mapping[str, int] = field(default_factory=dict)
    density: int = 0
    bug_rate: float = 0.5
    count: int = 1
    switch_arms: int = 3
    chain_length: int = 3
    magic_bytes: int = 4
    depth_padding: int = 0
    name: str = "gen"

    @property
    def gap(self) -> int:
        # spacer must exceed every motif's clustering distance
        return max(3, self.chain_length)

    def validate(self) -> "GeneratorSpec":
        unknown = sorted(set(self.motifs) - set(MOTIF_TYPES))
        if unknown:
            raise GenerationError(f"unknown motif(s): {', '.join(unknown)}")
        if any(n < 0 for n in self.motifs.values()) or self.density < 0:
            raise GenerationError("motif counts and density must be non-negative")
        if self.functions < 1 or self.count < 1:
            raise GenerationError("functions and count must be at least 1")
        if not 0.0 <= self.bug_rate <= 1.0:
            raise GenerationError("bug_rate must lie in [0, 1]")
        if not 1 <= self.switch_arms <= 256:
            raise GenerationError("switch_arms must lie in [1, 256]")
        if not 1 <= self.magic_bytes <= MAX_MAGIC_BYTES:
            raise GenerationError(f"magic_bytes must lie in [1, {MAX_MAGIC_BYTES}]")
        if self.chain_length < 1 or self.depth_padding < 0:
            raise GenerationError("chain_length must be positive and depth_padding non-negative")
        return self

    @classmethod
    def parse_motifs(cls, text: str) -> Dict[str, int]:
        """``switch=1,chain=2`` to a count mapping"""
        counts: Dict[str, int] = {}
        for item in filter(None, (part.strip() for part in text.split(","))):
            name, _, value = item.partition("=")
            try:
                counts[name.strip()] = int(value) if value else 1
            except ValueError as e:
                raise GenerationError(f"invalid motif count {item!r}") from e
        return counts


@dataclass
class GeneratedTarget:
    name: str
    program: Program
    truth: dict
    path: Optional[Path] = None


class _OffsetAllocator:
    def __init__(self):
        self.next = 0

    def __call__(self, width: int) -> int:
        start = self.next
        self.next += width
        return start


def _points_per_region(spec: GeneratorSpec, motif: str) -> int:
    return {
        'switch': spec.switch_arms,
        'chain': spec.chain_length,
        'deep-magic': 3,
        'diamond': 2,
        'double-fault': 2,
        'single': 1,
    }[motif]


def _plan_regions(spec: GeneratorSpec, rng: random.Random) -> List[List[str]]:
    regions = [name for name in MOTIF_TYPES for _ in range(spec.motifs.get(name, 0))]
    regions += ['single'] * (spec.density * spec.functions)
    rng.shuffle(regions)
    per_function: List[List[str]] = [[] for _ in range(spec.functions)]
    for index, motif in enumerate(regions):
        per_function[index % spec.functions].append(motif)
    for number, motifs in enumerate(per_function):
        load = sum(_points_per_region(spec, m) for m in motifs)
        if load > MAX_POINTS_PER_FUNCTION:
            raise GenerationError(
                f"function {number} would hold {load} error points; capacity is {MAX_POINTS_PER_FUNCTION}"
            )
    return per_function


def _function_body(
    spec: GeneratorSpec,
    rng: random.Random,
    offsets: _OffsetAllocator,
    motifs: Sequence[str],
    first_region: int,
    tail: List[str],
) -> Tuple[List[str], List[MotifFragment]]:
    """Entry block, spacer-separated regions, then ``tail`` as the final block"""
    tail_label = tail[0][len("block "):-1]
    fragments: List[MotifFragment] = []
    region_blocks: List[List[str]] = []
    next_label = tail_label
    # build back to front so each region knows its exit
    for index in reversed(range(len(motifs))):
        prefix = f"r{first_region + index}"
        ctx = MotifContext(
            prefix=prefix,
            exit=next_label,
            rng=rng,
            next_offset=offsets,
            plant_bug=rng.random() < spec.bug_rate,
            switch_arms=spec.switch_arms,
            chain_length=spec.chain_length,
            magic_bytes=spec.magic_bytes,
            depth_padding=spec.depth_padding,
        )
        fragment = build_motif(motif_type=motifs[index], ctx=ctx)
        spacer_first, spacer = _spacer(prefix, spec.gap, fragment.entry)
        region_blocks.append(spacer + fragment.lines)
        fragments.append(fragment)
        next_label = spacer_first
    fragments.reverse()
    region_blocks.reverse()
    return [next_label] + [line for block in region_blocks for line in block] + tail, fragments


def _spacer(prefix: str, count: int, target: str) -> Tuple[str, List[str]]:
    labels = [f"{prefix}_gap{i}" for i in range(count)]
    lines = []
    for i, label in enumerate(labels):
        lines += [f"block {label}:", f"  jmp {labels[i + 1] if i + 1 < count else target}"]
    return labels[0], lines


def _render(spec: GeneratorSpec, rng: random.Random) -> Tuple[str, List[Tuple[str, MotifFragment]]]:
    plan = _plan_regions(spec, rng)
    offsets = _OffsetAllocator()
    helpers = [f"f{i}" for i in range(1, spec.functions)]
    text: List[str] = []
    placed: List[Tuple[str, MotifFragment]] = []
    region = 0
    order = [("main", plan[0])] + list(zip(helpers, plan[1:]))
    bodies = {}
    for function, motifs in order:
        if function == "main":
            tail = ["block main_tail:"] + [f"  call {h}" for h in helpers] + ["  ret"]
        else:
            tail = [f"block {function}_tail:", "  ret"]
        body, fragments = _function_body(spec, rng, offsets, motifs, region, tail)
        region += len(motifs)
        bodies[function] = body
        placed += [(function, f) for f in fragments]
    for function, _ in order:
        first, *rest = bodies[function]
        entry = "entry" if function == "main" else f"{function}_entry"
        text += [f"func {function}:", f"block {entry}:", f"  jmp {first}"] + rest + [""]
    return "\n".join(text), placed


def _confirm_bug(vm: TargetVM, bug: PlantedBug, input_len: int) -> Tuple[bytes, Tuple[int, ...]]:
    """Smallest fault combination over the bug's own error points that crashes with its label"""
    data = bytearray(input_len)
    for offset, value in bug.trigger.items():
        data[offset] = value
    data = bytes(data)
    base = vm.execute(data)
    positions = [i for i, e in enumerate(base.encounters) if e.label in bug.error_points]
    for size in range(1, len(positions) + 1):
        for chosen in itertools.combinations(positions, size):
            # a fault can reveal later encounters, so extend with zeros
            bits = tuple(1 if i in chosen else 0 for i in range(max(chosen) + 1))
            trace = vm.execute(data, bits)
            if trace.outcome is Outcome.CRASH and trace.crash_label == bug.label:
                return data, bits
    raise GenerationError(f"planted bug {bug.label} is unreachable")


def generate_target(spec: GeneratorSpec, index: int = 0) -> GeneratedTarget:
    spec.validate()
    rng = random.Random(spec.seed * 1_000_003 + index)
    text, placed = _render(spec, rng)
    program = load_program(text)
    name = f"{spec.name}_{spec.seed}_{index}"

    vm = TargetVM(program)
    input_len = 1 + max(
        [offset for _, f in placed for bug in f.bugs for offset in bug.trigger] or [0]
    )
    bugs = []
    for function, fragment in placed:
        for bug in fragment.bugs:
            data, bits = _confirm_bug(vm, bug, input_len)
            bugs.append({**bug.to_dict(), 'input': data.hex(), 'errors': "".join(map(str, bits))})

    truth = {
        'name': name,
        'seed': spec.seed,
        'index': index,
        'regions': [{'function': function, **fragment.to_dict()} for function, fragment in placed],
        'points': [p for _, f in placed for p in f.points],
        'guarded_points': [p for _, f in placed if f.guarded for p in f.points],
        'clusters': [{'members': f.cluster, 'k': f.k} for _, f in placed],
        'bugs': bugs,
    }
    logger.debug(f"🧩 Generated {name}: {len(placed)} region(s), {len(truth['points'])} error point(s), "
                 f"{len(bugs)} planted bug(s)")
    return GeneratedTarget(name, program, truth)


def generate_targets(spec: GeneratorSpec, out_dir: Optional[Path] = None) -> List[GeneratedTarget]:
    """
    Generate ``spec.count`` programs.

    Args:
        spec: Corpus shape; output is a pure function of it.
        out_dir: When given, writes ``<name>.ir`` and ``<name>.truth.json`` per program.
    Returns:
        Generated targets in index order.
    Raises:
        GenerationError: The generator shape is invalid or exceeds per-function capacity.
    """
    targets = [generate_target(spec, index) for index in range(spec.count)]
    if out_dir is not None:
        out_dir = ensure_dir(Path(out_dir))
        for target in targets:
            target.path = out_dir / f"{target.name}.ir"
            write_text(dump_program(target.program), target.path)
            write_json(target.truth, out_dir / f"{target.name}.truth.json")
        logger.info(f"✅ Wrote {len(targets)} generated target(s) to {out_dir}")
    return targets
