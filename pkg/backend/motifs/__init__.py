"""
IR motif templates for the synthetic target generator.

Each motif renders a self-contained region of blocks that enters at ``fragment.entry``
and leaves through ``ctx.exit`` on every non-crashing path. Motifs label their own
ground truth: the error points they plant, the cluster those points are meant to form
and the ``k`` at which clustering recovers it, and any planted bugs together with the
input bytes that route execution to them.
"""

import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Tuple

from ir_program import HANDLER_KINDS, POINTER_LIKE, return_kind

MotifType = Literal['switch', 'chain', 'deep-magic', 'diamond', 'double-fault', 'single']

POINTER_CALLEES = ("malloc", "calloc", "realloc", "strdup", "fopen", "opendir", "create_buffer", "get_entry")
INTEGER_CALLEES = ("open", "read", "write", "ioctl", "send", "recv", "lock_acquire", "stat")
# handlers jump back to the region exit, so ``return`` never appears as an op
HANDLER_OPS = tuple(kind for kind in HANDLER_KINDS if kind != "return")
# ops after which execution reaches the next instruction of the handler block
CONTINUING_HANDLER_OPS = tuple(kind for kind in HANDLER_OPS if kind != "exit")


@dataclass(frozen=True)
class PlantedBug:
    label: str
    error_points: Tuple[str, ...]
    trigger: Dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'label': self.label,
            'error_points': list(self.error_points),
            'trigger': {str(offset): value for offset, value in sorted(self.trigger.items())},
        }


@dataclass
class MotifContext:
    prefix: str
    exit: str
    rng: random.Random
    next_offset: Callable[[int], int]
    plant_bug: bool = False
    switch_arms: int = 3
    chain_length: int = 3
    magic_bytes: int = 4
    depth_padding: int = 0

    def label(self, name: str) -> str:
        return f"{self.prefix}_{name}"

    def bug_label(self, name: str) -> str:
        return f"bug-{self.prefix}-{name}"


@dataclass
class MotifFragment:
    motif: str
    entry: str
    lines: List[str]
    points: List[str]
    cluster: List[str]
    k: int
    bugs: List[PlantedBug] = field(default_factory=list)
    guarded: bool = False

    def to_dict(self) -> dict:
        return {
            'motif': self.motif,
            'entry': self.entry,
            'points': list(self.points),
            'cluster': list(self.cluster),
            'k': self.k,
            'bugs': [b.to_dict() for b in self.bugs],
            'guarded': self.guarded,
        }


def pick_callee(rng: random.Random) -> str:
    return rng.choice(POINTER_CALLEES + INTEGER_CALLEES)


def failure_test(callee: str, dst: str) -> str:
    """Assignment right-hand side that is 1 exactly when ``dst`` holds the error value"""
    if return_kind(callee) == POINTER_LIKE:
        return f"{dst} == 0"
    return f"{dst} < 0"


def fallible_block(
    ctx: MotifContext,
    block: str,
    point: str,
    ok_target: str,
    err_target: str,
    flag: Optional[str] = None,
) -> List[str]:
    """A block that starts with a checked fallible call and branches on its outcome"""
    callee = pick_callee(ctx.rng)
    dst = ctx.label(f"v_{block}")
    flag = flag or ctx.label(f"bad_{block}")
    return [
        f"block {ctx.label(block)}:",
        f"  fcall {dst} = {callee} @{point}",
        f"  {flag} = {failure_test(callee, dst)}",
        f"  br {flag} {err_target} {ok_target}",
    ]


def handler_block(ctx: MotifContext, block: str, crash_label: Optional[str] = None) -> List[str]:
    """Handler block that ends at ``crash_label`` when given, else jumps to the region exit"""
    ops = CONTINUING_HANDLER_OPS if crash_label else HANDLER_OPS
    lines = [f"block {ctx.label(block)}:", f"  handler {ctx.rng.choice(ops)}"]
    lines.append(f"  crash {crash_label}" if crash_label else f"  jmp {ctx.exit}")
    return lines


def jump_chain(ctx: MotifContext, name: str, count: int, target: str) -> Tuple[str, List[str]]:
    """``count`` straight-line blocks ending at ``target``; returns (first label, lines)"""
    if count <= 0:
        return target, []
    labels = [ctx.label(f"{name}{i}") for i in range(count)]
    lines = []
    for i, label in enumerate(labels):
        nxt = labels[i + 1] if i + 1 < count else target
        lines += [f"block {label}:", f"  jmp {nxt}"]
    return labels[0], lines


from backend.motifs.dispatch import build_diamond, build_switch  # noqa: E402
from backend.motifs.guarded import build_deep_magic  # noqa: E402
from backend.motifs.sequential import build_chain, build_double_fault, build_single  # noqa: E402


MotifDict: Dict[str, Callable[[MotifContext], MotifFragment]] = {

    'switch': build_switch,
    'chain': build_chain,
    'deep-magic': build_deep_magic,
    'diamond': build_diamond,
    'double-fault': build_double_fault,
    'single': build_single,
}

MOTIF_TYPES = tuple(name for name in MotifDict if name != 'single')


def build_motif(*, motif_type: MotifType, ctx: MotifContext) -> MotifFragment:
    """
    Render one motif region.
    Args:
        motif_type: Registry key.
        ctx: Label prefix, exit block, RNG and shape options.
    Returns:
        The rendered fragment with its ground truth.
    """
    return MotifDict[motif_type](ctx)
