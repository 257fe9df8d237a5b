"""Deep-state motif: a chain of error points behind a multi-byte equality guard"""

from backend.motifs import MotifContext, MotifFragment, PlantedBug, fallible_block, handler_block, jump_chain

GUARDED_POINTS = 3


def build_deep_magic(ctx: MotifContext) -> MotifFragment:
    """
    ``magic_bytes`` little-endian input bytes must equal a random word before execution
    descends ``depth_padding`` blocks to three chained error points.
    """
    width = ctx.magic_bytes
    offset = ctx.next_offset(width)
    magic_bytes = [ctx.rng.randint(1, 255) for _ in range(width)]
    magic = sum(b << (8 * i) for i, b in enumerate(magic_bytes))

    lines = [f"block {ctx.label('guard')}:"]
    word = None
    for i in range(width):
        byte = ctx.label(f"m{i}")
        lines.append(f"  {byte} = input[{offset + i}]")
        term = byte
        if i:
            term = ctx.label(f"t{i}")
            lines.append(f"  {term} = {byte} * {1 << (8 * i)}")
        if word is None:
            word = term
        else:
            total = ctx.label(f"s{i}")
            lines.append(f"  {total} = {word} + {term}")
            word = total
    passed = ctx.label("magic")
    lines.append(f"  {passed} = {word} == {magic}")

    first = ctx.label("deep0")
    descent, padding = jump_chain(ctx, "pad", ctx.depth_padding, first)
    lines.append(f"  br {passed} {descent} {ctx.exit}")
    lines += padding

    trigger = {offset + i: b for i, b in enumerate(magic_bytes)}
    points = [ctx.label(f"ep_deep{i}") for i in range(GUARDED_POINTS)]
    buggy = ctx.rng.randrange(GUARDED_POINTS) if ctx.plant_bug else None
    bugs = []
    for i, point in enumerate(points):
        ok = ctx.label(f"deep{i + 1}") if i + 1 < GUARDED_POINTS else ctx.exit
        lines += fallible_block(ctx, f"deep{i}", point, ok, ctx.label(f"deep_err{i}"))
        crash = ctx.bug_label(f"deep{i}") if i == buggy else None
        lines += handler_block(ctx, f"deep_err{i}", crash)
        if crash:
            bugs.append(PlantedBug(crash, (point,), dict(trigger)))
    return MotifFragment(
        "deep-magic", ctx.label("guard"), lines, points, list(points),
        k=GUARDED_POINTS - 1, bugs=bugs, guarded=True,
    )
