"""Motifs whose error points follow each other on one path"""

from backend.motifs import CONTINUING_HANDLER_OPS, MotifContext, MotifFragment, PlantedBug, fallible_block, handler_block


def build_chain(ctx: MotifContext) -> MotifFragment:
    """``chain_length`` error points, each reached through the previous one's success edge"""
    length = ctx.chain_length
    points = [ctx.label(f"ep{i}") for i in range(length)]
    buggy = ctx.rng.randrange(length) if ctx.plant_bug else None
    lines, bugs = [], []
    for i, point in enumerate(points):
        ok = ctx.label(f"link{i + 1}") if i + 1 < length else ctx.exit
        lines += fallible_block(ctx, f"link{i}", point, ok, ctx.label(f"err{i}"))
        crash = ctx.bug_label(f"link{i}") if i == buggy else None
        lines += handler_block(ctx, f"err{i}", crash)
        if crash:
            bugs.append(PlantedBug(crash, (point,)))
    return MotifFragment("chain", ctx.label("link0"), lines, points, list(points), k=max(length - 1, 1), bugs=bugs)


def build_double_fault(ctx: MotifContext) -> MotifFragment:
    """Two allocations whose shared cleanup misbehaves only when both fail"""
    first, second = ctx.label("ep_first"), ctx.label("ep_second")
    first_flag, second_flag = ctx.label("fa"), ctx.label("fb")
    lines = fallible_block(ctx, "first", first, ctx.label("second"), ctx.label("first_failed"), first_flag)
    lines += [
        f"block {ctx.label('first_failed')}:",
        f"  handler {ctx.rng.choice(CONTINUING_HANDLER_OPS)}",
        f"  jmp {ctx.label('second')}",
    ]
    lines += fallible_block(ctx, "second", second, ctx.exit, ctx.label("cleanup"), second_flag)
    both, twice = ctx.label("both"), ctx.label("twice")
    lines += [
        f"block {ctx.label('cleanup')}:",
        "  handler free",
        f"  {both} = {first_flag} + {second_flag}",
        f"  {twice} = {both} == 2",
    ]
    bugs = []
    if ctx.plant_bug:
        crash = ctx.bug_label("double")
        lines.append(f"  crash {crash} if {twice}")
        bugs.append(PlantedBug(crash, (first, second)))
    lines.append(f"  jmp {ctx.exit}")
    points = [first, second]
    return MotifFragment("double-fault", ctx.label("first"), lines, points, list(points), k=1, bugs=bugs)


def build_single(ctx: MotifContext) -> MotifFragment:
    """One stand-alone checked call"""
    point = ctx.label("ep")
    lines = fallible_block(ctx, "site", point, ctx.exit, ctx.label("err"))
    crash = ctx.bug_label("site") if ctx.plant_bug else None
    lines += handler_block(ctx, "err", crash)
    bugs = [PlantedBug(crash, (point,))] if crash else []
    return MotifFragment("single", ctx.label("site"), lines, [point], [point], k=1, bugs=bugs)
