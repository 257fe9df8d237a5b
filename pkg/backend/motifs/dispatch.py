"""Motifs whose error points hang off one dispatching block"""

from backend.motifs import MotifContext, MotifFragment, PlantedBug, fallible_block, handler_block


def build_switch(ctx: MotifContext) -> MotifFragment:
    """A switch on one input byte over ``switch_arms`` arms, one error point per arm"""
    offset = ctx.next_offset(1)
    arms = ctx.switch_arms
    selector = ctx.label("op")
    cases = " ".join(f"{i}:{ctx.label(f'arm{i}')}" for i in range(arms))
    lines = [
        f"block {ctx.label('dispatch')}:",
        f"  {selector} = input[{offset}]",
        f"  switch {selector} [{cases}] default:{ctx.exit}",
    ]
    points = [ctx.label(f"ep{i}") for i in range(arms)]
    buggy = ctx.rng.randrange(arms) if ctx.plant_bug else None
    bugs = []
    for i, point in enumerate(points):
        lines += fallible_block(ctx, f"arm{i}", point, ctx.exit, ctx.label(f"err{i}"))
        crash = ctx.bug_label(f"arm{i}") if i == buggy else None
        lines += handler_block(ctx, f"err{i}", crash)
        if crash:
            bugs.append(PlantedBug(crash, (point,), {offset: i}))
    return MotifFragment("switch", ctx.label("dispatch"), lines, points, list(points), k=1, bugs=bugs)


def build_diamond(ctx: MotifContext) -> MotifFragment:
    """Two error points on either side of a byte comparison"""
    offset = ctx.next_offset(1)
    byte, test = ctx.label("d"), ctx.label("low")
    lines = [
        f"block {ctx.label('fork')}:",
        f"  {byte} = input[{offset}]",
        f"  {test} = {byte} < 128",
        f"  br {test} {ctx.label('left')} {ctx.label('right')}",
    ]
    sides = (("left", 0), ("right", 200))
    buggy = ctx.rng.randrange(2) if ctx.plant_bug else None
    points, bugs = [], []
    for i, (side, value) in enumerate(sides):
        point = ctx.label(f"ep_{side}")
        points.append(point)
        lines += fallible_block(ctx, side, point, ctx.exit, ctx.label(f"err_{side}"))
        crash = ctx.bug_label(side) if i == buggy else None
        lines += handler_block(ctx, f"err_{side}", crash)
        if crash:
            bugs.append(PlantedBug(crash, (point,), {offset: value}))
    return MotifFragment("diamond", ctx.label("fork"), lines, points, list(points), k=1, bugs=bugs)
