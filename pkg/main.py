import argparse
import logging
import os
import sys
from pathlib import Path
from traceback import format_exc
from typing import List, Optional, Sequence

# Load configuration first
from config import config, get_log_level

# Create logs directory if needed
if config.app['log_to_file']:
    os.makedirs('logs', exist_ok=True)

# Configure logging based on config
log_handlers = [logging.StreamHandler()]
if config.app['log_to_file']:
    log_handlers.append(logging.FileHandler('logs/huntfuzz.log'))

logging.basicConfig(
    level=getattr(logging, get_log_level().upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=log_handlers
)

# Configure module logger
logger = logging.getLogger(__name__)

from backend.utils.artifacts import ensure_dir, write_json, write_text
from cfg_model import load_dot_file
from clustering import cluster_error_points, cluster_overlay_dot
from errors import (
    CfgLoadError, ConfigError, DerivationError, GenerationError, GraphMembershipError, HuntFuzzError,
    IRParseError, IRValidationError, UsageError,
)
from extractor import apply_overrides, export_error_points, extract_candidates, load_overrides
from fuzzer import FuzzSettings, load_reproducer, replay
from harness import CampaignConfig, analyze_target, collect_targets, parse_sweep, run_bench, run_campaign
from ir_program import load_program_file
from report_generator import cmd_report
from target_generator import GeneratorSpec, generate_targets
from target_vm import TargetVM

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TARGET = 2
EXIT_INTERNAL = 3

TARGET_ERRORS = (IRParseError, IRValidationError, CfgLoadError, DerivationError, GraphMembershipError)
USAGE_ERRORS = (UsageError, ConfigError, GenerationError)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports bad flags as UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(message)


def display_startup_status(command: str):
    """Display system status dashboard"""
    logger.info("=" * 60)
    logger.info("📊 HUNTFUZZ STATUS DASHBOARD")
    logger.info("=" * 60)

    campaign = config.campaign
    logger.info(f"🔧 COMMAND: {command}")
    logger.info("⚙️ CAMPAIGN DEFAULTS:")
    logger.info(f"   🧩 Clustering: k={campaign['k']} ({campaign['clustering_mode']})")
    logger.info(f"   ⚖️ Weights: w1={campaign['w1']} w2={campaign['w2']} ({campaign['distance_term']})")
    logger.info(f"   🔁 Mutate threshold: {campaign['mutate_threshold']}")
    logger.info(f"   ⏱️ Budget: {campaign['budget']} (seed {campaign['seed']}, repeats {campaign['repeats']})")
    logger.info("🖥️ TARGET VM:")
    logger.info(f"   📚 Context depth: {config.vm['context_depth']}")
    logger.info(f"   🛑 Step budget: {config.vm['step_budget']}")
    logger.info(f"   📏 Max input length: {config.vm['max_input_len']}")
    logger.info(f"👷 Workers: {config.app['workers']}"
                f"{' (⚠️ results not reproducible)' if config.app['workers'] > 1 else ''}")
    logger.info("=" * 60)


# -- argument parsing ----------------------------------------------------------------------

def _add_campaign_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key=value campaign config file; flags override it")
    parser.add_argument("--k", type=int)
    parser.add_argument("--w1", type=float)
    parser.add_argument("--w2", type=float)
    parser.add_argument("--mutate-threshold", type=int, dest="mutate_threshold")
    parser.add_argument("--clustering-mode", choices=("strict", "pivot"), dest="clustering_mode")
    parser.add_argument("--distance-term", choices=("proximity", "raw"), dest="distance_term")
    parser.add_argument("--budget", help="<N>execs or <S>s")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--repeats", type=int)
    parser.add_argument("--out", type=Path)


def build_parser() -> CliParser:
    parser = CliParser(prog="huntfuzz", description="Clustered SFI fuzzing over mini-IR targets")
    sub = parser.add_subparsers(dest="command", parser_class=CliParser)

    extract = sub.add_parser("extract", help="list error points as JSON")
    extract.add_argument("--target", required=True)
    extract.add_argument("--overrides")
    extract.add_argument("--out", type=Path)

    cluster = sub.add_parser("cluster", help="cluster realistic error points")
    cluster.add_argument("--target", required=True, help=".ir program or .dot Cfg")
    cluster.add_argument("--config", help="key=value campaign config file; flags override it")
    cluster.add_argument("--k", type=int)
    cluster.add_argument("--clustering-mode", choices=("strict", "pivot"), dest="clustering_mode")
    cluster.add_argument("--seed", type=int)
    cluster.add_argument("--overrides")
    cluster.add_argument("--out", type=Path)

    fuzz = sub.add_parser("fuzz", help="run one campaign or replay a reproducer")
    fuzz.add_argument("--target", required=True)
    fuzz.add_argument("--mode", choices=("huntfuzz", "baseline-k0", "no-concolic"))
    _add_campaign_flags(fuzz)
    fuzz.add_argument("--replay", help=".repro file to re-execute")
    fuzz.add_argument("--context-insensitive", action="store_true", dest="context_insensitive")
    fuzz.add_argument("--overrides")

    bench = sub.add_parser("bench", help="run a matrix of campaigns")
    bench.add_argument("--target", required=True, help=".ir file or directory of .ir files")
    bench.add_argument("--mode", help="comma-separated campaign modes (default: all three)")
    _add_campaign_flags(bench)
    bench.add_argument("--sweep", action="append", default=[], help="<param>=<v1>,<v2>,...")
    bench.add_argument("--workers", type=int)

    report = sub.add_parser("report", help="aggregate campaign results")
    report.add_argument("--run", required=True, type=Path, help="directory produced by fuzz or bench")
    report.add_argument("--out", type=Path)
    report.add_argument("--pdf", action="store_true", help="also write a static PDF report")

    generate = sub.add_parser("generate", help="write synthetic targets with ground truth")
    generate.add_argument("--out", required=True, type=Path)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--count", type=int, default=1)
    generate.add_argument("--functions", type=int, default=1)
    generate.add_argument("--motifs", default="", help="switch=1,chain=1,deep-magic=1,diamond=1,double-fault=1")
    generate.add_argument("--density", type=int, default=0)
    generate.add_argument("--bug-rate", type=float, default=0.5, dest="bug_rate")
    generate.add_argument("--switch-arms", type=int, default=3, dest="switch_arms")
    generate.add_argument("--chain-length", type=int, default=3, dest="chain_length")
    generate.add_argument("--magic-bytes", type=int, default=4, dest="magic_bytes")
    generate.add_argument("--depth-padding", type=int, default=0, dest="depth_padding")
    return parser


def _campaign_config(args) -> CampaignConfig:
    flags = {key: getattr(args, key, None) for key in
             ("mode", "k", "w1", "w2", "mutate_threshold", "clustering_mode", "distance_term",
              "budget", "seed", "repeats")}
    if flags.get("mode") and "," in flags["mode"]:
        flags["mode"] = None
    return CampaignConfig.load(args.config, flags)


def _require_file(path: str) -> Path:
    target = Path(path)
    if not target.is_file():
        raise UsageError(f"target file not found: {target}")
    return target


def _output_dir(args, name: str) -> Path:
    return Path(args.out) if args.out else config.get_output_dir() / name


# -- commands ------------------------------------------------------------------------------

def cmd_extract(args) -> int:
    target = _require_file(args.target)
    points = extract_candidates(load_program_file(str(target)))
    if args.overrides:
        points = apply_overrides(points, load_overrides(args.overrides))
    out = _output_dir(args, target.stem) / "error_points.json"
    export_error_points(points, out)
    realistic = sum(1 for p in points if p.realistic)
    logger.info(f"✅ {len(points)} candidate(s), {realistic} realistic; written to {out}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    target = _require_file(args.target)
    cc = _campaign_config(args)
    k, mode, seed = cc.k, cc.clustering_mode, cc.seed
    if target.suffix == ".dot":
        cfg = load_dot_file(str(target))
        labels = sorted(cfg.error_sites, key=lambda label: (cfg.locate(label), label))
        clusters = cluster_error_points(labels, cfg, k, mode, seed)
    else:
        overrides = load_overrides(args.overrides) if args.overrides else None
        analysis = analyze_target(load_program_file(str(target)), k, mode, seed, overrides)
        cfg, clusters = analysis.vm.cfg, analysis.clusters
    out_dir = ensure_dir(_output_dir(args, target.stem))
    write_json(clusters.to_dict(cfg), out_dir / "clusters.json")
    write_text(cluster_overlay_dot(cfg, clusters), out_dir / "clusters.dot")
    for cluster in clusters:
        logger.info(f"🧩 Cluster {cluster.id}: {', '.join(cluster.members)} (parent {cfg.name(cluster.parent)})")
    return EXIT_OK


def cmd_fuzz(args) -> int:
    target = _require_file(args.target)
    if args.replay:
        program = load_program_file(str(target))
        reproducer = load_reproducer(args.replay)
        reproduced, trace = replay(program, reproducer, TargetVM(program))
        if reproduced:
            logger.info(f"✅ Reproduced {reproducer.label}: {trace.describe()}")
            return EXIT_OK
        logger.error(f"❌ {reproducer.label} did not reproduce: {trace.describe()}")
        return EXIT_INTERNAL

    cc = _campaign_config(args)
    settings = FuzzSettings.from_config(context_insensitive=args.context_insensitive or None)
    out_dir = _output_dir(args, target.stem)
    result = run_campaign(target, cc, out_dir, overrides=args.overrides, settings=settings)
    summary = result.summary()
    logger.info(f"📊 error coverage {summary['error_coverage']}, branch coverage {summary['branch_coverage']}, "
                f"{summary['bugs']} bug(s)")
    return EXIT_OK


def cmd_bench(args) -> int:
    base = _campaign_config(args)
    modes = [m.strip() for m in args.mode.split(",")] if args.mode else None
    for mode in modes or ():
        # validates the mode name
        base.with_params(mode=mode)
    sweeps = [parse_sweep(text) for text in args.sweep]
    targets = collect_targets(args.target)
    out_dir = _output_dir(args, "bench")
    kwargs = {'modes': modes} if modes else {}
    _, summary = run_bench(targets, base, sweeps=sweeps, out_dir=out_dir, workers=args.workers, **kwargs)
    for row in summary:
        logger.info(f"📊 {row['target']} {row['mode']} {row['params']}: "
                    f"median error coverage {row['median_error_coverage']}, median bugs {row['median_bugs']}")
    return EXIT_OK


def cmd_report_command(args) -> int:
    written = cmd_report(args.run, args.out, args.pdf)
    for kind, path in written.items():
        logger.info(f"📄 {kind.upper()} report: {path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    spec = GeneratorSpec(
        seed=args.seed,
        functions=args.functions,
        motifs=GeneratorSpec.parse_motifs(args.motifs),
        density=args.density,
        bug_rate=args.bug_rate,
        count=args.count,
        switch_arms=args.switch_arms,
        chain_length=args.chain_length,
        magic_bytes=args.magic_bytes,
        depth_padding=args.depth_padding,
    )
    generate_targets(spec, args.out)
    return EXIT_OK


COMMANDS = {
    'extract': cmd_extract,
    'cluster': cmd_cluster,
    'fuzz': cmd_fuzz,
    'bench': cmd_bench,
    'report': cmd_report_command,
    'generate': cmd_generate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one CLI command and return its exit code"""
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("missing command; expected one of " + ", ".join(COMMANDS))
        if args.command in ("fuzz", "bench"):
            display_startup_status(args.command)
        return COMMANDS[args.command](args)
    except USAGE_ERRORS as e:
        logger.error(f"❌ Usage error: {e}")
        return EXIT_USAGE
    except TARGET_ERRORS as e:
        logger.error(f"❌ Target error: {e}")
        return EXIT_TARGET
    except HuntFuzzError as e:
        logger.error(f"❌ {e}")
        logger.debug(format_exc())
        return EXIT_INTERNAL
    except Exception as e:
        logger.error(f"❌ Internal error: {e}")
        logger.error(format_exc())
        return EXIT_INTERNAL


def run(argv: Optional[List[str]] = None):
    sys.exit(main(argv))


if __name__ == "__main__":
    run()
