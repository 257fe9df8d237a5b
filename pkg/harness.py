"""
Campaign runner and benchmark matrix.

A campaign loads one target, extracts and clusters its realistic error points, then
fuzzes it with the cluster scheduler attached (``huntfuzz``), with clustering disabled
(``baseline-k0``) or with the scheduler detached (``no-concolic``). ``run_bench`` expands
modes x parameter sweeps x repeats into independent cells and summarizes them by median.
"""

import itertools
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from backend.utils.artifacts import ensure_dir, list_files, read_json, safe_name, write_csv, write_json, write_jsonl
from clustering import ClusterSet, cluster_error_points
from concolic import ClusterScheduler, DecisionLog, SchedulerAgent, SchedulerConfig
from config import CAMPAIGN_MODES, CLUSTERING_MODES, DISTANCE_TERMS, config, load_campaign_file, merge_settings
from errors import ConfigError, UsageError
from extractor import ErrorPoint, apply_overrides, error_point_paths, extract_candidates, load_overrides, realistic_points
from fuzzer import Budget, Fuzzer, FuzzResult, FuzzSettings
from ir_program import Program, load_program_file
from target_vm import TargetVM
from weighting import WeightConfig

logger = logging.getLogger(__name__)

CAMPAIGN_KEYS = ("mode", "k", "w1", "w2", "mutate_threshold", "clustering_mode", "distance_term",
                 "budget", "seed", "repeats")
SWEEP_PARAMS = ("k", "w1", "w2", "mutate_threshold", "clustering_mode", "distance_term")
CELL_COLUMNS = ("target", "mode", "params", "seed", "executions", "error_coverage", "branch_coverage",
                "points_fault_covered", "points_total", "first_cover_median", "bugs", "error_handling_bugs",
                "deep_bugs", "shallow_bugs", "emitted", "clusters", "guarded_covered", "guarded_total")
SUMMARY_COLUMNS = ("target", "mode", "params", "cells", "median_error_coverage", "median_branch_coverage",
                   "median_bugs", "median_first_cover", "median_guarded_covered", "bug_labels")


# -- configuration -----------------------------------------------------------------------

@dataclass(frozen=True)
class CampaignConfig:
    mode: str = "huntfuzz"
    k: int = 2
    w1: float = 0.5
    w2: float = 0.5
    mutate_threshold: int = 10_000
    clustering_mode: str = "strict"
    distance_term: str = "proximity"
    budget: Budget = Budget(executions=100_000)
    seed: int = 0
    repeats: int = 1

    def __post_init__(self):
        if self.mode not in CAMPAIGN_MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(CAMPAIGN_MODES)}")
        if self.clustering_mode not in CLUSTERING_MODES:
            raise ConfigError(f"unknown clustering mode {self.clustering_mode!r}")
        if self.distance_term not in DISTANCE_TERMS:
            raise ConfigError(f"unknown distance term {self.distance_term!r}")
        if self.k < 0:
            raise ConfigError("k must be non-negative")
        if self.mutate_threshold < 1:
            raise ConfigError("mutate-threshold must be at least 1")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        # normalizes and rejects negative or all-zero weights
        WeightConfig.of(self.w1, self.w2)

    @property
    def effective_k(self) -> int:
        return 0 if self.mode == "baseline-k0" else self.k

    @property
    def weights(self) -> WeightConfig:
        return WeightConfig.of(self.w1, self.w2)

    @classmethod
    def from_settings(cls, settings: Mapping[str, Any]) -> "CampaignConfig":
        """Build from loosely typed settings (environment, config file, CLI flags)"""
        values = {key.replace('-', '_'): value for key, value in settings.items()}
        unknown = sorted(set(values) - set(CAMPAIGN_KEYS))
        if unknown:
            logger.debug(f"Ignoring non-campaign settings: {', '.join(unknown)}")
        kwargs: Dict[str, Any] = {}
        casts = {'k': int, 'mutate_threshold': int, 'seed': int, 'repeats': int, 'w1': float, 'w2': float}
        for key in CAMPAIGN_KEYS:
            if key not in values or values[key] is None:
                continue
            value = values[key]
            try:
                if key == "budget":
                    kwargs[key] = Budget.parse(value)
                elif key in casts:
                    kwargs[key] = casts[key](value)
                else:
                    kwargs[key] = str(value)
            except ValueError as e:
                raise ConfigError(f"invalid value for {key}: {value!r}") from e
        return cls(**kwargs)

    @classmethod
    def load(cls, config_file: Optional[str] = None, flags: Optional[Mapping[str, Any]] = None) -> "CampaignConfig":
        """Defaults from the environment, then the config file, then CLI flags"""
        defaults = {key: config.campaign[key] for key in CAMPAIGN_KEYS}
        file_values = load_campaign_file(config_file) if config_file else None
        return cls.from_settings(merge_settings(defaults, file_values, flags))

    def with_params(self, **params) -> "CampaignConfig":
        return replace(self, **{key.replace('-', '_'): value for key, value in params.items()})

    def to_dict(self) -> dict:
        data = asdict(self)
        data['budget'] = str(self.budget)
        return data


# -- one campaign ------------------------------------------------------------------------

@dataclass
class TargetAnalysis:
    program: Program
    vm: TargetVM
    points: List[ErrorPoint]
    clusters: ClusterSet


def analyze_target(
    program: Program,
    k: int,
    clustering_mode: str = "strict",
    seed: int = 0,
    overrides: Optional[Mapping[str, bool]] = None,
    vm: Optional[TargetVM] = None,
) -> TargetAnalysis:
    """Derive the Cfg, keep reachable realistic error points and cluster them"""
    vm = vm or TargetVM(program)
    candidates = extract_candidates(program)
    if overrides:
        candidates = apply_overrides(candidates, overrides)
    realistic = realistic_points(candidates)
    reachable = {p.point for p in error_point_paths(vm.cfg, realistic) if p.ok}
    points = [p for p in realistic if p.label in reachable]
    clusters = cluster_error_points(points, vm.cfg, k, clustering_mode, seed)
    return TargetAnalysis(program, vm, points, clusters)


def _median(values: Sequence[float]) -> float:
    return statistics.median(values) if values else math.inf


def _finite(value: float) -> Optional[float]:
    return None if value is None or math.isinf(value) else value


@dataclass
class CampaignResult:
    target: str
    config: CampaignConfig
    analysis: TargetAnalysis
    fuzz: FuzzResult
    decisions: List[dict] = field(default_factory=list)
    guarded: Tuple[str, ...] = ()

    def first_cover_median(self) -> float:
        """Median first fault-cover execution over all points; uncovered points count as infinite"""
        times = [self.fuzz.first_cover.get(p.label, math.inf) for p in self.analysis.points]
        return _median(times)

    def summary(self, deep_threshold: Optional[int] = None) -> dict:
        threshold = config.campaign['deep_depth_threshold'] if deep_threshold is None else deep_threshold
        covered = self.fuzz.ledger.fault_covered_labels()
        bugs = self.fuzz.bugs
        return {
            'target': self.target,
            'mode': self.config.mode,
            'params': param_key(self.config),
            'seed': self.config.seed,
            'executions': self.fuzz.executions,
            'error_coverage': len(self.fuzz.ledger.error_sequences),
            'branch_coverage': len(self.fuzz.ledger.branch_edges),
            'points_fault_covered': sum(1 for p in self.analysis.points if p.label in covered),
            'points_total': len(self.analysis.points),
            'first_cover_median': _finite(self.first_cover_median()),
            'bugs': len(bugs),
            'error_handling_bugs': sum(1 for b in bugs if b.error_handling),
            'deep_bugs': sum(1 for b in bugs if b.is_deep(threshold)),
            'shallow_bugs': sum(1 for b in bugs if not b.is_deep(threshold)),
            'bug_labels': sorted({b.label for b in bugs}),
            'emitted': self.fuzz.emitted,
            'clusters': len(self.analysis.clusters),
            'guarded_covered': sum(1 for label in self.guarded if label in covered),
            'guarded_total': len(self.guarded),
        }

    def write(self, out_dir: Path) -> Path:
        out_dir = ensure_dir(out_dir)
        self.fuzz.write(out_dir)
        write_json(self.analysis.clusters.to_dict(self.analysis.vm.cfg), out_dir / "clusters.json")
        write_jsonl(self.decisions, out_dir / "decisions.jsonl")
        write_json({'config': self.config.to_dict(), 'summary': self.summary()}, out_dir / "summary.json")
        return out_dir


def _ground_truth(target_path: Path) -> Tuple[str, ...]:
    truth_file = target_path.with_suffix(".truth.json")
    if not truth_file.exists():
        return ()
    return tuple(read_json(truth_file).get('guarded_points', ()))


def run_campaign(
    target: Union[str, Path, Program],
    cc: CampaignConfig,
    out_dir: Optional[Path] = None,
    seeds: Sequence[bytes] = (),
    overrides: Optional[Union[str, Mapping[str, bool]]] = None,
    settings: Optional[FuzzSettings] = None,
) -> CampaignResult:
    """
    Run one campaign end to end.

    Args:
        target: IR file path or an already loaded program.
        cc: Campaign configuration; ``cc.seed`` drives clustering and the fuzzer RNG.
        out_dir: When given, campaign artifacts are written there.
        seeds: Initial fuzzer inputs; defaults to one all-zero input.
        overrides: Override file path or a label -> realistic mapping.
        settings: Fuzzer settings; defaults come from the configuration.
    """
    if isinstance(target, Program):
        program, name, guarded = target, "program", ()
    else:
        path = Path(target)
        if not path.exists():
            raise UsageError(f"target file not found: {path}")
        program, name, guarded = load_program_file(str(path)), path.stem, _ground_truth(path)
    if isinstance(overrides, (str, Path)):
        overrides = load_overrides(str(overrides))

    settings = settings or FuzzSettings.from_config()
    vm = TargetVM(program, max_input_len=settings.max_input_len)
    logger.info(f"🎯 Campaign {name}: mode={cc.mode} k={cc.effective_k} seed={cc.seed} budget={cc.budget}")
    analysis = analyze_target(program, cc.effective_k, cc.clustering_mode, cc.seed, overrides, vm)
    logger.info(f"🧩 {len(analysis.points)} realistic error point(s) in {len(analysis.clusters)} cluster(s)")

    agent = None
    log = DecisionLog()
    if cc.mode != "no-concolic":
        scheduler = ClusterScheduler(
            analysis.clusters,
            vm.cfg,
            SchedulerConfig(
                mutate_threshold=cc.mutate_threshold,
                weights=cc.weights,
                distance_term=cc.distance_term,
                max_len=settings.max_input_len,
            ),
            log=log,
        )
        agent = SchedulerAgent(scheduler)

    fuzzer = Fuzzer(program, settings, vm, seed=cc.seed)
    fuzz = fuzzer.run(list(seeds), cc.budget, agent)
    result = CampaignResult(name, cc, analysis, fuzz, log.records, guarded)
    if out_dir is not None:
        result.write(Path(out_dir))
        logger.info(f"📄 Campaign artifacts written to {out_dir}")
    return result


# -- sweeps and the bench matrix ---------------------------------------------------------

def parse_sweep(text: str) -> Tuple[str, List[Any]]:
    """``k=0,1,2`` -> ("k", [0, 1, 2])"""
    name, sep, values = text.partition("=")
    key = name.strip().replace('-', '_')
    if not sep or key not in SWEEP_PARAMS:
        raise UsageError(f"invalid sweep {text!r}; expected <param>=<v1>,<v2>,... with param in "
                         f"{', '.join(p.replace('_', '-') for p in SWEEP_PARAMS)}")
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not items:
        raise UsageError(f"sweep {text!r} lists no values")
    cast = {'k': int, 'mutate_threshold': int, 'w1': float, 'w2': float}.get(key, str)
    try:
        return key, [cast(v) for v in items]
    except ValueError as e:
        raise UsageError(f"invalid value in sweep {text!r}") from e


def sweep_points(sweeps: Sequence[Tuple[str, List[Any]]]) -> List[Dict[str, Any]]:
    """Cartesian product of the sweeps; sweeping w1 alone keeps w1 + w2 = 1"""
    if not sweeps:
        return [{}]
    names = [name for name, _ in sweeps]
    points = []
    for combo in itertools.product(*(values for _, values in sweeps)):
        params = dict(zip(names, combo))
        if 'w1' in params and 'w2' not in names:
            params['w2'] = round(1.0 - params['w1'], 10)
        elif 'w2' in params and 'w1' not in names:
            params['w1'] = round(1.0 - params['w2'], 10)
        points.append(params)
    return points


def param_key(cc: CampaignConfig, names: Sequence[str] = SWEEP_PARAMS) -> str:
    """Identity of a sweep point; covers every sweepable parameter so cells never share a directory"""
    return "_".join(f"{name.replace('_', '-')}={getattr(cc, name)}" for name in names)


@dataclass(frozen=True)
class BenchCell:
    index: int
    target: str
    config: CampaignConfig
    out_dir: Optional[str] = None


def run_cell(cell: BenchCell) -> dict:
    """Run one bench cell; module-level so worker processes can pickle it"""
    out_dir = Path(cell.out_dir) if cell.out_dir else None
    result = run_campaign(cell.target, cell.config, out_dir)
    summary = result.summary()
    summary['cell'] = cell.index
    return summary


def plan_bench(
    targets: Sequence[Union[str, Path]],
    base: CampaignConfig,
    modes: Sequence[str],
    sweeps: Sequence[Tuple[str, List[Any]]] = (),
    out_dir: Optional[Path] = None,
) -> List[BenchCell]:
    cells = []
    for target in targets:
        for mode in modes:
            for params in sweep_points(sweeps):
                for repeat in range(base.repeats):
                    cc = base.with_params(mode=mode, seed=base.seed + repeat, **params)
                    cell_dir = None
                    if out_dir is not None:
                        cell_dir = str(Path(out_dir) / safe_name(Path(target).stem) / mode
                                       / safe_name(param_key(cc)) / f"seed{cc.seed}")
                    cells.append(BenchCell(len(cells), str(target), cc, cell_dir))
    return cells


def summarize(rows: Sequence[Mapping[str, Any]]) -> List[dict]:
    """Median of each metric over the repeats of every (target, mode, params) group"""
    groups: Dict[Tuple[str, str, str], List[Mapping[str, Any]]] = {}
    for row in rows:
        groups.setdefault((row['target'], row['mode'], row['params']), []).append(row)

    def first_cover(row) -> float:
        value = row.get('first_cover_median')
        return math.inf if value is None else value

    summary = []
    for (target, mode, params), members in sorted(groups.items()):
        summary.append({
            'target': target,
            'mode': mode,
            'params': params,
            'cells': len(members),
            'median_error_coverage': statistics.median(r['error_coverage'] for r in members),
            'median_branch_coverage': statistics.median(r['branch_coverage'] for r in members),
            'median_bugs': statistics.median(r['bugs'] for r in members),
            'median_first_cover': _finite(statistics.median(first_cover(r) for r in members)),
            'median_guarded_covered': statistics.median(r.get('guarded_covered', 0) for r in members),
            'bug_labels': sorted({label for r in members for label in r.get('bug_labels', ())}),
        })
    return summary


def run_bench(
    targets: Sequence[Union[str, Path]],
    base: CampaignConfig,
    modes: Sequence[str] = CAMPAIGN_MODES,
    sweeps: Sequence[Tuple[str, List[Any]]] = (),
    out_dir: Optional[Path] = None,
    workers: Optional[int] = None,
) -> Tuple[List[dict], List[dict]]:
    """
    Run the bench matrix.

    Returns:
        (per-cell rows in cell order, per-group summary rows). When ``out_dir`` is given
        the cells write their own artifacts and ``cells.csv``, ``summary.csv`` and
        ``summary.json`` land at its root.
    """
    if not targets:
        raise UsageError("bench needs at least one target")
    cells = plan_bench(targets, base, modes, sweeps, out_dir)
    workers = config.app['workers'] if workers is None else workers
    logger.info(f"📊 Bench: {len(targets)} target(s) x {len(modes)} mode(s) x "
                f"{len(sweep_points(sweeps))} sweep point(s) x {base.repeats} repeat(s) = {len(cells)} cell(s)")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(cell) for cell in cells]
    rows.sort(key=lambda r: r['cell'])
    summary = summarize(rows)

    if out_dir is not None:
        out_dir = ensure_dir(Path(out_dir))
        write_csv(([_csv_value(r.get(c)) for c in CELL_COLUMNS] for r in rows), CELL_COLUMNS, out_dir / "cells.csv")
        write_csv(([_csv_value(s.get(c)) for c in SUMMARY_COLUMNS] for s in summary), SUMMARY_COLUMNS,
                  out_dir / "summary.csv")
        write_json({'config': base.to_dict(), 'modes': list(modes), 'summary': summary}, out_dir / "summary.json")
        logger.info(f"✅ Bench summary written to {out_dir}")
    return rows, summary


def _csv_value(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return ";".join(map(str, value))
    return value


def collect_targets(target: Union[str, Path]) -> List[Path]:
    """A single IR file or every ``.ir`` file under a directory"""
    path = Path(target)
    if path.is_dir():
        files = list_files(path, ".ir")
        if not files:
            raise UsageError(f"no .ir files under {path}")
        return files
    if not path.exists():
        raise UsageError(f"target file not found: {path}")
    return [path]

