import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import yaml

from engine.constants import compute_constants
from engine.forms import FormsEngine, make_Q0
from engine.generators import adapted_g, corpus, generate, uniform_f
from engine.sizelemma import decompose_until, ell_dot, energy_stopping
from engine.verify import CAP_KEYS, Verifier, calibrate, calibrate_c0
from shared.entities.dyadic import DyadicInterval, GridConfig
from shared.entities.measure import MeasurePair, TruncationWindow
from shared.errors import GridError, InputError, InvariantError, MeasureError
from shared.reports import (
    BatchReport, ConstantsReport, DecompositionReport, FormsReport, Report, dump_csv, write_csv, write_json, write_text,
)
from shared.utils.config_loader import calibration_cfg, cli_cfg, sizelemma_cfg

logger = logging.getLogger(__name__)

EXIT_CODES = cli_cfg['exit_codes']

# generator keyword arguments each measure kind accepts
KIND_PARAMS = {
    'uniform-random': ('atoms', 'mass_low', 'mass_high'),
    'lattice': ('atoms',),
    'cantor': ('depth',),
    'adversarial-spike': ('atoms', 'spikes', 'spike_mass'),
}

T = TypeVar('T')
R = TypeVar('R')


@dataclass
class RunConfig:
    """Everything that determines a run; the seed fixes every generated measure and test vector."""
    seed: int
    grid: GridConfig
    c0: float
    threshold: Optional[float] = None
    window_eps: Optional[float] = None
    window_delta: Optional[float] = None
    output: Optional[Path] = None
    fmt: str = 'json'
    workers: int = 1
    grid_overrides: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_config(cls, args: Optional[argparse.Namespace] = None) -> 'RunConfig':
        """Defaults from config/*.yaml, replaced by whatever the command line set."""
        values = vars(args) if args is not None else {}
        overrides = {key: values.get(key) for key in ('K', 'r', 'eps') if values.get(key) is not None}
        threshold = values.get('threshold')
        if threshold is not None and not threshold > 0.0:
            raise InputError(f"--threshold must be positive, got {threshold}")
        workers = values.get('workers') or cli_cfg['workers']
        if workers < 1:
            raise InputError(f"--workers must be at least 1, got {workers}")
        output = values.get('output')
        return cls(
            seed=values.get('seed') if values.get('seed') is not None else 0,
            grid=GridConfig.from_config(overrides),
            c0=values.get('c0') if values.get('c0') is not None else calibration_cfg['c0'],
            threshold=threshold,
            window_eps=values.get('window_eps'),
            window_delta=values.get('window_delta'),
            output=Path(output) if output else None,
            fmt=values.get('format') or 'json',
            workers=workers,
            grid_overrides=overrides,
        )

    def window_for(self, pair: MeasurePair) -> Optional[TruncationWindow]:
        """None keeps the default window of the pair."""
        if self.window_eps is None and self.window_delta is None:
            return None
        default = TruncationWindow.default_for(pair)
        eps = self.window_eps if self.window_eps is not None else default.eps
        delta = self.window_delta if self.window_delta is not None else default.delta
        return TruncationWindow(eps, delta)

    def map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """fn over items on the worker pool, results in input order."""
        if self.workers == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))


def load_pair(path: Path, run: RunConfig) -> MeasurePair:
    """Read a measure-pair file; r and eps given on the command line replace the file's values."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except OSError as e:
        raise InputError(f"{path}: cannot read: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected an object with fields grid, sigma and w")
    if run.grid_overrides and isinstance(data.get('grid'), dict):
        grid = dict(data['grid'])
        if 'K' in run.grid_overrides and grid.get('K') != run.grid_overrides['K']:
            raise InputError(f"{path}: file depth K={grid.get('K')} differs from --K {run.grid_overrides['K']}")
        grid.update(run.grid_overrides)
        data = dict(data, grid=grid)
    try:
        pair = MeasurePair.from_dict(data)
    except (MeasureError, GridError) as e:
        raise InputError(f"{path}: {e}") from None
    logger.info(f"loaded {path}: {len(pair.sigma)} sigma atoms, {len(pair.w)} w atoms")
    return pair


def load_pairs(paths: Sequence[Path], run: RunConfig) -> List[Tuple[str, MeasurePair]]:
    return [(Path(p).stem, load_pair(p, run)) for p in paths]


def emit(report: Report, run: RunConfig) -> None:
    if run.output:
        report.write(run.output)
        logger.info(f"wrote {report.type} report to {run.output}")
    else:
        sys.stdout.write(report.to_json() + '\n')


def emit_rows(rows: List[Dict[str, Any]], run: RunConfig, summary: Optional[Dict[str, Any]] = None) -> None:
    """CSV when --format csv (stdout without --output), a batch report otherwise."""
    if run.fmt == 'csv':
        if run.output:
            write_csv(rows, run.output)
            logger.info(f"wrote {len(rows)} rows to {run.output}")
        else:
            dump_csv(rows, sys.stdout)
        return
    emit(BatchReport(rows, summary or {}), run)


# -- subcommands --------------------------------------------------------------

def cmd_gen(run: RunConfig, args: argparse.Namespace) -> int:
    if args.count is not None:
        if args.count < 1:
            raise InputError(f"--count must be at least 1, got {args.count}")
        if run.output is None:
            raise InputError("--count needs --output naming a directory")
        kinds = [args.kind] if args.kind else None
        for name, pair in corpus(run.grid, run.seed, args.count, kinds, args.atoms):
            write_json(pair.to_dict(), run.output / f"{name}.json")
        logger.info(f"wrote {args.count} pairs to {run.output}")
        return EXIT_CODES['ok']

    kind = args.kind or 'uniform-random'
    params = {key: getattr(args, key) for key in ('atoms', 'depth', 'spikes', 'spike_mass', 'mass_low', 'mass_high')
              if getattr(args, key) is not None}
    unknown = sorted(set(params) - set(KIND_PARAMS[kind]))
    if unknown:
        raise InputError(f"{kind} does not take {', '.join('--' + k.replace('_', '-') for k in unknown)}")
    pair = generate(kind, run.grid, run.seed, **params)
    if run.output:
        write_json(pair.to_dict(), run.output)
        logger.info(f"wrote {kind} pair to {run.output}")
    else:
        sys.stdout.write(json.dumps(pair.to_dict(), indent=2, sort_keys=True) + '\n')
    return EXIT_CODES['ok']


def _constants_report(run: RunConfig, item: Tuple[str, MeasurePair]) -> ConstantsReport:
    name, pair = item
    bundle = compute_constants(pair, run.window_for(pair))
    return ConstantsReport(name, pair.cfg.to_dict(), bundle.to_dict())


def cmd_constants(run: RunConfig, args: argparse.Namespace) -> int:
    pairs = load_pairs(args.measures, run)
    reports = run.map(lambda item: _constants_report(run, item), pairs)
    if len(reports) == 1 and run.fmt == 'json':
        emit(reports[0], run)
    else:
        emit_rows([r.row() for r in reports], run)
    return EXIT_CODES['ok']


def _decompose(run: RunConfig, name: str, pair: MeasurePair):
    i0 = DyadicInterval.unit()
    win = run.window_for(pair)
    bundle = compute_constants(pair, win)
    stopping = energy_stopping(pair, i0, run.c0, bundle.h_const)
    eng = FormsEngine(pair, win, i0)
    Q0 = make_Q0(pair, i0, stopping.family, stopping.family)
    tree = decompose_until(Q0, eng, run.threshold, stopping.family)
    report = DecompositionReport(
        instance=name,
        tau0=tree.tau0,
        threshold=tree.threshold,
        depth=tree.depth,
        depth_bound=tree.depth_bound,
        c_max=tree.c_max,
        norm=tree.root.norm,
        accumulated_bound=tree.root.accumulated,
        energy=stopping.to_dict(pair.sigma),
        tree=tree.root.to_dict(),
        failures={key: messages for key, messages in tree.failures.items() if messages},
        notes=dict(tree.notes),
    )
    return bundle, tree, report


def cmd_decompose(run: RunConfig, args: argparse.Namespace) -> int:
    name, pair = load_pairs([args.measures], run)[0]
    _, tree, report = _decompose(run, name, pair)
    emit(report, run)
    if args.dot:
        if tree.root.ell is None:
            logger.warning("the root is a leaf; the L collection is empty")
        write_text(ell_dot(tree.root.ell) if tree.root.ell is not None else 'digraph L {\n}\n', Path(args.dot))
    if report.failures:
        for key, messages in report.failures.items():
            logger.error(f"{key}: {messages[0]}")
        return EXIT_CODES['invariant_failure']
    return EXIT_CODES['ok']


def cmd_forms(run: RunConfig, args: argparse.Namespace) -> int:
    name, pair = load_pairs([args.measures], run)[0]
    i0 = DyadicInterval.unit()
    win = run.window_for(pair)
    bundle = compute_constants(pair, win)
    stopping = energy_stopping(pair, i0, run.c0, bundle.h_const)
    eng = FormsEngine(pair, win, i0)
    Q0 = make_Q0(pair, i0, stopping.family, stopping.family)
    f = uniform_f(pair, stopping.family, np.random.default_rng([run.seed, 1]))
    g = adapted_g(pair, stopping.family, np.random.default_rng([run.seed, 2]))
    size = eng.size(Q0)
    norm = eng.norm(Q0)
    values = {
        'b_q0': eng.b_form(Q0, f, g),
        'b_stop': eng.b_stop(f, g),
        'b_above': eng.b_above(f, g),
        'i0_part': eng.i0_part(f, g),
        'norm': norm,
        'size': size.to_dict(),
        'f_norm': math.sqrt(f.norm_sq()),
        'g_norm': math.sqrt(g.norm_sq()),
    }
    measured = {'norm_over_size': norm / size.value if size.value > 0.0 else None,
                'norm_over_h': norm / bundle.h_const if bundle.h_const > 0.0 else None}
    emit(FormsReport(name, run.seed, len(Q0), values, measured), run)
    return EXIT_CODES['ok']


def cmd_verify(run: RunConfig, args: argparse.Namespace) -> int:
    if args.measures:
        pairs = load_pairs(args.measures, run)
    else:
        pairs = corpus(run.grid, run.seed, args.corpus_size, atoms=args.atoms)
    verifier = Verifier(pairs, run.seed, random_vectors=args.random_vectors, workers=run.workers,
                        c0=run.c0, cfg=pairs[0][1].cfg if pairs else run.grid, require_coverage=not args.measures)
    report = verifier.run(args.only)
    emit(report, run)
    if not report.passed:
        for entry in report.failures():
            logger.error(f"{entry['id']}: {entry['failures'][0] if entry['failures'] else 'failed'}")
        return EXIT_CODES['invariant_failure']
    return EXIT_CODES['ok']


def cmd_report(run: RunConfig, args: argparse.Namespace) -> int:
    pairs = load_pairs(args.measures, run)

    def row(item: Tuple[str, MeasurePair]) -> Dict[str, Any]:
        name, pair = item
        bundle, tree, _ = _decompose(run, name, pair)
        return {
            'instance': name,
            'a2': bundle.a2,
            'testing': max(bundle.testing_sw, bundle.testing_ws),
            'norm': bundle.norm.value,
            'ratio': bundle.ratio,
            'tau0': tree.tau0,
            'depth': tree.depth,
            'c_max': tree.c_max,
            'failures': sum(len(m) for m in tree.failures.values()),
        }

    rows = run.map(row, pairs)
    ratios = [r['ratio'] for r in rows if r['ratio'] is not None]
    summary = {
        'instances': len(rows),
        'ratio_max': max(ratios, default=None),
        'ratio_min': min(ratios, default=None),
        'c_max': max((r['c_max'] for r in rows), default=None),
    }
    emit_rows(rows, run, summary)
    return EXIT_CODES['invariant_failure'] if any(r['failures'] for r in rows) else EXIT_CODES['ok']


def cmd_calibrate(run: RunConfig, args: argparse.Namespace) -> int:
    pairs = corpus(run.grid, run.seed, args.corpus_size, atoms=args.atoms)
    uncapped = {key: math.inf for key in CAP_KEYS.values() if calibration_cfg.get(key) is not None}
    verifier = Verifier(pairs, run.seed, caps=uncapped, workers=run.workers, c0=run.c0, cfg=run.grid,
                        require_coverage=True)
    c0 = args.c0 if args.c0 is not None else calibrate_c0(verifier)
    if c0 is None:
        raise InvariantError(f"no power of two c0 up to 2^{sizelemma_cfg['c0_exponents'][1]} keeps the energy intervals "
                             f"within {sizelemma_cfg['energy_mass_fraction']} of sigma(I0)")
    verifier.use_c0(c0)
    caps = calibrate(verifier.run(), args.safety, c0)
    text = yaml.safe_dump(caps, sort_keys=False, default_flow_style=False)
    header = f"# Committed caps, measured on {len(pairs)} instances with seed {run.seed}\n"
    if run.output:
        write_text(header + text, run.output)
        logger.info(f"wrote calibration to {run.output}")
    else:
        sys.stdout.write(header + text)
    return EXIT_CODES['ok']


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    'gen': cmd_gen,
    'constants': cmd_constants,
    'decompose': cmd_decompose,
    'forms': cmd_forms,
    'verify': cmd_verify,
    'report': cmd_report,
    'calibrate': cmd_calibrate,
}
