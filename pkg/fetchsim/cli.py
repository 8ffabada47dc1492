"""
COMMAND LINE
============

    fetchsim run       one mission, report on stdout (or --out)
    fetchsim compare   paired strategy runs from an experiment file
    fetchsim gen-poses generated search positions of one or all rooms
    fetchsim validate  load a scenario and check its annotations and machines

The bundled scenario `lab.json` is used when --scenario is omitted, the
bundled `table1.json` experiment when compare gets no --experiment.

An experiment file looks like

    {
      "scenario": "lab.json",
      "seeds": [0, 1],
      "runs": [
        {"object": "asus_box", "location": "cupboard", "start": "dining_room",
         "place": {"object": "asus_box", "on": "kitchen_cupboard"},
         "strategies": ["manual", "semantic"],
         "noise": {"semantic": {"p_true_positive": 0.0}}}
      ]
    }

where "start" is a room id (its centre pose, heading 0) or an [x, y, yaw]
pose, and "noise" overrides the scenario's noise per strategy. The scenario
path is relative to the experiment file.

Exit codes: 0 on success, 1 on usage errors, 2 on scenario errors.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas

from fetchsim import __version__
from fetchsim import config as cfg
from fetchsim import errors
from fetchsim import hsm
from fetchsim import mission
from fetchsim import percept
from fetchsim import strategy
from fetchsim import tablegeom
from fetchsim import world as wm

logger = logging.getLogger(__name__)

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')
DEFAULT_SCENARIO = os.path.join(DATA_DIR, 'lab.json')
DEFAULT_EXPERIMENT = os.path.join(DATA_DIR, 'table1.json')

# command line names of the strategies
STRATEGY_NAMES = {
    'manual': mission.MANUAL,
    'semantic': mission.GENERATED,
    'hybrid': mission.HYBRID,
}
REPORT_FORMATS = ('md', 'csv', 'json')

COMPARISON_COLUMNS = [
    'object',
    'start',
    'location',
    'seed',
    'detected_P',
    'detected_S',
    'detected_H',
    'duration_P',
    'duration_S',
    'duration_H',
    'time_P',
    'time_S',
    'time_H',
    'positions',
    'scan_saving_S',
    'scan_saving_ideal_S',
]


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentRun:
    object: str
    location: str = ''
    start: object = None
    strategies: Tuple[str, ...] = ('manual', 'semantic')
    place: Optional[Tuple[str, str]] = None
    noise: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str
    runs: Tuple[ExperimentRun, ...] = ()
    seeds: Tuple[int, ...] = (0,)
    format: str = 'md'


@dataclass(frozen=True)
class ComparisonTable:
    """One row per (test, seed), in experiment order."""

    frame: pandas.DataFrame

    def __len__(self):
        return len(self.frame)

    def render(self, fmt):
        return render_frame(self.frame, fmt)


def render_frame(frame, fmt):
    if fmt == 'csv':
        return frame.to_csv(index=False)
    if fmt == 'json':
        return frame.to_json(orient='records', indent=2) + '\n'
    # tabulate prints NaN as 'nan' but leaves None blank
    cells = frame.astype(object).where(frame.notna(), None)
    return cells.to_markdown(index=False, tablefmt='github', missingval='') + '\n'


# Experiments


def _start_of(value, path):
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, list) and len(value) == 3:
        return tuple(float(v) for v in value)
    raise errors.SchemaError(path, 'expected a room id or an [x, y, yaw] pose')


def experiment_from_document(doc, base_dir='.'):
    if not isinstance(doc, dict):
        raise errors.SchemaError('', 'expected an object')
    runs = []
    for i, rd in enumerate(doc.get('runs', [])):
        path = 'runs[{0}]'.format(i)
        if not isinstance(rd, dict) or 'object' not in rd:
            raise errors.SchemaError(path, 'expected an object with "object"')
        strategies = tuple(rd.get('strategies', ('manual', 'semantic')))
        for s in strategies:
            if s not in STRATEGY_NAMES:
                raise errors.SchemaError(
                    path + '.strategies', 'unknown strategy {0!r}'.format(s)
                )
        place = rd.get('place')
        if place is not None:
            if not isinstance(place, dict) or not {'object', 'on'} <= set(place):
                raise errors.SchemaError(
                    path + '.place', 'expected {"object": ..., "on": ...}'
                )
            place = (place['object'], place['on'])
        runs.append(
            ExperimentRun(
                rd['object'],
                rd.get('location', ''),
                _start_of(rd.get('start'), path + '.start'),
                strategies,
                place,
                rd.get('noise', {}),
            )
        )
    scenario = doc.get('scenario', DEFAULT_SCENARIO)
    if not os.path.isabs(scenario):
        scenario = os.path.join(base_dir, scenario)
    return ExperimentSpec(
        scenario,
        tuple(runs),
        tuple(int(s) for s in doc.get('seeds', (0,))),
        doc.get('format', 'md'),
    )


def load_experiment(path):
    with open(path, encoding='utf-8') as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise errors.SchemaError('', 'not JSON: {0}'.format(exc)) from exc
    return experiment_from_document(doc, os.path.dirname(os.path.abspath(path)))


def check_experiment(spec, world):
    """Every referenced object, furniture and room must exist."""
    names = {o.name for o in world.objects}
    object_ids = {o.id for o in world.objects}
    furniture = {f.id for f in world.furniture}
    rooms = {r.id for r in world.rooms}
    for i, run in enumerate(spec.runs):
        path = 'runs[{0}]'.format(i)
        if run.object not in names:
            raise errors.InvariantViolation('object-exists', run.object, path)
        if run.place is not None:
            if run.place[0] not in object_ids:
                raise errors.InvariantViolation('object-exists', run.place[0], path)
            if run.place[1] not in furniture:
                raise errors.InvariantViolation(
                    'furniture-exists', run.place[1], path
                )
        if isinstance(run.start, str) and run.start not in rooms:
            raise errors.InvariantViolation('room-exists', run.start, path)


def prepare_world(world, run):
    """The world of a test: object placement and robot start applied."""
    if run.place is not None:
        world = wm.place_object(world, run.place[0], run.place[1])
    if isinstance(run.start, str):
        x, y = wm.room_center(world.room(run.start), world)
        world = wm.with_robot_pose(world, (x, y, 0.0))
    elif run.start is not None:
        world = wm.with_robot_pose(world, run.start)
    return world


def run_test(world, run, strategy_name, seed, concurrent_scan=False):
    overrides = {}
    if strategy_name in run.noise:
        overrides['noise'] = run.noise[strategy_name]
    config = cfg.mission_config(
        world,
        run.object,
        overrides,
        strategy=STRATEGY_NAMES[strategy_name],
        seed=seed,
        concurrent_scan=concurrent_scan,
    )
    if config.strategy == mission.MANUAL:
        annotations = strategy.annotations_from_world(world)
    else:
        # hybrid freezes what it generates on its first mission
        annotations = []
    table = strategy.ProbabilityTable.uniform([a.id for a in annotations])
    return mission.run_mission(config, world, annotations, table)


def _comparison_row(run, seed, reports):
    p, s, h = (reports.get(k) for k in ('manual', 'semantic', 'hybrid'))
    row = {
        'object': run.object,
        'start': run.start if isinstance(run.start, str) else str(run.start),
        'location': run.location,
        'seed': seed,
        'positions': s.positions_total if s else None,
    }
    for suffix, r in (('P', p), ('S', s), ('H', h)):
        row['detected_' + suffix] = r.object_detected if r else None
        row['duration_' + suffix] = round(r.duration, 1) if r else None
        row['time_' + suffix] = mission.mmss(r.duration) if r else None
    pipeline, ideal = s.projected_savings() if s else (None, None)
    row['scan_saving_S'] = pipeline
    row['scan_saving_ideal_S'] = ideal
    return row


def run_experiment(spec, concurrent_scan=False):
    """Run every test of 'spec' with each of its strategies from the same
    start state and seed."""
    rows = []
    base = wm.load_scenario(spec.scenario) if spec.runs else None
    if base is not None:
        check_experiment(spec, base)
    for run in spec.runs:
        world = prepare_world(base, run)
        for seed in spec.seeds:
            reports = {
                s: run_test(world, run, s, seed, concurrent_scan)
                for s in run.strategies
            }
            rows.append(_comparison_row(run, seed, reports))
            logger.info('test %s seed %d done', run.object, seed)
    return ComparisonTable(pandas.DataFrame(rows, columns=COMPARISON_COLUMNS))


def reports_frame(reports):
    return pandas.DataFrame(
        [
            {
                'object': r.target_object,
                'strategy': r.strategy,
                'detected': r.object_detected,
                'duration': round(r.duration, 1),
                'time': mission.mmss(r.duration),
                'positions_visited': r.positions_visited,
                'positions_total': r.positions_total,
                'grasped': r.grasped,
                'user_informed': r.user_informed,
            }
            for r in reports
        ]
    )


# Generated positions


def scan_centers(world, room_id, count, rng):
    """The room's centre followed by count - 1 random free poses inside it."""
    centers = [wm.room_center(world.room(room_id), world)]
    if count > 1:
        grid = world.grid
        rows, cols = np.nonzero(grid.free_mask())
        pts = np.column_stack(
            ((cols + 0.5) * grid.resolution, (rows + 0.5) * grid.resolution)
        )
        pts = pts[wm.rooms_of(pts, world) == room_id]
        picks = rng.choice(len(pts), min(count - 1, len(pts)), replace=False)
        centers.extend((float(pts[k, 0]), float(pts[k, 1])) for k in sorted(picks))
    return centers


def generate_positions(world, room_ids, count=1, seed=0, noise=None, params=None):
    """(frame, kept locations of the first centre of each room)."""
    noise = noise or percept.PerceptionNoise()
    params = params or tablegeom.HeuristicParams()
    rng = np.random.default_rng(seed)
    frames, first = [], []
    for room_id in room_ids:
        for k, (x, y) in enumerate(scan_centers(world, room_id, count, rng)):
            clouds = percept.rotation_scan(world, (x, y, 0.0), noise, rng=rng)
            agenda = strategy.agenda_from_clouds(clouds, room_id, world, params)
            frame = tablegeom.positions_to_frame(agenda.remaining)
            frame.insert(0, 'center', k)
            frame.insert(1, 'center_x', x)
            frame.insert(2, 'center_y', y)
            frames.append(frame)
            if k == 0:
                first.extend(agenda.remaining)
    frame = pandas.concat(frames, ignore_index=True) if frames else pandas.DataFrame()
    return frame, first


# Command line


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument('--scenario', default=DEFAULT_SCENARIO, help='scenario JSON')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--report', choices=REPORT_FORMATS, default=None)
    p.add_argument('--out', default=None, help='write the report here')
    p.add_argument('--concurrent-scan', action='store_true')


def build_parser():
    parser = _Parser(prog='fetchsim', description=__doc__.split('\n\n')[1])
    parser.add_argument('--version', action='version', version=__version__)
    parser.add_argument('-v', '--verbose', action='count', default=0)
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    p = sub.add_parser('run', help='run one mission')
    _common(p)
    p.add_argument('--object', required=True)
    p.add_argument('--strategy', choices=sorted(STRATEGY_NAMES), default='manual')
    p.add_argument('--start', default=None, help='room id to start in')
    p.add_argument('--table', default=None, help='probability table JSON')
    p.add_argument('--frozen', default=None, help='frozen locations JSON')
    p.add_argument('--trace', default=None, help='write the trace here')

    p = sub.add_parser('compare', help='paired strategy comparison')
    _common(p)
    p.add_argument('--experiment', default=DEFAULT_EXPERIMENT)
    p.add_argument('--seeds', type=int, nargs='+', default=None)

    p = sub.add_parser('gen-poses', help='dump generated search positions')
    _common(p)
    p.add_argument('--room', default=None)
    p.add_argument('--centers', type=int, default=1)
    p.add_argument('--freeze', default=None, help='write frozen locations')

    p = sub.add_parser('validate', help='check a scenario')
    p.add_argument('--scenario', default=DEFAULT_SCENARIO)
    return parser


def _emit(text, out):
    if out:
        with open(out, 'w', encoding='utf-8') as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _read_if_exists(path):
    if path and os.path.exists(path):
        with open(path, encoding='utf-8') as fh:
            return fh.read()
    return None


def cmd_run(args):
    world = wm.load_scenario(args.scenario)
    if world.objects_named(args.object) == ():
        raise errors.InvariantViolation('object-exists', args.object)
    if args.start is not None:
        if args.start not in {r.id for r in world.rooms}:
            raise errors.InvariantViolation('room-exists', args.start)
        x, y = wm.room_center(world.room(args.start), world)
        world = wm.with_robot_pose(world, (x, y, 0.0))
    config = cfg.mission_config(
        world,
        args.object,
        strategy=STRATEGY_NAMES[args.strategy],
        seed=args.seed,
        concurrent_scan=args.concurrent_scan,
    )
    if config.strategy == mission.HYBRID:
        text = _read_if_exists(args.frozen)
        annotations = strategy.locations_from_json(text) if text else []
    else:
        annotations = strategy.annotations_from_world(world)
    text = _read_if_exists(args.table)
    if text:
        table = strategy.ProbabilityTable.from_json(text)
    else:
        table = strategy.ProbabilityTable.uniform([a.id for a in annotations])

    report = mission.run_mission(config, world, annotations, table)

    if args.table:
        _emit(report.table.to_json(), args.table)
    if args.frozen and config.strategy == mission.HYBRID:
        _emit(strategy.locations_to_json(report.frozen), args.frozen)
    if args.trace:
        _emit(hsm.trace_to_text(report.trace), args.trace)
    fmt = args.report or 'json'
    if fmt == 'json':
        _emit(report.to_json() + '\n', args.out)
    else:
        _emit(render_frame(reports_frame([report]), fmt), args.out)
    return 0


def cmd_compare(args):
    spec = load_experiment(args.experiment)
    if args.scenario != DEFAULT_SCENARIO:
        spec = ExperimentSpec(args.scenario, spec.runs, spec.seeds, spec.format)
    if args.seeds:
        spec = ExperimentSpec(spec.scenario, spec.runs, tuple(args.seeds), spec.format)
    table = run_experiment(spec, args.concurrent_scan)
    _emit(table.render(args.report or spec.format), args.out)
    return 0


def cmd_gen_poses(args):
    world = wm.load_scenario(args.scenario)
    if args.room is not None:
        if args.room not in {r.id for r in world.rooms}:
            raise errors.InvariantViolation('room-exists', args.room)
        rooms = [args.room]
    else:
        rooms = [r.id for r in world.rooms]
    if args.centers < 1:
        raise UsageError('--centers must be at least 1')
    sections = cfg.from_params(world.params)
    frame, first = generate_positions(
        world,
        rooms,
        args.centers,
        args.seed,
        sections.get('noise'),
        sections.get('heuristic'),
    )
    if args.freeze:
        _emit(strategy.locations_to_json(strategy.freeze_generated(first)), args.freeze)
    _emit(render_frame(frame, args.report or 'csv'), args.out)
    return 0


def cmd_validate(args):
    world = wm.load_scenario(args.scenario)
    annotations = strategy.annotations_from_world(world)
    strategy.build_agenda_manual(world, annotations)
    target = world.objects[0].name if world.objects else 'object'
    table = strategy.ProbabilityTable.uniform([a.id for a in annotations])
    for name in mission.STRATEGIES:
        config = cfg.mission_config(world, target, strategy=name)
        mission.build_mission(config, world, annotations, table)
    sys.stdout.write(
        '{0}: ok ({1} rooms, {2} furniture, {3} objects, {4} annotations)\n'.format(
            world.name,
            len(world.rooms),
            len(world.furniture),
            len(world.objects),
            len(annotations),
        )
    )
    return 0


COMMANDS = {
    'run': cmd_run,
    'compare': cmd_compare,
    'gen-poses': cmd_gen_poses,
    'validate': cmd_validate,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write('fetchsim: error: {0}\n'.format(exc))
        return 1
    except SystemExit as exc:  # --help and --version
        return exc.code or 0

    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(
        level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write('fetchsim: error: {0}\n'.format(exc))
        return 1
    except errors.SchemaError as exc:
        sys.stderr.write('fetchsim: scenario error at {0}: {1}\n'.format(
            exc.path or '<root>', exc.message
        ))
        return 2
    except (errors.FetchSimError, OSError) as exc:
        sys.stderr.write('fetchsim: scenario error: {0}\n'.format(exc))
        return 2


if __name__ == '__main__':
    sys.exit(main())
