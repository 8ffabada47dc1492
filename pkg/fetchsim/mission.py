"""
FETCH AND CARRY MISSION
=======================

The whole task as a hierarchical state machine. The outer machine depends on
the strategy:

    manual     BUILD_AGENDA -> LOCATE -> INFORM_USER

    generated  SELECT_ROOM -> GOTO_CENTER -> SCAN -> EXTRACT -> LOCATE
                    ^                                  |           |
                    +------------- empty --------------+-exhausted-+
               SELECT_ROOM --exhausted--> INFORM_USER

    hybrid     like generated, but rooms scanned before are searched at
               their frozen locations (SELECT_ROOM --known--> BUILD_AGENDA)

LOCATE is the inner loop over search locations:

    SELECT_POSITION -> MOVE -> RECOGNIZE -> GRASP -> PUT_ON_TRAY
          ^                        |
          +----- not detected -----+

A location is removed from the agenda once selected, so none is visited
twice. Recognition updates the probability table with every object seen
(manual and hybrid strategies). A detection flagged false still leads to a
grasp attempt and to informing the user, just like a real one.

With `concurrent_scan` the rotation and the segmentation of a room scan run
as the two branches of a concurrent container; the scan then lasts as long
as its slower branch.

All durations are simulated and charged to a `SimClock` under one of the
categories in `CATEGORIES`; the report's duration is their sum.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from fetchsim import errors
from fetchsim import hsm
from fetchsim import nav
from fetchsim import percept
from fetchsim import strategy as st
from fetchsim import tablegeom
from fetchsim import utils
from fetchsim import world as wm

logger = logging.getLogger(__name__)

MANUAL = 'manual'
GENERATED = 'generated'
HYBRID = 'hybrid'
STRATEGIES = (MANUAL, GENERATED, HYBRID)

NEAREST_FIRST = 'nearest-first'
FIXED = 'fixed'
ROOM_ORDER_POLICIES = (NEAREST_FIRST, FIXED)

CATEGORIES = ('travel', 'scan', 'recognition', 'grasp', 'inform')

DETECTED = 'Y'
NOT_DETECTED = 'N'
FALSE_DETECTION = 'N*'

SUCCEEDED = 'succeeded'
FAILED = 'failed'


@dataclass(frozen=True)
class MissionConfig:
    target_object: str
    strategy: str = MANUAL
    room_order_policy: str = NEAREST_FIRST
    grasp_success_probability: float = 1.0
    concurrent_scan: bool = False
    seed: int = 0
    scan_step: int = 30
    durations: nav.DurationModel = nav.DurationModel()
    noise: percept.PerceptionNoise = percept.PerceptionNoise()
    heuristic: tablegeom.HeuristicParams = tablegeom.HeuristicParams()
    cost: st.CostParams = st.CostParams()

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise errors.InvariantViolation('strategy', self.strategy)
        if self.room_order_policy not in ROOM_ORDER_POLICIES:
            raise errors.InvariantViolation(
                'room-order-policy', self.room_order_policy
            )
        if not 0.0 <= self.grasp_success_probability <= 1.0:
            raise errors.InvariantViolation(
                'probability-range',
                'grasp_success_probability',
                self.grasp_success_probability,
            )
        if self.scan_step <= 0 or 360 % self.scan_step:
            raise errors.InvariantViolation('scan-step', self.scan_step)

    @property
    def scan_steps(self):
        return 360 // self.scan_step

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class InformOutcome:
    informed: bool
    rooms_visited: Tuple[str, ...]
    message: str


@dataclass(frozen=True)
class MissionReport:
    target_object: str
    strategy: str
    object_detected: str
    duration: float
    positions_visited: int
    positions_total: int
    grasped: bool
    user_informed: bool
    trace: hsm.Trace = field(repr=False)
    breakdown: Tuple[Tuple[str, float], ...] = ()
    rooms_scanned: int = 0
    visited_ids: Tuple[str, ...] = ()
    message: str = ''
    outcome: str = FAILED
    table: Optional[st.ProbabilityTable] = field(
        default=None, compare=False, repr=False
    )
    frozen: Tuple[tablegeom.SearchLocation, ...] = field(
        default=(), compare=False, repr=False
    )
    durations: nav.DurationModel = field(
        default=nav.DurationModel(), compare=False, repr=False
    )
    scan_steps: int = field(default=12, compare=False, repr=False)

    def __post_init__(self):
        assert self.positions_visited <= self.positions_total, (
            'Visited more positions than there are'
        )

    def projected_savings(self, model=None, steps=None):
        """(pipeline, idealized) seconds a concurrent scan saves over the
        rooms scanned, under the mission's duration model by default."""
        pipeline, ideal = nav.scan_savings(
            steps or self.scan_steps, model or self.durations
        )
        return self.rooms_scanned * pipeline, self.rooms_scanned * ideal

    def to_dict(self):
        return {
            'target_object': self.target_object,
            'strategy': self.strategy,
            'object_detected': self.object_detected,
            'duration': self.duration,
            'positions_visited': self.positions_visited,
            'positions_total': self.positions_total,
            'grasped': self.grasped,
            'user_informed': self.user_informed,
            'breakdown': dict(self.breakdown),
            'rooms_scanned': self.rooms_scanned,
            'projected_savings': dict(
                zip(('pipeline', 'full_overlap'), self.projected_savings())
            ),
            'visited_ids': list(self.visited_ids),
            'message': self.message,
            'outcome': self.outcome,
            'trace': hsm.trace_to_text(self.trace),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def row(self):
        """Table-I style text row: object, detected, duration, #."""
        return '{0}\t{1}\t{2}\t{3}'.format(
            self.target_object,
            self.object_detected,
            mmss(self.duration),
            self.positions_total,
        )


def mmss(seconds):
    """'[min]:[sec]' rendering of a duration in seconds."""
    total = int(round(seconds))
    return '{0}:{1:02d}'.format(total // 60, total % 60)


def describe_location(pose, world):
    """'on the dining table in the dining room'-like phrase for a pose."""
    room = wm.room_of(pose, world)
    furniture = wm.furniture_at(pose, world)
    parts = []
    if furniture is not None:
        parts.append('on the {0}'.format(utils.pretty_name(furniture.id)))
    if room is not None:
        parts.append('in the {0}'.format(utils.pretty_name(room)))
    return ' '.join(parts) or 'somewhere in the flat'


def _message(detection, target):
    if detection is None:
        return 'I could not find the {0}.'.format(target or 'object')
    name, phrase = detection
    return 'The {0} is {1}.'.format(utils.pretty_name(name), phrase)


def _room_centers(world, room_ids):
    centers = {}
    for rid in room_ids:
        try:
            centers[rid] = wm.room_center(world.room(rid), world)
        except errors.InvariantViolation:
            logger.warning('room %s has no free cell, skipping it', rid)
    return centers


def inform_user(
    world,
    detection,
    noise,
    rng=None,
    robot_pose=None,
    target=None,
    clock=None,
    model=None,
):
    """Find the user and tell them where the object is.

    'detection' is None or a (name, pose) pair. The room the user was last
    seen in is visited first, then the others nearest-first, until the user
    is detected. Travel and detection time are charged as 'inform'.
    """
    model = model or nav.DurationModel()
    rng = rng if rng is not None else np.random.default_rng(noise.seed)
    pose = utils.as_pose(robot_pose or world.agent.robot_pose)
    if detection is not None:
        detection = (detection[0], describe_location(detection[1], world))
    message = _message(detection, target)

    centers = _room_centers(world, [r.id for r in world.rooms])
    pending = [r for r in centers if r != world.agent.user_room_last_seen]
    order = [world.agent.user_room_last_seen]
    visited = []
    while order:
        rid = order.pop(0)
        path = nav.plan(pose, centers[rid], world) if rid in centers else None
        if path is not None:
            goal_yaw = pose[2]
            if len(path.waypoints) >= 2:
                goal_yaw = utils.heading(path.waypoints[-2], path.waypoints[-1])
            if clock is not None:
                clock.advance(
                    nav.travel_time(
                        path, nav.path_turns(path, pose[2], goal_yaw), model
                    ),
                    'inform',
                )
                clock.advance(model.user_detection_time, 'inform')
            pose = (centers[rid][0], centers[rid][1], goal_yaw)
            visited.append(rid)
            if percept.detect_user(world, rid, noise, rng):
                logger.info('user found in %s: %s', rid, message)
                return InformOutcome(True, tuple(visited), message)
        if pending:
            lengths = nav.path_lengths(pose, [centers[r] for r in pending], world)
            ranked = sorted(
                (d, r) for d, r in zip(lengths, pending) if d is not None
            )
            if not ranked:
                break
            nearest = ranked[0][1]
            pending.remove(nearest)
            order.append(nearest)
    logger.info('user not found after visiting %s', visited)
    return InformOutcome(False, tuple(visited), message)


class _Context:
    """What the state bodies of one mission share besides the userdata."""

    def __init__(self, config, world, annotations):
        self.config = config
        self.world = world
        self.annotations = list(annotations)
        self.rng = np.random.default_rng(config.seed)
        self.model = config.durations
        self.noise = config.noise
        self.centers = _room_centers(world, [r.id for r in world.rooms])

    def travel(self, clock, start, goal_pose):
        path = nav.plan(start, goal_pose[:2], self.world)
        if path is None:
            return None
        turns = nav.path_turns(path, start[2], goal_pose[2])
        clock.advance(nav.travel_time(path, turns, self.model), 'travel')
        return path


def _state(name, outcomes, body, inputs=(), outputs=(), duration=None, category='other'):
    return hsm.StateSpec(
        name, outcomes, body, inputs, outputs, duration, category
    )


def _build_agenda_manual(ctx):
    def body(ud, clock):
        agenda = st.build_agenda_manual(ctx.world, ctx.annotations)
        ud['agenda'] = agenda
        ud['positions_total'] = len(agenda)
        return 'built' if agenda.remaining else 'empty'

    return _state(
        'BUILD_AGENDA',
        ('built', 'empty'),
        body,
        outputs=('agenda', 'positions_total'),
    )


def _build_agenda_known(ctx):
    def body(ud, clock):
        room = ud['current_room']
        known = [l for l in ud['frozen'] if l.room_id == room]
        agenda = st.SearchAgenda(known, [], st.MANUAL)
        ud['agenda'] = agenda
        ud['positions_total'] = ud['positions_total'] + len(known)
        logger.info('%s: %d frozen locations', room, len(known))
        return 'built' if known else 'empty'

    return _state(
        'BUILD_AGENDA',
        ('built', 'empty'),
        body,
        ('current_room', 'frozen', 'positions_total'),
        ('agenda', 'positions_total'),
    )


def _select_room(ctx):
    config = ctx.config
    hybrid = config.strategy == HYBRID

    def body(ud, clock):
        remaining = [r for r in ud['rooms_remaining'] if r in ctx.centers]
        if not remaining:
            ud['rooms_remaining'] = []
            return 'exhausted'
        pose = ud['robot_pose']
        lengths = nav.path_lengths(
            pose, [ctx.centers[r] for r in remaining], ctx.world
        )
        normalizer = config.cost.normalizer(ctx.world)
        ranked = []
        for k, (rid, d) in enumerate(zip(remaining, lengths)):
            if d is None:
                logger.warning('room %s is unreachable, skipping it', rid)
                continue
            penalty = config.cost.k_pen if rid == ctx.world.user_room else 0.0
            if config.room_order_policy == FIXED:
                key = (config.cost.k2 * penalty, k)
            else:
                key = (d / normalizer + config.cost.k2 * penalty, k)
            ranked.append((key, rid))
        if not ranked:
            ud['rooms_remaining'] = []
            return 'exhausted'
        room = min(ranked)[1]
        ud['rooms_remaining'] = [r for _, r in ranked if r != room]
        ud['current_room'] = room
        logger.info('entering %s', room)
        if hybrid and any(l.room_id == room for l in ud['frozen']):
            return 'known'
        return 'selected'

    outcomes = ('selected', 'known', 'exhausted') if hybrid else ('selected', 'exhausted')
    inputs = ('rooms_remaining', 'robot_pose') + (('frozen',) if hybrid else ())
    return _state(
        'SELECT_ROOM', outcomes, body, inputs, ('rooms_remaining', 'current_room')
    )


def _goto_center(ctx):
    def body(ud, clock):
        pose = ud['robot_pose']
        path, center = st.center_approach(ctx.world, ud['current_room'], pose)
        clock.advance(
            nav.travel_time(path, nav.path_turns(path, pose[2], center[2]), ctx.model),
            'travel',
        )
        ud['robot_pose'] = center
        return 'arrived'

    return _state(
        'GOTO_CENTER',
        ('arrived',),
        body,
        ('robot_pose', 'current_room'),
        ('robot_pose',),
    )


def _scan_clouds(ctx, pose):
    return percept.rotation_scan(
        ctx.world, pose, ctx.noise, step=ctx.config.scan_step, rng=ctx.rng
    )


def _scan(ctx):
    steps = ctx.config.scan_steps
    model = ctx.model

    if not ctx.config.concurrent_scan:

        def body(ud, clock):
            ud['clouds'] = _scan_clouds(ctx, ud['robot_pose'])
            return 'scanned'

        return _state(
            'SCAN',
            ('scanned',),
            body,
            ('robot_pose',),
            ('clouds',),
            nav.scan_duration(steps, model, False),
            'scan',
        )

    def rotate(ud, clock):
        yaw0 = ud['robot_pose'][2]
        ud['scan_headings'] = [
            float(utils.wrap_angle(yaw0 + math.radians(k * ctx.config.scan_step)))
            for k in range(steps)
        ]
        return 'done'

    def segment(ud, clock):
        ud['clouds'] = _scan_clouds(ctx, ud['robot_pose'])
        return 'done'

    return hsm.concurrence(
        'SCAN',
        ('scanned',),
        [
            _state(
                'ROTATE',
                ('done',),
                rotate,
                ('robot_pose',),
                ('scan_headings',),
                steps * model.rotate_step_time,
                'scan',
            ),
            _state(
                'SEGMENT',
                ('done',),
                segment,
                ('robot_pose',),
                ('clouds',),
                nav.segmentation_finish(steps, model),
                'scan',
            ),
        ],
        {'scanned': {'ROTATE': 'done', 'SEGMENT': 'done'}},
        'scanned',
    )


def _extract(ctx):
    hybrid = ctx.config.strategy == HYBRID

    def body(ud, clock):
        room = ud['current_room']
        agenda = st.agenda_from_clouds(
            ud['clouds'], room, ctx.world, ctx.config.heuristic
        )
        if hybrid:
            frozen = st.freeze_generated(agenda.remaining)
            ud['frozen'] = list(ud['frozen']) + frozen
            agenda = st.SearchAgenda(frozen, [], st.MANUAL, agenda.candidate_count)
        ud['agenda'] = agenda
        ud['positions_total'] = ud['positions_total'] + len(agenda)
        ud['rooms_scanned'] = ud['rooms_scanned'] + 1
        return 'built' if agenda.remaining else 'empty'

    inputs = ('clouds', 'current_room', 'positions_total', 'rooms_scanned')
    outputs = ('agenda', 'positions_total', 'rooms_scanned')
    if hybrid:
        inputs += ('frozen',)
        outputs += ('frozen',)
    return _state('EXTRACT', ('built', 'empty'), body, inputs, outputs)


def _locate(ctx):
    config = ctx.config
    target = config.target_object
    learns = config.strategy != GENERATED

    def select(ud, clock):
        agenda = ud['agenda']
        if config.strategy == GENERATED:
            table = st.ProbabilityTable.uniform(agenda.ids())
        else:
            table = ud['table']
        location = st.next_location(
            agenda,
            target,
            ud['robot_pose'],
            ctx.world.user_room,
            table,
            config.cost,
            ctx.world,
        )
        if location is None:
            return 'exhausted'
        ud['location'] = location
        ud['visited_ids'] = list(ud['visited_ids']) + [location.id]
        return 'selected'

    def move(ud, clock):
        location = ud['location']
        if ctx.travel(clock, ud['robot_pose'], location.pose) is None:
            return 'blocked'
        ud['robot_pose'] = location.pose
        return 'arrived'

    def recognize(ud, clock):
        result = percept.recognize_objects(
            ctx.world, ud['robot_pose'], target, ctx.noise, ctx.rng
        )
        if learns and result.detections:
            locations = list(ctx.annotations)
            if config.strategy == HYBRID:
                locations = list(ud['frozen'])
            ud['table'] = st.update_probabilities(
                ud['table'],
                [(d.name, d.pose) for d in result.detections],
                locations,
            )
        found = result.of(target)
        if not found:
            return 'not_detected'
        best = sorted(found, key=lambda d: not d.true_positive)[0]
        ud['detection'] = best
        logger.info(
            'detected %s at %s (%s)',
            target,
            ud['location'].id,
            'true' if best.true_positive else 'false',
        )
        return 'detected'

    def grasp(ud, clock):
        draw = ctx.rng.random()
        ok = ud['detection'].true_positive and draw < config.grasp_success_probability
        ud['grasped'] = bool(ok)
        return 'grasped' if ok else 'failed'

    def put_on_tray(ud, clock):
        ud['on_tray'] = True
        return 'done'

    table_keys = ('table', 'frozen') if learns else ()
    children = [
        _state(
            'SELECT_POSITION',
            ('selected', 'exhausted'),
            select,
            ('agenda', 'robot_pose', 'visited_ids', 'table'),
            ('location', 'visited_ids'),
        ),
        _state(
            'MOVE',
            ('arrived', 'blocked'),
            move,
            ('location', 'robot_pose'),
            ('robot_pose',),
        ),
        _state(
            'RECOGNIZE',
            ('detected', 'not_detected'),
            recognize,
            ('robot_pose', 'location') + table_keys,
            ('detection',) + (('table',) if learns else ()),
            ctx.model.recognition_time,
            'recognition',
        ),
        _state(
            'GRASP',
            ('grasped', 'failed'),
            grasp,
            ('detection',),
            ('grasped',),
            ctx.model.grasp_time,
            'grasp',
        ),
        _state('PUT_ON_TRAY', ('done',), put_on_tray, (), ('on_tray',)),
    ]
    return hsm.sequence(
        'LOCATE',
        ('found', 'exhausted'),
        children,
        {
            'SELECT_POSITION': {'selected': 'MOVE', 'exhausted': 'exhausted'},
            'MOVE': {'arrived': 'RECOGNIZE', 'blocked': 'SELECT_POSITION'},
            'RECOGNIZE': {'detected': 'GRASP', 'not_detected': 'SELECT_POSITION'},
            'GRASP': {'grasped': 'PUT_ON_TRAY', 'failed': 'found'},
            'PUT_ON_TRAY': {'done': 'found'},
        },
    )


def _inform(ctx):
    def body(ud, clock):
        detection = ud['detection']
        outcome = inform_user(
            ctx.world,
            None if detection is None else (detection.name, detection.pose),
            ctx.noise,
            ctx.rng,
            ud['robot_pose'],
            ctx.config.target_object,
            clock,
            ctx.model,
        )
        ud['user_informed'] = outcome.informed
        ud['message'] = outcome.message
        if not outcome.informed:
            return 'user_not_found'
        return 'informed' if detection is not None else 'informed_not_found'

    return _state(
        'INFORM_USER',
        ('informed', 'informed_not_found', 'user_not_found'),
        body,
        ('detection', 'robot_pose'),
        ('user_informed', 'message'),
    )


def initial_userdata(config, world, annotations, table):
    """The blackboard a mission starts from."""
    return {
        'robot_pose': utils.as_pose(world.agent.robot_pose),
        'table': table,
        'frozen': list(annotations) if config.strategy == HYBRID else [],
        'rooms_remaining': [r.id for r in world.rooms],
        'current_room': None,
        'agenda': st.SearchAgenda([]),
        'location': None,
        'detection': None,
        'grasped': False,
        'on_tray': False,
        'user_informed': False,
        'message': '',
        'visited_ids': [],
        'positions_total': 0,
        'rooms_scanned': 0,
        'clouds': None,
        'scan_headings': None,
    }


def build_mission(config, world, annotations, table):
    """The mission machine. Its state bodies share one seeded generator, so
    a machine is meant to be executed once."""
    ctx = _Context(config, world, annotations)
    inform = {
        'informed': SUCCEEDED,
        'informed_not_found': FAILED,
        'user_not_found': FAILED,
    }
    keys = initial_userdata(config, world, annotations, table).keys()

    if config.strategy == MANUAL:
        children = [_build_agenda_manual(ctx), _locate(ctx), _inform(ctx)]
        transitions = {
            'BUILD_AGENDA': {'built': 'LOCATE', 'empty': 'INFORM_USER'},
            'LOCATE': {'found': 'INFORM_USER', 'exhausted': 'INFORM_USER'},
            'INFORM_USER': inform,
        }
    else:
        children = [
            _select_room(ctx),
            _goto_center(ctx),
            _scan(ctx),
            _extract(ctx),
            _locate(ctx),
            _inform(ctx),
        ]
        transitions = {
            'SELECT_ROOM': {
                'selected': 'GOTO_CENTER',
                'exhausted': 'INFORM_USER',
            },
            'GOTO_CENTER': {'arrived': 'SCAN'},
            'SCAN': {'scanned': 'EXTRACT'},
            'EXTRACT': {'built': 'LOCATE', 'empty': 'SELECT_ROOM'},
            'LOCATE': {'found': 'INFORM_USER', 'exhausted': 'SELECT_ROOM'},
            'INFORM_USER': inform,
        }
        if config.strategy == HYBRID:
            children.insert(4, _build_agenda_known(ctx))
            transitions['SELECT_ROOM']['known'] = 'BUILD_AGENDA'
            transitions['BUILD_AGENDA'] = {'built': 'LOCATE', 'empty': 'SELECT_ROOM'}

    machine = hsm.sequence(
        'FETCH', (SUCCEEDED, FAILED), children, transitions, input_keys=keys
    )
    report = hsm.validate(machine)
    if not report.ok:
        raise errors.InvalidMachine(report)
    return machine


def run_mission(config, world, annotations, table):
    """Run one mission from the world's robot pose and report on it."""
    logger.info(
        'mission start: %s, %s strategy, seed %d',
        config.target_object,
        config.strategy,
        config.seed,
    )
    if config.strategy == MANUAL:
        table = table.with_locations([a.id for a in annotations])
    machine = build_mission(config, world, annotations, table)
    clock = hsm.SimClock()
    outcome, ud, trace = hsm.execute(
        machine, initial_userdata(config, world, annotations, table), clock
    )

    detection = ud['detection']
    if detection is None:
        detected = NOT_DETECTED
    elif detection.true_positive:
        detected = DETECTED
    else:
        detected = FALSE_DETECTION
    totals = clock.totals()
    report = MissionReport(
        target_object=config.target_object,
        strategy=config.strategy,
        object_detected=detected,
        duration=clock.now,
        positions_visited=len(ud['visited_ids']),
        positions_total=ud['positions_total'],
        grasped=ud['grasped'],
        user_informed=ud['user_informed'],
        trace=trace,
        breakdown=tuple((c, float(totals.get(c, 0.0))) for c in CATEGORIES),
        rooms_scanned=ud['rooms_scanned'],
        visited_ids=tuple(ud['visited_ids']),
        message=ud['message'],
        outcome=outcome,
        table=ud['table'],
        frozen=tuple(ud['frozen']),
        durations=config.durations,
        scan_steps=config.scan_steps,
    )
    logger.info(
        'mission end: %s %s in %s, %d/%d positions',
        config.target_object,
        detected,
        mmss(report.duration),
        report.positions_visited,
        report.positions_total,
    )
    return report


def run_days(config, world, annotations, table, days):
    """Run the same mission on 'days' consecutive days (seed + day),
    carrying the learnt table (and frozen locations) over."""
    reports = []
    for day in range(days):
        report = run_mission(
            config.replace(seed=config.seed + day), world, annotations, table
        )
        table = report.table
        if config.strategy == HYBRID:
            annotations = list(report.frozen)
        reports.append(report)
    return reports
