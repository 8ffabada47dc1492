"""
SEARCH STRATEGIES
=================

Where to look next for an object.

Manually annotated search locations are ranked by a cost that trades the
path length from the robot against the learnt probability of finding the
object there, plus a penalty for locations in the user's room:

    c(x, y) = L(robot -> y) / B  -  k1 * P(x at y)  +  k2 * c_pen(y)

    c_pen(y) = k_pen  if y is in the user's room
               0      otherwise

where L is the length of the planned path and B a normalizing length (the
map diagonal by default). The penalty keeps the robot out of the user's
room until every other room is exhausted: the user is assumed to ask for
the object because it is not within sight. With the option
`prob_transform='neglog'` the probability term becomes k1 * (-log P), which
reaches further when the path lengths differ a lot.

P(x at y) comes from a table of sighting counts with a Laplace prior:

    P(x at y) = (alpha + n_xy) / sum_y' (alpha + n_xy')

so a fresh table is uniform across all locations. Every recognized object
(not only the one asked for) adds a sighting at the location nearest to it.

Generated locations are obtained per room: move to the room's centre, run a
rotation scan, extract the table clusters and keep two positions per table,
or none when fewer than two are reachable. They are visited in agenda order. `freeze_generated` turns a set of
generated locations into stable annotations so that they can be ranked and
learnt like manual ones.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from fetchsim import errors
from fetchsim import nav
from fetchsim import percept
from fetchsim import tablegeom
from fetchsim import utils
from fetchsim import world as wm
from fetchsim.tablegeom import GENERATED, MANUAL, SearchLocation

logger = logging.getLogger(__name__)

LINEAR = 'linear'
NEGLOG = 'neglog'
PROB_TRANSFORMS = (LINEAR, NEGLOG)

DEFAULT_K_PEN = 3.0
DEFAULT_ALPHA = 1.0


@dataclass(frozen=True)
class CostParams:
    """Weights of the search cost.

    'bat_normalizer' of None stands for the diagonal of the map, in metres.
    """

    k1: float = 1.0
    k2: float = 1.0
    k_pen: float = DEFAULT_K_PEN
    bat_normalizer: Optional[float] = None
    prob_transform: str = LINEAR

    def __post_init__(self):
        if self.k1 < 0 or self.k2 < 0:
            raise errors.InvariantViolation('weights>=0', 'cost', (self.k1, self.k2))
        if not self.k_pen > 0:
            raise errors.InvariantViolation('k_pen>0', 'cost', self.k_pen)
        if self.bat_normalizer is not None and not self.bat_normalizer > 0:
            raise errors.InvariantViolation(
                'bat_normalizer>0', 'cost', self.bat_normalizer
            )
        if self.prob_transform not in PROB_TRANSFORMS:
            raise errors.InvariantViolation(
                'prob-transform', 'cost', self.prob_transform
            )

    def normalizer(self, world):
        if self.bat_normalizer is None:
            return world.diagonal
        return self.bat_normalizer


@dataclass(frozen=True)
class ProbabilityTable:
    """Sighting counts per (object name, location id).

    Tables are values: updates return a new table.
    """

    location_ids: Tuple[str, ...]
    counts: Tuple[Tuple[Tuple[str, str], int], ...] = ()
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not self.alpha > 0:
            raise errors.InvariantViolation('alpha>0', 'table', self.alpha)
        if len(set(self.location_ids)) != len(self.location_ids):
            raise errors.InvariantViolation('unique-location-ids', 'table')
        counts = dict(self.counts)
        for key, n in counts.items():
            if n < 0:
                raise errors.InvariantViolation('counts>=0', key, n)
        object.__setattr__(self, 'location_ids', tuple(self.location_ids))
        object.__setattr__(self, 'counts', tuple(sorted(counts.items())))

    @classmethod
    def uniform(cls, location_ids, alpha=DEFAULT_ALPHA):
        return cls(tuple(location_ids), (), alpha)

    def count(self, name, location_id):
        return dict(self.counts).get((name, location_id), 0)

    def probability(self, name, location_id):
        """P(name at location_id). A location unknown to the table is
        treated as a fresh one added to it."""
        counts = dict(self.counts)
        ids = self.location_ids
        if location_id not in ids:
            ids = ids + (location_id,)
        total = sum(self.alpha + counts.get((name, y), 0) for y in ids)
        return (self.alpha + counts.get((name, location_id), 0)) / total

    def distribution(self, name):
        return {y: self.probability(name, y) for y in self.location_ids}

    def with_locations(self, location_ids):
        """The same counts over the union of the current and the given
        location ids (new ones appended in the given order)."""
        ids = list(self.location_ids)
        ids.extend(y for y in location_ids if y not in self.location_ids)
        return ProbabilityTable(tuple(ids), self.counts, self.alpha)

    def incremented(self, pairs):
        counts = dict(self.counts)
        ids = list(self.location_ids)
        for name, location_id in pairs:
            counts[(name, location_id)] = counts.get((name, location_id), 0) + 1
            if location_id not in ids:
                ids.append(location_id)
        return ProbabilityTable(tuple(ids), tuple(counts.items()), self.alpha)

    def to_json(self):
        nested = {}
        for (name, location_id), n in self.counts:
            nested.setdefault(name, {})[location_id] = n
        return json.dumps(
            {
                'alpha': self.alpha,
                'locations': list(self.location_ids),
                'counts': nested,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise errors.SchemaError('', 'not JSON: {0}'.format(exc)) from exc
        if not isinstance(doc, dict) or not isinstance(
            doc.get('locations'), list
        ):
            raise errors.SchemaError('locations', 'expected a list')
        counts = []
        for name, row in doc.get('counts', {}).items():
            if not isinstance(row, dict):
                raise errors.SchemaError('counts.' + name, 'expected an object')
            for location_id, n in row.items():
                if not isinstance(n, int) or isinstance(n, bool):
                    raise errors.SchemaError(
                        'counts.{0}.{1}'.format(name, location_id),
                        'expected an integer',
                    )
                counts.append(((name, location_id), n))
        return cls(
            tuple(doc['locations']),
            tuple(counts),
            float(doc.get('alpha', DEFAULT_ALPHA)),
        )


@dataclass
class SearchAgenda:
    """Locations still to visit and those already visited.

    'candidate_count' is the number of generated candidates before the map
    and room filters (zero for manual agendas).
    """

    remaining: List[SearchLocation]
    visited: List[SearchLocation] = field(default_factory=list)
    strategy: str = MANUAL
    candidate_count: int = 0

    def __len__(self):
        return len(self.remaining) + len(self.visited)

    def ids(self):
        return [l.id for l in self.remaining]

    def pop(self, location_id):
        """Move a remaining location to the visited list."""
        for i, l in enumerate(self.remaining):
            if l.id == location_id:
                del self.remaining[i]
                self.visited.append(l)
                return l
        raise KeyError(location_id)


def _probability_term(name, location, table, params):
    p = table.probability(name, location.id)
    if params.prob_transform == NEGLOG:
        return params.k1 * -math.log(p)
    return -params.k1 * p


def cost(
    name,
    location,
    robot_pose,
    user_room,
    table,
    params,
    world,
    path_length=None,
):
    """Search cost of 'location' for object 'name', None if unreachable.

    'path_length' may be supplied when the planner has already run.
    """
    if path_length is None:
        (path_length,) = nav.path_lengths(robot_pose, [location.pose], world)
    if path_length is None:
        return None
    penalty = params.k_pen if location.room_id == user_room else 0.0
    value = (
        path_length / params.normalizer(world)
        + _probability_term(name, location, table, params)
        + params.k2 * penalty
    )
    logger.debug(
        'cost of %s for %s: %.4f (path %.2f m)', location.id, name, value, path_length
    )
    return value


def select_min(costs):
    """Id with the smallest cost in a {id: cost or None} map, ties going to
    the smaller id; None when nothing is reachable."""
    best = None
    for location_id in sorted(costs):
        c = costs[location_id]
        if c is None:
            continue
        if best is None or c < costs[best]:
            best = location_id
    return best


def next_location(agenda, name, robot_pose, user_room, table, params, world):
    """Pop the cheapest reachable location off the agenda (None if there is
    none)."""
    if not agenda.remaining:
        return None
    lengths = nav.path_lengths(
        robot_pose, [l.pose for l in agenda.remaining], world
    )
    costs = {
        l.id: cost(name, l, robot_pose, user_room, table, params, world, d)
        for l, d in zip(agenda.remaining, lengths)
    }
    chosen = select_min(costs)
    if chosen is None:
        return None
    return agenda.pop(chosen)


def update_probabilities(table, sightings, locations):
    """Count each (name, pose) sighting at the Euclidean-nearest location."""
    assert locations, 'Sightings need at least one location'
    if not sightings:
        return table
    xy = np.array([l.pose[:2] for l in locations], dtype=float)
    pairs = []
    for name, pose in sightings:
        d = np.hypot(xy[:, 0] - pose[0], xy[:, 1] - pose[1])
        pairs.append((name, locations[int(np.argmin(d))].id))
    logger.debug('probability update: %s', pairs)
    return table.with_locations([l.id for l in locations]).incremented(pairs)


def annotations_from_world(world):
    """The scenario's annotations as manual search locations."""
    return [
        SearchLocation(
            a.id,
            utils.as_pose(a.pose),
            a.room_id or wm.room_of(a.pose, world),
            MANUAL,
        )
        for a in world.annotations
    ]


def build_agenda_manual(world, annotations):
    seen = set()
    remaining = []
    for a in annotations:
        if a.id in seen:
            raise errors.InvalidAnnotation('duplicate annotation id {0!r}'.format(a.id))
        seen.add(a.id)
        if wm.is_occupied(a.pose, world):
            raise errors.InvalidAnnotation(
                'annotation {0!r} at {1} is not on a free cell'.format(
                    a.id, tuple(a.pose)
                )
            )
        room = a.room_id or wm.room_of(a.pose, world)
        if room is None:
            raise errors.InvalidAnnotation(
                'annotation {0!r} lies in no room'.format(a.id)
            )
        remaining.append(SearchLocation(a.id, utils.as_pose(a.pose), room, MANUAL))
    logger.info('manual agenda: %d locations', len(remaining))
    return SearchAgenda(remaining, [], MANUAL)


def center_approach(world, room_id, robot_pose):
    """(path, centre pose) for moving to a room's centre; the robot arrives
    with the heading of the last path segment."""
    cx, cy = wm.room_center(world.room(room_id), world)
    path = nav.plan(robot_pose, (cx, cy), world)
    if path is None:
        raise errors.RoomUnreachable(
            'the centre of {0} cannot be reached'.format(room_id)
        )
    yaw = robot_pose[2]
    if len(path.waypoints) >= 2:
        yaw = utils.heading(path.waypoints[-2], path.waypoints[-1])
    return path, (cx, cy, yaw)


def agenda_from_clouds(clouds, room_id, world, params):
    """Generated agenda from the clouds of a rotation scan in 'room_id'."""
    clusters = tablegeom.extract_table_clusters(clouds, params)
    kept = []
    for k, c in enumerate(clusters):
        kept.extend(
            tablegeom.positions_for_cluster(
                c, params, room_id, world, '{0}-t{1}'.format(room_id, k)
            )
        )
    candidates = 2 * len(clusters)
    assert len(kept) % 2 == 0, 'Generated positions come in pairs'
    logger.info(
        'generated agenda for %s: %d tables, %d candidates, %d kept',
        room_id,
        len(clusters),
        candidates,
        len(kept),
    )
    return SearchAgenda(kept, [], GENERATED, candidates)


def build_agenda_generated(
    world,
    room_id,
    robot_pose,
    params,
    noise,
    rng=None,
    clock=None,
    model=None,
    concurrent=False,
):
    """Move to the room centre, scan and generate positions.

    With a clock, the travel and the scan are charged to it.
    """
    model = model or nav.DurationModel()
    path, center = center_approach(world, room_id, robot_pose)
    if clock is not None:
        clock.advance(
            nav.travel_time(path, nav.path_turns(path, robot_pose[2], center[2]), model),
            'travel',
        )
    clouds = percept.rotation_scan(
        world, center, noise, rng=rng, clock=clock, model=model, concurrent=concurrent
    )
    return agenda_from_clouds(clouds, room_id, world, params)


def freeze_generated(locations):
    """Stable manual locations 'gen-<room>-<k>' from generated ones, k
    counting per room in the given order."""
    per_room = {}
    out = []
    for l in locations:
        k = per_room.get(l.room_id, 0)
        per_room[l.room_id] = k + 1
        out.append(
            SearchLocation(
                'gen-{0}-{1}'.format(l.room_id, k), l.pose, l.room_id, MANUAL
            )
        )
    return out


def locations_to_json(locations):
    return json.dumps(
        [
            {'id': l.id, 'pose': list(l.pose), 'room': l.room_id}
            for l in locations
        ],
        indent=2,
    )


def locations_from_json(text):
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise errors.SchemaError('', 'not JSON: {0}'.format(exc)) from exc
    if not isinstance(doc, list):
        raise errors.SchemaError('', 'expected a list of locations')
    out = []
    for i, d in enumerate(doc):
        try:
            out.append(
                SearchLocation(
                    str(d['id']), utils.as_pose(d['pose']), d.get('room'), MANUAL
                )
            )
        except (KeyError, TypeError, AssertionError) as exc:
            raise errors.SchemaError(
                '[{0}]'.format(i), 'bad location: {0}'.format(exc)
            ) from exc
    return out
