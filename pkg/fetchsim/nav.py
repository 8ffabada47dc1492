"""
NAVIGATION
==========

Shortest paths on the occupancy grid and the simulated duration model.

The grid is searched as an 8-connected graph. Orthogonal steps cost one
resolution, diagonal steps resolution * sqrt(2), and a diagonal step is only
allowed when both orthogonally adjacent cells are Free as well, so paths
never cut the corner of an obstacle. The robot is a point at cell
granularity; obstacles are expected to be inflated in the map already.

Nodes are numbered row-major (node = row * width + col), which fixes the
expansion order of Dijkstra's algorithm to the lexicographic (row, col) order
and makes the chosen path among equally long ones reproducible.
"""

import math
from dataclasses import dataclass, fields
from typing import Tuple

import numpy as np
from scipy.sparse.csgraph import dijkstra

from fetchsim import errors
from fetchsim import utils
from fetchsim import world as wm


@dataclass(frozen=True)
class Path:
    waypoints: Tuple[Tuple[float, float], ...]
    length: float


@dataclass(frozen=True)
class DurationModel:
    """Simulated durations: speeds in m/s and rad/s, times in seconds.

    A rotation scan alternates rotating by one step and running the semantic
    segmentation; the two take almost the same time (4 s and 5 s).
    """

    translate_speed: float = 0.3
    rotate_speed: float = math.pi / 4
    segmentation_time: float = 5.0
    rotate_step_time: float = 4.0
    recognition_time: float = 10.0
    grasp_time: float = 25.0
    user_detection_time: float = 5.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise errors.InvariantViolation(
                    'duration-positive', f.name, getattr(self, f.name)
                )


def _start_node(start, world):
    grid = world.grid
    row, col = grid.cell_of(start)
    if wm.is_occupied(start, world):
        raise errors.StartOccupied(
            'start {0} is not on a free cell'.format(tuple(start))
        )
    return row * grid.width + col


def _search(start, world):
    node = _start_node(start, world)
    dist, pred = dijkstra(
        world.grid.neighbour_graph, directed=True, indices=node, return_predecessors=True
    )
    return node, dist, pred


def _goal_node(goal, world):
    row, col = world.grid.cell_of(goal)
    if not world.grid.in_bounds(row, col) or wm.is_occupied(goal, world):
        return None
    return row * world.grid.width + col


def plan(start, goal, world):
    """Shortest 8-connected path from 'start' to 'goal', or None when the
    goal is unreachable (occupied, off the map or cut off)."""
    start_node, dist, pred = _search(start, world)
    goal_node = _goal_node(goal, world)
    if goal_node is None or not np.isfinite(dist[goal_node]):
        return None
    nodes = [goal_node]
    while nodes[-1] != start_node:
        nodes.append(int(pred[nodes[-1]]))
    w = world.grid.width
    waypoints = tuple(
        world.grid.center_of(n // w, n % w) for n in reversed(nodes)
    )
    return Path(waypoints, float(dist[goal_node]))


def path_lengths(start, goals, world):
    """Path lengths from 'start' to each goal (None where unreachable),
    computed with a single search."""
    _, dist, _ = _search(start, world)
    out = []
    for goal in goals:
        node = _goal_node(goal, world)
        if node is None or not np.isfinite(dist[node]):
            out.append(None)
        else:
            out.append(float(dist[node]))
    return out


def path_turns(path, start_yaw, goal_yaw):
    """Total absolute heading change when following 'path' from 'start_yaw'
    and finally turning to 'goal_yaw'."""
    yaw, total = start_yaw, 0.0
    pts = path.waypoints
    for a, b in zip(pts, pts[1:]):
        h = utils.heading(a, b)
        total += utils.angular_distance(h, yaw)
        yaw = h
    return total + utils.angular_distance(goal_yaw, yaw)


def travel_time(path, turns, model):
    return path.length / model.translate_speed + turns / model.rotate_speed


def segmentation_finish(steps, model):
    """When the last segmentation of a concurrent scan ends.

    Segmentation k starts once rotation k is done and segmentation k - 1 has
    ended, so the finish time is the largest k * rot + (steps - k + 1) * seg.
    """
    assert steps >= 1, 'A scan needs at least one step'
    k = np.arange(1, steps + 1)
    rot, seg = model.rotate_step_time, model.segmentation_time
    return float(np.max(k * rot + (steps - k + 1) * seg))


def scan_duration(steps, model, concurrent):
    """Time of a rotation scan of 'steps' rotate-and-segment steps.

    Sequentially every step rotates and then segments. Run concurrently the
    two form a pipeline: the first rotation is exposed, after which the
    slower activity dictates the pace.
    """
    assert steps >= 1, 'A scan needs at least one step'
    rot, seg = model.rotate_step_time, model.segmentation_time
    if not concurrent:
        return steps * (rot + seg)
    return segmentation_finish(steps, model)


def scan_savings(steps, model):
    """(pipeline saving, idealized full-overlap saving) per room scan.

    The idealized figure assumes the whole rotation time disappears.
    """
    pipeline = scan_duration(steps, model, False) - scan_duration(
        steps, model, True
    )
    return pipeline, steps * min(model.rotate_step_time, model.segmentation_time)
