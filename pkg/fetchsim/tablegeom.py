"""
TABLE GEOMETRY
==============

From labelled clouds to search locations:

    1. Keep the points labelled 'table' whose height lies in the band of
       graspable horizontal surfaces; this drops the floor, the underside of
       wall-mounted cupboards and the ceiling.
    2. Merge the clouds of all views and group the points by single-linkage
       Euclidean clustering in the ground plane.
    3. Describe each cluster by the principal axes of its projected
       footprint: the first axis carries the larger variance, the second one
       is perpendicular to it. Extents are the largest absolute projections
       onto each axis, i.e. the distance from the centroid to the physical
       edge of the surface.
    4. Place two search positions on the second axis, a security distance d
       beyond the edge on either side, looking at the centroid.
    5. Drop positions off the map, on non-free cells, outside the robot's
       room, or generated from a surface outside the robot's room. A surface
       that keeps a single position gets the two positions beyond the ends
       of its first axis instead, and is dropped when fewer than two of
       those survive either.

Optionally, positions whose views overlap enough are merged afterwards.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from fetchsim import errors
from fetchsim import utils
from fetchsim import world as wm

logger = logging.getLogger(__name__)

MANUAL = 'manual'
GENERATED = 'generated'

DEGENERATE_RATIO = 0.01


@dataclass(frozen=True)
class HeuristicParams:
    height_band: Tuple[float, float] = (0.4, 1.2)
    cluster_tolerance: float = 0.25
    min_cluster_points: int = 30
    security_distance: float = 0.4

    def __post_init__(self):
        low, high = self.height_band
        if not 0 <= low < high:
            raise errors.InvariantViolation('height-band', self.height_band)
        if self.cluster_tolerance <= 0 or self.min_cluster_points < 1:
            raise errors.InvariantViolation('clustering-positive', self)
        if self.security_distance < 0:
            raise errors.InvariantViolation(
                'security-distance', self.security_distance
            )
        object.__setattr__(self, 'height_band', (float(low), float(high)))


@dataclass(frozen=True)
class TableCluster:
    points: np.ndarray = field(repr=False)
    footprint: np.ndarray = field(repr=False)
    centroid: Tuple[float, float]
    axes: Tuple[Tuple[float, float], Tuple[float, float]]
    extents: Tuple[float, float]


@dataclass(frozen=True)
class SearchLocation:
    id: str
    pose: Tuple[float, float, float]
    room_id: Optional[str]
    source: str = MANUAL
    source_cluster: Optional[TableCluster] = field(
        default=None, compare=False, repr=False
    )
    # centroids of every surface a merged position stands for
    covers: Tuple[Tuple[float, float], ...] = field(
        default=(), compare=False, repr=False
    )

    def covered(self):
        if self.covers:
            return tuple(self.covers)
        if self.source_cluster is None:
            return ()
        return (tuple(self.source_cluster.centroid),)


def principal_axes(footprint):
    """(centroid, (first, second), (extent_first, extent_second)) of a 2D
    point set.

    When the two variances are within 1% of each other any orthogonal pair is
    a valid answer; the world axes are returned then, the second one being
    the y axis.
    """
    pts = np.asarray(footprint, dtype=float)
    centroid = pts.mean(axis=0)
    centred = pts - centroid
    cov = centred.T.dot(centred) / len(pts)
    values, vectors = np.linalg.eigh(cov)  # ascending
    if values[1] <= 0 or values[1] - values[0] <= DEGENERATE_RATIO * values[1]:
        first = np.array([1.0, 0.0])
    else:
        first = vectors[:, 1]
        if first[0] < -utils.EPS or (abs(first[0]) <= utils.EPS and first[1] < 0):
            first = -first
    second = np.array([-first[1], first[0]])
    extents = (
        max(float(np.abs(centred.dot(first)).max()), utils.EPS),
        max(float(np.abs(centred.dot(second)).max()), utils.EPS),
    )
    return (
        (float(centroid[0]), float(centroid[1])),
        (tuple(float(v) for v in first), tuple(float(v) for v in second)),
        extents,
    )


def cluster_from_points(points):
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    footprint = pts[:, :2]
    centroid, axes, extents = principal_axes(footprint)
    return TableCluster(pts, footprint, centroid, axes, extents)


def extract_table_clusters(clouds, params):
    """All table clusters visible in 'clouds' (possibly none)."""
    low, high = params.height_band
    chunks = [c.select('table') for c in clouds]
    pts = np.concatenate(chunks) if chunks else np.empty((0, 3))
    pts = pts[(pts[:, 2] >= low) & (pts[:, 2] <= high)]
    if not len(pts):
        return []
    # overlapping views see the same surface samples
    pts = np.unique(pts, axis=0)

    xy = pts[:, :2]
    pairs = cKDTree(xy).query_pairs(params.cluster_tolerance, output_type='ndarray')
    adjacency = coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
        shape=(len(xy), len(xy)),
    )
    count, labels = connected_components(adjacency, directed=False)

    clusters = []
    for k in range(count):
        members = pts[labels == k]
        if len(members) >= params.min_cluster_points:
            clusters.append(cluster_from_points(members))
    clusters.sort(key=lambda c: c.centroid)
    logger.debug(
        'table clustering: %d points, %d components, %d clusters kept',
        len(pts),
        count,
        len(clusters),
    )
    return clusters


def place_search_positions(cluster, params, world, id_prefix='gen'):
    """The two candidate positions on the second principal axis, at the
    security distance beyond the edge, facing the centroid."""
    return _positions_on_axis(cluster, params, world, id_prefix, 1, 'ab')


def fallback_positions(cluster, params, world, id_prefix='gen'):
    """The two positions beyond the ends of the first principal axis."""
    return _positions_on_axis(cluster, params, world, id_prefix, 0, 'cd')


def _positions_on_axis(cluster, params, world, id_prefix, axis, suffixes):
    cx, cy = cluster.centroid
    sx, sy = cluster.axes[axis]
    reach = cluster.extents[axis] + params.security_distance
    out = []
    for suffix, sign in zip(suffixes, (1.0, -1.0)):
        x, y = cx + sign * sx * reach, cy + sign * sy * reach
        yaw = math.atan2(-sign * sy, -sign * sx)
        out.append(
            SearchLocation(
                '{0}-{1}'.format(id_prefix, suffix),
                (x, y, yaw),
                wm.room_of((x, y), world),
                GENERATED,
                cluster,
            )
        )
    return out


def keep_position(location, robot_room, world):
    """The map and room filters for a single candidate."""
    x, y = location.pose[0], location.pose[1]
    row, col = world.grid.cell_of((x, y))
    if not world.grid.in_bounds(row, col):
        return False
    if world.grid.cells[row, col] != wm.FREE:
        return False
    if wm.room_of((x, y), world) != robot_room:
        return False
    if location.source_cluster is not None:
        if wm.room_of(location.source_cluster.centroid, world) != robot_room:
            return False
    return True


def filter_positions(candidates, robot_room, world):
    return [c for c in candidates if keep_position(c, robot_room, world)]


def positions_for_cluster(cluster, params, robot_room, world, id_prefix='gen'):
    """The kept search positions of one surface: two of them, or none.

    The pair on the second axis comes first. When the filters remove one or
    both of its positions, the ends of the first axis fill in. A surface left
    with a single reachable position contributes nothing.
    """
    candidates = place_search_positions(
        cluster, params, world, id_prefix
    ) + fallback_positions(cluster, params, world, id_prefix)
    kept = filter_positions(candidates, robot_room, world)
    if len(kept) < 2:
        logger.debug(
            '%s: %d reachable position(s), surface dropped', id_prefix, len(kept)
        )
        return []
    return kept[:2]


def _view_heading(location):
    return utils.heading(location.pose, location.source_cluster.centroid)


def _merge(a, b, fov, max_range, world):
    if a.room_id != b.room_id:
        return None
    mid = (
        (a.pose[0] + b.pose[0]) / 2,
        (a.pose[1] + b.pose[1]) / 2,
    )
    if a.source_cluster is b.source_cluster:
        cluster = a.source_cluster
    else:
        cluster = cluster_from_points(
            np.concatenate((a.source_cluster.points, b.source_cluster.points))
        )
    pose = (mid[0], mid[1], utils.heading(mid, cluster.centroid))
    sources = a.covered() + b.covered()
    if not utils.in_sector(sources, pose, fov, max_range).all():
        return None
    room = wm.room_of(mid, world) if world is not None else a.room_id
    if world is not None and (
        wm.is_occupied(mid, world) or room != a.room_id
    ):
        return None
    return SearchLocation(
        '{0}+{1}'.format(a.id, b.id), pose, room, GENERATED, cluster, sources
    )


def cluster_positions(
    locations,
    fov,
    min_overlap=0.5,
    max_distance=1.0,
    max_range=wm.DEFAULT_MAX_RANGE,
    world=None,
):
    """Greedily merge generated positions whose views overlap.

    Two positions merge when they are at most 'max_distance' apart, their
    view sectors towards their source surfaces overlap by at least
    'min_overlap' of the field of view, they belong to the same room, and every
    surface either of them stands for stays in the merged position's field of
    view and range. The merged position is the midpoint, looking at the
    centroid of the combined surface points. With a world, the midpoint must
    also be free and in the same room.
    """
    assert all(l.source == GENERATED for l in locations), (
        'Only generated positions can be merged'
    )
    current = list(locations)
    merged = True
    while merged:
        merged = False
        for i in range(len(current)):
            for j in range(i + 1, len(current)):
                a, b = current[i], current[j]
                if math.dist(a.pose[:2], b.pose[:2]) > max_distance:
                    continue
                overlap = (
                    max(0.0, fov - utils.angular_distance(_view_heading(a), _view_heading(b)))
                    / fov
                )
                if overlap < min_overlap:
                    continue
                m = _merge(a, b, fov, max_range, world)
                if m is not None:
                    current[i] = m
                    del current[j]
                    merged = True
                    break
            if merged:
                break
    return current


def positions_to_frame(locations):
    return pandas.DataFrame(
        [
            {
                'id': l.id,
                'x': l.pose[0],
                'y': l.pose[1],
                'yaw': l.pose[2],
                'room': l.room_id,
                'source': l.source,
                'cluster_x': l.source_cluster.centroid[0]
                if l.source_cluster
                else None,
                'cluster_y': l.source_cluster.centroid[1]
                if l.source_cluster
                else None,
            }
            for l in locations
        ],
        columns=[
            'id', 'x', 'y', 'yaw', 'room', 'source', 'cluster_x', 'cluster_y'
        ],
    )


def clusters_to_frame(clusters):
    return pandas.DataFrame(
        [
            {
                'cluster': k,
                'centroid_x': c.centroid[0],
                'centroid_y': c.centroid[1],
                'axis1_x': c.axes[0][0],
                'axis1_y': c.axes[0][1],
                'extent1': c.extents[0],
                'extent2': c.extents[1],
                'points': len(c.points),
            }
            for k, c in enumerate(clusters)
        ]
    )
