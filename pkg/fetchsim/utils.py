"""
UTILITIES
=========

There are various kinds of utilities in this module:
    1. Angle arithmetic (wrapping, headings, angular distances).
    2. Field-of-view tests for a planar sensor sector, vectorized over points.
    3. Small auxiliary functions shared by the geometric modules.
"""

import math

import numpy as np

EPS = 1e-9


def wrap_angle(theta):
    """Wrap an angle (or array of angles) into [-pi, pi)."""
    return (np.asarray(theta) + math.pi) % (2 * math.pi) - math.pi


def heading(src, dst):
    """Yaw of the vector pointing from 'src' to 'dst'."""
    return math.atan2(dst[1] - src[1], dst[0] - src[0])


def angular_distance(a, b):
    return float(abs(wrap_angle(a - b)))


def in_sector(points, pose, fov, max_range):
    """Boolean mask of the 2D 'points' lying in the sector of half-angle
    fov / 2 and radius 'max_range' around the (x, y, yaw) 'pose'.

    The sensor origin itself is considered visible.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    dx = pts[:, 0] - pose[0]
    dy = pts[:, 1] - pose[1]
    dist = np.hypot(dx, dy)
    bearing = np.abs(wrap_angle(np.arctan2(dy, dx) - pose[2]))
    return (dist <= max_range + EPS) & (
        (bearing <= fov / 2 + EPS) | (dist <= EPS)
    )


def as_pose(values, length=3):
    """Turn a sequence into a float tuple, checking its length."""
    values = tuple(float(v) for v in values)
    assert len(values) == length, 'Bad pose length'
    return values


def pretty_name(identifier):
    """'dining_room' -> 'dining room'."""
    return identifier.replace('_', ' ')
