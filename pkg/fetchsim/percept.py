"""
SIMULATED PERCEPTION
====================

Ground-truth based stand-ins for the robot's perception: semantically
labelled point clouds of the current view, the 360 degree rotation scan,
object recognition and user detection.

Visibility is decided in the plane, at grid resolution. A cell is visible
when its centre lies in the camera sector and the straight line from the
sensor to it crosses no blocking cell. Walls and Unknown cells always block.
Furniture blocks everything behind its footprint, except the furniture's own
surface, which stays visible across its own cells.

Visible surfaces are sampled every `SAMPLE_SPACING` metres: floor cells at
z = 0, furniture tops at their surface height, wall cells as a vertical
column of points up to `WALL_HEIGHT`, objects as a small patch on their
supporting surface. Every emitted point lies within the camera range and
horizontal field of view.
"""

import collections
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas
import shapely

from fetchsim import errors
from fetchsim import nav
from fetchsim import utils
from fetchsim import world as wm

logger = logging.getLogger(__name__)

LABELS = (
    'floor',
    'wall',
    'ceiling',
    'table',
    'chair',
    'cabinet',
    'object',
    'unknown',
)
LABEL_CODE = {name: code for code, name in enumerate(LABELS)}

SAMPLE_SPACING = 0.05  # metres between surface samples
WALL_HEIGHT = 2.4
GRASPABLE_BAND = (0.4, 1.2)  # surface heights reachable by the arm
OBJECT_PATCH = 0.02  # half-size of an object's point patch
SPURIOUS_RANGE = (0.5, 1.5)
SPURIOUS_HEIGHT = 0.75


@dataclass(frozen=True)
class PerceptionNoise:
    """Noise of the simulated perception.

    'fp_rooms' restricts spurious recognitions to the listed rooms (empty
    means anywhere); 'p_user_detect' defaults to 'p_true_positive'.
    """

    label_flip_rate: float = 0.0
    dropout_rate: float = 0.0
    p_true_positive: float = 1.0
    p_false_positive: float = 0.0
    seed: int = 0
    fp_rooms: Tuple[str, ...] = ()
    p_user_detect: Optional[float] = None

    def __post_init__(self):
        for name in (
            'label_flip_rate',
            'dropout_rate',
            'p_true_positive',
            'p_false_positive',
        ):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise errors.InvariantViolation('probability-range', name, p)
        if self.p_user_detect is not None and not 0 <= self.p_user_detect <= 1:
            raise errors.InvariantViolation(
                'probability-range', 'p_user_detect', self.p_user_detect
            )
        object.__setattr__(self, 'fp_rooms', tuple(self.fp_rooms))

    @property
    def user_detection_rate(self):
        if self.p_user_detect is None:
            return self.p_true_positive
        return self.p_user_detect


@dataclass(frozen=True)
class LabeledCloud:
    """'xyz' is an (n, 3) float array, 'labels' the matching label codes."""

    xyz: np.ndarray
    labels: np.ndarray
    sensor_pose: Tuple[float, float, float, float]

    def __len__(self):
        return len(self.labels)

    def label_names(self):
        return [LABELS[c] for c in self.labels]

    def select(self, label):
        return self.xyz[self.labels == LABEL_CODE[label]]


Detection = collections.namedtuple(
    'Detection', 'name pose true_positive object_id'
)


@dataclass(frozen=True)
class RecognitionResult:
    detections: Tuple[Detection, ...] = ()

    def of(self, name):
        return tuple(d for d in self.detections if d.name == name)


def _rng(rng, noise):
    return rng if rng is not None else np.random.default_rng(noise.seed)


def surface_label(furniture, band=GRASPABLE_BAND):
    """Semantic label of a furniture top."""
    if furniture.cls == 'table':
        return 'table'
    if furniture.cls in ('shelf', 'windowsill', 'nightstand'):
        low, high = band
        return 'table' if low <= furniture.surface_height <= high else 'cabinet'
    if furniture.cls == 'cabinet':
        return 'cabinet'
    return 'unknown'


def visible_cells(world, sensor_pose):
    """(rows, cols) of the grid cells visible from the (x, y, yaw) pose."""
    grid = world.grid
    cam = world.agent.camera
    res = grid.resolution
    x, y = sensor_pose[0], sensor_pose[1]
    reach = int(math.ceil(cam.max_range / res)) + 1
    r0, c0 = grid.cell_of((x, y))
    rows, cols = np.mgrid[
        max(r0 - reach, 0) : min(r0 + reach + 1, grid.height),
        max(c0 - reach, 0) : min(c0 + reach + 1, grid.width),
    ]
    rows, cols = rows.ravel(), cols.ravel()
    centers = np.column_stack(((cols + 0.5) * res, (rows + 0.5) * res))
    keep = utils.in_sector(centers, sensor_pose, cam.fov_horizontal, cam.max_range)
    rows, cols, centers = rows[keep], cols[keep], centers[keep]
    if not len(rows):
        return rows, cols

    n = int(math.ceil(2 * cam.max_range / res)) + 1
    frac = np.arange(1, n) / n
    sx = x + frac[None, :] * (centers[:, 0:1] - x)
    sy = y + frac[None, :] * (centers[:, 1:2] - y)
    sr = np.floor(sy / res).astype(int)
    sc = np.floor(sx / res).astype(int)
    inside = (sr >= 0) & (sr < grid.height) & (sc >= 0) & (sc < grid.width)
    sr_c = np.clip(sr, 0, grid.height - 1)
    sc_c = np.clip(sc, 0, grid.width - 1)

    cells = grid.cells[sr_c, sc_c]
    owner = grid.furniture_index[sr_c, sc_c]
    target_owner = grid.furniture_index[rows, cols][:, None]
    same_cell = (sr == rows[:, None]) & (sc == cols[:, None])
    blocking = (~inside) | (cells == wm.UNKNOWN) | (
        (cells == wm.OCCUPIED) & ((owner < 0) | (owner != target_owner))
    )
    blocked = (blocking & ~same_cell).any(axis=1)
    return rows[~blocked], cols[~blocked]


def _lattice(res):
    sub = max(1, int(round(res / SAMPLE_SPACING)))
    offsets = (np.arange(sub) + 0.5) / sub * res
    ox, oy = np.meshgrid(offsets, offsets)
    return ox.ravel(), oy.ravel()


def _ground_truth(world, sensor_pose, band):
    grid = world.grid
    res = grid.resolution
    rows, cols = visible_cells(world, sensor_pose)
    ox, oy = _lattice(res)
    state = grid.cells[rows, cols]
    owner = grid.furniture_index[rows, cols]
    chunks_xyz, chunks_lab = [], []

    # floor and furniture cells share the lattice
    flat = (state == wm.FREE) | (owner >= 0)
    px = ((cols[flat] * res)[:, None] + ox[None, :]).ravel()
    py = ((rows[flat] * res)[:, None] + oy[None, :]).ravel()
    pown = np.repeat(owner[flat], len(ox))
    pz = np.zeros(len(px))
    plab = np.full(len(px), LABEL_CODE['floor'], dtype=np.int8)
    for k, f in enumerate(world.furniture):
        sel = np.nonzero(pown == k)[0]
        if not len(sel):
            continue
        on_top = shapely.intersects_xy(f.shape, px[sel], py[sel])
        pz[sel[on_top]] = f.surface_height
        plab[sel[on_top]] = LABEL_CODE[surface_label(f, band)]
    chunks_xyz.append(np.column_stack((px, py, pz)))
    chunks_lab.append(plab)

    walls = (state == wm.OCCUPIED) & (owner < 0)
    zs = np.arange(SAMPLE_SPACING / 2, WALL_HEIGHT, SAMPLE_SPACING)
    wx = np.repeat((cols[walls] + 0.5) * res, len(zs))
    wy = np.repeat((rows[walls] + 0.5) * res, len(zs))
    wz = np.tile(zs, int(walls.sum()))
    chunks_xyz.append(np.column_stack((wx, wy, wz)))
    chunks_lab.append(np.full(len(wx), LABEL_CODE['wall'], dtype=np.int8))

    seen = set(zip(rows.tolist(), cols.tolist()))
    patch = np.array(
        [(dx, dy) for dx in (-OBJECT_PATCH, 0, OBJECT_PATCH) for dy in (-OBJECT_PATCH, 0, OBJECT_PATCH)]
    )
    for o in world.objects:
        if grid.cell_of(o.pose) in seen:
            pts = np.column_stack(
                (
                    o.pose[0] + patch[:, 0],
                    o.pose[1] + patch[:, 1],
                    np.full(len(patch), o.pose[2] + SAMPLE_SPACING),
                )
            )
            chunks_xyz.append(pts)
            chunks_lab.append(
                np.full(len(pts), LABEL_CODE['object'], dtype=np.int8)
            )

    xyz = np.concatenate(chunks_xyz)
    labels = np.concatenate(chunks_lab)
    cam = world.agent.camera
    keep = utils.in_sector(xyz[:, :2], sensor_pose, cam.fov_horizontal, cam.max_range)
    return xyz[keep], labels[keep]


def sense_semantic(world, sensor_pose, noise, rng=None, band=GRASPABLE_BAND):
    """Labelled point cloud of what the head camera sees from 'sensor_pose'.

    With zero noise this is a pure function of (world, pose).
    """
    if wm.is_occupied(sensor_pose, world):
        raise errors.SensorPoseOccupied(
            'sensor {0} is not on a free cell'.format(tuple(sensor_pose))
        )
    pose = utils.as_pose(sensor_pose)
    xyz, labels = _ground_truth(world, pose, band)
    rng = _rng(rng, noise)
    if noise.dropout_rate > 0:
        keep = rng.random(len(labels)) >= noise.dropout_rate
        xyz, labels = xyz[keep], labels[keep]
    if noise.label_flip_rate > 0:
        flip = rng.random(len(labels)) < noise.label_flip_rate
        shift = rng.integers(1, len(LABELS), len(labels))
        labels = np.where(flip, (labels + shift) % len(LABELS), labels).astype(
            np.int8
        )
    return LabeledCloud(
        xyz, labels, pose + (world.agent.camera.mount_height,)
    )


def rotation_scan(
    world,
    center_pose,
    noise,
    step=30,
    total=360,
    rng=None,
    clock=None,
    model=None,
    concurrent=False,
):
    """Clouds at headings yaw0 + k * step (degrees, counter-clockwise) for
    k = 0 .. total / step - 1.

    When a clock is given the scan's duration is charged to it (category
    'scan') following `nav.scan_duration`.
    """
    if step <= 0 or total % step:
        raise ValueError('total must be a positive multiple of step')
    steps = int(total // step)
    rng = _rng(rng, noise)
    x, y, yaw0 = utils.as_pose(center_pose)
    clouds = [
        sense_semantic(
            world, (x, y, float(utils.wrap_angle(yaw0 + math.radians(k * step)))), noise, rng
        )
        for k in range(steps)
    ]
    if clock is not None:
        clock.advance(
            nav.scan_duration(steps, model or nav.DurationModel(), concurrent),
            'scan',
        )
    logger.debug(
        'rotation scan at (%.2f, %.2f): %d clouds, %d points',
        x,
        y,
        len(clouds),
        sum(len(c) for c in clouds),
    )
    return clouds


def recognize_objects(world, sensor_pose, target, noise, rng=None):
    """One recognition attempt from 'sensor_pose'.

    Every object in view is detected with probability p_true_positive;
    then, with probability p_false_positive, one spurious detection of
    'target' appears at a random pose in view (flagged as false).
    """
    rng = _rng(rng, noise)
    cam = world.agent.camera
    pose = utils.as_pose(sensor_pose)
    rows, cols = visible_cells(world, pose)
    seen = set(zip(rows.tolist(), cols.tolist()))

    detections = []
    for o in world.objects:
        draw = rng.random()
        in_view = utils.in_sector(
            [o.pose[:2]], pose, cam.fov_horizontal, cam.max_range
        )[0] and world.grid.cell_of(o.pose) in seen
        if in_view and draw < noise.p_true_positive:
            detections.append(
                Detection(
                    o.name,
                    (o.pose[0], o.pose[1], o.pose[2], 0.0, 0.0, o.pose[3]),
                    True,
                    o.id,
                )
            )

    draw, u_bearing, u_dist = rng.random(3)
    room_ok = not noise.fp_rooms or wm.room_of(pose, world) in noise.fp_rooms
    if room_ok and draw < noise.p_false_positive:
        bearing = pose[2] + (u_bearing - 0.5) * cam.fov_horizontal
        low, high = SPURIOUS_RANGE
        dist = low + u_dist * (min(high, cam.max_range) - low)
        detections.append(
            Detection(
                target,
                (
                    pose[0] + dist * math.cos(bearing),
                    pose[1] + dist * math.sin(bearing),
                    SPURIOUS_HEIGHT,
                    0.0,
                    0.0,
                    float(utils.wrap_angle(bearing)),
                ),
                False,
                None,
            )
        )
    return RecognitionResult(tuple(detections))


def detect_user(world, robot_room, noise, rng=None):
    """True iff the user is in 'robot_room' and the detector fires."""
    rng = _rng(rng, noise)
    fired = rng.random() < noise.user_detection_rate
    return world.user_room == robot_room and bool(fired)


def clouds_to_frame(clouds):
    """Debug table (view, x, y, z, label) of a list of clouds."""
    frames = [
        pandas.DataFrame(
            {
                'view': i,
                'x': c.xyz[:, 0],
                'y': c.xyz[:, 1],
                'z': c.xyz[:, 2],
                'label': c.label_names(),
            }
        )
        for i, c in enumerate(clouds)
    ]
    if not frames:
        return pandas.DataFrame(columns=['view', 'x', 'y', 'z', 'label'])
    return pandas.concat(frames, ignore_index=True)
