"""
WORLD MODEL
===========

The ground truth every other module queries: an occupancy grid, virtual
rooms, furniture with elevated surfaces, the objects lying around, the robot
and the user. A world is loaded once from a scenario document and is never
mutated afterwards.

Scenario documents
------------------

A scenario is a JSON object with the following members:

    grid        {"resolution": metres per cell,
                 "width": cells, "height": cells,
                 "rows": ["#..?", ...],                  (optional)
                 "occupied": [[x0, y0, x1, y1], ...]}    (optional)
    rooms       [{"id", "polygon": [[x, y], ...], "center": [x, y]?}, ...]
    furniture   [{"id", "class", "footprint": [[x, y], ...],
                  "surface_height", "room"}, ...]
    objects     [{"id", "name", "pose": [x, y, z, yaw],
                  "supported_by": furniture id?}, ...]
    robot       {"pose": [x, y, yaw], "camera": {"mount_height",
                 "fov_horizontal" (degrees), "max_range"}?}
    user        {"room": actual room, "last_seen": room?}
    annotations [{"id", "pose": [x, y, yaw], "room"?}, ...]   (optional)
    params      {...}  see `fetchsim.config`                   (optional)

Grid rows use '#' for Occupied, '.' for Free and '?' for Unknown. The first
string is the *top* row of the map (largest y), every string has exactly
'width' characters and there are exactly 'height' strings. When 'rows' is
absent every cell starts Free. Each 'occupied' rectangle then marks the cells
whose centre lies in [x0, x1) x [y0, y1) as Occupied. The map origin is
(0, 0): cell (row r, column c) covers [c * res, (c + 1) * res) x
[r * res, (r + 1) * res), with row 0 at the bottom.

Furniture footprints are rasterized at load time: every cell whose square
overlaps the footprint with positive area becomes Occupied.
"""

import functools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import shapely
from scipy.sparse import coo_matrix
from shapely.geometry import Point, Polygon

from fetchsim import errors
from fetchsim import utils

logger = logging.getLogger(__name__)

FREE, OCCUPIED, UNKNOWN = 0, 1, 2
CELL_CHARS = {'.': FREE, '#': OCCUPIED, '?': UNKNOWN}
CHAR_OF_CELL = {v: k for k, v in CELL_CHARS.items()}

FURNITURE_CLASSES = (
    'table',
    'shelf',
    'cabinet',
    'nightstand',
    'windowsill',
    'other',
)

SQRT2 = math.sqrt(2.0)

# offsets (drow, dcol) of the undirected 8-neighbourhood, each pair once
NEIGHBOURS = ((0, 1), (1, 0), (1, 1), (1, -1))

DEFAULT_MOUNT_HEIGHT = 1.24
DEFAULT_FOV_DEG = 58.0
DEFAULT_MAX_RANGE = 4.0


class OccupancyGrid:
    """Cells are stored bottom row first: cells[row, col]."""

    def __init__(self, resolution, cells, furniture_index=None):
        self.resolution = float(resolution)
        self.cells = np.asarray(cells, dtype=np.int8)
        self.cells.setflags(write=False)
        if furniture_index is None:
            furniture_index = np.full(self.cells.shape, -1, dtype=np.int32)
        self.furniture_index = furniture_index
        self.furniture_index.setflags(write=False)

    @property
    def height(self):
        return self.cells.shape[0]

    @property
    def width(self):
        return self.cells.shape[1]

    def cell_of(self, point):
        """(row, col) of the cell containing 'point'; may be out of bounds."""
        return (
            int(math.floor(point[1] / self.resolution)),
            int(math.floor(point[0] / self.resolution)),
        )

    def cells_of(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return (
            np.floor(pts[:, 1] / self.resolution).astype(int),
            np.floor(pts[:, 0] / self.resolution).astype(int),
        )

    def in_bounds(self, row, col):
        return 0 <= row < self.height and 0 <= col < self.width

    def center_of(self, row, col):
        return ((col + 0.5) * self.resolution, (row + 0.5) * self.resolution)

    def free_mask(self):
        return self.cells == FREE

    def wall_mask(self):
        """Occupied cells that do not come from a furniture footprint."""
        return (self.cells == OCCUPIED) & (self.furniture_index < 0)

    @functools.cached_property
    def neighbour_graph(self):
        """Sparse graph of the free cells: 8-connected, edges weighted by
        their length in metres, no diagonal past an occupied corner."""
        free = self.free_mask()
        h, w = free.shape
        ids = np.arange(h * w).reshape(h, w)
        src, dst, cost = [], [], []
        for dr, dc in NEIGHBOURS:
            r0, r1 = 0, h - dr
            c0, c1 = max(0, -dc), w - max(0, dc)
            a = free[r0:r1, c0:c1]
            b = free[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
            ok = a & b
            if dr and dc:
                ok &= free[r0 + dr : r1 + dr, c0:c1]
                ok &= free[r0:r1, c0 + dc : c1 + dc]
            step = self.resolution * (SQRT2 if dr and dc else 1.0)
            src.append(ids[r0:r1, c0:c1][ok])
            dst.append(ids[r0 + dr : r1 + dr, c0 + dc : c1 + dc][ok])
            cost.append(np.full(int(ok.sum()), step))
        src, dst, cost = np.concatenate(src), np.concatenate(dst), np.concatenate(cost)
        return coo_matrix(
            (
                np.concatenate((cost, cost)),
                (np.concatenate((src, dst)), np.concatenate((dst, src))),
            ),
            shape=(h * w, h * w),
        ).tocsr()

    def rows(self):
        """Render as scenario rows, top row first."""
        return [
            ''.join(CHAR_OF_CELL[int(v)] for v in self.cells[r])
            for r in reversed(range(self.height))
        ]

    def __eq__(self, other):
        return (
            isinstance(other, OccupancyGrid)
            and self.resolution == other.resolution
            and np.array_equal(self.cells, other.cells)
            and np.array_equal(self.furniture_index, other.furniture_index)
        )


@dataclass(frozen=True)
class Room:
    id: str
    polygon: Tuple[Tuple[float, float], ...]
    center: Optional[Tuple[float, float]] = None
    shape: Polygon = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        if self.shape is None:
            object.__setattr__(self, 'shape', Polygon(self.polygon))


@dataclass(frozen=True)
class Furniture:
    id: str
    cls: str
    footprint: Tuple[Tuple[float, float], ...]
    surface_height: float
    room_id: str
    shape: Polygon = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        if self.shape is None:
            object.__setattr__(self, 'shape', Polygon(self.footprint))


@dataclass(frozen=True)
class SceneObject:
    id: str
    name: str
    pose: Tuple[float, float, float, float]
    supporting_furniture: Optional[str] = None


@dataclass(frozen=True)
class CameraModel:
    mount_height: float = DEFAULT_MOUNT_HEIGHT
    fov_horizontal: float = math.radians(DEFAULT_FOV_DEG)
    max_range: float = DEFAULT_MAX_RANGE


@dataclass(frozen=True)
class AgentState:
    robot_pose: Tuple[float, float, float]
    user_room_last_seen: str
    camera: CameraModel = CameraModel()


@dataclass(frozen=True)
class Annotation:
    """A manually placed search position as written in the scenario."""

    id: str
    pose: Tuple[float, float, float]
    room_id: Optional[str] = None


@dataclass(frozen=True)
class WorldModel:
    name: str
    grid: OccupancyGrid
    rooms: Tuple[Room, ...]
    furniture: Tuple[Furniture, ...]
    objects: Tuple[SceneObject, ...]
    agent: AgentState
    user_room: str
    annotations: Tuple[Annotation, ...] = ()
    params: dict = field(default_factory=dict, compare=False)

    def room(self, room_id):
        for r in self.rooms:
            if r.id == room_id:
                return r
        raise KeyError(room_id)

    def furniture_by_id(self, furniture_id):
        for f in self.furniture:
            if f.id == furniture_id:
                return f
        raise KeyError(furniture_id)

    def objects_named(self, name):
        return tuple(o for o in self.objects if o.name == name)

    @property
    def diagonal(self):
        return math.hypot(
            self.grid.width * self.grid.resolution,
            self.grid.height * self.grid.resolution,
        )

    def replace(self, **changes):
        """Return a copy with some fields replaced (the world stays frozen)."""
        values = {
            f: getattr(self, f) for f in self.__dataclass_fields__
        }
        values.update(changes)
        return WorldModel(**values)


def room_of(point, world):
    """Id of the room containing 'point', or None.

    Points within 1e-9 m of a room boundary count as inside; should a point
    touch two rooms the first room in scenario order wins, so the result is
    always a partition.
    """
    return rooms_of([(point[0], point[1])], world)[0]


def rooms_of(points, world):
    """Vectorized `room_of`: an object array of room ids (None outside)."""
    pts = shapely.points(np.asarray(points, dtype=float).reshape(-1, 2))
    out = np.full(len(pts), None, dtype=object)
    for r in reversed(world.rooms):
        out[shapely.distance(r.shape, pts) <= utils.EPS] = r.id
    return out


def is_occupied(pose, world):
    """True iff the containing cell is Occupied, Unknown or off the map."""
    row, col = world.grid.cell_of(pose)
    if not world.grid.in_bounds(row, col):
        return True
    return bool(world.grid.cells[row, col] != FREE)


def room_center(room, world):
    """Designated centre pose of a room: its declared centre or the polygon
    centroid, snapped to the nearest Free cell inside the room."""
    target = room.center or (room.shape.centroid.x, room.shape.centroid.y)
    if not is_occupied(target, world) and room_of(target, world) == room.id:
        return (float(target[0]), float(target[1]))

    grid = world.grid
    rows, cols = np.nonzero(grid.free_mask())
    centers = np.column_stack(
        ((cols + 0.5) * grid.resolution, (rows + 0.5) * grid.resolution)
    )
    inside = rooms_of(centers, world) == room.id
    if not inside.any():
        raise errors.InvariantViolation(
            'room-has-free-cell', room.id, 'no free cell inside the room'
        )
    centers = centers[inside]
    dist = np.hypot(centers[:, 0] - target[0], centers[:, 1] - target[1])
    best = int(np.argmin(dist))
    return (float(centers[best, 0]), float(centers[best, 1]))


def furniture_at(point, world, tolerance=0.05):
    """Furniture whose footprint holds 'point' (within 'tolerance' m)."""
    p = Point(point[0], point[1])
    best, best_dist = None, tolerance
    for f in world.furniture:
        d = f.shape.distance(p)
        if d <= best_dist:
            best, best_dist = f, d
            if d == 0:
                break
    return best


# Loading


def _get(doc, key, path, kind, default=None, required=True):
    if key not in doc:
        if required:
            raise errors.SchemaError(path, 'missing field {0!r}'.format(key))
        return default
    value = doc[key]
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise errors.SchemaError(
            '{0}.{1}'.format(path, key) if path else key,
            'expected {0}'.format(kind.__name__),
        )
    return float(value) if kind is float else value


def _points(value, path, length=2):
    if not isinstance(value, list) or not value:
        raise errors.SchemaError(path, 'expected a non-empty list')
    out = []
    for i, v in enumerate(value):
        if (
            not isinstance(v, list)
            or len(v) != length
            or not all(isinstance(c, (int, float)) for c in v)
        ):
            raise errors.SchemaError(
                '{0}[{1}]'.format(path, i),
                'expected {0} numbers'.format(length),
            )
        out.append(tuple(float(c) for c in v))
    return tuple(out)


def _pose(value, path, length):
    return _points([value], path, length)[0]


def _load_grid(doc):
    resolution = _get(doc, 'resolution', 'grid', float)
    if resolution <= 0:
        raise errors.InvariantViolation('resolution>0', 'grid', resolution)
    rows = _get(doc, 'rows', 'grid', list, required=False)
    width = _get(doc, 'width', 'grid', int, required=rows is None)
    height = _get(doc, 'height', 'grid', int, required=rows is None)

    if rows is not None:
        if not rows:
            raise errors.SchemaError('grid.rows', 'expected at least one row')
        height = len(rows) if height is None else height
        width = len(rows[0]) if width is None else width
        if len(rows) != height:
            raise errors.SchemaError(
                'grid.rows', 'expected {0} rows, got {1}'.format(height, len(rows))
            )
        cells = np.empty((height, width), dtype=np.int8)
        for i, line in enumerate(rows):
            if not isinstance(line, str) or len(line) != width:
                raise errors.SchemaError(
                    'grid.rows[{0}]'.format(i),
                    'expected {0} characters'.format(width),
                )
            try:
                cells[height - 1 - i] = [CELL_CHARS[ch] for ch in line]
            except KeyError as exc:
                raise errors.SchemaError(
                    'grid.rows[{0}]'.format(i),
                    'bad cell character {0}'.format(exc),
                ) from exc
    else:
        if width <= 0 or height <= 0:
            raise errors.SchemaError('grid', 'width and height must be > 0')
        cells = np.full((height, width), FREE, dtype=np.int8)

    for i, rect in enumerate(_get(doc, 'occupied', 'grid', list, [], False)):
        path = 'grid.occupied[{0}]'.format(i)
        x0, y0, x1, y1 = _pose(rect, path, 4)
        xs = (np.arange(width) + 0.5) * resolution
        ys = (np.arange(height) + 0.5) * resolution
        col_mask = (xs >= x0) & (xs < x1)
        row_mask = (ys >= y0) & (ys < y1)
        cells[np.ix_(row_mask, col_mask)] = OCCUPIED
    return resolution, cells


def _rasterize(resolution, cells, furniture):
    """Mark every cell overlapping a footprint as Occupied."""
    index = np.full(cells.shape, -1, dtype=np.int32)
    height, width = cells.shape
    for k, f in enumerate(furniture):
        xmin, ymin, xmax, ymax = f.shape.bounds
        c0 = max(int(math.floor(xmin / resolution)), 0)
        c1 = min(int(math.floor(xmax / resolution)), width - 1)
        r0 = max(int(math.floor(ymin / resolution)), 0)
        r1 = min(int(math.floor(ymax / resolution)), height - 1)
        if c1 < c0 or r1 < r0:
            continue
        rr, cc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        rr, cc = rr.ravel(), cc.ravel()
        boxes = shapely.box(
            cc * resolution,
            rr * resolution,
            (cc + 1) * resolution,
            (rr + 1) * resolution,
        )
        overlap = shapely.area(shapely.intersection(boxes, f.shape)) > 1e-12
        cells[rr[overlap], cc[overlap]] = OCCUPIED
        index[rr[overlap], cc[overlap]] = k
    return cells, index


def _check_simple(shape, invariant, entity):
    if not shape.is_valid or not shape.exterior.is_simple or shape.area <= 0:
        raise errors.InvariantViolation(invariant, entity, 'not a simple polygon')


def from_document(doc):
    """Build and validate a WorldModel from a parsed scenario document."""
    if not isinstance(doc, dict):
        raise errors.SchemaError('', 'expected an object')
    resolution, cells = _load_grid(_get(doc, 'grid', '', dict))

    rooms = []
    for i, rd in enumerate(_get(doc, 'rooms', '', list)):
        path = 'rooms[{0}]'.format(i)
        if not isinstance(rd, dict):
            raise errors.SchemaError(path, 'expected an object')
        center = rd.get('center')
        room = Room(
            _get(rd, 'id', path, str),
            _points(rd.get('polygon'), path + '.polygon'),
            _pose(center, path + '.center', 2) if center is not None else None,
        )
        _check_simple(room.shape, 'room-polygon-simple', room.id)
        rooms.append(room)
    if not rooms:
        raise errors.SchemaError('rooms', 'at least one room is required')
    ids = [r.id for r in rooms]
    if len(set(ids)) != len(ids):
        raise errors.InvariantViolation('unique-room-ids', 'rooms')
    for i, a in enumerate(rooms):
        for b in rooms[i + 1 :]:
            if a.shape.intersection(b.shape).area > utils.EPS:
                raise errors.InvariantViolation(
                    'rooms-disjoint', '{0}/{1}'.format(a.id, b.id)
                )
    room_by_id = {r.id: r for r in rooms}

    furniture = []
    for i, fd in enumerate(_get(doc, 'furniture', '', list, [], False)):
        path = 'furniture[{0}]'.format(i)
        if not isinstance(fd, dict):
            raise errors.SchemaError(path, 'expected an object')
        f = Furniture(
            _get(fd, 'id', path, str),
            _get(fd, 'class', path, str),
            _points(fd.get('footprint'), path + '.footprint'),
            _get(fd, 'surface_height', path, float),
            _get(fd, 'room', path, str),
        )
        if f.cls not in FURNITURE_CLASSES:
            raise errors.SchemaError(
                path + '.class', 'unknown class {0!r}'.format(f.cls)
            )
        _check_simple(f.shape, 'footprint-simple', f.id)
        if f.surface_height < 0:
            raise errors.InvariantViolation('surface_height>=0', f.id)
        if f.room_id not in room_by_id:
            raise errors.InvariantViolation('furniture-room-exists', f.id)
        if not room_by_id[f.room_id].shape.buffer(utils.EPS).covers(f.shape):
            raise errors.InvariantViolation(
                'footprint-inside-room', f.id, f.room_id
            )
        furniture.append(f)
    if len({f.id for f in furniture}) != len(furniture):
        raise errors.InvariantViolation('unique-furniture-ids', 'furniture')
    furniture_by_id = {f.id: f for f in furniture}

    objects = []
    for i, od in enumerate(_get(doc, 'objects', '', list, [], False)):
        path = 'objects[{0}]'.format(i)
        if not isinstance(od, dict):
            raise errors.SchemaError(path, 'expected an object')
        obj = SceneObject(
            _get(od, 'id', path, str),
            _get(od, 'name', path, str),
            _pose(od.get('pose'), path + '.pose', 4),
            _get(od, 'supported_by', path, str, required=False),
        )
        if obj.supporting_furniture is not None:
            f = furniture_by_id.get(obj.supporting_furniture)
            if f is None:
                raise errors.InvariantViolation(
                    'supporting-furniture-exists', obj.id
                )
            if abs(obj.pose[2] - f.surface_height) > 1e-6:
                raise errors.InvariantViolation(
                    'object-on-surface', obj.id, 'z differs from surface height'
                )
            if not f.shape.buffer(utils.EPS).covers(
                Point(obj.pose[0], obj.pose[1])
            ):
                raise errors.InvariantViolation(
                    'object-inside-footprint', obj.id, f.id
                )
        objects.append(obj)

    cells, index = _rasterize(resolution, cells, furniture)
    grid = OccupancyGrid(resolution, cells, index)
    if not grid.free_mask().any():
        raise errors.InvariantViolation('free-cell-exists', 'grid')

    robot = _get(doc, 'robot', '', dict)
    cam = _get(robot, 'camera', 'robot', dict, {}, False)
    camera = CameraModel(
        _get(cam, 'mount_height', 'robot.camera', float, DEFAULT_MOUNT_HEIGHT, False),
        math.radians(
            _get(cam, 'fov_horizontal', 'robot.camera', float, DEFAULT_FOV_DEG, False)
        ),
        _get(cam, 'max_range', 'robot.camera', float, DEFAULT_MAX_RANGE, False),
    )
    user = _get(doc, 'user', '', dict)
    user_room = _get(user, 'room', 'user', str)
    last_seen = _get(user, 'last_seen', 'user', str, user_room, False)
    for rid in (user_room, last_seen):
        if rid not in room_by_id:
            raise errors.InvariantViolation('user-room-exists', rid)

    annotations = []
    for i, ad in enumerate(_get(doc, 'annotations', '', list, [], False)):
        path = 'annotations[{0}]'.format(i)
        if not isinstance(ad, dict):
            raise errors.SchemaError(path, 'expected an object')
        annotations.append(
            Annotation(
                _get(ad, 'id', path, str),
                _pose(ad.get('pose'), path + '.pose', 3),
                _get(ad, 'room', path, str, required=False),
            )
        )

    world = WorldModel(
        name=doc.get('name', 'scenario'),
        grid=grid,
        rooms=tuple(rooms),
        furniture=tuple(furniture),
        objects=tuple(objects),
        agent=AgentState(
            _pose(robot.get('pose'), 'robot.pose', 3), last_seen, camera
        ),
        user_room=user_room,
        annotations=tuple(annotations),
        params=_get(doc, 'params', '', dict, {}, False),
    )
    if is_occupied(world.agent.robot_pose, world):
        raise errors.InvariantViolation(
            'robot-on-free-cell', 'robot', world.agent.robot_pose
        )
    logger.info(
        'loaded scenario %s: %d rooms, %d furniture, %d objects',
        world.name,
        len(rooms),
        len(furniture),
        len(objects),
    )
    return world


def load_scenario(document):
    """Load a scenario from JSON text, a parsed document or a file path."""
    if isinstance(document, dict):
        return from_document(document)
    text = str(document)
    if not text.lstrip().startswith('{'):
        with open(text, encoding='utf-8') as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise errors.SchemaError('', 'not JSON: {0}'.format(exc)) from exc
    return from_document(doc)


def serialize(world):
    """Scenario document for 'world'; loading it yields an equal world."""
    cam = world.agent.camera
    doc = {
        'name': world.name,
        'grid': {
            'resolution': world.grid.resolution,
            'width': world.grid.width,
            'height': world.grid.height,
            'rows': world.grid.rows(),
        },
        'rooms': [
            dict(
                {'id': r.id, 'polygon': [list(p) for p in r.polygon]},
                **({'center': list(r.center)} if r.center else {})
            )
            for r in world.rooms
        ],
        'furniture': [
            {
                'id': f.id,
                'class': f.cls,
                'footprint': [list(p) for p in f.footprint],
                'surface_height': f.surface_height,
                'room': f.room_id,
            }
            for f in world.furniture
        ],
        'objects': [
            dict(
                {'id': o.id, 'name': o.name, 'pose': list(o.pose)},
                **(
                    {'supported_by': o.supporting_furniture}
                    if o.supporting_furniture
                    else {}
                )
            )
            for o in world.objects
        ],
        'robot': {
            'pose': list(world.agent.robot_pose),
            'camera': {
                'mount_height': cam.mount_height,
                'fov_horizontal': math.degrees(cam.fov_horizontal),
                'max_range': cam.max_range,
            },
        },
        'user': {
            'room': world.user_room,
            'last_seen': world.agent.user_room_last_seen,
        },
        'annotations': [
            dict(
                {'id': a.id, 'pose': list(a.pose)},
                **({'room': a.room_id} if a.room_id else {})
            )
            for a in world.annotations
        ],
    }
    if world.params:
        doc['params'] = world.params
    return doc


def place_object(world, object_id, furniture_id, xy=None):
    """Return a world where an object rests on another piece of furniture
    (at the footprint centroid unless 'xy' is given)."""
    f = world.furniture_by_id(furniture_id)
    if xy is None:
        xy = (f.shape.centroid.x, f.shape.centroid.y)
    objects = []
    found = False
    for o in world.objects:
        if o.id == object_id:
            found = True
            o = SceneObject(
                o.id, o.name, (xy[0], xy[1], f.surface_height, o.pose[3]), f.id
            )
        objects.append(o)
    if not found:
        raise KeyError(object_id)
    return world.replace(objects=tuple(objects))


def with_robot_pose(world, pose):
    if is_occupied(pose, world):
        raise errors.InvariantViolation('robot-on-free-cell', 'robot', pose)
    return world.replace(
        agent=AgentState(
            utils.as_pose(pose), world.agent.user_room_last_seen, world.agent.camera
        )
    )
