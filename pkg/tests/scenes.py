"""Small scenario documents shared by the tests."""

import copy
import os

from fetchsim import world as wm

LAB = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
    'fetchsim',
    'data',
    'lab.json',
)

_LAB_CACHE = {}


def lab():
    """The bundled five room lab (loaded once, worlds are immutable)."""
    if 'lab' not in _LAB_CACHE:
        _LAB_CACHE['lab'] = wm.load_scenario(LAB)
    return _LAB_CACHE['lab']


def border(width, height, thickness=0.1):
    return [
        [0.0, 0.0, width, thickness],
        [0.0, height - thickness, width, height],
        [0.0, 0.0, thickness, height],
        [width - thickness, 0.0, width, height],
    ]


def rect(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


def table(fid, x0, y0, x1, y1, height=0.75, room='room', cls='table'):
    return {
        'id': fid,
        'class': cls,
        'footprint': rect(x0, y0, x1, y1),
        'surface_height': height,
        'room': room,
    }


def open_room(
    width=6.0,
    height=4.0,
    resolution=0.1,
    furniture=(),
    objects=(),
    annotations=(),
    robot=(1.0, 1.0, 0.0),
):
    """A single walled room called 'room'; the user is in it."""
    return {
        'name': 'open',
        'grid': {
            'resolution': resolution,
            'width': int(round(width / resolution)),
            'height': int(round(height / resolution)),
            'occupied': border(width, height),
        },
        'rooms': [
            {'id': 'room', 'polygon': rect(0.1, 0.1, width - 0.1, height - 0.1)}
        ],
        'furniture': list(furniture),
        'objects': list(objects),
        'robot': {'pose': list(robot)},
        'user': {'room': 'room'},
        'annotations': list(annotations),
    }


def two_rooms(furniture=(), objects=(), annotations=(), robot=(1.0, 2.0, 0.0)):
    """8 x 4 m, rooms 'left' and 'right' joined by a door at y 1.5 .. 2.5.

    The user is in 'right'.
    """
    return {
        'name': 'two',
        'grid': {
            'resolution': 0.1,
            'width': 80,
            'height': 40,
            'occupied': border(8.0, 4.0)
            + [[3.9, 0.0, 4.1, 1.5], [3.9, 2.5, 4.1, 4.0]],
        },
        'rooms': [
            {'id': 'left', 'polygon': rect(0.1, 0.1, 3.9, 3.9)},
            {'id': 'right', 'polygon': rect(4.1, 0.1, 7.9, 3.9)},
        ],
        'furniture': list(furniture),
        'objects': list(objects),
        'robot': {'pose': list(robot)},
        'user': {'room': 'right', 'last_seen': 'right'},
        'annotations': list(annotations),
    }


def with_changes(doc, **changes):
    out = copy.deepcopy(doc)
    out.update(changes)
    return out
