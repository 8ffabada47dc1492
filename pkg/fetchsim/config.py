"""
CONFIGURATION
=============

A scenario may carry a "params" object tuning the simulation:

    "params": {
        "duration":  {"translate_speed": 0.3, "segmentation_time": 5.0, ...},
        "noise":     {"p_true_positive": 0.9, "fp_rooms": ["bedroom"], ...},
        "heuristic": {"security_distance": 0.4, "height_band": [0.4, 1.2]},
        "cost":      {"k_pen": 3.0, "prob_transform": "neglog"}
    }

Each section maps onto the fields of the matching dataclass; unknown
sections or fields are schema errors. Values given on the command line win
over the scenario's.
"""

import dataclasses

from fetchsim import errors
from fetchsim import mission
from fetchsim import nav
from fetchsim import percept
from fetchsim import strategy
from fetchsim import tablegeom

SECTIONS = {
    'duration': nav.DurationModel,
    'noise': percept.PerceptionNoise,
    'heuristic': tablegeom.HeuristicParams,
    'cost': strategy.CostParams,
}

# sections as named in MissionConfig
CONFIG_FIELDS = {
    'duration': 'durations',
    'noise': 'noise',
    'heuristic': 'heuristic',
    'cost': 'cost',
}

_TUPLE_FIELDS = ('height_band', 'fp_rooms')


def section(name, values, base=None):
    """Build the dataclass of section 'name' from a mapping, starting from
    'base' (or the defaults)."""
    cls = SECTIONS[name]
    path = 'params.' + name
    if not isinstance(values, dict):
        raise errors.SchemaError(path, 'expected an object')
    known = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise errors.SchemaError(
                '{0}.{1}'.format(path, key), 'unknown parameter'
            )
    changes = {
        k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v
        for k, v in values.items()
    }
    try:
        if base is None:
            return cls(**changes)
        return dataclasses.replace(base, **changes)
    except TypeError as exc:
        raise errors.SchemaError(path, str(exc)) from exc


def from_params(params):
    """{section name: dataclass} for every section of a params object."""
    if not isinstance(params, dict):
        raise errors.SchemaError('params', 'expected an object')
    out = {}
    for name, values in params.items():
        if name not in SECTIONS:
            raise errors.SchemaError(
                'params.' + name, 'unknown section'
            )
        out[name] = section(name, values)
    return out


def mission_config(world, target_object, overrides=None, **options):
    """MissionConfig for 'world' from its params, then 'overrides'
    ({section: {field: value}}), then plain MissionConfig 'options'."""
    changes = {}
    for name, obj in from_params(world.params).items():
        changes[CONFIG_FIELDS[name]] = obj
    for name, values in (overrides or {}).items():
        if name not in SECTIONS:
            raise errors.SchemaError('params.' + name, 'unknown section')
        changes[CONFIG_FIELDS[name]] = section(
            name, values, changes.get(CONFIG_FIELDS[name])
        )
    changes.update(options)
    return mission.MissionConfig(target_object, **changes)
