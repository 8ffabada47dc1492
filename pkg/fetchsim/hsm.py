"""
HIERARCHICAL STATE MACHINES
===========================

A small executive for hierarchical concurrent state machines that runs on
simulated time instead of the wall clock. Its vocabulary is the usual one:

    - A *state* is a blocking behaviour with a fixed set of outcomes. Its body
      receives a view on the shared userdata and the simulated clock, may
      advance the clock and returns one of its outcomes.
    - A *container* groups states (or other containers). In a sequential
      container the children run one at a time, following the transitions
      declared for each (child, outcome) pair until a transition names one of
      the container's own outcomes. In a concurrent container all children
      start at the same simulated instant; the container takes as long as its
      slowest child and an outcome map turns the joint child outcomes into a
      container outcome.
    - *Userdata* is a key-value blackboard shared by all states. Each state
      declares which keys it reads and which it writes; touching anything
      else raises `UndeclaredKeyAccess`.

Concurrency is simulated: the children of a concurrent container execute one
after the other in the host process, each on a forked clock that starts at
the container's start time. Only the slowest child's time (its "critical
path") is charged to the parent clock, so the overlap is exact and replays
are deterministic. Concurrent children read private copies of the userdata
taken when the container starts and may not write the same keys; the values
of their output keys are merged when all of them have finished, so in-place
edits of a key a child only reads are lost. There is no preemption.

Machines can be built in code with `sequence`/`concurrence`/`StateSpec` or
loaded from a JSON document with `machine_from_json`.
"""

import collections
import collections.abc
import copy
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

from fetchsim import errors

logger = logging.getLogger(__name__)

SEQUENTIAL = 'sequential'
CONCURRENT = 'concurrent'

DEFAULT_STEP_BUDGET = 10000
DEFAULT_CLOCK_LIMIT = 1e7  # simulated seconds

Charge = collections.namedtuple('Charge', 'start seconds category path')
TraceRecord = collections.namedtuple('TraceRecord', 'sim_time path outcome')
Finding = collections.namedtuple('Finding', 'path kind detail')


class SimClock:
    """Simulated clock with a ledger of every charged duration."""

    def __init__(self, now=0.0, limit=DEFAULT_CLOCK_LIMIT):
        self.now = float(now)
        self.limit = limit
        self.path = ''
        self.ledger = []

    def advance(self, seconds, category='other'):
        assert seconds >= 0, 'Simulated time cannot run backwards'
        if self.now + seconds > self.limit:
            raise errors.ClockOverflow(
                'advancing {0:.3f} s from {1:.3f} s passes the limit of '
                '{2:.3f} s'.format(seconds, self.now, self.limit)
            )
        self.ledger.append(Charge(self.now, float(seconds), category, self.path))
        self.now += seconds

    def fork(self):
        return SimClock(self.now, self.limit)

    def join(self, child):
        """Adopt the time and charges of a forked clock."""
        assert child.now >= self.now
        self.ledger.extend(child.ledger)
        self.now = child.now

    def totals(self):
        """Return the charged seconds per category."""
        totals = collections.OrderedDict()
        for charge in self.ledger:
            totals[charge.category] = (
                totals.get(charge.category, 0.0) + charge.seconds
            )
        return totals


class Userdata(collections.abc.MutableMapping):
    """The blackboard shared by the states of one execution."""

    def __init__(self, initial=None):
        self.data = dict(initial or {})

    def __getitem__(self, key):
        return self.data[key]

    def __setitem__(self, key, value):
        self.data[key] = value

    def __delitem__(self, key):
        del self.data[key]

    def __iter__(self):
        return iter(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return 'Userdata({0!r})'.format(self.data)


class UserdataView:
    """What a single state sees of the userdata: declared keys only."""

    def __init__(self, data, input_keys, output_keys, path):
        self._data = data
        self._input_keys = input_keys
        self._output_keys = output_keys
        self._path = path

    def _check_read(self, key):
        if key not in self._input_keys:
            raise errors.UndeclaredKeyAccess(
                '{0} read undeclared key {1!r}'.format(self._path, key)
            )

    def __getitem__(self, key):
        self._check_read(key)
        return self._data[key]

    def get(self, key, default=None):
        self._check_read(key)
        return self._data.get(key, default)

    def __contains__(self, key):
        self._check_read(key)
        return key in self._data

    def __setitem__(self, key, value):
        if key not in self._output_keys:
            raise errors.UndeclaredKeyAccess(
                '{0} wrote undeclared key {1!r}'.format(self._path, key)
            )
        self._data[key] = value


@dataclass(frozen=True)
class StateSpec:
    """A leaf state.

    'body' is called as body(userdata_view, clock) and must return one of
    'outcomes'. When 'declared_duration' is set, that many simulated seconds
    are charged (under 'category') before the body runs.
    """

    name: str
    outcomes: Tuple[str, ...]
    body: Callable = field(compare=False, repr=False)
    input_keys: frozenset = frozenset()
    output_keys: frozenset = frozenset()
    declared_duration: Optional[float] = None
    category: str = 'other'

    def __post_init__(self):
        object.__setattr__(self, 'outcomes', tuple(self.outcomes))
        object.__setattr__(self, 'input_keys', frozenset(self.input_keys))
        object.__setattr__(self, 'output_keys', frozenset(self.output_keys))


@dataclass(frozen=True)
class MachineSpec:
    """A container of states and containers.

    'transitions' maps (child name, child outcome) to the next child name or
    to one of the container 'outcomes' (sequential containers only).
    'outcome_map' is a sequence of (container outcome, {child: outcome})
    rules tried in order, with 'default_outcome' as the fallback (concurrent
    containers only). 'input_keys' lists the userdata keys expected to be
    present before execution starts.
    """

    name: str
    kind: str
    outcomes: Tuple[str, ...]
    children: Tuple = ()
    transitions: dict = field(default_factory=dict)
    outcome_map: Tuple = ()
    default_outcome: Optional[str] = None
    input_keys: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'outcomes', tuple(self.outcomes))
        object.__setattr__(self, 'children', tuple(self.children))
        object.__setattr__(
            self,
            'outcome_map',
            tuple((o, dict(rule)) for o, rule in self.outcome_map),
        )
        object.__setattr__(self, 'input_keys', frozenset(self.input_keys))

    def child(self, name):
        for c in self.children:
            if c.name == name:
                return c
        raise KeyError(name)


def sequence(name, outcomes, children, transitions, input_keys=()):
    """Build a sequential container from smach-like nested transitions,
    i.e. {child: {outcome: target}}."""
    flat = {
        (child, outcome): target
        for child, mapping in transitions.items()
        for outcome, target in mapping.items()
    }
    return MachineSpec(
        name, SEQUENTIAL, outcomes, children, flat, input_keys=input_keys
    )


def concurrence(name, outcomes, children, outcome_map, default_outcome):
    """Build a concurrent container; 'outcome_map' is {outcome: {child:
    outcome}} and is tried in insertion order."""
    return MachineSpec(
        name,
        CONCURRENT,
        outcomes,
        children,
        outcome_map=tuple(outcome_map.items()),
        default_outcome=default_outcome,
    )


@dataclass(frozen=True)
class ValidationReport:
    findings: Tuple[Finding, ...] = ()

    @property
    def ok(self):
        return not self.findings

    def __len__(self):
        return len(self.findings)

    def __iter__(self):
        return iter(self.findings)


@dataclass(frozen=True)
class Trace:
    records: Tuple[TraceRecord, ...] = ()

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _input_keys(node):
    if isinstance(node, StateSpec):
        return set(node.input_keys)
    return set(node.input_keys).union(*(_input_keys(c) for c in node.children))


def _output_keys(node):
    if isinstance(node, StateSpec):
        return set(node.output_keys)
    return set().union(*(_output_keys(c) for c in node.children))


def validate(spec):
    """Return every structural problem of 'spec'; an empty report means the
    machine is executable."""
    findings = []
    _validate_node(spec, spec.name, findings)

    available = set(spec.input_keys) | _output_keys(spec)
    for path, state in _state_paths(spec, spec.name):
        for key in sorted(set(state.input_keys) - available):
            findings.append(
                Finding(path, 'undeclared-key', 'reads {0!r}'.format(key))
            )
    return ValidationReport(tuple(findings))


def _state_paths(node, path):
    if isinstance(node, StateSpec):
        yield path, node
    else:
        for c in node.children:
            yield from _state_paths(c, path + '/' + c.name)


def _validate_node(node, path, findings):
    if not node.outcomes:
        findings.append(Finding(path, 'empty-outcomes', 'no outcomes'))
    dupes = [o for o, n in collections.Counter(node.outcomes).items() if n > 1]
    for o in dupes:
        findings.append(Finding(path, 'duplicate-outcome', o))
    if any(not o for o in node.outcomes):
        findings.append(Finding(path, 'empty-outcomes', 'blank outcome name'))
    if isinstance(node, StateSpec):
        return

    if node.kind not in (SEQUENTIAL, CONCURRENT):
        findings.append(Finding(path, 'bad-kind', node.kind))
        return
    if not node.children:
        findings.append(Finding(path, 'empty-container', 'no children'))
        return

    names = [c.name for c in node.children]
    for n in sorted({n for n in names if names.count(n) > 1}):
        findings.append(Finding(path, 'duplicate-child', n))
    by_name = {c.name: c for c in node.children}

    if node.kind == SEQUENTIAL:
        _validate_sequential(node, path, by_name, findings)
    else:
        _validate_concurrent(node, path, by_name, findings)

    for c in node.children:
        _validate_node(c, path + '/' + c.name, findings)


def _validate_sequential(node, path, by_name, findings):
    for (child, outcome), target in sorted(node.transitions.items()):
        if child not in by_name or outcome not in by_name[child].outcomes:
            findings.append(
                Finding(
                    path,
                    'unknown-transition-source',
                    '{0}:{1}'.format(child, outcome),
                )
            )
        if target not in by_name and target not in node.outcomes:
            findings.append(
                Finding(
                    path,
                    'unknown-target',
                    '{0}:{1} -> {2}'.format(child, outcome, target),
                )
            )
    for c in node.children:
        for outcome in c.outcomes:
            if (c.name, outcome) not in node.transitions:
                findings.append(
                    Finding(
                        path + '/' + c.name,
                        'unmapped-outcome',
                        outcome,
                    )
                )

    reached, frontier = set(), [node.children[0].name]
    while frontier:
        name = frontier.pop()
        if name in reached or name not in by_name:
            continue
        reached.add(name)
        for outcome in by_name[name].outcomes:
            target = node.transitions.get((name, outcome))
            if target in by_name:
                frontier.append(target)
    for c in node.children:
        if c.name not in reached:
            findings.append(
                Finding(path + '/' + c.name, 'unreachable-child', c.name)
            )


def _validate_concurrent(node, path, by_name, findings):
    if node.transitions:
        findings.append(
            Finding(path, 'bad-policy', 'concurrent containers take no transitions')
        )
    if node.default_outcome is None:
        findings.append(Finding(path, 'missing-default', 'no default outcome'))
    elif node.default_outcome not in node.outcomes:
        findings.append(
            Finding(path, 'unknown-target', 'default ' + node.default_outcome)
        )
    for outcome, rule in node.outcome_map:
        if outcome not in node.outcomes:
            findings.append(Finding(path, 'unknown-target', outcome))
        for child, child_outcome in rule.items():
            if child not in by_name or child_outcome not in by_name[child].outcomes:
                findings.append(
                    Finding(
                        path,
                        'bad-policy',
                        '{0}:{1}'.format(child, child_outcome),
                    )
                )

    writes = [(c.name, _output_keys(c)) for c in node.children]
    for i, (a, keys_a) in enumerate(writes):
        for b, keys_b in writes[i + 1 :]:
            for key in sorted(keys_a & keys_b):
                findings.append(
                    Finding(
                        path,
                        'conflicting-writes',
                        '{0} and {1} both write {2!r}'.format(a, b, key),
                    )
                )


class _Execution:
    def __init__(self, step_budget):
        self.step_budget = step_budget
        self.steps = 0
        self.records = []

    def _record(self, clock, path, outcome):
        self.steps += 1
        if self.steps > self.step_budget:
            raise errors.StepBudgetExceeded(
                'more than {0} transitions'.format(self.step_budget)
            )
        self.records.append(TraceRecord(clock.now, path, outcome))
        logger.debug('%.3f %s -> %s', clock.now, path, outcome)

    def run(self, node, data, clock, path):
        if isinstance(node, StateSpec):
            return self._run_state(node, data, clock, path)
        if node.kind == SEQUENTIAL:
            return self._run_sequential(node, data, clock, path)
        return self._run_concurrent(node, data, clock, path)

    def _run_state(self, state, data, clock, path):
        view = UserdataView(data, state.input_keys, state.output_keys, path)
        clock.path = path
        if state.declared_duration:
            clock.advance(state.declared_duration, state.category)
        outcome = state.body(view, clock)
        if outcome not in state.outcomes:
            raise errors.UnmappedOutcome(
                '{0} returned undeclared outcome {1!r}'.format(path, outcome)
            )
        return outcome

    def _run_sequential(self, machine, data, clock, path):
        current = machine.children[0]
        while True:
            child_path = path + '/' + current.name
            outcome = self.run(current, data, clock, child_path)
            self._record(clock, child_path, outcome)
            target = machine.transitions.get((current.name, outcome))
            if target is None:
                raise errors.UnmappedOutcome(
                    '{0} has no transition for {1!r}'.format(child_path, outcome)
                )
            if target in machine.outcomes:
                return target
            current = machine.child(target)

    def _run_concurrent(self, machine, data, clock, path):
        snapshot = dict(data)
        outer_records = self.records
        results, clocks, writes, buffers = {}, [], [], []
        for child in machine.children:
            self.records = []
            # readable values are copied so in-place edits stay in the child
            local = dict(snapshot)
            for k in _input_keys(child) & local.keys():
                local[k] = copy.deepcopy(snapshot[k])
            child_clock = clock.fork()
            child_path = path + '/' + child.name
            outcome = self.run(child, local, child_clock, child_path)
            self._record(child_clock, child_path, outcome)
            results[child.name] = outcome
            clocks.append(child_clock)
            buffers.append(self.records)
            writes.append({k: local[k] for k in _output_keys(child) if k in local})
        self.records = outer_records

        # interleave child records by simulated time; ties keep child order
        merged = sorted(
            (
                (r.sim_time, i, j, r)
                for i, buf in enumerate(buffers)
                for j, r in enumerate(buf)
            ),
            key=lambda t: t[:3],
        )
        self.records.extend(t[3] for t in merged)
        for w in writes:
            data.update(w)

        critical = max(
            range(len(clocks)), key=lambda i: (clocks[i].now, -i)
        )
        clock.join(clocks[critical])

        for outcome, rule in machine.outcome_map:
            if all(results.get(c) == o for c, o in rule.items()):
                return outcome
        return machine.default_outcome


def execute(spec, initial=None, clock=None, step_budget=DEFAULT_STEP_BUDGET):
    """Run 'spec' to completion and return (outcome, userdata, trace).

    The final trace record is the root container's own outcome.
    """
    report = validate(spec)
    if not report.ok:
        raise errors.InvalidMachine(report)
    userdata = Userdata(initial)
    clock = clock if clock is not None else SimClock()
    run = _Execution(step_budget)
    outcome = run.run(spec, userdata.data, clock, spec.name)
    run.records.append(TraceRecord(clock.now, spec.name, outcome))
    return outcome, userdata, Trace(tuple(run.records))


def trace_to_text(trace):
    """Render one '<sim_time> <path> -> <outcome>' line per record."""
    return ''.join(
        '{0!r} {1} -> {2}\n'.format(float(r.sim_time), r.path, r.outcome)
        for r in trace
    )


def parse_trace(text):
    """Inverse of `trace_to_text`."""
    records = []
    for line in text.splitlines():
        if not line.strip():
            continue
        sim_time, rest = line.split(' ', 1)
        path, outcome = rest.rsplit(' -> ', 1)
        records.append(TraceRecord(float(sim_time), path, outcome))
    return Trace(tuple(records))


def _constant_body(outcome):
    def body(userdata, clock):
        return outcome

    return body


def _require(doc, key, path, kind):
    if key not in doc:
        raise errors.SchemaError(path, 'missing field {0!r}'.format(key))
    value = doc[key]
    if not isinstance(value, kind):
        raise errors.SchemaError(
            path + '.' + key, 'expected {0}'.format(kind.__name__)
        )
    return value


def _node_from_json(doc, bodies, path):
    if not isinstance(doc, dict):
        raise errors.SchemaError(path, 'expected an object')
    name = _require(doc, 'name', path, str)
    outcomes = _require(doc, 'outcomes', path, list)
    if 'children' not in doc:
        if 'body' in doc:
            if doc['body'] not in bodies:
                raise errors.SchemaError(
                    path + '.body', 'unknown body {0!r}'.format(doc['body'])
                )
            body = bodies[doc['body']]
        else:
            body = _constant_body(doc.get('returns', outcomes[0] if outcomes else ''))
        duration = doc.get('duration')
        if duration is not None and (
            not isinstance(duration, (int, float)) or duration < 0
        ):
            raise errors.SchemaError(path + '.duration', 'expected seconds >= 0')
        return StateSpec(
            name,
            outcomes,
            body,
            input_keys=doc.get('input_keys', ()),
            output_keys=doc.get('output_keys', ()),
            declared_duration=duration,
            category=doc.get('category', 'other'),
        )

    kind = doc.get('kind', SEQUENTIAL)
    if kind not in (SEQUENTIAL, CONCURRENT):
        raise errors.SchemaError(path + '.kind', 'unknown kind {0!r}'.format(kind))
    children = tuple(
        _node_from_json(c, bodies, '{0}.children[{1}]'.format(path, i))
        for i, c in enumerate(_require(doc, 'children', path, list))
    )
    if kind == SEQUENTIAL:
        return sequence(
            name,
            outcomes,
            children,
            doc.get('transitions', {}),
            input_keys=doc.get('input_keys', ()),
        )
    return MachineSpec(
        name,
        CONCURRENT,
        outcomes,
        children,
        outcome_map=tuple(doc.get('outcome_map', {}).items()),
        default_outcome=doc.get('default_outcome'),
        input_keys=doc.get('input_keys', ()),
    )


def machine_from_json(document, bodies=None):
    """Build a MachineSpec from a JSON document (text or parsed).

    States name their behaviour through 'body', looked up in 'bodies'; a
    state without a body always returns its 'returns' outcome (default: its
    first outcome). Durations are given in simulated seconds.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except ValueError as exc:
            raise errors.SchemaError('', 'not JSON: {0}'.format(exc)) from exc
    return _node_from_json(document, bodies or {}, '')
