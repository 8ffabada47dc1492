import unittest

from hypothesis import given, settings
from hypothesis import strategies as hst

from fetchsim import errors
from fetchsim import hsm


def _const(name, outcome, duration=None, inputs=(), outputs=(), category='other'):
    return hsm.StateSpec(
        name,
        (outcome,),
        lambda ud, clock: outcome,
        inputs,
        outputs,
        duration,
        category,
    )


class TestSimClock(unittest.TestCase):
    def test_advance_and_totals(self):
        clock = hsm.SimClock()
        clock.advance(3.0, 'travel')
        clock.advance(2.0, 'scan')
        clock.advance(1.5, 'travel')
        self.assertEqual(clock.now, 6.5)
        self.assertEqual(dict(clock.totals()), {'travel': 4.5, 'scan': 2.0})

    def test_overflow(self):
        clock = hsm.SimClock(limit=10.0)
        clock.advance(9.0)
        with self.assertRaises(errors.ClockOverflow):
            clock.advance(2.0)

    def test_fork_join(self):
        clock = hsm.SimClock(5.0)
        child = clock.fork()
        child.advance(4.0, 'scan')
        clock.join(child)
        self.assertEqual(clock.now, 9.0)
        self.assertEqual(len(clock.ledger), 1)


class TestUserdataView(unittest.TestCase):
    def setUp(self):
        self.data = {'a': 1, 'b': 2}
        self.view = hsm.UserdataView(self.data, {'a'}, {'b'}, 'M/S')

    def test_declared_access(self):
        self.assertEqual(self.view['a'], 1)
        self.view['b'] = 5
        self.assertEqual(self.data['b'], 5)

    def test_undeclared_read(self):
        with self.assertRaises(errors.UndeclaredKeyAccess):
            self.view['b']

    def test_undeclared_write(self):
        with self.assertRaises(errors.UndeclaredKeyAccess):
            self.view['a'] = 3


class TestValidate(unittest.TestCase):
    @staticmethod
    def _kinds(spec):
        return sorted(f.kind for f in hsm.validate(spec))

    def test_valid_sequence(self):
        m = hsm.sequence(
            'M',
            ('done',),
            [_const('A', 'ok'), _const('B', 'ok')],
            {'A': {'ok': 'B'}, 'B': {'ok': 'done'}},
        )
        self.assertTrue(hsm.validate(m).ok)

    def test_unmapped_outcome(self):
        m = hsm.sequence('M', ('done',), [_const('A', 'ok')], {})
        self.assertEqual(self._kinds(m), ['unmapped-outcome'])

    def test_unknown_target(self):
        m = hsm.sequence('M', ('done',), [_const('A', 'ok')], {'A': {'ok': 'Z'}})
        self.assertIn('unknown-target', self._kinds(m))

    def test_unreachable_child(self):
        m = hsm.sequence(
            'M',
            ('done',),
            [_const('A', 'ok'), _const('B', 'ok')],
            {'A': {'ok': 'done'}, 'B': {'ok': 'done'}},
        )
        self.assertEqual(self._kinds(m), ['unreachable-child'])

    def test_empty_container_and_outcomes(self):
        m = hsm.MachineSpec('M', hsm.SEQUENTIAL, ())
        self.assertEqual(self._kinds(m), ['empty-container', 'empty-outcomes'])

    def test_concurrence_needs_default(self):
        m = hsm.concurrence(
            'C', ('done',), [_const('A', 'ok')], {'done': {'A': 'ok'}}, None
        )
        self.assertEqual(self._kinds(m), ['missing-default'])

    def test_conflicting_writes(self):
        m = hsm.concurrence(
            'C',
            ('done',),
            [_const('A', 'ok', outputs=('x',)), _const('B', 'ok', outputs=('x',))],
            {'done': {'A': 'ok', 'B': 'ok'}},
            'done',
        )
        self.assertEqual(self._kinds(m), ['conflicting-writes'])

    def test_undeclared_key(self):
        m = hsm.sequence(
            'M', ('done',), [_const('A', 'ok', inputs=('x',))], {'A': {'ok': 'done'}}
        )
        self.assertEqual(self._kinds(m), ['undeclared-key'])
        m = hsm.sequence(
            'M',
            ('done',),
            [_const('A', 'ok', inputs=('x',))],
            {'A': {'ok': 'done'}},
            input_keys=('x',),
        )
        self.assertTrue(hsm.validate(m).ok)


class TestExecute(unittest.TestCase):
    def test_sequence_trace_and_time(self):
        m = hsm.sequence(
            'M',
            ('done',),
            [_const('A', 'ok', 2.0), _const('B', 'ok', 3.0)],
            {'A': {'ok': 'B'}, 'B': {'ok': 'done'}},
        )
        outcome, _, trace = hsm.execute(m)
        self.assertEqual(outcome, 'done')
        self.assertEqual(
            [tuple(r) for r in trace],
            [(2.0, 'M/A', 'ok'), (5.0, 'M/B', 'ok'), (5.0, 'M', 'done')],
        )

    def test_loop_with_userdata(self):
        def count(ud, clock):
            ud['n'] = ud['n'] + 1
            return 'again' if ud['n'] < 3 else 'stop'

        m = hsm.sequence(
            'M',
            ('done',),
            [hsm.StateSpec('C', ('again', 'stop'), count, ('n',), ('n',), 1.0)],
            {'C': {'again': 'C', 'stop': 'done'}},
            input_keys=('n',),
        )
        outcome, ud, trace = hsm.execute(m, {'n': 0})
        self.assertEqual(ud['n'], 3)
        self.assertEqual(len(trace), 4)
        self.assertEqual(trace.records[-1].sim_time, 3.0)

    def test_concurrence_takes_slowest_child(self):
        def write(key):
            def body(ud, clock):
                ud[key] = key
                return 'ok'

            return body

        c = hsm.concurrence(
            'C',
            ('done', 'partial'),
            [
                hsm.StateSpec('A', ('ok',), write('a'), (), ('a',), 48.0, 'scan'),
                hsm.StateSpec('B', ('ok',), write('b'), (), ('b',), 64.0, 'scan'),
            ],
            {'done': {'A': 'ok', 'B': 'ok'}},
            'partial',
        )
        m = hsm.sequence('M', ('end',), [c], {'C': {'done': 'end', 'partial': 'end'}})
        clock = hsm.SimClock()
        outcome, ud, trace = hsm.execute(m, clock=clock)
        self.assertEqual(outcome, 'end')
        self.assertEqual(clock.now, 64.0)
        self.assertEqual(sum(c.seconds for c in clock.ledger), 64.0)
        self.assertEqual((ud['a'], ud['b']), ('a', 'b'))
        times = [r.sim_time for r in trace]
        self.assertEqual(times, sorted(times))
        self.assertEqual(trace.records[-2].path, 'M/C')

    def test_in_place_edits_stay_in_the_child(self):
        def append(ud, clock):
            ud['items'].append(1)
            return 'ok'

        def count(ud, clock):
            ud['seen'] = len(ud['items'])
            return 'ok'

        def run(owner_outputs):
            c = hsm.concurrence(
                'C',
                ('done',),
                [
                    hsm.StateSpec('A', ('ok',), append, ('items',), owner_outputs),
                    hsm.StateSpec('B', ('ok',), count, ('items',), ('seen',)),
                ],
                {'done': {'A': 'ok', 'B': 'ok'}},
                'done',
            )
            m = hsm.sequence(
                'M', ('end',), [c], {'C': {'done': 'end'}}, input_keys=('items',)
            )
            items = []
            _, ud, _ = hsm.execute(m, {'items': items})
            return items, ud

        items, ud = run(())
        self.assertEqual((items, ud['items'], ud['seen']), ([], [], 0))
        items, ud = run(('items',))
        self.assertEqual((items, ud['items'], ud['seen']), ([], [1], 0))

    def test_write_outside_outputs_raises(self):
        def write(ud, clock):
            ud['other'] = 1
            return 'ok'

        c = hsm.concurrence(
            'C',
            ('done',),
            [
                _const('A', 'ok', 1.0, outputs=('a',)),
                hsm.StateSpec('B', ('ok',), write, (), ('b',)),
            ],
            {'done': {'A': 'ok', 'B': 'ok'}},
            'done',
        )
        m = hsm.sequence('M', ('end',), [c], {'C': {'done': 'end'}})
        with self.assertRaises(errors.UndeclaredKeyAccess):
            hsm.execute(m)

    @given(
        hst.lists(
            hst.lists(hst.integers(1, 400), min_size=1, max_size=3),
            min_size=1,
            max_size=5,
        )
    )
    @settings(deadline=None, max_examples=200)
    def test_concurrent_clock_and_replay(self, branches):
        children = []
        for i, durations in enumerate(branches):
            steps = [
                _const('S{0}'.format(j), 'ok', d / 4.0)
                for j, d in enumerate(durations)
            ]
            transitions = {
                s.name: {'ok': steps[j + 1].name if j + 1 < len(steps) else 'ok'}
                for j, s in enumerate(steps)
            }
            children.append(
                hsm.sequence('B{0}'.format(i), ('ok',), steps, transitions)
            )
        c = hsm.concurrence(
            'C',
            ('done',),
            children,
            {'done': {ch.name: 'ok' for ch in children}},
            'done',
        )
        m = hsm.sequence('M', ('end',), [c], {'C': {'done': 'end'}})

        clock = hsm.SimClock()
        _, _, trace = hsm.execute(m, clock=clock)
        expected = max(sum(d / 4.0 for d in ds) for ds in branches)
        self.assertAlmostEqual(clock.now, expected)
        self.assertAlmostEqual(trace.records[-1].sim_time, expected)
        times = [r.sim_time for r in trace]
        self.assertEqual(times, sorted(times))

        again = hsm.SimClock()
        self.assertEqual(hsm.execute(m, clock=again)[2], trace)
        self.assertEqual(again.ledger, clock.ledger)

    def test_concurrence_default_outcome(self):
        c = hsm.concurrence(
            'C',
            ('done', 'partial'),
            [
                _const('A', 'ok'),
                hsm.StateSpec('B', ('ok', 'no'), lambda ud, clock: 'no'),
            ],
            {'done': {'A': 'ok', 'B': 'ok'}},
            'partial',
        )
        m = hsm.sequence('M', ('end', 'bad'), [c], {'C': {'done': 'end', 'partial': 'bad'}})
        self.assertEqual(hsm.execute(m)[0], 'bad')

    def test_invalid_machine_raises(self):
        m = hsm.sequence('M', ('done',), [_const('A', 'ok')], {})
        with self.assertRaises(errors.InvalidMachine) as cm:
            hsm.execute(m)
        self.assertEqual(len(cm.exception.report), 1)

    def test_undeclared_outcome(self):
        s = hsm.StateSpec('A', ('ok',), lambda ud, clock: 'oops')
        m = hsm.sequence('M', ('done',), [s], {'A': {'ok': 'done'}})
        with self.assertRaises(errors.UnmappedOutcome):
            hsm.execute(m)

    def test_step_budget(self):
        m = hsm.sequence('M', ('done',), [_const('A', 'ok')], {'A': {'ok': 'A'}})
        with self.assertRaises(errors.StepBudgetExceeded):
            hsm.execute(m, step_budget=50)


class TestTraceText(unittest.TestCase):
    @given(
        hst.lists(
            hst.tuples(
                hst.floats(0, 1e6, allow_nan=False),
                hst.from_regex(r'[A-Z]{1,6}(/[A-Z_]{1,6}){0,3}', fullmatch=True),
                hst.from_regex(r'[a-z_]{1,8}', fullmatch=True),
            ),
            max_size=20,
        )
    )
    @settings(deadline=None, max_examples=50)
    def test_parse_inverts_render(self, rows):
        trace = hsm.Trace(tuple(hsm.TraceRecord(*r) for r in rows))
        self.assertEqual(hsm.parse_trace(hsm.trace_to_text(trace)), trace)


class TestMachineFromJson(unittest.TestCase):
    DOC = {
        'name': 'M',
        'outcomes': ['done'],
        'input_keys': ['n'],
        'children': [
            {'name': 'A', 'outcomes': ['ok'], 'duration': 2},
            {
                'name': 'P',
                'kind': 'concurrent',
                'outcomes': ['both'],
                'default_outcome': 'both',
                'outcome_map': {'both': {'X': 'ok', 'Y': 'ok'}},
                'children': [
                    {'name': 'X', 'outcomes': ['ok'], 'duration': 4},
                    {'name': 'Y', 'outcomes': ['ok'], 'duration': 6},
                ],
            },
        ],
        'transitions': {'A': {'ok': 'P'}, 'P': {'both': 'done'}},
    }

    def test_load_and_run(self):
        m = hsm.machine_from_json(self.DOC)
        self.assertTrue(hsm.validate(m).ok)
        clock = hsm.SimClock()
        outcome, _, _ = hsm.execute(m, {'n': 0}, clock)
        self.assertEqual(outcome, 'done')
        self.assertEqual(clock.now, 8.0)

    def test_named_body(self):
        doc = {
            'name': 'M',
            'outcomes': ['done'],
            'children': [{'name': 'A', 'outcomes': ['ok', 'no'], 'body': 'no'}],
            'transitions': {'A': {'ok': 'done', 'no': 'done'}},
        }
        m = hsm.machine_from_json(doc, {'no': lambda ud, clock: 'no'})
        _, _, trace = hsm.execute(m)
        self.assertEqual(trace.records[0].outcome, 'no')

    def test_schema_errors(self):
        with self.assertRaises(errors.SchemaError):
            hsm.machine_from_json('{not json')
        with self.assertRaises(errors.SchemaError) as cm:
            hsm.machine_from_json({'name': 'M', 'outcomes': ['x'], 'children': [{}]})
        self.assertEqual(cm.exception.path, '.children[0]')


if __name__ == '__main__':
    unittest.main()
