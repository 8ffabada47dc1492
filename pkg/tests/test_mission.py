import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as hst

from fetchsim import errors
from fetchsim import hsm
from fetchsim import mission
from fetchsim import nav
from fetchsim import percept
from fetchsim import strategy
from fetchsim import world as wm

from tests import scenes

MUG_ON_DESK = {
    'id': 'mug-1',
    'name': 'mug',
    'pose': [2.9, 2.0, 0.75, 0.0],
    'supported_by': 'desk',
}


def _desk_room(annotations=((2.0, 2.0),)):
    doc = scenes.open_room(
        furniture=[scenes.table('desk', 2.5, 1.6, 3.3, 2.4)],
        objects=[MUG_ON_DESK],
        annotations=[
            {'id': 'a{0}'.format(k), 'pose': [x, y, 0.0], 'room': 'room'}
            for k, (x, y) in enumerate(annotations)
        ],
        robot=(1.0, 2.0, 0.0),
    )
    return wm.load_scenario(doc)


def _table_rooms():
    doc = scenes.two_rooms(
        furniture=[scenes.table('t1', 1.0, 0.8, 2.2, 1.4, room='left')],
        objects=[
            {
                'id': 'mug-1',
                'name': 'mug',
                'pose': [1.6, 1.1, 0.75, 0.0],
                'supported_by': 't1',
            }
        ],
    )
    return wm.load_scenario(doc)


def _run(world, config, annotations=None, table=None):
    if annotations is None:
        annotations = strategy.annotations_from_world(world)
    table = table or strategy.ProbabilityTable.uniform([])
    return mission.run_mission(config, world, annotations, table)


class TestMissionConfig(unittest.TestCase):
    def test_checks(self):
        with self.assertRaises(errors.InvariantViolation):
            mission.MissionConfig('mug', strategy='random')
        with self.assertRaises(errors.InvariantViolation):
            mission.MissionConfig('mug', grasp_success_probability=1.5)
        with self.assertRaises(errors.InvariantViolation):
            mission.MissionConfig('mug', scan_step=25)
        with self.assertRaises(errors.InvariantViolation):
            mission.MissionConfig('mug', room_order_policy='random')

    def test_scan_steps(self):
        self.assertEqual(mission.MissionConfig('mug').scan_steps, 12)
        self.assertEqual(mission.MissionConfig('mug', scan_step=90).scan_steps, 4)


class TestBuildMission(unittest.TestCase):
    def setUp(self):
        self.world = scenes.lab()
        self.annotations = strategy.annotations_from_world(self.world)
        self.table = strategy.ProbabilityTable.uniform([])

    def test_every_strategy_validates(self):
        for name in mission.STRATEGIES:
            for concurrent in (False, True):
                config = mission.MissionConfig(
                    'mug', strategy=name, concurrent_scan=concurrent
                )
                machine = mission.build_mission(
                    config, self.world, self.annotations, self.table
                )
                self.assertTrue(hsm.validate(machine).ok, name)
                self.assertEqual(machine.outcomes, (mission.SUCCEEDED, mission.FAILED))

    def test_manual_has_no_scan(self):
        machine = mission.build_mission(
            mission.MissionConfig('mug'), self.world, self.annotations, self.table
        )
        self.assertEqual(
            [c.name for c in machine.children],
            ['BUILD_AGENDA', 'LOCATE', 'INFORM_USER'],
        )

    def test_concurrent_scan_shape(self):
        config = mission.MissionConfig(
            'mug', strategy=mission.GENERATED, concurrent_scan=True
        )
        machine = mission.build_mission(config, self.world, [], self.table)
        scan = machine.child('SCAN')
        self.assertEqual(scan.kind, hsm.CONCURRENT)
        self.assertEqual({c.name for c in scan.children}, {'ROTATE', 'SEGMENT'})
        self.assertEqual(
            {c.declared_duration for c in scan.children}, {48.0, 64.0}
        )

    def test_concurrent_scan_follows_the_duration_model(self):
        model = nav.DurationModel(rotate_step_time=7.0, segmentation_time=2.0)
        config = mission.MissionConfig(
            'mug', strategy=mission.GENERATED, concurrent_scan=True, durations=model
        )
        machine = mission.build_mission(config, self.world, [], self.table)
        durations = {c.name: c.declared_duration for c in machine.child('SCAN').children}
        self.assertEqual(durations, {'ROTATE': 84.0, 'SEGMENT': 86.0})

    def test_sequential_scan_shape(self):
        config = mission.MissionConfig('mug', strategy=mission.GENERATED)
        machine = mission.build_mission(config, self.world, [], self.table)
        scan = machine.child('SCAN')
        self.assertIsInstance(scan, hsm.StateSpec)
        self.assertEqual(scan.declared_duration, 108.0)

    def test_hybrid_can_reuse_rooms(self):
        config = mission.MissionConfig('mug', strategy=mission.HYBRID)
        machine = mission.build_mission(config, self.world, [], self.table)
        self.assertEqual(
            machine.transitions[('SELECT_ROOM', 'known')], 'BUILD_AGENDA'
        )


class TestManualMission(unittest.TestCase):
    def test_minimal_success(self):
        world = _desk_room()
        report = _run(world, mission.MissionConfig('mug'))
        self.assertEqual(report.object_detected, mission.DETECTED)
        self.assertEqual(report.positions_visited, 1)
        self.assertEqual(report.positions_total, 1)
        self.assertTrue(report.grasped)
        self.assertTrue(report.user_informed)
        self.assertEqual(report.outcome, mission.SUCCEEDED)
        self.assertEqual(report.message, 'The mug is on the desk in the room.')
        breakdown = dict(report.breakdown)
        self.assertEqual(breakdown['recognition'], 10.0)
        self.assertEqual(breakdown['grasp'], 25.0)
        self.assertEqual(breakdown['scan'], 0.0)
        self.assertGreaterEqual(breakdown['inform'], 5.0)
        paths = [r.path for r in report.trace]
        self.assertIn('FETCH/LOCATE/PUT_ON_TRAY', paths)
        self.assertEqual(report.trace.records[-1].path, 'FETCH')

    def test_missed_everywhere(self):
        world = _desk_room(((2.0, 2.0), (1.0, 1.0), (4.0, 3.0)))
        config = mission.MissionConfig(
            'mug', noise=percept.PerceptionNoise(p_true_positive=0.0)
        )
        report = _run(world, config)
        self.assertEqual(report.object_detected, mission.NOT_DETECTED)
        self.assertEqual(report.positions_visited, 3)
        self.assertEqual(report.positions_total, 3)
        self.assertEqual(sorted(report.visited_ids), ['a0', 'a1', 'a2'])
        self.assertFalse(report.grasped)
        self.assertEqual(report.message, 'I could not find the mug.')
        self.assertEqual(report.outcome, mission.FAILED)
        self.assertEqual(dict(report.breakdown)['grasp'], 0.0)

    def test_failed_grasp(self):
        config = mission.MissionConfig('mug', grasp_success_probability=0.0)
        report = _run(_desk_room(), config)
        self.assertEqual(report.object_detected, mission.DETECTED)
        self.assertFalse(report.grasped)
        self.assertTrue(report.user_informed)
        self.assertNotIn('FETCH/LOCATE/PUT_ON_TRAY', [r.path for r in report.trace])

    def test_false_detection_is_reported(self):
        world = _desk_room()
        config = mission.MissionConfig(
            'wallet',
            noise=percept.PerceptionNoise(p_true_positive=0.0, p_false_positive=1.0),
        )
        report = _run(world, config)
        self.assertEqual(report.object_detected, mission.FALSE_DETECTION)
        self.assertFalse(report.grasped)
        self.assertTrue(report.user_informed)
        self.assertTrue(report.message.startswith('The wallet is'))

    def test_accounting_and_determinism(self):
        world = scenes.lab()
        config = mission.MissionConfig('asus_box', seed=4)
        a = _run(world, config)
        b = _run(world, config)
        self.assertAlmostEqual(sum(s for _, s in a.breakdown), a.duration, places=6)
        self.assertEqual([c for c, _ in a.breakdown], list(mission.CATEGORIES))
        self.assertEqual(a.to_json(), b.to_json())
        self.assertEqual(a, b)

    def test_user_room_comes_last(self):
        world = scenes.lab()
        for seed in range(3):
            config = mission.MissionConfig(
                'wallet',
                seed=seed,
                noise=percept.PerceptionNoise(p_true_positive=0.0, seed=seed),
            )
            report = _run(world, config)
            self.assertEqual(report.positions_visited, 9)
            self.assertEqual(
                sorted(report.visited_ids[-2:]),
                ['p5_coffee_table', 'p6_living_shelf'],
            )

    def test_learning_over_days(self):
        world = scenes.lab()
        config = mission.MissionConfig(
            'asus_box', cost=strategy.CostParams(prob_transform=strategy.NEGLOG)
        )
        reports = mission.run_days(
            config,
            world,
            strategy.annotations_from_world(world),
            strategy.ProbabilityTable.uniform([]),
            3,
        )
        self.assertEqual(len(reports), 3)
        self.assertGreaterEqual(reports[0].table.count('asus_box', 'p3_dining_table'), 1)
        self.assertEqual(
            reports[-1].table.count('asus_box', 'p3_dining_table'), 3
        )
        self.assertLessEqual(
            reports[-1].positions_visited, reports[0].positions_visited
        )
        for r in reports:
            self.assertEqual(r.object_detected, mission.DETECTED)

    def test_learnt_location_comes_first(self):
        world = scenes.lab()
        annotations = strategy.annotations_from_world(world)
        params = strategy.CostParams(prob_transform=strategy.NEGLOG)
        config = mission.MissionConfig('asus_box', cost=params)
        reports = mission.run_days(
            config, world, annotations, strategy.ProbabilityTable.uniform([]), 5
        )
        table = reports[-1].table
        self.assertEqual(table.count('asus_box', 'p3_dining_table'), 5)

        rng = np.random.default_rng(8)
        rows, cols = np.nonzero(world.grid.free_mask())
        centers = np.column_stack(((cols + 0.5) * 0.1, (rows + 0.5) * 0.1))
        inside = np.array([r is not None for r in wm.rooms_of(centers, world)])
        centers = centers[inside]
        for k in rng.choice(len(centers), size=10, replace=False):
            start = (float(centers[k, 0]), float(centers[k, 1]), 0.0)
            agenda = strategy.build_agenda_manual(world, annotations)
            first = strategy.next_location(
                agenda, 'asus_box', start, world.user_room, table, params, world
            )
            self.assertEqual(first.id, 'p3_dining_table', start)

    def test_row_and_dict(self):
        report = _run(_desk_room(), mission.MissionConfig('mug'))
        fields = report.row().split('\t')
        self.assertEqual(fields[0], 'mug')
        self.assertEqual(fields[1], 'Y')
        self.assertEqual(fields[2], mission.mmss(report.duration))
        self.assertEqual(fields[3], '1')
        doc = report.to_dict()
        self.assertEqual(hsm.parse_trace(doc['trace']), report.trace)


class TestGeneratedMission(unittest.TestCase):
    def setUp(self):
        self.world = _table_rooms()

    def test_scan_and_find(self):
        config = mission.MissionConfig('mug', strategy=mission.GENERATED)
        report = _run(self.world, config, [])
        self.assertEqual(report.object_detected, mission.DETECTED)
        self.assertEqual(report.rooms_scanned, 1)
        self.assertEqual(dict(report.breakdown)['scan'], 108.0)
        self.assertAlmostEqual(sum(s for _, s in report.breakdown), report.duration, places=6)
        self.assertLessEqual(report.positions_visited, report.positions_total)
        self.assertEqual(report.projected_savings(), (44.0, 48.0))
        self.assertEqual(
            report.to_dict()['projected_savings'],
            {'pipeline': 44.0, 'full_overlap': 48.0},
        )

    def test_concurrent_scan_saves_time(self):
        config = mission.MissionConfig('mug', strategy=mission.GENERATED)
        seq = _run(self.world, config, [])
        con = _run(self.world, config.replace(concurrent_scan=True), [])
        self.assertEqual(dict(con.breakdown)['scan'], 64.0)
        self.assertAlmostEqual(seq.duration - con.duration, 44.0, places=6)
        self.assertAlmostEqual(sum(s for _, s in con.breakdown), con.duration, places=6)
        self.assertEqual(con.visited_ids, seq.visited_ids)

    def test_concurrent_scan_with_slow_turns(self):
        model = nav.DurationModel(rotate_step_time=7.0, segmentation_time=2.0)
        config = mission.MissionConfig(
            'mug', strategy=mission.GENERATED, concurrent_scan=True, durations=model
        )
        report = _run(self.world, config, [])
        self.assertEqual(dict(report.breakdown)['scan'], 86.0)
        self.assertEqual(report.projected_savings(), (22.0, 24.0))
        self.assertEqual(
            report.to_dict()['projected_savings'],
            {'pipeline': 22.0, 'full_overlap': 24.0},
        )

    @given(
        hst.integers(0, 2**31 - 1),
        hst.sampled_from([mission.GENERATED, mission.HYBRID]),
        hst.booleans(),
    )
    @settings(deadline=None, max_examples=100)
    def test_same_seed_same_report(self, seed, which, concurrent):
        config = mission.MissionConfig(
            'mug', strategy=which, seed=seed, concurrent_scan=concurrent
        )
        a = _run(self.world, config, [])
        b = _run(self.world, config, [])
        self.assertEqual(a.to_json(), b.to_json())
        self.assertEqual(a.visited_ids, b.visited_ids)
        self.assertAlmostEqual(sum(s for _, s in a.breakdown), a.duration, places=6)

    def test_nothing_found(self):
        config = mission.MissionConfig(
            'mug',
            strategy=mission.GENERATED,
            noise=percept.PerceptionNoise(p_true_positive=0.0),
        )
        report = _run(self.world, config, [])
        self.assertEqual(report.object_detected, mission.NOT_DETECTED)
        self.assertEqual(report.rooms_scanned, 2)
        self.assertEqual(report.positions_visited, report.positions_total)

    def test_hybrid_freezes_rooms(self):
        config = mission.MissionConfig('mug', strategy=mission.HYBRID)
        first, second = mission.run_days(
            config, self.world, [], strategy.ProbabilityTable.uniform([]), 2
        )
        self.assertEqual(first.rooms_scanned, 1)
        self.assertEqual(second.rooms_scanned, 0)
        self.assertTrue(first.frozen)
        self.assertTrue(all(l.id.startswith('gen-left-') for l in first.frozen))
        self.assertEqual(second.object_detected, mission.DETECTED)
        self.assertLess(second.duration, first.duration)
        self.assertTrue(set(second.visited_ids) <= {l.id for l in first.frozen})


class TestInformUser(unittest.TestCase):
    def setUp(self):
        self.world = wm.load_scenario(scenes.two_rooms())
        self.detection = ('mug', (2.0, 2.0, 0.75))

    def test_found_in_last_seen_room(self):
        clock = hsm.SimClock()
        outcome = mission.inform_user(
            self.world, self.detection, percept.PerceptionNoise(), target='mug', clock=clock
        )
        self.assertTrue(outcome.informed)
        self.assertEqual(outcome.rooms_visited, ('right',))
        self.assertEqual(outcome.message, 'The mug is in the left.')
        self.assertEqual(set(dict(clock.totals())), {'inform'})
        self.assertGreater(clock.now, 5.0)

    def test_user_not_found(self):
        outcome = mission.inform_user(
            self.world, None, percept.PerceptionNoise(p_user_detect=0.0), target='mug'
        )
        self.assertFalse(outcome.informed)
        self.assertEqual(outcome.rooms_visited, ('right', 'left'))
        self.assertEqual(outcome.message, 'I could not find the mug.')

    def test_stale_last_seen_room(self):
        doc = scenes.two_rooms()
        doc['user'] = {'room': 'right', 'last_seen': 'left'}
        world = wm.load_scenario(doc)
        outcome = mission.inform_user(world, self.detection, percept.PerceptionNoise())
        self.assertTrue(outcome.informed)
        self.assertEqual(outcome.rooms_visited, ('left', 'right'))

    def test_describe_location(self):
        world = scenes.lab()
        self.assertEqual(
            mission.describe_location((5.8, 5.0, 0.75), world),
            'on the dining table in the dining room',
        )

    def test_mmss(self):
        self.assertEqual(mission.mmss(0), '0:00')
        self.assertEqual(mission.mmss(125.4), '2:05')


if __name__ == '__main__':
    unittest.main()
