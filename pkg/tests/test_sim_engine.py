"""Tests the discrete-event engine, the service / security samplers, the
random substreams and multi-seed replication."""
import os
import tempfile
import unittest
from collections import deque

import numpy as np

from port_microsim_toolkit import load_scenario, default_dover_scenario, run, replicate
from port_microsim_toolkit.metrics import lane_occupancy
from port_microsim_toolkit.scenario import ServiceModel
from port_microsim_toolkit.sim_engine.engine import CorridorSimulator, SegmentState, admit_or_stack
from port_microsim_toolkit.sim_engine.results import EventKind, frame_to_text
from port_microsim_toolkit.sim_engine.rng_streams import RngStreams
from port_microsim_toolkit.sim_engine.service import (sample_service_times, sample_service_time,
        security_delays, security_check)



class TestSingleRuns(unittest.TestCase):


    def test_zero_demand(self):
        result = run(load_scenario(corridor_document(demand="demand:\n  counts:\n    RHV: []\n")),
                seed=4)
        self.assertEqual(result.n_scheduled, 0)
        self.assertEqual(result.n_exited, 0)
        self.assertEqual(result.policy, "none")
        self.assertEqual(result.lane_tallies("weighbridge").tolist(), [0, 0, 0, 0, 0])
        self.assertTrue(lane_occupancy(result, "weighbridge").empty)
        self.assertEqual(len(result.trips_frame()), 0)
        result.check_conservation()


    def test_hand_trace_of_one_vehicle(self):
        """30 s + 10 s service + 40 s + 10 s service to the weighbridge exit,
        then 20 s to the sink."""
        result = run(load_scenario(corridor_document()), seed=0)
        self.assertEqual(result.n_exited, 1)
        start = result.admitted[0]
        self.assertEqual(start, result.scheduled[0])
        self.assertAlmostEqual(result.passage_times("passport.exit")[0] - start, 40., places=9)
        self.assertAlmostEqual(result.passage_times("weighbridge.exit")[0] - start, 90., places=9)
        self.assertAlmostEqual(result.exited[0] - start, 110., places=9)
        kinds = [event.kind for event in result.events]
        self.assertEqual(kinds, [EventKind.ARRIVAL, EventKind.JOIN_QUEUE, EventKind.BEGIN_SERVICE,
            EventKind.END_SERVICE, EventKind.EXIT, EventKind.JOIN_QUEUE, EventKind.BEGIN_SERVICE,
            EventKind.END_SERVICE, EventKind.EXIT, EventKind.EXIT])
        self.assertEqual([event.seq for event in result.events], list(range(10)))


    def test_same_seed_gives_identical_exports(self):
        cfg = default_dover_scenario()
        with tempfile.TemporaryDirectory() as tmpdir:
            texts = []
            for attempt in range(2):
                result = run(cfg, "agent", seed=7)
                trips = os.path.join(tmpdir, f"trips{attempt}.csv")
                queues = os.path.join(tmpdir, f"queues{attempt}.csv")
                result.write_trips_csv(trips)
                result.write_queue_csv(queues)
                texts.append((read_bytes(trips), read_bytes(queues),
                    frame_to_text(result.events_frame()), frame_to_text(result.trips_frame())))
            self.assertEqual(texts[0], texts[1])
        other = run(cfg, "agent", seed=8)
        self.assertNotEqual(frame_to_text(other.trips_frame()), texts[0][3])


    def test_paired_streams_across_policies(self):
        """The arrival and service streams do not depend on the policy."""
        cfg = default_dover_scenario().with_flow_rate(600)
        results = [run(cfg, policy, seed=3, record_events=False)
                for policy in ["prob-avg", "prob-flow", "agent"]]
        first = results[0].stations["weighbridge"]
        served = ~np.isnan(first.begin)
        self.assertEqual(int(served.sum()), int((results[0].vehicle_classes == "RHV").sum()))
        for result in results[1:]:
            self.assertTrue(np.array_equal(result.scheduled, results[0].scheduled))
            self.assertTrue(np.array_equal(result.vehicle_classes, results[0].vehicle_classes))
            record = result.stations["weighbridge"]
            self.assertTrue(np.array_equal(~np.isnan(record.begin), served))
            # Same vehicle, same weighbridge service time, whatever lane it took.
            self.assertTrue(np.allclose(record.end[served] - record.begin[served],
                first.end[served] - first.begin[served], rtol=0., atol=1e-6))
        self.assertFalse(np.array_equal(results[0].stations["weighbridge"].lane,
            results[2].stations["weighbridge"].lane))
        self.assertEqual([r.policy for r in results], ["prob-avg", "prob-flow", "agent"])


    def test_invariants_on_dover(self):
        """Conservation, FIFO per lane and the free-flow lower bound hold
        under every policy."""
        cfg = default_dover_scenario()
        free_flow = cfg.topology.free_flow_time()
        for policy in ["prob-avg", "prob-flow", "agent"]:
            result = run(cfg, policy, seed=11, record_events=False)
            result.check_conservation()
            self.assertEqual(result.n_exited, result.n_scheduled)
            trips = result.exited - result.admitted
            self.assertTrue(np.all(trips >= free_flow - 1e-9))
            for station, record in result.stations.items():
                self.assert_fifo(record, shared=cfg.topology.station(station).queue_mode == "shared")
            tallies = result.lane_tallies("weighbridge")
            self.assertEqual(int(tallies.sum()), int((result.vehicle_classes == "RHV").sum()))
            self.assertTrue(np.all(result.stations["weighbridge"].lane[
                result.vehicle_classes == "Tourist"] == 0))


    def assert_fifo(self, record, shared: bool):
        lanes = [None] if shared else range(1, record.lane_count + 1)
        for lane in lanes:
            served = ~np.isnan(record.begin)
            if lane is not None:
                served &= record.lane == lane
            order = np.lexsort((record.begin[served], record.join[served]))
            self.assertTrue(np.all(np.diff(record.begin[served][order]) >= 0))


    def test_undrained_run_stops_at_horizon(self):
        cfg = default_dover_scenario().with_flow_rate(800)
        result = run(cfg, "prob-avg", seed=2, record_events=False, drain=False)
        self.assertFalse(result.drained)
        self.assertLessEqual(result.end_time, cfg.horizon)
        self.assertGreater(result.n_in_system_at_end, 0)
        result.check_conservation()
        self.assertEqual(result.sample_times[-1], cfg.horizon)


    def test_queue_samples(self):
        cfg = default_dover_scenario()
        result = run(cfg, "agent", seed=5, record_events=False)
        self.assertEqual(result.sample_times[0], 0.)
        self.assertTrue(np.allclose(np.diff(result.sample_times), cfg.sample_interval))
        self.assertEqual(result.queue_series["weighbridge"].shape,
                (result.sample_times.shape[0], 6))
        self.assertTrue(np.all(result.queue_series["weighbridge"] >= -1e-9))
        frame = result.queue_frame()
        self.assertEqual(list(frame.columns), ["time_s", "station", "lane", "queue_m"])
        self.assertEqual(result.events, [])


    def test_spillback_drains(self):
        """A downstream link holding one vehicle throttles the corridor
        without losing anybody."""
        text = corridor_document(demand="demand:\n  counts:\n    RHV: [12, 12]\n",
                exit_capacity=20)
        result = run(load_scenario(text), seed=9)
        self.assertEqual(result.n_exited, 24)
        exits = np.sort(result.exited)
        # One vehicle on the 20 s exit link at a time.
        self.assertTrue(np.all(np.diff(exits) >= 20. - 1e-9))


    def test_flow_rate_window(self):
        cfg = default_dover_scenario().with_flow_rate(800)
        simulator = CorridorSimulator(cfg, "prob-flow", 1, record_events=False)
        self.assertAlmostEqual(simulator.flow_rate(1800.), 800., delta=120.)
        self.assertEqual(simulator.flow_rate(0.), 0.)



class TestAdmission(unittest.TestCase):


    def test_admit_or_stack(self):
        stack = deque()
        segment = SegmentState("entry", 100., 30.)
        self.assertTrue(admit_or_stack(0, 17., segment, stack))
        segment.occupied = 85.
        self.assertFalse(admit_or_stack(1, 17., segment, stack))
        self.assertEqual(list(stack), [1])
        segment.occupied = 0.
        # Nobody overtakes a stacked vehicle.
        self.assertFalse(admit_or_stack(2, 6., segment, stack))
        self.assertEqual(list(stack), [1, 2])


    def test_stacked_vehicles_are_admitted_in_order(self):
        text = corridor_document(demand="demand:\n  counts:\n    RHV: [10]\n", entry_capacity=20)
        result = run(load_scenario(text), seed=6)
        self.assertEqual(result.n_exited, 10)
        self.assertTrue(np.all(np.diff(result.admitted) >= 0))
        self.assertTrue(np.all(result.admitted >= result.scheduled))
        stacked = [event.vehicle_id for event in result.events
                if event.kind == EventKind.ADMIT_FROM_STACK]
        self.assertGreater(len(stacked), 0)
        self.assertEqual(stacked, sorted(stacked))
        self.assertGreater(result.stack_series.max(), 0)



class TestSampling(unittest.TestCase):


    def test_normal_truncated(self):
        samples = sample_service_times(ServiceModel("NormalTruncated", 20., 2.),
                np.random.default_rng(1), 100000)
        self.assertTrue(np.all(samples > 0))
        self.assertAlmostEqual(samples.mean(), 20., delta=0.05)
        self.assertAlmostEqual(samples.std(), 2., delta=0.05)


    def test_truncation_keeps_samples_positive(self):
        samples = sample_service_times(ServiceModel("NormalTruncated", 1., 3.),
                np.random.default_rng(2), 10000)
        self.assertTrue(np.all(samples > 0))


    def test_exponential(self):
        samples = sample_service_times(ServiceModel("Exponential", 12.),
                np.random.default_rng(3), 100000)
        self.assertTrue(np.all(samples > 0))
        self.assertAlmostEqual(samples.mean(), 12., delta=0.15)


    def test_deterministic(self):
        model = ServiceModel("Deterministic", 10.)
        rng = np.random.default_rng(4)
        for _ in range(5):
            self.assertEqual(sample_service_time(model, rng), 10.)


    def test_security_checks(self):
        rng = np.random.default_rng(5)
        never = ServiceModel("Deterministic", 10., 0., 0., 60.)
        always = ServiceModel("Deterministic", 10., 0., 1., 60.)
        self.assertTrue(np.all(security_delays(never, rng, 1000) == 0.))
        self.assertTrue(np.all(security_delays(always, rng, 1000) == 60.))
        self.assertEqual(security_check(always, rng), 60.)

        n_vehicles = 100000
        delays = security_delays(ServiceModel("Deterministic", 10., 0., 0.1, 60.),
                np.random.default_rng(6), n_vehicles)
        self.assertTrue(set(np.unique(delays)).issubset({0., 60.}))
        self.assertLessEqual(abs((delays > 0).mean() - 0.1), 3 * np.sqrt(0.1 * 0.9 / n_vehicles))


    def test_security_draws_keep_streams_aligned(self):
        """One uniform per vehicle whatever the probability."""
        first, second = np.random.default_rng(7), np.random.default_rng(7)
        security_delays(ServiceModel("Deterministic", 10., 0., 0., 60.), first, 50)
        security_delays(ServiceModel("Deterministic", 10., 0., 1., 60.), second, 50)
        self.assertEqual(first.random(), second.random())


    def test_rng_streams(self):
        self.assertEqual(RngStreams(5).arrivals().random(3).tolist(),
                RngStreams(5).arrivals().random(3).tolist())
        self.assertNotEqual(RngStreams(5).arrivals().random(3).tolist(),
                RngStreams(5).routing().random(3).tolist())
        self.assertNotEqual(RngStreams(5).service(0).random(3).tolist(),
                RngStreams(5).service(1).random(3).tolist())
        self.assertNotEqual(RngStreams(5).arrivals().random(3).tolist(),
                RngStreams(6).arrivals().random(3).tolist())
        with self.assertRaises(ValueError):
            RngStreams(-1)
        with self.assertRaises(ValueError):
            RngStreams(1).generator("weather")



class TestReplication(unittest.TestCase):


    def test_seed_order_and_duplicates(self):
        cfg = load_scenario(corridor_document(demand="demand:\n  rates: {RHV: 400}\n"
            "  duration: 1800\n"))
        reps = replicate(cfg, "agent", [3, 1, 3])
        self.assertEqual(len(reps), 3)
        self.assertEqual([r.seed for r in reps], [3, 1, 3])
        self.assertEqual(reps.seeds, (3, 1, 3))
        self.assertEqual(frame_to_text(reps[0].trips_frame()), frame_to_text(reps[2].trips_frame()))
        single = run(cfg, "agent", 1, record_events=False)
        self.assertEqual(frame_to_text(reps[1].trips_frame()), frame_to_text(single.trips_frame()))
        with self.assertRaises(ValueError):
            replicate(cfg, "agent", [])
        with self.assertRaises(ValueError):
            replicate(cfg, "agent", [1], jobs=0)


    def test_parallel_equals_sequential(self):
        cfg = default_dover_scenario().with_flow_rate(300)
        sequential = replicate(cfg, "prob-avg", [1, 2, 3, 4])
        parallel = replicate(cfg, "prob-avg", [1, 2, 3, 4], jobs=2)
        for first, second in zip(sequential, parallel):
            self.assertEqual(frame_to_text(first.trips_frame()), frame_to_text(second.trips_frame()))
            self.assertEqual(frame_to_text(first.queue_frame()), frame_to_text(second.queue_frame()))
        self.assertTrue(np.array_equal(sequential.pooled_lane_tallies("weighbridge"),
            parallel.pooled_lane_tallies("weighbridge")))



def corridor_document(demand = "demand:\n  counts:\n    RHV: [1]\n", entry_capacity = 500,
        exit_capacity = 500):
    """source -> passport (2 lanes) -> weighbridge (5 lanes) -> sink with
    Deterministic(10) service and 30 / 40 / 20 s links."""
    return ("name: trace\n"
            "warmup: 0\n"
            "stations:\n"
            "  - id: passport\n"
            "    kind: PassportCheck\n"
            "    lane_count: 2\n"
            "    approach_capacity: 40\n"
            "    service: {distribution: Deterministic, value: 10}\n"
            "  - id: weighbridge\n"
            "    kind: Weighbridge\n"
            "    lane_count: 5\n"
            "    approach_capacity: 40\n"
            "    service: {distribution: Deterministic, value: 10}\n"
            "segments:\n"
            f"  - {{id: entry, from: source, to: passport, free_flow_time: 30, "
            f"storage_capacity: {entry_capacity}}}\n"
            "  - {id: approach, from: passport, to: weighbridge, free_flow_time: 40, "
            "storage_capacity: 500}\n"
            f"  - {{id: exit, from: weighbridge, to: sink, free_flow_time: 20, "
            f"storage_capacity: {exit_capacity}}}\n"
            f"{demand}")


def read_bytes(path):
    with open(path, "rb") as fhandle:
        return fhandle.read()


if __name__ == "__main__":
    unittest.main()
