"""Tests partial detection, trip matching and the trip-source comparison."""
import dataclasses
import unittest

import numpy as np

from port_microsim_toolkit import default_validation_scenario, run_validation
from port_microsim_toolkit.detector_validation.detection import (DetectionLog, assign_devices,
        simulate_detections, dedupe, match_trips, camera_matches, expected_detections,
        expected_matches)
from port_microsim_toolkit.detector_validation.trip_sources import (trip_pdf, summary_sample,
        compare_trip_sources, REFERENCE_SUMMARIES, SIMULATION, BLUETOOTH, CAMERA)
from port_microsim_toolkit.scenario import DetectorSite
from port_microsim_toolkit.sim_engine.results import RunResult, StationRecord


ONE_DEVICE = {1: 1.0}



class TestThinning(unittest.TestCase):


    def test_detection_and_match_counts(self):
        """10,000 vehicles past sites with p1 = .663 and p2 = .104; the log
        sizes and match count stay within 3 sigma of their expectations."""
        n_vehicles, p1, p2 = 10000, 0.663, 0.104
        result = passage_result(n_vehicles, trip=300.)
        rng = np.random.default_rng(5)
        devices = assign_devices(n_vehicles, ONE_DEVICE, rng)
        first = DetectorSite("site1", "source", p1, ONE_DEVICE)
        second = DetectorSite("site2", "sink", p2, ONE_DEVICE)
        log1 = simulate_detections(result, first, rng, devices)
        log2 = simulate_detections(result, second, rng, devices)

        for log, p in [(log1, p1), (log2, p2)]:
            expected = expected_detections(n_vehicles, p, ONE_DEVICE)
            self.assertLessEqual(abs(len(log) - expected), 3 * np.sqrt(n_vehicles * p * (1 - p)))

        matches = match_trips(dedupe(log1, 5.), dedupe(log2, 5.), 3600.)
        p_both = p1 * p2
        self.assertAlmostEqual(expected_matches(n_vehicles, p1, p2, ONE_DEVICE),
                n_vehicles * p_both)
        self.assertLessEqual(abs(len(matches) - n_vehicles * p_both),
                3 * np.sqrt(n_vehicles * p_both * (1 - p_both)))
        ground_truth = result.exited - result.admitted
        np.testing.assert_array_equal(matches.trip_times, ground_truth[matches.vehicle_ids])


    def test_devices_follow_the_vehicle(self):
        result = passage_result(50, trip=120.)
        devices = assign_devices(50, {2: 1.0}, np.random.default_rng(0))
        site = DetectorSite("site1", "source", 1., {2: 1.0})
        log = simulate_detections(result, site, np.random.default_rng(1), devices)
        self.assertEqual(len(log), 100)
        np.testing.assert_array_equal(log.device_ids // 2, log.vehicle_ids)
        self.assertEqual(len(dedupe(log, 5.)), 50)
        self.assertEqual(len(dedupe(log, 0.)), 100)
        self.assertTrue(np.all(assign_devices(20, {0: 1.0}, np.random.default_rng(0)) == 0))


    def test_unfinished_vehicles_are_not_detected(self):
        result = passage_result(10, trip=60.)
        result.exited[5:] = np.nan
        site = DetectorSite("site2", "sink", 1., ONE_DEVICE)
        log = simulate_detections(result, site, np.random.default_rng(0))
        self.assertEqual(sorted(log.vehicle_ids.tolist()), [0, 1, 2, 3, 4])
        log = simulate_detections(result, site, np.random.default_rng(0), observe_from=63.)
        self.assertEqual(sorted(log.vehicle_ids.tolist()), [3, 4])
        with self.assertRaises(ValueError):
            simulate_detections(result, DetectorSite("x", "gate.exit", 1.), np.random.default_rng(0))


    def test_camera_subset(self):
        result = passage_result(1000, trip=200.)
        camera = camera_matches(result, "source", "sink", 1., np.random.default_rng(0))
        self.assertEqual(len(camera), 1000)
        self.assertTrue(np.all(camera.trip_times == 200.))
        camera = camera_matches(result, "source", "sink", 0.1, np.random.default_rng(0))
        self.assertLessEqual(abs(len(camera) - 100), 3 * np.sqrt(1000 * 0.1 * 0.9))
        with self.assertRaises(ValueError):
            camera_matches(result, "source", "sink", 0., np.random.default_rng(0))



class TestDedupe(unittest.TestCase):


    def test_examples(self):
        # Two devices of one vehicle one second apart.
        log = DetectionLog("site1", [0, 1], [0, 0], [10., 11.])
        kept = dedupe(log, 5.)
        self.assertEqual(kept.device_ids.tolist(), [0])
        self.assertEqual(kept.timestamps.tolist(), [10.])
        # Different vehicles are never merged.
        log = DetectionLog("site1", [0, 2], [0, 1], [10., 11.])
        self.assertEqual(len(dedupe(log, 5.)), 2)
        self.assertEqual(len(dedupe(DetectionLog.empty("site1"), 5.)), 0)
        with self.assertRaises(ValueError):
            dedupe(log, -1.)


    def test_idempotent(self):
        rng = np.random.default_rng(2)
        vehicles = rng.integers(0, 40, 300)
        log = DetectionLog("site1", vehicles * 2 + rng.integers(0, 2, 300), vehicles,
                np.round(rng.uniform(0., 600., 300), 1))
        once = dedupe(log, 5.)
        self.assertTrue(dedupe(once, 5.).same_as(once))
        self.assertLessEqual(len(once), len(log))



class TestMatching(unittest.TestCase):


    def test_disjoint_devices(self):
        log1 = DetectionLog("site1", [0, 2, 4], [0, 1, 2], [0., 10., 20.])
        log2 = DetectionLog("site2", [6, 8], [3, 4], [300., 310.])
        self.assertEqual(len(match_trips(log1, log2, 3600.)), 0)


    def test_time_order_and_limits(self):
        log1 = DetectionLog("site1", [0, 2, 4], [0, 1, 2], [100., 100., 100.])
        log2 = DetectionLog("site2", [0, 2, 4], [0, 1, 2], [50., 4000., 400.])
        matches = match_trips(log1, log2, 3600.)
        self.assertEqual(matches.device_ids.tolist(), [4])
        self.assertEqual(matches.trip_times.tolist(), [300.])
        with self.assertRaises(ValueError):
            match_trips(log1, log1, 3600.)
        with self.assertRaises(ValueError):
            match_trips(log1, log2, 0.)


    def test_earliest_pair_per_device(self):
        log1 = DetectionLog("site1", [0, 0], [0, 0], [100., 200.])
        log2 = DetectionLog("site2", [0], [0], [500.])
        matches = match_trips(log1, log2, 3600.)
        self.assertEqual(len(matches), 1)
        self.assertEqual(matches.t1.tolist(), [100.])


    def test_shared_devices(self):
        """796 detections at the first site and 125 at the second, 104 of
        them from shared devices."""
        ids1 = np.arange(796)
        ids2 = np.concatenate([np.arange(104), 1000 + np.arange(21)])
        log1 = DetectionLog("site1", ids1, ids1, ids1 * 5.)
        log2 = DetectionLog("site2", ids2, ids2, ids2 * 5. + 300.)
        matches = match_trips(log1, log2, 3600.)
        self.assertEqual(len(matches), 104)
        self.assertEqual(matches.device_ids.tolist(), list(range(104)))
        self.assertTrue(np.all(matches.trip_times == 300.))



class TestTripDistributions(unittest.TestCase):


    def test_trip_pdf(self):
        pdf = trip_pdf([300., 300.], 60.)
        self.assertEqual(pdf.values.tolist(), [1.])
        self.assertEqual(pdf.starts.tolist(), [300.])
        pdf = trip_pdf([100., 200., 300.], 100.)
        np.testing.assert_allclose(pdf.values, [1 / 3, 1 / 3, 1 / 3])
        self.assertAlmostEqual(pdf.total(), 1.)
        self.assertEqual(len(trip_pdf([], 60.)), 0)
        with self.assertRaises(ValueError):
            trip_pdf([100.], 0.)


    def test_summary_samples(self):
        for source, (n, mean, median, sd, maximum) in REFERENCE_SUMMARIES.items():
            sample = summary_sample(n, mean, median, sd, maximum)
            self.assertEqual(sample.shape[0], n, source)
            self.assertAlmostEqual(sample.mean(), mean, places=6)
            self.assertAlmostEqual(float(np.median(sample)), median, places=6)
            self.assertAlmostEqual(sample.std(), sd, places=6)
            self.assertAlmostEqual(sample.max(), maximum, places=6)
            self.assertGreater(sample.min(), 0.)
        with self.assertRaises(ValueError):
            summary_sample(7, 300., 290., 100., 700.)


    def test_ks_comparison(self):
        sample = np.random.default_rng(3).gamma(9., 35., 300)
        comparison = compare_trip_sources({"a": sample, "b": sample.copy()})
        test = comparison.test("b", "a")
        self.assertEqual(test.statistic, 0.)
        self.assertFalse(test.rejected)
        comparison = compare_trip_sources({"a": sample, "b": sample + 500.})
        self.assertTrue(comparison.test("a", "b").rejected)
        self.assertEqual(list(comparison.summary_frame()["source"]), ["a", "b"])
        with self.assertRaises(ValueError):
            compare_trip_sources({"a": sample, "b": []})



class TestValidationExperiment(unittest.TestCase):


    @classmethod
    def setUpClass(cls):
        cls.scenario = default_validation_scenario()
        cls.report = run_validation(cls.scenario, seed=0)


    def test_simulated_trips_match_published_summary(self):
        summary = self.report.comparison.summaries[SIMULATION]
        _, mean, median, sd, _ = REFERENCE_SUMMARIES[SIMULATION]
        self.assertAlmostEqual(summary.mean, mean, delta=0.1 * mean)
        self.assertAlmostEqual(summary.median, median, delta=0.1 * median)
        self.assertAlmostEqual(summary.sd, sd, delta=0.1 * sd)
        self.assertFalse(self.report.comparison.test(SIMULATION, CAMERA).rejected)


    def test_report_contents(self):
        report = self.report
        self.assertEqual([log.site for log in report.raw_logs], ["site1", "site2"])
        for raw, kept in zip(report.raw_logs, report.logs):
            self.assertLessEqual(len(kept), len(raw))
        counts = report.detection_counts()
        self.assertEqual(counts["matches"], len(report.matches))
        self.assertGreater(counts["camera_matches"], 0)
        self.assertEqual(set(report.pdf_frame()["source"]), {SIMULATION, BLUETOOTH, CAMERA})
        for pdf in report.pdfs.values():
            self.assertAlmostEqual(pdf.total(), 1.)
        self.assertEqual(len(report.reference.tests), 3)
        report.result.check_conservation()


    def test_perfect_detection_reproduces_camera(self):
        """With certain detection, one device per vehicle and every plate
        read, device matching and plate matching see the same trips."""
        sites = tuple(dataclasses.replace(site, detection_probability=1.,
            device_distribution=dict(ONE_DEVICE)) for site in self.scenario.detectors)
        scenario = dataclasses.replace(self.scenario, detectors=sites,
                validation=dataclasses.replace(self.scenario.validation, camera_fraction=1.))
        report = run_validation(scenario, seed=4)
        frame = report.comparison.summary_frame().set_index("source")
        self.assertEqual(frame.loc[BLUETOOTH].tolist(), frame.loc[CAMERA].tolist())
        self.assertEqual(len(report.matches), len(report.simulated_trips))


    def test_dedupe_window_override(self):
        report = run_validation(self.scenario, seed=0, dedupe_window=0.)
        for raw, kept in zip(report.raw_logs, report.logs):
            self.assertTrue(kept.same_as(raw))
        self.assertGreaterEqual(len(report.matches), len(self.report.matches))


    def test_needs_two_sites(self):
        scenario = dataclasses.replace(self.scenario, detectors=self.scenario.detectors[:1])
        with self.assertRaises(ValueError):
            run_validation(scenario)



def passage_result(n_vehicles: int, trip: float) -> RunResult:
    """A RunResult where vehicle i enters at i seconds and leaves `trip`
    seconds later."""
    admitted = np.arange(n_vehicles, dtype=np.float64)
    exited = admitted + trip
    return RunResult(scenario_name="hand", scenario_hash="0" * 16, policy="none", seed=0,
            warmup=0., horizon=float(exited.max()), drained=True, end_time=float(exited.max()),
            vehicle_classes=np.full(n_vehicles, "RHV", dtype=object), scheduled=admitted.copy(),
            admitted=admitted, exited=exited,
            stations={"wb": StationRecord.empty("wb", 5, n_vehicles)},
            sample_times=np.zeros(1), queue_series={"wb": np.zeros((1, 6))},
            stack_series=np.zeros(1, dtype=np.int64))


if __name__ == "__main__":
    unittest.main()
