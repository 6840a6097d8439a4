"""Tests scenario loading, validation, the bundled fixtures and the
canonical serialization."""
import json
import os
import tempfile
import unittest

from port_microsim_toolkit import (load_scenario, load_scenario_file, default_dover_scenario,
        default_validation_scenario, ScenarioError)
from port_microsim_toolkit.scenario import (ScenarioParseError, serialize_scenario,
        scenario_document, scenario_hash, validate_topology)



class TestScenarioLoading(unittest.TestCase):


    def test_bundled_dover_fixture(self):
        """The bundled corridor carries the published weighbridge data."""
        cfg = default_dover_scenario()
        topology = cfg.topology
        self.assertEqual([s.kind for s in topology.stations],
                ["PassportCheck", "Weighbridge", "Ticketing"])
        weighbridge = topology.station("weighbridge")
        self.assertEqual(weighbridge.lane_count, 5)
        self.assertEqual(weighbridge.service.distribution, "NormalTruncated")
        self.assertEqual(weighbridge.service.mean, 20.)
        self.assertEqual(weighbridge.service.sd, 2.)
        self.assertEqual(tuple(cfg.calibration.average_shares),
                (0.223, 0.254, 0.228, 0.156, 0.139))
        self.assertEqual(tuple(cfg.routing.average_shares), (0.223, 0.254, 0.228, 0.156, 0.139))
        self.assertEqual(set(cfg.flow_profiles.rates), {30, 60, 90, 300, 600, 800})
        self.assertEqual(topology.lanes("passport", "RHV"), frozenset({1, 2, 3}))
        self.assertEqual(topology.lanes("weighbridge", "RHV"), frozenset({1, 2, 3, 4, 5}))
        self.assertEqual(topology.lanes("weighbridge", "Tourist"), frozenset())
        self.assertFalse(topology.station("passport").service.calibrated)
        self.assertEqual(topology.routed_station, "weighbridge")


    def test_bundled_validation_fixture(self):
        cfg = default_validation_scenario()
        self.assertEqual(len(cfg.detectors), 2)
        self.assertIsNotNone(cfg.validation)
        self.assertEqual(cfg.validation.dedupe_window, 5.)
        self.assertEqual(cfg.validation.max_trip, 3600.)


    def test_defaults(self):
        cfg = load_scenario(minimal_document())
        self.assertEqual(cfg.bin_width, 120.)
        self.assertEqual(cfg.warmup, 900.)
        self.assertEqual(cfg.sample_interval, 10.)
        self.assertEqual(cfg.rate_window, 900.)
        self.assertTrue(cfg.drain)
        self.assertEqual(cfg.class_map["RHV"].effective_length, 17.)
        self.assertEqual(cfg.class_map["Tourist"].effective_length, 6.)
        station = cfg.stations[0]
        self.assertEqual(station.queue_mode, "lanes")
        self.assertEqual(station.service.security_check_probability, 0.)
        self.assertEqual(station.service.security_check_delay, 0.)
        self.assertEqual(cfg.horizon, cfg.demand.span)


    def test_parse_errors(self):
        """Empty, malformed and non-mapping documents are parse errors."""
        for text in ["", "   \n", "a: [1, 2", "- 1\n- 2\n", "just text"]:
            with self.assertRaises(ScenarioParseError):
                load_scenario(text)


    def test_negative_demand_names_the_bin(self):
        text = minimal_document(demand="demand:\n  counts:\n    RHV: [2, -1, 3]\n")
        with self.assertRaises(ScenarioError) as context:
            load_scenario(text)
        self.assertTrue(any("demand.counts.RHV[1]" in e for e in context.exception.errors))


    def test_errors_are_accumulated(self):
        """Every violated invariant is listed, not just the first."""
        text = minimal_document(lanes="[1, 7]", capacity=0,
                demand="demand:\n  counts:\n    RHV: [2, -1]\n")
        with self.assertRaises(ScenarioError) as context:
            load_scenario(text)
        errors = context.exception.errors
        self.assertTrue(any("lane 7 outside 1..5" in e for e in errors))
        self.assertTrue(any("storage_capacity" in e for e in errors))
        self.assertTrue(any("demand.counts.RHV[1]" in e for e in errors))
        self.assertGreaterEqual(len(errors), 3)


    def test_disconnected_chain(self):
        text = minimal_document().replace("to: sink", "to: nowhere")
        with self.assertRaises(ScenarioError) as context:
            load_scenario(text)
        self.assertTrue(any("unknown node" in e for e in context.exception.errors))
        self.assertTrue(any("never reaches the sink" in e for e in context.exception.errors))


    def test_tourist_bypass_is_valid(self):
        cfg = load_scenario(minimal_document(tourist_lanes="[]",
            demand="demand:\n  counts:\n    RHV: [1]\n    Tourist: [1]\n"))
        topology = validate_topology(cfg)
        self.assertEqual(topology.lanes("wb", "Tourist"), frozenset())
        self.assertTrue(topology.station("wb").bypassed_by("Tourist"))


    def test_rhv_cannot_bypass_weighbridge(self):
        with self.assertRaises(ScenarioError):
            load_scenario(minimal_document(lanes="[]"))


    def test_unknown_key_is_reported(self):
        with self.assertRaises(ScenarioError) as context:
            load_scenario(minimal_document() + "colour: blue\n")
        self.assertTrue(any(e.startswith("colour") for e in context.exception.errors))


    def test_constant_rate_shorthand(self):
        cfg = load_scenario(minimal_document(
            demand="demand:\n  rates: {RHV: 300}\n  duration: 3600\n"))
        self.assertEqual(cfg.demand.total("RHV"), 300)
        self.assertEqual(cfg.demand.n_bins, 30)
        self.assertEqual(set(cfg.demand.counts["RHV"]), {10})


    def test_json_documents_are_accepted(self):
        cfg = load_scenario(minimal_document(tourist_lanes="[]"))
        text = json.dumps(scenario_document(cfg))
        self.assertEqual(load_scenario(text), cfg)


    def test_round_trip(self):
        """serialize then load gives an equal scenario."""
        for cfg in [default_dover_scenario(), default_validation_scenario(),
                load_scenario(minimal_document())]:
            text = serialize_scenario(cfg)
            self.assertEqual(load_scenario(text), cfg)
            self.assertEqual(serialize_scenario(load_scenario(text)), text)
            self.assertEqual(scenario_hash(load_scenario(text)), scenario_hash(cfg))


    def test_with_flow_rate(self):
        cfg = default_dover_scenario().with_flow_rate(800)
        self.assertEqual(cfg.demand.total("RHV"), 1200)
        self.assertEqual(cfg.demand.total("Tourist"), 0)
        self.assertGreaterEqual(cfg.horizon, cfg.demand.span)
        self.assertNotEqual(scenario_hash(cfg), scenario_hash(default_dover_scenario()))


    def test_load_from_file(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "corridor.yaml")
            with open(path, "w", encoding="utf-8") as fhandle:
                fhandle.write(minimal_document())
            self.assertEqual(load_scenario_file(path), load_scenario(minimal_document()))
            with self.assertRaises(OSError):
                load_scenario_file(os.path.join(tmpdir, "missing.yaml"))


    def test_free_flow_time_between_points(self):
        topology = default_dover_scenario().topology
        self.assertEqual(topology.free_flow_time(), 210.)
        self.assertEqual(topology.free_flow_time("passport.exit", "weighbridge.exit"), 60.)
        with self.assertRaises(ValueError):
            topology.free_flow_time("gate", "sink")



def minimal_document(lanes = "[1, 2, 3, 4, 5]", tourist_lanes = None, capacity = 500,
        demand = "demand:\n  counts:\n    RHV: [2, 0, 1]\n"):
    """A one-station corridor: source -> wb -> sink."""
    admissible = f"      RHV: {lanes}\n"
    if tourist_lanes is not None:
        admissible += f"      Tourist: {tourist_lanes}\n"
    return ("name: minimal\n"
            "stations:\n"
            "  - id: wb\n"
            "    kind: Weighbridge\n"
            "    lane_count: 5\n"
            "    approach_capacity: 40\n"
            "    service: {distribution: Deterministic, value: 10}\n"
            "    admissible:\n"
            f"{admissible}"
            "segments:\n"
            f"  - {{id: in, from: source, to: wb, free_flow_time: 30, storage_capacity: {capacity}}}\n"
            "  - {id: out, from: wb, to: sink, free_flow_time: 20, storage_capacity: 500}\n"
            f"{demand}")


if __name__ == "__main__":
    unittest.main()
