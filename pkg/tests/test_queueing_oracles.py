"""Checks the engine against analytic M/M/c results on a single shared
station fed by a Poisson stream. The simulated checks pool ten long runs
per load level and take a few minutes."""
import unittest

import numpy as np

from port_microsim_toolkit import load_scenario, run
from port_microsim_toolkit.arrivals import DemandBins
from port_microsim_toolkit.metrics import littles_law, mean_wait
from port_microsim_toolkit.queueing_theory import (erlang_b, erlang_c_probability,
        erlang_c_mean_wait, mmc_mean_queue_length, mmc_mean_in_system, arrival_rate_for,
        utilization)


STATION_DOCUMENT = """
name: mmc
warmup: 20000
sample_interval: 1000
stations:
  - id: booths
    kind: SecurityCheck
    lane_count: 5
    queue_mode: shared
    approach_capacity: 1000000
    service: {distribution: Exponential, mean: 20}
segments:
  - {id: in, from: source, to: booths, free_flow_time: 1, storage_capacity: 1000000000}
  - {id: out, from: booths, to: sink, free_flow_time: 1, storage_capacity: 1000000000}
demand:
  counts:
    RHV: [1]
"""

MEAN_SERVICE = 20.
SERVERS = 5
DURATION = 1e6
BIN_WIDTH = 120.
LOADS = (0.5, 0.8)
SEEDS = tuple(range(1, 11))



class TestErlangFormulas(unittest.TestCase):


    def test_single_server_reduces_to_mm1(self):
        arrival_rate, mean_service = 0.04, 20.
        rho = utilization(arrival_rate, mean_service, 1)
        self.assertAlmostEqual(erlang_b(1, rho), rho / (1 + rho))
        self.assertAlmostEqual(erlang_c_probability(arrival_rate, mean_service, 1), rho)
        self.assertAlmostEqual(erlang_c_mean_wait(arrival_rate, mean_service, 1),
                rho * mean_service / (1 - rho))
        self.assertAlmostEqual(mmc_mean_in_system(arrival_rate, mean_service, 1), rho / (1 - rho))


    def test_known_values(self):
        # Five servers at offered load 4 Erlang.
        self.assertAlmostEqual(erlang_b(5, 4.), 0.1991, places=4)
        self.assertAlmostEqual(erlang_c_probability(0.2, 20., 5), 0.5541, places=4)
        self.assertAlmostEqual(erlang_c_mean_wait(0.2, 20., 5), 11.08, places=2)
        lq = mmc_mean_queue_length(0.2, 20., 5)
        self.assertAlmostEqual(lq, 0.2 * erlang_c_mean_wait(0.2, 20., 5))
        self.assertAlmostEqual(mmc_mean_in_system(0.2, 20., 5), lq + 4.)


    def test_invalid_parameters(self):
        with self.assertRaises(ValueError):
            erlang_c_mean_wait(0.25, 20., 5)
        with self.assertRaises(ValueError):
            erlang_c_mean_wait(0.1, 20., 0)
        with self.assertRaises(ValueError):
            arrival_rate_for(1., 20., 5)
        self.assertAlmostEqual(arrival_rate_for(0.8, 20., 5), 0.2)



class TestQueueingOracles(unittest.TestCase):
    """Each load level runs once per seed in SEEDS; estimates are pooled
    over the seeds."""


    @classmethod
    def setUpClass(cls):
        cls.results = {rho: [run_poisson_station(arrival_rate_for(rho, MEAN_SERVICE, SERVERS),
            seed) for seed in SEEDS] for rho in LOADS}


    def test_mean_wait_matches_erlang_c(self):
        for rho in LOADS:
            arrival_rate = arrival_rate_for(rho, MEAN_SERVICE, SERVERS)
            expected = erlang_c_mean_wait(arrival_rate, MEAN_SERVICE, SERVERS)
            simulated = np.mean([mean_wait(result, "booths") for result in self.results[rho]])
            self.assertLess(abs(simulated - expected) / expected, 0.05,
                    f"rho={rho}: simulated {simulated:.3f} s, Erlang-C {expected:.3f} s")


    def test_littles_law(self):
        """L = lambda W holds on every sample path; the time-average number
        in system matches M/M/c once pooled."""
        arrival_rate = arrival_rate_for(0.8, MEAN_SERVICE, SERVERS)
        in_system = []
        for result in self.results[0.8]:
            for station in ["booths", None]:
                self.assertLess(littles_law(result, station).relative_error, 0.05,
                        f"seed {result.seed}")
            check = littles_law(result, "booths")
            self.assertAlmostEqual(check.arrival_rate, arrival_rate, delta=0.05 * arrival_rate)
            in_system.append(check.time_average_in_system)
        expected = mmc_mean_in_system(arrival_rate, MEAN_SERVICE, SERVERS)
        self.assertAlmostEqual(np.mean(in_system), expected, delta=0.05 * expected)



def run_poisson_station(arrival_rate: float, seed: int):
    """A Poisson stream of `arrival_rate` per second into the five-lane
    shared station for DURATION seconds."""
    counts = np.random.default_rng(seed).poisson(arrival_rate * BIN_WIDTH,
            int(DURATION / BIN_WIDTH))
    cfg = load_scenario(STATION_DOCUMENT).with_demand(
            DemandBins({"RHV": tuple(int(c) for c in counts)}, BIN_WIDTH))
    return run(cfg, seed=seed, record_events=False)


if __name__ == "__main__":
    unittest.main()
