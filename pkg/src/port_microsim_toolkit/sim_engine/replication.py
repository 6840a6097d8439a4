"""Multi-seed replication of one (scenario, policy) pair."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from .engine import run


LOG = logging.getLogger(__name__)

DEFAULT_SEEDS = tuple(range(1, 22))



@dataclass(eq=False)
class ReplicationSet:
    """RunResults of one scenario and policy, one per seed, in seed order."""
    policy: str
    seeds: tuple
    results: tuple

    def __len__(self):
        return len(self.results)

    def __iter__(self):
        return iter(self.results)

    def __getitem__(self, index):
        return self.results[index]

    def pooled_lane_tallies(self, station: str, begun_after: float = None) -> np.ndarray:
        """Lane tallies summed over replications. By default each run's own
        warm-up boundary applies."""
        totals = None
        for result in self.results:
            boundary = result.warmup if begun_after is None else begun_after
            tallies = result.lane_tallies(station, boundary)
            totals = tallies if totals is None else totals + tallies
        return totals


def _run_one(args):
    scenario, policy, seed, record_events, drain, warmup = args
    return run(scenario, policy, seed, record_events=record_events, drain=drain, warmup=warmup)


def replicate(scenario, policy, seeds, jobs: int = 1, record_events: bool = False,
        drain: bool = None, warmup: float = None, progress: bool = False) -> ReplicationSet:
    """Runs the scenario once per seed. The runs are independent, so with
    jobs > 1 they execute in a process pool; the results are identical to
    sequential execution and come back in seed order.

    Args:
        scenario (ScenarioConfig): A validated scenario.
        policy: Policy name or object (must be picklable when jobs > 1).
        seeds: Non-empty sequence of integer seeds. Duplicates give
            duplicate, identical results.
        jobs (int): Number of worker processes.
        record_events (bool): Keep each run's event log.
        drain (bool): Override the scenario's drain setting.
        warmup (float): Override the scenario's warm-up.
        progress (bool): Show a tqdm progress bar.

    Raises:
        ValueError: If seeds is empty or jobs < 1.
    """
    seeds = tuple(int(seed) for seed in seeds)
    if not seeds:
        raise ValueError("replicate needs at least one seed.")
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}.")
    policy_name = policy if isinstance(policy, str) else getattr(policy, "name", "none")
    LOG.info("Replicating %s under %s over %d seeds (%d jobs)", scenario.name,
            policy_name, len(seeds), jobs)
    tasks = [(scenario, policy, seed, record_events, drain, warmup) for seed in seeds]
    if jobs == 1 or len(seeds) == 1:
        results = [_run_one(task) for task in tqdm(tasks, disable=not progress,
            desc=f"{policy_name}")]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            results = list(tqdm(executor.map(_run_one, tasks), total=len(tasks),
                disable=not progress, desc=f"{policy_name}"))
    return ReplicationSet(policy_name, seeds, tuple(results))
