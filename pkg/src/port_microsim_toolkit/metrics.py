"""Evaluation quantities computed from run results: lane occupancy, trip
time summaries, occupancy error, seed sensitivity, Little's law and the
policy x flow-rate comparison grid with its scorecard."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .routing_policies import POLICY_NAMES, flow_band, occupancy_lookup
from .sim_engine.replication import DEFAULT_SEEDS, replicate


LOG = logging.getLogger(__name__)

# The probabilistic policy is called brittle at the highest flow rate if the
# coefficient of variation of its mean trip time across seeds is at least
# this multiple of the agent policy's.
BRITTLENESS_CV_RATIO = 2.0
# ... and its mean trip time inflated if at least this multiple of the
# agent policy's.
TRIP_INFLATION_RATIO = 1.5

OCCUPANCY_METRIC = "lane_occupancy"
TRIP_METRIC = "trip_time"



@dataclass(frozen=True)
class LaneOccupancySummary:
    """Served vehicles per lane and the resulting shares. `shares` is empty
    when nothing was served."""
    station: str
    counts: tuple
    shares: tuple

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def empty(self) -> bool:
        return self.total == 0


def occupancy_from_tallies(station: str, tallies) -> LaneOccupancySummary:
    counts = tuple(int(c) for c in tallies)
    total = sum(counts)
    if total == 0:
        return LaneOccupancySummary(station, counts, ())
    return LaneOccupancySummary(station, counts, tuple(c / total for c in counts))


def lane_occupancy(result, station: str, warmup: float = None) -> LaneOccupancySummary:
    """Shares of completed services per lane, excluding services that
    began before the warm-up boundary (the run's own by default)."""
    boundary = result.warmup if warmup is None else warmup
    return occupancy_from_tallies(station, result.lane_tallies(station, boundary))



@dataclass(frozen=True)
class TripTimeSummary:
    """Summary of a set of trip times in seconds. sd is the population
    standard deviation."""
    n: int
    mean: float
    median: float
    sd: float
    max: float
    q1: float
    q3: float

    @classmethod
    def from_samples(cls, samples):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.shape[0] == 0:
            return cls(0, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan)
        q1, median, q3 = np.percentile(samples, [25, 50, 75])
        return cls(int(samples.shape[0]), float(samples.mean()), float(median),
                float(samples.std()), float(samples.max()), float(q1), float(q3))

    def as_row(self) -> dict:
        return {"n": self.n, "mean_s": self.mean, "median_s": self.median,
                "sd_s": self.sd, "max_s": self.max, "q1_s": self.q1, "q3_s": self.q3}


def trip_times(result, from_point: str, to_point: str, warmup: float = None) -> np.ndarray:
    """Completed trip times between two measurement points, in vehicle id
    order. Vehicles scheduled before the warm-up boundary and vehicles that
    did not pass both points are excluded."""
    boundary = result.warmup if warmup is None else warmup
    start = result.passage_times(from_point)
    end = result.passage_times(to_point)
    keep = (~np.isnan(start)) & (~np.isnan(end)) & (result.scheduled >= boundary)
    return end[keep] - start[keep]


def trip_time_stats(result, from_point: str, to_point: str,
        warmup: float = None) -> TripTimeSummary:
    return TripTimeSummary.from_samples(trip_times(result, from_point, to_point, warmup))


def occupancy_error(sim_shares, observed_shares) -> float:
    """L1 distance between two share vectors in percentage points.

    Raises:
        ValueError: If the vectors differ in length.
    """
    sim = np.asarray(sim_shares, dtype=np.float64)
    observed = np.asarray(observed_shares, dtype=np.float64)
    if sim.shape != observed.shape:
        raise ValueError(f"Share vectors differ in length ({sim.shape[0]} vs "
                f"{observed.shape[0]}).")
    return float(np.abs(sim - observed).sum() * 100.)


def occupancy_error_bound(shares, n_served: int, sigmas: float = 3.) -> float:
    """Error (percentage points) within which a binomial sample of n_served
    lane choices drawn from `shares` falls, lane by lane, at `sigmas`
    standard deviations."""
    shares = np.asarray(shares, dtype=np.float64)
    return float(100. * sigmas * np.sqrt(shares * (1 - shares) / n_served).sum())


def coefficient_of_variation(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] == 0 or values.mean() == 0:
        return math.nan
    return float(values.std() / values.mean())



@dataclass(frozen=True)
class SpreadReport:
    """Seed sensitivity of a replication set.

    Args:
        seeds (tuple): Seeds in replication order.
        mean_trip_times (tuple): Mean trip time of each seed.
        mean_queues (tuple): Time-average total station queue (m) per seed.
        max_queue_difference (float): Largest difference in total station
            queue between any two seeds at a common sample time (m).
        max_trip_ratio (float): Largest ratio of per-seed mean trip times.
        trip_cv (float): Coefficient of variation of the per-seed means.
    """
    seeds: tuple
    mean_trip_times: tuple
    mean_queues: tuple
    max_queue_difference: float
    max_trip_ratio: float
    trip_cv: float


def aligned_queues(results, station: str):
    """Total station queue of each result on a common sample grid. Runs
    that ended earlier are padded with zeros (an empty queue)."""
    series = [result.station_queue(station) for result in results]
    length = max(s.shape[0] for s in series)
    aligned = np.zeros((len(series), length))
    for i, s in enumerate(series):
        aligned[i, :s.shape[0]] = s
    return aligned


def seed_spread(reps, station: str, from_point: str, to_point: str,
        warmup: float = None) -> SpreadReport:
    """Spreads across the replications of a ReplicationSet.

    Raises:
        ValueError: If fewer than two replications are given or their
            sample intervals differ.
    """
    results = list(reps)
    if len(results) < 2:
        raise ValueError("seed_spread needs at least two replications.")
    intervals = {float(np.diff(r.sample_times[:2])[0]) for r in results
            if r.sample_times.shape[0] > 1}
    if len(intervals) > 1:
        raise ValueError("Replications were sampled at different intervals.")
    samples = [trip_times(r, from_point, to_point, warmup) for r in results]
    means = [float(s.mean()) if s.shape[0] else math.nan for s in samples]
    queues = aligned_queues(results, station)
    finite = [m for m in means if not math.isnan(m)]
    ratio = max(finite) / min(finite) if finite and min(finite) > 0 else math.nan
    return SpreadReport(tuple(r.seed for r in results), tuple(means),
            tuple(float(q.mean()) for q in queues),
            float((queues.max(axis=0) - queues.min(axis=0)).max()), float(ratio),
            coefficient_of_variation(finite))



@dataclass(frozen=True)
class LittlesLawCheck:
    """Both sides of L = lambda W over a time window."""
    window: tuple
    time_average_in_system: float
    arrival_rate: float
    mean_time_in_system: float

    @property
    def predicted(self) -> float:
        return self.arrival_rate * self.mean_time_in_system

    @property
    def relative_error(self) -> float:
        return _ratio(abs(self.time_average_in_system - self.predicted),
                self.time_average_in_system)


def littles_law(result, station: str = None, warmup: float = None,
        end: float = None) -> LittlesLawCheck:
    """Measures the time-average number in system, the arrival rate and the
    mean time in system over [warmup, end]. With a station the system is
    the station (join to exit); otherwise the whole corridor (admission to
    sink). `end` defaults to the horizon."""
    start = result.warmup if warmup is None else warmup
    end = result.horizon if end is None else end
    if station is None:
        enter, leave = result.admitted, result.exited
    else:
        record = result.station_record(station)
        enter, leave = record.join, record.exit
    entered = ~np.isnan(enter)
    enter = enter[entered]
    leave = np.where(np.isnan(leave[entered]), np.inf, leave[entered])
    overlap = np.clip(np.minimum(leave, end) - np.maximum(enter, start), 0., None)
    length = end - start
    arriving = (enter >= start) & (enter < end)
    sojourn = leave[arriving] - enter[arriving]
    finite = np.isfinite(sojourn)
    return LittlesLawCheck((start, end), float(overlap.sum() / length),
            float(arriving.sum() / length),
            float(sojourn[finite].mean()) if finite.any() else math.nan)


def mean_wait(result, station: str, warmup: float = None) -> float:
    """Mean time from joining a station's queue to starting service, over
    vehicles that joined after the warm-up boundary."""
    boundary = result.warmup if warmup is None else warmup
    record = result.station_record(station)
    keep = (~np.isnan(record.begin)) & (record.join >= boundary)
    if not keep.any():
        return math.nan
    return float((record.begin[keep] - record.join[keep]).mean())



@dataclass(frozen=True)
class ComparisonCell:
    """One (policy, flow rate) cell of the comparison grid."""
    policy: str
    rate: float
    band: str
    occupancy: LaneOccupancySummary
    observed_shares: tuple
    occupancy_error_pp: float
    trips: TripTimeSummary
    reference_trip_s: float
    seed_mean_trip_times: tuple
    trip_samples: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def trip_error_pct(self) -> float:
        if not self.reference_trip_s or math.isnan(self.trips.mean):
            return math.nan
        return abs(self.trips.mean - self.reference_trip_s) / self.reference_trip_s * 100.

    @property
    def trip_cv(self) -> float:
        return coefficient_of_variation(self.seed_mean_trip_times)


@dataclass(frozen=True)
class ScorecardEntry:
    metric: str
    policy: str
    band: str
    error: float


@dataclass(frozen=True)
class ComparisonReport:
    """The complete policy x rate grid plus, per metric, the (policy, band)
    cells ranked from the largest error down."""
    cells: tuple
    scorecard: dict

    def cell(self, policy: str, rate: float) -> ComparisonCell:
        for cell in self.cells:
            if cell.policy == policy and cell.rate == rate:
                return cell
        raise ValueError(f"No cell for policy {policy!r} at rate {rate}.")

    def worst(self, metric: str) -> ScorecardEntry:
        return self.scorecard[metric][0]

    def to_frame(self) -> pd.DataFrame:
        """One row per cell: `policy,rate,occ_error_pp,trip_mean_s,trip_sd_s`."""
        return pd.DataFrame([{"policy": c.policy, "rate": c.rate,
            "occ_error_pp": c.occupancy_error_pp, "trip_mean_s": c.trips.mean,
            "trip_sd_s": c.trips.sd} for c in self.cells],
            columns=["policy", "rate", "occ_error_pp", "trip_mean_s", "trip_sd_s"])

    def occupancy_by_rate_frame(self) -> pd.DataFrame:
        """Lane shares per policy and rate, with the observed shares
        alongside."""
        rows = []
        for c in self.cells:
            for lane, observed in enumerate(c.observed_shares):
                share = c.occupancy.shares[lane] if c.occupancy.shares else math.nan
                rows.append({"policy": c.policy, "rate": c.rate, "lane": lane + 1,
                    "share": share, "observed_share": observed})
        return pd.DataFrame(rows, columns=["policy", "rate", "lane", "share", "observed_share"])

    def occupancy_error_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"policy": c.policy, "rate": c.rate, "band": c.band,
            "occ_error_pp": c.occupancy_error_pp} for c in self.cells],
            columns=["policy", "rate", "band", "occ_error_pp"])

    def trip_time_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"policy": c.policy, "rate": c.rate, "band": c.band,
            "trip_mean_s": c.trips.mean, "trip_median_s": c.trips.median,
            "trip_sd_s": c.trips.sd, "reference_s": c.reference_trip_s,
            "trip_error_pct": c.trip_error_pct, "trip_cv": c.trip_cv} for c in self.cells],
            columns=["policy", "rate", "band", "trip_mean_s", "trip_median_s", "trip_sd_s",
                "reference_s", "trip_error_pct", "trip_cv"])

    def scorecard_frame(self) -> pd.DataFrame:
        rows = [{"metric": metric, "rank": rank + 1, "policy": e.policy, "band": e.band,
            "error": e.error} for metric, entries in self.scorecard.items()
            for rank, e in enumerate(entries)]
        return pd.DataFrame(rows, columns=["metric", "rank", "policy", "band", "error"])


def comparison_cell(reps, calibration, rate: float) -> ComparisonCell:
    """Summarises a ReplicationSet against the calibration targets."""
    table = calibration.observed_shares
    band = flow_band(rate, table.bands).label
    observed = tuple(occupancy_lookup(table, rate))
    occupancy = occupancy_from_tallies(calibration.station,
            reps.pooled_lane_tallies(calibration.station))
    error = occupancy_error(occupancy.shares, observed) if not occupancy.empty else math.nan
    per_seed = [trip_times(r, calibration.trip_from, calibration.trip_to) for r in reps]
    samples = np.concatenate(per_seed) if per_seed else np.zeros(0)
    return ComparisonCell(reps.policy, float(rate), band, occupancy, observed, error,
            TripTimeSummary.from_samples(samples),
            float(calibration.trip_reference_mean.get(band, math.nan)),
            tuple(float(s.mean()) for s in per_seed if s.shape[0]), samples)


def build_scorecard(cells, calibration) -> dict:
    """Ranks (policy, band) groups by error for each metric. Cells of the
    same policy and band (the low-flow rates) are pooled first."""
    groups = {}
    for cell in cells:
        groups.setdefault((cell.policy, cell.band), []).append(cell)
    occupancy, trips = [], []
    for (policy, band), members in groups.items():
        tallies = np.sum([m.occupancy.counts for m in members], axis=0)
        pooled = occupancy_from_tallies(calibration.station, tallies)
        if not pooled.empty:
            observed = calibration.observed_shares.shares[band]
            occupancy.append(ScorecardEntry(OCCUPANCY_METRIC, policy, band,
                occupancy_error(pooled.shares, observed)))
        samples = np.concatenate([m.trip_samples for m in members])
        reference = calibration.trip_reference_mean.get(band)
        if samples.shape[0] and reference:
            trips.append(ScorecardEntry(TRIP_METRIC, policy, band,
                abs(float(samples.mean()) - reference) / reference * 100.))
    key = lambda entry: -entry.error
    return {OCCUPANCY_METRIC: sorted(occupancy, key=key), TRIP_METRIC: sorted(trips, key=key)}


def policy_comparison(scenario, policies = POLICY_NAMES, rates = None,
        seeds = DEFAULT_SEEDS, jobs: int = 1, progress: bool = False, drain: bool = None,
        warmup: float = None) -> ComparisonReport:
    """Runs every policy at every flow rate over the seeds and compares the
    outcomes with the scenario's calibration targets.

    Args:
        scenario (ScenarioConfig): Scenario with flow_profiles and
            calibration sections.
        policies: Policy names.
        rates: Flow rates (veh/h); the scenario's flow-profile rates by
            default.
        seeds: Seeds of every cell (21 by default).
        jobs (int): Worker processes per cell.
        progress (bool): Show progress bars.
        drain (bool): Overrides the scenario's drain setting.
        warmup (float): Overrides the scenario's warm-up; lane tallies and
            trip times of every cell use it.

    Raises:
        ValueError: If the scenario lacks flow profiles or calibration
            targets.
    """
    if scenario.calibration is None or scenario.flow_profiles is None:
        raise ValueError(f"Scenario {scenario.name!r} needs flow_profiles and calibration "
                "sections for a policy comparison.")
    rates = tuple(scenario.flow_profiles.rates if rates is None else rates)
    cells = []
    for policy in policies:
        for rate in rates:
            reps = replicate(scenario.with_flow_rate(rate), policy, seeds, jobs=jobs,
                    drain=drain, warmup=warmup, progress=progress)
            cell = comparison_cell(reps, scenario.calibration, rate)
            LOG.info("%s @ %g veh/h: occupancy error %.1f pp, mean trip %.1f s",
                    policy, rate, cell.occupancy_error_pp, cell.trips.mean)
            cells.append(cell)
    return ComparisonReport(tuple(cells), build_scorecard(cells, scenario.calibration))


@dataclass(frozen=True)
class BrittlenessCheck:
    rate: float
    cv_ratio: float
    trip_ratio: float

    @property
    def brittle(self) -> bool:
        return self.cv_ratio >= BRITTLENESS_CV_RATIO

    @property
    def inflated(self) -> bool:
        return self.trip_ratio >= TRIP_INFLATION_RATIO


def brittleness(report: ComparisonReport, rate: float, probabilistic: str = "prob-avg",
        agent: str = "agent") -> BrittlenessCheck:
    """Compares the seed variability and mean trip time of a probabilistic
    policy with the agent policy at one rate."""
    prob_cell, agent_cell = report.cell(probabilistic, rate), report.cell(agent, rate)
    return BrittlenessCheck(float(rate), _ratio(prob_cell.trip_cv, agent_cell.trip_cv),
            _ratio(prob_cell.trips.mean, agent_cell.trips.mean))


def _ratio(numerator: float, denominator: float) -> float:
    """numerator / denominator, with x / 0 = inf for x > 0 and 0 / 0 = nan."""
    if denominator == 0:
        return math.nan if numerator == 0 or math.isnan(numerator) else math.inf
    return numerator / denominator
