"""Trip-time distributions from several sources (simulated ground truth,
device matching, plate matching) and their comparison."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import ks_2samp

from ..arrivals import Histogram
from ..metrics import TripTimeSummary
from ..scenario import ValidationConfig
from ..sim_engine.engine import run
from ..sim_engine.rng_streams import RngStreams
from .detection import (assign_devices, camera_matches, dedupe, expected_matches,
        match_trips, simulate_detections)


LOG = logging.getLogger(__name__)

ALPHA = 0.05

SIMULATION = "Simulation"
BLUETOOTH = "Bluetooth"
CAMERA = "Camera"

# Published summaries (n, mean, median, sd, max) of the three trip-time
# sources at the Dover weighbridge, in seconds.
REFERENCE_SUMMARIES = {
    SIMULATION: (104, 319., 291., 110., 729.),
    BLUETOOTH: (104, 358., 301., 181., 1250.),
    CAMERA: (104, 343., 306., 137., 860.),
}



def trip_pdf(trips, bin_width: float) -> Histogram:
    """Normalized histogram of trip times. The first bin starts at the
    largest multiple of bin_width not above the shortest trip.

    Args:
        trips: A MatchedTrips or a sequence of trip times in seconds.
        bin_width (float): Bin width in seconds.

    Raises:
        ValueError: If bin_width <= 0.
    """
    if not bin_width > 0:
        raise ValueError(f"bin width must be > 0, got {bin_width}.")
    times = np.asarray(getattr(trips, "trip_times", trips), dtype=np.float64)
    if times.shape[0] == 0:
        return Histogram(float(bin_width), np.zeros(0), np.zeros(0))
    origin = math.floor(times.min() / bin_width) * bin_width
    counts = np.bincount(np.floor((times - origin) / bin_width).astype(np.int64))
    starts = origin + np.arange(counts.shape[0]) * bin_width
    return Histogram(float(bin_width), starts, counts / counts.sum())


def summary_sample(n: int, mean: float, median: float, sd: float, maximum: float) -> np.ndarray:
    """A sorted sample of size n whose mean, median, population standard
    deviation and maximum equal the given values. The two middle order
    statistics sit at the median, the lower half is spread evenly over
    [median - a, median) and the upper half over (median, median + b] below
    the maximum, with a and b solved from the mean and sd.

    Raises:
        ValueError: If n is odd or below 4, or no sample of this shape has
            the requested summary.
    """
    if n < 4 or n % 2:
        raise ValueError(f"n must be an even number >= 4, got {n}.")
    k = n // 2 - 1
    lower_steps = np.arange(k, 0, -1) / k
    upper_steps = np.arange(1, k) / k
    q, r = lower_steps.sum(), upper_steps.sum()
    s_lower, s_upper = (lower_steps ** 2).sum(), (upper_steps ** 2).sum()
    shift = median - mean
    c = n * (mean - median) - (maximum - median)
    v = n * sd ** 2 - (2 * k + 1) * shift ** 2 - (maximum - mean) ** 2 - 2 * shift * c
    quad_a = s_lower + q ** 2 * s_upper / r ** 2
    quad_b = 2 * c * q * s_upper / r ** 2
    quad_c = c ** 2 * s_upper / r ** 2 - v
    discriminant = quad_b ** 2 - 4 * quad_a * quad_c
    if discriminant < 0:
        raise ValueError("No sample matches the requested summary.")
    a = (-quad_b + math.sqrt(discriminant)) / (2 * quad_a)
    b = (c + a * q) / r
    if a < 0 or b < 0 or median + b * upper_steps[-1] >= maximum:
        raise ValueError("No sample matches the requested summary.")
    sample = np.concatenate([median - a * lower_steps, [median, median],
        median + b * upper_steps, [maximum]])
    return np.sort(sample)


def reference_trip_samples() -> dict:
    """Samples reproducing the published summary of each trip source."""
    return {source: summary_sample(*summary) for source, summary in REFERENCE_SUMMARIES.items()}



@dataclass(frozen=True)
class KsComparison:
    first: str
    second: str
    statistic: float
    pvalue: float
    alpha: float

    @property
    def rejected(self) -> bool:
        return self.pvalue < self.alpha


@dataclass(frozen=True)
class TripSourceComparison:
    """Per-source summaries and pairwise two-sample KS tests."""
    summaries: dict
    tests: tuple

    def test(self, first: str, second: str) -> KsComparison:
        for test in self.tests:
            if {test.first, test.second} == {first, second}:
                return test
        raise ValueError(f"No comparison between {first!r} and {second!r}.")

    def summary_frame(self) -> pd.DataFrame:
        """One row per source: `source,n,mean_s,median_s,sd_s,max_s,q1_s,q3_s`."""
        rows = [dict(source=source, **summary.as_row())
                for source, summary in self.summaries.items()]
        return pd.DataFrame(rows, columns=["source", "n", "mean_s", "median_s", "sd_s",
            "max_s", "q1_s", "q3_s"])

    def tests_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"first": t.first, "second": t.second, "ks_statistic": t.statistic,
            "p_value": t.pvalue, "rejected": t.rejected} for t in self.tests],
            columns=["first", "second", "ks_statistic", "p_value", "rejected"])


def compare_trip_sources(samples: dict, alpha: float = ALPHA) -> TripSourceComparison:
    """Summarises every source and runs a two-sample Kolmogorov-Smirnov
    test on every pair of sources.

    Args:
        samples (dict): Maps a source name to its trip times.
        alpha (float): Significance level of the KS tests.

    Raises:
        ValueError: If a source has no samples.
    """
    samples = {name: np.asarray(values, dtype=np.float64) for name, values in samples.items()}
    for name, values in samples.items():
        if values.shape[0] == 0:
            raise ValueError(f"Trip source {name!r} has no samples.")
    summaries = {name: TripTimeSummary.from_samples(values) for name, values in samples.items()}
    tests = []
    for first, second in itertools.combinations(samples, 2):
        outcome = ks_2samp(samples[first], samples[second])
        tests.append(KsComparison(first, second, float(outcome.statistic),
            float(outcome.pvalue), alpha))
    return TripSourceComparison(summaries, tuple(tests))



@dataclass(eq=False)
class ValidationReport:
    """Everything the detector validation experiment produced."""
    result: object
    raw_logs: tuple
    logs: tuple
    matches: object
    camera: object
    simulated_trips: np.ndarray
    comparison: TripSourceComparison
    reference: TripSourceComparison
    pdfs: dict
    expected_matches: float

    def pdf_frame(self) -> pd.DataFrame:
        """Long format `source,bin_start_s,mass`."""
        frames = [pdf.to_frame().assign(source=source) for source, pdf in self.pdfs.items()]
        return pd.concat(frames, ignore_index=True)[["source", "bin_start_s", "mass"]]

    def detection_counts(self) -> dict:
        return {"detections": {log.site: len(log) for log in self.raw_logs},
                "deduplicated": {log.site: len(log) for log in self.logs},
                "matches": len(self.matches), "expected_matches": float(self.expected_matches),
                "camera_matches": len(self.camera)}


def run_validation(scenario, seed: int = 0, policy: str = "agent",
        dedupe_window: float = None, warmup: float = None,
        drain: bool = None) -> ValidationReport:
    """Simulates the scenario, samples the first two detector sites and a
    camera subset, matches trips and compares the three trip-time sources.
    Only passages at the first site at or after the warm-up boundary are
    observed.

    Args:
        scenario (ScenarioConfig): Scenario with at least two detector
            sites.
        seed (int): Master seed of the run and of the detection substream.
        policy (str): Routing policy name.
        dedupe_window (float): Overrides the scenario's dedupe window.
        warmup (float): Overrides the scenario's warm-up.
        drain (bool): Overrides the scenario's drain setting.

    Raises:
        ValueError: If the scenario has fewer than two detector sites, or a
            source ends up without trips.
    """
    if len(scenario.detectors) < 2:
        raise ValueError(f"Scenario {scenario.name!r} needs two detector sites, "
                f"found {len(scenario.detectors)}.")
    options = scenario.validation or ValidationConfig()
    window = options.dedupe_window if dedupe_window is None else dedupe_window
    result = run(scenario, policy, seed, record_events=False, drain=drain, warmup=warmup)
    first, second = scenario.detectors[:2]
    streams = RngStreams(seed)
    devices = assign_devices(result.n_scheduled, first.device_distribution,
            streams.detection(0))
    raw_logs = tuple(simulate_detections(result, site, streams.detection(index + 1), devices,
        observe_from=result.warmup) for index, site in enumerate((first, second)))
    logs = tuple(dedupe(log, window) for log in raw_logs)
    matches = match_trips(logs[0], logs[1], options.max_trip)
    camera = camera_matches(result, first.location, second.location, options.camera_fraction,
            streams.detection(3), observe_from=result.warmup)
    start = result.passage_times(first.location)
    end = result.passage_times(second.location)
    passed = (~np.isnan(start)) & (~np.isnan(end)) & (start >= result.warmup)
    simulated = end[passed] - start[passed]
    samples = {SIMULATION: simulated, BLUETOOTH: matches.trip_times, CAMERA: camera.trip_times}
    comparison = compare_trip_sources(samples)
    LOG.info("Validation of %s: %d simulated trips, %d device matches, %d camera matches",
            scenario.name, simulated.shape[0], len(matches), len(camera))
    n_first = int(((~np.isnan(start)) & (start >= result.warmup)).sum())
    return ValidationReport(result, raw_logs, logs, matches, camera, simulated, comparison,
            compare_trip_sources(reference_trip_samples()),
            {name: trip_pdf(values, options.pdf_bin) for name, values in samples.items()},
            expected_matches(n_first, first.detection_probability,
                second.detection_probability, first.device_distribution))
