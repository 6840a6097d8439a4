"""Demand bins, per-vehicle arrival schedules and the flow-profile /
interarrival analysis tools used to calibrate them."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd


LOG = logging.getLogger(__name__)

DEFAULT_BIN_WIDTH = 120.

# Published landmarks of the daily RHV flow: one vehicle per minute at the
# trough, four at the peak.
DAY_TROUGH_RATE = 60.
DAY_PEAK_RATE = 240.
DAY_TROUGH_HOUR = 2.125
DAY_PEAK_HOUR = 15.375



@dataclass(frozen=True)
class DemandBins:
    """Per-class vehicle counts in consecutive bins of equal width.

    Args:
        counts (dict): Maps a vehicle class name to a tuple of non-negative
            integer counts, one per bin. Classes may have different numbers
            of bins; missing trailing bins count as zero.
        bin_width (float): The width of each bin in seconds.
    """
    counts: dict = field(default_factory=dict)
    bin_width: float = DEFAULT_BIN_WIDTH

    @property
    def n_bins(self) -> int:
        return max((len(c) for c in self.counts.values()), default=0)

    @property
    def span(self) -> float:
        """Time covered by the bins in seconds."""
        return self.n_bins * self.bin_width

    def total(self, vehicle_class = None) -> int:
        if vehicle_class is not None:
            return int(sum(self.counts.get(vehicle_class, ())))
        return int(sum(sum(c) for c in self.counts.values()))

    def bin_totals(self) -> np.ndarray:
        """Counts summed over classes, one entry per bin."""
        totals = np.zeros(self.n_bins, dtype=np.int64)
        for class_counts in self.counts.values():
            totals[:len(class_counts)] += np.asarray(class_counts, dtype=np.int64)
        return totals

    def validate(self, path: str = "demand") -> list:
        """Returns a list of error strings (empty if the bins are valid)."""
        errors = []
        if not self.bin_width > 0 or not math.isfinite(self.bin_width):
            errors.append(f"{path}.bin_width: must be a finite number > 0, got {self.bin_width}")
        for class_name, class_counts in sorted(self.counts.items()):
            for i, count in enumerate(class_counts):
                if isinstance(count, bool) or not isinstance(count, (int, np.integer)):
                    errors.append(f"{path}.counts.{class_name}[{i}]: must be an integer, got {count!r}")
                elif count < 0:
                    errors.append(f"{path}.counts.{class_name}[{i}]: must be >= 0, got {count}")
        return errors

    def to_frame(self) -> pd.DataFrame:
        rows = [(i, class_name, int(count)) for class_name, class_counts in
                sorted(self.counts.items()) for i, count in enumerate(class_counts)]
        return pd.DataFrame(rows, columns=["bin_index", "class", "count"])

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path, bin_width: float = DEFAULT_BIN_WIDTH):
        """Reads a `bin_index,class,count` table. Bins absent from the
        table count as zero.

        Raises:
            ValueError: A ValueError is raised if the table is missing a
                column or holds negative or duplicated bins.
        """
        frame = pd.read_csv(path, comment="#")
        missing = {"bin_index", "class", "count"} - set(frame.columns)
        if missing:
            raise ValueError(f"Demand table is missing columns {sorted(missing)}.")
        if frame.duplicated(["bin_index", "class"]).any():
            raise ValueError("Demand table lists the same (bin_index, class) twice.")
        if (frame["bin_index"] < 0).any():
            raise ValueError("Demand table has a negative bin_index.")
        counts = {}
        for class_name, group in frame.groupby("class", sort=True):
            class_counts = np.zeros(int(group["bin_index"].max()) + 1, dtype=np.int64)
            class_counts[group["bin_index"].to_numpy()] = group["count"].to_numpy()
            counts[str(class_name)] = tuple(int(c) for c in class_counts)
        bins = cls(counts, float(bin_width))
        errors = bins.validate()
        if errors:
            raise ValueError("; ".join(errors))
        return bins



@dataclass(frozen=True, eq=False)
class ArrivalSchedule:
    """Per-vehicle entry timestamps sorted by (timestamp, vehicle_id).

    Args:
        timestamps (np.ndarray): Float array of entry times in seconds.
        classes (np.ndarray): Object array of vehicle class names.
        vehicle_ids (np.ndarray): Dense integer ids 0..n-1 in entry order.
        bin_width (float): Width of the demand bins the schedule was
            generated from.
    """
    timestamps: np.ndarray
    classes: np.ndarray
    vehicle_ids: np.ndarray
    bin_width: float = DEFAULT_BIN_WIDTH

    def __len__(self):
        return int(self.timestamps.shape[0])

    def bin_counts(self, vehicle_class = None) -> np.ndarray:
        """Number of scheduled vehicles per demand bin."""
        times = self.timestamps
        if vehicle_class is not None:
            times = times[self.classes == vehicle_class]
        if times.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return np.bincount(np.floor(times / self.bin_width).astype(np.int64))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"timestamp_s": self.timestamps,
            "class": self.classes, "vehicle_id": self.vehicle_ids})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.6f")

    def same_as(self, other) -> bool:
        return (np.array_equal(self.timestamps, other.timestamps) and
                np.array_equal(self.classes, other.classes) and
                np.array_equal(self.vehicle_ids, other.vehicle_ids))



@dataclass(frozen=True, eq=False)
class FlowSeries:
    """Vehicle counts in consecutive windows starting at time zero."""
    window: float
    counts: np.ndarray

    def __len__(self):
        return int(self.counts.shape[0])

    @property
    def rates(self) -> np.ndarray:
        """Counts converted to vehicles / hour."""
        return self.counts * (3600. / self.window)

    def peak_to_trough(self) -> float:
        if len(self) == 0 or self.counts.min() == 0:
            return math.inf
        return float(self.counts.max() / self.counts.min())



@dataclass(frozen=True, eq=False)
class Histogram:
    """A histogram over equal-width bins. `starts` holds the left edge of
    each bin and `values` either counts or probability masses."""
    bin_width: float
    starts: np.ndarray
    values: np.ndarray

    def __len__(self):
        return int(self.values.shape[0])

    def total(self) -> float:
        return float(self.values.sum())

    def mean(self) -> float:
        """Mean of the histogram taking each bin at its midpoint."""
        if len(self) == 0 or self.total() == 0:
            return math.nan
        midpoints = self.starts + 0.5 * self.bin_width
        return float((midpoints * self.values).sum() / self.total())

    def to_frame(self, value_name: str = "mass") -> pd.DataFrame:
        return pd.DataFrame({"bin_start_s": self.starts, value_name: self.values})



def arrivals_from_bins(bins: DemandBins, rng: np.random.Generator) -> ArrivalSchedule:
    """Places exactly the requested number of vehicles in every bin. Within
    a bin the N entry times are the order statistics of N uniforms on the
    bin, i.e. a Poisson process conditioned on its count.

    Args:
        bins (DemandBins): The per-class demand.
        rng (np.random.Generator): The arrivals substream.

    Returns:
        schedule (ArrivalSchedule): The sorted schedule.

    Raises:
        ValueError: A ValueError is raised if the bins are invalid.
    """
    errors = bins.validate()
    if errors:
        raise ValueError("; ".join(errors))

    all_times, all_classes = [], []
    # Classes are drawn in sorted order so the stream layout does not depend
    # on dict insertion order.
    for class_name in sorted(bins.counts):
        class_counts = np.asarray(bins.counts[class_name], dtype=np.int64)
        n_vehicles = int(class_counts.sum())
        if n_vehicles == 0:
            continue
        starts = np.repeat(np.arange(class_counts.shape[0]) * bins.bin_width,
                class_counts)
        all_times.append(starts + rng.random(n_vehicles) * bins.bin_width)
        all_classes.append(np.full(n_vehicles, class_name, dtype=object))

    if not all_times:
        return ArrivalSchedule(np.zeros(0), np.zeros(0, dtype=object),
                np.zeros(0, dtype=np.int64), bins.bin_width)

    times = np.concatenate(all_times)
    classes = np.concatenate(all_classes)
    order = np.argsort(times, kind="stable")
    return ArrivalSchedule(times[order], classes[order],
            np.arange(times.shape[0], dtype=np.int64), bins.bin_width)


def constant_rate_bins(rates: dict, duration: float,
        bin_width: float = DEFAULT_BIN_WIDTH) -> DemandBins:
    """Builds bins carrying constant per-class rates (vehicles / hour).
    Fractional expected counts are carried forward so that the cumulative
    count after every bin is the rounded cumulative expectation.

    Args:
        rates (dict): Maps class name to vehicles / hour.
        duration (float): Demand duration in seconds.
        bin_width (float): Bin width in seconds.
    """
    if duration < 0 or bin_width <= 0:
        raise ValueError("duration must be >= 0 and bin_width > 0.")
    n_bins = int(math.ceil(duration / bin_width - 1e-9))
    counts = {}
    for class_name, rate in rates.items():
        if rate < 0:
            raise ValueError(f"Rate for {class_name} must be >= 0.")
        bin_ends = np.minimum(np.arange(1, n_bins + 1) * bin_width, duration)
        cumulative = np.floor(rate * bin_ends / 3600. + 0.5).astype(np.int64)
        counts[class_name] = tuple(int(c) for c in np.diff(cumulative, prepend=0))
    return DemandBins(counts, float(bin_width))


def day_profile_rate(hour):
    """Vehicles / hour of the daily RHV profile at the given hour(s) of day:
    a raised cosine that rises from the 02:00-02:15 trough to the
    15:15-15:30 peak and falls back over the rest of the day."""
    hour = np.mod(np.asarray(hour, dtype=np.float64) - DAY_TROUGH_HOUR, 24.)
    rise = DAY_PEAK_HOUR - DAY_TROUGH_HOUR
    shape = np.where(hour <= rise, 0.5 - 0.5 * np.cos(np.pi * hour / rise),
            0.5 + 0.5 * np.cos(np.pi * (hour - rise) / (24. - rise)))
    return DAY_TROUGH_RATE + (DAY_PEAK_RATE - DAY_TROUGH_RATE) * shape


def day_profile_bins(vehicle_class: str = "RHV",
        bin_width: float = DEFAULT_BIN_WIDTH) -> DemandBins:
    """A 24 hour demand whose 15 minute flows reproduce the published daily
    shape (trough 02:00-02:15, peak 15:15-15:30, peak about four times the
    trough). Counts use the same carry-forward rounding as
    `constant_rate_bins`."""
    n_bins = int(round(86400. / bin_width))
    bin_ends = np.arange(1, n_bins + 1) * bin_width
    # Integrate the rate with the trapezoid rule on a fine grid.
    grid = np.linspace(0., 86400., 86400 + 1)
    rate_per_s = day_profile_rate(grid / 3600.) / 3600.
    cumulative_expected = np.concatenate([[0.], np.cumsum(0.5 *
        (rate_per_s[1:] + rate_per_s[:-1]))])
    cumulative = np.floor(cumulative_expected[bin_ends.astype(np.int64)] + 0.5).astype(np.int64)
    counts = np.diff(cumulative, prepend=0)
    return DemandBins({vehicle_class: tuple(int(c) for c in counts)}, float(bin_width))


def rate_profile(schedule: ArrivalSchedule, window: float) -> FlowSeries:
    """Counts vehicles in consecutive windows covering the schedule span.

    Args:
        schedule (ArrivalSchedule): The schedule to aggregate.
        window (float): Window width in seconds (900 for the usual
            15 minute flows).

    Raises:
        ValueError: If window is not > 0.
    """
    if not window > 0:
        raise ValueError(f"window must be > 0, got {window}.")
    if len(schedule) == 0:
        return FlowSeries(float(window), np.zeros(0, dtype=np.int64))
    window_index = np.floor(schedule.timestamps / window).astype(np.int64)
    return FlowSeries(float(window), np.bincount(window_index))


def interarrival_histogram(schedule: ArrivalSchedule, bin_width: float) -> Histogram:
    """Histogram of successive entry-time differences (counts, not
    normalized). The counts sum to max(len(schedule) - 1, 0)."""
    if not bin_width > 0:
        raise ValueError(f"bin width must be > 0, got {bin_width}.")
    gaps = np.diff(schedule.timestamps)
    if gaps.shape[0] == 0:
        return Histogram(float(bin_width), np.zeros(0), np.zeros(0, dtype=np.int64))
    counts = np.bincount(np.floor(gaps / bin_width).astype(np.int64))
    return Histogram(float(bin_width), np.arange(counts.shape[0]) * bin_width, counts)


def cumulative_arrivals(schedule: ArrivalSchedule):
    """The cumulative arrival step curve. Its slope over an interval is the
    arrival rate in that interval.

    Returns:
        times (np.ndarray): Entry times.
        cumulative (np.ndarray): Number of vehicles that entered at or
            before each time.
    """
    return schedule.timestamps.copy(), np.arange(1, len(schedule) + 1)
