"""Partial detection of vehicles at monitoring sites: device assignment,
per-site thinning, deduplication of co-travelling devices and cross-site
matching into trips."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import pandas as pd

from ..sim_engine.results import write_csv


LOG = logging.getLogger(__name__)

# A vehicle carries at most this many devices; device k of vehicle v has
# the id v * MAX_DEVICES + k.
MAX_DEVICES = 2



class DetectionEvent(NamedTuple):
    site: str
    device_id: int
    vehicle_id: int
    timestamp: float


@dataclass(eq=False)
class DetectionLog:
    """Detections at one site, sorted by (timestamp, device_id). The
    vehicle ids are hidden ground truth and are not exported."""
    site: str
    device_ids: np.ndarray
    vehicle_ids: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.device_ids = np.asarray(self.device_ids, dtype=np.int64)
        self.vehicle_ids = np.asarray(self.vehicle_ids, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        order = np.lexsort((self.device_ids, self.timestamps))
        self.device_ids = self.device_ids[order]
        self.vehicle_ids = self.vehicle_ids[order]
        self.timestamps = self.timestamps[order]

    @classmethod
    def empty(cls, site: str):
        return cls(site, np.zeros(0), np.zeros(0), np.zeros(0))

    def __len__(self):
        return int(self.device_ids.shape[0])

    def __iter__(self):
        for device, vehicle, time in zip(self.device_ids, self.vehicle_ids, self.timestamps):
            yield DetectionEvent(self.site, int(device), int(vehicle), float(time))

    def same_as(self, other) -> bool:
        return self.site == other.site and np.array_equal(self.device_ids, other.device_ids) \
                and np.array_equal(self.timestamps, other.timestamps)

    def to_frame(self) -> pd.DataFrame:
        """Columns `site,device_id,timestamp_s`."""
        return pd.DataFrame({"site": [self.site] * len(self), "device_id": self.device_ids,
            "timestamp_s": self.timestamps})

    def to_csv(self, path, header: str = ""):
        write_csv(self.to_frame(), path, header)


@dataclass(eq=False)
class MatchedTrips:
    """Devices seen at both sites with their passage times, one row per
    device, sorted by device id."""
    device_ids: np.ndarray
    vehicle_ids: np.ndarray
    t1: np.ndarray
    t2: np.ndarray

    def __len__(self):
        return int(self.device_ids.shape[0])

    @property
    def trip_times(self) -> np.ndarray:
        return self.t2 - self.t1

    def to_frame(self) -> pd.DataFrame:
        """Columns `device_id,t1_s,t2_s,trip_s`."""
        return pd.DataFrame({"device_id": self.device_ids, "t1_s": self.t1, "t2_s": self.t2,
            "trip_s": self.trip_times})

    def to_csv(self, path, header: str = ""):
        write_csv(self.to_frame(), path, header)



def assign_devices(n_vehicles: int, distribution: dict, rng: np.random.Generator) -> np.ndarray:
    """Number of detectable devices carried by each vehicle, drawn once per
    vehicle so the same vehicle carries the same devices past every site.

    Args:
        n_vehicles (int): Number of vehicles (ids 0..n-1).
        distribution (dict): Maps a device count (0, 1 or 2) to its
            probability.
        rng (np.random.Generator): Detection substream (child 0).
    """
    counts = np.array(sorted(distribution), dtype=np.int64)
    probabilities = np.array([distribution[c] for c in counts], dtype=np.float64)
    return rng.choice(counts, size=n_vehicles, p=probabilities / probabilities.sum())


def simulate_detections(result, site, rng: np.random.Generator,
        devices: np.ndarray = None, observe_from: float = 0.) -> DetectionLog:
    """Thins the passages of vehicles at the site's location into
    detections. Every device of a passing vehicle is detected independently
    with the site's detection probability, at the vehicle's passage time.
    One uniform is drawn per (vehicle, device slot) whether or not the
    vehicle passed, keeping the stream aligned between runs.

    Args:
        result (RunResult): The simulated run.
        site (DetectorSite): The monitoring site.
        rng (np.random.Generator): The site's detection substream.
        devices (np.ndarray): Devices per vehicle id. Defaults to one
            device per vehicle.
        observe_from (float): Passages before this time are not observed.

    Raises:
        ValueError: If the site's location is not a measurement point of the
            run.
    """
    passage = result.passage_times(site.location)
    n_vehicles = passage.shape[0]
    if devices is None:
        devices = np.ones(n_vehicles, dtype=np.int64)
    if devices.shape[0] != n_vehicles:
        raise ValueError(f"Device counts cover {devices.shape[0]} vehicles, the run has "
                f"{n_vehicles}.")
    draws = rng.random((n_vehicles, MAX_DEVICES))
    slots = np.arange(MAX_DEVICES)[None, :] < devices[:, None]
    observed = ~np.isnan(passage) & (passage >= observe_from)
    detected = slots & (draws < site.detection_probability) & observed[:, None]
    vehicles, slot = np.nonzero(detected)
    LOG.debug("Site %s detected %d devices", site.id, vehicles.shape[0])
    return DetectionLog(site.id, vehicles * MAX_DEVICES + slot, vehicles, passage[vehicles])


def dedupe(log: DetectionLog, window: float) -> DetectionLog:
    """Merges detections of devices travelling in the same vehicle: within
    each vehicle's detections at the site, an event no more than `window`
    seconds after the last kept one is dropped. A window of 0 leaves the
    log unchanged.

    Raises:
        ValueError: If window is negative.
    """
    if window < 0:
        raise ValueError(f"The dedupe window must be >= 0, got {window}.")
    if window == 0 or len(log) == 0:
        return DetectionLog(log.site, log.device_ids, log.vehicle_ids, log.timestamps)
    order = np.lexsort((log.device_ids, log.timestamps, log.vehicle_ids))
    keep = np.zeros(len(log), dtype=bool)
    last_vehicle, last_kept = None, None
    for index in order:
        vehicle, time = log.vehicle_ids[index], log.timestamps[index]
        if vehicle != last_vehicle or time - last_kept > window:
            keep[index] = True
            last_vehicle, last_kept = vehicle, time
    return DetectionLog(log.site, log.device_ids[keep], log.vehicle_ids[keep],
            log.timestamps[keep])


def match_trips(log1: DetectionLog, log2: DetectionLog, max_trip: float) -> MatchedTrips:
    """Pairs detections of the same device at the two sites with
    0 < t2 - t1 <= max_trip, keeping the earliest such pair per device.

    Raises:
        ValueError: If both logs come from the same site or max_trip <= 0.
    """
    if log1.site == log2.site:
        raise ValueError(f"Both logs come from site {log1.site!r}.")
    if not max_trip > 0:
        raise ValueError(f"max_trip must be > 0, got {max_trip}.")
    first = pd.DataFrame({"device_id": log1.device_ids, "vehicle_id": log1.vehicle_ids,
        "t1": log1.timestamps})
    second = pd.DataFrame({"device_id": log2.device_ids, "t2": log2.timestamps})
    pairs = first.merge(second, on="device_id", how="inner")
    trip = pairs["t2"] - pairs["t1"]
    pairs = pairs[(trip > 0) & (trip <= max_trip)]
    pairs = pairs.sort_values(["device_id", "t1", "t2"], kind="mergesort") \
            .drop_duplicates("device_id", keep="first")
    return MatchedTrips(pairs["device_id"].to_numpy(np.int64),
            pairs["vehicle_id"].to_numpy(np.int64), pairs["t1"].to_numpy(np.float64),
            pairs["t2"].to_numpy(np.float64))


def camera_matches(result, from_point: str, to_point: str, fraction: float,
        rng: np.random.Generator, observe_from: float = 0.) -> MatchedTrips:
    """Trips observed by plate matching: each vehicle that passed both
    points, passing the first at or after `observe_from`, is observed with
    probability `fraction`. The device id is the vehicle id.

    Raises:
        ValueError: If fraction is outside (0, 1].
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"The camera fraction must lie in (0, 1], got {fraction}.")
    start, end = result.passage_times(from_point), result.passage_times(to_point)
    draws = rng.random(start.shape[0])
    seen = (~np.isnan(start)) & (~np.isnan(end)) & (start >= observe_from) & \
            (draws < fraction)
    vehicles = np.nonzero(seen)[0]
    return MatchedTrips(vehicles.astype(np.int64), vehicles.astype(np.int64), start[vehicles],
            end[vehicles])


def expected_detections(n_passages: int, probability: float, distribution: dict = None) -> float:
    """E[|log|] = n * E[devices] * p."""
    return n_passages * mean_devices(distribution) * probability


def expected_matches(n_passages: int, p1: float, p2: float, distribution: dict = None) -> float:
    """Expected device matches under independent per-site detection and no
    deduplication: n * E[devices] * p1 * p2."""
    return n_passages * mean_devices(distribution) * p1 * p2


def mean_devices(distribution: dict = None) -> float:
    if distribution is None:
        return 1.
    return float(sum(count * p for count, p in distribution.items()))
