"""The outcome of one simulation run and its CSV / manifest exports."""
from __future__ import annotations

import enum
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
import yaml


FLOAT_FORMAT = "%.6f"



class EventKind(enum.IntEnum):
    ARRIVAL = 0
    ADMIT_FROM_STACK = 1
    JOIN_QUEUE = 2
    BEGIN_SERVICE = 3
    END_SERVICE = 4
    EXIT = 5


class Event(NamedTuple):
    """One logged event. (time, seq) is unique and orders the log."""
    time: float
    seq: int
    kind: EventKind
    vehicle_id: int
    location: str



@dataclass(eq=False)
class StationRecord:
    """Per-vehicle passage data at one station, indexed by vehicle id.
    Times are NaN where the vehicle never reached that step; `lane` is the
    1-based lane used, 0 for a bypass and -1 if the vehicle never got
    there."""
    station: str
    lane_count: int
    join: np.ndarray
    begin: np.ndarray
    end: np.ndarray
    exit: np.ndarray
    lane: np.ndarray

    @classmethod
    def empty(cls, station: str, lane_count: int, n_vehicles: int):
        def nan_array():
            return np.full(n_vehicles, np.nan)
        return cls(station, lane_count, nan_array(), nan_array(), nan_array(), nan_array(),
                np.full(n_vehicles, -1, dtype=np.int64))

    def lane_tallies(self, begun_after: float = -math.inf) -> np.ndarray:
        """Completed services per lane (lane 1 first), counting only
        services that began at or after `begun_after`."""
        served = (~np.isnan(self.end)) & (self.lane > 0) & (self.begin >= begun_after)
        return np.bincount(self.lane[served] - 1, minlength=self.lane_count).astype(np.int64)



@dataclass(eq=False)
class RunResult:
    """Everything one run produced.

    Args:
        scenario_name (str): Name of the simulated scenario.
        scenario_hash (str): Content hash of the scenario.
        policy (str): Name of the routing policy.
        seed (int): Master seed.
        warmup (float): Warm-up boundary used by the metrics, in seconds.
        horizon (float): Scenario horizon in seconds.
        drained (bool): True if the run continued until the system emptied.
        end_time (float): Time of the last processed event.
        vehicle_classes (np.ndarray): Class name per vehicle id.
        scheduled (np.ndarray): Scheduled entry time per vehicle id.
        admitted (np.ndarray): Admission time into the entry segment (NaN if
            still stacked at the end).
        exited (np.ndarray): Time the vehicle reached the sink (NaN if still
            in the system).
        stations (dict): StationRecord per station id, in travel order.
        sample_times (np.ndarray): Queue sample times in seconds.
        queue_series (dict): Per station id, an array of shape
            (samples, lane_count + 1) holding queued meters. Column 0 is the
            queue ahead of the lane split (standing vehicles on the approach
            segment plus, for shared stations, the common queue); columns
            1.. hold the vehicles waiting in each lane.
        stack_series (np.ndarray): Number of stacked vehicles per sample.
        routed_station (str): Station whose lane the trips export reports.
        events (list): The Event log, if it was recorded.
    """
    scenario_name: str
    scenario_hash: str
    policy: str
    seed: int
    warmup: float
    horizon: float
    drained: bool
    end_time: float
    vehicle_classes: np.ndarray
    scheduled: np.ndarray
    admitted: np.ndarray
    exited: np.ndarray
    stations: dict
    sample_times: np.ndarray
    queue_series: dict
    stack_series: np.ndarray
    routed_station: str = None
    events: list = field(default_factory=list)

    @property
    def n_scheduled(self) -> int:
        return int(self.scheduled.shape[0])

    @property
    def n_admitted(self) -> int:
        return int((~np.isnan(self.admitted)).sum())

    @property
    def n_exited(self) -> int:
        return int((~np.isnan(self.exited)).sum())

    @property
    def n_stacked_at_end(self) -> int:
        return self.n_scheduled - self.n_admitted

    @property
    def n_in_system_at_end(self) -> int:
        return self.n_admitted - self.n_exited

    @property
    def in_system_at_end(self) -> np.ndarray:
        """Marker per vehicle id: admitted but not at the sink."""
        return (~np.isnan(self.admitted)) & np.isnan(self.exited)

    def lane_tallies(self, station: str, begun_after: float = -math.inf) -> np.ndarray:
        return self.station_record(station).lane_tallies(begun_after)

    def station_record(self, station: str) -> StationRecord:
        if station not in self.stations:
            raise ValueError(f"Station {station!r} is not part of this run; "
                    f"stations are {list(self.stations)}.")
        return self.stations[station]

    def measurement_points(self) -> tuple:
        return ("source",) + tuple(f"{s}.exit" for s in self.stations) + ("sink",)

    def passage_times(self, point: str) -> np.ndarray:
        """Time each vehicle passed a measurement point (`source`,
        `<station>.exit` or `sink`), NaN where it did not."""
        if point == "source":
            return self.admitted
        if point == "sink":
            return self.exited
        if point.endswith(".exit") and point[:-len(".exit")] in self.stations:
            return self.stations[point[:-len(".exit")]].exit
        raise ValueError(f"Unknown measurement point {point!r}; expected one of "
                f"{self.measurement_points()}.")

    def station_queue(self, station: str) -> np.ndarray:
        """Total queued meters at a station per sample."""
        if station not in self.queue_series:
            raise ValueError(f"Station {station!r} is not part of this run.")
        return self.queue_series[station].sum(axis=1)

    def check_conservation(self, in_system: int = None, stacked: int = None):
        """Raises a RuntimeError unless scheduled = admitted + stacked and
        admitted = exited + in system. The engine passes the vehicles it
        still holds in the network and in the stack; otherwise the counts
        implied by the per-vehicle records are used."""
        in_system = self.n_in_system_at_end if in_system is None else in_system
        stacked = self.n_stacked_at_end if stacked is None else stacked
        if self.n_admitted != self.n_exited + in_system or \
                self.n_scheduled != self.n_admitted + stacked:
            raise RuntimeError(f"Vehicle conservation failed: scheduled {self.n_scheduled}, "
                    f"admitted {self.n_admitted}, exited {self.n_exited}, in system "
                    f"{in_system}.")
        if np.any(~np.isnan(self.exited) & np.isnan(self.admitted)):
            raise RuntimeError("A vehicle reached the sink without being admitted.")

    def header(self) -> str:
        return f"# scenario_hash={self.scenario_hash},policy={self.policy},seed={self.seed}\n"

    def trips_frame(self, routed_station: str = None) -> pd.DataFrame:
        """One row per scheduled vehicle: `vehicle_id,class,lane_weighbridge,
        enter_s,exit_s,trip_s`. The lane column holds the lane used at the
        routed station (0 for a bypass, empty if not reached)."""
        routed_station = routed_station or self.routed_station
        if routed_station is not None:
            lanes = self.stations[routed_station].lane
            lane_column = pd.array(np.where(lanes >= 0, lanes, 0), dtype="Int64")
            lane_column[lanes < 0] = pd.NA
        else:
            lane_column = pd.array([pd.NA] * self.n_scheduled, dtype="Int64")
        return pd.DataFrame({"vehicle_id": np.arange(self.n_scheduled),
            "class": self.vehicle_classes, "lane_weighbridge": lane_column,
            "enter_s": self.admitted, "exit_s": self.exited,
            "trip_s": self.exited - self.admitted})

    def queue_frame(self) -> pd.DataFrame:
        """Long-format queue series: `time_s,station,lane,queue_m`."""
        frames = []
        for station, series in self.queue_series.items():
            n_samples, n_columns = series.shape
            frames.append(pd.DataFrame({"time_s": np.repeat(self.sample_times, n_columns),
                "station": station, "lane": np.tile(np.arange(n_columns), n_samples),
                "queue_m": series.reshape(-1)}))
        if not frames:
            return pd.DataFrame(columns=["time_s", "station", "lane", "queue_m"])
        return pd.concat(frames, ignore_index=True)

    def events_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.events, columns=list(Event._fields)).assign(
                kind=lambda frame: [EventKind(k).name for k in frame["kind"]])

    def manifest(self) -> dict:
        return {"scenario": self.scenario_name, "scenario_hash": self.scenario_hash,
                "policy": self.policy, "seed": self.seed, "warmup_s": self.warmup,
                "horizon_s": self.horizon, "drained": self.drained,
                "end_time_s": round(float(self.end_time), 6),
                "vehicles": {"scheduled": self.n_scheduled, "admitted": self.n_admitted,
                    "exited": self.n_exited, "stacked_at_end": self.n_stacked_at_end,
                    "in_system_at_end": self.n_in_system_at_end}}

    def write_trips_csv(self, path, routed_station: str = None):
        write_csv(self.trips_frame(routed_station), path, self.header())

    def write_queue_csv(self, path):
        write_csv(self.queue_frame(), path, self.header())

    def write_manifest(self, path, extra: dict = None):
        document = self.manifest()
        document.update(extra or {})
        write_text(yaml.safe_dump(document, sort_keys=True), path)



def frame_to_text(frame: pd.DataFrame, header: str = "") -> str:
    buffer = io.StringIO()
    buffer.write(header)
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return buffer.getvalue()


def write_text(text: str, path):
    """Writes text atomically: to a temporary file in the target directory,
    then renamed over the target."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fhandle:
            fhandle.write(text)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise


def write_csv(frame: pd.DataFrame, path, header: str = ""):
    write_text(frame_to_text(frame, header), path)
