"""Corridor scenarios: vehicle classes, stations, segments, demand and the
calibration / detector inputs, loaded from YAML (or JSON) documents and
validated in one pass so that every problem is reported together."""
from __future__ import annotations

import dataclasses
import functools
import hashlib
import logging
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .arrivals import DemandBins, DEFAULT_BIN_WIDTH, constant_rate_bins
from .routing_policies import (FlowBand, DEFAULT_BANDS, OccupancyTable, DriverProfile,
        RoutingConfig, share_errors)


LOG = logging.getLogger(__name__)

VEHICLE_CLASSES = ("RHV", "Tourist")
STATION_KINDS = ("PassportCheck", "Weighbridge", "Ticketing", "SecurityCheck")
DISTRIBUTIONS = ("NormalTruncated", "Deterministic", "Exponential")
QUEUE_MODES = ("lanes", "shared")

DEFAULT_EFFECTIVE_LENGTHS = {"RHV": 17.0, "Tourist": 6.0}
DEFAULT_WARMUP = 900.
DEFAULT_SAMPLE_INTERVAL = 10.
DEFAULT_RATE_WINDOW = 900.
DEFAULT_DEDUPE_WINDOW = 5.
DEFAULT_MAX_TRIP = 3600.
DEFAULT_PDF_BIN = 60.
DEFAULT_DEVICE_DISTRIBUTION = {0: 0.25, 1: 0.60, 2: 0.15}

SOURCE, SINK = "source", "sink"



class ScenarioError(ValueError):
    """A scenario violates one or more invariants. `errors` holds every
    problem found as a "<field path>: <message>" string."""

    def __init__(self, errors, source = None):
        self.errors = list(errors)
        where = f" ({source})" if source else ""
        super().__init__(f"Invalid scenario{where}:\n  " + "\n  ".join(self.errors))


class ScenarioParseError(ScenarioError):
    """The document is not a scenario at all (empty, malformed YAML or not a
    mapping)."""



@dataclass(frozen=True)
class VehicleClass:
    """A vehicle class. effective_length is the vehicle length plus the
    standstill gap, in meters."""
    name: str
    effective_length: float
    visits_weighbridge: bool
    visits_tourist_checkin: bool = True

    def validate(self, path: str) -> list:
        errors = []
        if self.name not in VEHICLE_CLASSES:
            errors.append(f"{path}: unknown vehicle class, expected one of {VEHICLE_CLASSES}")
        if not self.effective_length > 0 or not math.isfinite(self.effective_length):
            errors.append(f"{path}.effective_length: must be > 0, got {self.effective_length}")
        if self.name == "RHV" and not self.visits_weighbridge:
            errors.append(f"{path}.visits_weighbridge: every RHV must stop at the weighbridge")
        if self.name == "Tourist" and self.visits_weighbridge:
            errors.append(f"{path}.visits_weighbridge: tourists bypass the weighbridge")
        return errors


@dataclass(frozen=True)
class ServiceModel:
    """Service time distribution of a station plus its random security
    check. For Deterministic service `mean` holds the fixed value; `sd` is
    only used by NormalTruncated."""
    distribution: str
    mean: float
    sd: float = 0.
    security_check_probability: float = 0.
    security_check_delay: float = 0.
    calibrated: bool = True

    def validate(self, path: str) -> list:
        errors = []
        if self.distribution not in DISTRIBUTIONS:
            errors.append(f"{path}.distribution: must be one of {DISTRIBUTIONS}, "
                    f"got {self.distribution!r}")
        if not self.mean > 0 or not math.isfinite(self.mean):
            errors.append(f"{path}.mean: must be > 0, got {self.mean}")
        if not self.sd >= 0 or not math.isfinite(self.sd):
            errors.append(f"{path}.sd: must be >= 0, got {self.sd}")
        if not 0 <= self.security_check_probability <= 1:
            errors.append(f"{path}.security_check_probability: must lie in [0, 1], "
                    f"got {self.security_check_probability}")
        if not self.security_check_delay >= 0 or not math.isfinite(self.security_check_delay):
            errors.append(f"{path}.security_check_delay: must be >= 0, "
                    f"got {self.security_check_delay}")
        return errors


@dataclass(frozen=True)
class Station:
    """A multi-lane station.

    Args:
        id (str): Station name; also the prefix of its exit measurement point.
        kind (str): One of STATION_KINDS.
        lane_count (int): Number of lanes (servers).
        service (ServiceModel): Service time model.
        admissible (dict): Maps each class name to a tuple of 1-based lanes
            it may use. An empty tuple means the class bypasses the station.
        approach_capacity (float): Storage in meters per lane, counting the
            vehicle in service.
        queue_mode (str): "lanes" for one FIFO per lane, "shared" for one
            FIFO feeding every lane.
    """
    id: str
    kind: str
    lane_count: int
    service: ServiceModel
    admissible: dict
    approach_capacity: float
    queue_mode: str = "lanes"

    @property
    def exit_point(self) -> str:
        return f"{self.id}.exit"

    @property
    def storage(self) -> float:
        """Total storage of the station in meters."""
        return self.lane_count * self.approach_capacity

    def bypassed_by(self, class_name: str) -> bool:
        return len(self.admissible.get(class_name, ())) == 0

    def validate(self, classes: dict, path: str) -> list:
        errors = []
        if self.kind not in STATION_KINDS:
            errors.append(f"{path}.kind: must be one of {STATION_KINDS}, got {self.kind!r}")
        if isinstance(self.lane_count, bool) or not isinstance(self.lane_count, (int, np.integer)) \
                or self.lane_count < 1:
            errors.append(f"{path}.lane_count: must be an integer >= 1, got {self.lane_count!r}")
            return errors + self.service.validate(f"{path}.service")
        if not self.approach_capacity > 0 or not math.isfinite(self.approach_capacity):
            errors.append(f"{path}.approach_capacity: must be > 0, got {self.approach_capacity}")
        if self.queue_mode not in QUEUE_MODES:
            errors.append(f"{path}.queue_mode: must be one of {QUEUE_MODES}, got {self.queue_mode!r}")
        errors += self.service.validate(f"{path}.service")
        for class_name, lanes in sorted(self.admissible.items()):
            lane_path = f"{path}.admissible.{class_name}"
            if class_name not in classes:
                errors.append(f"{lane_path}: unknown vehicle class")
                continue
            for lane in lanes:
                if not 1 <= lane <= self.lane_count:
                    errors.append(f"{lane_path}: lane {lane} outside 1..{self.lane_count}")
            if len(set(lanes)) != len(lanes):
                errors.append(f"{lane_path}: lanes listed more than once")
            vehicle_class = classes[class_name]
            if not lanes and not _may_bypass(self.kind, vehicle_class):
                errors.append(f"{lane_path}: must list at least one lane")
            if lanes and self.kind == "Weighbridge" and not vehicle_class.visits_weighbridge:
                errors.append(f"{lane_path}: {class_name} does not visit the weighbridge")
            if lanes and self.approach_capacity < vehicle_class.effective_length:
                errors.append(f"{path}.approach_capacity: {self.approach_capacity} m cannot "
                        f"hold one {class_name} ({vehicle_class.effective_length} m)")
        return errors


def _may_bypass(kind: str, vehicle_class: VehicleClass) -> bool:
    if kind == "Weighbridge":
        return not vehicle_class.visits_weighbridge
    if kind == "Ticketing":
        return not vehicle_class.visits_tourist_checkin
    return False


@dataclass(frozen=True)
class Segment:
    """A link between two nodes (a station id, `source` or `sink`),
    traversed in free_flow_time seconds and holding storage_capacity meters
    of vehicles."""
    id: str
    source: str
    target: str
    free_flow_time: float
    storage_capacity: float

    def validate(self, path: str) -> list:
        errors = []
        if not self.free_flow_time > 0 or not math.isfinite(self.free_flow_time):
            errors.append(f"{path}.free_flow_time: must be > 0, got {self.free_flow_time}")
        if not self.storage_capacity > 0 or not math.isfinite(self.storage_capacity):
            errors.append(f"{path}.storage_capacity: must be > 0, got {self.storage_capacity}")
        return errors



@dataclass(frozen=True)
class FlowProfiles:
    """The constant-rate demand profiles of the policy experiment."""
    rates: tuple
    duration: float
    vehicle_class: str = "RHV"


@dataclass(frozen=True)
class CalibrationTargets:
    """Reference ("observed") data the simulation is compared with.

    Args:
        station (str): Station whose lane shares are compared.
        observed_shares (OccupancyTable): Observed lane shares per flow band.
        average_shares (tuple): Observed all-flows lane shares.
        trip_from (str): Start measurement point of the reference trip.
        trip_to (str): End measurement point of the reference trip.
        trip_reference_mean (dict): Observed mean trip time per band label.
    """
    station: str
    observed_shares: OccupancyTable
    average_shares: tuple
    trip_from: str
    trip_to: str
    trip_reference_mean: dict


@dataclass(frozen=True)
class DetectorSite:
    """A partial-detection monitoring site at a measurement point. The
    device-count distribution maps devices per vehicle (0, 1 or 2) to a
    probability and is shared by every site."""
    id: str
    location: str
    detection_probability: float
    device_distribution: dict = field(
            default_factory=lambda: dict(DEFAULT_DEVICE_DISTRIBUTION))

    def validate(self, path: str) -> list:
        errors = []
        if not 0 <= self.detection_probability <= 1:
            errors.append(f"{path}.detection_probability: must lie in [0, 1], "
                    f"got {self.detection_probability}")
        if not set(self.device_distribution).issubset({0, 1, 2}):
            errors.append(f"{path}.device_distribution: keys must be 0, 1 or 2")
        probabilities = list(self.device_distribution.values())
        if any(not 0 <= p <= 1 for p in probabilities) or \
                abs(math.fsum(probabilities) - 1) > 1e-9:
            errors.append(f"{path}.device_distribution: probabilities must lie "
                    "in [0, 1] and sum to 1")
        return errors


@dataclass(frozen=True)
class ValidationConfig:
    """Options of the detector validation experiment."""
    camera_fraction: float = 0.1
    dedupe_window: float = DEFAULT_DEDUPE_WINDOW
    max_trip: float = DEFAULT_MAX_TRIP
    pdf_bin: float = DEFAULT_PDF_BIN

    def validate(self, path: str) -> list:
        errors = []
        if not 0 < self.camera_fraction <= 1:
            errors.append(f"{path}.camera_fraction: must lie in (0, 1], got {self.camera_fraction}")
        if not self.dedupe_window >= 0:
            errors.append(f"{path}.dedupe_window: must be >= 0, got {self.dedupe_window}")
        if not self.max_trip > 0:
            errors.append(f"{path}.max_trip: must be > 0, got {self.max_trip}")
        if not self.pdf_bin > 0:
            errors.append(f"{path}.pdf_bin: must be > 0, got {self.pdf_bin}")
        return errors



@dataclass(frozen=True)
class NetworkTopology:
    """The resolved source -> sink chain.

    Args:
        nodes (tuple): Node names in travel order, `source` first and `sink`
            last.
        stations (tuple): Stations in travel order.
        segments (tuple): Segments in travel order; segment i leads into
            stations[i] (or the sink for the last one).
        routed_station (str): Id of the station whose lane choice follows
            the routing policy, or None.
    """
    nodes: tuple
    stations: tuple
    segments: tuple
    routed_station: str = None

    @property
    def station_ids(self) -> tuple:
        return tuple(station.id for station in self.stations)

    @property
    def measurement_points(self) -> tuple:
        return (SOURCE,) + tuple(station.exit_point for station in self.stations) + (SINK,)

    def station(self, station_id: str) -> Station:
        for station in self.stations:
            if station.id == station_id:
                return station
        raise ValueError(f"Unknown station {station_id!r}; stations are {self.station_ids}.")

    def station_index(self, station_id: str) -> int:
        return self.station_ids.index(self.station(station_id).id)

    def lanes(self, station_id: str, class_name: str) -> frozenset:
        return frozenset(self.station(station_id).admissible.get(class_name, ()))

    def free_flow_time(self, start: str = SOURCE, end: str = SINK) -> float:
        """Sum of free-flow times between two measurement points."""
        points = self.measurement_points
        if start not in points or end not in points:
            raise ValueError(f"Unknown measurement point; expected one of {points}.")
        first, last = points.index(start), points.index(end)
        return float(sum(segment.free_flow_time for segment in self.segments[first:last]))


@dataclass(frozen=True)
class ScenarioConfig:
    """A complete, validated scenario. Instances are immutable and safe to
    share between concurrent runs; `with_flow_rate` and
    `dataclasses.replace` derive variants."""
    name: str
    classes: tuple
    stations: tuple
    segments: tuple
    demand: DemandBins
    horizon: float
    drain: bool = True
    warmup: float = DEFAULT_WARMUP
    sample_interval: float = DEFAULT_SAMPLE_INTERVAL
    rate_window: float = DEFAULT_RATE_WINDOW
    flow_profiles: FlowProfiles = None
    routing: RoutingConfig = None
    calibration: CalibrationTargets = None
    detectors: tuple = ()
    validation: ValidationConfig = None

    @property
    def bin_width(self) -> float:
        return self.demand.bin_width

    @property
    def class_map(self) -> dict:
        return {vehicle_class.name: vehicle_class for vehicle_class in self.classes}

    @functools.cached_property
    def topology(self) -> NetworkTopology:
        return validate_topology(self)

    def detector(self, site_id: str) -> DetectorSite:
        for site in self.detectors:
            if site.id == site_id:
                return site
        raise ValueError(f"Unknown detector site {site_id!r}.")

    def with_flow_rate(self, rate: float, vehicle_class: str = None):
        """A copy whose demand is the constant-rate profile at `rate`
        vehicles / hour (the flow-profile duration and class apply)."""
        profiles = self.flow_profiles
        if profiles is None:
            raise ValueError(f"Scenario {self.name!r} declares no flow_profiles.")
        if rate not in profiles.rates:
            LOG.info("Rate %s veh/h is not one of the declared flow profiles %s",
                    rate, profiles.rates)
        vehicle_class = vehicle_class or profiles.vehicle_class
        demand = constant_rate_bins({vehicle_class: float(rate)}, profiles.duration,
                self.bin_width)
        return dataclasses.replace(self, demand=demand,
                horizon=max(float(self.horizon), demand.span))

    def with_demand(self, demand: DemandBins):
        return dataclasses.replace(self, demand=demand,
                horizon=max(float(self.horizon), demand.span))



def topology_errors(cfg: ScenarioConfig) -> list:
    """Every violated invariant of the corridor chain and its stations."""
    errors = []
    classes = cfg.class_map
    station_map, node_names = {}, {SOURCE, SINK}
    for vehicle_class in cfg.classes:
        errors += vehicle_class.validate(f"classes.{vehicle_class.name}")
    if len(classes) != len(cfg.classes):
        errors.append("classes: class names must be unique")
    for i, station in enumerate(cfg.stations):
        path = f"stations[{i}]({station.id})"
        if station.id in node_names:
            errors.append(f"{path}.id: duplicate or reserved node name")
        node_names.add(station.id)
        station_map[station.id] = station
        errors += station.validate(classes, path)

    seg_ids = set()
    outgoing, incoming = {}, {}
    for i, segment in enumerate(cfg.segments):
        path = f"segments[{i}]({segment.id})"
        if segment.id in seg_ids:
            errors.append(f"{path}.id: duplicate segment id")
        seg_ids.add(segment.id)
        errors += segment.validate(path)
        longest = max((c.effective_length for c in cfg.classes), default=0.)
        if segment.storage_capacity > 0 and segment.storage_capacity < longest:
            errors.append(f"{path}.storage_capacity: {segment.storage_capacity} m cannot "
                    f"hold the longest vehicle ({longest} m)")
        for end, node in (("from", segment.source), ("to", segment.target)):
            if node not in node_names:
                errors.append(f"{path}.{end}: unknown node {node!r}")
        if segment.source == SINK:
            errors.append(f"{path}.from: no segment may leave the sink")
        if segment.target == SOURCE:
            errors.append(f"{path}.to: no segment may enter the source")
        if segment.source in outgoing:
            errors.append(f"{path}.from: {segment.source!r} already has an outgoing segment")
        outgoing.setdefault(segment.source, segment)
        if segment.target in incoming:
            errors.append(f"{path}.to: {segment.target!r} already has an incoming segment")
        incoming.setdefault(segment.target, segment)

    node, visited = SOURCE, [SOURCE]
    while node in outgoing and node != SINK:
        node = outgoing[node].target
        if node in visited:
            errors.append(f"segments: the chain loops back to {node!r}")
            break
        visited.append(node)
    if SOURCE not in outgoing:
        errors.append("segments: no segment leaves the source")
    elif visited[-1] != SINK:
        errors.append(f"segments: the chain from the source stops at {visited[-1]!r} "
                "and never reaches the sink")
    for station in cfg.stations:
        if station.id not in visited:
            errors.append(f"stations.{station.id}: not connected to the source -> sink chain")
    for segment in cfg.segments:
        if segment.source not in visited:
            errors.append(f"segments.{segment.id}: not part of the source -> sink chain")

    for class_name in cfg.demand.counts:
        if class_name not in classes:
            errors.append(f"demand.counts.{class_name}: unknown vehicle class")
    errors += cfg.demand.validate("demand")
    if not cfg.horizon >= cfg.demand.span:
        errors.append(f"horizon: must be >= the demand span ({cfg.demand.span} s), "
                f"got {cfg.horizon}")
    for name in ("warmup", "sample_interval", "rate_window"):
        value = getattr(cfg, name)
        if not value >= 0 or (name != "warmup" and value == 0):
            errors.append(f"{name}: must be {'>= 0' if name == 'warmup' else '> 0'}, got {value}")

    if cfg.flow_profiles is not None:
        if not cfg.flow_profiles.rates or any(not r >= 0 for r in cfg.flow_profiles.rates):
            errors.append("flow_profiles.rates: must list rates >= 0")
        if not cfg.flow_profiles.duration > 0:
            errors.append("flow_profiles.duration: must be > 0")
        if cfg.flow_profiles.vehicle_class not in classes:
            errors.append("flow_profiles.class: unknown vehicle class")

    if cfg.routing is not None:
        routed = station_map.get(cfg.routing.station)
        if routed is None:
            errors.append(f"routing.station: unknown station {cfg.routing.station!r}")
            errors += cfg.routing.validate(None)
        else:
            errors += cfg.routing.validate(routed.lane_count)
            if routed.queue_mode != "lanes":
                errors.append("routing.station: the routed station must use queue_mode 'lanes'")
            for class_name, lanes in sorted(routed.admissible.items()):
                if lanes and sorted(lanes) != list(range(1, routed.lane_count + 1)):
                    errors.append(f"routing.station: {class_name} must use every lane of the "
                            "routed station or bypass it")

    points = (SOURCE,) + tuple(f"{s}.exit" for s in station_map) + (SINK,)
    if cfg.calibration is not None:
        calibration = cfg.calibration
        target = station_map.get(calibration.station)
        lane_count = target.lane_count if target is not None else None
        if target is None:
            errors.append(f"calibration.station: unknown station {calibration.station!r}")
        errors += calibration.observed_shares.validate("calibration.observed_shares")
        errors += share_errors(calibration.average_shares, "calibration.average_shares")
        if lane_count is not None and len(calibration.average_shares) != lane_count:
            errors.append(f"calibration.average_shares: expected {lane_count} lanes")
        if lane_count is not None and calibration.observed_shares.shares and \
                calibration.observed_shares.lane_count != lane_count:
            errors.append(f"calibration.observed_shares: expected {lane_count} lanes")
        for end in ("trip_from", "trip_to"):
            if getattr(calibration, end) not in points:
                errors.append(f"calibration.{end}: unknown measurement point, "
                        f"expected one of {points}")
        labels = {band.label for band in calibration.observed_shares.bands}
        for label, mean in calibration.trip_reference_mean.items():
            if label not in labels:
                errors.append(f"calibration.trip_reference_mean.{label}: no band with this label")
            if not mean > 0:
                errors.append(f"calibration.trip_reference_mean.{label}: must be > 0")

    site_ids = set()
    for i, site in enumerate(cfg.detectors):
        path = f"detectors.sites[{i}]({site.id})"
        errors += site.validate(path)
        if site.id in site_ids:
            errors.append(f"{path}.id: duplicate site id")
        site_ids.add(site.id)
        if site.location not in points:
            errors.append(f"{path}.location: unknown measurement point {site.location!r}")
    if cfg.validation is not None:
        errors += cfg.validation.validate("validation")
        if len(cfg.detectors) < 2:
            errors.append("validation: needs two detector sites")
    return errors


def validate_topology(cfg: ScenarioConfig) -> NetworkTopology:
    """Resolves the source -> sink chain of a parsed scenario.

    Returns:
        topology (NetworkTopology): The chain in travel order.

    Raises:
        ScenarioError: If any invariant is violated. Its `errors` list holds
            every violation, not just the first.
    """
    errors = topology_errors(cfg)
    if errors:
        raise ScenarioError(errors, cfg.name)
    outgoing = {segment.source: segment for segment in cfg.segments}
    station_map = {station.id: station for station in cfg.stations}
    nodes, segments, stations = [SOURCE], [], []
    while nodes[-1] != SINK:
        segment = outgoing[nodes[-1]]
        segments.append(segment)
        nodes.append(segment.target)
        if segment.target != SINK:
            stations.append(station_map[segment.target])
    routed = cfg.routing.station if cfg.routing is not None else None
    return NetworkTopology(tuple(nodes), tuple(stations), tuple(segments), routed)



class _DocumentReader:
    """Pulls typed values out of a parsed document, recording a
    "<path>: <message>" error for every missing or mistyped field instead
    of stopping at the first."""

    def __init__(self):
        self.errors = []

    def error(self, path, message):
        self.errors.append(f"{path}: {message}")

    def mapping(self, value, path, required = False) -> dict:
        if value is None:
            if required:
                self.error(path, "is required")
            return {}
        if not isinstance(value, dict):
            self.error(path, f"must be a mapping, got {type(value).__name__}")
            return {}
        return value

    def sequence(self, value, path, required = False) -> list:
        if value is None:
            if required:
                self.error(path, "is required")
            return []
        if not isinstance(value, (list, tuple)):
            self.error(path, f"must be a list, got {type(value).__name__}")
            return []
        return list(value)

    def number(self, data, key, path, default = None) -> float:
        return self.scalar(data.get(key, default), f"{path}.{key}" if path else key)

    def scalar(self, value, path) -> float:
        if value is None:
            self.error(path, "is required")
            return math.nan
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.error(path, f"must be a number, got {value!r}")
            return math.nan
        return float(value)

    def integer(self, value, path) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.error(path, f"must be an integer, got {value!r}")
            return 0
        return value

    def flag(self, data, key, path, default = None) -> bool:
        value = data.get(key, default)
        if not isinstance(value, bool):
            self.error(f"{path}.{key}" if path else key, f"must be true or false, got {value!r}")
            return bool(default)
        return value

    def text(self, data, key, path, default = None) -> str:
        value = data.get(key, default)
        if value is None:
            self.error(f"{path}.{key}" if path else key, "is required")
            return ""
        return str(value)

    def numbers(self, value, path) -> tuple:
        out = []
        for i, item in enumerate(self.sequence(value, path, required=True)):
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                self.error(f"{path}[{i}]", f"must be a number, got {item!r}")
                out.append(math.nan)
            else:
                out.append(float(item))
        return tuple(out)


def _parse_classes(reader, data) -> tuple:
    classes = []
    section = reader.mapping(data.get("classes"), "classes")
    if not section:
        section = {name: {} for name in VEHICLE_CLASSES}
    for name, entry in section.items():
        path = f"classes.{name}"
        entry = reader.mapping(entry, path)
        classes.append(VehicleClass(str(name),
            reader.number(entry, "effective_length", path,
                DEFAULT_EFFECTIVE_LENGTHS.get(str(name))),
            reader.flag(entry, "visits_weighbridge", path, str(name) == "RHV"),
            reader.flag(entry, "visits_tourist_checkin", path, True)))
    return tuple(sorted(classes, key=lambda vehicle_class: vehicle_class.name))


def _parse_service(reader, entry, path) -> ServiceModel:
    entry = reader.mapping(entry, path, required=True)
    distribution = reader.text(entry, "distribution", path, "NormalTruncated")
    if distribution == "Deterministic":
        mean = reader.number(entry, "value", path, entry.get("mean"))
    else:
        mean = reader.number(entry, "mean", path)
    sd = reader.number(entry, "sd", path, 0.) if distribution == "NormalTruncated" else 0.
    return ServiceModel(distribution, mean, sd,
            reader.number(entry, "security_check_probability", path, 0.),
            reader.number(entry, "security_check_delay", path, 0.),
            reader.flag(entry, "calibrated", path, True))


def _parse_stations(reader, data, classes) -> tuple:
    stations = []
    for i, entry in enumerate(reader.sequence(data.get("stations"), "stations", required=True)):
        entry = reader.mapping(entry, f"stations[{i}]")
        path = f"stations[{i}]({entry.get('id', '?')})"
        lane_count = entry.get("lane_count")
        if lane_count is None:
            reader.error(f"{path}.lane_count", "is required")
        else:
            lane_count = reader.integer(lane_count, f"{path}.lane_count")
        kind = reader.text(entry, "kind", path)
        declared = reader.mapping(entry.get("admissible"), f"{path}.admissible")
        admissible = {}
        for vehicle_class in classes:
            if vehicle_class.name in declared:
                lanes = reader.sequence(declared[vehicle_class.name],
                        f"{path}.admissible.{vehicle_class.name}")
                admissible[vehicle_class.name] = tuple(reader.integer(lane,
                    f"{path}.admissible.{vehicle_class.name}[{j}]") for j, lane in enumerate(lanes))
            elif _may_bypass(kind, vehicle_class):
                admissible[vehicle_class.name] = ()
            else:
                admissible[vehicle_class.name] = tuple(range(1, (lane_count or 0) + 1))
        for class_name in declared:
            if class_name not in admissible:
                reader.error(f"{path}.admissible.{class_name}", "unknown vehicle class")
        stations.append(Station(reader.text(entry, "id", path), kind, lane_count,
            _parse_service(reader, entry.get("service"), f"{path}.service"), admissible,
            reader.number(entry, "approach_capacity", path),
            reader.text(entry, "queue_mode", path, "lanes")))
    return tuple(stations)


def _parse_segments(reader, data) -> tuple:
    segments = []
    for i, entry in enumerate(reader.sequence(data.get("segments"), "segments", required=True)):
        entry = reader.mapping(entry, f"segments[{i}]")
        path = f"segments[{i}]({entry.get('id', '?')})"
        segments.append(Segment(reader.text(entry, "id", path), reader.text(entry, "from", path),
            reader.text(entry, "to", path), reader.number(entry, "free_flow_time", path),
            reader.number(entry, "storage_capacity", path)))
    return tuple(segments)


def _parse_demand(reader, data, bin_width) -> DemandBins:
    section = reader.mapping(data.get("demand"), "demand")
    if "counts" in section:
        counts = {}
        for class_name, class_counts in reader.mapping(section["counts"], "demand.counts").items():
            counts[str(class_name)] = tuple(reader.sequence(class_counts,
                f"demand.counts.{class_name}"))
        return DemandBins(counts, bin_width)
    if "rates" in section:
        rates = {str(k): reader.scalar(v, f"demand.rates.{k}")
                for k, v in reader.mapping(section["rates"], "demand.rates").items()}
        duration = reader.number(section, "duration", "demand")
        if any(math.isnan(v) or v < 0 for v in rates.values()) or not duration >= 0 \
                or not bin_width > 0:
            reader.error("demand.rates", "rates and duration must be numbers >= 0")
            return DemandBins({}, bin_width)
        return constant_rate_bins(rates, duration, bin_width)
    return DemandBins({}, bin_width)


def _parse_bands(reader, value, path) -> tuple:
    if value is None:
        return DEFAULT_BANDS
    bands = []
    for i, entry in enumerate(reader.sequence(value, path)):
        entry = reader.mapping(entry, f"{path}[{i}]")
        bands.append(FlowBand(reader.text(entry, "label", f"{path}[{i}]"),
            reader.number(entry, "lower", f"{path}[{i}]"),
            reader.number(entry, "upper", f"{path}[{i}]", math.inf)))
    return tuple(bands)


def _parse_share_table(reader, value, bands, path) -> OccupancyTable:
    shares = {str(label): reader.numbers(vector, f"{path}.{label}")
            for label, vector in reader.mapping(value, path, required=True).items()}
    return OccupancyTable(bands, shares)


def _parse_routing(reader, data):
    section = data.get("routing")
    if section is None:
        return None
    section = reader.mapping(section, "routing")
    table = reader.mapping(section.get("flow_table"), "routing.flow_table", required=True)
    bands = _parse_bands(reader, table.get("bands"), "routing.flow_table.bands")
    profiles, weights = [], []
    for i, entry in enumerate(reader.sequence(section.get("agent_profiles"),
            "routing.agent_profiles", required=True)):
        path = f"routing.agent_profiles[{i}]"
        entry = reader.mapping(entry, path)
        order = tuple(reader.integer(lane, f"{path}.preference_order[{j}]") for j, lane in
                enumerate(reader.sequence(entry.get("preference_order"),
                    f"{path}.preference_order", required=True)))
        profiles.append(DriverProfile(order,
            reader.integer(entry.get("switch_threshold", 2), f"{path}.switch_threshold"),
            reader.flag(entry, "lookahead", path, True)))
        weights.append(reader.number(entry, "weight", path, 1.))
    return RoutingConfig(reader.text(section, "station", "routing"),
            reader.numbers(section.get("average_shares"), "routing.average_shares"),
            _parse_share_table(reader, table.get("shares"), bands, "routing.flow_table.shares"),
            tuple(profiles), tuple(weights))


def _parse_calibration(reader, data, routing):
    section = data.get("calibration")
    if section is None:
        return None
    section = reader.mapping(section, "calibration")
    bands = _parse_bands(reader, section.get("bands"), "calibration.bands") \
            if "bands" in section or routing is None else routing.flow_table.bands
    trip_means = {str(label): reader.scalar(mean,
            f"calibration.trip_reference_mean.{label}")
            for label, mean in reader.mapping(section.get("trip_reference_mean"),
                "calibration.trip_reference_mean").items()}
    return CalibrationTargets(reader.text(section, "station", "calibration"),
            _parse_share_table(reader, section.get("observed_shares"), bands,
                "calibration.observed_shares"),
            reader.numbers(section.get("average_shares"), "calibration.average_shares"),
            reader.text(section, "trip_from", "calibration"),
            reader.text(section, "trip_to", "calibration"), trip_means)


def _parse_detectors(reader, data) -> tuple:
    section = reader.mapping(data.get("detectors"), "detectors")
    if not section:
        return ()
    raw = reader.mapping(section.get("device_distribution"), "detectors.device_distribution")
    devices = {}
    for key, probability in (raw or DEFAULT_DEVICE_DISTRIBUTION).items():
        try:
            devices[int(key)] = reader.scalar(probability,
                    f"detectors.device_distribution.{key}")
        except (TypeError, ValueError):
            reader.error(f"detectors.device_distribution.{key}", "device counts must be integers")
    sites = []
    for i, entry in enumerate(reader.sequence(section.get("sites"), "detectors.sites",
            required=True)):
        path = f"detectors.sites[{i}]"
        entry = reader.mapping(entry, path)
        sites.append(DetectorSite(reader.text(entry, "id", path), reader.text(entry, "location", path),
            reader.number(entry, "detection_probability", path), dict(devices)))
    return tuple(sites)


def _parse_validation(reader, data):
    section = data.get("validation")
    if section is None:
        return None
    section = reader.mapping(section, "validation")
    return ValidationConfig(reader.number(section, "camera_fraction", "validation", 0.1),
            reader.number(section, "dedupe_window", "validation", DEFAULT_DEDUPE_WINDOW),
            reader.number(section, "max_trip", "validation", DEFAULT_MAX_TRIP),
            reader.number(section, "pdf_bin", "validation", DEFAULT_PDF_BIN))


def load_scenario(text: str, source: str = None) -> ScenarioConfig:
    """Parses and validates a scenario document (YAML, or the equivalent
    JSON). Defaults are applied for every optional field.

    Args:
        text (str): The document.
        source (str): Optional name of the document, used in messages.

    Returns:
        cfg (ScenarioConfig): The validated scenario.

    Raises:
        ScenarioParseError: If the document is empty, is not valid YAML or
            is not a mapping.
        ScenarioError: If the document violates any invariant; every
            violation is listed.
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioParseError([f"document: malformed YAML ({exc})"], source) from exc
    if data is None:
        raise ScenarioParseError(["document: is empty"], source)
    if not isinstance(data, dict):
        raise ScenarioParseError([f"document: must be a mapping, got {type(data).__name__}"],
                source)

    reader = _DocumentReader()
    bin_width = reader.number(data, "bin_width", "", DEFAULT_BIN_WIDTH)
    classes = _parse_classes(reader, data)
    demand = _parse_demand(reader, data, bin_width)
    profiles = None
    if data.get("flow_profiles") is not None:
        section = reader.mapping(data["flow_profiles"], "flow_profiles")
        profiles = FlowProfiles(reader.numbers(section.get("rates"), "flow_profiles.rates"),
                reader.number(section, "duration", "flow_profiles"),
                reader.text(section, "class", "flow_profiles", "RHV"))
    routing = _parse_routing(reader, data)
    cfg = ScenarioConfig(name=reader.text(data, "name", "", "scenario"), classes=classes,
            stations=_parse_stations(reader, data, classes),
            segments=_parse_segments(reader, data), demand=demand,
            horizon=reader.number(data, "horizon", "", demand.span),
            drain=reader.flag(data, "drain", "", True),
            warmup=reader.number(data, "warmup", "", DEFAULT_WARMUP),
            sample_interval=reader.number(data, "sample_interval", "", DEFAULT_SAMPLE_INTERVAL),
            rate_window=reader.number(data, "rate_window", "", DEFAULT_RATE_WINDOW),
            flow_profiles=profiles, routing=routing,
            calibration=_parse_calibration(reader, data, routing),
            detectors=_parse_detectors(reader, data),
            validation=_parse_validation(reader, data))
    known = {"name", "bin_width", "horizon", "drain", "warmup", "sample_interval",
            "rate_window", "classes", "stations", "segments", "demand", "flow_profiles",
            "routing", "calibration", "detectors", "validation"}
    for key in data:
        if key not in known:
            reader.error(str(key), "unknown top-level key")

    errors = reader.errors + topology_errors(cfg)
    if errors:
        raise ScenarioError(errors, source or cfg.name)
    LOG.debug("Loaded scenario %s: %d stations, %d scheduled vehicles",
            cfg.name, len(cfg.stations), cfg.demand.total())
    return cfg


def load_scenario_file(path) -> ScenarioConfig:
    """Loads a scenario from a file path.

    Raises:
        OSError: If the file cannot be read.
    """
    with open(path, "r", encoding="utf-8") as fhandle:
        return load_scenario(fhandle.read(), str(path))


def _bundled(name: str) -> ScenarioConfig:
    text = resources.files("port_microsim_toolkit").joinpath("data", name).read_text(
            encoding="utf-8")
    return load_scenario(text, name)


def default_dover_scenario() -> ScenarioConfig:
    """The bundled Port of Dover corridor: passport check, the five-lane
    weighbridge with NormalTruncated(20, 2) service and the ticketing
    booths, together with the observed lane shares and the flow-rate set of
    the policy experiment."""
    return _bundled("dover.yaml")


def default_validation_scenario() -> ScenarioConfig:
    """The bundled scenario of the detector-based trip-time validation."""
    return _bundled("dover_validation.yaml")



def _band_document(bands) -> list:
    return [{"label": band.label, "lower": band.lower, "upper": band.upper} for band in bands]


def scenario_document(cfg: ScenarioConfig) -> dict:
    """The canonical document form of a scenario (demand as explicit
    counts)."""
    document = {"name": cfg.name, "bin_width": cfg.bin_width, "horizon": cfg.horizon,
            "drain": cfg.drain, "warmup": cfg.warmup, "sample_interval": cfg.sample_interval,
            "rate_window": cfg.rate_window}
    document["classes"] = {c.name: {"effective_length": c.effective_length,
        "visits_weighbridge": c.visits_weighbridge,
        "visits_tourist_checkin": c.visits_tourist_checkin} for c in cfg.classes}
    stations = []
    for station in cfg.stations:
        service = {"distribution": station.service.distribution,
                "security_check_probability": station.service.security_check_probability,
                "security_check_delay": station.service.security_check_delay,
                "calibrated": station.service.calibrated}
        if station.service.distribution == "Deterministic":
            service["value"] = station.service.mean
        else:
            service["mean"] = station.service.mean
        if station.service.distribution == "NormalTruncated":
            service["sd"] = station.service.sd
        stations.append({"id": station.id, "kind": station.kind,
            "lane_count": station.lane_count, "approach_capacity": station.approach_capacity,
            "queue_mode": station.queue_mode, "service": service,
            "admissible": {k: list(v) for k, v in station.admissible.items()}})
    document["stations"] = stations
    document["segments"] = [{"id": s.id, "from": s.source, "to": s.target,
        "free_flow_time": s.free_flow_time, "storage_capacity": s.storage_capacity}
        for s in cfg.segments]
    document["demand"] = {"counts": {k: [int(c) for c in v] for k, v in cfg.demand.counts.items()}}
    if cfg.flow_profiles is not None:
        document["flow_profiles"] = {"rates": list(cfg.flow_profiles.rates),
                "duration": cfg.flow_profiles.duration, "class": cfg.flow_profiles.vehicle_class}
    if cfg.routing is not None:
        routing = cfg.routing
        document["routing"] = {"station": routing.station,
            "average_shares": list(routing.average_shares),
            "flow_table": {"bands": _band_document(routing.flow_table.bands),
                "shares": {k: list(v) for k, v in routing.flow_table.shares.items()}},
            "agent_profiles": [{"weight": w, "preference_order": list(p.preference_order),
                "switch_threshold": p.switch_threshold, "lookahead": p.lookahead}
                for p, w in zip(routing.profiles, routing.profile_weights)]}
    if cfg.calibration is not None:
        calibration = cfg.calibration
        document["calibration"] = {"station": calibration.station,
            "bands": _band_document(calibration.observed_shares.bands),
            "observed_shares": {k: list(v) for k, v in calibration.observed_shares.shares.items()},
            "average_shares": list(calibration.average_shares),
            "trip_from": calibration.trip_from, "trip_to": calibration.trip_to,
            "trip_reference_mean": dict(calibration.trip_reference_mean)}
    if cfg.detectors:
        document["detectors"] = {"device_distribution": dict(cfg.detectors[0].device_distribution),
            "sites": [{"id": s.id, "location": s.location,
                "detection_probability": s.detection_probability} for s in cfg.detectors]}
    if cfg.validation is not None:
        document["validation"] = dataclasses.asdict(cfg.validation)
    return document


def serialize_scenario(cfg: ScenarioConfig) -> str:
    """Canonical YAML text of a scenario; `load_scenario` of the result is
    equal to cfg."""
    return yaml.safe_dump(scenario_document(cfg), sort_keys=True, default_flow_style=None)


def scenario_hash(cfg: ScenarioConfig) -> str:
    """A short content hash of the canonical serialization."""
    return hashlib.sha256(serialize_scenario(cfg).encode("utf-8")).hexdigest()[:16]
