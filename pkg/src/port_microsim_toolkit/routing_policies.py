"""Lane-selection strategies for the routed station: roulette-wheel
(probabilistic) routing with either one all-flows share vector or flow
specific share vectors, and agent-based routing where each driver picks a
lane from the queues in front of them."""
from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field

import numpy as np


SHARE_TOLERANCE = 1e-9

POLICY_NAMES = ("prob-avg", "prob-flow", "agent")



@dataclass(frozen=True)
class FlowBand:
    """A range of arrival rates (vehicles / hour). The band holds rates in
    (lower, upper]; the first band of a partition also holds its lower
    edge."""
    label: str
    lower: float
    upper: float = math.inf

    def contains(self, rate: float, closed_below: bool = False) -> bool:
        if closed_below and rate == self.lower:
            return True
        return self.lower < rate <= self.upper


DEFAULT_BANDS = (FlowBand("Low", 0., 90.), FlowBand("Medium", 90., 450.),
        FlowBand("High", 450., 700.), FlowBand("VeryHigh", 700., math.inf))

ALL_FLOWS_BAND = FlowBand("All", 0., math.inf)


def validate_bands(bands) -> list:
    """Checks that the bands partition [0, inf) in ascending order."""
    errors = []
    if len(bands) == 0:
        return ["bands: at least one band is required"]
    if bands[0].lower != 0:
        errors.append(f"bands[0]: must start at 0, starts at {bands[0].lower}")
    for i, band in enumerate(bands):
        if not band.lower < band.upper:
            errors.append(f"bands[{i}] ({band.label}): lower edge must be below upper edge")
        if i > 0 and band.lower != bands[i - 1].upper:
            errors.append(f"bands[{i}] ({band.label}): must start where "
                    f"{bands[i - 1].label} ends ({bands[i - 1].upper})")
    if bands[-1].upper != math.inf:
        errors.append(f"bands[{len(bands) - 1}]: last band must be unbounded above")
    if len({band.label for band in bands}) != len(bands):
        errors.append("bands: labels must be unique")
    return errors


def flow_band(rate: float, bands = DEFAULT_BANDS) -> FlowBand:
    """Returns the unique band containing rate (vehicles / hour).

    Raises:
        ValueError: If rate is negative or not finite.
    """
    if not rate >= 0 or math.isnan(rate):
        raise ValueError(f"Flow rate must be >= 0, got {rate}.")
    for i, band in enumerate(bands):
        if band.contains(rate, closed_below = i == 0):
            return band
    raise ValueError(f"No band contains flow rate {rate}; bands do not partition [0, inf).")


def share_errors(shares, path: str = "shares") -> list:
    """Returns the reasons a lane-share vector is invalid."""
    errors = []
    if len(shares) == 0:
        return [f"{path}: must hold at least one lane"]
    for i, share in enumerate(shares):
        if not share >= 0 or not math.isfinite(share):
            errors.append(f"{path}[{i}]: must be a finite number >= 0, got {share}")
    if not errors and abs(math.fsum(shares) - 1.) > SHARE_TOLERANCE:
        errors.append(f"{path}: must sum to 1, sums to {math.fsum(shares)!r}")
    return errors


def check_shares(shares):
    errors = share_errors(shares)
    if errors:
        raise ValueError("Invalid lane shares: " + "; ".join(errors))



@dataclass(frozen=True)
class OccupancyTable:
    """Lane-share vectors keyed by flow band.

    Args:
        bands (tuple): FlowBand objects partitioning [0, inf).
        shares (dict): Maps each band label to a tuple of lane shares
            (lane 1 first).
    """
    bands: tuple
    shares: dict

    @classmethod
    def single(cls, shares):
        """A table with one all-flows band (average probabilistic routing)."""
        return cls((ALL_FLOWS_BAND,), {ALL_FLOWS_BAND.label: tuple(float(s) for s in shares)})

    @property
    def lane_count(self) -> int:
        return len(next(iter(self.shares.values())))

    def validate(self, path: str = "occupancy_table") -> list:
        errors = [f"{path}.{e}" for e in validate_bands(self.bands)]
        lane_counts = {len(v) for v in self.shares.values()}
        if len(lane_counts) > 1:
            errors.append(f"{path}.shares: all bands must list the same number of lanes")
        for band in self.bands:
            if band.label not in self.shares:
                errors.append(f"{path}.shares.{band.label}: missing share vector")
            else:
                errors += share_errors(self.shares[band.label], f"{path}.shares.{band.label}")
        for label in self.shares:
            if label not in {band.label for band in self.bands}:
                errors.append(f"{path}.shares.{label}: no band with this label")
        return errors

    def to_rows(self) -> list:
        """Rows of (band_label, lane, share) with 1-based lanes."""
        return [(band.label, lane + 1, share) for band in self.bands
                for lane, share in enumerate(self.shares[band.label])]



def occupancy_lookup(table: OccupancyTable, rate: float) -> tuple:
    """Returns the share vector of the band containing rate. A single-band
    table returns its vector regardless of rate."""
    if len(table.bands) == 1:
        return table.shares[table.bands[0].label]
    return table.shares[flow_band(rate, table.bands).label]


def roulette_select(shares, u: float) -> int:
    """Biased roulette-wheel selection. Lane k (1-based) is returned when
    cumulative(k - 1) <= u < cumulative(k).

    Args:
        shares: Lane shares, lane 1 first. Must be non-negative and sum to 1.
        u (float): A uniform draw in [0, 1).

    Raises:
        ValueError: If the shares are invalid or u is outside [0, 1).
            Shares are never renormalized.
    """
    check_shares(shares)
    if not 0 <= u < 1:
        raise ValueError(f"u must lie in [0, 1), got {u}.")
    cumulative = list(itertools.accumulate(shares))
    index = bisect.bisect_right(cumulative, u)
    if index >= len(shares):
        # Rounding left the last cumulative sum just below u.
        index = max(i for i, share in enumerate(shares) if share > 0)
    return index + 1



@dataclass(frozen=True)
class DriverProfile:
    """Lane-choice parameters of one driver type.

    Args:
        preference_order (tuple): Permutation of the 1-based lane indices,
            most preferred first.
        switch_threshold (int): The driver leaves their preferred lane only
            if another lane's queue is shorter by more than this many
            vehicles.
        lookahead (bool): If False the driver ignores queues and always
            takes the first admissible lane in preference order.
    """
    preference_order: tuple
    switch_threshold: int = 2
    lookahead: bool = True

    def validate(self, lane_count: int = None, path: str = "profile") -> list:
        errors = []
        order = list(self.preference_order)
        expected = list(range(1, len(order) + 1)) if lane_count is None else \
                list(range(1, lane_count + 1))
        if sorted(order) != expected:
            errors.append(f"{path}.preference_order: must be a permutation of {expected}, got {order}")
        if isinstance(self.switch_threshold, bool) or \
                not isinstance(self.switch_threshold, (int, np.integer)) or self.switch_threshold < 0:
            errors.append(f"{path}.switch_threshold: must be an integer >= 0")
        return errors


def agent_select(queues, admissible, profile: DriverProfile) -> int:
    """Join-preferred-unless-meaningfully-shorter lane choice.

    Let p be the first admissible lane in the driver's preference order.
    The admissible lane with the shortest queue (ties broken by preference
    position) is returned if its queue is shorter than queue(p) by more than
    the switch threshold; otherwise p is returned.

    Args:
        queues: Vehicles per lane (lane 1 first).
        admissible: Iterable of 1-based lane indices the vehicle may use.
        profile (DriverProfile): The driver's parameters.

    Raises:
        ValueError: If admissible is empty or references a lane outside
            queues.
    """
    candidates = set(admissible)
    if not candidates:
        raise ValueError("agent_select requires at least one admissible lane.")
    if min(candidates) < 1 or max(candidates) > len(queues):
        raise ValueError(f"Admissible lanes {sorted(candidates)} fall outside "
                f"{len(queues)} queues.")
    rank = {lane: i for i, lane in enumerate(profile.preference_order)}
    unranked = len(rank)
    ordered = sorted(candidates, key=lambda lane: (rank.get(lane, unranked), lane))
    preferred = ordered[0]
    if not profile.lookahead:
        return preferred
    shortest = min(ordered, key=lambda lane: queues[lane - 1])
    if queues[preferred - 1] - queues[shortest - 1] > profile.switch_threshold:
        return shortest
    return preferred


def class_admissible_lanes(vehicle_class, station) -> frozenset:
    """The 1-based lanes of station open to a vehicle class (empty if the
    class bypasses the station)."""
    class_name = getattr(vehicle_class, "name", vehicle_class)
    return frozenset(station.admissible.get(class_name, ()))



@dataclass(frozen=True)
class LaneDecision:
    """Everything a policy may look at when a vehicle reaches the decision
    point: its pre-drawn uniform, the current flow rate, the vehicles in
    each lane, the lanes open to its class and the subset of those with
    storage for it."""
    u: float
    rate: float
    queues: tuple
    admissible: frozenset
    open_lanes: frozenset
    profile_index: int = 0


@dataclass(frozen=True)
class ProbabilisticAverage:
    """Roulette-wheel routing with one all-flows share vector. The drawn
    lane is binding even when its storage is full."""
    table: OccupancyTable
    name: str = "prob-avg"
    binding: bool = True

    def expected_shares(self, rate: float) -> tuple:
        return occupancy_lookup(self.table, rate)

    def select_lane(self, decision: LaneDecision):
        return roulette_select(occupancy_lookup(self.table, decision.rate), decision.u)


@dataclass(frozen=True)
class ProbabilisticFlowSpecific(ProbabilisticAverage):
    """Roulette-wheel routing with the share vector of the current flow
    band."""
    name: str = "prob-flow"


@dataclass(frozen=True)
class AgentPolicy:
    """Each driver draws a profile (by weight) and applies `agent_select`
    to the lanes that can currently take the vehicle. If no admissible lane
    has room the driver waits at the decision point."""
    profiles: tuple
    weights: tuple
    name: str = "agent"
    binding: bool = False

    def expected_shares(self, rate: float):
        return None

    def select_lane(self, decision: LaneDecision):
        if not decision.open_lanes:
            return None
        return agent_select(decision.queues, decision.open_lanes,
                self.profiles[decision.profile_index])



@dataclass(frozen=True)
class RoutingConfig:
    """Scenario-level routing inputs.

    Args:
        station (str): Id of the routed station (the decision point sits at
            the head of its approach segment).
        average_shares (tuple): All-flows lane shares.
        flow_table (OccupancyTable): Flow-specific lane shares.
        profiles (tuple): DriverProfile objects for agent routing.
        profile_weights (tuple): Probability of each profile.
    """
    station: str
    average_shares: tuple
    flow_table: OccupancyTable
    profiles: tuple = field(default_factory=tuple)
    profile_weights: tuple = field(default_factory=tuple)

    def validate(self, lane_count: int = None, path: str = "routing") -> list:
        errors = share_errors(self.average_shares, f"{path}.average_shares")
        errors += self.flow_table.validate(f"{path}.flow_table")
        if lane_count is not None:
            if len(self.average_shares) != lane_count:
                errors.append(f"{path}.average_shares: expected {lane_count} lanes, "
                        f"got {len(self.average_shares)}")
            if self.flow_table.shares and self.flow_table.lane_count != lane_count:
                errors.append(f"{path}.flow_table: expected {lane_count} lanes")
        if not self.profiles:
            errors.append(f"{path}.agent_profiles: at least one profile is required")
        if len(self.profile_weights) != len(self.profiles):
            errors.append(f"{path}.agent_profiles: every profile needs a weight")
        else:
            errors += share_errors(self.profile_weights, f"{path}.profile_weights")
        for i, profile in enumerate(self.profiles):
            errors += profile.validate(lane_count, f"{path}.agent_profiles[{i}]")
        return errors


def build_policy(name: str, routing: RoutingConfig):
    """Builds the named policy ('prob-avg', 'prob-flow' or 'agent') from a
    scenario's routing inputs."""
    if name == "prob-avg":
        return ProbabilisticAverage(OccupancyTable.single(routing.average_shares))
    if name == "prob-flow":
        return ProbabilisticFlowSpecific(routing.flow_table)
    if name == "agent":
        return AgentPolicy(tuple(routing.profiles), tuple(routing.profile_weights))
    raise ValueError(f"Unknown policy {name!r}; expected one of {POLICY_NAMES}.")
