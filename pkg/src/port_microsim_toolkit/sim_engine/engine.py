"""The deterministic discrete-event core.

Vehicles move along the source -> sink chain of the scenario. A segment is
a FIFO link: a vehicle may leave it once its free-flow time has elapsed and
the next element has storage for it. A station holds vehicles in per-lane
FIFO queues (or one shared queue) that occupy physical storage; a served
vehicle keeps its server blocked until the downstream segment can take it,
so storage shortages propagate upstream as spillback. Vehicles that find
the entry segment full are stacked outside the network and admitted in
arrival order.
"""
from __future__ import annotations

import heapq
import logging
from collections import deque

import numpy as np

from ..arrivals import arrivals_from_bins
from ..routing_policies import LaneDecision, build_policy
from ..scenario import ScenarioConfig, scenario_hash
from .results import Event, EventKind, RunResult, StationRecord
from .rng_streams import RngStreams
from .service import sample_service_times, security_delays


LOG = logging.getLogger(__name__)

# Entry types of the future event list.
_ARRIVAL, _HEAD_READY, _END_SERVICE = 0, 1, 2

ROOM_TOLERANCE = 1e-9



class SegmentState:
    """Vehicles on a segment, in entry order, with the time each may leave.

    Args:
        segment_id (str): Segment name.
        capacity (float): Storage in meters.
        free_flow_time (float): Traversal time in seconds.
    """

    def __init__(self, segment_id: str, capacity: float, free_flow_time: float):
        self.id = segment_id
        self.capacity = float(capacity)
        self.free_flow_time = float(free_flow_time)
        self.vehicles = deque()
        self.occupied = 0.

    def has_room(self, length: float) -> bool:
        return self.occupied + length <= self.capacity + ROOM_TOLERANCE

    def standing_length(self, now: float, lengths) -> float:
        """Meters of vehicles that have finished traversing and are held at
        the head of the segment."""
        total = 0.
        for vid, ready in self.vehicles:
            if ready > now:
                break
            total += lengths[vid]
        return total


class LaneState:
    def __init__(self):
        self.queue = deque()
        self.server = None
        self.blocked = False
        self.occupied = 0.
        self.waiting_m = 0.
        self.count = 0


class StationState:
    """Live state of one station plus its pre-drawn service times."""

    def __init__(self, station, index: int, class_lanes: dict, service_times,
            security, n_vehicles: int):
        self.station = station
        self.index = index
        self.shared = station.queue_mode == "shared"
        self.lanes = [LaneState() for _ in range(station.lane_count)]
        self.common = deque()
        self.common_m = 0.
        self.occupied = 0.
        self.capacity = float(station.storage)
        self.blocked = deque()
        self.class_lanes = class_lanes
        self.hold_times = service_times + security
        self.record = StationRecord.empty(station.id, station.lane_count, n_vehicles)

    def lane_has_room(self, lane: int, length: float) -> bool:
        return self.lanes[lane].occupied + length <= \
                self.station.approach_capacity + ROOM_TOLERANCE

    def has_room(self, length: float) -> bool:
        return self.occupied + length <= self.capacity + ROOM_TOLERANCE

    def vehicles_held(self) -> int:
        held = len(self.common)
        for lane in self.lanes:
            held += len(lane.queue) + (lane.server is not None)
        return held



def admit_or_stack(vehicle_id: int, length: float, segment: SegmentState, stack: deque) -> bool:
    """Returns True if the vehicle may enter the entry segment now. A
    vehicle is admitted only if nobody is stacked ahead of it and the
    segment has at least `length` meters free; otherwise it is appended to
    the stack."""
    if not stack and segment.has_room(length):
        return True
    stack.append(vehicle_id)
    return False



class CorridorSimulator:
    """One run of a scenario under one routing policy and one seed.

    Args:
        scenario (ScenarioConfig): A validated scenario.
        policy: A policy object, or one of the names 'prob-avg', 'prob-flow'
            and 'agent'. Ignored if the scenario has no routed station.
        seed (int): The master seed.
        record_events (bool): If True the full event log is kept.
        drain (bool): Overrides the scenario's drain setting if not None.
        warmup (float): Overrides the scenario's warm-up if not None.
    """

    def __init__(self, scenario: ScenarioConfig, policy, seed: int,
            record_events: bool = True, drain: bool = None, warmup: float = None):
        self.scenario = scenario
        self.topology = scenario.topology
        if isinstance(policy, str):
            policy = build_policy(policy, scenario.routing) if scenario.routing else None
        self.policy = policy
        self.seed = seed
        self.record_events = record_events
        self.drain = scenario.drain if drain is None else bool(drain)
        self.warmup = scenario.warmup if warmup is None else float(warmup)
        self.streams = RngStreams(seed)

        self.schedule = arrivals_from_bins(scenario.demand, self.streams.arrivals())
        n_vehicles = len(self.schedule)
        self.n_vehicles = n_vehicles
        class_map = scenario.class_map
        self.lengths = np.array([class_map[c].effective_length
            for c in self.schedule.classes], dtype=np.float64)

        self.segments = [SegmentState(s.id, s.storage_capacity, s.free_flow_time)
                for s in self.topology.segments]
        self.stations = []
        for index, station in enumerate(self.topology.stations):
            class_lanes = {name: tuple(sorted(lane - 1 for lane in lanes))
                    for name, lanes in station.admissible.items()}
            service_times = sample_service_times(station.service,
                    self.streams.service(index), n_vehicles)
            security = security_delays(station.service, self.streams.security(index), n_vehicles)
            self.stations.append(StationState(station, index, class_lanes, service_times,
                security, n_vehicles))

        self.routed_index = None
        self.assigned = np.full(n_vehicles, -1, dtype=np.int64)
        routing_rng = self.streams.routing()
        self.route_u = routing_rng.random(n_vehicles)
        self.profile_index = np.zeros(n_vehicles, dtype=np.int64)
        self.routed_arrivals = np.zeros(0)
        if scenario.routing is not None:
            self.routed_index = self.topology.station_index(scenario.routing.station)
            weights = np.asarray(scenario.routing.profile_weights, dtype=np.float64)
            self.profile_index = routing_rng.choice(weights.shape[0], size=n_vehicles,
                    p=weights / weights.sum())
            routed = self.topology.stations[self.routed_index]
            routed_classes = [name for name, lanes in routed.admissible.items() if lanes]
            uses_station = np.array([c in routed_classes for c in self.schedule.classes],
                    dtype=bool)
            self.routed_arrivals = self.schedule.timestamps[uses_station]

        self.admitted = np.full(n_vehicles, np.nan)
        self.exited = np.full(n_vehicles, np.nan)
        self.stack = deque()
        self.heap = []
        self.seq = 0
        self.events = []
        self.log_seq = 0
        self.now = 0.
        self.advancing = set()
        self.retry = set()
        self.hol_blocks = 0
        self.last_hol_vehicle = -1
        self.sample_index = 0
        self.sample_times, self.stack_samples = [], []
        self.queue_samples = {state.station.id: [] for state in self.stations}


    def run(self) -> RunResult:
        """Processes every event up to the horizon (or until the system is
        empty when draining) and returns the RunResult."""
        policy_name = getattr(self.policy, "name", "none")
        LOG.info("Run %s: policy %s, seed %d, %d scheduled vehicles", self.scenario.name,
                policy_name, self.seed, self.n_vehicles)
        for vid, time in enumerate(self.schedule.timestamps):
            self._push(float(time), _ARRIVAL, vid, 0)

        horizon = float(self.scenario.horizon)
        while self.heap:
            next_time = self.heap[0][0]
            if not self.drain and next_time > horizon:
                break
            self._sample_before(next_time)
            time, _, entry_type, vid, where = heapq.heappop(self.heap)
            self.now = time
            if entry_type == _ARRIVAL:
                self._on_arrival(vid)
            elif entry_type == _HEAD_READY:
                self._advance(where)
            else:
                self._on_end_service(self.stations[where], vid)

        end_time = self.now
        self._sample_through(max(horizon, end_time) if self.drain else horizon)
        result = self._result(policy_name, end_time)
        in_network = sum(len(segment.vehicles) for segment in self.segments) + \
                sum(state.vehicles_held() for state in self.stations)
        result.check_conservation(in_system=in_network, stacked=len(self.stack))
        LOG.info("Run %s finished at t=%.1f s: %d exited, %d in system, %d stacked, "
                "%d head-of-line blocks", self.scenario.name, end_time, result.n_exited,
                in_network, len(self.stack), self.hol_blocks)
        return result


    def _push(self, time: float, entry_type: int, vid: int, where: int):
        heapq.heappush(self.heap, (time, self.seq, entry_type, vid, where))
        self.seq += 1

    def _log(self, kind: EventKind, vid: int, location: str):
        if self.record_events:
            self.events.append(Event(self.now, self.log_seq, kind, vid, location))
            self.log_seq += 1

    def _sample_before(self, time: float):
        interval = self.scenario.sample_interval
        while self.sample_index * interval < time:
            self._record_sample(self.sample_index * interval)

    def _sample_through(self, end: float):
        interval = self.scenario.sample_interval
        while self.sample_index * interval <= end:
            self._record_sample(self.sample_index * interval)

    def _record_sample(self, sample_time: float):
        self.sample_times.append(sample_time)
        self.stack_samples.append(len(self.stack))
        for state in self.stations:
            row = [self.segments[state.index].standing_length(sample_time, self.lengths)
                    + state.common_m]
            row += [lane.waiting_m for lane in state.lanes]
            self.queue_samples[state.station.id].append(row)
        self.sample_index += 1


    def _on_arrival(self, vid: int):
        self._log(EventKind.ARRIVAL, vid, "source")
        was_stacking = bool(self.stack)
        if admit_or_stack(vid, self.lengths[vid], self.segments[0], self.stack):
            self._admit(vid, from_stack=False)
        elif not was_stacking:
            LOG.debug("t=%.1f: entry segment full, stacking vehicle %d", self.now, vid)

    def _admit(self, vid: int, from_stack: bool):
        self.admitted[vid] = self.now
        if from_stack:
            self._log(EventKind.ADMIT_FROM_STACK, vid, "source")
        self._enter_segment(0, vid)

    def _enter_segment(self, index: int, vid: int):
        segment = self.segments[index]
        ready = self.now + segment.free_flow_time
        segment.vehicles.append((vid, ready))
        segment.occupied += self.lengths[vid]
        if len(segment.vehicles) == 1:
            self._push(ready, _HEAD_READY, vid, index)

    def _pop_head(self, index: int) -> int:
        segment = self.segments[index]
        vid, _ = segment.vehicles.popleft()
        segment.occupied -= self.lengths[vid]
        if segment.vehicles and segment.vehicles[0][1] > self.now:
            next_vid, ready = segment.vehicles[0]
            self._push(ready, _HEAD_READY, next_vid, index)
        return vid


    def _advance(self, index: int):
        """Moves vehicles off the head of segment `index` for as long as
        they are ready and the next element can take them."""
        if index in self.advancing:
            self.retry.add(index)
            return
        self.advancing.add(index)
        try:
            while True:
                self.retry.discard(index)
                self._advance_once(index)
                if index not in self.retry:
                    break
        finally:
            self.advancing.discard(index)

    def _advance_once(self, index: int):
        segment = self.segments[index]
        while segment.vehicles:
            vid, ready = segment.vehicles[0]
            if ready > self.now or not self._move_head(index, vid):
                return

    def _move_head(self, index: int, vid: int) -> bool:
        length = self.lengths[vid]
        if index == len(self.stations):
            self._pop_head(index)
            self.exited[vid] = self.now
            self._log(EventKind.EXIT, vid, "sink")
            self._segment_space_freed(index)
            return True

        state = self.stations[index]
        lanes = state.class_lanes.get(self.schedule.classes[vid], ())
        if not lanes:
            if not self.segments[index + 1].has_room(length):
                return False
            self._pop_head(index)
            state.record.lane[vid] = 0
            state.record.exit[vid] = self.now
            self._log(EventKind.EXIT, vid, state.station.id)
            self._enter_segment(index + 1, vid)
            self._segment_space_freed(index)
            return True

        lane = self._choose_lane(state, vid, lanes)
        if lane is None:
            return False
        self._pop_head(index)
        self._join(state, lane, vid)
        self._segment_space_freed(index)
        return True

    def _choose_lane(self, state: StationState, vid: int, lanes: tuple):
        """The 0-based lane the head vehicle joins now, or None if it has
        to wait. Shared stations return 0 (the lane is picked when service
        starts)."""
        length = self.lengths[vid]
        if state.shared:
            return 0 if state.has_room(length) else None

        open_lanes = [lane for lane in lanes if state.lane_has_room(lane, length)]
        if state.index == self.routed_index and self.policy is not None:
            if getattr(self.policy, "binding", False):
                if self.assigned[vid] < 0:
                    self.assigned[vid] = self.policy.select_lane(
                            self._decision(state, vid, lanes, open_lanes)) - 1
                lane = int(self.assigned[vid])
                if lane not in lanes:
                    raise RuntimeError(f"Policy assigned vehicle {vid} to lane {lane + 1}, "
                            "which its class may not use.")
                if lane in open_lanes:
                    return lane
                if vid != self.last_hol_vehicle:
                    self.last_hol_vehicle = vid
                    self.hol_blocks += 1
                    LOG.debug("t=%.1f: vehicle %d holds the approach waiting for full lane %d",
                            self.now, vid, lane + 1)
                return None
            if not open_lanes:
                return None
            return self.policy.select_lane(self._decision(state, vid, lanes, open_lanes)) - 1

        if not open_lanes:
            return None
        return min(open_lanes, key=lambda lane: (state.lanes[lane].count, lane))

    def _decision(self, state, vid, lanes, open_lanes) -> LaneDecision:
        return LaneDecision(u=float(self.route_u[vid]), rate=self.flow_rate(self.now),
                queues=tuple(lane.count for lane in state.lanes),
                admissible=frozenset(lane + 1 for lane in lanes),
                open_lanes=frozenset(lane + 1 for lane in open_lanes),
                profile_index=int(self.profile_index[vid]))

    def flow_rate(self, time: float) -> float:
        """Vehicles / hour of routed-station classes scheduled in the
        trailing rate window."""
        window = self.scenario.rate_window
        times = self.routed_arrivals
        count = np.searchsorted(times, time, side="right") - \
                np.searchsorted(times, time - window, side="right")
        span = min(window, max(time, self.scenario.bin_width))
        return float(count) * 3600. / span


    def _join(self, state: StationState, lane: int, vid: int):
        length = self.lengths[vid]
        state.record.join[vid] = self.now
        self._log(EventKind.JOIN_QUEUE, vid, state.station.id)
        if state.shared:
            state.common.append(vid)
            state.common_m += length
            state.occupied += length
            self._dispatch_shared(state)
            return
        lane_state = state.lanes[lane]
        lane_state.queue.append(vid)
        lane_state.waiting_m += length
        lane_state.occupied += length
        lane_state.count += 1
        state.record.lane[vid] = lane + 1
        if lane_state.server is None:
            self._begin_next(state, lane)

    def _begin_next(self, state: StationState, lane: int):
        lane_state = state.lanes[lane]
        vid = lane_state.queue.popleft()
        lane_state.waiting_m -= self.lengths[vid]
        self._begin(state, lane, vid)

    def _begin(self, state: StationState, lane: int, vid: int):
        state.lanes[lane].server = vid
        state.record.begin[vid] = self.now
        state.record.lane[vid] = lane + 1
        self._log(EventKind.BEGIN_SERVICE, vid, state.station.id)
        self._push(self.now + float(state.hold_times[vid]), _END_SERVICE, vid, state.index)

    def _dispatch_shared(self, state: StationState):
        """Starts service for the head of the shared queue on the first free
        lane open to its class, lowest index first."""
        while state.common:
            vid = state.common[0]
            lanes = state.class_lanes[self.schedule.classes[vid]]
            free = next((lane for lane in lanes if state.lanes[lane].server is None), None)
            if free is None:
                return
            state.common.popleft()
            state.common_m -= self.lengths[vid]
            self._begin(state, free, vid)

    def _on_end_service(self, state: StationState, vid: int):
        state.record.end[vid] = self.now
        self._log(EventKind.END_SERVICE, vid, state.station.id)
        lane = int(state.record.lane[vid]) - 1
        state.lanes[lane].blocked = True
        state.blocked.append(lane)
        if self._release_blocked(state):
            self._station_space_freed(state)

    def _release_blocked(self, state: StationState) -> int:
        """Moves served vehicles into the downstream segment in the order
        their service ended, stopping at the first that does not fit."""
        downstream = self.segments[state.index + 1]
        released = 0
        while state.blocked:
            lane = state.blocked[0]
            lane_state = state.lanes[lane]
            vid = lane_state.server
            length = self.lengths[vid]
            if not downstream.has_room(length):
                break
            state.blocked.popleft()
            lane_state.server = None
            lane_state.blocked = False
            if state.shared:
                state.occupied -= length
            else:
                lane_state.occupied -= length
                lane_state.count -= 1
            state.record.exit[vid] = self.now
            self._log(EventKind.EXIT, vid, state.station.id)
            self._enter_segment(state.index + 1, vid)
            if not state.shared and lane_state.queue:
                self._begin_next(state, lane)
            released += 1
        return released

    def _station_space_freed(self, state: StationState):
        if state.shared:
            self._dispatch_shared(state)
        self._advance(state.index)

    def _segment_space_freed(self, index: int):
        if index == 0:
            entry = self.segments[0]
            while self.stack and entry.has_room(self.lengths[self.stack[0]]):
                self._admit(self.stack.popleft(), from_stack=True)
            return
        upstream = self.stations[index - 1]
        if self._release_blocked(upstream):
            self._station_space_freed(upstream)
        else:
            self._advance(index - 1)


    def _result(self, policy_name: str, end_time: float) -> RunResult:
        sample_times = np.asarray(self.sample_times, dtype=np.float64)
        queue_series = {}
        for state in self.stations:
            rows = self.queue_samples[state.station.id]
            queue_series[state.station.id] = np.asarray(rows, dtype=np.float64).reshape(
                    len(rows), state.station.lane_count + 1)
        return RunResult(scenario_name=self.scenario.name,
                scenario_hash=scenario_hash(self.scenario), policy=policy_name,
                seed=self.seed, warmup=self.warmup, horizon=float(self.scenario.horizon),
                drained=self.drain, end_time=end_time,
                vehicle_classes=self.schedule.classes.copy(),
                scheduled=self.schedule.timestamps.copy(), admitted=self.admitted,
                exited=self.exited,
                stations={state.station.id: state.record for state in self.stations},
                sample_times=sample_times, queue_series=queue_series,
                stack_series=np.asarray(self.stack_samples, dtype=np.int64),
                routed_station=self.topology.routed_station, events=self.events)



def run(scenario: ScenarioConfig, policy = "agent", seed: int = 0,
        record_events: bool = True, drain: bool = None, warmup: float = None) -> RunResult:
    """Simulates one replication. Equal (scenario, policy, seed) give an
    identical RunResult, event order included.

    Args:
        scenario (ScenarioConfig): A validated scenario.
        policy: A policy name ('prob-avg', 'prob-flow', 'agent') or object.
        seed (int): The master seed.
        record_events (bool): Keep the full event log.
        drain (bool): Override the scenario's drain setting.
        warmup (float): Override the scenario's warm-up.

    Returns:
        result (RunResult): The run's records.
    """
    return CorridorSimulator(scenario, policy, seed, record_events, drain, warmup).run()
