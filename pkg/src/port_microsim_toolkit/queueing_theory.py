"""Analytic M/M/c results used as oracles for the simulator."""
import math



def _check(arrival_rate: float, mean_service: float, servers: int):
    if servers < 1:
        raise ValueError(f"servers must be >= 1, got {servers}.")
    if not arrival_rate > 0 or not mean_service > 0:
        raise ValueError("arrival_rate and mean_service must be > 0.")
    utilization = arrival_rate * mean_service / servers
    if utilization >= 1:
        raise ValueError(f"Utilization {utilization:.3f} >= 1; the queue has no steady state.")
    return utilization


def utilization(arrival_rate: float, mean_service: float, servers: int) -> float:
    """rho = lambda / (c mu)."""
    return arrival_rate * mean_service / servers


def erlang_b(servers: int, offered_load: float) -> float:
    """Erlang-B blocking probability through the usual stable recursion."""
    blocking = 1.
    for k in range(1, servers + 1):
        blocking = offered_load * blocking / (k + offered_load * blocking)
    return blocking


def erlang_c_probability(arrival_rate: float, mean_service: float, servers: int) -> float:
    """Probability that an arriving customer has to wait in an M/M/c queue.

    Args:
        arrival_rate (float): Arrivals per second.
        mean_service (float): Mean service time in seconds.
        servers (int): Number of servers c.

    Raises:
        ValueError: If the parameters are invalid or utilization >= 1.
    """
    rho = _check(arrival_rate, mean_service, servers)
    blocking = erlang_b(servers, arrival_rate * mean_service)
    return blocking / (1. - rho * (1. - blocking))


def erlang_c_mean_wait(arrival_rate: float, mean_service: float, servers: int) -> float:
    """Mean time in queue (excluding service) of an M/M/c queue in seconds."""
    rho = _check(arrival_rate, mean_service, servers)
    wait_probability = erlang_c_probability(arrival_rate, mean_service, servers)
    return wait_probability * mean_service / (servers * (1. - rho))


def mmc_mean_queue_length(arrival_rate: float, mean_service: float, servers: int) -> float:
    """Mean number waiting (Little's law applied to the mean wait)."""
    return arrival_rate * erlang_c_mean_wait(arrival_rate, mean_service, servers)


def mmc_mean_in_system(arrival_rate: float, mean_service: float, servers: int) -> float:
    """Mean number in system, waiting plus in service."""
    return mmc_mean_queue_length(arrival_rate, mean_service, servers) + \
            arrival_rate * mean_service


def arrival_rate_for(rho: float, mean_service: float, servers: int) -> float:
    """Arrivals per second giving utilization rho."""
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}.")
    return rho * servers / mean_service
