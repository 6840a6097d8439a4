"""Service-time and security-check sampling."""
import numpy as np

from ..scenario import ServiceModel


# Rejection rounds before NormalTruncated gives up on a badly configured
# model (mean far below zero).
MAX_REJECTION_ROUNDS = 10000



def sample_service_times(model: ServiceModel, rng: np.random.Generator,
        size: int) -> np.ndarray:
    """Draws `size` strictly positive service times. NormalTruncated
    samples are redrawn until positive; Deterministic consumes no random
    numbers.

    Raises:
        RuntimeError: If truncated normal sampling fails to produce a
            positive value after MAX_REJECTION_ROUNDS rounds.
    """
    if model.distribution == "Deterministic":
        return np.full(size, float(model.mean))
    if model.distribution == "Exponential":
        samples = rng.exponential(model.mean, size)
        while True:
            bad = samples <= 0
            if not bad.any():
                return samples
            samples[bad] = rng.exponential(model.mean, int(bad.sum()))
    if model.distribution != "NormalTruncated":
        raise ValueError(f"Unknown service distribution {model.distribution!r}.")

    samples = rng.normal(model.mean, model.sd, size)
    for _ in range(MAX_REJECTION_ROUNDS):
        bad = samples <= 0
        if not bad.any():
            return samples
        samples[bad] = rng.normal(model.mean, model.sd, int(bad.sum()))
    raise RuntimeError(f"NormalTruncated({model.mean}, {model.sd}) produced no positive "
            "sample; the model is effectively degenerate.")


def sample_service_time(model: ServiceModel, rng: np.random.Generator) -> float:
    """One strictly positive service time from the configured distribution."""
    return float(sample_service_times(model, rng, 1)[0])


def security_delays(model: ServiceModel, rng: np.random.Generator, size: int) -> np.ndarray:
    """Extra delay for `size` vehicles. One uniform is consumed per vehicle
    whatever the outcome, keeping the stream aligned across policies."""
    draws = rng.random(size)
    return np.where(draws < model.security_check_probability,
            float(model.security_check_delay), 0.)


def security_check(model: ServiceModel, rng: np.random.Generator) -> float:
    """Returns security_check_delay with probability
    security_check_probability, else 0."""
    return float(security_delays(model, rng, 1)[0])
