"""Named, independent random substreams derived from one master seed."""
import numpy as np


STREAM_NAMES = ("arrivals", "service", "routing", "security", "detection")



class RngStreams:
    """Hands out independent numpy generators for each subsystem. Every
    generator is derived from (master seed, stream, child index) through
    `np.random.SeedSequence`, so the arrivals drawn for a seed never depend
    on which policy consumes the routing stream or on how many service
    draws another station made.

    Args:
        seed (int): The master seed. Must be a non-negative integer.

    Raises:
        ValueError: If seed is negative or not an integer.
    """

    def __init__(self, seed: int):
        if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
            raise ValueError(f"The master seed must be an integer >= 0, got {seed!r}.")
        self.seed = int(seed)

    def generator(self, name: str, child: int = 0) -> np.random.Generator:
        """A fresh generator for child `child` of the named stream. Calling
        twice with the same arguments gives generators producing identical
        sequences."""
        if name not in STREAM_NAMES:
            raise ValueError(f"Unknown stream {name!r}; expected one of {STREAM_NAMES}.")
        sequence = np.random.SeedSequence(entropy=self.seed,
                spawn_key=(STREAM_NAMES.index(name), int(child)))
        return np.random.default_rng(sequence)

    def arrivals(self) -> np.random.Generator:
        return self.generator("arrivals")

    def service(self, station_index: int) -> np.random.Generator:
        return self.generator("service", station_index)

    def security(self, station_index: int) -> np.random.Generator:
        return self.generator("security", station_index)

    def routing(self) -> np.random.Generator:
        return self.generator("routing")

    def detection(self, child: int = 0) -> np.random.Generator:
        return self.generator("detection", child)
