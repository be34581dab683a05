"""Learning free-energy gradient flows on finite Markov chains from
population snapshots."""

__version__ = "0.1.0"
