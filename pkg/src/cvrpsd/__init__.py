"""Batched split evaluation and sample-average search for the CVRP with stochastic demand."""

__version__ = "0.1.0"
