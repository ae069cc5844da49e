"""Workload generation, ground truth, trace execution and metrics."""
