"""In-process simulation of K workers joined by a metered allreduce.

Every collective merges worker contributions in ascending worker order.  The
fold-style collective goes one step further: the running sum is handed from
worker to worker and each worker adds its own terms onto it, so when the
partition is contiguous the addition sequence is identical for every K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import DimensionError


def partition_even(n, k):
    """Split ``range(n)`` into ``k`` contiguous ranges whose sizes differ by at most 1.

    The remainder goes to the leading blocks: ``partition_even(10, 4)`` has
    sizes (3, 3, 2, 2).
    """
    if k < 1:
        raise ValueError("need at least one worker")
    if k > n:
        raise ValueError(f"cannot split {n} items across {k} workers")
    base, extra = divmod(n, k)
    out, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


def fold_sum(acc, terms):
    """Add ``terms`` (along axis 0) onto ``acc`` strictly left to right."""
    terms = np.asarray(terms, dtype=np.float64)
    if len(terms) == 0:
        return acc
    acc = np.asarray(acc, dtype=np.float64)
    return np.cumsum(np.concatenate((acc[None], terms)), axis=0)[-1]


@dataclass
class CommLedger:
    """Running totals of allreduce traffic, with unit latency and byte costs."""

    rounds: int = 0
    scalars_transmitted: int = 0
    modeled_latency_units: float = 0.0
    modeled_byte_units: float = 0.0

    def record(self, length, k):
        self.rounds += 1
        self.scalars_transmitted += int(length)
        self.modeled_latency_units += math.log2(max(k, 2))
        self.modeled_byte_units += float(length)

    def snapshot(self):
        return (self.rounds, self.scalars_transmitted)

    def modeled_cost(self, t_initial=1.0, t_byte=1.0):
        return t_initial * self.modeled_latency_units + t_byte * self.modeled_byte_units


class ClusterSim:
    """K simulated workers.

    Parameters
    ----------
    k : int
        Number of workers.
    instance_ranges, variable_ranges : list of range, optional
        Ownership of data columns and of optimization variables.  Either may
        be left unset when the caller only needs the collectives.
    """

    def __init__(self, k, instance_ranges=None, variable_ranges=None):
        if k < 1:
            raise ValueError("K must be >= 1")
        self.k = int(k)
        for ranges in (instance_ranges, variable_ranges):
            if ranges is not None:
                _check_partition(ranges, self.k)
        self.instance_ranges = instance_ranges
        self.variable_ranges = variable_ranges

    def __repr__(self):
        return f"ClusterSim(k={self.k})"

    def allreduce_sum(self, per_worker_vectors, ledger):
        vecs = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in per_worker_vectors]
        if len(vecs) != self.k:
            raise DimensionError(f"expected {self.k} contributions, got {len(vecs)}")
        length = vecs[0].shape[0]
        if any(v.shape != (length,) for v in vecs):
            raise DimensionError("allreduce contributions differ in length")
        out = np.zeros(length)
        for v in vecs:
            out = out + v
        ledger.record(length, self.k)
        return out

    def allreduce_scalar(self, per_worker_scalars, ledger):
        return float(self.allreduce_sum([[s] for s in per_worker_scalars], ledger)[0])

    def allreduce_min(self, per_worker_values, ledger):
        vals = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in per_worker_values]
        if len(vals) != self.k:
            raise DimensionError(f"expected {self.k} contributions, got {len(vals)}")
        length = vals[0].shape[0]
        if any(v.shape != (length,) for v in vals):
            raise DimensionError("allreduce contributions differ in length")
        ledger.record(length, self.k)
        return np.minimum.reduce(vals)

    def allreduce_fold(self, folds, length, ledger):
        """Ordered chained reduction.

        ``folds[k]`` maps the running sum (a length-``length`` vector) to the
        running sum with worker k's terms added.  Costs one round.
        """
        if len(folds) != self.k:
            raise DimensionError(f"expected {self.k} contributions, got {len(folds)}")
        acc = np.zeros(length)
        for fold in folds:
            acc = fold(acc)
            if acc.shape != (length,):
                raise DimensionError("fold changed the reduction length")
        ledger.record(length, self.k)
        return acc

    def fold_slots(self, slot_terms, ledger):
        """Reduce several independent sums in one round.

        ``slot_terms[k][j]`` is the 1-D array of worker k's terms for slot j;
        each slot is folded left to right across workers in order.
        """
        n_slots = len(slot_terms[0])

        def make(terms):
            def fold(acc):
                return np.array([fold_sum(acc[j], terms[j]) for j in range(n_slots)])

            return fold

        return self.allreduce_fold([make(t) for t in slot_terms], n_slots, ledger)

    def fold_vectors(self, vector_terms, length, ledger):
        """One round reducing a vector; worker k supplies a (r_k, length) stack."""
        return self.allreduce_fold(
            [lambda acc, t=t: fold_sum(acc, t) for t in vector_terms], length, ledger
        )


def _check_partition(ranges, k):
    if len(ranges) != k:
        raise ValueError("partition must have one range per worker")
    start = 0
    for r in ranges:
        if r.start != start or r.stop < r.start:
            raise ValueError("ranges must be contiguous, disjoint and in order")
        start = r.stop
