"""Fixed-length readouts of an output-layer spike trace.

Three codings: spike count per neuron (rate), normalised first-spike time
(latency) and order of first spikes (rank order). Silent neurons get the
worst value: latency 1.0, rank ``n_output``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .network import SpikeTrace

CODINGS = ("rate", "latency", "rank_order")


@dataclass
class FeatureVector:
    coding: str
    values: np.ndarray
    trial_ref: int | str
    label: int


def _output_spikes(trace: SpikeTrace) -> list[tuple[int, int]]:
    return trace.layer("output")


def _first_spikes(trace: SpikeTrace, n_output: int) -> np.ndarray:
    first = np.full(n_output, np.inf)
    for t, i in _output_spikes(trace):
        if t < first[i]:
            first[i] = t
    return first


def decode_rate(trace: SpikeTrace, window_us: int, n_output: int) -> np.ndarray:
    counts = np.zeros(n_output)
    for t, i in _output_spikes(trace):
        if 0 <= t <= window_us:
            counts[i] += 1
    return counts


def decode_latency(trace: SpikeTrace, window_us: int, n_output: int) -> np.ndarray:
    first = _first_spikes(trace, n_output)
    return np.where(np.isfinite(first), np.minimum(first / window_us, 1.0), 1.0)


def decode_rank_order(trace: SpikeTrace, n_output: int) -> np.ndarray:
    first = _first_spikes(trace, n_output)
    ranks = np.full(n_output, float(n_output))
    spiking = np.flatnonzero(np.isfinite(first))
    # stable sort on time keeps lower ids first among ties
    order = spiking[np.argsort(first[spiking], kind="stable")]
    ranks[order] = np.arange(len(order))
    return ranks


def decode(trace: SpikeTrace, coding: str, n_output: int, window_us: int | None = None) -> np.ndarray:
    window = trace.window_us if window_us is None else window_us
    if coding == "rate":
        return decode_rate(trace, window, n_output)
    if coding == "latency":
        return decode_latency(trace, window, n_output)
    if coding == "rank_order":
        return decode_rank_order(trace, n_output)
    raise ValueError(f"unknown coding {coding!r}; expected one of {CODINGS}")


def features_to_csv(features: Sequence[FeatureVector]) -> str:
    lines = []
    if features:
        n = len(features[0].values)
        lines.append(",".join(["trial_id", "label", "coding"] + [f"v{i}" for i in range(n)]))
    for f in features:
        vals = ",".join(repr(float(v)) for v in f.values)
        lines.append(f"{f.trial_ref},{f.label},{f.coding},{vals}")
    return "\n".join(lines) + ("\n" if lines else "")


def features_from_csv(text: str) -> list[FeatureVector]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line or line.startswith("trial_id"):
            continue
        parts = line.split(",")
        try:
            out.append(FeatureVector(parts[2], np.array([float(v) for v in parts[3:]]), parts[0], int(parts[1])))
        except (ValueError, IndexError):
            raise ValueError(f"malformed feature row (line {lineno})") from None
    return out
