"""Event stream to delayed-slice input cube.

The input layer is a ``W' x H' x D`` grid (``x 2`` when polarities are kept in
separate channels). Slice ``d`` is hot at cell ``(u, v)`` when at least one
event mapped to that cell fell in ``[t - (d+1)*slice_interval, t - d*slice_interval)``.
Slice 0 is the most recent interval.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events_io import EventRecord, SensorGeometry, TrialSegment

POLARITY_MODES = ("merge", "separate_channels")
SPIKE_CODINGS = ("level", "edge")


@dataclass(frozen=True)
class EncoderConfig:
    ds_factor: int = 8
    slice_interval: int = 10_000
    depth: int = 4
    sim_step: int = 1_000
    polarity_mode: str = "merge"
    spike_coding: str = "level"
    sensor_width: int = 128
    sensor_height: int = 128

    def __post_init__(self):
        if self.ds_factor < 1:
            raise ValueError("ds_factor must be >= 1")
        if self.sensor_width % self.ds_factor or self.sensor_height % self.ds_factor:
            raise ValueError(
                f"ds_factor {self.ds_factor} must divide the {self.sensor_width}x{self.sensor_height} sensor"
            )
        if not (self.slice_interval >= self.sim_step >= 1):
            raise ValueError("need slice_interval >= sim_step >= 1")
        if self.slice_interval % self.sim_step:
            raise ValueError("slice_interval must be a multiple of sim_step")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.polarity_mode not in POLARITY_MODES:
            raise ValueError(f"polarity_mode must be one of {POLARITY_MODES}")
        if self.spike_coding not in SPIKE_CODINGS:
            raise ValueError(f"spike_coding must be one of {SPIKE_CODINGS}")

    @property
    def geometry(self) -> SensorGeometry:
        return SensorGeometry(self.sensor_width, self.sensor_height)

    @property
    def grid(self) -> tuple[int, int]:
        return self.sensor_width // self.ds_factor, self.sensor_height // self.ds_factor

    @property
    def channels(self) -> int:
        return 2 if self.polarity_mode == "separate_channels" else 1

    @property
    def cube_shape(self) -> tuple[int, ...]:
        w, h = self.grid
        if self.channels == 2:
            return (w, h, self.depth, 2)
        return (w, h, self.depth)

    @property
    def n_inputs(self) -> int:
        return int(np.prod(self.cube_shape))


def downsample(e: EventRecord, cfg: EncoderConfig) -> tuple[int, int]:
    return e.x // cfg.ds_factor, e.y // cfg.ds_factor


class EncodedTrial:
    """Per-trial lookup tables so successive cubes come from two binary searches per slice."""

    def __init__(self, segment: TrialSegment, cfg: EncoderConfig):
        self.cfg = cfg
        self.duration = segment.duration
        t, x, y, p = segment.as_arrays()
        w, h = cfg.grid
        u, v = x // cfg.ds_factor, y // cfg.ds_factor
        if cfg.channels == 2:
            # flat index of (u, v, 0, c); slice d adds d * 2
            self._base = ((u * h + v) * cfg.depth) * 2 + p
            self._slice_stride = 2
        else:
            self._base = (u * h + v) * cfg.depth
            self._slice_stride = 1
        self.times = t

    def hot_indices(self, t_now: int) -> np.ndarray:
        """Sorted flat indices of hot cube cells at ``t_now``."""
        cfg = self.cfg
        parts = []
        for d in range(cfg.depth):
            lo, hi = np.searchsorted(self.times, [t_now - (d + 1) * cfg.slice_interval,
                                                  t_now - d * cfg.slice_interval], side="left")
            if hi > lo:
                parts.append(self._base[lo:hi] + d * self._slice_stride)
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def cube(self, t_now: int) -> np.ndarray:
        occ = np.zeros(self.cfg.n_inputs, dtype=bool)
        occ[self.hot_indices(t_now)] = True
        return occ.reshape(self.cfg.cube_shape)


def encode_step(segment: TrialSegment, t_now: int, cfg: EncoderConfig) -> np.ndarray:
    """Binary occupancy cube of ``segment`` at simulation time ``t_now``."""
    if t_now % cfg.sim_step:
        raise ValueError(f"t_now={t_now} is not a multiple of sim_step={cfg.sim_step}")
    return EncodedTrial(segment, cfg).cube(t_now)


def input_spikes(cube_prev: np.ndarray | None, cube_now: np.ndarray, coding: str = "level") -> np.ndarray:
    """Flat (row-major) indices of input neurons spiking at this step.

    ``level``: every hot cell spikes. ``edge``: only cells that turned hot since
    ``cube_prev`` spike.
    """
    if cube_prev is not None and cube_prev.shape != cube_now.shape:
        raise ValueError(f"cube shapes differ: {cube_prev.shape} vs {cube_now.shape}")
    now = cube_now.ravel()
    if coding == "edge" and cube_prev is not None:
        now = now & ~cube_prev.ravel()
    return np.flatnonzero(now)


def unravel_input(index: int, cfg: EncoderConfig) -> tuple[int, ...]:
    """Inverse of the flat indexing used by ``input_spikes``: ``(u, v, d[, c])``."""
    return tuple(int(i) for i in np.unravel_index(index, cfg.cube_shape))
