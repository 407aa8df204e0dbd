"""Attention-gated three-layer spiking network.

Input cube -> Intermediate layer -> Output layer, with one Attention neuron
driven by the input through habituating synapses. While the Attention neuron
is active the Intermediate layer receives input and the Output layer
integrates but may not spike; when attention releases, the Output layer is
allowed to fire (winner-take-all by default).
"""
from __future__ import annotations

import copy
import csv
import io
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .encoder import EncodedTrial, EncoderConfig
from .events_io import TrialSegment
from .snn_core import (
    NeuronParams,
    NeuronState,
    PlasticityParams,
    SynapseArray,
    decay_traces,
    fire,
    normalize_columns,
    lif_step,
    recover_efficacy,
    stdp_on_post,
    stdp_on_pre,
    stp_on_pre,
)

LAYERS = ("attention", "intermediate", "output")
NORMALIZATION_MODES = ("none", "multiplicative", "subtractive")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkTopology:
    n_input: int
    n_intermediate: int = 64
    n_output: int = 10
    lateral_inhibition_output: bool = True

    def __post_init__(self):
        for name in ("n_input", "n_intermediate", "n_output"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class NetworkParams:
    """Network-level knobs that are not neuron or plasticity parameters."""

    n_intermediate: int = 64
    n_output: int = 10
    lateral_inhibition_output: bool = True
    output_freeze: bool = False
    normalize_output: str = "subtractive"
    w_init_low: float = 0.3
    w_init_high: float = 0.7
    input_connectivity: float = 0.1
    input_gain: float = 0.07
    output_gain: float = 0.5
    output_tau_m: float = 100_000.0
    output_tau_pre: float | None = None
    output_theta_inc: float | None = 0.1
    output_lr_scale: float = 5.0
    input_lr_scale: float = 0.05
    tail_us: int | None = None
    theta_on: float = 1.0
    theta_off: float = 0.4
    tau_att: float = 5_000.0
    att_gain: float = 0.2
    u_habit: float = 0.001
    tau_habit: float = 5e7

    def __post_init__(self):
        if not self.theta_off < self.theta_on:
            raise ConfigError("theta_off must be strictly below theta_on")
        if not 0 <= self.w_init_low <= self.w_init_high <= 1:
            raise ConfigError("need 0 <= w_init_low <= w_init_high <= 1 (fractions of w_max)")
        if not 0 < self.input_connectivity <= 1:
            raise ConfigError("input_connectivity must lie in (0, 1]")
        if not 0 <= self.u_habit < 1:
            raise ConfigError("u_habit must lie in [0, 1)")
        if min(self.tau_att, self.tau_habit, self.output_tau_m) <= 0:
            raise ConfigError("time constants must be positive")
        if self.normalize_output not in NORMALIZATION_MODES:
            raise ConfigError(f"normalize_output must be one of {NORMALIZATION_MODES}")
        if self.output_theta_inc is not None and self.output_theta_inc < 0:
            raise ConfigError("output_theta_inc must be non-negative")
        if self.output_tau_pre is not None and self.output_tau_pre <= 0:
            raise ConfigError("output_tau_pre must be positive")
        if min(self.output_lr_scale, self.input_lr_scale) < 0:
            raise ConfigError("learning-rate scales must be non-negative")
        if self.tail_us is not None and self.tail_us < 0:
            raise ConfigError("tail_us must be non-negative")

    def tail_for(self, enc: EncoderConfig) -> int:
        # the cube keeps an event for depth slices, then attention needs a few tau_att to decay
        if self.tail_us is not None:
            return self.tail_us
        return (enc.depth + 2) * enc.slice_interval


@dataclass
class AttentionState:
    v_att: float
    active: bool
    habituation: np.ndarray


def attention_update(att: AttentionState, input_ids, dt: float, params: NetworkParams) -> AttentionState:
    """Leaky integration of habituated input with two-threshold hysteresis.

    Each spiking input contributes its current habituation efficacy, which is
    then depressed by ``u_habit``; efficacies recover toward 1 with ``tau_habit``.
    """
    h = 1.0 - (1.0 - att.habituation) * np.exp(-dt / params.tau_habit)
    v = att.v_att * np.exp(-dt / params.tau_att)
    if len(input_ids):
        v += params.att_gain * h[input_ids].sum()
        h[input_ids] *= 1.0 - params.u_habit
    active = att.active
    if not active and v >= params.theta_on:
        active = True
    elif active and v <= params.theta_off:
        active = False
    return AttentionState(float(v), active, h)


@dataclass
class SpikeTrace:
    records: list[tuple[int, str, int]] = field(default_factory=list)
    attention_intervals: list[tuple[int, int]] = field(default_factory=list)
    window_us: int = 0

    def layer(self, name: str) -> list[tuple[int, int]]:
        return [(t, i) for t, layer, i in self.records if layer == name]

    def count(self, name: str) -> int:
        return sum(1 for _, layer, _ in self.records if layer == name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t_us,layer,neuron_id\n")
        for t, layer, i in self.records:
            buf.write(f"{t},{layer},{i}\n")
        return buf.getvalue()

    def intervals_csv(self) -> str:
        return "t_on_us,t_off_us\n" + "".join(f"{a},{b}\n" for a, b in self.attention_intervals)

    @classmethod
    def from_csv(cls, text: str, intervals_text: str | None = None, window_us: int = 0) -> "SpikeTrace":
        records = []
        for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
            if not row or (lineno == 1 and row[0] == "t_us"):
                continue
            if len(row) != 3 or row[1] not in LAYERS:
                raise ValueError(f"malformed trace row {row!r} (line {lineno})")
            try:
                records.append((int(row[0]), row[1], int(row[2])))
            except ValueError:
                raise ValueError(f"malformed trace row {row!r} (line {lineno})") from None
        intervals = []
        if intervals_text:
            for lineno, row in enumerate(csv.reader(io.StringIO(intervals_text)), start=1):
                if not row or (lineno == 1 and row[0] == "t_on_us"):
                    continue
                try:
                    a, b = int(row[0]), int(row[1])
                except (ValueError, IndexError):
                    raise ValueError(f"malformed interval row {row!r} (line {lineno})") from None
                intervals.append((a, b))
        return cls(records, intervals, window_us)


@dataclass
class StepSpikes:
    attention_active: bool
    onset: bool
    offset: bool
    intermediate: np.ndarray
    output: np.ndarray


@dataclass
class NetworkState:
    topology: NetworkTopology
    neuron: NeuronParams
    output_neuron: NeuronParams
    plasticity: PlasticityParams
    params: NetworkParams
    intermediate: NeuronState
    output: NeuronState
    syn_in: SynapseArray
    syn_out: SynapseArray
    attention: AttentionState

    def copy(self) -> "NetworkState":
        return copy.deepcopy(self)

    def reset_dynamics(self) -> None:
        """Clear fast state between trials; weights, thresholds and habituation persist."""
        for name, params in (("intermediate", self.neuron), ("output", self.output_neuron)):
            s = getattr(self, name)
            fresh = NeuronState.rest(len(s.v), params)
            setattr(self, name, replace(fresh, theta=s.theta.copy()))
        for syn in (self.syn_in, self.syn_out):
            syn.reset_efficacy()
            syn.x_pre.fill(0.0)
            syn.x_post.fill(0.0)
        self.attention = AttentionState(0.0, False, self.attention.habituation)


def build_network(
    topology: NetworkTopology,
    neuron: NeuronParams,
    plasticity: PlasticityParams,
    params: NetworkParams | None = None,
    seed: int = 0,
) -> NetworkState:
    """Fresh network with uniform random weights in ``[w_init_low, w_init_high] * w_max``."""
    params = params or NetworkParams()
    rng = np.random.default_rng(seed)
    lo, hi = params.w_init_low * plasticity.w_max, params.w_init_high * plasticity.w_max
    w_in = rng.uniform(lo, hi, (topology.n_input, topology.n_intermediate))
    w_out = rng.uniform(lo, hi, (topology.n_intermediate, topology.n_output))
    connected = None
    if params.input_connectivity < 1.0:
        connected = rng.random(w_in.shape) < params.input_connectivity
    output_neuron = replace(neuron, tau_m=params.output_tau_m)
    if params.output_theta_inc is not None:
        output_neuron = replace(output_neuron, theta_inc=params.output_theta_inc)
    return NetworkState(
        topology=topology,
        neuron=neuron,
        output_neuron=output_neuron,
        plasticity=plasticity,
        params=params,
        intermediate=NeuronState.rest(topology.n_intermediate, neuron),
        output=NeuronState.rest(topology.n_output, output_neuron),
        syn_in=SynapseArray.from_weights(w_in, connected),
        syn_out=SynapseArray.from_weights(w_out),
        attention=AttentionState(0.0, False, np.ones(topology.n_input)),
    )


@lru_cache(maxsize=32)
def _output_plasticity(plast: PlasticityParams, p: NetworkParams) -> PlasticityParams:
    # the presynaptic trace spans the output integration window, so the winner
    # credits every intermediate neuron that fed it during the episode
    return replace(
        plast,
        tau_pre=p.output_tau_pre or p.output_tau_m,
        a_plus=plast.a_plus * p.output_lr_scale,
        a_minus=plast.a_minus * p.output_lr_scale,
    )


@lru_cache(maxsize=32)
def _input_plasticity(plast: PlasticityParams, p: NetworkParams) -> PlasticityParams:
    if p.input_lr_scale == 1.0:
        return plast
    return replace(plast, a_plus=plast.a_plus * p.input_lr_scale, a_minus=plast.a_minus * p.input_lr_scale)


def _step(net: NetworkState, input_ids: np.ndarray, t: int, dt: int) -> StepSpikes:
    p = net.params
    plast = _input_plasticity(net.plasticity, p)
    plast_out = _output_plasticity(net.plasticity, p)
    was_active = net.attention.active
    net.attention = attention_update(net.attention, input_ids, dt, p)
    active = net.attention.active

    for syn, sp in ((net.syn_in, plast), (net.syn_out, plast_out)):
        decay_traces(syn, sp, dt)
        recover_efficacy(syn, sp, dt)

    # input -> intermediate is gated at the presynaptic side
    if active and len(input_ids):
        current_in = p.input_gain * net.syn_in.transmit(input_ids)
        stp_on_pre(net.syn_in, input_ids, plast)
        stdp_on_pre(net.syn_in, input_ids, plast)
    else:
        current_in = 0.0
    net.intermediate, inter_spk = lif_step(net.intermediate, net.neuron, current_in, t, dt, can_spike=active)
    inter_ids = np.flatnonzero(inter_spk)
    if len(inter_ids):
        stdp_on_post(net.syn_in, inter_ids, plast)

    current_out = p.output_gain * net.syn_out.transmit(inter_ids) if len(inter_ids) else 0.0
    if len(inter_ids):
        stp_on_pre(net.syn_out, inter_ids, plast)
        stdp_on_pre(net.syn_out, inter_ids, plast_out)

    out_ids = np.zeros(0, dtype=np.int64)
    if active and p.output_freeze:
        pass
    else:
        net.output, _ = lif_step(net.output, net.output_neuron, current_out, t, dt, can_spike=False)
    if not active:
        out = net.output
        margin = out.v - out.threshold(net.output_neuron)
        candidates = (margin >= 0) & (t >= out.refractory_until)
        if candidates.any():
            if net.topology.lateral_inhibition_output:
                winner = int(np.argmax(np.where(candidates, margin, -np.inf)))
                mask = np.zeros(len(out.v), dtype=bool)
                mask[winner] = True
                out = fire(out, net.output_neuron, mask, t)
                out = replace(out, v=np.full(len(out.v), net.output_neuron.v_reset))
            else:
                mask = candidates
                out = fire(out, net.output_neuron, mask, t)
            net.output = out
            out_ids = np.flatnonzero(mask)
            stdp_on_post(net.syn_out, out_ids, plast_out)
            if p.normalize_output != "none":
                target = 0.5 * (p.w_init_low + p.w_init_high) * plast.w_max * net.topology.n_intermediate
                normalize_columns(net.syn_out, out_ids, target, plast_out, p.normalize_output)

    return StepSpikes(active, active and not was_active, was_active and not active, inter_ids, out_ids)


def simulate_step(
    net: NetworkState,
    cube: np.ndarray,
    t: int,
    dt: int,
    cube_prev: np.ndarray | None = None,
    coding: str = "level",
) -> tuple[NetworkState, StepSpikes]:
    """One simulation step driven by an input cube. ``net`` is updated in place and returned."""
    from .encoder import input_spikes

    if cube.size != net.topology.n_input:
        raise ValueError(f"cube has {cube.size} cells, network expects {net.topology.n_input}")
    spikes = _step(net, input_spikes(cube_prev, cube, coding), t, dt)
    return net, spikes


def run_trial(
    net: NetworkState,
    trial: TrialSegment,
    enc: EncoderConfig,
    learning: bool = False,
    reset: bool = True,
) -> tuple[NetworkState, SpikeTrace]:
    """Simulate one trial from t=0 through its duration plus the configured tail.

    ``net`` is updated in place. With ``reset`` the fast dynamic state is cleared
    first so trials do not leak into each other.
    """
    if enc.n_inputs != net.topology.n_input:
        raise ConfigError(f"encoder yields {enc.n_inputs} inputs, network has {net.topology.n_input}")
    if reset:
        net.reset_dynamics()
    saved = net.plasticity
    net.plasticity = replace(saved, learning_enabled=learning and saved.learning_enabled)
    try:
        trace = _run(net, EncodedTrial(trial, enc), enc, net.params.tail_for(enc))
    finally:
        net.plasticity = saved
    return net, trace


def _run(net: NetworkState, encoded: EncodedTrial, enc: EncoderConfig, tail: int) -> SpikeTrace:
    dt = enc.sim_step
    window = encoded.duration + tail
    trace = SpikeTrace(window_us=window)
    prev = np.zeros(0, dtype=np.int64)
    t_on = None
    for t in range(0, window, dt):
        hot = encoded.hot_indices(t)
        ids = np.setdiff1d(hot, prev, assume_unique=True) if enc.spike_coding == "edge" else hot
        prev = hot
        s = _step(net, ids, t, dt)
        if s.onset:
            t_on = t
            trace.records.append((t, "attention", 0))
        if s.offset:
            trace.attention_intervals.append((t_on, t))
            t_on = None
        trace.records.extend((t, "intermediate", int(i)) for i in s.intermediate)
        trace.records.extend((t, "output", int(i)) for i in s.output)
    if t_on is not None:
        trace.attention_intervals.append((t_on, window))
    return trace


def total_simulated_time(trials: Sequence[TrialSegment], enc: EncoderConfig, params: NetworkParams) -> int:
    """Microseconds simulated by running every trial once (duration plus tail, on the step grid)."""
    tail = params.tail_for(enc)
    dt = enc.sim_step
    return sum(-(-(tr.duration + tail) // dt) * dt for tr in trials)


def train_unsupervised(
    net: NetworkState,
    trials: Sequence[TrialSegment],
    enc: EncoderConfig,
    epochs: int = 1,
    seed: int = 0,
) -> NetworkState:
    """Run every trial with learning on, in a seeded random order per epoch.

    Only event content and durations are read; class labels are never touched.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if not trials:
        raise ValueError("cannot train on an empty trial list")
    rng = np.random.default_rng(seed)
    encoded = [EncodedTrial(tr, enc) for tr in trials]
    tail = net.params.tail_for(enc)
    for _ in range(epochs):
        for i in rng.permutation(len(encoded)):
            net.reset_dynamics()
            _run(net, encoded[i], enc, tail)
    return net
