"""Neuron and synapse kernels shared by every layer.

Times are in microseconds. All decays use the exact exponential factor
``exp(-dt / tau)`` so that n silent steps equal the closed form.

``NeuronState`` updates are functional (a fresh state is returned). The
synapse kernels modify their ``SynapseArray`` in place and return it, since
the weight matrices are large and owned by a single network.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class NeuronParams:
    tau_m: float = 20_000.0
    v_thresh0: float = 1.0
    v_reset: float = 0.0
    t_refrac: float = 2_000.0
    theta_inc: float = 0.005
    tau_theta: float = 1e7

    def __post_init__(self):
        if self.tau_m <= 0 or self.tau_theta <= 0:
            raise ValueError("time constants must be positive")
        if self.v_thresh0 <= self.v_reset:
            raise ValueError("v_thresh0 must exceed v_reset")
        if self.t_refrac < 0 or self.theta_inc < 0:
            raise ValueError("t_refrac and theta_inc must be non-negative")


@dataclass(frozen=True)
class PlasticityParams:
    a_plus: float = 0.01
    a_minus: float = 0.008
    tau_pre: float = 20_000.0
    tau_post: float = 20_000.0
    u_depress: float = 0.1
    tau_recover: float = 200_000.0
    w_max: float = 1.0
    learning_enabled: bool = True

    def __post_init__(self):
        if self.a_plus < 0 or self.a_minus < 0:
            raise ValueError("STDP amplitudes must be non-negative")
        if not 0 <= self.u_depress < 1:
            raise ValueError("u_depress must lie in [0, 1)")
        if min(self.tau_pre, self.tau_post, self.tau_recover) <= 0:
            raise ValueError("time constants must be positive")
        if self.w_max <= 0:
            raise ValueError("w_max must be positive")


@dataclass(frozen=True)
class NeuronState:
    v: np.ndarray
    theta: np.ndarray
    last_spike_t: np.ndarray  # nan until the first spike
    refractory_until: np.ndarray

    @classmethod
    def rest(cls, n: int, params: NeuronParams) -> "NeuronState":
        return cls(
            v=np.full(n, params.v_reset, dtype=float),
            theta=np.zeros(n),
            last_spike_t=np.full(n, np.nan),
            refractory_until=np.full(n, -np.inf),
        )

    def threshold(self, params: NeuronParams) -> np.ndarray:
        return params.v_thresh0 + self.theta


def lif_step(
    s: NeuronState,
    params: NeuronParams,
    input_current,
    t: float,
    dt: float,
    can_spike: bool = True,
) -> tuple[NeuronState, np.ndarray]:
    """Advance leaky integrate-and-fire neurons by one step.

    Refractory neurons hold ``v_reset`` and ignore input. With
    ``can_spike=False`` the potential integrates but no spike is emitted
    (used for vetoed layers; call ``fire`` afterwards to pick spikers).
    """
    refractory = t < s.refractory_until
    v = np.where(refractory, params.v_reset, s.v * np.exp(-dt / params.tau_m) + input_current)
    theta = s.theta * np.exp(-dt / params.tau_theta)
    decayed = NeuronState(v, theta, s.last_spike_t, s.refractory_until)
    if not can_spike:
        return decayed, np.zeros(v.shape, dtype=bool)
    spiked = (v >= params.v_thresh0 + theta) & ~refractory
    return fire(decayed, params, spiked, t), spiked


def fire(s: NeuronState, params: NeuronParams, mask: np.ndarray, t: float) -> NeuronState:
    """Emit spikes for ``mask``: reset, raise the threshold, start refractoriness."""
    if not np.any(mask):
        return s
    return NeuronState(
        v=np.where(mask, params.v_reset, s.v),
        theta=np.where(mask, s.theta + params.theta_inc, s.theta),
        last_spike_t=np.where(mask, t, s.last_spike_t),
        refractory_until=np.where(mask, t + params.t_refrac, s.refractory_until),
    )


@dataclass
class SynapseArray:
    w: np.ndarray       # (n_pre, n_post) in [0, w_max]
    e: np.ndarray       # (n_pre, n_post) short-term efficacy in (0, 1]
    x_pre: np.ndarray   # (n_pre,)
    x_post: np.ndarray  # (n_post,)
    connected: np.ndarray | None = None  # (n_pre, n_post) bool; None means all-to-all
    depressed: np.ndarray | None = None  # rows whose efficacy may sit below 1

    def __post_init__(self):
        if self.depressed is None:
            self.depressed = np.any(self.e < 1.0, axis=1)

    @classmethod
    def from_weights(cls, w: np.ndarray, connected: np.ndarray | None = None) -> "SynapseArray":
        n_pre, n_post = w.shape
        w = w.astype(float)
        if connected is not None:
            w = np.where(connected, w, 0.0)
        return cls(w=w, e=np.ones((n_pre, n_post)), x_pre=np.zeros(n_pre), x_post=np.zeros(n_post),
                   connected=connected)

    def reset_efficacy(self) -> None:
        self.e.fill(1.0)
        self.depressed.fill(False)

    def transmit(self, pre_ids: np.ndarray) -> np.ndarray:
        """Summed effective weight ``w * e`` per post neuron from the spiking ``pre_ids``."""
        if len(pre_ids) == 0:
            return np.zeros(self.w.shape[1])
        return (self.w[pre_ids] * self.e[pre_ids]).sum(axis=0)


def stp_on_pre(syn: SynapseArray, pre_ids, params: PlasticityParams) -> SynapseArray:
    """Depress the efficacy of every synapse leaving a spiking presynaptic neuron."""
    if params.u_depress:
        syn.e[pre_ids] *= 1.0 - params.u_depress
        syn.depressed[pre_ids] = True
    return syn


def recover_efficacy(syn: SynapseArray, params: PlasticityParams, dt: float) -> SynapseArray:
    """Exponential recovery of efficacy toward 1: ``e <- 1 - (1 - e) * exp(-dt / tau_recover)``."""
    rows = np.flatnonzero(syn.depressed)
    if len(rows):
        k = np.exp(-dt / params.tau_recover)
        syn.e[rows] = 1.0 - (1.0 - syn.e[rows]) * k
    return syn


def decay_traces(syn: SynapseArray, params: PlasticityParams, dt: float) -> SynapseArray:
    syn.x_pre *= np.exp(-dt / params.tau_pre)
    syn.x_post *= np.exp(-dt / params.tau_post)
    return syn


def stdp_on_pre(syn: SynapseArray, pre_ids, params: PlasticityParams) -> SynapseArray:
    """Presynaptic spike: depress by the postsynaptic trace, then bump the pre trace."""
    if params.learning_enabled:
        rows = np.clip(syn.w[pre_ids] - params.a_minus * syn.x_post[None, :], 0.0, params.w_max)
        if syn.connected is not None:
            rows *= syn.connected[pre_ids]
        syn.w[pre_ids] = rows
    syn.x_pre[pre_ids] += 1.0
    return syn


def stdp_on_post(syn: SynapseArray, post_ids, params: PlasticityParams) -> SynapseArray:
    """Postsynaptic spike: potentiate by the presynaptic trace, then bump the post trace."""
    if params.learning_enabled:
        cols = np.clip(syn.w[:, post_ids] + params.a_plus * syn.x_pre[:, None], 0.0, params.w_max)
        if syn.connected is not None:
            cols *= syn.connected[:, post_ids]
        syn.w[:, post_ids] = cols
    syn.x_post[post_ids] += 1.0
    return syn


def normalize_columns(
    syn: SynapseArray, post_ids, target: float, params: PlasticityParams, mode: str = "multiplicative"
) -> SynapseArray:
    """Bring the incoming weights of ``post_ids`` back to column sum ``target``.

    ``multiplicative`` rescales each column. ``subtractive`` removes the same amount
    from every existing synapse of the column, which preserves the differences
    between weights and so sharpens selectivity.
    """
    if not params.learning_enabled or not len(post_ids):
        return syn
    cols = syn.w[:, post_ids]
    sums = cols.sum(axis=0)
    if mode == "multiplicative":
        sums[sums == 0] = 1.0
        cols = cols * (target / sums)
    elif mode == "subtractive":
        if syn.connected is None:
            n = np.full(len(sums), cols.shape[0])
        else:
            n = np.maximum(syn.connected[:, post_ids].sum(axis=0), 1)
        cols = cols - (sums - target) / n
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    cols = np.clip(cols, 0.0, params.w_max)
    if syn.connected is not None:
        cols = np.where(syn.connected[:, post_ids], cols, 0.0)
    syn.w[:, post_ids] = cols
    return syn


def with_learning(params: PlasticityParams, enabled: bool) -> PlasticityParams:
    return replace(params, learning_enabled=enabled)
