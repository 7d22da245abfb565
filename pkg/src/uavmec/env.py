"""
Per-epoch dynamics of the UAV-assisted MEC system.

Within one epoch every mobile user goes through, in this order:
association update, schedule initialisation, local computation, BS and
UAV transmission, UAV processing, queue update with a Bernoulli arrival.
Mobility is then stepped for the UAV and all users, and utilities are
computed from the epoch's delays and energies.
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import SystemConfig, local_epochs_needed
from .exceptions import InfeasibleActionError
from .mobility import (
    MuMobilityState,
    UavMobilityState,
    initial_mu_state,
    initial_uav_state,
    step_mu,
    step_uav,
    to_location,
)
from .radio import RadioMap, rate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Action:
    """Local-schedule bit X and remote target F (0 none, 1..B a BS, B+1 the UAV)."""

    local_schedule: int = 0
    remote_target: int = 0

    def index(self, num_bs: int) -> int:
        return self.local_schedule * (num_bs + 2) + self.remote_target

    @classmethod
    def from_index(cls, index: int, num_bs: int) -> "Action":
        if not 0 <= index < 2 * (num_bs + 2):
            raise ValueError(f"action index {index} out of range for {num_bs} base stations")
        local, remote = divmod(int(index), num_bs + 2)
        return cls(local, remote)

    def __str__(self):
        return f"({self.local_schedule}, {self.remote_target})"


IDLE = Action(0, 0)


@dataclass(frozen=True)
class LocalState:
    """What one mobile user knows about itself at the start of an epoch."""

    mu_loc: int
    uav_loc: int
    queue_len: int = 0
    assoc: int = 1  # 1..B a base station, B+1 the UAV
    local_remaining_epochs: int = 0
    uav_remaining_bits: float = 0.0
    bs_tx_remaining_bits: float = 0.0
    uav_tx_remaining_bits: float = 0.0

    @property
    def cpu_free(self) -> bool:
        return self.local_remaining_epochs == 0

    @property
    def remote_in_flight(self) -> bool:
        return (
            self.bs_tx_remaining_bits > 0
            or self.uav_tx_remaining_bits > 0
            or self.uav_remaining_bits > 0
        )


@dataclass(frozen=True)
class EpochOutcome:
    """Delays (s), energies (J) and utility of one user in one epoch."""

    d_local: float = 0.0
    d_uav_proc: float = 0.0
    y_bs: float = 0.0
    y_uav: float = 0.0
    d_queueing: float = 0.0
    e_local: float = 0.0
    e_bs: float = 0.0
    e_uav_tx: float = 0.0
    utility: float = 0.0
    handover: bool = False
    arrival: bool = False
    departures: int = 0

    @property
    def total_delay(self) -> float:
        return self.d_local + self.d_uav_proc + self.y_bs + self.y_uav + self.d_queueing

    @property
    def total_energy(self) -> float:
        return self.e_local + self.e_bs + self.e_uav_tx


@dataclass
class GlobalState:
    local_states: List[LocalState]
    uav: UavMobilityState
    mus: List[MuMobilityState]
    observations: List[float]
    epoch: int = 0


@dataclass(frozen=True)
class LinkSnapshot:
    """Gains and rates one user sees at its current location."""

    bs_gains: Tuple[float, ...]
    uav_gain: float
    bs_rates: Tuple[float, ...]
    uav_rate: float


@lru_cache(maxsize=8)
def radio_map(cfg: SystemConfig) -> RadioMap:
    return RadioMap(cfg)


def feasible_mask(state: LocalState, num_bs: int) -> np.ndarray:
    """Boolean mask over action indices; index 0, the idle action, is always set."""
    width = num_bs + 2
    mask = np.zeros(2 * width, dtype=bool)
    for local in (0, 1):
        if local and not state.cpu_free:
            continue
        for remote in range(width):
            if remote and state.remote_in_flight:
                continue
            if local + (remote > 0) > state.queue_len:
                continue
            mask[local * width + remote] = True
    mask[0] = True
    return mask


def feasible_actions(state: LocalState, num_bs: int) -> List[Action]:
    """Actions that schedule no phantom task and only use free resources."""
    return [Action.from_index(i, num_bs) for i in np.flatnonzero(feasible_mask(state, num_bs))]


def is_feasible(state: LocalState, action: Action, num_bs: int) -> bool:
    if action.local_schedule not in (0, 1) or not 0 <= action.remote_target <= num_bs + 1:
        return False
    return bool(feasible_mask(state, num_bs)[action.index(num_bs)])


def _local_compute(remaining_epochs: int, cfg: SystemConfig) -> Tuple[float, float, int]:
    if remaining_epochs <= 0:
        return 0.0, 0.0, 0
    rho = cfg.local_cpu_hz
    delta = cfg.epoch_seconds
    tau = cfg.switched_capacitance
    if remaining_epochs == 1:
        cycles = cfg.task_bits * cfg.cycles_per_bit - (local_epochs_needed(cfg) - 1) * delta * rho
        return cycles / rho, tau * cycles * rho * rho, 0
    return delta, tau * delta * rho**3, remaining_epochs - 1


def local_compute(state: LocalState, cfg: SystemConfig) -> Tuple[float, float, int]:
    """(delay, energy, next remaining epochs) of the local CPU this epoch."""
    return _local_compute(state.local_remaining_epochs, cfg)


def transmit_bs(
    remaining_bits: float, rate_bps: float, handover: bool, cfg: SystemConfig
) -> Tuple[float, float, float]:
    """(delay, energy, next remaining bits) of an uplink to a base station."""
    if remaining_bits <= 0:
        return 0.0, 0.0, 0.0
    penalty = cfg.handover_seconds if handover else 0.0
    needed = remaining_bits / rate_bps + penalty
    if needed <= cfg.epoch_seconds:
        return needed, cfg.tx_power_w * (needed - penalty), 0.0
    airtime = cfg.epoch_seconds - penalty
    sent = rate_bps * airtime
    return cfg.epoch_seconds, cfg.tx_power_w * airtime, max(remaining_bits - sent, 0.0)


def transmit_uav(
    remaining_bits: float, rate_bps: float, handover: bool, cfg: SystemConfig
) -> Tuple[float, float, float, bool]:
    """(delay, energy, next remaining bits, delivered) of an uplink to the UAV.

    The delay is charged as the whole epoch while a transfer is ongoing.
    """
    if remaining_bits <= 0:
        return 0.0, 0.0, 0.0, False
    penalty = cfg.handover_seconds if handover else 0.0
    needed = remaining_bits / rate_bps + penalty
    if needed <= cfg.epoch_seconds:
        return cfg.epoch_seconds, cfg.tx_power_w * (needed - penalty), 0.0, True
    airtime = cfg.epoch_seconds - penalty
    left = max(remaining_bits - rate_bps * airtime, 0.0)
    return cfg.epoch_seconds, cfg.tx_power_w * airtime, left, left == 0.0


def vm_rate(active_vm_count: int, cfg: SystemConfig) -> float:
    """Per-VM computation rate when ``active_vm_count`` VMs share the UAV."""
    return cfg.vm_base_rate_bps * (1.0 + cfg.vm_degradation) ** (1 - active_vm_count)


def process_uav(
    remaining_bits: float, active_vm_count: int, cfg: SystemConfig
) -> Tuple[float, float]:
    """(processing delay, next remaining bits) of one VM this epoch."""
    if remaining_bits <= 0:
        return 0.0, 0.0
    c = vm_rate(max(active_vm_count, 1), cfg)
    return min(remaining_bits / c, cfg.epoch_seconds), max(
        remaining_bits - c * cfg.epoch_seconds, 0.0
    )


def bs_offload_step(
    state: LocalState, gain: float, handover: bool, cfg: SystemConfig
) -> Tuple[float, float, float]:
    if state.bs_tx_remaining_bits <= 0:
        return 0.0, 0.0, 0.0
    return transmit_bs(state.bs_tx_remaining_bits, rate(gain, cfg), handover, cfg)


def uav_offload_step(
    state: LocalState, gain: float, handover: bool, active_vm_count: int, cfg: SystemConfig
) -> Tuple[float, float, float, float, float]:
    """(y_uav, e_uav_tx, d_uav_proc, next T_UAV, next S_UAV)."""
    y, e, next_tx, delivered = 0.0, 0.0, 0.0, False
    if state.uav_tx_remaining_bits > 0:
        y, e, next_tx, delivered = transmit_uav(
            state.uav_tx_remaining_bits, rate(gain, cfg), handover, cfg
        )
    d_proc, next_proc = process_uav(state.uav_remaining_bits, active_vm_count, cfg)
    if delivered:
        # processing starts in the following epoch
        next_proc = cfg.task_bits
    return y, e, d_proc, next_tx, next_proc


def utility(outcome: EpochOutcome, cfg: SystemConfig) -> float:
    """exp(-delay) + eta * exp(-energy)."""
    return math.exp(-outcome.total_delay) + cfg.utility_weight * math.exp(-outcome.total_energy)


def observation(prev: Optional[EpochOutcome]) -> float:
    """UAV processing delay of the previous epoch; 0 before the first one."""
    return 0.0 if prev is None else prev.d_uav_proc


def advance_local(
    state: LocalState,
    action: Action,
    bs_rates: Sequence[float],
    uav_rate: float,
    active_vm_count: int,
    cfg: SystemConfig,
) -> Tuple[LocalState, EpochOutcome]:
    """Run one user's epoch up to, but excluding, arrivals and mobility.

    The returned state carries the queue after departures; the outcome
    carries every delay, energy and the utility.
    """
    num_bs = cfg.num_bs
    local, remote = action.local_schedule, action.remote_target
    handover = remote > 0 and remote != state.assoc
    assoc = remote if remote > 0 else state.assoc

    s_mu = local_epochs_needed(cfg) if local else state.local_remaining_epochs
    t_bs = cfg.task_bits if 1 <= remote <= num_bs else state.bs_tx_remaining_bits
    t_uav = cfg.task_bits if remote == num_bs + 1 else state.uav_tx_remaining_bits

    d_local, e_local, next_s_mu = _local_compute(s_mu, cfg)

    y_bs, e_bs, next_t_bs = 0.0, 0.0, 0.0
    if t_bs > 0:
        y_bs, e_bs, next_t_bs = transmit_bs(t_bs, float(bs_rates[assoc - 1]), handover, cfg)

    y_uav, e_uav, next_t_uav, delivered = transmit_uav(t_uav, float(uav_rate), handover, cfg)
    d_proc, next_s_uav = process_uav(state.uav_remaining_bits, active_vm_count, cfg)
    if delivered:
        next_s_uav = cfg.task_bits

    departures = local + (remote > 0)
    backlog = state.queue_len - departures
    outcome = EpochOutcome(
        d_local=d_local,
        d_uav_proc=d_proc,
        y_bs=y_bs,
        y_uav=y_uav,
        d_queueing=cfg.epoch_seconds * max(backlog, 0),
        e_local=e_local,
        e_bs=e_bs,
        e_uav_tx=e_uav,
        handover=handover,
        departures=departures,
    )
    outcome = replace(outcome, utility=utility(outcome, cfg))

    next_state = replace(
        state,
        queue_len=max(backlog, 0),
        assoc=assoc,
        local_remaining_epochs=next_s_mu,
        uav_remaining_bits=next_s_uav,
        bs_tx_remaining_bits=next_t_bs,
        uav_tx_remaining_bits=next_t_uav,
    )
    return next_state, outcome


def initial_state(
    cfg: SystemConfig, rng: np.random.Generator, radio: Optional[RadioMap] = None
) -> GlobalState:
    """Empty queues, idle resources, each user associated with its nearest BS."""
    radio = radio if radio is not None else radio_map(cfg)
    uav = initial_uav_state(cfg, rng)
    mus = [initial_mu_state(cfg, rng) for _ in range(cfg.num_mus)]
    uav_loc = to_location(uav.position, cfg)
    local_states = []
    for mu in mus:
        loc = to_location(mu.position, cfg)
        local_states.append(LocalState(mu_loc=loc, uav_loc=uav_loc, assoc=radio.nearest_bs(loc)))
    return GlobalState(local_states, uav, mus, [0.0] * cfg.num_mus, 0)


def step(
    state: GlobalState,
    joint: Sequence[Action],
    cfg: SystemConfig,
    rng: np.random.Generator,
    radio: Optional[RadioMap] = None,
) -> Tuple[GlobalState, List[EpochOutcome]]:
    """Advance the whole system by one epoch.

    Random draws per epoch are, in order: one uniform per user for arrivals,
    the UAV mobility step, then each user's mobility step. The number of
    draws does not depend on the actions taken.
    """
    radio = radio if radio is not None else radio_map(cfg)
    num_bs = cfg.num_bs
    if len(joint) != len(state.local_states):
        raise InfeasibleActionError(
            f"got {len(joint)} actions for {len(state.local_states)} mobile users"
        )
    for k, (s, a) in enumerate(zip(state.local_states, joint)):
        if not is_feasible(s, a, num_bs):
            raise InfeasibleActionError(
                f"MU {k}: action {a} infeasible with Q={s.queue_len}, "
                f"S_MU={s.local_remaining_epochs}, remote in flight={s.remote_in_flight}"
            )

    # |K^j| is fixed before any user is processed
    active_vms = sum(1 for s in state.local_states if s.uav_remaining_bits > 0)
    arrivals = rng.random(len(state.local_states)) < cfg.arrival_prob

    advanced = []
    for s, a in zip(state.local_states, joint):
        advanced.append(
            advance_local(
                s,
                a,
                radio.bs_rates[s.mu_loc],
                radio.uav_rate(s.mu_loc, s.uav_loc),
                active_vms,
                cfg,
            )
        )

    uav = step_uav(state.uav, cfg, rng)
    mus = [step_mu(mu, cfg, rng) for mu in state.mus]
    uav_loc = to_location(uav.position, cfg)

    next_states = []
    outcomes = []
    for (nxt, outcome), arrived, mu in zip(advanced, arrivals, mus):
        next_states.append(
            replace(
                nxt,
                queue_len=nxt.queue_len + int(arrived),
                mu_loc=to_location(mu.position, cfg),
                uav_loc=uav_loc,
            )
        )
        outcomes.append(replace(outcome, arrival=bool(arrived)))

    observations = [observation(o) for o in outcomes]
    return GlobalState(next_states, uav, mus, observations, state.epoch + 1), outcomes


def link_snapshots(state: GlobalState, radio: RadioMap) -> List[LinkSnapshot]:
    snapshots = []
    for s in state.local_states:
        snapshots.append(
            LinkSnapshot(
                bs_gains=tuple(float(g) for g in radio.bs_gains[s.mu_loc]),
                uav_gain=radio.uav_gain(s.mu_loc, s.uav_loc),
                bs_rates=tuple(float(r) for r in radio.bs_rates[s.mu_loc]),
                uav_rate=radio.uav_rate(s.mu_loc, s.uav_loc),
            )
        )
    return snapshots


class MecEnvironment:
    """Stateful wrapper around :func:`step` holding the RNG and radio tables."""

    def __init__(self, cfg: SystemConfig, rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.radio = radio_map(cfg)
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.state: Optional[GlobalState] = None

    def reset(self) -> GlobalState:
        self.state = initial_state(self.cfg, self.rng, self.radio)
        return self.state

    def _require_state(self) -> GlobalState:
        if self.state is None:
            raise RuntimeError("environment not reset")
        return self.state

    @property
    def local_states(self) -> List[LocalState]:
        return self._require_state().local_states

    @property
    def observations(self) -> List[float]:
        return self._require_state().observations

    def links(self) -> List[LinkSnapshot]:
        return link_snapshots(self._require_state(), self.radio)

    def feasible_masks(self) -> List[np.ndarray]:
        return [feasible_mask(s, self.cfg.num_bs) for s in self.local_states]

    def step(self, joint: Sequence[Action]) -> List[EpochOutcome]:
        self.state, outcomes = step(self._require_state(), joint, self.cfg, self.rng, self.radio)
        return outcomes


TRACE_COLUMNS = [
    "epoch",
    "mu",
    "loc",
    "uav_loc",
    "Q",
    "I",
    "S_mu",
    "S_uav",
    "T_bs",
    "T_uav",
    "X",
    "F",
    "utility",
    "D",
    "E",
    "handover",
]


class TraceWriter:
    """Buffered per-user, per-epoch trace CSV."""

    def __init__(self, path: str, flush_every: int = 10000):
        self.path = path
        self.flush_every = flush_every
        self._rows: List[tuple] = []
        self._header_written = False

    def record(
        self,
        epoch: int,
        states: Sequence[LocalState],
        actions: Sequence[Action],
        outcomes: Sequence[EpochOutcome],
    ):
        """Append one row per user; ``states`` are the states at the start of the epoch."""
        for k, (s, a, o) in enumerate(zip(states, actions, outcomes)):
            self._rows.append(
                (
                    epoch,
                    k,
                    s.mu_loc,
                    s.uav_loc,
                    s.queue_len,
                    s.assoc,
                    s.local_remaining_epochs,
                    s.uav_remaining_bits,
                    s.bs_tx_remaining_bits,
                    s.uav_tx_remaining_bits,
                    a.local_schedule,
                    a.remote_target,
                    o.utility,
                    o.total_delay,
                    o.total_energy,
                    int(o.handover),
                )
            )
        if len(self._rows) >= self.flush_every:
            self.flush()

    def flush(self):
        if not self._rows and self._header_written:
            return
        frame = pd.DataFrame(self._rows, columns=TRACE_COLUMNS)
        frame.to_csv(
            self.path,
            mode="a" if self._header_written else "w",
            header=not self._header_written,
            index=False,
        )
        self._header_written = True
        self._rows = []

    def close(self):
        self.flush()
        logger.info("Wrote trace to %s", self.path)

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
