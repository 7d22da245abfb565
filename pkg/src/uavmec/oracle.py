"""
Exact tabular solvers on small instances.

Builds an enumerable single-user MDP from the simulator's own epoch
dynamics and provides value iteration, exact policy evaluation and tabular
Q-learning. Q-values use the normalised form Q = (1 - gamma) u + gamma E[V'],
so every value lies in (0, 1 + eta].
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from .config import SystemConfig, cells_per_side
from .env import Action, LocalState, advance_local, feasible_mask
from .exceptions import EmptyMaskError, InfeasibleActionError, NonStochasticKernelError

logger = logging.getLogger(__name__)

KERNEL_TOLERANCE = 1e-10


@dataclass
class MicroMdp:
    """Enumerated states, actions, kernel P[s, a, s'] and utilities u[s, a]."""

    states: List[Hashable]
    actions: List[Any]
    mask: np.ndarray
    transitions: np.ndarray
    utilities: np.ndarray
    discount: float
    cfg: Optional[SystemConfig] = None
    _index: Dict[Hashable, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {s: i for i, s in enumerate(self.states)}

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def index_of(self, state: Hashable) -> int:
        return self._index[state]


def validate_mdp(mdp: MicroMdp):
    rows = mdp.transitions.sum(axis=2)
    bad = np.argwhere(np.abs(rows - 1.0) > KERNEL_TOLERANCE)
    if len(bad):
        s, a = bad[0]
        raise NonStochasticKernelError(
            f"kernel row for state {s}, action {a} sums to {rows[s, a]!r}"
        )
    empty = np.flatnonzero(~mdp.mask.any(axis=1))
    if len(empty):
        raise EmptyMaskError(f"state {empty[0]} has no feasible action")


def sample_successor(
    cumulative: np.ndarray, state: int, action: int, rng: np.random.Generator
) -> int:
    """Draw s' from a row of the cumulative kernel ``cumsum(P, axis=2)``."""
    row = cumulative[state, action]
    return min(int(np.searchsorted(row, rng.random(), "right")), len(row) - 1)


def state_values(mdp: MicroMdp, q: np.ndarray) -> np.ndarray:
    return np.where(mdp.mask, q, -np.inf).max(axis=1)


def bellman_backup(mdp: MicroMdp, q: np.ndarray) -> np.ndarray:
    """One application of Q <- (1 - gamma) u + gamma P max Q'."""
    gamma = mdp.discount
    return (1.0 - gamma) * mdp.utilities + gamma * (mdp.transitions @ state_values(mdp, q))


def value_iteration(
    mdp: MicroMdp, tol: float = 1e-10, max_sweeps: int = 100000
) -> Tuple[np.ndarray, np.ndarray]:
    """Optimal state values and Q-table; stops once a sweep changes no entry by ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    validate_mdp(mdp)

    q = np.zeros_like(mdp.utilities, dtype=float)
    for sweep in range(1, max_sweeps + 1):
        updated = bellman_backup(mdp, q)
        change = float(np.max(np.abs(updated - q)))
        q = updated
        if change < tol:
            logger.debug("Value iteration converged after %d sweeps", sweep)
            break
    else:
        logger.warning("Value iteration stopped after %d sweeps (change %.3g)", max_sweeps, change)
    return state_values(mdp, q), q


def greedy_actions(mdp: MicroMdp, q: np.ndarray) -> np.ndarray:
    """Best feasible action index per state, lowest index on ties."""
    return np.argmax(np.where(mdp.mask, q, -np.inf), axis=1)


def evaluate_policy(mdp: MicroMdp, policy: Sequence[int]) -> np.ndarray:
    """Solve V = (1 - gamma) u_pi + gamma P_pi V for a deterministic policy."""
    policy = np.asarray(policy, dtype=int)
    rows = np.arange(mdp.num_states)
    if policy.shape != (mdp.num_states,) or not mdp.mask[rows, policy].all():
        raise InfeasibleActionError("policy selects an infeasible action")
    gamma = mdp.discount
    p_pi = mdp.transitions[rows, policy]
    u_pi = mdp.utilities[rows, policy]
    return np.linalg.solve(np.eye(mdp.num_states) - gamma * p_pi, (1.0 - gamma) * u_pi)


def _td_update(
    q: np.ndarray,
    state: int,
    action: int,
    utility: float,
    next_state: int,
    alpha: float,
    gamma: float,
    mask: Optional[np.ndarray],
):
    next_q = q[next_state] if mask is None else q[next_state][mask[next_state]]
    target = (1.0 - gamma) * utility + gamma * float(np.max(next_q))
    q[state, action] = (1.0 - alpha) * q[state, action] + alpha * target


def q_learning_update(
    q: np.ndarray,
    state: int,
    action: int,
    utility: float,
    next_state: int,
    alpha: float,
    gamma: float,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Return a copy of ``q`` with the (state, action) entry moved towards its TD target."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha out of [0,1]")
    updated = q.copy()
    _td_update(updated, state, action, utility, next_state, alpha, gamma, mask)
    return updated


def run_q_learning(
    mdp: MicroMdp,
    steps: int,
    rng: np.random.Generator,
    epsilon: float = 0.1,
    restart_every: int = 100,
    q_init: Optional[np.ndarray] = None,
    cover_pairs: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """Tabular Q-learning with epsilon-greedy exploration and step size 1/visits.

    The trajectory restarts from a uniformly drawn state every ``restart_every``
    steps so that every state keeps being visited. With ``cover_pairs`` a restart
    instead begins at the least-visited feasible (state, action) pair and takes
    that action, so rarely reached pairs keep up with the rest.
    """
    validate_mdp(mdp)
    cumulative = np.cumsum(mdp.transitions, axis=2)
    q = np.zeros_like(mdp.utilities, dtype=float) if q_init is None else q_init.astype(float)
    visits = np.zeros(mdp.utilities.shape, dtype=np.int64)
    feasible = [np.flatnonzero(row) for row in mdp.mask]
    excluded = np.iinfo(np.int64).max
    state = int(rng.integers(mdp.num_states))
    for t in range(steps):
        forced = None
        if restart_every and t % restart_every == 0:
            if cover_pairs:
                pending = np.where(mdp.mask, visits, excluded)
                state, forced = divmod(int(np.argmin(pending)), pending.shape[1])
            else:
                state = int(rng.integers(mdp.num_states))
        options = feasible[state]
        if forced is not None:
            action = forced
        elif rng.random() < epsilon:
            action = int(options[rng.integers(len(options))])
        else:
            action = int(options[np.argmax(q[state, options])])
        next_state = sample_successor(cumulative, state, action, rng)

        visits[state, action] += 1
        _td_update(
            q,
            state,
            action,
            float(mdp.utilities[state, action]),
            next_state,
            1.0 / visits[state, action],
            mdp.discount,
            mdp.mask,
        )
        state = next_state
    return q, visits


def policy_agreement(
    mdp: MicroMdp,
    q_optimal: np.ndarray,
    policy: Sequence[int],
    states: Optional[Sequence[int]] = None,
    tol: float = 1e-9,
) -> float:
    """Fraction of states where ``policy`` picks an action that is optimal under ``q_optimal``.

    Actions within ``tol`` of the optimum count as agreeing, so exact ties do
    not depend on tie-breaking.
    """
    rows = np.arange(mdp.num_states) if states is None else np.asarray(states, dtype=int)
    if len(rows) == 0:
        return 1.0
    policy = np.asarray(policy, dtype=int)
    best = state_values(mdp, q_optimal)[rows]
    chosen = q_optimal[rows, policy[rows]]
    return float(np.mean(chosen >= best - tol))


def chain_mdp(discount: float = 0.9) -> MicroMdp:
    """Three states in a row; action 0 drifts left, action 1 drifts right.

    The rightmost state pays the most and moving right costs a little.
    """
    p = np.zeros((3, 2, 3))
    for s in range(3):
        p[s, 0, max(s - 1, 0)] += 0.8
        p[s, 0, s] += 0.2
        p[s, 1, min(s + 1, 2)] += 0.8
        p[s, 1, s] += 0.2
    u = np.array([[0.2, 0.1], [0.5, 0.4], [1.0, 0.9]])
    return MicroMdp(
        states=[0, 1, 2],
        actions=[0, 1],
        mask=np.ones((3, 2), dtype=bool),
        transitions=p,
        utilities=u,
        discount=discount,
    )


def micro_config(arrival_prob: float = 0.5, discount: float = 0.9) -> SystemConfig:
    """One user, one BS, a 2x2 grid, two-epoch local tasks, no handover delay.

    Rates and VM speed are multiples of task_bits / (2 epoch_seconds), so
    remaining bits only ever take the values 0, half a task or a full task.
    """
    return SystemConfig(
        num_bs=1,
        bs_positions=[(5.0, 5.0)],
        area_side=20.0,
        cell_side=10.0,
        epoch_seconds=1.0,
        num_mus=1,
        arrival_prob=arrival_prob,
        task_bits=1000.0,
        cycles_per_bit=1000.0,
        local_cpu_hz=6e5,
        switched_capacitance=2e-18,
        tx_power_w=0.5,
        handover_seconds=0.0,
        vm_base_rate_bps=500.0,
        utility_weight=1.0,
        discount=discount,
        history_len=4,
        replay_capacity=2000,
        minibatch=32,
        hidden_size=16,
        queue_clip=3,
    )


def _grid_neighbours(loc: int, n: int) -> List[int]:
    row, col = divmod(loc, n)
    out = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        r, c = row + dr, col + dc
        if 0 <= r < n and 0 <= c < n:
            out.append(r * n + c)
    return out


MicroState = Tuple[LocalState, float]


def build_micro_mdp(
    discount: float = 0.9,
    arrival_prob: float = 0.5,
    queue_cap: int = 3,
    stay_prob: float = 0.5,
    uav_loc: int = 3,
    bs_fast_cells: Sequence[int] = (0,),
    uav_fast_cells: Sequence[int] = (3,),
) -> MicroMdp:
    """Enumerate the reachable (local state, observation) pairs of :func:`micro_config`.

    The user's cell follows a lazy random walk over the grid, the UAV does not
    move, and the queue is truncated at ``queue_cap``. Cells listed as fast
    deliver a whole task per epoch, all others half a task.
    """
    cfg = micro_config(arrival_prob=arrival_prob, discount=discount)
    n = cells_per_side(cfg)
    num_bs = cfg.num_bs
    full_rate = cfg.task_bits / cfg.epoch_seconds
    half_rate = full_rate / 2.0

    def rates(loc: int) -> Tuple[List[float], float]:
        bs = full_rate if loc in bs_fast_cells else half_rate
        uav = full_rate if loc in uav_fast_cells else half_rate
        return [bs], uav

    def moves(loc: int) -> List[Tuple[int, float]]:
        neighbours = _grid_neighbours(loc, n)
        out = [(loc, stay_prob)]
        out.extend((nb, (1.0 - stay_prob) / len(neighbours)) for nb in neighbours)
        return out

    actions = [Action.from_index(i, num_bs) for i in range(2 * (num_bs + 2))]
    start = [(LocalState(mu_loc=loc, uav_loc=uav_loc, assoc=1), 0.0) for loc in range(n * n)]

    index: Dict[MicroState, int] = {}
    order: List[MicroState] = []
    rows: Dict[Tuple[int, int], Tuple[float, Dict[MicroState, float]]] = {}
    pending = deque(start)
    while pending:
        key = pending.popleft()
        if key in index:
            continue
        index[key] = len(order)
        order.append(key)
        state, _ = key
        mask = feasible_mask(state, num_bs)
        bs_rates, uav_rate = rates(state.mu_loc)
        active = 1 if state.uav_remaining_bits > 0 else 0
        for a_idx in np.flatnonzero(mask):
            nxt, outcome = advance_local(state, actions[a_idx], bs_rates, uav_rate, active, cfg)
            successors: Dict[MicroState, float] = {}
            for arrived, p_arrival in ((0, 1.0 - arrival_prob), (1, arrival_prob)):
                if p_arrival == 0.0:
                    continue
                queue = min(nxt.queue_len + arrived, queue_cap)
                for loc, p_move in moves(state.mu_loc):
                    succ = (
                        LocalState(
                            mu_loc=loc,
                            uav_loc=uav_loc,
                            queue_len=queue,
                            assoc=nxt.assoc,
                            local_remaining_epochs=nxt.local_remaining_epochs,
                            uav_remaining_bits=nxt.uav_remaining_bits,
                            bs_tx_remaining_bits=nxt.bs_tx_remaining_bits,
                            uav_tx_remaining_bits=nxt.uav_tx_remaining_bits,
                        ),
                        outcome.d_uav_proc,
                    )
                    successors[succ] = successors.get(succ, 0.0) + p_arrival * p_move
                    pending.append(succ)
            rows[(index[key], int(a_idx))] = (outcome.utility, successors)

    num_states, num_actions = len(order), len(actions)
    transitions = np.zeros((num_states, num_actions, num_states))
    utilities = np.zeros((num_states, num_actions))
    mask = np.zeros((num_states, num_actions), dtype=bool)
    for s in range(num_states):
        # infeasible pairs are absorbing with zero utility and always masked
        transitions[s, :, s] = 1.0
    for (s, a), (u, successors) in rows.items():
        transitions[s, a, :] = 0.0
        for succ, p in successors.items():
            transitions[s, a, index[succ]] += p
        utilities[s, a] = u
        mask[s, a] = True

    mdp = MicroMdp(order, actions, mask, transitions, utilities, discount, cfg)
    validate_mdp(mdp)
    logger.debug("Micro MDP has %d states", num_states)
    return mdp
