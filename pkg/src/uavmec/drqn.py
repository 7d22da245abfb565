"""
Proactive DRQN scheduler and its digital-twin trainer.

Every mobile user feeds the N most recent (local state, observation) pairs
through a shared LSTM-based Q-network. Training runs the simulator offline
with all users acting through the same parameters, stores joint per-epoch
experiences in a replay memory, rebuilds history windows from consecutive
experiences and minimises a double-DQN loss with Adam.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import attrs
import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import (
    SystemConfig,
    cells_per_side,
    compare_configs,
    config_hash,
    dumps_config,
    load_config,
    local_epochs_needed,
    num_actions,
)
from .env import Action, LocalState, MecEnvironment, feasible_mask
from .exceptions import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    EmptyMaskError,
    NumericalError,
    WindowReconstructionError,
)
from .neural import (
    Adam,
    ParamSet,
    Tensor,
    dense_forward,
    init_dense,
    init_lstm,
    load_tensors,
    lstm_step,
    no_grad,
    relu,
    save_tensors,
)
from .oracle import MicroMdp, sample_successor, state_values
from .policies import Policy

logger = logging.getLogger(__name__)

TRAINING_LOG_COLUMNS = ["step", "loss", "epsilon", "avg_utility_window"]


def feature_size(cfg: SystemConfig) -> int:
    return 2 + 2 + 1 + (cfg.num_bs + 1) + 4 + 1


def encode(state: LocalState, obs: float, cfg: SystemConfig) -> np.ndarray:
    """Fixed-length network input for one (local state, observation) pair.

    Positions are cell indices scaled to [0, 1]; the queue is clipped at
    ``queue_clip``; progress counters are normalised by their maxima.
    """
    n = cells_per_side(cfg)
    scale = 1.0 / (n - 1) if n > 1 else 0.0
    mu_row, mu_col = divmod(state.mu_loc, n)
    uav_row, uav_col = divmod(state.uav_loc, n)

    features = np.zeros(feature_size(cfg))
    features[0:4] = (mu_col * scale, mu_row * scale, uav_col * scale, uav_row * scale)
    features[4] = min(state.queue_len, cfg.queue_clip) / cfg.queue_clip
    features[5 + state.assoc - 1] = 1.0
    tail = 5 + cfg.num_bs + 1
    features[tail] = state.local_remaining_epochs / local_epochs_needed(cfg)
    features[tail + 1] = state.uav_remaining_bits / cfg.task_bits
    features[tail + 2] = state.bs_tx_remaining_bits / cfg.task_bits
    features[tail + 3] = state.uav_tx_remaining_bits / cfg.task_bits
    features[tail + 4] = obs / cfg.epoch_seconds
    return features


def encode_all(
    states: Sequence[LocalState], observations: Sequence[float], cfg: SystemConfig
) -> np.ndarray:
    return np.stack([encode(s, o, cfg) for s, o in zip(states, observations)])


class HistoryWindow:
    """The N most recent encoded pairs of one user, oldest first, zero-padded."""

    def __init__(self, length: int, width: int):
        self.length = length
        self.width = width
        self.values = np.zeros((length, width))

    def push(self, features: np.ndarray):
        self.values = np.vstack([self.values[1:], np.asarray(features)[None, :]])

    def reset(self):
        self.values = np.zeros((self.length, self.width))

    def array(self) -> np.ndarray:
        return self.values.copy()


class QNetwork:
    """LSTM layer, two ReLU dense layers and a linear head over all (X, F) pairs."""

    def __init__(
        self,
        cfg: SystemConfig,
        params: Optional[ParamSet] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        self.cfg = cfg
        self.input_size = feature_size(cfg)
        self.hidden_size = cfg.hidden_size
        self.num_actions = num_actions(cfg)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(cfg.seed)
            params = ParamSet(self.initial_values(cfg, rng))
        self.params = params

    @staticmethod
    def initial_values(cfg: SystemConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        hidden = cfg.hidden_size
        values = init_lstm(rng, feature_size(cfg), hidden, "lstm")
        values.update(init_dense(rng, hidden, hidden, "dense1"))
        values.update(init_dense(rng, hidden, hidden, "dense2"))
        values.update(init_dense(rng, hidden, num_actions(cfg), "head"))
        return values

    def forward(self, windows: np.ndarray) -> Tensor:
        """Q-values of shape (batch, actions) for windows of shape (batch, N, features)."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[2] != self.input_size:
            raise ValueError(f"expected windows of shape (batch, N, {self.input_size})")
        batch = windows.shape[0]
        h = Tensor(np.zeros((batch, self.hidden_size)))
        c = Tensor(np.zeros((batch, self.hidden_size)))
        for t in range(windows.shape[1]):
            h, c = lstm_step(Tensor(windows[:, t, :]), h, c, self.params, "lstm")
        p = self.params
        z = relu(dense_forward(h, p["dense1.W"], p["dense1.b"]))
        z = relu(dense_forward(z, p["dense2.W"], p["dense2.b"]))
        return dense_forward(z, p["head.W"], p["head.b"])

    @no_grad()
    def q_values_batch(self, windows: np.ndarray) -> np.ndarray:
        return self.forward(windows).data

    def q_values(self, window: np.ndarray) -> np.ndarray:
        return self.q_values_batch(np.asarray(window)[None])[0]


def q_values(window: np.ndarray, network: QNetwork) -> np.ndarray:
    """Per-action values of a single history window."""
    return network.q_values(window)


def act_batch(
    network: QNetwork,
    windows: np.ndarray,
    masks: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Epsilon-greedy action index per user, restricted to its feasible mask."""
    masks = np.asarray(masks, dtype=bool)
    count = masks.shape[0]
    explore = rng.random(count) < epsilon if epsilon > 0 else np.zeros(count, dtype=bool)

    options = [np.flatnonzero(m) for m in masks]
    for k, opts in enumerate(options):
        if len(opts) == 0:
            raise EmptyMaskError(f"user {k} has no feasible action")

    exploit = [k for k in range(count) if not explore[k] and len(options[k]) > 1]
    q = network.q_values_batch(np.asarray(windows)[exploit]) if exploit else None
    row_of = {k: i for i, k in enumerate(exploit)}

    choices = np.empty(count, dtype=int)
    for k, opts in enumerate(options):
        if explore[k]:
            choices[k] = opts[rng.integers(len(opts))]
        elif len(opts) == 1:
            choices[k] = opts[0]
        else:
            # argmax returns the first maximum: lowest action index on ties
            choices[k] = opts[np.argmax(q[row_of[k]][opts])]
    return choices


def act(
    window: np.ndarray,
    network: QNetwork,
    epsilon: float,
    mask: np.ndarray,
    rng: np.random.Generator,
) -> int:
    windows, masks = np.asarray(window)[None], np.asarray(mask)[None]
    return int(act_batch(network, windows, masks, epsilon, rng)[0])


@dataclass
class Experience:
    """Joint record of all users for one epoch."""

    epoch: int
    episode_start: int
    features: np.ndarray  # (users, features)
    actions: np.ndarray  # (users,)
    utilities: np.ndarray  # (users,)
    next_features: np.ndarray  # (users, features)
    next_masks: np.ndarray  # (users, actions)


@dataclass
class ReplayBatch:
    windows: np.ndarray  # (samples, users, N, features)
    actions: np.ndarray  # (samples, users)
    utilities: np.ndarray  # (samples, users)
    next_windows: np.ndarray
    next_masks: np.ndarray  # (samples, users, actions)


class ReplayMemory:
    """Ring of the most recent ``capacity`` experiences, addressed by epoch number.

    Epoch numbers are assigned on append and increase by one each time, so the
    slot of epoch e is e mod capacity and eviction is oldest-first.
    """

    def __init__(self, capacity: int, history_len: int):
        self.capacity = capacity
        self.history_len = history_len
        self._slots: List[Optional[Experience]] = [None] * capacity
        self._count = 0
        self._episode_start = 0

    def __len__(self) -> int:
        return min(self._count, self.capacity)

    @property
    def oldest_epoch(self) -> int:
        return self._count - len(self)

    @property
    def next_epoch(self) -> int:
        return self._count

    def start_episode(self):
        """Windows of later experiences are zero-padded before this point."""
        self._episode_start = self._count

    def append(
        self,
        features: np.ndarray,
        actions: np.ndarray,
        utilities: np.ndarray,
        next_features: np.ndarray,
        next_masks: np.ndarray,
    ) -> int:
        utilities = np.asarray(utilities, dtype=np.float64)
        if not np.all(np.isfinite(utilities)):
            raise NumericalError("non-finite utility in experience")
        epoch = self._count
        self._slots[epoch % self.capacity] = Experience(
            epoch,
            self._episode_start,
            np.asarray(features, dtype=np.float64),
            np.asarray(actions, dtype=int),
            utilities,
            np.asarray(next_features, dtype=np.float64),
            np.asarray(next_masks, dtype=bool),
        )
        self._count += 1
        return epoch

    def get(self, epoch: int) -> Optional[Experience]:
        if not self.oldest_epoch <= epoch < self._count:
            return None
        return self._slots[epoch % self.capacity]

    def window_complete(self, epoch: int) -> bool:
        """Whether every experience the window of ``epoch`` needs is still held."""
        item = self.get(epoch)
        if item is None:
            return False
        return max(item.episode_start, epoch - self.history_len + 1) >= self.oldest_epoch

    def window(self, epoch: int) -> np.ndarray:
        """(users, N, features) window ending at ``epoch``."""
        item = self.get(epoch)
        if item is None or not self.window_complete(epoch):
            raise WindowReconstructionError(f"window ending at epoch {epoch} is not retained")
        n = self.history_len
        out = np.zeros((item.features.shape[0], n, item.features.shape[1]))
        for offset in range(n):
            e = epoch - (n - 1) + offset
            if e < item.episode_start:
                continue
            out[:, offset, :] = self._slots[e % self.capacity].features
        return out

    def next_window(self, epoch: int) -> np.ndarray:
        """The window one epoch later: shifted by one with the successor pair appended."""
        current = self.window(epoch)
        out = np.empty_like(current)
        out[:, :-1, :] = current[:, 1:, :]
        out[:, -1, :] = self._slots[epoch % self.capacity].next_features
        return out

    def sample_epochs(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform sample without replacement over experiences with complete windows."""
        candidates = [e for e in range(self.oldest_epoch, self._count) if self.window_complete(e)]
        if len(candidates) < batch_size:
            raise WindowReconstructionError(
                f"only {len(candidates)} reconstructible experiences for a batch of {batch_size}"
            )
        return rng.choice(np.asarray(candidates), size=batch_size, replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator) -> ReplayBatch:
        epochs = self.sample_epochs(batch_size, rng)
        items = [self.get(int(e)) for e in epochs]
        return ReplayBatch(
            windows=np.stack([self.window(int(e)) for e in epochs]),
            actions=np.stack([it.actions for it in items]),
            utilities=np.stack([it.utilities for it in items]),
            next_windows=np.stack([self.next_window(int(e)) for e in epochs]),
            next_masks=np.stack([it.next_masks for it in items]),
        )


def double_dqn_loss(
    network: QNetwork, target_network: QNetwork, batch: ReplayBatch, cfg: SystemConfig
) -> Tensor:
    """Scalar loss over a mini-batch; gradients reach only the online Q(n, a) term.

    The next action is chosen by the online network among feasible actions and
    evaluated by the target network.
    """
    samples, users = batch.actions.shape
    n, width = batch.windows.shape[2], batch.windows.shape[3]
    flat_windows = batch.windows.reshape(samples * users, n, width)
    flat_next = batch.next_windows.reshape(samples * users, n, width)
    flat_masks = batch.next_masks.reshape(samples * users, -1)

    gamma = cfg.discount
    with no_grad():
        online_next = network.forward(flat_next).data
        best = np.argmax(np.where(flat_masks, online_next, -np.inf), axis=1)
        bootstrap = target_network.forward(flat_next).data[np.arange(len(best)), best]
    targets = (1.0 - gamma) * batch.utilities.reshape(-1) + gamma * bootstrap

    q_taken = network.forward(flat_windows).pick(batch.actions.reshape(-1))
    td = (Tensor(targets) - q_taken).reshape(samples, users)
    if cfg.loss_variant == "square_of_sum":
        return td.sum(axis=1).square().mean()
    return td.square().sum(axis=1).mean()


@dataclass
class QNetworkParams:
    """Online and target parameters with their step counters."""

    online: ParamSet
    target: ParamSet
    train_steps: int = 0
    epochs: int = 0


def epsilon_at(epoch: int, cfg: SystemConfig) -> float:
    """Linear annealing from epsilon_start to epsilon_end, then constant."""
    horizon = cfg.epsilon_anneal_fraction * cfg.training_epochs
    progress = min(epoch / horizon, 1.0) if horizon > 0 else 1.0
    return cfg.epsilon_start + progress * (cfg.epsilon_end - cfg.epsilon_start)


class DrqnLearner:
    """Shared online/target networks, Adam state and replay memory."""

    def __init__(self, cfg: SystemConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.network = QNetwork(cfg, rng=rng)
        self.target = QNetwork(cfg, params=self.network.params.copy())
        self.optimizer = Adam(self.network.params, lr=cfg.learning_rate)
        self.memory = ReplayMemory(cfg.replay_capacity, cfg.history_len)
        self.train_steps = 0
        self.epochs = 0
        self.last_loss = math.nan

    @property
    def params(self) -> QNetworkParams:
        return QNetworkParams(
            self.network.params, self.target.params, self.train_steps, self.epochs
        )

    def sync_target(self):
        self.target.params.load_values(self.network.params.values())

    def train_step(self) -> float:
        """One Adam step on a fresh mini-batch."""
        batch = self.memory.sample(self.cfg.minibatch, self.rng)
        self.network.params.zero_grad()
        try:
            loss = double_dqn_loss(self.network, self.target, batch, self.cfg)
            loss.backward()
        except NumericalError as e:
            raise DivergenceError(f"training diverged at step {self.train_steps}: {e}") from e
        self.optimizer.step()
        self.train_steps += 1
        if self.train_steps % self.cfg.target_update_period == 0:
            self.sync_target()
        self.last_loss = loss.item()
        return self.last_loss

    def observe(
        self,
        features: np.ndarray,
        actions: np.ndarray,
        utilities: np.ndarray,
        next_features: np.ndarray,
        next_masks: np.ndarray,
    ) -> Optional[float]:
        """Store one joint experience; train once the memory holds a mini-batch."""
        self.memory.append(features, actions, utilities, next_features, next_masks)
        self.epochs += 1
        if len(self.memory) >= self.cfg.minibatch:
            return self.train_step()
        return None

    def state_tensors(self) -> Dict[str, np.ndarray]:
        tensors = {f"theta.{k}": v for k, v in self.network.params.values().items()}
        tensors.update({f"target.{k}": v for k, v in self.target.params.values().items()})
        tensors.update(self.optimizer.state())
        return tensors

    def save(self, path: str):
        metadata = {
            "format": "uavmec-drqn",
            "config_hash": config_hash(self.cfg),
            "config": dumps_config(self.cfg),
            "training_epochs": self.epochs,
            "train_steps": self.train_steps,
            "adam_step": self.optimizer.t,
            "final_loss": None if math.isnan(self.last_loss) else self.last_loss,
        }
        save_tensors(path, self.state_tensors(), metadata)
        logger.info("Saved checkpoint to %s", path)

    def restore(self, path: str):
        tensors, metadata = read_checkpoint(path, self.cfg)
        self.network.params.load_values(_strip_prefix(tensors, "theta."))
        self.target.params.load_values(_strip_prefix(tensors, "target."))
        self.optimizer.load_state(tensors, int(metadata.get("adam_step", 0)))
        self.train_steps = int(metadata.get("train_steps", 0))
        self.epochs = int(metadata.get("training_epochs", 0))
        final_loss = metadata.get("final_loss")
        self.last_loss = math.nan if final_loss is None else float(final_loss)
        logger.info("Resumed from %s at epoch %d", path, self.epochs)


def _strip_prefix(tensors: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {k[len(prefix) :]: v for k, v in tensors.items() if k.startswith(prefix)}


def read_checkpoint(path: str, cfg: SystemConfig) -> Tuple[Dict[str, np.ndarray], dict]:
    """Load a checkpoint and refuse it unless it was trained on an equivalent system."""
    tensors, metadata = load_tensors(path)
    if metadata.get("format") != "uavmec-drqn":
        raise CheckpointError(f"'{path}' is not a DRQN checkpoint")
    expected = config_hash(cfg)
    if metadata.get("config_hash") != expected:
        detail = ""
        try:
            differences = compare_configs(load_config(metadata.get("config", "")), cfg)
            detail = "; differing fields: " + ", ".join(sorted(differences))
        except ConfigError:
            pass
        raise CheckpointError(
            f"checkpoint '{path}' was trained on another configuration "
            f"(hash {metadata.get('config_hash')} != {expected}){detail}"
        )
    return tensors, metadata


def _rolling_mean(values: deque) -> float:
    return float(np.mean(values)) if values else math.nan


def twin_train(
    cfg: SystemConfig,
    resume: Optional[str] = None,
    progress: bool = False,
    diagnostic_path: Optional[str] = None,
) -> Tuple[DrqnLearner, pd.DataFrame]:
    """Train the shared network on the simulated system.

    Runs ``cfg.training_epochs`` epochs (after any resumed ones) with every
    user acting epsilon-greedily through the same parameters. Returns the
    learner and the training log.
    """
    learner_seed, env_seed, act_seed = np.random.SeedSequence(cfg.seed).spawn(3)
    learner = DrqnLearner(cfg, np.random.default_rng(learner_seed))
    start = 0
    if resume is not None:
        learner.restore(resume)
        start = learner.epochs
        # a resumed run must not replay the trajectory it already trained on
        env_seed = np.random.SeedSequence(cfg.seed, spawn_key=(1, start))
        act_seed = np.random.SeedSequence(cfg.seed, spawn_key=(2, start))

    env = MecEnvironment(cfg, rng=np.random.default_rng(env_seed))
    act_rng = np.random.default_rng(act_seed)
    env.reset()
    learner.memory.start_episode()

    n, width = cfg.history_len, feature_size(cfg)
    windows = np.zeros((cfg.num_mus, n, width))
    features = encode_all(env.local_states, env.observations, cfg)
    windows[:, -1, :] = features
    masks = np.stack(env.feasible_masks())

    recent_utility: deque = deque(maxlen=cfg.log_every)
    log_rows = []
    epochs = range(start, start + cfg.training_epochs)
    for epoch in tqdm(epochs, desc="twin training", disable=not progress):
        eps = epsilon_at(epoch, cfg)
        try:
            actions = act_batch(learner.network, windows, masks, eps, act_rng)
        except NumericalError as e:
            if diagnostic_path is not None:
                learner.save(diagnostic_path)
            raise DivergenceError(f"acting diverged at epoch {epoch}: {e}") from e
        outcomes = env.step([Action.from_index(int(a), cfg.num_bs) for a in actions])
        utilities = np.array([o.utility for o in outcomes])
        recent_utility.append(float(utilities.mean()))

        next_features = encode_all(env.local_states, env.observations, cfg)
        next_masks = np.stack(env.feasible_masks())
        try:
            loss = learner.observe(features, actions, utilities, next_features, next_masks)
        except DivergenceError:
            if diagnostic_path is not None:
                learner.save(diagnostic_path)
            raise

        if loss is not None:
            log_rows.append((learner.train_steps, loss, eps, _rolling_mean(recent_utility)))
            if learner.train_steps % cfg.log_every == 0:
                logger.info(
                    "step %d loss %.6g epsilon %.3f avg utility %.4f",
                    learner.train_steps,
                    loss,
                    eps,
                    _rolling_mean(recent_utility),
                )

        windows = np.concatenate([windows[:, 1:, :], next_features[:, None, :]], axis=1)
        features, masks = next_features, next_masks

    return learner, pd.DataFrame(log_rows, columns=TRAINING_LOG_COLUMNS)


def write_training_log(log: pd.DataFrame, path: str):
    log.to_csv(path, index=False)
    logger.info("Wrote training log to %s", path)


def train_on_micro_mdp(
    mdp: MicroMdp,
    epochs: int,
    rng: np.random.Generator,
    episode_len: int = 50,
    epsilon: Optional[float] = None,
) -> Tuple[DrqnLearner, pd.DataFrame]:
    """Train a learner on a single-user micro MDP by sampling its kernel.

    Episodes restart from a uniformly drawn state every ``episode_len`` epochs.
    ``epsilon`` fixes the exploration rate; by default it follows the
    configured schedule over ``epochs``.
    """
    if mdp.cfg is None:
        raise ConfigError("micro MDP carries no system configuration")
    cfg = mdp.cfg
    schedule_cfg = _with_training_epochs(cfg, epochs)
    learner = DrqnLearner(cfg, rng)
    cumulative = np.cumsum(mdp.transitions, axis=2)
    n, width = cfg.history_len, feature_size(cfg)

    log_rows = []
    state = 0
    window = np.zeros((n, width))
    for epoch in range(epochs):
        if epoch % episode_len == 0:
            state = int(rng.integers(mdp.num_states))
            window = np.zeros((n, width))
            learner.memory.start_episode()
            current = _micro_features(mdp, state)
            window[-1] = current

        eps = epsilon if epsilon is not None else epsilon_at(epoch, schedule_cfg)
        action = int(act_batch(learner.network, window[None], mdp.mask[state][None], eps, rng)[0])
        next_state = sample_successor(cumulative, state, action, rng)
        following = _micro_features(mdp, next_state)

        loss = learner.observe(
            current[None],
            np.array([action]),
            np.array([mdp.utilities[state, action]]),
            following[None],
            mdp.mask[next_state][None],
        )
        if loss is not None:
            log_rows.append((learner.train_steps, loss, eps, float(mdp.utilities[state, action])))

        window = np.vstack([window[1:], following[None]])
        state, current = next_state, following

    return learner, pd.DataFrame(log_rows, columns=TRAINING_LOG_COLUMNS)


def _with_training_epochs(cfg: SystemConfig, epochs: int) -> SystemConfig:
    return attrs.evolve(cfg, training_epochs=max(epochs, 1))


def _micro_features(mdp: MicroMdp, index: int) -> np.ndarray:
    state, obs = mdp.states[index]
    return encode(state, obs, mdp.cfg)


def micro_policy_agreement(
    learner: DrqnLearner,
    mdp: MicroMdp,
    q_optimal: np.ndarray,
    epochs: int,
    rng: np.random.Generator,
    episode_len: int = 50,
    behaviour_epsilon: float = 0.2,
    tol: float = 1e-9,
) -> float:
    """Fraction of visited epochs where the network's greedy action is optimal.

    States are visited by an epsilon-greedy rollout; the greedy choice is read
    from the network on the actual history window of each visit.
    """
    cumulative = np.cumsum(mdp.transitions, axis=2)
    n, width = mdp.cfg.history_len, feature_size(mdp.cfg)
    visited, greedy = [], []
    window = np.zeros((n, width))
    state = 0
    for epoch in range(epochs):
        if epoch % episode_len == 0:
            state = int(rng.integers(mdp.num_states))
            window = np.zeros((n, width))
            window[-1] = _micro_features(mdp, state)
        best = act(window, learner.network, 0.0, mdp.mask[state], rng)
        visited.append(state)
        greedy.append(best)
        if rng.random() < behaviour_epsilon:
            options = np.flatnonzero(mdp.mask[state])
            action = int(options[rng.integers(len(options))])
        else:
            action = best
        state = sample_successor(cumulative, state, action, rng)
        window = np.vstack([window[1:], _micro_features(mdp, state)[None]])

    best_values = state_values(mdp, q_optimal)[visited]
    chosen = q_optimal[visited, greedy]
    return float(np.mean(chosen >= best_values - tol))


class DrqnPolicy(Policy):
    """Deployed scheduler: frozen shared parameters, one window per user."""

    name = "drqn"

    def __init__(
        self,
        cfg: SystemConfig,
        network: QNetwork,
        epsilon: Optional[float] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__(cfg)
        self.network = network
        self.epsilon = cfg.eval_epsilon if epsilon is None else epsilon
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        width = feature_size(cfg)
        self.windows = [HistoryWindow(cfg.history_len, width) for _ in range(cfg.num_mus)]

    @classmethod
    def from_checkpoint(
        cls,
        path: str,
        cfg: SystemConfig,
        epsilon: Optional[float] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> "DrqnPolicy":
        tensors, _ = read_checkpoint(path, cfg)
        network = QNetwork(cfg, params=ParamSet(_strip_prefix(tensors, "theta.")))
        return cls(cfg, network, epsilon=epsilon, rng=rng)

    def reset(self):
        for w in self.windows:
            w.reset()

    def act(self, states, observations, links) -> List[Action]:
        masks = []
        for window, state, obs in zip(self.windows, states, observations):
            # each user sees only its own history
            window.push(encode(state, obs, self.cfg))
            masks.append(feasible_mask(state, self.cfg.num_bs))
        stacked = np.stack([w.values for w in self.windows])
        chosen = act_batch(self.network, stacked, np.stack(masks), self.epsilon, self.rng)
        return [Action.from_index(int(a), self.cfg.num_bs) for a in chosen]
