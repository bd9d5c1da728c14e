"""Double DQN with soft (Polyak) target updates, plus per-environment
reward scaling for training a single Q-network across workloads whose
reward magnitudes differ by orders of magnitude.
"""

from __future__ import annotations

import numpy as np

from .errors import DivergenceError
from .nets import Adam


def polyak_update(target_params, online_params, alpha):
    """theta_target <- alpha * theta_online + (1 - alpha) * theta_target."""
    for tp, op in zip(target_params, online_params):
        tp *= 1.0 - alpha
        tp += alpha * op


class EpsilonSchedule:
    """Fully-random warmup followed by a linear 1 -> 0 anneal."""

    def __init__(self, random_epochs=1000, decay_epochs=5000):
        self.random_epochs = random_epochs
        self.decay_epochs = decay_epochs

    def value(self, epoch):
        if epoch < self.random_epochs:
            return 1.0
        if self.decay_epochs <= 0:
            return 0.0
        return max(0.0, 1.0 - (epoch - self.random_epochs) / self.decay_epochs)


class DqnLearner:
    """Double-DQN: online-net argmax selects, target net evaluates."""

    def __init__(self, qnet, gamma, lr=0.001, polyak_alpha=0.01, batch_size=32,
                 random_epochs=1000, decay_epochs=5000, weight_decay=1e-4):
        self.online = qnet
        self.target = qnet.clone()
        self.gamma = gamma
        self.polyak_alpha = polyak_alpha
        self.batch_size = batch_size
        self.schedule = EpsilonSchedule(random_epochs, decay_epochs)
        self.opt = Adam(qnet.parameters(), lr=lr, weight_decay=weight_decay)
        self.updates = 0

    @property
    def n_actions(self):
        return self.online.out_dim

    def epsilon(self, epoch):
        return self.schedule.value(epoch)

    def act(self, obs, rng, schedule_epoch):
        if rng.random() < self.epsilon(schedule_epoch):
            return int(rng.integers(self.n_actions))
        return int(np.argmax(self.online.forward(obs)))

    def act_greedy(self, obs):
        return int(np.argmax(self.online.forward(obs)))

    def bellman_targets(self, rewards, next_states, dones):
        """y = r + gamma * (1-done) * Q_target(s', argmax_a Q_online(s', a))."""
        a_star = np.argmax(self.online.forward(next_states), axis=1)
        q_next = self.target.forward(next_states)[np.arange(len(a_star)), a_star]
        return rewards + self.gamma * (1.0 - dones) * q_next

    def update(self, experiences, reward_scaler=None):
        """One L2 regression step on a minibatch, then a Polyak target update."""
        states = np.stack([e.state for e in experiences])
        next_states = np.stack([e.next_state for e in experiences])
        actions = np.array([e.action for e in experiences])
        dones = np.array([float(e.done) for e in experiences])
        if reward_scaler is not None:
            rewards = np.array(
                [reward_scaler.scale(e.env_index, e.reward) for e in experiences]
            )
        else:
            rewards = np.array([e.reward for e in experiences])

        y = self.bellman_targets(rewards, next_states, dones)
        q = self.online.forward_train(states)
        rows = np.arange(len(actions))
        q_a = q[rows, actions]
        loss = float(((q_a - y) ** 2).mean())
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite DQN loss {loss}")
        grad_q = np.zeros_like(q)
        grad_q[rows, actions] = 2.0 * (q_a - y) / len(actions)
        self.online.backward(grad_q)
        self.opt.step(self.online.parameters(), self.online.grads)
        polyak_update(self.target.parameters(), self.online.parameters(),
                      self.polyak_alpha)
        self.updates += 1
        return {"loss": loss, "mean_q": float(q_a.mean()), "n": len(actions)}

    def train_from(self, buffer, rng, reward_scaler=None):
        """Sample a minibatch from the buffer and update; None if empty."""
        if len(buffer) == 0:
            return None
        return self.update(buffer.sample(self.batch_size, rng), reward_scaler)


class RewardScaler:
    """Per-environment reward normalization, frozen after calibration.

    While an environment is calibrating (its exploration phase), absolute
    rewards are accumulated and the running scale is the median absolute
    reward seen so far. `freeze` pins the scale forever; consistency after
    freezing is what keeps a shared Q-network's loss comparable across
    environments. With no data (or an all-zero median) the scale is 1.
    """

    def __init__(self, enabled=True):
        self.enabled = enabled
        self._samples = {}
        self._frozen = {}
        self._cache = {}  # env -> (sample count, median), recomputed on growth

    def observe(self, env_index, reward):
        """Record a calibration-phase reward; ignored once frozen."""
        if not self.enabled or env_index in self._frozen:
            return
        self._samples.setdefault(env_index, []).append(abs(float(reward)))

    def freeze(self, env_index):
        """Pin the environment's scale at the median absolute reward."""
        if not self.enabled or env_index in self._frozen:
            return
        self._frozen[env_index] = self._estimate(env_index)

    def frozen(self, env_index):
        return env_index in self._frozen

    def _estimate(self, env_index):
        samples = self._samples.get(env_index)
        if not samples:
            return 1.0
        cached = self._cache.get(env_index)
        if cached is not None and cached[0] == len(samples):
            return cached[1]
        med = float(np.median(samples))
        med = med if med > 0 else 1.0
        self._cache[env_index] = (len(samples), med)
        return med

    def scale_of(self, env_index):
        if not self.enabled:
            return 1.0
        return self._frozen.get(env_index, self._estimate(env_index))

    def scale(self, env_index, reward):
        if not self.enabled:
            return reward
        return reward / self.scale_of(env_index)
