"""Proximal policy optimization with the precedence function as the actor.

The stochastic policy is a softmax over precedence values at a configurable
logit temperature; the critic is a value network trained on discounted
returns. Updates maximize the clipped surrogate objective (ratio clip 0.2)
with one-step temporal-difference residuals as advantages, keeping every
policy step small — the property that makes the approach palatable for
safety-critical tuning, at the cost of slower convergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..neural import AdamState, Mlp, softmax
from ..regulatable import BatchPrecedence, PrecedenceParams
from ..simulator import TrafficSim
from .dqn import EpisodeResult, road_feature_groups


@dataclass
class PpoConfig:
    gamma: float = 0.8
    clip: float = 0.2
    actor_lr: float = 0.001
    critic_lr: float = 0.001
    temperature: float = 1.0     # logits = G / temperature
    epochs: int = 4              # passes over each collected episode
    episodes: int = 20
    max_steps: int = 20_000
    reward_scale: float = 0.01
    hidden: tuple[int, ...] = (64, 64, 64)
    grouped_first_layer: bool = True
    group_units: int = 16
    rest_units: int = 16
    input_clip: float | None = 3.0
    fresh_demand_per_episode: bool = True

    def episode_seed(self, trial_seed: int, episode_index: int) -> int:
        if self.fresh_demand_per_episode:
            return trial_seed * 1009 + episode_index
        return trial_seed


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray      # scaled
    terminals: np.ndarray    # natural episode ends only
    final_state: np.ndarray | None = None  # observation after the last step
    truncated: bool = False


class PpoTrainer:
    def __init__(self, env: TrafficSim, cfg: PpoConfig,
                 rng: np.random.Generator):
        self.env = env
        self.cfg = cfg
        self.rng = rng
        self.codec = env.codec
        layout = env.layout
        self.n_actions = len(layout.combos)
        self.params = PrecedenceParams.ones(layout)
        self.actor_adam = AdamState(lr=cfg.actor_lr)
        scales = self.codec.default_scales(env.constants)
        groups = (road_feature_groups(layout, self.codec)
                  if cfg.grouped_first_layer else None)
        self.critic = Mlp.build(self.codec.n_features, cfg.hidden, 1, rng,
                                input_scales=scales, groups=groups,
                                group_units=cfg.group_units,
                                rest_units=cfg.rest_units,
                                input_clip=cfg.input_clip)
        self.critic_adam = AdamState(lr=cfg.critic_lr)
        self.batch_g = BatchPrecedence(self.codec)

    # -- policy ----------------------------------------------------------------

    def logits(self, vec: np.ndarray) -> np.ndarray:
        return self.batch_g.values(vec[None, :], self.params)[0] \
            / self.cfg.temperature

    def policy(self, vec: np.ndarray) -> np.ndarray:
        return softmax(self.logits(vec))

    def sample_action(self, vec: np.ndarray) -> tuple[int, float]:
        probs = self.policy(vec)
        a = int(self.rng.choice(self.n_actions, p=probs))
        return a, float(np.log(max(probs[a], 1e-300)))

    # -- rollout -----------------------------------------------------------------

    def collect_episode(self, seed: int) -> tuple[Trajectory, EpisodeResult]:
        env = self.env
        obs = env.reset(seed)
        vec = self.codec.flatten(obs)
        states, actions, logps, rewards, terminals = [], [], [], [], []
        discounted = 0.0
        t = 0
        while not env.done and t < self.cfg.max_steps:
            a, logp = self.sample_action(vec)
            obs, reward, done = env.step(a)
            states.append(vec)
            actions.append(a)
            logps.append(logp)
            rewards.append(reward * self.cfg.reward_scale)
            terminals.append(done and not env.truncated)
            discounted += (self.cfg.gamma ** t) * reward
            vec = self.codec.flatten(obs)
            t += 1
        m = env.episode_metrics()
        traj = Trajectory(
            states=np.asarray(states),
            actions=np.asarray(actions, dtype=np.int64),
            log_probs=np.asarray(logps),
            rewards=np.asarray(rewards),
            terminals=np.asarray(terminals, dtype=bool),
            final_state=vec,
            truncated=env.truncated,
        )
        result = EpisodeResult(m.avg_delay, m.total_delay, m.vehicles,
                               discounted, t)
        return traj, result

    # -- learning ------------------------------------------------------------------

    def _tail_value(self, traj: Trajectory) -> float:
        """Bootstrap value past the last step (0 unless truncated)."""
        if traj.truncated and traj.final_state is not None:
            return float(self.critic.predict(traj.final_state)[0])
        return 0.0

    def returns_to_go(self, traj: Trajectory) -> np.ndarray:
        out = np.zeros_like(traj.rewards)
        acc = self._tail_value(traj)
        for i in range(len(traj.rewards) - 1, -1, -1):
            if traj.terminals[i]:
                acc = 0.0
            acc = traj.rewards[i] + self.cfg.gamma * acc
            out[i] = acc
        return out

    def td_advantages(self, traj: Trajectory) -> np.ndarray:
        values = self.critic.predict(traj.states)[:, 0]
        next_values = np.empty_like(values)
        next_values[:-1] = values[1:]
        next_values[-1] = self._tail_value(traj)
        next_values[traj.terminals] = 0.0
        return traj.rewards + self.cfg.gamma * next_values - values

    def surrogate_and_grad(
        self,
        states: np.ndarray,
        actions: np.ndarray,
        log_probs_old: np.ndarray,
        advantages: np.ndarray,
        params: PrecedenceParams | None = None,
    ) -> tuple[float, np.ndarray]:
        """Clipped surrogate value and its gradient over the flat actor vector."""
        params = params or self.params
        eps = self.cfg.clip
        tau = self.cfg.temperature
        n = len(states)
        logits = self.batch_g.values(states, params) / tau
        probs = softmax(logits)
        idx = np.arange(n)
        logp = np.log(np.maximum(probs[idx, actions], 1e-300))
        ratio = np.exp(logp - log_probs_old)
        unclipped = ratio * advantages
        clipped = np.clip(ratio, 1 - eps, 1 + eps) * advantages
        total = float(np.mean(np.minimum(unclipped, clipped)))
        clip_active = ((advantages > 0) & (ratio > 1 + eps)) | \
            ((advantages < 0) & (ratio < 1 - eps))
        live = ~clip_active & (advantages != 0.0)
        # d surrogate / d logits = ratio * adv * (onehot(a) - probs) / tau
        coeff = np.where(live, ratio * advantages, 0.0) / (tau * n)
        dlogits = -probs * coeff[:, None]
        dlogits[idx, actions] += coeff
        flat_grad = self.batch_g.accumulate_grad(states, dlogits, params)
        return total, flat_grad

    def update(self, traj: Trajectory) -> None:
        advantages = self.td_advantages(traj)
        returns = self.returns_to_go(traj)
        for _ in range(self.cfg.epochs):
            _, grad = self.surrogate_and_grad(
                traj.states, traj.actions, traj.log_probs, advantages)
            flat = self.params.flatten()
            self.actor_adam.step([flat], [-grad])  # ascent on the surrogate
            self.params = PrecedenceParams.unflatten(self.codec.layout, flat)
            self.params.clamp_exponents()

            values, cache = self.critic.forward(traj.states)
            err = values[:, 0] - returns
            dout = (2.0 * err / len(returns))[:, None]
            grads = self.critic.backward(cache, dout)
            self.critic_adam.step(self.critic.params, grads)

    def train(self, trial_seed: int) -> list[EpisodeResult]:
        results = []
        for ep in range(self.cfg.episodes):
            traj, result = self.collect_episode(
                self.cfg.episode_seed(trial_seed, ep))
            if len(traj.states):
                self.update(traj)
            results.append(result)
        return results
