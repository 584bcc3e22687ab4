"""Q-learning over the intersection MDP, with optional precedence distillation.

The core loop is textbook deep Q-learning: epsilon-greedy acting, replay,
a Huber-loss gradient step per environment step, and a periodically synced
target network. The distillation modes bolt on an inner loop that trains the
designed precedence function to imitate the Q-network, and swap it in as the
acting policy (the algorithm is off-policy, so the actor swap is sound):

  * "value"   — regress G(s, a) onto the Bellman targets directly;
  * "softmax" — cross-entropy between softmax(Q(s, .)) and softmax(G(s, .));
  * "hardmax" — cross-entropy between one-hot argmax Q and softmax(G(s, .)).

Precedence exponents are clamped after every distillation step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..neural import AdamState, Mlp, huber, softmax
from ..regulatable import BatchPrecedence, PrecedenceParams
from ..simulator import ObservationCodec, TrafficSim
from .replay import ReplayBuffer


@dataclass
class DqnConfig:
    gamma: float = 0.8
    epsilon: float = 0.05
    epsilon_zero_after: int = 20     # episodes before the step drop to 0
    minibatch: int = 32
    replay_capacity: int = 100_000
    target_sync: int = 500           # environment steps between target refreshes
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    episodes: int = 20
    max_steps: int = 20_000          # per-episode decision bound
    distill_inner: int = 2           # inner minibatches per environment step
    reward_scale: float = 0.01       # conditioning constant for stored rewards
    hidden: tuple[int, ...] = (64, 64, 64)
    grouped_first_layer: bool = True
    group_units: int = 16
    rest_units: int = 16
    input_clip: float | None = 3.0   # cap on standardized network inputs
    grad_clip: float | None = None   # optional global gradient-norm cap
    epsilon_decay: str = "step"      # "step" (constant, then 0) or "linear"
    use_online_target_weights: bool = False  # value-distill Bellman target source
    fresh_demand_per_episode: bool = True    # new arrival draw each episode

    def epsilon_at(self, episode_index: int) -> float:
        if episode_index >= self.epsilon_zero_after:
            return 0.0
        if self.epsilon_decay == "linear":
            frac = 1.0 - episode_index / self.epsilon_zero_after
            return self.epsilon * frac
        return self.epsilon

    def episode_seed(self, trial_seed: int, episode_index: int) -> int:
        if self.fresh_demand_per_episode:
            return trial_seed * 1009 + episode_index
        return trial_seed


def clip_gradient_norm(grads: list[np.ndarray], cap: float | None) -> None:
    """Scale the gradient list in place so its global norm is at most cap."""
    if cap is None:
        return
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > cap:
        scale = cap / total
        for g in grads:
            g *= scale


def road_feature_groups(layout, codec: ObservationCodec) -> list[tuple[int, ...]]:
    """Input-feature groups for the road-structured first layer.

    Groups collect the per-phase state variables of phases sharing an
    incoming road; clearance flags and signal features stay outside the
    groups and flow through the layer's rest block.
    """
    by_road: dict[str, list[int]] = {}
    for p in layout.phases:
        sl = codec.phase_slice(p.id)
        by_road.setdefault(p.approach, []).extend(range(sl.start, sl.stop))
    return [tuple(by_road[road]) for road in sorted(by_road)]


@dataclass
class EpisodeResult:
    avg_delay: float
    total_delay: float
    vehicles: int
    discounted_return: float
    steps: int


class DqnTrainer:
    """DQN plus the three precedence-distillation variants.

    ``mode`` selects the acting policy and distillation loss: None is plain
    DQN (Q-network acts); "value", "softmax", or "hardmax" act through the
    precedence function while the Q-network trains underneath.
    """

    MODES = (None, "value", "softmax", "hardmax")

    def __init__(self, env: TrafficSim, cfg: DqnConfig,
                 rng: np.random.Generator, mode: str | None = None):
        if mode not in self.MODES:
            raise ValueError(f"unknown distillation mode {mode!r}")
        self.env = env
        self.cfg = cfg
        self.rng = rng
        self.mode = mode
        self.codec = env.codec
        layout = env.layout
        n_actions = len(layout.combos)
        scales = self.codec.default_scales(env.constants)
        groups = (road_feature_groups(layout, self.codec)
                  if cfg.grouped_first_layer else None)

        def build():
            return Mlp.build(self.codec.n_features, cfg.hidden, n_actions, rng,
                             input_scales=scales, groups=groups,
                             group_units=cfg.group_units,
                             rest_units=cfg.rest_units,
                             input_clip=cfg.input_clip)

        self.q_net = build()
        self.target_net = build()
        self.target_net.copy_from(self.q_net)
        self.q_adam = AdamState(lr=cfg.learning_rate, beta1=cfg.adam_beta1,
                                beta2=cfg.adam_beta2)
        self.buffer = ReplayBuffer(cfg.replay_capacity, self.codec.n_features)
        self.global_step = 0
        self.params = PrecedenceParams.ones(layout) if mode else None
        self.params_adam = AdamState(lr=cfg.learning_rate, beta1=cfg.adam_beta1,
                                     beta2=cfg.adam_beta2)
        self.batch_g = BatchPrecedence(self.codec)
        self.n_actions = n_actions

    # -- policies ------------------------------------------------------------

    def q_values(self, vec: np.ndarray) -> np.ndarray:
        return self.q_net.predict(vec)

    def greedy_action(self, vec: np.ndarray) -> int:
        if self.mode is None:
            return int(np.argmax(self.q_values(vec)))
        vals = self.batch_g.values(vec[None, :], self.params)[0]
        return int(np.argmax(vals))

    def act(self, vec: np.ndarray, episode_index: int) -> int:
        if self.rng.random() < self.cfg.epsilon_at(episode_index):
            return int(self.rng.integers(self.n_actions))
        return self.greedy_action(vec)

    # -- Q-network training ----------------------------------------------------

    def bellman_targets(self, batch, net: Mlp) -> np.ndarray:
        q_next, _ = net.forward(batch.next_states)
        boot = q_next.max(axis=1)
        return batch.rewards + self.cfg.gamma * boot * (~batch.terminals)

    def update_q(self) -> float | None:
        """One Huber-loss gradient step on a sampled minibatch."""
        if len(self.buffer) < self.cfg.minibatch:
            return None  # warm-up: act and store only
        batch = self.buffer.sample(self.rng, self.cfg.minibatch)
        y = self.bellman_targets(batch, self.target_net)
        q, cache = self.q_net.forward(batch.states)
        picked = q[np.arange(len(batch)), batch.actions]
        loss, dloss = huber(picked, y)
        dq = np.zeros_like(q)
        dq[np.arange(len(batch)), batch.actions] = dloss / len(batch)
        grads = self.q_net.backward(cache, dq)
        clip_gradient_norm(grads, self.cfg.grad_clip)
        self.q_adam.step(self.q_net.params, grads)
        return float(loss.mean())

    def sync_target_if_due(self) -> None:
        if self.cfg.target_sync > 0 and \
                self.global_step % self.cfg.target_sync == 0:
            self.target_net.copy_from(self.q_net)

    # -- distillation ----------------------------------------------------------

    def distill_gradient(self, batch) -> tuple[float, np.ndarray]:
        """Mean imitation loss and its gradient over the flat parameter vector."""
        n = len(batch)
        g_all = self.batch_g.values(batch.states, self.params)
        if self.mode == "value":
            source = self.q_net if self.cfg.use_online_target_weights \
                else self.target_net
            y = self.bellman_targets(batch, source)
            picked = g_all[np.arange(n), batch.actions]
            err = picked - y
            loss = float(np.mean(err * err))
            coeffs = np.zeros_like(g_all)
            coeffs[np.arange(n), batch.actions] = 2.0 * err / n
        else:
            q_all = self.q_net.predict(batch.states)
            z = softmax(g_all)
            if self.mode == "softmax":
                x = softmax(q_all)
            else:
                x = np.zeros_like(q_all)
                x[np.arange(n), np.argmax(q_all, axis=1)] = 1.0
            z_safe = np.maximum(z, 1e-12)
            loss = float(np.mean(-(x * np.log(z_safe)).sum(axis=1)))
            coeffs = (z - x) / n
        flat_grad = self.batch_g.accumulate_grad(batch.states, coeffs,
                                                 self.params)
        return loss, flat_grad

    def distill_minibatch(self) -> float:
        """One gradient step of the selected imitation loss; returns the loss."""
        batch = self.buffer.sample(self.rng, self.cfg.minibatch)
        loss, flat_grad = self.distill_gradient(batch)
        clip_gradient_norm([flat_grad], self.cfg.grad_clip)
        flat = self.params.flatten()
        self.params_adam.step([flat], [flat_grad])
        self.params = PrecedenceParams.unflatten(self.codec.layout, flat)
        self.params.clamp_exponents()
        return loss

    def distill(self) -> None:
        """Run the inner imitation loop (fresh minibatch per iteration)."""
        if self.mode is None or len(self.buffer) < self.cfg.minibatch:
            return
        for _ in range(self.cfg.distill_inner):
            self.distill_minibatch()

    # -- episode loop ------------------------------------------------------------

    def run_episode(self, seed: int, episode_index: int,
                    train: bool = True) -> EpisodeResult:
        env = self.env
        obs = env.reset(seed)
        vec = self.codec.flatten(obs)
        discounted = 0.0
        t = 0
        while not env.done and t < self.cfg.max_steps:
            a = self.act(vec, episode_index) if train else self.greedy_action(vec)
            obs, reward, done = env.step(a)
            vec2 = self.codec.flatten(obs)
            if train:
                # a cutoff truncation is not a real terminal: the queue cost
                # continues, so the target must bootstrap through it
                terminal = done and not env.truncated
                self.buffer.push(vec, a, reward * self.cfg.reward_scale,
                                 vec2, terminal)
                self.global_step += 1
                self.update_q()
                self.distill()
                self.sync_target_if_due()
            discounted += (self.cfg.gamma ** t) * reward
            vec = vec2
            t += 1
        m = env.episode_metrics()
        return EpisodeResult(
            avg_delay=m.avg_delay,
            total_delay=m.total_delay,
            vehicles=m.vehicles,
            discounted_return=discounted,
            steps=t,
        )

    def train(self, trial_seed: int) -> list[EpisodeResult]:
        """The full training run; episode demand seeds derive from the trial."""
        return [self.run_episode(self.cfg.episode_seed(trial_seed, ep), ep)
                for ep in range(self.cfg.episodes)]

    # -- evaluation helpers -------------------------------------------------------

    def argmax_match_rate(self, states: np.ndarray) -> float:
        """Fraction of states where argmax G agrees with argmax Q."""
        if self.params is None:
            raise ValueError("no precedence function on a plain DQN trainer")
        q_all = self.q_net.predict(states)
        g_all = self.batch_g.values(states, self.params)
        return float(np.mean(np.argmax(g_all, axis=1) == np.argmax(q_all, axis=1)))

    def collect_states(self, seed: int, n: int) -> np.ndarray:
        """Roll greedy decisions without training to harvest held-out states."""
        env = self.env
        out = []
        episode = 0
        while len(out) < n:
            obs = env.reset(seed + 1000 + episode)
            vec = self.codec.flatten(obs)
            steps = 0
            while not env.done and len(out) < n and steps < self.cfg.max_steps:
                out.append(vec)
                obs, _, _ = env.step(self.greedy_action(vec))
                vec = self.codec.flatten(obs)
                steps += 1
            episode += 1
        return np.asarray(out)
