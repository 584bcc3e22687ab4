import numpy as np
import pytest

from oracles import central_difference, relative_error

from siglab.intersection import toy_two_phase
from siglab.regulatable import PrecedenceParams
from siglab.simulator import DemandProfile, SimConstants, TrafficSim
from siglab.trainers import PpoConfig, PpoTrainer


def toy_env():
    return TrafficSim(toy_two_phase(), SimConstants(),
                      DemandProfile(((0, "EB_T", 6), (0, "NB_T", 4))))


def make_trainer(seed=0, **cfg_overrides):
    cfg = PpoConfig(**cfg_overrides)
    return PpoTrainer(toy_env(), cfg, np.random.default_rng(seed))


def random_batch(trainer, rng, n=6):
    states = rng.uniform(0.0, 4.0, size=(n, trainer.codec.n_features))
    for j in range(n):
        for c in range(trainer.n_actions):
            sl = trainer.codec.flags_slice(c)
            states[j, sl] = 0.0
            states[j, sl.start + int(rng.integers(4))] = 1.0
    actions = rng.integers(trainer.n_actions, size=n)
    logps = np.array([
        float(np.log(trainer.policy(states[j])[actions[j]]))
        for j in range(n)])
    advantages = rng.normal(size=n)
    return states, actions, logps, advantages


class TestSurrogateGradient:
    def test_zero_advantages_give_exact_zero_update(self, rng):
        trainer = make_trainer(temperature=5.0)
        states, actions, logps, _ = random_batch(trainer, rng)
        _, grad = trainer.surrogate_and_grad(
            states, actions, logps, np.zeros(len(actions)))
        assert np.all(grad == 0.0)

    def test_inside_clip_equals_unclipped_gradient(self, rng):
        # log-probs recorded from the current policy: every ratio is exactly
        # 1, strictly inside the clip interval.
        trainer = make_trainer(temperature=5.0, clip=0.2)
        states, actions, logps, advantages = random_batch(trainer, rng)
        _, clipped = trainer.surrogate_and_grad(states, actions, logps,
                                                advantages)
        trainer.cfg.clip = 1e9  # effectively no clipping
        _, unclipped = trainer.surrogate_and_grad(states, actions, logps,
                                                  advantages)
        assert np.allclose(clipped, unclipped)

    def test_matches_finite_differences(self, rng):
        trainer = make_trainer(temperature=5.0)
        layout = trainer.codec.layout
        states, actions, logps, advantages = random_batch(trainer, rng)
        params = PrecedenceParams.random(layout, rng,
                                         exponent_range=(0.8, 1.5))
        value, grad = trainer.surrogate_and_grad(
            states, actions, logps, advantages, params=params)

        def surrogate_at(vec):
            trial = PrecedenceParams.unflatten(layout, vec)
            v, _ = trainer.surrogate_and_grad(
                states, actions, logps, advantages, params=trial)
            return v

        numeric = central_difference(surrogate_at, params.flatten(), step=1e-5)
        assert relative_error(grad, numeric, floor=1e-5) < 1e-4

    def test_clipped_samples_contribute_no_gradient(self, rng):
        trainer = make_trainer(temperature=5.0, clip=0.2)
        states, actions, logps, advantages = random_batch(trainer, rng, n=3)
        advantages = np.abs(advantages) + 0.5         # all positive
        shifted = logps - np.log(2.0)                  # ratio == 2 > 1.2
        _, grad = trainer.surrogate_and_grad(states, actions, shifted,
                                             advantages)
        assert np.all(grad == 0.0)


class TestCritic:
    def test_returns_to_go_discounting(self):
        trainer = make_trainer(gamma=0.5)
        from siglab.trainers.ppo import Trajectory
        traj = Trajectory(
            states=np.zeros((3, trainer.codec.n_features)),
            actions=np.zeros(3, int),
            log_probs=np.zeros(3),
            rewards=np.array([1.0, 2.0, 4.0]),
            terminals=np.array([False, False, True]),
        )
        returns = trainer.returns_to_go(traj)
        assert np.allclose(returns, [1 + 0.5 * (2 + 0.5 * 4), 2 + 0.5 * 4, 4.0])

    def test_td_advantage_uses_one_step_residual(self):
        trainer = make_trainer(gamma=0.8)
        from siglab.trainers.ppo import Trajectory
        states = np.zeros((2, trainer.codec.n_features))
        traj = Trajectory(states=states, actions=np.zeros(2, int),
                          log_probs=np.zeros(2),
                          rewards=np.array([1.0, -1.0]),
                          terminals=np.array([False, True]))
        v = trainer.critic.predict(states)[:, 0]
        adv = trainer.td_advantages(traj)
        assert adv[0] == pytest.approx(1.0 + 0.8 * v[1] - v[0])
        assert adv[1] == pytest.approx(-1.0 - v[1])

    def test_critic_regresses_toward_returns(self, rng):
        trainer = make_trainer()
        from siglab.trainers.ppo import Trajectory
        states = rng.uniform(0, 3, size=(8, trainer.codec.n_features))
        traj = Trajectory(states=states, actions=np.zeros(8, int),
                          log_probs=np.zeros(8),
                          rewards=rng.normal(size=8),
                          terminals=np.zeros(8, bool))
        returns = trainer.returns_to_go(traj)
        for _ in range(400):
            trainer.update(traj)
        fitted = trainer.critic.predict(states)[:, 0]
        assert np.mean((fitted - returns) ** 2) < \
            np.mean((returns - returns.mean()) ** 2)


class TestTrainingLoop:
    def test_episode_collection_and_update_run(self):
        trainer = make_trainer(episodes=2, temperature=50.0)
        results = trainer.train(trial_seed=1)
        assert len(results) == 2
        assert all(np.isfinite(r.avg_delay) for r in results)

    def test_policy_is_a_distribution(self, rng):
        trainer = make_trainer(temperature=10.0)
        vec = rng.uniform(0, 5, trainer.codec.n_features)
        probs = trainer.policy(vec)
        assert probs.sum() == pytest.approx(1.0)
        assert np.all(probs >= 0)

    def test_deterministic_given_seed(self):
        a = make_trainer(seed=3, episodes=2, temperature=50.0).train(2)
        b = make_trainer(seed=3, episodes=2, temperature=50.0).train(2)
        assert [(r.avg_delay, r.steps) for r in a] == \
            [(r.avg_delay, r.steps) for r in b]
