"""Acceptance gate: one test per criterion, one printed verdict line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the PASS lines and
measured values. The learning criteria (5-7) train for real and take several
minutes each.
"""

import copy
import time

import numpy as np
import pytest
from scipy import stats as sps

from oracles import central_difference, relative_error

from siglab.harness import load_scenario, run_experiment
from siglab.harness.experiment import CmaFitness, make_env, run_trial
from siglab.intersection import (
    ClearanceFlags,
    ClearanceCase,
    param_count,
    standard_eight_phase,
    utah_ten_phase,
)
from siglab.neural import Mlp
from siglab.regulatable import (
    MIXED,
    PrecedenceParams,
    grad_params,
    monotonicity_audit,
    precedence_from_arrays,
)
from siglab.scenarios import scenario_path
from siglab.simulator import Observation, SignalState
from siglab.trainers import DqnTrainer, PpoTrainer, cma_es_tune, sphere
from siglab.trainers.baselines import (
    ActuatedController,
    run_controller_episode,
)


def announce(criterion: int, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS — {detail}")


def random_observations(layout, rng, n):
    """Random valid sensor snapshots (non-negative states, one-hot flags)."""
    all_ids = frozenset(p.id for p in layout.phases)
    out = []
    for _ in range(n):
        states = rng.uniform(0.0, 30.0, size=(len(layout.phases), 6))
        flags = [ClearanceFlags.for_case(ClearanceCase(int(rng.integers(1, 5))))
                 for _ in layout.combos]
        current = int(rng.integers(len(layout.combos)))
        green = frozenset(layout.combos[current].phases)
        out.append(Observation(
            layout=layout,
            clock=0.0,
            phase_states=states,
            clearance_flags=flags,
            signal=SignalState(green=green, yellow=frozenset(),
                               red=all_ids - green, phase_timer=0.0,
                               in_clearance=False),
            current_combo=current,
        ))
    return out


class TestCriterion1:
    def test_c1_monotonicity_suite(self):
        t0 = time.time()
        layout = standard_eight_phase()
        rng = np.random.default_rng(2024)
        samples = random_observations(layout, rng, 1000)
        mixed_total = 0
        for _ in range(50):
            params = PrecedenceParams.random(layout, rng)
            verdicts = monotonicity_audit(params, samples)
            mixed_total += sum(1 for v in verdicts.values() if v == MIXED)
        elapsed = time.time() - t0
        assert mixed_total == 0
        assert elapsed < 60.0
        announce(1, f"50 parameter draws x 1000 observations, 0 mixed "
                    f"verdicts in {elapsed:.1f}s")


class TestCriterion2:
    def test_c2_gradient_suites(self):
        t0 = time.time()
        layout = standard_eight_phase()
        rng = np.random.default_rng(7)
        combo = layout.combos[0]
        worst_reg = 0.0
        for _ in range(100):
            params = PrecedenceParams.random(
                layout, rng, exponent_range=(0.5, 2.0), signed_weights=True)
            s_mat = rng.uniform(0.1, 20.0, size=(2, 6))
            flag_vec = np.zeros(4)
            flag_vec[rng.integers(4)] = 1.0
            g = grad_params(s_mat, flag_vec, 0, params)
            analytic = np.concatenate([g.d_weights.ravel(),
                                       g.d_exponents.ravel(),
                                       g.d_flag_weights, g.d_flag_exponents])

            def eval_at(vec, _p=params, _s=s_mat, _f=flag_vec):
                trial = _p.copy()
                trial.weights[0] = vec[:12].reshape(2, 6)
                trial.exponents[0] = vec[12:24].reshape(2, 6)
                trial.flag_weights[0] = vec[24:28]
                trial.flag_exponents[0] = vec[28:32]
                return precedence_from_arrays(_s, _f, 0, trial)

            x0 = np.concatenate([params.weights[0].ravel(),
                                 params.exponents[0].ravel(),
                                 params.flag_weights[0],
                                 params.flag_exponents[0]])
            numeric = central_difference(eval_at, x0, step=1e-5)
            worst_reg = max(worst_reg,
                            relative_error(analytic, numeric, floor=1e-5))
        assert worst_reg < 1e-4

        worst_mlp = 0.0
        for trial_idx in range(100):
            net_rng = np.random.default_rng(100 + trial_idx)
            net = Mlp.build(6, (8, 7), 3, net_rng)
            x = net_rng.normal(size=6)
            dout = net_rng.normal(size=3)
            out, cache = net.forward(x)
            analytic = np.concatenate(
                [g.ravel() for g in net.backward(cache, dout)])
            flat0 = np.concatenate([p.ravel() for p in net.params])

            def eval_net(vec, _net=net, _x=x, _d=dout):
                old = [p.copy() for p in _net.params]
                pos = 0
                vals = []
                for p in _net.params:
                    vals.append(vec[pos:pos + p.size].reshape(p.shape))
                    pos += p.size
                _net.set_params(vals)
                y, _ = _net.forward(_x)
                _net.set_params(old)
                return float(y @ _d)

            numeric = central_difference(eval_net, flat0, step=1e-6)
            worst_mlp = max(worst_mlp,
                            relative_error(analytic, numeric, floor=1e-4))
        elapsed = time.time() - t0
        assert worst_mlp < 1e-4
        assert elapsed < 60.0
        announce(2, f"100+100 finite-difference checks: worst rel. err "
                    f"precedence {worst_reg:.2e}, network {worst_mlp:.2e} "
                    f"in {elapsed:.1f}s")


class TestCriterion3:
    def test_c3_parameter_accounting(self):
        eight = standard_eight_phase()
        ten = utah_ten_phase()
        assert len(eight.combos) == 8
        assert param_count(eight) == 256
        assert len(ten.combos) == 11
        assert param_count(ten) == 352
        assert PrecedenceParams.ones(eight).size == 256
        assert PrecedenceParams.ones(ten).size == 352
        announce(3, "8 combos -> 256 parameters, 11 combos -> 352 parameters")


class TestCriterion4:
    def test_c4_simulator_safety_conservation(self):
        cfg = load_scenario(scenario_path("standard8"))
        env = make_env(cfg)
        negatives = 0
        for episode in range(10):
            rng = np.random.default_rng(9000 + episode)
            obs = env.reset(9000 + episode)
            while not env.done:
                obs, _, _ = env.step(int(rng.integers(len(cfg.layout.combos))))
                assert env.conservation_ok()
                if (obs.phase_states < 0).any():
                    negatives += 1
            assert env.conflict_green_instants == 0
            assert env.missing_yellow_count == 0
        assert negatives == 0
        announce(4, "10 random-policy episodes on the medium profile: "
                    "0 conflicting greens, 0 missing yellows, exact "
                    "conservation, all observations non-negative")


class TestCriterion8:
    def test_c8_cma_sphere_oracle(self):
        evals = []

        def counted(x):
            evals.append(1)
            return sphere(x)

        state = cma_es_tune(np.full(32, 0.01), counted, generations=200,
                            sigma0=0.01, seed=1)
        first_pass = next((g + 1 for g, v in enumerate(state.history)
                           if v < 1e-8), None)
        assert state.best_f < 1e-8
        assert first_pass is not None and first_pass <= 200
        assert len(evals) == 12 * state.generation
        announce(8, f"32-d sphere below 1e-8 at generation {first_pass}; "
                    f"exactly 12 evaluations per generation")


class TestCriterion9:
    def test_c9_reproducibility(self, tmp_path):
        cfg = load_scenario(scenario_path("toy2"))
        cfg.episodes = 3
        cfg.dqn.episodes = 3
        cfg.seeds = [41, 42]
        for controller in ("precedence", "hardmax"):
            a = tmp_path / f"{controller}_a.csv"
            b = tmp_path / f"{controller}_b.csv"
            run_experiment(cfg, a, controller=controller)
            run_experiment(cfg, b, controller=controller)
            assert a.read_bytes() == b.read_bytes()
        announce(9, "identical seeds reproduce byte-identical metrics CSVs "
                    "(precedence and hardmax controllers)")
