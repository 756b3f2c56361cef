"""
Pruebas de evaluación determinista, métricas y exportación de latentes
"""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from laboratorio_aeail import evaluation
from laboratorio_aeail.envlab import (
    FeatureNormalizer, env_reset, generate_demos, make_env_spec, run_episode, scripted_expert, zero_policy,
)
from laboratorio_aeail.evaluation import (
    dump_latents, evaluate, evaluation_rollouts, reference_returns, relative_improvement,
    rollouts_as_demos, scaled_reward,
)
from laboratorio_aeail.exceptions import ShapeError, UnsupportedVariantError
from laboratorio_aeail.models import TrainConfig
from laboratorio_aeail.policy_opt import GaussianPolicy
from laboratorio_aeail.reward_models import AutoEncoder, GotReward, build_reward_model, latent_activations


def _idle_policy(spec):
    policy = GaussianPolicy.initialize(spec, hidden_size=4, seed=0)
    return policy.set_flat(np.zeros(policy.n_params))


class TestScaledReward:
    def test_examples(self):
        assert scaled_reward(100.0, 0.0, 100.0) == 1.0
        assert scaled_reward(0.0, 0.0, 100.0) == 0.0
        assert scaled_reward(50.0, 0.0, 100.0) == 0.5

    def test_can_leave_unit_interval(self):
        assert scaled_reward(150.0, 0.0, 100.0) == 1.5
        assert scaled_reward(-50.0, 0.0, 100.0) == -0.5

    def test_affine_invariance(self):
        base = scaled_reward(-30.0, -80.0, -10.0)
        assert scaled_reward(3 * -30.0 + 7, 3 * -80.0 + 7, 3 * -10.0 + 7) == pytest.approx(base, abs=1e-12)

    def test_degenerate_references(self):
        with pytest.raises(ValueError):
            scaled_reward(1.0, 2.0, 2.0)


class TestRelativeImprovement:
    def test_examples(self):
        assert relative_improvement(0.921, 0.83) == pytest.approx(0.1096, abs=1e-4)
        assert relative_improvement(0.813, 0.539) == pytest.approx(0.508, abs=1e-3)
        assert relative_improvement(0.5, 0.5) == 0.0

    def test_zero_baseline(self):
        with pytest.raises(ValueError):
            relative_improvement(0.5, 0.0)


class TestEvaluate:
    def test_matches_hand_stepped_rollouts(self):
        spec = make_env_spec("pointmass2d", horizon=5)
        report = evaluate(_idle_policy(spec), spec, n_rollouts=3, seed=7, with_references=False)
        esperados = [-5.0 * float(np.sum(env_reset(spec, 7 + i)[:2] ** 2)) for i in range(3)]
        assert report.returns == pytest.approx(esperados, abs=1e-12)
        assert report.scaled_reward is None

    def test_repeated_evaluation_is_identical(self, pointmass_spec):
        policy = GaussianPolicy.initialize(pointmass_spec, hidden_size=8, seed=1)
        a = evaluate(policy, pointmass_spec, n_rollouts=4, seed=0, with_references=False)
        b = evaluate(policy, pointmass_spec, n_rollouts=4, seed=0, with_references=False)
        assert a.returns == b.returns
        assert float(np.std([a.mean, b.mean])) == 0.0

    def test_same_seed_rollouts_have_zero_spread(self, pointmass_spec):
        policy = GaussianPolicy.initialize(pointmass_spec, hidden_size=8, seed=1)
        returns = [evaluate(policy, pointmass_spec, n_rollouts=1, seed=5, with_references=False).mean
                   for _ in range(3)]
        assert np.std(returns) == 0.0

    def test_default_rollout_count(self, pointmass_spec):
        report = evaluate(_idle_policy(pointmass_spec), pointmass_spec)
        assert report.n_rollouts == 10
        assert len(report.returns) == 10

    def test_references(self):
        random_ret, expert_ret = reference_returns("pointmass2d", 20)
        assert expert_ret > random_ret

    def test_degenerate_references_give_no_scaled_reward(self, pointmass_spec, monkeypatch):
        monkeypatch.setattr(evaluation, "reference_returns", lambda env, horizon: (20.0, 20.0))
        report = evaluate(_idle_policy(pointmass_spec), pointmass_spec, n_rollouts=2)
        assert report.random_return == report.expert_return == 20.0
        assert report.scaled_reward is None
        assert np.isfinite(report.mean)

    def test_dimension_mismatch_names_both(self, pointmass_spec):
        cartpole = make_env_spec("cartpole_cont", horizon=20)
        with pytest.raises(ShapeError) as info:
            evaluate(_idle_policy(pointmass_spec), cartpole)
        mensaje = str(info.value)
        assert "4" in mensaje and "2" in mensaje and "1" in mensaje

    def test_invalid_rollout_count(self, pointmass_spec):
        with pytest.raises(ValueError):
            evaluate(_idle_policy(pointmass_spec), pointmass_spec, n_rollouts=0)


class TestDumpLatents:
    def test_rows_and_columns(self, pointmass_spec, small_demos):
        ae = AutoEncoder.build(6, 100, None, small_demos.normalizer, seed=0)
        rollouts = rollouts_as_demos(evaluation_rollouts(_idle_policy(pointmass_spec), pointmass_spec, 2, 0),
                                     pointmass_spec)
        df = dump_latents(ae, small_demos, rollouts)
        assert len(df) == small_demos.n_pairs + rollouts.n_pairs
        assert df.shape[1] == 101
        assert (df["source"] == "expert").sum() == small_demos.n_pairs

    def test_values_pass_through(self, pointmass_spec, small_demos):
        ae = AutoEncoder.build(6, 10, 4, small_demos.normalizer, seed=0)
        df = dump_latents(ae, small_demos, small_demos)
        esperado = latent_activations(ae, small_demos.features())
        assert_array_equal(df[df["source"] == "expert"].iloc[:, 1:].to_numpy(), esperado)

    def test_absorbing_padding_is_not_exported(self):
        spec = make_env_spec("cartpole_cont", horizon=300)
        demos = generate_demos(spec, scripted_expert(spec), 2, 0)
        rollouts = rollouts_as_demos([run_episode(spec, zero_policy(spec), s) for s in range(3)], spec)
        assert all(t.terminated and len(t) < 300 for t in rollouts.trajectories)
        config = TrainConfig(env="cartpole_cont", horizon=300, asw=True, ae_hidden_size=8)
        model = build_reward_model(config, demos, spec, 0)
        df = dump_latents(model, demos, rollouts)
        assert (df["source"] == "expert").sum() == sum(len(t) for t in demos.trajectories)
        assert (df["source"] == "generated").sum() == sum(len(t) for t in rollouts.trajectories)
        # el bit absorbente vale 0 en todas las filas exportadas
        vivas = np.concatenate([model.live_features(t) for t in rollouts.trajectories])
        assert np.all(vivas[:, spec.state_dim] == 0.0)
        assert_array_equal(df[df["source"] == "generated"].iloc[:, 1:].to_numpy(), model.latent_activations(vivas))

    def test_got_has_no_latent_layer(self, small_demos):
        got = GotReward(small_demos.features(), horizon=20, normalizer=small_demos.normalizer)
        with pytest.raises(UnsupportedVariantError):
            dump_latents(got, small_demos, small_demos)

    def test_rollouts_as_demos_drop_true_rewards(self, pointmass_spec):
        trajs = evaluation_rollouts(_idle_policy(pointmass_spec), pointmass_spec, 2, 0)
        demos = rollouts_as_demos(trajs, pointmass_spec)
        assert all(t.true_rewards is None for t in demos.trajectories)
        assert isinstance(demos.normalizer, FeatureNormalizer)


class TestReferenceReturns:
    def test_cached_per_env_and_horizon(self):
        reference_returns.cache_clear()
        primero = reference_returns("pointmass2d", 20)
        segundo = reference_returns("pointmass2d", 20)
        assert primero == segundo
        assert reference_returns.cache_info().hits == 1

    def test_zero_policy_matches_hand_computation(self):
        spec = make_env_spec("pointmass2d", horizon=20)
        random_ret, _ = reference_returns("pointmass2d", 20, n_seeds=5)
        esperado = np.mean([-20.0 * float(np.sum(env_reset(spec, s)[:2] ** 2)) for s in range(5)])
        assert random_ret == pytest.approx(esperado, abs=1e-12)
