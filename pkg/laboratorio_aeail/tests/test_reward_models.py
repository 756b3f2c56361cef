"""
Pruebas de los modelos de recompensa: AE-W, AE-JS, VAE, discriminadores, GOT y ASW
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from laboratorio_aeail.diffnet import MlpNet, OptimizerState, forward, grad_check_loss, max_abs_param
from laboratorio_aeail.envlab import FeatureNormalizer, Trajectory, make_env_spec
from laboratorio_aeail.exceptions import ShapeError, UnsupportedVariantError
from laboratorio_aeail.models import TrainConfig
from laboratorio_aeail.reward_models import (
    AbsorbingWrapper, AutoEncoder, Discriminator, GotReward, RewardModel, VariationalAutoEncoder,
    absorbing_bonus, asw_augment, asw_strip, augment_normalizer, build_reward_model,
    disc_loss_and_reward, empirical_lipschitz, gaussian_kl_to_prior, got_reset, got_reward_step,
    js_objective, js_reward_from_error, kl_to_prior, latent_activations, loss_ae_js, loss_ae_w,
    loss_vae, reconstruction_error, reward_ae_js, reward_ae_w, reward_from_logits,
    w_objective, w_reward_from_error,
)


def _constant_net(sizes, weight=0.1):
    weights = [np.full((n_out, n_in), weight) for n_in, n_out in zip(sizes[:-1], sizes[1:])]
    return MlpNet(list(sizes), weights, [np.zeros(n) for n in sizes[1:]])


def _zero_decoder_ae(dim=2):
    enc = MlpNet.initialize([dim, 3, 2], rng_seed=0)
    dec = _constant_net([2, 3, dim], weight=0.0)
    return AutoEncoder(enc, dec, FeatureNormalizer.identity(dim))


def _step_moves_rewards_apart(objective, trial):
    """Un paso con lr 1e-3 y la arquitectura por defecto: sube la recompensa experta y baja la generada"""
    rng = np.random.default_rng(trial)
    expert = 2.0 + 0.1 * rng.normal(size=(32, 4))
    gen = -2.0 + 0.1 * rng.normal(size=(32, 4)) + rng.uniform(-1, 1, size=4)
    config = TrainConfig()
    ae = AutoEncoder.build(4, config.ae_hidden_size, config.ae_latent_size, FeatureNormalizer.fit(expert),
                           seed=trial, objective=objective, learning_rate=1e-3)
    antes_e, antes_g = ae.rewards(expert).mean(), ae.rewards(gen).mean()
    ae.train_step(expert, gen)
    return ae.rewards(expert).mean() > antes_e and ae.rewards(gen).mean() < antes_g


class _SumReward(RewardModel):
    """Recompensa de prueba: suma de las características de cada fila"""

    variant = "suma"
    is_learned = False

    def __init__(self, dim):
        self.dim = dim

    @property
    def input_dim(self):
        return self.dim

    def rewards(self, features):
        return np.asarray(features).sum(axis=1)


class TestReconstructionError:
    def test_zero_decoder_gives_squared_norm(self):
        assert reconstruction_error(_zero_decoder_ae(), np.array([3.0, 4.0])) == pytest.approx(25.0)

    def test_perfect_reconstruction(self):
        ae = _zero_decoder_ae()
        ae.dec.biases[-1][...] = [3.0, 4.0]
        assert reconstruction_error(ae, np.array([3.0, 4.0])) == 0.0

    def test_straight_line_oracle(self):
        ae = AutoEncoder(_constant_net([2, 2, 2]), _constant_net([2, 2, 2]), FeatureNormalizer.identity(2))
        z = 0.2 * math.tanh(0.2)
        y = 0.2 * math.tanh(0.2 * z)
        assert reconstruction_error(ae, np.array([1.0, 1.0])) == pytest.approx(2 * (y - 1.0) ** 2, abs=1e-14)

    def test_measured_against_raw_input(self):
        ae = _zero_decoder_ae()
        ae.normalizer = FeatureNormalizer(np.array([3.0, 4.0]), np.array([2.0, 2.0]))
        assert reconstruction_error(ae, np.array([3.0, 4.0])) == pytest.approx(25.0)

    def test_batch_returns_array(self):
        err = reconstruction_error(_zero_decoder_ae(), np.array([[3.0, 4.0], [0.0, 1.0]]))
        assert_allclose(err, [25.0, 1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            reconstruction_error(_zero_decoder_ae(), np.array([1.0, 2.0, 3.0]))


class TestWassersteinReward:
    def test_reward_from_error(self):
        assert_allclose(w_reward_from_error(np.array([0.0, 1.0, 3.0])), [1.0, 0.5, 0.25])

    def test_reward_through_model(self):
        ae = _zero_decoder_ae()
        assert reward_ae_w(ae, np.array([3.0, 4.0])) == pytest.approx(1.0 / 26.0)
        assert np.all(ae.rewards(np.random.default_rng(0).normal(size=(10, 2))) <= 1.0)

    def test_objective_example(self):
        assert w_objective(np.array([0.0, 0.0]), np.array([1.0, 3.0])) == pytest.approx(-0.625)

    def test_identical_batches_give_zero(self, rng):
        ae = AutoEncoder.build(4, 8, 3, FeatureNormalizer.identity(4), seed=0)
        batch = rng.normal(size=(6, 4))
        assert loss_ae_w(ae, batch, batch) == 0.0

    def test_rejects_empty_and_unequal_batches(self, rng):
        ae = AutoEncoder.build(4, 8, 3, FeatureNormalizer.identity(4), seed=0)
        with pytest.raises(ValueError):
            loss_ae_w(ae, np.zeros((0, 4)), np.zeros((0, 4)))
        with pytest.raises(ShapeError):
            loss_ae_w(ae, rng.normal(size=(3, 4)), rng.normal(size=(4, 4)))

    def test_gradient_matches_finite_differences(self, rng):
        ae = AutoEncoder.build(4, 6, 3, FeatureNormalizer.identity(4), seed=1)
        expert, gen = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        _, grads = ae.loss_and_grads(expert, gen)
        assert grad_check_loss(ae.networks(), lambda: loss_ae_w(ae, expert, gen), grads) <= 1e-4

    def test_train_step_respects_clip_range(self, rng):
        ae = AutoEncoder.build(4, 8, 3, FeatureNormalizer.identity(4), seed=0, learning_rate=0.5)
        for _ in range(20):
            ae.train_step(rng.normal(size=(8, 4)), rng.normal(3.0, 1.0, size=(8, 4)))
        assert all(max_abs_param(net) <= 0.99 for net in ae.networks())

    def test_step_raises_expert_and_lowers_generated_rewards(self):
        exitos = sum(_step_moves_rewards_apart("w", trial) for trial in range(100))
        assert exitos >= 95

    def test_default_architecture_has_no_bottleneck(self):
        ae = AutoEncoder.build(6, 100, None, FeatureNormalizer.identity(6), seed=0)
        assert ae.enc.layer_sizes == [6, 100]
        assert ae.enc.output_activation == "tanh"
        assert ae.dec.layer_sizes == [100, 100, 6]
        assert ae.dec.output_activation == "identity"
        assert ae.bottleneck is None
        assert AutoEncoder.build(6, 100, 16, FeatureNormalizer.identity(6), seed=0).bottleneck == 16

    def test_default_architecture_gradient(self, rng):
        ae = AutoEncoder.build(4, 6, None, FeatureNormalizer.identity(4), seed=3)
        expert, gen = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        _, grads = ae.loss_and_grads(expert, gen)
        assert grad_check_loss(ae.networks(), lambda: loss_ae_w(ae, expert, gen), grads) <= 1e-4


class TestJensenShannonReward:
    def test_log2_fixed_point(self):
        assert js_reward_from_error(np.log(2.0)) == pytest.approx(np.log(2.0))

    def test_small_error_gives_large_reward(self):
        assert js_reward_from_error(np.log(4.0 / 3.0)) == pytest.approx(np.log(4.0))

    def test_zero_error_is_floored(self):
        assert js_reward_from_error(0.0) == pytest.approx(13.8155, abs=1e-4)
        assert np.isfinite(js_reward_from_error(0.0))

    def test_objective_example(self):
        ln2 = np.log(2.0)
        assert js_objective(np.array([ln2]), np.array([ln2])) == pytest.approx(2 * ln2)

    def test_reward_through_model(self):
        ae = _zero_decoder_ae()
        ae.objective = "js"
        assert reward_ae_js(ae, np.array([3.0, 4.0])) == pytest.approx(-np.log(-np.expm1(-25.0)))

    def test_gradient_matches_finite_differences(self, rng):
        ae = AutoEncoder.build(4, 6, 3, FeatureNormalizer.identity(4), seed=2, objective="js")
        expert, gen = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        _, grads = ae.loss_and_grads(expert, gen)
        assert grad_check_loss(ae.networks(), lambda: loss_ae_js(ae, expert, gen), grads) <= 1e-4

    def test_step_raises_expert_and_lowers_generated_rewards(self):
        exitos = sum(_step_moves_rewards_apart("js", trial) for trial in range(100))
        assert exitos >= 95


class TestVariationalAutoEncoder:
    def test_gaussian_kl_examples(self):
        assert gaussian_kl_to_prior(np.array([0.0]), np.array([0.0]))[0] == 0.0
        assert gaussian_kl_to_prior(np.array([1.0]), np.array([0.0]))[0] == pytest.approx(0.5)
        assert gaussian_kl_to_prior(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(0.359141, abs=1e-6)

    def test_kl_non_negative(self, rng):
        vae = VariationalAutoEncoder.build(4, 8, 3, FeatureNormalizer.identity(4), seed=0)
        assert np.all(kl_to_prior(vae, rng.normal(size=(50, 4))) >= 0.0)
        assert isinstance(kl_to_prior(vae, rng.normal(size=4)), float)

    def test_kl_matches_monte_carlo_estimate(self, rng):
        vae = VariationalAutoEncoder.build(4, 8, 3, FeatureNormalizer.identity(4), seed=2)
        x = rng.normal(size=(1, 4))
        mu, logvar = (v[0] for v in vae.posterior(x))
        eps = rng.normal(size=(10_000, 3))
        z = mu + np.exp(0.5 * logvar) * eps
        # log q(z|x) - log p(z) por muestra
        muestras = np.sum(-0.5 * logvar - 0.5 * eps ** 2 + 0.5 * z ** 2, axis=1)
        se = np.std(muestras) / math.sqrt(muestras.size)
        assert abs(np.mean(muestras) - kl_to_prior(vae, x[0])) <= 3 * se + 1e-12

    def test_identical_batches_give_zero(self, rng):
        vae = VariationalAutoEncoder.build(4, 8, 3, FeatureNormalizer.identity(4), seed=0)
        batch = rng.normal(size=(6, 4))
        assert abs(loss_vae(vae, batch, batch)) <= 1e-12

    def test_loss_sign_convention(self, rng):
        vae = VariationalAutoEncoder.build(4, 8, 3, FeatureNormalizer.identity(4), seed=5, kl_weight=0.3)
        expert, gen = rng.normal(size=(6, 4)), rng.normal(1.0, 1.0, size=(6, 4))
        esperado = (np.mean(vae.rewards(gen)) - np.mean(vae.rewards(expert))
                    + 0.3 * (np.mean(kl_to_prior(vae, expert)) - np.mean(kl_to_prior(vae, gen))))
        assert loss_vae(vae, expert, gen, sample=False) == pytest.approx(esperado, rel=1e-12, abs=1e-14)

    def test_kl_free_limit_matches_ae_w(self, rng):
        vae = VariationalAutoEncoder.build(4, 8, 3, FeatureNormalizer.identity(4), seed=3, kl_weight=0.0)
        ae = AutoEncoder(vae.enc_mean, vae.dec, vae.normalizer)
        expert, gen = rng.normal(size=(6, 4)), rng.normal(1.0, 1.0, size=(6, 4))
        assert_allclose(loss_vae(vae, expert, gen, sample=False), loss_ae_w(ae, expert, gen), rtol=1e-12, atol=1e-14)

    def test_gradient_matches_finite_differences(self, rng):
        vae = VariationalAutoEncoder.build(3, 4, 2, FeatureNormalizer.identity(3), seed=4, kl_weight=0.7)
        expert, gen = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        noise = rng.normal(size=(4, 2))
        _, grads = vae.loss_and_grads(expert, gen, noise=noise)
        error = grad_check_loss(vae.networks(), lambda: loss_vae(vae, expert, gen, noise=noise), grads)
        assert error <= 1e-4

    def test_noise_shape_checked(self, rng):
        vae = VariationalAutoEncoder.build(3, 4, 2, FeatureNormalizer.identity(3), seed=0)
        with pytest.raises(ShapeError):
            loss_vae(vae, rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), noise=np.zeros((4, 3)))

    def test_rewards_use_posterior_mean(self, rng):
        vae = VariationalAutoEncoder.build(3, 4, 2, FeatureNormalizer.identity(3), seed=0)
        x = rng.normal(size=(5, 3))
        assert_array_equal(vae.rewards(x), vae.rewards(x))


class TestDiscriminator:
    def _zero_disc(self, dim=3, objective="jsd"):
        return Discriminator(_constant_net([dim, 4, 4, 1], weight=0.0), FeatureNormalizer.identity(dim), objective)

    def test_rewards_at_zero_logit(self):
        assert reward_from_logits(np.array([0.0]), "jsd")[0] == pytest.approx(np.log(2.0))
        assert reward_from_logits(np.array([0.0]), "fkld")[0] == 0.0

    def test_zero_logits_loss_is_log2(self, rng):
        d = self._zero_disc()
        loss, reward_fn = disc_loss_and_reward(d, rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
        assert loss == pytest.approx(np.log(2.0))
        assert_allclose(reward_fn(rng.normal(size=(2, 3))), [np.log(2.0)] * 2)

    def test_jsd_reward_increases_with_logit(self):
        r = reward_from_logits(np.linspace(-5, 5, 11), "jsd")
        assert np.all(np.diff(r) > 0)

    def test_extreme_logits_stay_finite(self):
        assert np.all(np.isfinite(reward_from_logits(np.array([-1e3, 1e3]), "fkld")))
        assert np.all(np.isfinite(reward_from_logits(np.array([-1e3, 1e3]), "jsd")))

    def test_gradient_matches_finite_differences(self, rng):
        d = Discriminator.build(3, 5, FeatureNormalizer.identity(3), seed=0)
        expert, gen = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        _, grads = d.loss_and_grads(expert, gen)
        assert grad_check_loss(d.networks(), lambda: d.loss_and_grads(expert, gen)[0], grads) <= 1e-4

    def test_training_separates_batches(self, rng):
        d = Discriminator.build(3, 8, FeatureNormalizer.identity(3), seed=0, learning_rate=1e-2)
        expert, gen = rng.normal(1.0, 0.3, size=(32, 3)), rng.normal(-1.0, 0.3, size=(32, 3))
        inicial = d.loss_and_grads(expert, gen)[0]
        for _ in range(50):
            d.train_step(expert, gen)
        assert d.loss_and_grads(expert, gen)[0] < inicial
        assert d.rewards(expert).mean() > d.rewards(gen).mean()

    def test_variant_names(self):
        assert self._zero_disc().variant == "disc_jsd"
        assert self._zero_disc(objective="fkld").variant == "disc_fkld"


def _got_oracle(atoms, horizon, alpha, beta, points):
    """Acoplamiento voraz en Python plano"""
    n = len(atoms)
    remaining = [1.0 / n] * n
    rewards, ledgers = [], []
    for x in points:
        if sum(remaining) <= 1e-15:
            rewards.append(0.0)
            ledgers.append(list(remaining))
            continue
        dist = [math.dist(a, x) for a in atoms]
        need, cost = 1.0 / horizon, 0.0
        for k in sorted(range(n), key=lambda i: (dist[i], i)):
            if need <= 1e-15:
                break
            if remaining[k] <= 0.0:
                continue
            take = min(remaining[k], need)
            cost += take * dist[k]
            remaining[k] -= take
            if remaining[k] <= 1e-15:
                remaining[k] = 0.0
            need -= take
        rewards.append(alpha * math.exp(-beta * cost * horizon))
        ledgers.append(list(remaining))
    return rewards, ledgers


class TestGotReward:
    def test_exact_matches(self):
        g = GotReward(np.array([[0.0], [1.0]]), horizon=2, alpha=1.0, beta=1.0)
        assert got_reward_step(g, np.array([0.0])) == pytest.approx(1.0)
        assert got_reward_step(g, np.array([1.0])) == pytest.approx(1.0)

    def test_partial_cost(self):
        g = GotReward(np.array([[0.0], [1.0]]), horizon=2, alpha=1.0, beta=1.0)
        assert got_reward_step(g, np.array([0.4])) == pytest.approx(0.670320, abs=1e-6)
        assert g.last_consumed == [(0, 0.5)]

    def test_exhausted_ledger_gives_zero(self):
        g = GotReward(np.array([[0.0], [1.0]]), horizon=2, alpha=1.0, beta=1.0)
        got_reward_step(g, np.array([0.0]))
        got_reward_step(g, np.array([1.0]))
        assert got_reward_step(g, np.array([0.5])) == 0.0
        assert g.last_consumed == []

    def test_partially_drained_ledger_scales_by_step_mass(self):
        g = GotReward(np.array([[0.0], [1.0]]), horizon=2, alpha=1.0, beta=1.0)
        g.remaining = np.array([0.25, 0.0])
        # solo queda 0.25 de masa: costo 0.25·0.4 dividido por 1/T = 0.5
        assert got_reward_step(g, np.array([0.4])) == pytest.approx(np.exp(-0.2), abs=1e-15)
        assert g.last_consumed == [(0, 0.25)]
        assert g.remaining.sum() == 0.0

    def test_ledger_consumes_one_over_horizon(self, rng):
        g = GotReward(rng.uniform(size=(7, 2)), horizon=5, alpha=5.0, beta=5.0)
        total = g.remaining.sum()
        for x in rng.uniform(size=(5, 2)):
            got_reward_step(g, x)
            consumido = sum(w for _, w in g.last_consumed)
            assert consumido == pytest.approx(0.2, abs=1e-12)
            assert g.remaining.sum() == pytest.approx(total - 0.2, abs=1e-12)
            total = g.remaining.sum()
            assert np.all(g.remaining >= 0.0)

    def test_reward_range(self, rng):
        g = GotReward(rng.uniform(size=(10, 3)), horizon=10, alpha=5.0, beta=5.0)
        r = g.rewards(rng.uniform(size=(10, 3)))
        assert np.all((r > 0.0) & (r <= 5.0))

    def test_rewards_reset_ledger(self, rng):
        g = GotReward(rng.uniform(size=(4, 2)), horizon=4)
        puntos = rng.uniform(size=(4, 2))
        assert_array_equal(g.rewards(puntos), g.rewards(puntos))

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            n_atoms = int(rng.integers(1, 5))
            horizon = int(rng.integers(1, 5))
            atoms = rng.uniform(-1, 1, size=(n_atoms, 2))
            points = rng.uniform(-1, 1, size=(horizon + 1, 2))
            g = GotReward(atoms, horizon=horizon, alpha=2.0, beta=3.0)
            esperadas, ledgers = _got_oracle(atoms.tolist(), horizon, 2.0, 3.0, points.tolist())
            for x, r, ledger in zip(points, esperadas, ledgers):
                assert got_reward_step(g, x) == pytest.approx(r, abs=1e-12)
                assert_allclose(g.remaining, ledger, atol=1e-12)

    def test_normalized_atoms(self):
        normalizer = FeatureNormalizer(np.array([10.0]), np.array([2.0]))
        g = GotReward(np.array([[10.0], [12.0]]), horizon=2, alpha=1.0, beta=1.0, normalizer=normalizer)
        assert_allclose(g.atoms, [[0.0], [1.0]])
        assert got_reward_step(g, np.array([10.8])) == pytest.approx(np.exp(-0.4))

    def test_not_learned(self, rng):
        g = GotReward(rng.uniform(size=(3, 2)), horizon=3)
        assert not g.is_learned
        assert g.train_step(rng.uniform(size=(2, 2)), rng.uniform(size=(2, 2))) == 0.0
        with pytest.raises(UnsupportedVariantError):
            latent_activations(g, rng.uniform(size=(2, 2)))

    def test_reset(self, rng):
        g = GotReward(rng.uniform(size=(3, 2)), horizon=3)
        got_reward_step(g, np.zeros(2))
        got_reset(g)
        assert_allclose(g.remaining, [1 / 3] * 3)


def _terminated_trajectory():
    return Trajectory(
        states=np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
        actions=np.ones((3, 1)),
        dones=np.array([False, False, True]),
    )


class TestAbsorbingWrapper:
    def test_non_terminated_gets_zero_flag(self):
        traj = _terminated_trajectory()
        traj.dones[-1] = False
        wrapper = AbsorbingWrapper(_SumReward(4), state_dim=2, action_dim=1, horizon=5)
        aumentada = asw_augment(wrapper, traj)
        assert len(aumentada) == 3
        assert_array_equal(aumentada.states[:, -1], [0.0, 0.0, 0.0])
        assert_array_equal(aumentada.states[:, :-1], traj.states)

    def test_terminated_is_padded_to_horizon(self):
        wrapper = AbsorbingWrapper(_SumReward(4), state_dim=2, action_dim=1, horizon=5)
        aumentada = asw_augment(wrapper, _terminated_trajectory())
        assert len(aumentada) == 5
        assert_array_equal(aumentada.states[3:], [[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        assert_array_equal(aumentada.actions[3:], np.zeros((2, 1)))
        assert aumentada.dones[3:].all()

    def test_strip_round_trip(self):
        traj = _terminated_trajectory()
        wrapper = AbsorbingWrapper(_SumReward(4), state_dim=2, action_dim=1, horizon=5)
        original = asw_strip(asw_augment(wrapper, traj))
        assert_array_equal(original.states, traj.states)
        assert_array_equal(original.actions, traj.actions)
        assert_array_equal(original.dones, traj.dones)

    def test_absorbing_bonus(self):
        assert absorbing_bonus(np.array([1.0, 1.0]), 0.5) == pytest.approx(0.75)
        assert absorbing_bonus(np.array([]), 0.9) == 0.0

    def test_tail_reward_added_to_last_live_step(self):
        wrapper = AbsorbingWrapper(_SumReward(4), state_dim=2, action_dim=1, horizon=5)
        assert_allclose(wrapper.trajectory_rewards(_terminated_trajectory(), 0.5), [3.0, 5.0, 7.75])

    def test_non_terminated_has_no_bonus(self):
        traj = _terminated_trajectory()
        traj.dones[-1] = False
        wrapper = AbsorbingWrapper(_SumReward(4), state_dim=2, action_dim=1, horizon=5)
        assert_allclose(wrapper.trajectory_rewards(traj, 0.5), [3.0, 5.0, 7.0])

    def test_inner_dimension_checked(self):
        with pytest.raises(ShapeError):
            AbsorbingWrapper(_SumReward(3), state_dim=2, action_dim=1, horizon=5)

    def test_augment_normalizer(self):
        normalizer = augment_normalizer(FeatureNormalizer(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0])), 2)
        assert_array_equal(normalizer.mean, [1.0, 2.0, 0.0, 3.0])
        assert_array_equal(normalizer.std, [4.0, 5.0, 1.0, 6.0])


class TestLatentActivations:
    def test_autoencoder_first_hidden_layer(self, rng):
        ae = AutoEncoder.build(4, 10, 3, FeatureNormalizer.identity(4), seed=0)
        lat = latent_activations(ae, rng.normal(size=(7, 4)))
        assert lat.shape == (7, 10)
        assert np.all(np.abs(lat) <= 1.0)

    def test_default_autoencoder_latent_is_encoder_output(self, rng):
        ae = AutoEncoder.build(4, 10, None, FeatureNormalizer.identity(4), seed=0)
        x = rng.normal(size=(5, 4))
        lat = latent_activations(ae, x)
        assert lat.shape == (5, 10)
        assert_array_equal(lat, forward(ae.enc, x))
        assert np.all(np.abs(lat) <= 1.0)

    def test_vae_and_discriminator(self, rng):
        vae = VariationalAutoEncoder.build(4, 6, 3, FeatureNormalizer.identity(4), seed=0)
        d = Discriminator.build(4, 5, FeatureNormalizer.identity(4), seed=0)
        assert latent_activations(vae, rng.normal(size=(3, 4))).shape == (3, 6)
        assert latent_activations(d, rng.normal(size=(3, 4))).shape == (3, 5)


class TestEmpiricalLipschitz:
    def test_linear_function(self, rng):
        slope = np.array([3.0, 4.0])
        valor = empirical_lipschitz(lambda x: x @ slope, np.zeros(2), np.ones(2), 20_000, rng)
        assert valor <= 5.0 + 1e-9
        assert valor >= 4.9

    def test_clipped_autoencoder_estimate_is_stable(self, small_demos):
        ae = AutoEncoder.build(6, 100, 16, small_demos.normalizer, seed=0)
        feats = small_demos.features()
        low, high = feats.min(axis=0), feats.max(axis=0) + 1e-6
        estimaciones = [
            empirical_lipschitz(ae.rewards, low, high, 100_000, np.random.default_rng(s))
            for s in range(5)
        ]
        media = np.mean(estimaciones)
        assert all(abs(e - media) <= 0.2 * media for e in estimaciones)


class TestBuildRewardModel:
    @pytest.fixture
    def config(self):
        return TrainConfig(ae_hidden_size=8, ae_latent_size=3, disc_hidden_size=8, horizon=20)

    @pytest.mark.parametrize("variant, tipo", [
        ("ae_w", AutoEncoder),
        ("ae_js", AutoEncoder),
        ("vae", VariationalAutoEncoder),
        ("disc_jsd", Discriminator),
        ("disc_fkld", Discriminator),
        ("got", GotReward),
    ])
    def test_variants(self, config, small_demos, pointmass_spec, variant, tipo):
        model = build_reward_model(config.model_copy(update={"reward": variant}), small_demos, pointmass_spec, 0)
        assert isinstance(model, tipo)
        assert model.variant == variant
        assert model.input_dim == 6

    @pytest.mark.parametrize("variant", ["ae_w", "got"])
    def test_absorbing_wrapper(self, config, small_demos, pointmass_spec, variant):
        cfg = config.model_copy(update={"reward": variant, "asw": True})
        model = build_reward_model(cfg, small_demos, pointmass_spec, 0)
        assert isinstance(model, AbsorbingWrapper)
        assert model.input_dim == 7
        rewards = model.trajectory_rewards(small_demos.trajectories[0], 0.99)
        assert rewards.shape == (len(small_demos.trajectories[0]),)

    def test_dimension_mismatch(self, config, small_demos):
        with pytest.raises(ShapeError):
            build_reward_model(config, small_demos, make_env_spec("cartpole_cont", 20), 0)

    def test_autoencoder_uses_configured_optimizer(self, config, small_demos, pointmass_spec):
        model = build_reward_model(config.model_copy(update={"reward_lr": 1e-2}), small_demos, pointmass_spec, 0)
        assert all(isinstance(o, OptimizerState) and o.learning_rate == 1e-2 for o in model.optimizers)

    def test_default_config_builds_full_width_autoencoders(self, small_demos, pointmass_spec):
        config = TrainConfig(horizon=20)
        assert config.ae_latent_size is None
        ae = build_reward_model(config, small_demos, pointmass_spec, 0)
        assert ae.enc.layer_sizes + ae.dec.layer_sizes[1:] == [6, 100, 100, 6]
        vae = build_reward_model(config.model_copy(update={"reward": "vae"}), small_demos, pointmass_spec, 0)
        assert vae.latent_dim == 100
