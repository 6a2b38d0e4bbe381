import numpy as np
import pytest

from helpers import sorted_coords
from voxseg.codec import LatentGrid
from voxseg.errors import SupportMismatchError
from voxseg.flow import (
    LossConfig,
    cfm_loss,
    euler_sample,
    interpolate,
    noise_like,
    sample_noise,
    velocity_target,
)


def latent_from(values, coords=None, resolution=16):
    values = np.asarray(values, dtype=np.float32).reshape(len(values), -1)
    if coords is None:
        coords = sorted_coords(np.random.default_rng(0), resolution, len(values))
    return LatentGrid(
        resolution=resolution,
        stride=1,
        coords=np.asarray(coords, dtype=np.int32),
        latents=values,
    )


def random_pair(seed, n=20, d=3):
    rng = np.random.default_rng(seed)
    coords = sorted_coords(rng, 16, n)
    y = latent_from(rng.uniform(-1, 1, (n, d)), coords)
    eps = latent_from(rng.normal(size=(n, d)), coords)
    return y, eps


class TestInterpolate:
    def test_endpoints(self):
        y, eps = random_pair(0)
        assert np.array_equal(interpolate(y, eps, 0.0).latents, y.latents)
        assert np.array_equal(interpolate(y, eps, 1.0).latents, eps.latents)

    def test_midpoint_arithmetic(self):
        y = latent_from([[0.2]], [[0, 0, 0]])
        eps = latent_from([[-0.4]], [[0, 0, 0]])
        out = interpolate(y, eps, 0.5)
        assert out.latents[0, 0] == pytest.approx(-0.1)

    def test_support_mismatch(self):
        y, _ = random_pair(1)
        _, eps = random_pair(2)
        with pytest.raises(SupportMismatchError):
            interpolate(y, eps, 0.5)

    def test_t_out_of_range(self):
        y, eps = random_pair(3)
        with pytest.raises(ValueError):
            interpolate(y, eps, 1.5)


class TestCfmLoss:
    def test_zero_at_minimizer(self):
        # dyadic values make eps - y exactly representable in float32
        rng = np.random.default_rng(4)
        coords = sorted_coords(rng, 16, 20)
        y = latent_from(rng.integers(-128, 129, (20, 3)) / 128.0, coords)
        eps = latent_from(rng.integers(-128, 129, (20, 3)) / 128.0, coords)
        v_hat = velocity_target(y, eps)
        assert cfm_loss(v_hat, y, eps, 0.3) == 0.0

    def test_positive_off_minimizer(self):
        y, eps = random_pair(4)
        v_hat = velocity_target(y, eps)
        perturbed = v_hat.with_latents(v_hat.latents + 1e-3)
        assert cfm_loss(perturbed, y, eps, 0.3) > 0.0

    def test_single_cell_arithmetic(self):
        y = latent_from([[1.0]], [[0, 0, 0]])
        eps = latent_from([[0.0]], [[0, 0, 0]])
        v_hat = latent_from([[0.0]], [[0, 0, 0]])
        assert cfm_loss(v_hat, y, eps, 0.7) == pytest.approx(1.0)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(5)
        y, eps = random_pair(5)
        v_hat = y.with_latents(rng.normal(size=y.latents.shape).astype(np.float32))
        # oracle: naive elementwise double loop in float64
        total, count = 0.0, 0
        for i in range(v_hat.num_cells):
            for c in range(v_hat.d_lat):
                diff = float(v_hat.latents[i, c]) - (
                    float(eps.latents[i, c]) - float(y.latents[i, c])
                )
                total += diff * diff
                count += 1
        assert cfm_loss(v_hat, y, eps, 0.5) == pytest.approx(total / count, abs=1e-12)

    def test_weight_table(self):
        y, eps = random_pair(6)
        v_hat = y.with_latents(np.zeros_like(y.latents))
        cfg = LossConfig(weighting="table", table=((0.0, 0.0), (1.0, 2.0)))
        base = cfm_loss(v_hat, y, eps, 0.5)
        weighted = cfm_loss(v_hat, y, eps, 0.5, cfg)
        assert weighted == pytest.approx(base)  # w(0.5) = 1.0
        assert cfm_loss(v_hat, y, eps, 1.0, cfg) == pytest.approx(2 * base)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(weighting="table", table=((0.0, -1.0),))

    def test_nonnegative_random(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            y, eps = random_pair(seed)
            v_hat = y.with_latents(rng.normal(size=y.latents.shape).astype(np.float32))
            assert cfm_loss(v_hat, y, eps, 0.1) >= 0.0


class TestSampleNoise:
    def test_deterministic(self):
        coords = sorted_coords(np.random.default_rng(0), 16, 30)
        a = sample_noise(coords, 3, seed=9, resolution=16)
        b = sample_noise(coords, 3, seed=9, resolution=16)
        assert np.array_equal(a.latents, b.latents)

    def test_different_seeds_differ(self):
        coords = sorted_coords(np.random.default_rng(0), 16, 40)
        a = sample_noise(coords, 3, seed=1, resolution=16)
        b = sample_noise(coords, 3, seed=2, resolution=16)
        assert not np.array_equal(a.latents, b.latents)

    def test_moments(self):
        coords = sorted_coords(np.random.default_rng(1), 32, 2500)
        values = sample_noise(coords, 4, seed=3, resolution=32).latents  # 10,000 draws
        assert abs(values.mean()) < 0.05
        assert 0.9 < values.var() < 1.1


class ConstantVelocityOracle:
    """Closed over the data latent: always returns eps - y regardless of x."""

    def __init__(self, y: LatentGrid, seed: int):
        self.y = y
        self.eps = noise_like(y, seed)

    def velocity(self, x, z, cond, t):
        return x.with_latents(self.eps.latents - self.y.latents)


class TestEulerSample:
    @pytest.mark.parametrize("steps", [1, 4, 12, 25])
    def test_oracle_recovers_target(self, steps):
        y, _ = random_pair(7)
        seed = 123
        oracle = ConstantVelocityOracle(y, seed)
        out = euler_sample(oracle, y, cond=None, steps=steps, seed=seed)
        assert np.abs(out.latents - y.latents).max() <= 1e-6

    def test_one_step_formula(self):
        y, _ = random_pair(8)
        seed = 55
        calls = []

        def velocity(x, z, cond, t):
            calls.append(t)
            return x.with_latents(np.full_like(x.latents, 0.25))

        out = euler_sample(velocity, y, cond=None, steps=1, seed=seed)
        eps = noise_like(y, seed)
        assert calls == [1.0]
        assert np.allclose(out.latents, eps.latents - 0.25)

    def test_deterministic_with_model(self):
        import torch

        from voxseg.model import ModelConfig, TaskCondition, TASK_FULL, VelocityTransformer, randomize_parameters

        torch.manual_seed(0)
        model = VelocityTransformer(ModelConfig(d_model=32, blocks=2, heads=4, d_freq=8, ffn_ratio=2))
        randomize_parameters(model, seed=1)
        rng = np.random.default_rng(9)
        coords = sorted_coords(rng, 16, 25).astype(np.int32)
        z = sample_noise(coords, 3, seed=10, resolution=16)
        cond = TaskCondition(TASK_FULL)
        a = euler_sample(model, z, cond, steps=12, seed=77)
        b = euler_sample(model, z, cond, steps=12, seed=77)
        assert np.array_equal(a.latents, b.latents)

    def test_bad_steps(self):
        y, _ = random_pair(10)
        with pytest.raises(ValueError):
            euler_sample(lambda x, z, c, t: x, y, None, steps=0, seed=0)
