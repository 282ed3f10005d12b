import numpy as np
import pytest
import torch

from paca.errors import ConfigError, ContractError
from paca.losses import (
    LossWeights,
    ObjectiveTerms,
    SsimConfig,
    cycle_loss,
    default_scale_weights,
    gan_loss,
    ms_ssim,
    pretrain_objective,
    reg_loss,
    rmse,
    transfer_objective,
)

from gradcheck import REL32, REL64, fd_audit
from oracles import ms_ssim_reference, scalar_loop_mean_abs, scalar_loop_rmse


def _rand(shape, seed, lo=-1.0, hi=1.0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=gen) * (hi - lo) + lo


class TestGanLoss:
    def test_perfect_discriminator(self):
        real = torch.ones(1, 4, 4)
        fake = torch.zeros(1, 4, 4)
        assert gan_loss(real, fake, "discriminator").item() == 0.0

    def test_perfectly_fooled_generator(self):
        fake = torch.ones(1, 4, 4)
        assert gan_loss(None, fake, "generator").item() == 0.0

    def test_half_half_arithmetic(self):
        real = torch.full((1, 4, 4), 0.5)
        fake = torch.full((1, 4, 4), 0.5)
        assert gan_loss(real, fake, "discriminator").item() == pytest.approx(0.5)

    def test_cross_entropy_mode(self):
        fake = torch.full((1, 2, 2), 50.0)  # huge logit: generator nearly perfect
        assert gan_loss(None, fake, "generator", "cross_entropy").item() < 1e-6
        real = torch.full((1, 2, 2), 50.0)
        low = torch.full((1, 2, 2), -50.0)
        assert gan_loss(real, low, "discriminator", "cross_entropy").item() < 1e-6

    def test_bad_side(self):
        with pytest.raises(ContractError):
            gan_loss(None, torch.zeros(1, 2, 2), "referee")

    def test_disc_side_needs_real(self):
        with pytest.raises(ContractError):
            gan_loss(None, torch.zeros(1, 2, 2), "discriminator")


class TestCycleLoss:
    def test_identity_generators(self):
        a, b = _rand((3, 8, 8), 0), _rand((3, 8, 8), 1)
        assert cycle_loss(a, a, b, b).item() == 0.0

    def test_constant_offset(self):
        a, b = _rand((3, 8, 8), 2, -0.4, 0.4), _rand((3, 8, 8), 3)
        assert cycle_loss(a, a + 0.5, b, b).item() == pytest.approx(0.5, abs=1e-6)

    def test_matches_scalar_loop(self):
        a, aba = _rand((3, 5, 5), 4), _rand((3, 5, 5), 5)
        b, bab = _rand((3, 5, 5), 6), _rand((3, 5, 5), 7)
        expected = scalar_loop_mean_abs(a.numpy(), aba.numpy()) + scalar_loop_mean_abs(
            b.numpy(), bab.numpy()
        )
        assert cycle_loss(a, aba, b, bab).item() == pytest.approx(expected, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            cycle_loss(torch.zeros(3, 4, 4), torch.zeros(3, 5, 5), torch.zeros(3, 4, 4), torch.zeros(3, 4, 4))


class TestRmse:
    def test_zero(self):
        x = _rand((3, 6, 6), 8)
        assert rmse(x, x).item() == 0.0

    def test_constant_difference(self):
        x = _rand((3, 6, 6), 9, -0.5, 0.5)
        assert rmse(x, x + 0.2).item() == pytest.approx(0.2, abs=1e-6)

    def test_matches_scalar_loop(self):
        x, y = _rand((3, 5, 5), 10), _rand((3, 5, 5), 11)
        assert rmse(x, y).item() == pytest.approx(scalar_loop_rmse(x.numpy(), y.numpy()), abs=1e-6)


class TestMsSsim:
    CFG = SsimConfig(scales=3)

    def test_self_similarity_is_one(self):
        for seed in range(5):
            x = _rand((3, 64, 64), seed)
            assert abs(ms_ssim(x, x, self.CFG).item() - 1.0) <= 1e-6

    def test_symmetry(self):
        x, y = _rand((3, 64, 64), 20), _rand((3, 64, 64), 21)
        assert ms_ssim(x, y, self.CFG).item() == pytest.approx(
            ms_ssim(y, x, self.CFG).item(), abs=1e-6
        )

    def test_matches_independent_oracle(self):
        weights = default_scale_weights(3)
        for seed in range(8):
            x = _rand((3, 64, 64), 100 + seed)
            y = (x + _rand((3, 64, 64), 200 + seed, -0.3, 0.3)).clamp(-1, 1)
            lib = ms_ssim(x, y, self.CFG).item()
            ref = ms_ssim_reference(x.numpy(), y.numpy(), scales=3, weights=weights)
            assert lib == pytest.approx(ref, abs=1e-5), seed

    def test_value_in_range(self):
        x, y = _rand((3, 64, 64), 22), _rand((3, 64, 64), 23)
        v = ms_ssim(x, y, self.CFG).item()
        assert -1.0 <= v <= 1.0

    def test_self_is_local_maximum(self):
        x = _rand((3, 64, 64), 24)
        base = ms_ssim(x, x, self.CFG).item()
        for seed in range(5):
            y = (x + _rand((3, 64, 64), 300 + seed, -0.05, 0.05)).clamp(-1, 1)
            assert ms_ssim(x, y, self.CFG).item() <= base + 1e-7

    def test_side_too_small_for_scales(self):
        with pytest.raises(ConfigError):
            ms_ssim(_rand((3, 32, 32), 25), _rand((3, 32, 32), 26), SsimConfig(scales=3))

    def test_custom_weights_must_sum_to_one(self):
        cfg = SsimConfig(scales=2, scale_weights=(0.9, 0.2))
        with pytest.raises(ConfigError):
            ms_ssim(_rand((3, 64, 64), 27), _rand((3, 64, 64), 28), cfg)

    def test_default_weights_sum_to_one(self):
        for scales in (1, 2, 3, 5):
            assert sum(default_scale_weights(scales)) == pytest.approx(1.0, abs=1e-12)

    def test_differentiable(self):
        x = _rand((3, 64, 64), 29).requires_grad_(True)
        y = _rand((3, 64, 64), 30)
        ms_ssim(x, y, self.CFG).backward()
        assert x.grad is not None and torch.isfinite(x.grad).all()


def _checkerboard(side=64):
    idx = torch.arange(side)
    board = ((idx[:, None] + idx[None, :]) % 2).float()
    return (board * 2 - 1).expand(3, side, side).contiguous()


class TestRegLoss:
    CFG = SsimConfig(scales=3)

    def test_identical_images_with_c_one(self):
        b = _rand((3, 64, 64), 31)
        assert reg_loss(b, b, self.CFG, c_const=1.0).item() == -2.0

    def test_identical_images_with_c_zero(self):
        b = _rand((3, 64, 64), 32)
        assert reg_loss(b, b, self.CFG, c_const=0.0).item() == -1.0

    def test_orthogonal_patterns(self):
        x = _checkerboard()
        y = -x
        ref = ms_ssim_reference(x.numpy(), y.numpy(), scales=3, weights=default_scale_weights(3))
        assert ref < 1e-3  # oracle confirms the construction
        assert reg_loss(x, y, self.CFG, c_const=1.0).item() == pytest.approx(-1.0, abs=1e-6)

    def test_monotone_decreasing_in_similarity(self):
        base = _rand((3, 64, 64), 33)
        pairs = []
        for scale in (0.0, 0.1, 0.4, 0.9):
            fused = (base + scale * _rand((3, 64, 64), 34)).clamp(-1, 1)
            pairs.append(
                (
                    ms_ssim(fused, base, self.CFG).item(),
                    reg_loss(fused, base, self.CFG, 1.0).item(),
                )
            )
        pairs.sort()
        sims = [p[0] for p in pairs]
        regs = [p[1] for p in pairs]
        assert all(r2 <= r1 for r1, r2 in zip(regs, regs[1:]))
        assert sims == sorted(sims)


class TestObjectives:
    def _terms(self, seed=0, with_reg=True):
        gen = torch.Generator().manual_seed(seed)
        vals = torch.rand(7, generator=gen)
        return ObjectiveTerms(
            gan_gen_ab=vals[0],
            gan_gen_ba=vals[1],
            cycle=vals[2],
            gan_disc_a=vals[3],
            gan_disc_b=vals[4],
            reg=-(vals[5] + 1.0) if with_reg else None,
        )

    def test_lambda_zero_and_fooled(self):
        terms = ObjectiveTerms(
            gan_gen_ab=torch.tensor(0.0),
            gan_gen_ba=torch.tensor(0.0),
            cycle=torch.tensor(0.7),
            gan_disc_a=torch.tensor(0.1),
            gan_disc_b=torch.tensor(0.2),
        )
        gen, da, db = pretrain_objective(terms, LossWeights(lambda_cyc=0.0))
        assert gen.item() == 0.0 and da.item() == pytest.approx(0.1) and db.item() == pytest.approx(0.2)

    def test_identity_generators_cycle_vanishes(self):
        terms = ObjectiveTerms(
            gan_gen_ab=torch.tensor(0.0),
            gan_gen_ba=torch.tensor(0.0),
            cycle=torch.tensor(0.0),
            gan_disc_a=torch.tensor(0.0),
            gan_disc_b=torch.tensor(0.0),
        )
        gen, _, _ = pretrain_objective(terms, LossWeights(lambda_cyc=10.0))
        assert gen.item() == 0.0

    def test_recomposition(self):
        terms = self._terms(1, with_reg=False)
        w = LossWeights(lambda_cyc=10.0)
        gen, da, db = pretrain_objective(terms, w)
        expected = terms.gan_gen_ab.item() + terms.gan_gen_ba.item() + 10.0 * terms.cycle.item()
        assert gen.item() == pytest.approx(expected, abs=1e-6)
        assert da.item() == pytest.approx(terms.gan_disc_a.item(), abs=1e-6)
        assert db.item() == pytest.approx(terms.gan_disc_b.item(), abs=1e-6)

    def test_transfer_degenerates_at_lambda2_zero(self):
        terms = self._terms(2)
        w0 = LossWeights(lambda_reg=0.0)
        a = transfer_objective(terms, w0)
        b = pretrain_objective(terms, w0)
        for x, y in zip(a, b):
            assert x.item() == pytest.approx(y.item(), abs=1e-6)

    def test_fused_equals_target_drops_total_by_two(self):
        terms = self._terms(3)
        terms.reg = torch.tensor(-2.0)  # fused == b', C = 1
        gen0, _, _ = transfer_objective(terms, LossWeights(lambda_reg=0.0))
        gen1, _, _ = transfer_objective(terms, LossWeights(lambda_reg=1.0))
        assert gen1.item() == pytest.approx(gen0.item() - 2.0, abs=1e-6)

    def test_transfer_recomposition(self):
        terms = self._terms(4)
        w = LossWeights(lambda_cyc=7.0, lambda_reg=2.5)
        gen, _, _ = transfer_objective(terms, w)
        expected = (
            terms.gan_gen_ab.item()
            + terms.gan_gen_ba.item()
            + 7.0 * terms.cycle.item()
            + 2.5 * terms.reg.item()
        )
        assert gen.item() == pytest.approx(expected, abs=1e-6)

    def test_reg_requires_term(self):
        terms = self._terms(5, with_reg=False)
        with pytest.raises(ContractError):
            transfer_objective(terms, LossWeights(lambda_reg=1.0))

    def test_reg_in_disc_step_changes_logged_total_only(self):
        terms = self._terms(6)
        terms.reg = terms.reg.clone().requires_grad_(True)
        w = LossWeights(lambda_reg=1.0, reg_in_disc_step=True)
        _, _, db = transfer_objective(terms, w)
        assert db.item() == pytest.approx(terms.gan_disc_b.item() + terms.reg.item(), abs=1e-6)
        assert not db.requires_grad  # detached: no gradient through the disc total


class TestGradientAudit:
    def test_gan_loss_gradient(self):
        fake = _rand((1, 6, 6), 40)

        def loss(t):
            return gan_loss(None, t, "generator")

        rel32, rel64 = fd_audit(loss, fake)
        assert rel32 < REL32 and rel64 < REL64

    def test_cycle_loss_gradient(self):
        a = _rand((3, 8, 8), 41)
        b = _rand((3, 8, 8), 42)
        bab = _rand((3, 8, 8), 43)
        aba0 = _rand((3, 8, 8), 44)

        def loss(t):
            return cycle_loss(a.to(t.dtype), t, b.to(t.dtype), bab.to(t.dtype))

        rel32, rel64 = fd_audit(loss, aba0)
        assert rel32 < REL32 and rel64 < REL64

    def test_ms_ssim_gradient(self):
        cfg = SsimConfig(scales=3)
        x = _rand((3, 64, 64), 45)
        y = (x + _rand((3, 64, 64), 46, -0.2, 0.2)).clamp(-1, 1)

        def loss(t):
            return ms_ssim(t, y.to(t.dtype), cfg)

        rel32, rel64 = fd_audit(loss, x)
        assert rel32 < REL32 and rel64 < REL64

    def test_reg_loss_gradient(self):
        cfg = SsimConfig(scales=3)
        target = _rand((3, 64, 64), 47)
        fused = (target + _rand((3, 64, 64), 48, -0.3, 0.3)).clamp(-1, 1)

        def loss(t):
            return reg_loss(t, target.to(t.dtype), cfg, c_const=1.0)

        rel32, rel64 = fd_audit(loss, fused)
        assert rel32 < REL32 and rel64 < REL64
