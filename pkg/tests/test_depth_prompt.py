import math

import pytest
import torch

from depthcod.depth_prompt import (
    BiasCorrection,
    DepthPromptModule,
    HighFreqExtractor,
    PromptFuser,
    cwd_loss,
    haar_decompose,
    haar_detail,
    haar_reconstruct,
)
from depthcod.errors import BadShape

from gradcheck import finite_difference_check
from oracles import oracle_haar_2x2


class TestBiasCorrection:
    def test_output_matches_teacher_grid(self):
        bcm = BiasCorrection(32, 32)
        out = bcm(torch.rand(2, 32, 16, 16), target_size=16)
        assert out.shape == (2, 32, 16, 16)
        out = bcm(torch.rand(2, 32, 24, 24), target_size=16)
        assert out.shape == (2, 32, 16, 16)

    def test_zero_input_zero_bias_gives_zero(self):
        bcm = BiasCorrection(8, 8)
        with torch.no_grad():
            for name, p in bcm.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
        out = bcm(torch.zeros(1, 8, 8, 8), target_size=8)
        assert torch.all(out == 0)

    def test_channel_mismatch(self):
        with pytest.raises(BadShape):
            BiasCorrection(8, 8)(torch.rand(1, 16, 8, 8))

    def test_gradient_matches_finite_differences(self):
        bcm = BiasCorrection(4, 4).double()
        x = torch.rand(1, 4, 4, 4, dtype=torch.float64)
        weight = torch.rand(1, 4, 4, 4, dtype=torch.float64)

        def loss_fn():
            return (bcm(x, target_size=4) * weight).sum()

        finite_difference_check(loss_fn, list(bcm.parameters()), n_checks=20)


class TestCwdLoss:
    def test_identical_inputs_give_exact_zero(self, rng):
        for _ in range(20):
            x = torch.from_numpy(rng.normal(size=(1, 8, 6, 6)))
            assert cwd_loss(x, x, 4.0).item() == 0.0

    def test_per_channel_shift_invariance(self, rng):
        for _ in range(20):
            x = torch.from_numpy(rng.normal(size=(1, 8, 6, 6)))
            shift = torch.from_numpy(rng.normal(size=(1, 8, 1, 1)))
            assert cwd_loss(x, x + shift, 2.0).item() <= 1e-12
            assert cwd_loss(x + shift, x, 2.0).item() <= 1e-12

    def test_nonnegative(self, rng):
        for _ in range(20):
            t = torch.from_numpy(rng.normal(size=(2, 4, 5, 5)))
            s = torch.from_numpy(rng.normal(size=(2, 4, 5, 5)))
            assert cwd_loss(t, s, 4.0).item() >= 0.0

    def test_pinned_two_point_value(self):
        # teacher spatial logits (0, ln 3) -> (1/4, 3/4); student (0, 0) -> (1/2, 1/2)
        teacher = torch.tensor([[[[0.0, math.log(3.0)]]]], dtype=torch.float64)
        student = torch.zeros(1, 1, 1, 2, dtype=torch.float64)
        expected = 0.25 * math.log(0.5) + 0.75 * math.log(1.5)
        assert abs(expected - 0.13081203594113696) <= 1e-15
        assert abs(cwd_loss(teacher, student, 1.0).item() - expected) <= 1e-10

    def test_temperature_scaling(self):
        teacher = torch.tensor([[[[0.0, math.log(3.0)]]]], dtype=torch.float64)
        student = torch.zeros(1, 1, 1, 2, dtype=torch.float64)
        t2 = cwd_loss(teacher, student, 2.0).item()
        # softmax at T=2 flattens the teacher; value computed independently
        p = torch.softmax(teacher.flatten() / 2.0, dim=0)
        q = torch.tensor([0.5, 0.5], dtype=torch.float64)
        expected = 4.0 * float((p * (p / q).log()).sum())
        assert abs(t2 - expected) <= 1e-12

    def test_gradients_only_reach_student(self):
        teacher = torch.rand(1, 4, 6, 6, requires_grad=True)
        student = torch.rand(1, 4, 6, 6, requires_grad=True)
        cwd_loss(teacher, student, 4.0).backward()
        assert teacher.grad is None or torch.all(teacher.grad == 0)
        assert torch.any(student.grad != 0)

    def test_shape_mismatch(self):
        with pytest.raises(BadShape):
            cwd_loss(torch.rand(1, 4, 6, 6), torch.rand(1, 4, 6, 5), 4.0)

    def test_bad_temperature(self):
        x = torch.rand(1, 2, 4, 4)
        with pytest.raises(ValueError):
            cwd_loss(x, x, 0.0)

    def test_gradient_matches_finite_differences(self, rng):
        teacher = torch.from_numpy(rng.normal(size=(1, 3, 4, 4)))
        student = torch.from_numpy(rng.normal(size=(1, 3, 4, 4))).requires_grad_(True)

        def loss_fn():
            return cwd_loss(teacher, student, 4.0)

        finite_difference_check(loss_fn, [student], n_checks=20)


class TestHaar:
    def test_pinned_2x2_block(self):
        x = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=torch.float64)
        ll, lh, hl, hh = haar_decompose(x)
        assert ll.item() == 5.0
        assert lh.item() == -2.0
        assert hl.item() == -1.0
        assert hh.item() == 0.0
        assert oracle_haar_2x2(1.0, 2.0, 3.0, 4.0) == (5.0, -2.0, -1.0, 0.0)

    def test_matches_oracle_blockwise(self, rng):
        x = torch.from_numpy(rng.normal(size=(1, 2, 6, 6)))
        ll, lh, hl, hh = haar_decompose(x)
        for c in range(2):
            for bi in range(3):
                for bj in range(3):
                    block = x[0, c, 2 * bi : 2 * bi + 2, 2 * bj : 2 * bj + 2]
                    want = oracle_haar_2x2(*(float(v) for v in block.flatten()))
                    got = (ll[0, c, bi, bj], lh[0, c, bi, bj], hl[0, c, bi, bj], hh[0, c, bi, bj])
                    for gv, wv in zip(got, want):
                        assert abs(float(gv) - wv) <= 1e-12

    def test_parseval_energy(self, rng):
        for _ in range(10):
            x = torch.from_numpy(rng.normal(size=(1, 3, 8, 8)))
            subbands = haar_decompose(x)
            energy = sum(float(s.square().sum()) for s in subbands)
            assert abs(energy - float(x.square().sum())) <= 1e-6

    def test_perfect_reconstruction(self, rng):
        for _ in range(10):
            x = torch.from_numpy(rng.normal(size=(1, 3, 8, 8)))
            rec = haar_reconstruct(*haar_decompose(x))
            assert float((rec - x).abs().max()) <= 1e-6

    def test_constant_input_kills_detail(self):
        x = torch.full((1, 4, 8, 8), 0.37)
        _, lh, hl, hh = haar_decompose(x)
        assert torch.all(lh == 0) and torch.all(hl == 0) and torch.all(hh == 0)
        assert torch.all(haar_detail(x) == 0)

    def test_odd_size_rejected(self):
        with pytest.raises(BadShape):
            haar_decompose(torch.rand(1, 2, 7, 7))


class TestHighFreqExtractor:
    def test_constant_input_projects_zeros(self):
        hf = HighFreqExtractor(in_channels=8, out_channels=4)
        with torch.no_grad():
            hf.proj.bias.zero_()
        a = torch.full((1, 4, 8, 8), 0.2)
        b = torch.full((1, 4, 8, 8), -0.7)
        assert torch.all(hf(a, b) == 0)

    def test_resamples_first_input(self):
        hf = HighFreqExtractor(in_channels=8, out_channels=4)
        out = hf(torch.rand(1, 4, 16, 16), torch.rand(1, 4, 8, 8))
        assert out.shape == (1, 4, 8, 8)


class TestPromptFuser:
    def test_output_shape(self):
        pfm = PromptFuser(32)
        out = pfm(torch.rand(2, 2, 32), torch.rand(2, 32, 16, 16))
        assert out.shape == (2, 32, 16, 16)

    def test_zero_inputs_zero_biases_give_zero(self):
        pfm = PromptFuser(8)
        with torch.no_grad():
            for name, p in pfm.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
        out = pfm(torch.zeros(1, 2, 8), torch.zeros(1, 8, 4, 4))
        assert torch.all(out == 0)

    def test_shape_checks(self):
        pfm = PromptFuser(8)
        with pytest.raises(BadShape):
            pfm(torch.rand(1, 2, 4), torch.rand(1, 8, 4, 4))
        with pytest.raises(BadShape):
            pfm(torch.rand(1, 2, 8), torch.rand(1, 4, 4, 4))

    def test_token_gradient_matches_finite_differences(self, rng):
        pfm = PromptFuser(4).double()
        tokens = torch.from_numpy(rng.normal(size=(1, 2, 4))).requires_grad_(True)
        hf = torch.from_numpy(rng.normal(size=(1, 4, 4, 4)))
        weight = torch.from_numpy(rng.normal(size=(1, 4, 4, 4)))

        def loss_fn():
            return (pfm(tokens, hf) * weight).mean()

        finite_difference_check(loss_fn, [tokens], n_checks=8)
        finite_difference_check(loss_fn, list(pfm.parameters()), n_checks=20)


class TestDepthPromptModule:
    def test_end_to_end_differentiable(self, rng):
        module = DepthPromptModule(student_channels=4, embed_dim=4).double()
        image_feat = torch.from_numpy(rng.normal(size=(1, 4, 4, 4)))
        tokens = torch.from_numpy(rng.normal(size=(1, 2, 4)))
        teacher_feat = torch.from_numpy(rng.normal(size=(1, 4, 4, 4)))
        weight = torch.from_numpy(rng.normal(size=(1, 4, 4, 4)))

        def loss_fn():
            corrected, dense = module(image_feat, tokens, target_size=4)
            return cwd_loss(teacher_feat, corrected, 4.0) + (dense * weight).mean()

        finite_difference_check(loss_fn, list(module.parameters()), n_checks=24)

    def test_returns_teacher_aligned_pair(self):
        module = DepthPromptModule(student_channels=32, embed_dim=32)
        corrected, dense = module(torch.rand(2, 32, 16, 16), torch.rand(2, 2, 32), target_size=16)
        assert corrected.shape == (2, 32, 16, 16)
        assert dense.shape == (2, 32, 16, 16)
