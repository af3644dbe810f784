"""Depth-aware prompt construction.

The trainable image features are corrected with depth knowledge by
distilling them against the frozen depth-teacher embedding (bias-correction
stack + channel-wise distillation loss), then the high-frequency wavelet
content of image and corrected features is fused with the box-prompt tokens
into a dense prompt for the mask decoder.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .encoders import init_parameters
from .errors import BadShape

CWD_TEMPERATURE = 4.0
DILATION = 2  # all dilated convolutions in this module


def _dilated_conv(c_in: int, c_out: int) -> nn.Conv2d:
    return nn.Conv2d(c_in, c_out, 3, padding=DILATION, dilation=DILATION)


class BiasCorrection(nn.Module):
    """Projection -> dilated channel up/down -> channel-reducing projection.

    A residual skip wraps the channel-projection pair; the input is
    resampled bilinearly to the teacher grid first so the output is
    distillable against the teacher embedding.
    """

    def __init__(self, in_channels: int, out_channels: int, seed: int = 2):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.proj = nn.Conv2d(in_channels, in_channels, 3, padding=1)
        self.cp_up = _dilated_conv(in_channels, 2 * in_channels)
        self.cp_down = _dilated_conv(2 * in_channels, in_channels)
        self.act = nn.GELU()
        self.down = nn.Conv2d(in_channels, out_channels, 1)
        init_parameters(self, seed)

    def forward(self, x: torch.Tensor, target_size: int | None = None) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise BadShape(f"expected [B, {self.in_channels}, H, W], got {tuple(x.shape)}")
        if target_size is not None and x.shape[-2:] != (target_size, target_size):
            x = F.interpolate(x, size=(target_size, target_size), mode="bilinear", align_corners=False)
        y = self.proj(x)
        z = self.cp_down(self.act(self.cp_up(y)))
        return self.down(z + y)


def cwd_loss(teacher: torch.Tensor, student: torch.Tensor, temperature: float = CWD_TEMPERATURE) -> torch.Tensor:
    """Channel-wise distillation: KL between per-channel spatial softmaxes.

    For each channel the teacher and student maps are flattened over space,
    tempered, and softmax-normalized; the loss is T^2 times the mean over
    channels of KL(teacher || student).  The teacher is detached, so
    gradients reach the student only.
    """
    if teacher.shape != student.shape:
        raise BadShape(f"teacher {tuple(teacher.shape)} vs student {tuple(student.shape)}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    t = teacher.detach().flatten(start_dim=-2) / temperature
    s = student.flatten(start_dim=-2) / temperature
    log_p = F.log_softmax(t, dim=-1)
    log_q = F.log_softmax(s, dim=-1)
    kl = (log_p.exp() * (log_p - log_q)).sum(dim=-1)
    return (temperature * temperature) * kl.mean()


_HAAR_KERNELS = (
    torch.tensor([[0.5, 0.5], [0.5, 0.5]]),  # LL
    torch.tensor([[0.5, 0.5], [-0.5, -0.5]]),  # LH (vertical detail)
    torch.tensor([[0.5, -0.5], [0.5, -0.5]]),  # HL (horizontal detail)
    torch.tensor([[0.5, -0.5], [-0.5, 0.5]]),  # HH (diagonal detail)
)


def haar_decompose(x: torch.Tensor) -> tuple[torch.Tensor, ...]:
    """Single-level orthonormal Haar analysis per channel.

    x [B, C, S, S] with even S -> four subbands [B, C, S/2, S/2] in the
    order (LL, LH, HL, HH).
    """
    if x.shape[-1] != x.shape[-2] or x.shape[-1] % 2 != 0:
        raise BadShape(f"need an even square map, got {tuple(x.shape[-2:])}")
    c = x.shape[1]
    kernels = torch.stack([k.to(x.dtype) for k in _HAAR_KERNELS])[:, None]  # [4,1,2,2]
    weight = kernels.repeat(c, 1, 1, 1).to(x.device)
    out = F.conv2d(x, weight, stride=2, groups=c)
    out = out.reshape(x.shape[0], c, 4, x.shape[-2] // 2, x.shape[-1] // 2)
    return out[:, :, 0], out[:, :, 1], out[:, :, 2], out[:, :, 3]


def haar_reconstruct(ll, lh, hl, hh) -> torch.Tensor:
    """Inverse of :func:`haar_decompose` (exact for orthonormal kernels)."""
    c = ll.shape[1]
    stacked = torch.stack([ll, lh, hl, hh], dim=2).reshape(ll.shape[0], 4 * c, *ll.shape[-2:])
    kernels = torch.stack([k.to(ll.dtype) for k in _HAAR_KERNELS])[:, None]
    weight = kernels.repeat(c, 1, 1, 1).to(ll.device)
    return F.conv_transpose2d(stacked, weight, stride=2, groups=c)


def haar_detail(x: torch.Tensor) -> torch.Tensor:
    """Concatenated LH/HL/HH subbands, upsampled back to the input grid."""
    _, lh, hl, hh = haar_decompose(x)
    detail = torch.cat([lh, hl, hh], dim=1)
    return F.interpolate(detail, size=x.shape[-2:], mode="bilinear", align_corners=False)


class HighFreqExtractor(nn.Module):
    """Edge-detail features from the concatenated image/corrected embeddings.

    Haar detail subbands of the channel concatenation, projected 1x1 to the
    prompt dimension.
    """

    def __init__(self, in_channels: int, out_channels: int, seed: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.proj = nn.Conv2d(3 * in_channels, out_channels, 1)
        init_parameters(self, seed)

    def forward(self, image_feat: torch.Tensor, corrected_feat: torch.Tensor) -> torch.Tensor:
        if image_feat.shape[-2:] != corrected_feat.shape[-2:]:
            image_feat = F.interpolate(
                image_feat, size=corrected_feat.shape[-2:], mode="bilinear", align_corners=False
            )
        x = torch.cat([image_feat, corrected_feat], dim=1)
        if x.shape[1] != self.in_channels:
            raise BadShape(f"expected {self.in_channels} concatenated channels, got {x.shape[1]}")
        return self.proj(haar_detail(x))


class PromptFuser(nn.Module):
    """Fuse box-corner tokens with high-frequency features into a dense prompt.

    The two corner tokens are averaged, broadcast over the feature grid and
    convolved; the result is concatenated with the high-frequency map and a
    dilated convolution projects down to the prompt dimension.
    """

    def __init__(self, embed_dim: int, seed: int = 4):
        super().__init__()
        self.embed_dim = embed_dim
        self.token_convs = nn.Sequential(
            nn.Conv2d(embed_dim, embed_dim, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(embed_dim, embed_dim, 3, padding=1),
        )
        self.fuse = _dilated_conv(2 * embed_dim, embed_dim)
        init_parameters(self, seed)

    def forward(self, sparse_tokens: torch.Tensor, highfreq: torch.Tensor) -> torch.Tensor:
        """sparse_tokens [B, 2, E], highfreq [B, E, S, S] -> [B, E, S, S]."""
        if sparse_tokens.ndim != 3 or sparse_tokens.shape[-1] != self.embed_dim:
            raise BadShape(f"tokens must be [B, 2, {self.embed_dim}], got {tuple(sparse_tokens.shape)}")
        if highfreq.shape[1] != self.embed_dim:
            raise BadShape(f"highfreq must have {self.embed_dim} channels, got {highfreq.shape[1]}")
        s = highfreq.shape[-1]
        mean_token = sparse_tokens.mean(dim=1)[:, :, None, None].expand(-1, -1, s, s)
        fused = torch.cat([self.token_convs(mean_token), highfreq], dim=1)
        return self.fuse(fused)


class DepthPromptModule(nn.Module):
    """Full prompt-deepening path: bias correction, distillation target, and
    the dense depth-aware prompt."""

    def __init__(self, student_channels: int, embed_dim: int, seed: int = 5):
        super().__init__()
        self.bias_correction = BiasCorrection(student_channels, embed_dim, seed=seed)
        self.highfreq = HighFreqExtractor(student_channels + embed_dim, embed_dim, seed=seed + 1)
        self.fuser = PromptFuser(embed_dim, seed=seed + 2)

    def forward(self, image_feat: torch.Tensor, sparse_tokens: torch.Tensor, target_size: int):
        """Returns (corrected_feat, dense_prompt)."""
        corrected = self.bias_correction(image_feat, target_size=target_size)
        hf = self.highfreq(image_feat, corrected)
        dense = self.fuser(sparse_tokens, hf)
        return corrected, dense
