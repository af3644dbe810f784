"""Missed-region refinement.

The coarse prediction is inverted (so attention falls on what was missed)
and nested into channel segments of the depth embedding; two streams mine
the nested feature, one through an edge-preserving self-guided filter, one
through agent attention, and a joint-mining head emits the refinement
logits at image resolution.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .encoders import init_parameters
from .errors import BadConfig, BadRadius, BadSegments, BadShape

VALID_SEGMENTS = (2, 4, 8, 16)


def reverse_and_nest(features: torch.Tensor, coarse_logits: torch.Tensor, k: int) -> torch.Tensor:
    """Interleave the inverted coarse mask into k channel segments.

    ``features`` [B, C, S, S] is split into ``k`` segments along channels;
    after each segment one copy of ``1 - sigmoid(coarse)`` (downsampled to
    S x S) is inserted, giving C + k channels.
    """
    if k not in VALID_SEGMENTS:
        raise BadSegments(f"segment count must be one of {VALID_SEGMENTS}, got {k}")
    c = features.shape[1]
    if c % k != 0:
        raise BadSegments(f"{c} channels not divisible into {k} segments")
    mask = torch.sigmoid(coarse_logits)
    if mask.shape[-2:] != features.shape[-2:]:
        mask = F.interpolate(mask, size=features.shape[-2:], mode="bilinear", align_corners=False)
    inverted = 1.0 - mask
    seg = c // k
    pieces = []
    for i in range(k):
        pieces.append(features[:, i * seg : (i + 1) * seg])
        pieces.append(inverted)
    return torch.cat(pieces, dim=1)


def _box_sum(x: torch.Tensor, r: int) -> torch.Tensor:
    """Sum over (2r+1)^2 windows clipped at borders, via integral images."""
    cs = x.cumsum(dim=2)
    x = torch.cat(
        [cs[:, :, r : 2 * r + 1], cs[:, :, 2 * r + 1 :] - cs[:, :, : -2 * r - 1],
         cs[:, :, -1:] - cs[:, :, -2 * r - 1 : -r - 1]],
        dim=2,
    )
    cs = x.cumsum(dim=3)
    return torch.cat(
        [cs[:, :, :, r : 2 * r + 1], cs[:, :, :, 2 * r + 1 :] - cs[:, :, :, : -2 * r - 1],
         cs[:, :, :, -1:] - cs[:, :, :, -2 * r - 1 : -r - 1]],
        dim=3,
    )


def guided_filter(x: torch.Tensor, radius: int, eps: float) -> torch.Tensor:
    """Self-guided edge-preserving filter (guide = input, per channel).

    Windows are (2r+1)^2 boxes clipped at the borders.  With var/(var+eps)
    as the local slope, constants pass through unchanged and eps -> 0
    approaches the identity.
    """
    if radius < 1:
        raise BadRadius("radius must be >= 1")
    if 2 * radius + 1 > min(x.shape[-2:]):
        raise BadRadius(f"window {2 * radius + 1} exceeds map side {min(x.shape[-2:])}")
    n = _box_sum(torch.ones_like(x[:, :1]), radius)
    mean = _box_sum(x, radius) / n
    var = _box_sum(x * x, radius) / n - mean * mean
    a = var / (var + eps)
    b = mean * (1.0 - a)
    return (_box_sum(a, radius) / n) * x + _box_sum(b, radius) / n


def _agent_grid(n_agents: int) -> tuple[int, int]:
    root = int(math.isqrt(n_agents))
    for h in range(root, 0, -1):
        if n_agents % h == 0:
            return h, n_agents // h
    raise BadConfig(f"cannot factor {n_agents} agent tokens into a pooling grid")


class AgentAttention(nn.Module):
    """Attention through a small set of pooled agent tokens.

    Queries are adaptively pooled to ``n_agents`` agent tokens; the output is
    ``softmax(Q A^T / sqrt(C)) softmax(A K^T / sqrt(C)) V`` plus a residual,
    giving long-range mixing at O(N * n_agents) cost.
    """

    def __init__(self, channels: int, n_agents: int, seed: int = 6):
        super().__init__()
        if n_agents < 1:
            raise BadConfig("need at least one agent token")
        self.channels = channels
        self.n_agents = n_agents
        self.q = nn.Linear(channels, channels, bias=False)
        self.k = nn.Linear(channels, channels, bias=False)
        self.v = nn.Linear(channels, channels, bias=False)
        init_parameters(self, seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        if c != self.channels:
            raise BadShape(f"expected {self.channels} channels, got {c}")
        if self.n_agents > h * w:
            raise BadConfig(f"{self.n_agents} agents exceed {h * w} positions")
        tokens = x.flatten(2).transpose(1, 2)  # [B, N, C]
        q = self.q(tokens)
        k = self.k(tokens)
        v = self.v(tokens)
        ah, aw = _agent_grid(self.n_agents)
        agents = F.adaptive_avg_pool2d(q.transpose(1, 2).reshape(b, c, h, w), (ah, aw))
        agents = agents.flatten(2).transpose(1, 2)  # [B, n_agents, C]
        scale = 1.0 / math.sqrt(c)
        q_to_agent = torch.softmax(q @ agents.transpose(-2, -1) * scale, dim=-1)
        agent_to_k = torch.softmax(agents @ k.transpose(-2, -1) * scale, dim=-1)
        out = q_to_agent @ (agent_to_k @ v)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class RegionRefiner(nn.Module):
    """Dual-stream mining of the nested depth features into refinement logits.

    Stream 1: self-guided filter then bias-correction convs (edge focus).
    Stream 2: bias-correction convs then agent attention (region focus).
    Joint mining: conv + agent attention + 1-channel head, upsampled to the
    image resolution.
    """

    def __init__(
        self,
        feat_channels: int,
        k: int = 8,
        gf_radius: int = 2,
        gf_eps: float = 1e-2,
        n_agents: int = 16,
        stride: int = 4,
        seed: int = 7,
    ):
        super().__init__()
        if gf_eps <= 0:
            raise BadConfig("guided-filter eps must be positive")
        self.k = k
        self.gf_radius = gf_radius
        self.gf_eps = gf_eps
        self.stride = stride
        nested = feat_channels + k
        self.bc1 = nn.Sequential(nn.Conv2d(nested, feat_channels, 3, padding=1), nn.GELU(),
                                 nn.Conv2d(feat_channels, feat_channels, 3, padding=1))
        self.bc2 = nn.Sequential(nn.Conv2d(nested, feat_channels, 3, padding=1), nn.GELU(),
                                 nn.Conv2d(feat_channels, feat_channels, 3, padding=1))
        self.stream2_attn = AgentAttention(feat_channels, n_agents, seed=seed + 1)
        self.jm_conv = nn.Sequential(nn.Conv2d(feat_channels, feat_channels, 3, padding=1), nn.GELU())
        self.jm_attn = AgentAttention(feat_channels, n_agents, seed=seed + 2)
        self.head = nn.Conv2d(feat_channels, 1, 1)
        init_parameters(self.bc1, seed + 3)
        init_parameters(self.bc2, seed + 4)
        init_parameters(self.jm_conv, seed + 5)
        init_parameters(self.head, seed + 6)

    def forward(
        self,
        stream1_feat: torch.Tensor,
        stream2_feat: torch.Tensor,
        coarse_logits: torch.Tensor,
    ) -> torch.Tensor:
        """Nested-feature sources [B,C,S,S] + coarse logits -> [B,1,H,W]."""
        nested1 = reverse_and_nest(stream1_feat, coarse_logits, self.k)
        if stream2_feat is stream1_feat:
            nested2 = nested1
        else:
            nested2 = reverse_and_nest(stream2_feat, coarse_logits, self.k)
        s1 = self.bc1(guided_filter(nested1, self.gf_radius, self.gf_eps))
        s2 = self.stream2_attn(self.bc2(nested2))
        joint = self.jm_attn(self.jm_conv(s1 + s2))
        logits = self.head(joint)
        size = logits.shape[-1] * self.stride
        return F.interpolate(logits, size=(size, size), mode="bilinear", align_corners=False)
