"""Reference networks: frozen depth teacher, trainable image pyramid,
frozen box-prompt encoder and the trainable mask decoder.

These are deliberately small stand-ins for the usual foundation-model
backbones so the whole system trains and tests on a laptop without any
pretrained weights.  The frozen modules (teacher, prompt encoder) are
initialized from fixed seeds independent of the run seed, mimicking shipped
pretrained parameters; a loader hook accepts real weights when available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import Box
from .errors import BadBox, BadConfig, BadShape

TEACHER_SEED = 7310241
PROMPT_SEED = 9250148

TEACHER_STRIDE = 4
PYRAMID_STRIDES = (4, 8)


@dataclass
class FeatureMap:
    """[C, H', W'] activation tensor with its input-pixels-per-cell stride."""

    data: torch.Tensor
    stride: int

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return tuple(self.data.shape[-2:])


@dataclass
class FeaturePyramid:
    """Ordered feature maps with strictly increasing strides."""

    levels: list[FeatureMap]

    def __post_init__(self):
        if len(self.levels) < 2:
            raise BadShape("pyramid needs at least two levels")
        strides = [l.stride for l in self.levels]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise BadShape(f"strides must strictly increase, got {strides}")
        chans = [l.channels for l in self.levels]
        if any(b < a for a, b in zip(chans, chans[1:])):
            raise BadShape(f"channels must be non-decreasing with stride, got {chans}")

    def level_with_stride(self, stride: int) -> FeatureMap:
        for lvl in self.levels:
            if lvl.stride == stride:
                return lvl
        raise BadShape(f"no pyramid level with stride {stride}")


@dataclass
class PromptBundle:
    """Sparse box-corner tokens plus the optional dense depth-aware prompt."""

    sparse_tokens: torch.Tensor  # [2, E]
    dense_prompt: FeatureMap | None = None


@dataclass
class PredictionMap:
    """Single-channel pre-sigmoid logits at image resolution."""

    logits: torch.Tensor  # [1, H, W]


def init_parameters(module: nn.Module, seed: int) -> None:
    """He-style init for conv/linear weights, unit norms, zero biases.

    Uses a local generator so module init never depends on (or disturbs)
    the global RNG state.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                if isinstance(m, nn.ConvTranspose2d):
                    fan_in = m.weight.shape[0] * m.weight.shape[-2] * m.weight.shape[-1]
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, (nn.GroupNorm, nn.LayerNorm)):
                m.weight.fill_(1.0)
                m.bias.zero_()


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module


class Attention(nn.Module):
    """Single-head scaled dot-product attention over token sequences."""

    def __init__(self, dim: int):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, q_in, k_in, v_in):
        q, k, v = self.q(q_in), self.k(k_in), self.v(v_in)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]), dim=-1)
        return self.out(attn @ v)


class FourierPositionEncoding(nn.Module):
    """Random-Fourier positional code for normalized 2-D coordinates (frozen)."""

    def __init__(self, dim: int, seed: int = PROMPT_SEED):
        super().__init__()
        if dim % 2 != 0:
            raise BadConfig("position encoding dim must be even")
        gen = torch.Generator().manual_seed(seed)
        self.register_buffer("matrix", torch.randn(2, dim // 2, generator=gen))

    def encode_points(self, coords: torch.Tensor) -> torch.Tensor:
        """coords [..., 2] in [0, 1] -> [..., dim]."""
        proj = (2.0 * coords - 1.0) @ self.matrix.to(coords.dtype)
        proj = 2.0 * math.pi * proj
        return torch.cat([torch.sin(proj), torch.cos(proj)], dim=-1)

    def encode_grid(self, side: int, dtype=torch.float32) -> torch.Tensor:
        """Pixel-center codes for a side x side grid -> [dim, side, side]."""
        ticks = (torch.arange(side, dtype=dtype) + 0.5) / side
        ys, xs = torch.meshgrid(ticks, ticks, indexing="ij")
        coords = torch.stack([xs, ys], dim=-1)
        return self.encode_points(coords).permute(2, 0, 1)


def _check_square_input(x: torch.Tensor, channels: int, stride: int) -> None:
    if x.ndim != 3 or x.shape[0] != channels:
        raise BadShape(f"expected [{channels}, H, W], got {tuple(x.shape)}")
    if x.shape[1] != x.shape[2]:
        raise BadShape(f"input must be square, got {tuple(x.shape[1:])}")
    if x.shape[1] % stride != 0:
        raise BadShape(f"side {x.shape[1]} not divisible by stride {stride}")


class DepthTeacher(nn.Module):
    """Frozen conv/attention encoder producing the depth teacher embedding."""

    def __init__(self, embed_dim: int = 32, seed: int = TEACHER_SEED):
        super().__init__()
        self.embed_dim = embed_dim
        self.stride = TEACHER_STRIDE
        self.stem = nn.Sequential(
            nn.Conv2d(1, embed_dim // 2, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(embed_dim // 2, embed_dim, 3, stride=2, padding=1),
            nn.GELU(),
            nn.GroupNorm(1, embed_dim),
        )
        self.attn = Attention(embed_dim)
        self.post = nn.Conv2d(embed_dim, embed_dim, 3, padding=1)
        init_parameters(self, seed)
        freeze(self)

    def forward(self, depth: torch.Tensor) -> torch.Tensor:
        x = self.stem(depth)
        b, c, s, _ = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        tokens = tokens + self.attn(tokens, tokens, tokens)
        x = tokens.transpose(1, 2).reshape(b, c, s, s)
        return self.post(x)

    def encode(self, depth: torch.Tensor) -> FeatureMap:
        _check_square_input(depth, 1, self.stride)
        out = self.forward(depth[None])[0]
        return FeatureMap(data=out, stride=self.stride)

    def load_weights(self, path) -> None:
        """Hook for real pretrained weights: flat name->array npz file."""
        state = self.state_dict()
        with np.load(path) as archive:
            for name in state:
                if name not in archive.files:
                    raise BadConfig(f"checkpoint is missing teacher tensor {name!r}")
                arr = archive[name]
                if tuple(arr.shape) != tuple(state[name].shape):
                    raise BadConfig(f"shape mismatch for {name!r}")
                state[name] = torch.from_numpy(arr)
        self.load_state_dict(state)
        freeze(self)


class ImagePyramidEncoder(nn.Module):
    """Trainable two-level strided pyramid over RGB images.

    The designated embedding (teacher-aligned, stride 4) is a lateral merge
    of both pyramid levels, so every encoder parameter sits on the
    distillation path.
    """

    def __init__(self, channels: tuple[int, int] = (32, 64), seed: int = 0):
        super().__init__()
        c0, c1 = channels
        self.channels = channels
        self.strides = PYRAMID_STRIDES
        self.block1 = nn.Sequential(
            nn.Conv2d(3, c0, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(c0, c0, 3, stride=2, padding=1),
            nn.GELU(),
            nn.GroupNorm(1, c0),
            nn.Conv2d(c0, c0, 3, padding=1),
        )
        self.block2 = nn.Sequential(
            nn.GELU(),
            nn.Conv2d(c0, c1, 3, stride=2, padding=1),
            nn.GELU(),
            nn.GroupNorm(1, c1),
            nn.Conv2d(c1, c1, 3, padding=1),
        )
        self.neck = nn.Conv2d(c0 + c1, c0, 1)
        init_parameters(self, seed)

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (designated stride-4 embedding, level 0, level 1)."""
        f0 = self.block1(image)
        f1 = self.block2(f0)
        up = torch.nn.functional.interpolate(f1, size=f0.shape[-2:], mode="bilinear", align_corners=False)
        return self.neck(torch.cat([f0, up], dim=1)), f0, f1

    def encode(self, image: torch.Tensor) -> FeaturePyramid:
        _check_square_input(image, 3, self.strides[-1])
        _, f0, f1 = self.forward(image[None])
        return FeaturePyramid(
            levels=[
                FeatureMap(data=f0[0], stride=self.strides[0]),
                FeatureMap(data=f1[0], stride=self.strides[1]),
            ]
        )

    def embed(self, image: torch.Tensor) -> FeatureMap:
        """The designated teacher-aligned embedding for one image."""
        _check_square_input(image, 3, self.strides[-1])
        em, _, _ = self.forward(image[None])
        return FeatureMap(data=em[0], stride=self.strides[0])


class BoxPromptEncoder(nn.Module):
    """Frozen encoder turning a box into two corner tokens.

    Each token is the Fourier position code of the (normalized) corner plus
    a frozen corner-type embedding (top-left vs bottom-right), so translating
    a box changes only the positional part.
    """

    def __init__(self, embed_dim: int = 32, seed: int = PROMPT_SEED):
        super().__init__()
        self.embed_dim = embed_dim
        self.pe = FourierPositionEncoding(embed_dim, seed=seed)
        gen = torch.Generator().manual_seed(seed + 1)
        self.corner_type = nn.Parameter(torch.randn(2, embed_dim, generator=gen))
        freeze(self)

    def forward(self, boxes: torch.Tensor, image_size: int) -> torch.Tensor:
        """boxes [B, 4] (x_min, y_min, x_max, y_max) -> tokens [B, 2, E]."""
        corners = torch.stack([boxes[:, 0:2], boxes[:, 2:4]], dim=1).to(self.corner_type.dtype)
        corners = corners / image_size
        return self.pe.encode_points(corners) + self.corner_type

    def encode(self, box: Box, image_size: int) -> PromptBundle:
        if not (0 <= box.x_min < box.x_max <= image_size and 0 <= box.y_min < box.y_max <= image_size):
            raise BadBox(f"{box} invalid for image size {image_size}")
        tokens = self.forward(box.as_tensor()[None], image_size)[0]
        return PromptBundle(sparse_tokens=tokens, dense_prompt=None)

    def grid_encoding(self, side: int, dtype=torch.float32) -> torch.Tensor:
        return self.pe.encode_grid(side, dtype=dtype)


class MaskDecoder(nn.Module):
    """Trainable decoder: one two-way attention round, then upscaling and a
    hypernetwork head driven by a learned output token."""

    def __init__(self, embed_dim: int = 32, stride: int = TEACHER_STRIDE, seed: int = 1):
        super().__init__()
        if stride != 4:
            raise BadConfig("decoder upscaler is built for stride-4 embeddings")
        self.embed_dim = embed_dim
        self.stride = stride
        self.output_token = nn.Parameter(torch.zeros(1, embed_dim))
        self.token_self = Attention(embed_dim)
        self.token_to_grid = Attention(embed_dim)
        self.token_mlp = nn.Sequential(
            nn.Linear(embed_dim, 2 * embed_dim), nn.GELU(), nn.Linear(2 * embed_dim, embed_dim)
        )
        self.grid_to_token = Attention(embed_dim)
        head_dim = embed_dim // 4
        self.upscale = nn.Sequential(
            nn.ConvTranspose2d(embed_dim, embed_dim // 2, 2, stride=2),
            nn.GELU(),
            nn.ConvTranspose2d(embed_dim // 2, head_dim, 2, stride=2),
            nn.GELU(),
        )
        self.hyper = nn.Sequential(
            nn.Linear(embed_dim, embed_dim), nn.GELU(), nn.Linear(embed_dim, head_dim)
        )
        self.head_bias = nn.Parameter(torch.zeros(1))
        init_parameters(self, seed)
        with torch.no_grad():
            self.output_token.normal_(0.0, 0.02, generator=torch.Generator().manual_seed(seed + 1))

    def forward(
        self,
        img_emb: torch.Tensor,
        sparse_tokens: torch.Tensor,
        dense_prompt: torch.Tensor | None,
        grid_pe: torch.Tensor,
    ) -> torch.Tensor:
        """img_emb [B,E,S,S], sparse [B,2,E], dense [B,E,S,S] or None -> [B,1,H,W]."""
        if dense_prompt is not None:
            if dense_prompt.shape != img_emb.shape:
                raise BadShape(
                    f"dense prompt {tuple(dense_prompt.shape)} vs embedding {tuple(img_emb.shape)}"
                )
            img_emb = img_emb + dense_prompt

        b, c, s, _ = img_emb.shape
        grid = img_emb.flatten(2).transpose(1, 2)  # [B, S*S, E]
        pe = grid_pe.flatten(1).transpose(0, 1)[None].to(grid.dtype)  # [1, S*S, E]

        tokens = torch.cat([self.output_token[None].expand(b, -1, -1), sparse_tokens], dim=1)
        tokens = tokens + self.token_self(tokens, tokens, tokens)
        tokens = tokens + self.token_to_grid(tokens, grid + pe, grid)
        tokens = tokens + self.token_mlp(tokens)
        grid = grid + self.grid_to_token(grid + pe, tokens, tokens)

        feats = self.upscale(grid.transpose(1, 2).reshape(b, c, s, s))
        weights = self.hyper(tokens[:, 0])  # [B, head_dim]
        logits = torch.einsum("bchw,bc->bhw", feats, weights) + self.head_bias
        return logits[:, None]

    def decode(self, img_emb: FeatureMap, prompts: PromptBundle, grid_pe: torch.Tensor) -> PredictionMap:
        dense = None
        if prompts.dense_prompt is not None:
            dense = prompts.dense_prompt.data[None]
        out = self.forward(img_emb.data[None], prompts.sparse_tokens[None], dense, grid_pe)
        return PredictionMap(logits=out[0])
