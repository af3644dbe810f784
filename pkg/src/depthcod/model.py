"""Full segmentation model: promptable decoding with a depth-aware dense
prompt and missed-region refinement.

Forward path per batch: the trainable pyramid encodes the RGB image (its
stride-4 level doubles as the decoder's image embedding), the frozen teacher
encodes the depth map, the prompt path corrects the image features against
the teacher and fuses their wavelet detail with the box tokens into a dense
prompt, the decoder emits coarse logits, and the refiner re-mines the
inverted coarse mask from the depth embedding.  The fused output is a convex
combination of coarse and refined logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .depth_prompt import DepthPromptModule
from .encoders import (
    TEACHER_STRIDE,
    BoxPromptEncoder,
    DepthTeacher,
    ImagePyramidEncoder,
    MaskDecoder,
)
from .errors import BadConfig
from .losses import fuse_predictions
from .refine import RegionRefiner

REFINER_INPUT_MODES = ("DD", "ID", "II")  # depth/corrected sources per stream


@dataclass
class ModelOutput:
    coarse: torch.Tensor  # [B, 1, H, W] logits from the decoder
    refined: torch.Tensor | None  # [B, 1, H, W] refinement logits
    fused: torch.Tensor  # [B, 1, H, W] final logits
    teacher_feat: torch.Tensor | None  # [B, E, S, S]
    corrected_feat: torch.Tensor | None  # [B, E, S, S] distillation student


class DepthCodModel(nn.Module):
    def __init__(
        self,
        image_size: int = 64,
        embed_dim: int = 32,
        student_channels: tuple[int, int] = (32, 64),
        use_depth_prompt: bool = True,
        use_refiner: bool = True,
        refiner_inputs: str = "DD",
        k: int = 8,
        gf_radius: int = 2,
        gf_eps: float = 1e-2,
        n_agents: int = 16,
        alpha: float = 0.9,
        seed: int = 0,
    ):
        super().__init__()
        if refiner_inputs not in REFINER_INPUT_MODES:
            raise BadConfig(f"refiner_inputs must be one of {REFINER_INPUT_MODES}")
        if refiner_inputs != "DD" and not use_depth_prompt:
            raise BadConfig("image-embedding refiner inputs need the depth-prompt path")
        if student_channels[0] != embed_dim:
            raise BadConfig("stride-4 student channels must equal the decoder dim")
        self.image_size = image_size
        self.embed_dim = embed_dim
        self.use_depth_prompt = use_depth_prompt
        self.use_refiner = use_refiner
        self.refiner_inputs = refiner_inputs
        self.alpha = alpha

        self.teacher = DepthTeacher(embed_dim)
        self.prompt_encoder = BoxPromptEncoder(embed_dim)
        self.student = ImagePyramidEncoder(student_channels, seed=seed)
        self.decoder = MaskDecoder(embed_dim, stride=TEACHER_STRIDE, seed=seed + 11)
        if use_depth_prompt:
            self.depth_prompt = DepthPromptModule(student_channels[0], embed_dim, seed=seed + 21)
        if use_refiner:
            self.refiner = RegionRefiner(
                embed_dim, k=k, gf_radius=gf_radius, gf_eps=gf_eps,
                n_agents=n_agents, stride=TEACHER_STRIDE, seed=seed + 31,
            )

    def _needs_teacher(self) -> bool:
        return self.use_depth_prompt or (self.use_refiner and self.refiner_inputs != "II")

    def forward(
        self,
        images: torch.Tensor,
        depths: torch.Tensor,
        boxes: torch.Tensor,
        alpha: float | None = None,
        skip_refine: bool = False,
    ) -> ModelOutput:
        alpha = self.alpha if alpha is None else alpha

        image_feat, _, _ = self.student(images)
        grid = image_feat.shape[-1]
        sparse = self.prompt_encoder(boxes, self.image_size).to(images.dtype)

        teacher_feat = None
        if self._needs_teacher():
            with torch.no_grad():
                teacher_feat = self.teacher(depths)

        corrected = None
        dense = None
        if self.use_depth_prompt:
            corrected, dense = self.depth_prompt(image_feat, sparse, target_size=grid)

        grid_pe = self.prompt_encoder.grid_encoding(grid, dtype=images.dtype).to(images.device)
        coarse = self.decoder(image_feat, sparse, dense, grid_pe)

        refined = None
        if self.use_refiner and not skip_refine:
            src1, src2 = self._refiner_sources(teacher_feat, corrected)
            refined = self.refiner(src1, src2, coarse)
            fused = fuse_predictions(refined, coarse, alpha)
        else:
            fused = coarse

        return ModelOutput(
            coarse=coarse,
            refined=refined,
            fused=fused,
            teacher_feat=teacher_feat,
            corrected_feat=corrected,
        )

    def _refiner_sources(self, teacher_feat, corrected):
        if self.refiner_inputs == "DD":
            return teacher_feat, teacher_feat
        if self.refiner_inputs == "ID":
            return corrected, teacher_feat
        return corrected, corrected

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]
