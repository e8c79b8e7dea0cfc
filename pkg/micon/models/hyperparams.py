from typing import Literal

from pydantic import BaseModel, Field, model_validator

Method = Literal["micon", "paclr_only", "simclr", "clip"]
METHODS: tuple[str, ...] = ("micon", "paclr_only", "simclr", "clip")

# Share of each training batch given to oversampled negative controls.
CONTROL_PRESETS: dict[str, float] = {"pos_ctl": 0.5, "target2": 0.125}


class HyperParams(BaseModel):
    """Architecture and optimisation settings for one training run."""

    tau: float = Field(default=0.1, gt=0.0, description="Softmax temperature")
    batch_size: int = Field(default=64, ge=3, description="Images per batch, N = 2T + C")
    pairs: int | None = Field(default=None, ge=1, description="Perturbed pairs T; derived from control_fraction when unset")
    controls: int | None = Field(default=None, ge=1, description="Controls C; derived from control_fraction when unset")
    control_fraction: float = Field(default=0.5, gt=0.0, lt=1.0, description="Target share of controls in a batch")
    preset: Literal["pos_ctl", "target2"] | None = Field(
        default=None, description="Overrides control_fraction with 1/2 (pos_ctl) or 1/8 (target2)"
    )
    epochs: int = Field(default=30, ge=1)

    image_hidden: list[int] = Field(default_factory=lambda: [512], description="Hidden widths of the image encoder")
    image_embed: int = Field(default=1000, ge=1, description="Image encoder output width")
    proj_hidden: int = Field(default=512, ge=1, description="Projection head hidden width")
    proj_dim: int = Field(default=256, ge=1, description="Final projected embedding size")
    fp_bits: int = Field(default=2048, ge=8, description="ECFP fingerprint size")
    fp_radius: int = Field(default=2, ge=0)
    compound_hidden: list[int] = Field(
        default_factory=lambda: [2048, 2048, 2048, 2048], description="Compound encoder hidden widths"
    )
    fusion_hidden: int = Field(default=512, ge=1, description="Fusion module hidden width")

    lr: float = Field(default=1e-3, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=1e-2, ge=0.0)
    warmup_steps: int = Field(default=2000, ge=0)
    plateau_factor: float = Field(default=0.5, gt=0.0, lt=1.0)
    patience: int = Field(default=3, ge=0)
    clip_norm: float = Field(default=1.0, gt=0.0)
    checkpoint_every: int = Field(default=2000, ge=1)
    val_batches: int = Field(default=4, ge=1, description="Fixed validation batches scored at each checkpoint")

    augment_jitter: float = Field(default=0.05, ge=0.0, description="SimCLR jitter sd, as a share of feature sd")
    augment_dropout: float = Field(default=0.1, ge=0.0, lt=1.0, description="SimCLR coordinate dropout rate")
    max_resample: int = Field(default=32, ge=1, description="Retries when a sampled perturbation has one image")
    prefetch: bool = Field(default=True, description="Assemble the next batch on a worker thread")

    @model_validator(mode="after")
    def _check_layout(self) -> "HyperParams":
        self.layout()
        if not self.image_hidden or any(w < 1 for w in self.image_hidden):
            raise ValueError("image_hidden needs at least one positive width")
        if not self.compound_hidden or any(w < 1 for w in self.compound_hidden):
            raise ValueError("compound_hidden needs at least one positive width")
        return self

    def effective_control_fraction(self) -> float:
        return CONTROL_PRESETS[self.preset] if self.preset else self.control_fraction

    def layout(self) -> tuple[int, int]:
        """Return ``(T, C)`` with ``batch_size == 2T + C``."""
        n = self.batch_size
        if self.pairs is not None and self.controls is not None:
            t, c = self.pairs, self.controls
        elif self.pairs is not None:
            t, c = self.pairs, n - 2 * self.pairs
        elif self.controls is not None:
            t, c = (n - self.controls) // 2, self.controls
        else:
            c = max(1, int(self.effective_control_fraction() * n + 0.5))
            if (n - c) % 2:
                c = c - 1 if c > 1 else c + 1
            t = (n - c) // 2
        if t < 1 or c < 1 or 2 * t + c != n:
            raise ValueError(f"batch_size {n} cannot be split as 2*T + C with T={t}, C={c}")
        return t, c
