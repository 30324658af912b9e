"""Distillation loss stack: decoupled foreground/background feature loss,
attention-mimic loss, global relation loss, and their total.

All weighted feature terms are sums (not means) over elements, so the small
preset weights set the overall magnitude.  Teacher-side masks enter as
constants; gradients flow only through the student features, the adaptation
layer, and the GcBlock parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, ParameterError
from .gcblock import GcBlockParams, relation
from .masks import (
    BoxSet,
    LevelGeometry,
    MaskSet,
    attention_masks,
    build_masks,
    channel_attention_map,
    spatial_attention_map,
)
from .tensor import (
    Parameter,
    Tensor,
    absolute,
    add,
    conv1x1,
    mul,
    reshape,
    square,
    sub,
    tensor_mean,
    tensor_sum,
)


@dataclass(frozen=True)
class FgdHyperParams:
    """Loss-balancing weights plus the attention softmax temperature."""

    alpha: float  # foreground feature weight
    beta: float  # background feature weight
    gamma: float  # attention-mimic weight
    lambda_: float  # global relation weight
    temperature: float = 0.5

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.lambda_) < 0.0:
            raise ParameterError("loss weights must be >= 0")
        if self.temperature <= 0.0:
            raise ParameterError("temperature must be > 0")


PRESETS = {
    "two-stage": FgdHyperParams(alpha=5e-5, beta=2.5e-5, gamma=5e-5, lambda_=5e-7),
    "anchor-one-stage": FgdHyperParams(alpha=1e-3, beta=5e-4, gamma=1e-3, lambda_=5e-6),
    "anchor-free": FgdHyperParams(alpha=1.6e-3, beta=8e-4, gamma=8e-3, lambda_=8e-6),
}


def preset(name: str) -> FgdHyperParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ParameterError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None


@dataclass(frozen=True)
class LossReport:
    """Itemized loss values for one optimization step."""

    fea_fg: float
    fea_bg: float
    attention: float
    focal: float
    global_: float
    total_distill: float
    task: float
    total: float

    @staticmethod
    def assemble(fea_fg, fea_bg, attention, global_, task) -> "LossReport":
        focal = fea_fg + fea_bg + attention
        return LossReport(
            fea_fg=fea_fg,
            fea_bg=fea_bg,
            attention=attention,
            focal=focal,
            global_=global_,
            total_distill=focal + global_,
            task=task,
            total=task + focal + global_,
        )


ABLATION_MODES = (
    "fg_only",
    "bg_only",
    "joint_no_split",
    "split",
    "no_spatial_attn",
    "no_channel_attn",
    "full",
)


@dataclass(frozen=True)
class AblationOverrides:
    zero_alpha: bool = False
    zero_beta: bool = False
    tie_beta_to_alpha: bool = False
    flat_spatial_attn: bool = False
    flat_channel_attn: bool = False


def ablation_mode(mode: str) -> AblationOverrides:
    """Overrides implementing the distillation-area and attention ablations."""
    if mode not in ABLATION_MODES:
        raise ParameterError(f"unknown ablation mode {mode!r}; choose from {ABLATION_MODES}")
    return AblationOverrides(
        zero_alpha=(mode == "bg_only"),
        zero_beta=(mode == "fg_only"),
        tie_beta_to_alpha=(mode == "joint_no_split"),
        flat_spatial_attn=(mode == "no_spatial_attn"),
        flat_channel_attn=(mode == "no_channel_attn"),
    )


def effective_hyperparams(hp: FgdHyperParams, ov: AblationOverrides) -> FgdHyperParams:
    if ov.tie_beta_to_alpha:
        hp = replace(hp, beta=hp.alpha)
    if ov.zero_alpha:
        hp = replace(hp, alpha=0.0)
    if ov.zero_beta:
        hp = replace(hp, beta=0.0)
    return hp


def effective_masks(masks: MaskSet, ov: AblationOverrides) -> MaskSet:
    spatial = np.ones_like(masks.spatial_attn) if ov.flat_spatial_attn else masks.spatial_attn
    channel = np.ones_like(masks.channel_attn) if ov.flat_channel_attn else masks.channel_attn
    return MaskSet(
        binary=masks.binary, scale=masks.scale, spatial_attn=spatial, channel_attn=channel
    )


def _pair_chw(f_t, f_s, op: str) -> tuple[Tensor, Tensor]:
    f_t = f_t if isinstance(f_t, Tensor) else Tensor(f_t)
    f_s = f_s if isinstance(f_s, Tensor) else Tensor(f_s)
    if f_t.shape != f_s.shape:
        raise DimensionError(f"{op}: teacher {f_t.shape} vs student {f_s.shape}")
    return f_t, f_s


def baseline_loss(f_t, f_s_adapted) -> Tensor:
    """Plain feature imitation: mean squared difference over all elements."""
    f_t, f_s = _pair_chw(f_t, f_s_adapted, "baseline_loss")
    return tensor_mean(square(sub(f_t, f_s)))


def feature_loss(
    f_t, f_s_adapted, masks: MaskSet, alpha: float, beta: float
) -> tuple[Tensor, Tensor]:
    """Decoupled fg/bg feature loss, weighted by scale and attention masks.

    Returns (foreground, background) scalar terms; each is
    weight * sum(mask * scale * A_spatial * A_channel * diff^2).
    """
    f_t, f_s = _pair_chw(f_t, f_s_adapted, "feature_loss")
    c = f_t.shape[-3]
    h, w = f_t.shape[-2:]
    if masks.binary.shape != (h, w) or masks.channel_attn.shape != (c,):
        raise DimensionError(
            f"masks built for {masks.channel_attn.shape[0]}x{masks.binary.shape}, "
            f"features are {f_t.shape}"
        )
    common = masks.scale * masks.spatial_attn
    per_channel = masks.channel_attn.reshape(c, 1, 1)
    w_fg = (masks.binary * common) * per_channel
    w_bg = ((1.0 - masks.binary) * common) * per_channel
    if f_t.ndim == 4:
        w_fg = w_fg[np.newaxis]
        w_bg = w_bg[np.newaxis]
    sq = square(sub(f_t, f_s))
    fg = mul(tensor_sum(mul(sq, Tensor(w_fg))), alpha)
    bg = mul(tensor_sum(mul(sq, Tensor(w_bg))), beta)
    return fg, bg


def attention_loss(
    t_masks: MaskSet,
    s_spatial: Tensor,
    s_channel: Tensor,
    gamma: float,
    reduction: str = "mean",
) -> Tensor:
    """L1 distance between teacher and student attention masks, weighted by gamma.

    reduction="mean" keeps gamma's scale independent of grid size; "sum" is
    available for sensitivity checks.
    """
    if reduction not in ("mean", "sum"):
        raise ParameterError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    if t_masks.spatial_attn.shape != s_spatial.shape:
        raise DimensionError(
            f"spatial masks differ: {t_masks.spatial_attn.shape} vs {s_spatial.shape}"
        )
    if t_masks.channel_attn.shape != s_channel.shape:
        raise DimensionError(
            f"channel masks differ: {t_masks.channel_attn.shape} vs {s_channel.shape}"
        )
    red = tensor_mean if reduction == "mean" else tensor_sum
    l1_spatial = red(absolute(sub(Tensor(t_masks.spatial_attn), s_spatial)))
    l1_channel = red(absolute(sub(Tensor(t_masks.channel_attn), s_channel)))
    return mul(add(l1_spatial, l1_channel), gamma)


def global_loss(f_t, f_s, gc: GcBlockParams, lambda_: float) -> Tensor:
    """lambda * sum of squared differences between relation outputs."""
    f_t, f_s = _pair_chw(f_t, f_s, "global_loss")
    diff = sub(relation(f_t, gc), relation(f_s, gc))
    return mul(tensor_sum(square(diff)), lambda_)


@dataclass
class AdaptationLayer:
    """Trainable 1x1 conv reshaping student channels to the teacher's."""

    w: Parameter  # (C_teacher, C_student)
    b: Parameter  # (C_teacher,)

    def __call__(self, f_s) -> Tensor:
        return conv1x1(f_s, self.w, self.b)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def init_adaptation(
    c_student: int, c_teacher: int, rng: np.random.Generator, name: str = "adapt"
) -> AdaptationLayer:
    """Identity-initialized when square, small uniform otherwise; zero bias."""
    if c_student == c_teacher:
        w = np.eye(c_teacher)
    else:
        w = rng.uniform(-0.1, 0.1, size=(c_teacher, c_student))
    return AdaptationLayer(
        w=Parameter(w, f"{name}.w"), b=Parameter(np.zeros(c_teacher), f"{name}.b")
    )


@dataclass
class LevelBatch:
    """One feature level's inputs for a batch of images."""

    teacher: list[Tensor]  # per image, (C_t,H,W) or (1,C_t,H,W)
    student: list[Tensor]  # per image raw student features
    boxes: list[BoxSet]  # per image ground truth
    geom: LevelGeometry


def _student_attention(f_adapted: Tensor, temperature: float) -> tuple[Tensor, Tensor]:
    return attention_masks(
        spatial_attention_map(f_adapted),
        channel_attention_map(f_adapted),
        temperature,
    )


def fgd_total(
    levels: list[LevelBatch],
    hp: FgdHyperParams,
    gc_per_level: list[GcBlockParams],
    adaptation_per_level: list[AdaptationLayer],
    task_loss: Tensor,
    mode: str = "full",
    attention_reduction: str = "mean",
) -> tuple[Tensor, LossReport]:
    """Assemble the total training loss across levels and images.

    Per image and level: teacher masks are built from teacher features, the
    adaptation layer maps the student onto teacher channels, and the three
    distillation terms are accumulated.  Sums over images are divided by the
    batch size; levels are summed with uniform weight.  Returns the
    differentiable total plus an itemized report.
    """
    if not levels:
        raise ParameterError("fgd_total needs at least one level")
    n_images = len(levels[0].student)
    if n_images == 0:
        raise ParameterError("fgd_total needs at least one image")
    for lv in levels:
        if not (len(lv.teacher) == len(lv.student) == len(lv.boxes) == n_images):
            raise DimensionError("per-level image counts differ")
    if not (len(gc_per_level) == len(adaptation_per_level) == len(levels)):
        raise DimensionError("need one GcBlock and one adaptation layer per level")

    ov = ablation_mode(mode)
    eff_hp = effective_hyperparams(hp, ov)

    fg_acc = Tensor(0.0)
    bg_acc = Tensor(0.0)
    att_acc = Tensor(0.0)
    glob_acc = Tensor(0.0)
    for lv, gc, adapt in zip(levels, gc_per_level, adaptation_per_level):
        for f_t, f_s, boxes in zip(lv.teacher, lv.student, lv.boxes):
            masks = effective_masks(
                build_masks(f_t, boxes, lv.geom, hp.temperature), ov
            )
            f_sa = adapt(f_s)
            fg, bg = feature_loss(f_t, f_sa, masks, eff_hp.alpha, eff_hp.beta)
            s_sp, s_ch = _student_attention(f_sa, hp.temperature)
            att = attention_loss(
                masks, s_sp, s_ch, eff_hp.gamma, reduction=attention_reduction
            )
            c_t = f_t.shape[-3]
            c_s = f_s.shape[-3]
            f_for_global = f_s if c_s == c_t else f_sa
            glob = global_loss(f_t, f_for_global, gc, eff_hp.lambda_)
            fg_acc = add(fg_acc, fg)
            bg_acc = add(bg_acc, bg)
            att_acc = add(att_acc, att)
            glob_acc = add(glob_acc, glob)

    inv_b = 1.0 / n_images
    fg_acc = mul(fg_acc, inv_b)
    bg_acc = mul(bg_acc, inv_b)
    att_acc = mul(att_acc, inv_b)
    glob_acc = mul(glob_acc, inv_b)

    total = add(task_loss, add(add(add(fg_acc, bg_acc), att_acc), glob_acc))
    report = LossReport.assemble(
        fea_fg=fg_acc.item(),
        fea_bg=bg_acc.item(),
        attention=att_acc.item(),
        global_=glob_acc.item(),
        task=task_loss.item(),
    )
    return total, report
