"""Synthetic scenes, tiny teacher/student feature extractors, and the
distillation training loop.

Scenes are noise images with a few painted rectangles standing in for
annotated objects.  The "detector" is a stack of 1x1 convolutions with
stride-2 mean pooling between stages, emitting features at strides 2 and 4.
The stand-in task loss regresses level-0 features onto a fixed random
projection of the input image.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteLossError
from .gcblock import GcBlockParams
from .losses import AdaptationLayer, FgdHyperParams, LevelBatch, LossReport, fgd_total
from .masks import BoxSet, LevelGeometry
from .tensor import Parameter, Tensor, avg_pool2, conv1x1, mul, relu, square, sub, tensor_mean

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Scenes


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 16  # square images, divisible by the deepest stride
    max_rects: int = 3  # 0..4 rectangles per scene
    min_rects: int = 1  # clamped to max_rects; 0 allows empty scenes
    noise_amp: float = 0.05
    contrast: float = 1.0

    def __post_init__(self):
        if self.image_size < 8 or self.image_size % 4 != 0:
            raise ConfigError(
                f"image_size must be >= 8 and divisible by 4, got {self.image_size}"
            )
        if not 0 <= self.max_rects <= 4:
            raise ConfigError(f"max_rects must be in [0, 4], got {self.max_rects}")
        if self.min_rects < 0:
            raise ConfigError(f"min_rects must be >= 0, got {self.min_rects}")
        if self.noise_amp < 0 or self.contrast <= 0:
            raise ConfigError("noise_amp must be >= 0 and contrast > 0")


@dataclass
class SyntheticScene:
    image: np.ndarray  # (3, H, W)
    boxes: BoxSet
    seed: int


def generate_scene(config: SceneConfig, seed: int) -> SyntheticScene:
    """Deterministic noise image with 0..max_rects painted rectangles.

    Each rectangle adds contrast * (1.5 + 0.25k) to all channels of its
    region, so painted areas always exceed the background mean by more than
    the configured contrast; boxes record the painted extents exactly.
    """
    rng = np.random.default_rng(seed)
    size = config.image_size
    image = rng.uniform(-config.noise_amp, config.noise_amp, size=(3, size, size))
    lo = min(config.min_rects, config.max_rects)
    n_rects = int(rng.integers(lo, config.max_rects + 1))
    boxes = []
    for k in range(n_rects):
        w = int(rng.integers(2, max(3, size // 2) + 1))
        h = int(rng.integers(2, max(3, size // 2) + 1))
        x1 = int(rng.integers(0, size - w + 1))
        y1 = int(rng.integers(0, size - h + 1))
        x2, y2 = x1 + w, y1 + h
        if x2 > size or y2 > size:
            raise ConfigError(f"generated rectangle exceeds {size}x{size} image")
        image[:, y1:y2, x1:x2] += config.contrast * (1.5 + 0.25 * k)
        boxes.append((float(x1), float(y1), float(x2), float(y2)))
    return SyntheticScene(
        image=image, boxes=BoxSet(boxes, (size, size)), seed=seed
    )


def scene_seed(base_seed: int, index: int) -> int:
    # distinct, order-stable per-scene seeds derived from the run seed
    return base_seed * 100003 + 7919 * index + 1


# ---------------------------------------------------------------------------
# Toy feature extractor


@dataclass
class ToyNet:
    """Stack of 1x1 conv + relu stages with stride-2 mean pooling in front
    of each stage; emits one feature map per stage (strides 2, 4, ...)."""

    stages: list[tuple[Parameter, Parameter]]
    use_relu: bool = True

    @property
    def n_levels(self) -> int:
        return len(self.stages)

    @property
    def channels(self) -> int:
        return self.stages[0][0].shape[0]

    def parameters(self) -> list[Parameter]:
        return [p for w, b in self.stages for p in (w, b)]

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False

    def forward(self, image) -> list[Tensor]:
        x = image if isinstance(image, Tensor) else Tensor(image)
        levels = []
        for w, b in self.stages:
            x = conv1x1(avg_pool2(x), w, b)
            if self.use_relu:
                x = relu(x)
            levels.append(x)
        return levels


def init_toynet(
    width: int,
    rng: np.random.Generator,
    in_channels: int = 3,
    n_levels: int = 2,
    name: str = "net",
    use_relu: bool = True,
) -> ToyNet:
    stages = []
    prev = in_channels
    for k in range(n_levels):
        scale = 1.0 / math.sqrt(prev)
        w = Parameter(rng.uniform(-scale, scale, size=(width, prev)), f"{name}.s{k}.w")
        b = Parameter(np.zeros(width), f"{name}.s{k}.b")
        stages.append((w, b))
        prev = width
    return ToyNet(stages=stages, use_relu=use_relu)


def forward_features(net: ToyNet, image) -> list[Tensor]:
    """Multi-level features for one image; level k has stride 2**(k+1)."""
    return net.forward(image)


def level_geometries(image_size: int, n_levels: int) -> list[LevelGeometry]:
    return [
        LevelGeometry(
            stride=2 ** (k + 1),
            feature_h=image_size // 2 ** (k + 1),
            feature_w=image_size // 2 ** (k + 1),
        )
        for k in range(n_levels)
    ]


def task_target(image: np.ndarray, projection: np.ndarray) -> np.ndarray:
    """Fixed linear projection of the stride-2 pooled image; (C, H/2, W/2)."""
    c, h, w = image.shape
    pooled = image.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    return np.einsum("ct,thw->chw", projection, pooled)


def task_loss(level0: Tensor, image: np.ndarray, projection: np.ndarray) -> Tensor:
    """Mean squared error of level-0 features against the projected image."""
    return tensor_mean(square(sub(level0, Tensor(task_target(image, projection)))))


# ---------------------------------------------------------------------------
# Optimizer


class SgdOptimizer:
    """SGD with momentum and L2 weight decay folded into the gradient:
    v <- momentum*v + (grad + wd*p); p <- p - lr*v.  Parameters with no
    recorded gradient are skipped."""

    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.9,
                 weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocities):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# Training state


@dataclass
class TrainState:
    """Everything one optimization step reads and writes."""

    step: int
    teacher: ToyNet  # frozen
    student: ToyNet
    adaptation: list[AdaptationLayer]
    gc_blocks: list[GcBlockParams]
    optimizer: SgdOptimizer
    task_projection: np.ndarray  # (C_student, 3)
    rng_seed: int
    geoms: list[LevelGeometry]
    teacher_cache: dict = field(default_factory=dict)

    @property
    def parameters(self) -> list[Parameter]:
        params = list(self.student.parameters())
        for a in self.adaptation:
            params.extend(a.parameters())
        for gc in self.gc_blocks:
            params.extend(gc.parameters())
        return params


def _teacher_levels(state: TrainState, scene: SyntheticScene) -> list[Tensor]:
    cached = state.teacher_cache.get(scene.seed)
    if cached is None:
        cached = [Tensor(f.data) for f in state.teacher.forward(scene.image)]
        state.teacher_cache[scene.seed] = cached
    return cached


def train_step(
    state: TrainState,
    scenes: list[SyntheticScene],
    hp: FgdHyperParams,
    mode: str = "full",
    attention_reduction: str = "mean",
) -> tuple[TrainState, LossReport]:
    """One SGD update on the full distillation objective for a scene batch."""
    n_levels = state.student.n_levels
    teacher_levels = [[] for _ in range(n_levels)]
    student_levels = [[] for _ in range(n_levels)]
    boxes = []
    task_acc = Tensor(0.0)
    for scene in scenes:
        t_feats = _teacher_levels(state, scene)
        s_feats = state.student.forward(scene.image)
        for lv in range(n_levels):
            teacher_levels[lv].append(t_feats[lv])
            student_levels[lv].append(s_feats[lv])
        boxes.append(scene.boxes)
        task_acc = task_acc + task_loss(s_feats[0], scene.image, state.task_projection)
    task = mul(task_acc, 1.0 / len(scenes))

    levels = [
        LevelBatch(
            teacher=teacher_levels[lv],
            student=student_levels[lv],
            boxes=boxes,
            geom=state.geoms[lv],
        )
        for lv in range(n_levels)
    ]
    total, report = fgd_total(
        levels,
        hp,
        state.gc_blocks,
        state.adaptation,
        task,
        mode=mode,
        attention_reduction=attention_reduction,
    )
    if not math.isfinite(report.total):
        raise NonFiniteLossError(
            f"non-finite total loss at step {state.step}",
            dump={"step": state.step, "report": report,
                  "scene_seeds": [s.seed for s in scenes]},
        )
    state.optimizer.zero_grad()
    total.backward()
    state.optimizer.step()
    state.optimizer.zero_grad()
    state.step += 1
    return state, report
