"""Full distillation runs: deterministic setup from a RunConfig, the step
loop with metric logging, mask dumps, and the final checkpoint."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig, hyperparams_from_config, serialize_config
from .fileio import atomic_write_text, format_float, write_grid, write_pgm, write_vector_csv
from .gcblock import init_gcblock
from .losses import LossReport, init_adaptation
from .masks import MaskSet, attention_masks, build_masks, channel_attention_map, spatial_attention_map
from .pipeline import (
    SceneConfig,
    SgdOptimizer,
    SyntheticScene,
    ToyNet,
    TrainState,
    forward_features,
    generate_scene,
    init_toynet,
    level_geometries,
    scene_seed,
    task_loss,
    train_step,
)
from .tensor import Tensor

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "fea_fg", "fea_bg", "attention", "focal", "global", "task", "total")

_PLATEAU_WINDOW = 100
_PLATEAU_FACTOR = 0.999
_MAX_HALVINGS = 2
_PRETRAIN_LR = 0.05


def scene_pool(config: RunConfig) -> list[SyntheticScene]:
    scfg = SceneConfig(
        image_size=config.image_size,
        max_rects=config.max_rects,
        min_rects=config.min_rects,
        noise_amp=config.noise_amp,
        contrast=config.contrast,
    )
    return [
        generate_scene(scfg, scene_seed(config.seed, i))
        for i in range(config.scene_pool_size)
    ]


def pretrain_teacher(
    teacher: ToyNet,
    scenes: list[SyntheticScene],
    projection: np.ndarray,
    steps: int,
    lr: float = _PRETRAIN_LR,
):
    """Fit the teacher to its own stand-in task, then freeze it."""
    opt = SgdOptimizer(teacher.parameters(), lr=lr)
    for step in range(steps):
        scene = scenes[step % len(scenes)]
        loss = task_loss(teacher.forward(scene.image)[0], scene.image, projection)
        opt.zero_grad()
        loss.backward()
        opt.step()
        opt.zero_grad()
    teacher.freeze()


def build_state(config: RunConfig) -> TrainState:
    """Deterministic teacher/student/optimizer assembly from one seed."""
    root = np.random.SeedSequence(config.seed)
    r_teacher, r_student, r_adapt, r_gc, r_task = (
        np.random.default_rng(s) for s in root.spawn(5)
    )
    scenes = scene_pool(config)

    teacher = init_toynet(
        config.teacher_channels, r_teacher, n_levels=config.levels, name="teacher"
    )
    # Nonnegative projections keep the regression targets inside the relu'd
    # nets' reachable set, so teacher and student features stay linearly
    # mappable and the adaptation layer has a low least-squares floor.
    teacher_projection = r_task.uniform(0.2, 1.0, size=(config.teacher_channels, 3))
    pretrain_teacher(teacher, scenes, teacher_projection, config.teacher_pretrain_steps)

    student = init_toynet(
        config.student_channels, r_student, n_levels=config.levels, name="student"
    )
    adaptation = [
        init_adaptation(
            config.student_channels, config.teacher_channels, r_adapt, name=f"adapt{lv}"
        )
        for lv in range(config.levels)
    ]
    gc_blocks = [
        init_gcblock(config.teacher_channels, r_gc, name=f"gc{lv}")
        for lv in range(config.levels)
    ]
    student_projection = r_task.uniform(0.2, 1.0, size=(config.student_channels, 3))

    params = list(student.parameters())
    for a in adaptation:
        params.extend(a.parameters())
    for gc in gc_blocks:
        params.extend(gc.parameters())
    optimizer = SgdOptimizer(params, lr=config.lr)

    state = TrainState(
        step=0,
        teacher=teacher,
        student=student,
        adaptation=adaptation,
        gc_blocks=gc_blocks,
        optimizer=optimizer,
        task_projection=student_projection,
        rng_seed=config.seed,
        geoms=level_geometries(config.image_size, config.levels),
    )
    return state


def student_attention_masks(
    state: TrainState, scene: SyntheticScene, temperature: float
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Current student spatial/channel masks (through adaptation), per level."""
    feats = forward_features(state.student, scene.image)
    out = []
    for lv, f_s in enumerate(feats):
        f_sa = state.adaptation[lv](f_s)
        a_s, a_c = attention_masks(
            spatial_attention_map(f_sa),
            channel_attention_map(f_sa),
            temperature,
        )
        out.append((a_s.data, a_c.data))
    return out


def teacher_mask_sets(
    state: TrainState, scene: SyntheticScene, temperature: float
) -> list[MaskSet]:
    feats = forward_features(state.teacher, scene.image)
    return [
        build_masks(Tensor(f.data), scene.boxes, geom, temperature)
        for f, geom in zip(feats, state.geoms)
    ]


def dump_masks(
    state: TrainState, scene: SyntheticScene, temperature: float, directory: str
):
    """Write M, S, teacher and student attention grids/PGMs/CSVs per level."""
    os.makedirs(directory, exist_ok=True)
    teacher_masks = teacher_mask_sets(state, scene, temperature)
    student_masks = student_attention_masks(state, scene, temperature)
    for lv, (t_mask, (s_spatial, s_channel)) in enumerate(
        zip(teacher_masks, student_masks)
    ):
        prefix = os.path.join(directory, f"level{lv}")
        write_grid(f"{prefix}_binary.txt", t_mask.binary)
        write_grid(f"{prefix}_scale.txt", t_mask.scale)
        write_grid(f"{prefix}_teacher_spatial.txt", t_mask.spatial_attn)
        write_pgm(f"{prefix}_teacher_spatial.pgm", t_mask.spatial_attn)
        write_grid(f"{prefix}_student_spatial.txt", s_spatial)
        write_pgm(f"{prefix}_student_spatial.pgm", s_spatial)
        write_vector_csv(f"{prefix}_teacher_channel.csv", t_mask.channel_attn, "attention")
        write_vector_csv(f"{prefix}_student_channel.csv", s_channel, "attention")


def mean_spatial_gap(directory: str, n_levels: int) -> float:
    """Mean |teacher - student| spatial attention over all levels of one dump."""
    from .fileio import read_grid

    gaps = []
    for lv in range(n_levels):
        t = read_grid(os.path.join(directory, f"level{lv}_teacher_spatial.txt"))
        s = read_grid(os.path.join(directory, f"level{lv}_student_spatial.txt"))
        gaps.append(np.abs(t - s).mean())
    return float(np.mean(gaps))


def metrics_csv(rows: list[tuple[int, LossReport]]) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for step, r in rows:
        lines.append(
            ",".join(
                [str(step)]
                + [
                    format_float(v)
                    for v in (r.fea_fg, r.fea_bg, r.attention, r.focal, r.global_, r.task, r.total)
                ]
            )
        )
    return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    config: RunConfig
    rows: list[tuple[int, LossReport]]
    out_dir: str
    metrics_path: str
    checkpoint_path: str
    dump_steps: list[int]


def _checkpoint_arrays(state: TrainState) -> dict[str, np.ndarray]:
    return {p.name: p.data for p in state.parameters}


def restore_parameters(state: TrainState, arrays: dict[str, np.ndarray]):
    """Load checkpointed values into the state's trainable parameters."""
    from .checkpoint import CheckpointError

    for p in state.parameters:
        if p.name not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter {p.name!r}")
        if arrays[p.name].shape != p.data.shape:
            raise CheckpointError(
                f"checkpoint shape {arrays[p.name].shape} != {p.data.shape} for {p.name!r}"
            )
        p.data = arrays[p.name].copy()


def distill_run(config: RunConfig, progress=None) -> RunResult:
    """Train per the config; write metrics.csv, config echo, checkpoint and
    mask dumps under config.out_dir.  `progress`, when given, is called with
    one line per logged step."""
    hp = hyperparams_from_config(config)
    state = build_state(config)
    scenes = scene_pool(config)
    probe = scenes[0]
    out = config.out_dir
    os.makedirs(out, exist_ok=True)
    echo = serialize_config(config) + (
        f"# resolved: alpha={format_float(hp.alpha)} beta={format_float(hp.beta)} "
        f"gamma={format_float(hp.gamma)} lambda={format_float(hp.lambda_)} "
        f"temperature={format_float(hp.temperature)}\n"
    )
    atomic_write_text(os.path.join(out, "config.txt"), echo)

    dumped: list[int] = []

    def dump(step: int):
        if step in dumped:
            return
        dump_masks(
            state, probe, hp.temperature, os.path.join(out, "masks", f"step_{step:06d}")
        )
        dumped.append(step)

    dump(0)

    rows: list[tuple[int, LossReport]] = []
    recent: list[float] = []
    previous_window: float | None = None
    halvings = 0
    for step in range(config.steps):
        batch = [
            scenes[(step * config.batch_size + j) % len(scenes)]
            for j in range(config.batch_size)
        ]
        state, report = train_step(
            state,
            batch,
            hp,
            mode=config.mode,
            attention_reduction=config.attention_reduction,
        )
        rows.append((step, report))
        if progress is not None and (step % 100 == 0 or step == config.steps - 1):
            progress(f"step {step}: total={report.total:.6g} distill={report.total_distill:.6g}")

        recent.append(report.total)
        if len(recent) == _PLATEAU_WINDOW:
            window = float(np.mean(recent))
            recent.clear()
            if (
                previous_window is not None
                and halvings < _MAX_HALVINGS
                and window > _PLATEAU_FACTOR * previous_window
            ):
                state.optimizer.lr *= 0.5
                halvings += 1
                logger.info("plateau at step %d; lr halved to %g", step, state.optimizer.lr)
            previous_window = window

        if config.mask_dump_interval and state.step % config.mask_dump_interval == 0:
            dump(state.step)
    dump(state.step)

    metrics_path = os.path.join(out, "metrics.csv")
    atomic_write_text(metrics_path, metrics_csv(rows))
    checkpoint_path = os.path.join(out, "checkpoint.bin")
    save_checkpoint(checkpoint_path, _checkpoint_arrays(state))
    return RunResult(
        config=config,
        rows=rows,
        out_dir=out,
        metrics_path=metrics_path,
        checkpoint_path=checkpoint_path,
        dump_steps=sorted(dumped),
    )
