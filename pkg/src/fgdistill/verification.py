"""Seeded finite-difference checks over every differentiable piece, grouped
into the scopes the command-line `gradcheck` verb exposes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .gcblock import context_pool, init_gcblock, relation, transform
from .gradcheck import GradCheckReport, gradcheck
from .losses import (
    LevelBatch,
    FgdHyperParams,
    attention_loss,
    baseline_loss,
    feature_loss,
    fgd_total,
    global_loss,
    init_adaptation,
)
from .masks import (
    BoxSet,
    LevelGeometry,
    attention_masks,
    build_masks,
    channel_attention_map,
    spatial_attention_map,
)
from . import tensor as T
from .tensor import Parameter, Tensor

SCOPES = ("ops", "masks", "gcblock", "losses", "all")

_SMOOTH_TOL = 1e-4
_KINKED_TOL = 1e-3
_STEP = 1e-4


@dataclass
class CheckResult:
    name: str
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        return f"{self.name}: {self.report}"


def _rand(rng, shape, away_from_zero: float = 0.0) -> np.ndarray:
    """Uniform in [-2, 2]; optionally pushed at least `away_from_zero` from 0."""
    x = rng.uniform(-2.0, 2.0, size=shape)
    if away_from_zero > 0.0:
        x = np.sign(x) * (np.abs(x) + away_from_zero)
    return x


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    # a fixed non-uniform readout makes per-element gradient errors visible
    return T.tensor_sum(T.mul(out, Tensor(weights)))


def _op_checks(seed: int) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    shape = (2, 3, 4)
    r1 = rng.standard_normal(shape)
    r2 = rng.standard_normal(shape)
    checks = []

    def run(name, f, inputs, tol=_SMOOTH_TOL):
        checks.append(CheckResult(name, gradcheck(f, inputs, step=_STEP, rel_tol=tol)))

    a = Tensor(_rand(rng, shape), requires_grad=True)
    b = Tensor(_rand(rng, shape), requires_grad=True)
    run("add", lambda x, y: _weighted_sum(T.add(x, y), r1), [a, b])
    run("sub", lambda x, y: _weighted_sum(T.sub(x, y), r1), [a, b])
    run("mul", lambda x, y: _weighted_sum(T.mul(x, y), r1), [a, b])
    run("mul_scalar", lambda x: _weighted_sum(T.mul(x, 1.7), r1), [a])
    run(
        "mul_broadcast",
        lambda x, y: _weighted_sum(T.mul(x, T.reshape(y, (1, 3, 4))), r1),
        [a, Tensor(_rand(rng, (3, 4)), requires_grad=True)],
    )
    run("square", lambda x: _weighted_sum(T.square(x), r1), [a])

    kinked = Tensor(_rand(rng, shape, away_from_zero=1e-2), requires_grad=True)
    run("abs", lambda x: _weighted_sum(T.absolute(x), r1), [kinked])
    run("relu", lambda x: _weighted_sum(T.relu(x), r2), [kinked])

    run("sum_all", lambda x: T.tensor_sum(x), [a])
    r_sum = rng.standard_normal(3)
    run("sum_axes", lambda x: _weighted_sum(T.tensor_sum(x, axes=(0, 2)), r_sum), [a])
    r_mean = rng.standard_normal((2, 4))
    run("mean_axis", lambda x: _weighted_sum(T.tensor_mean(x, axes=1), r_mean), [a])
    for temp in (0.3, 1.0, 5.0):
        run(
            f"softmax_t_{temp}",
            lambda x, t=temp: _weighted_sum(T.softmax_t(x, axis=2, temperature=t), r1),
            [a],
        )
    run("reshape", lambda x: _weighted_sum(T.reshape(x, (6, 4)), r1.reshape(6, 4)), [a])

    x4 = Tensor(_rand(rng, (2, 3, 4, 4)), requires_grad=True)
    w = Tensor(_rand(rng, (5, 3)), requires_grad=True)
    bias = Tensor(_rand(rng, (5,)), requires_grad=True)
    rc = rng.standard_normal((2, 5, 4, 4))
    run("conv1x1", lambda x, ww, bb: _weighted_sum(T.conv1x1(x, ww, bb), rc), [x4, w, bias])

    gamma = Tensor(_rand(rng, (3,)), requires_grad=True)
    beta = Tensor(_rand(rng, (3,)), requires_grad=True)
    run(
        "layer_norm",
        lambda x, g, bt: _weighted_sum(T.layer_norm(x, g, bt, axes=1), r1),
        [a, gamma, beta],
    )

    pool_in = Tensor(_rand(rng, (3, 4, 4)), requires_grad=True)
    r_pool = rng.standard_normal((3, 2, 2))
    run("avg_pool2", lambda x: _weighted_sum(T.avg_pool2(x), r_pool), [pool_in])
    return checks


def _mask_checks(seed: int) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    f = Tensor(_rand(rng, (4, 3, 3), away_from_zero=1e-2), requires_grad=True)
    r_s = rng.standard_normal((3, 3))
    r_c = rng.standard_normal(4)

    def masks_readout(x):
        a_s, a_c = attention_masks(
            spatial_attention_map(x), channel_attention_map(x), temperature=0.5
        )
        return T.add(_weighted_sum(a_s, r_s), _weighted_sum(a_c, r_c))

    return [
        CheckResult(
            "spatial_attention_map",
            gradcheck(
                lambda x: _weighted_sum(spatial_attention_map(x), r_s),
                [f],
                step=_STEP,
                rel_tol=_SMOOTH_TOL,
            ),
        ),
        CheckResult(
            "channel_attention_map",
            gradcheck(
                lambda x: _weighted_sum(channel_attention_map(x), r_c),
                [f],
                step=_STEP,
                rel_tol=_SMOOTH_TOL,
            ),
        ),
        CheckResult(
            "attention_masks",
            gradcheck(masks_readout, [f], step=_STEP, rel_tol=_SMOOTH_TOL),
        ),
    ]


def _gcblock_checks(seed: int) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    gc = init_gcblock(4, rng, name="chk")
    gc.w_v2.data = rng.uniform(-0.5, 0.5, size=gc.w_v2.shape)  # off the zero init
    f = Tensor(_rand(rng, (4, 3, 3)), requires_grad=True)
    ctx = Tensor(_rand(rng, (4,)), requires_grad=True)
    r_c = rng.standard_normal(4)
    r_f = rng.standard_normal((4, 3, 3))
    params = gc.parameters()
    return [
        CheckResult(
            "context_pool",
            gradcheck(
                lambda x, wk: _weighted_sum(context_pool(x, wk), r_c),
                [f, gc.w_k],
                step=_STEP,
                rel_tol=_SMOOTH_TOL,
            ),
        ),
        CheckResult(
            "transform",
            gradcheck(
                lambda c, *_: _weighted_sum(transform(c, gc), r_c),
                [ctx, *params],
                step=_STEP,
                rel_tol=_KINKED_TOL,
            ),
        ),
        CheckResult(
            "relation",
            gradcheck(
                lambda x, *_: _weighted_sum(relation(x, gc), r_f),
                [f, *params],
                step=_STEP,
                rel_tol=_KINKED_TOL,
            ),
        ),
    ]


def _loss_instance(seed: int):
    """Seeded single-level instance: teacher 8ch, student 4ch, 4x4 grid."""
    rng = np.random.default_rng(seed)
    geom = LevelGeometry(stride=4, feature_h=4, feature_w=4)
    boxes = BoxSet([(2.0, 2.0, 9.0, 9.0), (10.0, 5.0, 15.0, 12.0)], (16, 16))
    f_t = Tensor(_rand(rng, (8, 4, 4), away_from_zero=1e-2))
    f_s = Tensor(_rand(rng, (4, 4, 4), away_from_zero=1e-2), requires_grad=True)
    adapt = init_adaptation(4, 8, rng, name="chk_adapt")
    gc = init_gcblock(8, rng, name="chk_gc")
    gc.w_v2.data = rng.uniform(-0.5, 0.5, size=gc.w_v2.shape)
    masks = build_masks(f_t, boxes, geom, temperature=0.5)
    return rng, geom, boxes, f_t, f_s, adapt, gc, masks


def _loss_checks(seed: int) -> list[CheckResult]:
    rng, geom, boxes, f_t, f_s, adapt, gc, masks = _loss_instance(seed)
    checks = []

    def run(name, f, inputs, tol):
        checks.append(CheckResult(name, gradcheck(f, inputs, step=_STEP, rel_tol=tol)))

    run(
        "baseline_loss",
        lambda x, w, b: baseline_loss(f_t, T.conv1x1(x, w, b)),
        [f_s, adapt.w, adapt.b],
        _SMOOTH_TOL,
    )

    def fea(x, w, b):
        fg, bg = feature_loss(f_t, T.conv1x1(x, w, b), masks, alpha=1e-3, beta=5e-4)
        return T.add(fg, bg)

    run("feature_loss", fea, [f_s, adapt.w, adapt.b], _SMOOTH_TOL)

    def att(x, w, b):
        f_sa = T.conv1x1(x, w, b)
        a_s, a_c = attention_masks(
            spatial_attention_map(f_sa), channel_attention_map(f_sa), temperature=0.5
        )
        return attention_loss(masks, a_s, a_c, gamma=1e-3)

    run("attention_loss", att, [f_s, adapt.w, adapt.b], _KINKED_TOL)

    run(
        "global_loss",
        lambda x, w, b, *_: global_loss(f_t, T.conv1x1(x, w, b), gc, lambda_=5e-6),
        [f_s, adapt.w, adapt.b, *gc.parameters()],
        _KINKED_TOL,
    )

    # end-to-end: two levels, every trainable input perturbed
    rng2 = np.random.default_rng(seed + 1)
    geoms = [LevelGeometry(4, 4, 4), LevelGeometry(4, 4, 4)]
    boxes2 = BoxSet([(1.0, 1.0, 7.0, 7.0)], (16, 16))
    teachers = [Tensor(_rand(rng2, (8, 4, 4), away_from_zero=1e-2)) for _ in range(2)]
    students = [
        Tensor(_rand(rng2, (4, 4, 4), away_from_zero=1e-2), requires_grad=True)
        for _ in range(2)
    ]
    adapts = [init_adaptation(4, 8, rng2, name=f"e2e_adapt{i}") for i in range(2)]
    gcs = [init_gcblock(8, rng2, name=f"e2e_gc{i}") for i in range(2)]
    for g in gcs:
        g.w_v2.data = rng2.uniform(-0.5, 0.5, size=g.w_v2.shape)
    hp = FgdHyperParams(alpha=1e-3, beta=5e-4, gamma=1e-3, lambda_=5e-6, temperature=0.5)
    all_params = []
    for a in adapts:
        all_params.extend(a.parameters())
    for g in gcs:
        all_params.extend(g.parameters())

    def end_to_end(s0, s1, *_):
        levels = [
            LevelBatch(teacher=[teachers[0]], student=[s0], boxes=[boxes2], geom=geoms[0]),
            LevelBatch(teacher=[teachers[1]], student=[s1], boxes=[boxes2], geom=geoms[1]),
        ]
        total, _report = fgd_total(levels, hp, gcs, adapts, Tensor(0.0))
        return total

    run("fgd_total_end_to_end", end_to_end, [*students, *all_params], _KINKED_TOL)
    return checks


_SCOPE_BUILDERS = {
    "ops": _op_checks,
    "masks": _mask_checks,
    "gcblock": _gcblock_checks,
    "losses": _loss_checks,
}


def run_checks(scope: str, seed: int = 20240) -> list[CheckResult]:
    """All finite-difference checks in `scope` on seeded instances."""
    if scope not in SCOPES:
        raise ParameterError(f"scope must be one of {SCOPES}, got {scope!r}")
    names = [s for s in SCOPES if s != "all"] if scope == "all" else [scope]
    results = []
    for name in names:
        results.extend(_SCOPE_BUILDERS[name](seed))
    return results
