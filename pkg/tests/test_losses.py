import numpy as np
import pytest

from fgdistill.errors import DimensionError, ParameterError
from fgdistill.gcblock import init_gcblock
from fgdistill.losses import (
    ABLATION_MODES,
    FgdHyperParams,
    LevelBatch,
    LossReport,
    PRESETS,
    ablation_mode,
    attention_loss,
    baseline_loss,
    effective_hyperparams,
    effective_masks,
    feature_loss,
    fgd_total,
    global_loss,
    init_adaptation,
    preset,
)
from fgdistill.masks import (
    BoxSet,
    LevelGeometry,
    MaskSet,
    attention_masks,
    build_masks,
    channel_attention_map,
    spatial_attention_map,
)
from fgdistill.tensor import Tensor


def ones_masks(c, h, w, binary=None):
    return MaskSet(
        binary=np.ones((h, w)) if binary is None else binary,
        scale=np.ones((h, w)),
        spatial_attn=np.ones((h, w)),
        channel_attn=np.ones(c),
    )


def random_instance(seed, c_t=8, c_s=4, h=4, w=4):
    rng = np.random.default_rng(seed)
    geom = LevelGeometry(stride=4, feature_h=h, feature_w=w)
    boxes = BoxSet([(2.0, 2.0, 9.0, 9.0)], (h * 4, w * 4))
    f_t = Tensor(rng.normal(size=(c_t, h, w)))
    f_s = Tensor(rng.normal(size=(c_s, h, w)), requires_grad=True)
    adapt = init_adaptation(c_s, c_t, rng)
    gc = init_gcblock(c_t, rng)
    gc.w_v2.data = rng.uniform(-0.5, 0.5, size=gc.w_v2.shape)
    return rng, geom, boxes, f_t, f_s, adapt, gc


class TestPresets:
    def test_paper_values(self):
        two = preset("two-stage")
        assert (two.alpha, two.beta, two.gamma, two.lambda_) == (5e-5, 2.5e-5, 5e-5, 5e-7)
        one = preset("anchor-one-stage")
        assert (one.alpha, one.beta, one.gamma, one.lambda_) == (1e-3, 5e-4, 1e-3, 5e-6)
        free = preset("anchor-free")
        assert (free.alpha, free.beta, free.gamma, free.lambda_) == (1.6e-3, 8e-4, 8e-3, 8e-6)
        assert all(p.temperature == 0.5 for p in PRESETS.values())

    def test_unknown_preset(self):
        with pytest.raises(ParameterError):
            preset("three-stage")

    def test_negative_weight_rejected(self):
        with pytest.raises(ParameterError):
            FgdHyperParams(alpha=-1.0, beta=0.0, gamma=0.0, lambda_=0.0)

    def test_bad_temperature_rejected(self):
        with pytest.raises(ParameterError):
            FgdHyperParams(alpha=0.0, beta=0.0, gamma=0.0, lambda_=0.0, temperature=0.0)


class TestBaselineLoss:
    def test_identical_is_zero(self):
        f = Tensor(np.random.default_rng(0).normal(size=(2, 3, 3)))
        assert baseline_loss(f, Tensor(f.data.copy())).item() == 0.0

    def test_constant_offset(self):
        f = Tensor(np.zeros((2, 3, 3)))
        assert baseline_loss(f, Tensor(np.ones((2, 3, 3)))).item() == 1.0

    def test_hand_value(self):
        f_t = Tensor(np.array([0.0, 0.0]).reshape(1, 1, 1, 2))
        f_s = Tensor(np.array([1.0, 3.0]).reshape(1, 1, 1, 2))
        assert baseline_loss(f_t, f_s).item() == 5.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            baseline_loss(Tensor(np.ones((2, 2, 2))), Tensor(np.ones((2, 2, 3))))


class TestFeatureLoss:
    def test_identical_features_zero(self):
        f = Tensor(np.random.default_rng(1).normal(size=(3, 4, 4)))
        fg, bg = feature_loss(f, Tensor(f.data.copy()), ones_masks(3, 4, 4), 1.0, 1.0)
        assert fg.item() == 0.0 and bg.item() == 0.0

    def test_hand_trace_single_cell(self):
        f_t = Tensor(np.array([[[2.0]]]))
        f_s = Tensor(np.array([[[0.0]]]))
        fg, bg = feature_loss(f_t, f_s, ones_masks(1, 1, 1), alpha=1e-3, beta=1.0)
        assert fg.item() == pytest.approx(4e-3, abs=1e-15)
        assert bg.item() == 0.0

    def test_zero_weights(self):
        rng = np.random.default_rng(2)
        f_t, f_s = Tensor(rng.normal(size=(2, 3, 3))), Tensor(rng.normal(size=(2, 3, 3)))
        fg, bg = feature_loss(f_t, f_s, ones_masks(2, 3, 3), 0.0, 0.0)
        assert fg.item() == 0.0 and bg.item() == 0.0

    def test_weight_linearity(self):
        rng = np.random.default_rng(3)
        f_t, f_s = Tensor(rng.normal(size=(2, 4, 4))), Tensor(rng.normal(size=(2, 4, 4)))
        binary = np.zeros((4, 4))
        binary[1:3, 1:3] = 1.0
        masks = ones_masks(2, 4, 4, binary=binary)
        fg1, bg1 = feature_loss(f_t, f_s, masks, alpha=1.0, beta=1.0)
        fg3, bg5 = feature_loss(f_t, f_s, masks, alpha=3.0, beta=5.0)
        assert fg3.item() == pytest.approx(3 * fg1.item(), rel=1e-12)
        assert bg5.item() == pytest.approx(5 * bg1.item(), rel=1e-12)

    def test_fg_ignores_background_changes(self):
        rng = np.random.default_rng(4)
        f_t = Tensor(rng.normal(size=(2, 4, 4)))
        binary = np.zeros((4, 4))
        binary[0:2, 0:2] = 1.0
        masks = ones_masks(2, 4, 4, binary=binary)
        f_s1 = rng.normal(size=(2, 4, 4))
        f_s2 = f_s1.copy()
        f_s2[:, 3, 3] += 10.0  # background cell only
        fg1, bg1 = feature_loss(f_t, Tensor(f_s1), masks, 1.0, 1.0)
        fg2, bg2 = feature_loss(f_t, Tensor(f_s2), masks, 1.0, 1.0)
        assert fg1.item() == fg2.item()
        assert bg1.item() != bg2.item()
        f_s3 = f_s1.copy()
        f_s3[:, 0, 0] += 10.0  # foreground cell only
        fg3, bg3 = feature_loss(f_t, Tensor(f_s3), masks, 1.0, 1.0)
        assert bg1.item() == bg3.item()
        assert fg1.item() != fg3.item()

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            f_t = Tensor(rng.normal(size=(2, 3, 3)))
            f_s = Tensor(rng.normal(size=(2, 3, 3)))
            fg, bg = feature_loss(f_t, f_s, ones_masks(2, 3, 3), 0.3, 0.7)
            assert fg.item() >= 0.0 and bg.item() >= 0.0

    def test_mask_shape_mismatch(self):
        with pytest.raises(DimensionError):
            feature_loss(
                Tensor(np.ones((2, 3, 3))),
                Tensor(np.ones((2, 3, 3))),
                ones_masks(2, 4, 4),
                1.0,
                1.0,
            )


class TestAttentionLoss:
    def test_identical_masks_zero(self):
        masks = ones_masks(3, 2, 2)
        out = attention_loss(masks, Tensor(np.ones((2, 2))), Tensor(np.ones(3)), 1.0)
        assert out.item() == 0.0

    def test_hand_l1(self):
        masks = MaskSet(
            binary=np.zeros((1, 2)),
            scale=np.ones((1, 2)),
            spatial_attn=np.array([[0.5, 1.5]]),
            channel_attn=np.ones(2),
        )
        out = attention_loss(masks, Tensor(np.ones((1, 2))), Tensor(np.ones(2)), 1.0)
        assert out.item() == pytest.approx(0.5, abs=1e-15)

    def test_gamma_linearity(self):
        rng = np.random.default_rng(6)
        masks = ones_masks(2, 3, 3)
        s_sp = Tensor(rng.uniform(0.5, 1.5, size=(3, 3)))
        s_ch = Tensor(rng.uniform(0.5, 1.5, size=2))
        one = attention_loss(masks, s_sp, s_ch, 1.0).item()
        seven = attention_loss(masks, s_sp, s_ch, 7.0).item()
        assert seven == pytest.approx(7 * one, rel=1e-12)

    def test_sum_reduction_option(self):
        masks = ones_masks(1, 1, 2)
        s_sp = Tensor(np.array([[0.0, 2.0]]))
        s_ch = Tensor(np.ones(1))
        mean_red = attention_loss(masks, s_sp, s_ch, 1.0, reduction="mean").item()
        sum_red = attention_loss(masks, s_sp, s_ch, 1.0, reduction="sum").item()
        assert mean_red == pytest.approx(1.0)
        assert sum_red == pytest.approx(2.0)
        with pytest.raises(ParameterError):
            attention_loss(masks, s_sp, s_ch, 1.0, reduction="max")

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            attention_loss(ones_masks(2, 2, 2), Tensor(np.ones((3, 3))), Tensor(np.ones(2)), 1.0)


class TestGlobalLoss:
    def test_identical_features_zero(self):
        _, _, _, f_t, _, _, gc = random_instance(7)
        assert global_loss(f_t, Tensor(f_t.data.copy()), gc, 0.5).item() == 0.0

    def test_zero_wv2_collapses_to_mse_sum(self):
        rng = np.random.default_rng(8)
        gc = init_gcblock(3, rng)
        f_t = Tensor(rng.normal(size=(3, 4, 4)))
        f_s = Tensor(rng.normal(size=(3, 4, 4)))
        out = global_loss(f_t, f_s, gc, lambda_=2.5)
        expected = 2.5 * ((f_t.data - f_s.data) ** 2).sum()
        assert out.item() == pytest.approx(expected, rel=1e-12)

    def test_hand_single_pixel(self):
        gc = init_gcblock(1, np.random.default_rng(9))
        f_t = Tensor(np.array([[[1.0]]]))
        f_s = Tensor(np.array([[[3.0]]]))
        assert global_loss(f_t, f_s, gc, lambda_=0.5).item() == pytest.approx(2.0)

    def test_shape_mismatch(self):
        gc = init_gcblock(2, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            global_loss(Tensor(np.ones((2, 2, 2))), Tensor(np.ones((2, 3, 3))), gc, 1.0)


class TestAblation:
    def test_unknown_mode(self):
        with pytest.raises(ParameterError):
            ablation_mode("everything")

    def test_full_is_identity(self):
        hp = preset("anchor-one-stage")
        ov = ablation_mode("full")
        assert effective_hyperparams(hp, ov) == hp
        masks = ones_masks(2, 2, 2)
        out = effective_masks(masks, ov)
        assert out.spatial_attn is masks.spatial_attn
        assert out.channel_attn is masks.channel_attn

    def test_fg_only_zeroes_beta(self):
        hp = effective_hyperparams(preset("anchor-one-stage"), ablation_mode("fg_only"))
        assert hp.beta == 0.0 and hp.alpha == 1e-3

    def test_bg_only_zeroes_alpha(self):
        hp = effective_hyperparams(preset("anchor-one-stage"), ablation_mode("bg_only"))
        assert hp.alpha == 0.0 and hp.beta == 5e-4

    def test_joint_ties_weights(self):
        hp = effective_hyperparams(preset("anchor-one-stage"), ablation_mode("joint_no_split"))
        assert hp.alpha == hp.beta == 1e-3

    def test_attention_overrides_flatten(self):
        rng = np.random.default_rng(10)
        masks = MaskSet(
            binary=np.zeros((2, 2)),
            scale=np.ones((2, 2)),
            spatial_attn=rng.uniform(0.2, 2.0, size=(2, 2)),
            channel_attn=rng.uniform(0.2, 2.0, size=3),
        )
        flat_s = effective_masks(masks, ablation_mode("no_spatial_attn"))
        np.testing.assert_array_equal(flat_s.spatial_attn, np.ones((2, 2)))
        np.testing.assert_array_equal(flat_s.channel_attn, masks.channel_attn)
        flat_c = effective_masks(masks, ablation_mode("no_channel_attn"))
        np.testing.assert_array_equal(flat_c.channel_attn, np.ones(3))

    def test_no_attention_equals_plain_weighted_mse(self):
        # with both attention masks flattened the feature loss is the plain
        # M*S-weighted squared error
        rng, geom, boxes, f_t, f_s, adapt, gc = random_instance(11)
        masks = build_masks(f_t, boxes, geom, 0.5)
        flattened = effective_masks(
            effective_masks(masks, ablation_mode("no_spatial_attn")),
            ablation_mode("no_channel_attn"),
        )
        f_sa = adapt(f_s)
        fg, bg = feature_loss(f_t, f_sa, flattened, alpha=1.0, beta=1.0)
        diff2 = (f_t.data - f_sa.data) ** 2
        expected_fg = (masks.binary * masks.scale * diff2).sum()
        expected_bg = ((1 - masks.binary) * masks.scale * diff2).sum()
        assert fg.item() == pytest.approx(expected_fg, rel=1e-10)
        assert bg.item() == pytest.approx(expected_bg, rel=1e-10)

    def test_fg_only_no_boxes_contributes_nothing(self):
        rng = np.random.default_rng(12)
        f_t = Tensor(rng.normal(size=(2, 4, 4)))
        f_s = Tensor(rng.normal(size=(2, 4, 4)))
        masks = build_masks(f_t, BoxSet([], (8, 8)), LevelGeometry(2, 4, 4), 0.5)
        hp = effective_hyperparams(
            FgdHyperParams(1.0, 1.0, 0.0, 0.0), ablation_mode("fg_only")
        )
        fg, bg = feature_loss(f_t, f_s, masks, hp.alpha, hp.beta)
        assert fg.item() == 0.0 and bg.item() == 0.0

    def test_all_modes_enumerated(self):
        assert set(ABLATION_MODES) == {
            "fg_only",
            "bg_only",
            "joint_no_split",
            "split",
            "no_spatial_attn",
            "no_channel_attn",
            "full",
        }


def single_level_inputs(seed, n_images=1):
    rng = np.random.default_rng(seed)
    geom = LevelGeometry(stride=4, feature_h=4, feature_w=4)
    teachers, students, boxes = [], [], []
    for _ in range(n_images):
        teachers.append(Tensor(rng.normal(size=(8, 4, 4))))
        students.append(Tensor(rng.normal(size=(4, 4, 4)), requires_grad=True))
        boxes.append(BoxSet([(2.0, 2.0, 9.0, 9.0)], (16, 16)))
    adapt = init_adaptation(4, 8, rng)
    gc = init_gcblock(8, rng)
    gc.w_v2.data = rng.uniform(-0.5, 0.5, size=gc.w_v2.shape)
    level = LevelBatch(teacher=teachers, student=students, boxes=boxes, geom=geom)
    return level, adapt, gc


class TestFgdTotal:
    def test_teacher_equals_student_gives_zero_distill(self):
        rng = np.random.default_rng(13)
        geom = LevelGeometry(stride=4, feature_h=4, feature_w=4)
        f = rng.normal(size=(4, 4, 4))
        level = LevelBatch(
            teacher=[Tensor(f)],
            student=[Tensor(f.copy(), requires_grad=True)],
            boxes=[BoxSet([(1.0, 1.0, 8.0, 8.0)], (16, 16))],
            geom=geom,
        )
        adapt = init_adaptation(4, 4, rng)  # identity when square
        gc = init_gcblock(4, rng)  # w_v2 = 0
        hp = preset("anchor-one-stage")
        total, report = fgd_total([level], hp, [gc], [adapt], Tensor(0.0))
        assert report.total_distill == 0.0
        assert report.fea_fg == report.fea_bg == report.attention == report.global_ == 0.0

    def test_zero_lambda_removes_global(self):
        level, adapt, gc = single_level_inputs(14)
        hp = FgdHyperParams(alpha=1e-3, beta=5e-4, gamma=1e-3, lambda_=5e-6)
        hp0 = FgdHyperParams(alpha=1e-3, beta=5e-4, gamma=1e-3, lambda_=0.0)
        _, with_g = fgd_total([level], hp, [gc], [adapt], Tensor(0.0))
        _, without = fgd_total([level], hp0, [gc], [adapt], Tensor(0.0))
        assert without.global_ == 0.0
        assert without.total == pytest.approx(without.task + without.focal, abs=1e-15)
        assert with_g.focal == pytest.approx(without.focal, rel=1e-12)

    def test_compositional_oracle(self):
        level, adapt, gc = single_level_inputs(15)
        hp = FgdHyperParams(alpha=1e-3, beta=5e-4, gamma=1e-3, lambda_=5e-6)
        _, report = fgd_total([level], hp, [gc], [adapt], Tensor(0.0))
        # recompute each term in isolation
        f_t, f_s, boxes = level.teacher[0], level.student[0], level.boxes[0]
        masks = build_masks(f_t, boxes, level.geom, hp.temperature)
        f_sa = adapt(f_s)
        fg, bg = feature_loss(f_t, f_sa, masks, hp.alpha, hp.beta)
        a_s, a_c = attention_masks(
            spatial_attention_map(f_sa), channel_attention_map(f_sa), hp.temperature
        )
        att = attention_loss(masks, a_s, a_c, hp.gamma)
        glob = global_loss(f_t, f_sa, gc, hp.lambda_)
        assert report.fea_fg == pytest.approx(fg.item(), abs=1e-12)
        assert report.fea_bg == pytest.approx(bg.item(), abs=1e-12)
        assert report.attention == pytest.approx(att.item(), abs=1e-12)
        assert report.global_ == pytest.approx(glob.item(), abs=1e-12)
        total = fg.item() + bg.item() + att.item() + glob.item()
        assert report.total_distill == pytest.approx(total, abs=1e-10)

    def test_weight_scaling_linearity(self):
        level, adapt, gc = single_level_inputs(16)
        hp = FgdHyperParams(alpha=1e-3, beta=5e-4, gamma=1e-3, lambda_=5e-6)
        _, base = fgd_total([level], hp, [gc], [adapt], Tensor(0.0))
        factor = 3.0
        for weight, field in (
            ("alpha", "fea_fg"),
            ("beta", "fea_bg"),
            ("gamma", "attention"),
            ("lambda_", "global_"),
        ):
            kwargs = {
                "alpha": hp.alpha,
                "beta": hp.beta,
                "gamma": hp.gamma,
                "lambda_": hp.lambda_,
            }
            kwargs[weight] = kwargs[weight] * factor
            _, scaled = fgd_total([level], FgdHyperParams(**kwargs), [gc], [adapt], Tensor(0.0))
            assert getattr(scaled, field) == pytest.approx(
                factor * getattr(base, field), rel=1e-12
            )

    def test_report_identities(self):
        level, adapt, gc = single_level_inputs(17)
        hp = preset("anchor-free")
        task = Tensor(0.37)
        _, r = fgd_total([level], hp, [gc], [adapt], task)
        assert abs(r.focal - (r.fea_fg + r.fea_bg + r.attention)) <= 1e-12
        assert abs(r.total - (r.task + r.focal + r.global_)) <= 1e-12
        assert r.task == 0.37

    def test_raw_student_used_when_channels_match(self):
        # C_s == C_t: global loss must consume raw student features, so a
        # change in adaptation weights cannot change the global term
        rng = np.random.default_rng(18)
        geom = LevelGeometry(stride=4, feature_h=4, feature_w=4)
        level = LevelBatch(
            teacher=[Tensor(rng.normal(size=(4, 4, 4)))],
            student=[Tensor(rng.normal(size=(4, 4, 4)), requires_grad=True)],
            boxes=[BoxSet([(1.0, 1.0, 8.0, 8.0)], (16, 16))],
            geom=geom,
        )
        gc = init_gcblock(4, rng)
        hp = preset("anchor-one-stage")
        adapt1 = init_adaptation(4, 4, rng)
        _, r1 = fgd_total([level], hp, [gc], [adapt1], Tensor(0.0))
        adapt2 = init_adaptation(4, 4, rng)
        adapt2.w.data = rng.normal(size=(4, 4))
        _, r2 = fgd_total([level], hp, [gc], [adapt2], Tensor(0.0))
        assert r1.global_ == r2.global_
        assert r1.fea_fg != r2.fea_fg

    def test_batch_averaging(self):
        level2, adapt, gc = single_level_inputs(19, n_images=2)
        hp = preset("anchor-one-stage")
        _, both = fgd_total([level2], hp, [gc], [adapt], Tensor(0.0))
        singles = []
        for i in range(2):
            one = LevelBatch(
                teacher=[level2.teacher[i]],
                student=[level2.student[i]],
                boxes=[level2.boxes[i]],
                geom=level2.geom,
            )
            _, r = fgd_total([one], hp, [gc], [adapt], Tensor(0.0))
            singles.append(r)
        mean_fg = (singles[0].fea_fg + singles[1].fea_fg) / 2
        assert both.fea_fg == pytest.approx(mean_fg, rel=1e-12)

    def test_empty_levels_rejected(self):
        with pytest.raises(ParameterError):
            fgd_total([], preset("two-stage"), [], [], Tensor(0.0))

    def test_mismatched_blocks_rejected(self):
        level, adapt, gc = single_level_inputs(20)
        with pytest.raises(DimensionError):
            fgd_total([level], preset("two-stage"), [gc, gc], [adapt], Tensor(0.0))


class TestLossReport:
    def test_assemble_identities_exact(self):
        r = LossReport.assemble(fea_fg=0.1, fea_bg=0.2, attention=0.3, global_=0.4, task=0.5)
        assert r.focal == 0.1 + 0.2 + 0.3
        assert r.total_distill == r.focal + 0.4
        assert r.total == 0.5 + r.focal + 0.4
