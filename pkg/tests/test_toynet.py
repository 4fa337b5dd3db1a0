import math

import numpy as np
import pytest

from amfd import tensor as T
from amfd.mea import MEAConfig
from amfd.scenes import GtBox, SceneSpec
from amfd.toynet import (
    STRIDES,
    StudentModel,
    SyntheticDataset,
    Teacher,
    TrainConfig,
    assign_targets,
    decode_detections,
    detection_loss,
    load_state,
    make_plan,
    run_distillation,
    state_arrays,
    train_step,
)


@pytest.fixture(scope="module")
def small_data():
    spec = SceneSpec(image_size=64, train_scenes=4, test_scenes=0,
                     min_height=20, max_height=56, noise_sigma=0.15,
                     clutter_sigma=0.3)
    return SyntheticDataset.generate(spec)


class TestTeacher:
    def test_deterministic(self, small_data):
        t = Teacher(seed=small_data.spec.teacher_seed)
        scene = small_data.train_scenes[0]
        a = t.features(scene)
        b = t.features(scene)
        for x, y in zip(a.x_rgb + a.x_tir, b.x_rgb + b.x_tir):
            assert np.array_equal(x, y)

    def test_pyramid_shapes_for_64px_image(self, small_data):
        feats = small_data.train_feats[0]
        assert [lv.shape for lv in feats.x_rgb] == [(8, 16, 16), (8, 8, 8)]
        assert feats.strides == [4.0, 8.0]

    def test_zero_image_constant_per_channel(self):
        t = Teacher(seed=3)
        zero = np.zeros((1, 64, 64))
        from amfd.scenes import Scene
        s = Scene(scene_id="z", rgb=zero, tir=zero.copy(), boxes=[], tod="day",
                  seed=0)
        feats = t.features(s)
        for lv in feats.x_rgb + feats.x_tir:
            for c in range(lv.shape[0]):
                assert np.ptp(lv[c]) < 1e-12

    def test_stub_is_mean_of_modalities(self, small_data):
        f = small_data.train_feats[0]
        for stub, r, ti in zip(f.x_fused_stub, f.x_rgb, f.x_tir):
            assert np.array_equal(stub, (r + ti) / 2.0)

    def test_state_vector_stable(self):
        t = Teacher(seed=7)
        assert np.array_equal(t.state_vector(), t.state_vector())


class TestStudent:
    def test_output_shapes_match_teacher(self, small_data):
        model = StudentModel.create(seed=0)
        scene = small_data.train_scenes[0]
        pyr, preds = model.forward(scene.rgb, scene.tir)
        assert pyr.shapes() == [lv.shape for lv in small_data.train_feats[0].x_rgb]
        assert [p.shape for p, _ in preds] == [(1, 16, 16), (1, 8, 8)]
        assert [p.shape for _, p in preds] == [(4, 16, 16), (4, 8, 8)]

    def test_capacity_gap(self, small_data):
        model = StudentModel.create(seed=0)
        assert model.param_count() < small_data.teacher.state_size

    def test_head_linearity(self, small_data):
        model = StudentModel.create(seed=1)
        scene = small_data.train_scenes[0]
        _, preds = model.forward(scene.rgb, scene.tir)
        base = [p.data.copy() for p, _ in preds]
        model.head_obj_w.data[...] *= 2.0
        model.head_obj_b.data[...] *= 2.0
        _, preds2 = model.forward(scene.rgb, scene.tir)
        for b, (p, _) in zip(base, preds2):
            assert np.allclose(p.data, 2.0 * b, rtol=1e-12)

    def test_fusion_param_gradient_vs_fd(self, small_data):
        model = StudentModel.create(seed=2)
        scene = small_data.train_scenes[0]

        def logit_sum():
            _, preds = model.forward(scene.rgb, scene.tir)
            return T.add(T.tsum(preds[0][0]), T.tsum(preds[1][0]))

        with T.tape():
            T.backward(logit_sum())
        p = model.fusion.proj_w
        base = p.data.copy()

        def f(t):
            p.data[...] = t.data
            out = float(logit_sum())
            p.data[...] = base
            return out

        fd = T.finite_diff_grad(f, T.Tensor(base), eps=1e-6)
        rel = np.abs(p.grad - fd) / np.maximum(np.abs(fd), 1e-5)
        assert rel.max() < 1e-4


class TestAssignAndLoss:
    def test_level_assignment_by_size(self):
        shapes = [(16, 16), (8, 8)]
        small = GtBox(0.0, 0.0, 8.0, 16.0)    # size ~11 -> stride 4
        large = GtBox(0.0, 0.0, 30.0, 50.0)   # size ~39 -> stride 8
        obj, _, n = assign_targets([small, large], shapes)
        assert n == 2
        assert obj[0].sum() == 1.0 and obj[1].sum() == 1.0

    def test_perfect_predictions_near_zero_loss(self):
        boxes = [GtBox(8.0, 8.0, 20.0, 30.0)]
        shapes = [(16, 16), (8, 8)]
        obj, tgt, _ = assign_targets(boxes, shapes)
        preds = []
        for o, t in zip(obj, tgt):
            logits = np.where(o > 0, 20.0, -20.0)
            preds.append((T.Tensor(logits), T.Tensor(t)))
        loss = float(detection_loss(preds, boxes))
        assert loss < 1e-6

    def test_no_annotations_all_negative(self):
        shapes = [(16, 16), (8, 8)]
        preds = [(T.Tensor(np.full((1,) + s, -20.0)), T.Tensor(np.zeros((4,) + s)))
                 for s in shapes]
        assert float(detection_loss(preds, [])) < 1e-6

    def test_single_positive_logit_zero_gives_ln2_term(self):
        boxes = [GtBox(8.0, 8.0, 20.0, 30.0)]
        shapes = [(16, 16), (8, 8)]
        obj, tgt, _ = assign_targets(boxes, shapes)
        preds = []
        for o, t in zip(obj, tgt):
            logits = np.where(o > 0, 0.0, -20.0)
            preds.append((T.Tensor(logits), T.Tensor(t)))
        loss = float(detection_loss(preds, boxes))
        background = sum(o.size for o in obj) * math.log1p(math.exp(-20.0))
        assert loss == pytest.approx(math.log(2.0), abs=background + 1e-9)

    def test_decode_roundtrip(self):
        # cell (2, 3) at stride 4, exact offsets for a 12x20 box centred there
        shapes = [(16, 16), (8, 8)]
        box = GtBox(8.0, 0.0, 20.0, 20.0)
        obj, tgt, _ = assign_targets([box], shapes)
        preds = [(np.where(o > 0, 10.0, -10.0), t) for o, t in zip(obj, tgt)]
        dets = decode_detections(preds, "img", image_size=64)
        assert len(dets) == 1
        assert dets[0].box == pytest.approx((box.x1, box.y1, box.x2, box.y2),
                                            abs=1e-9)


class TestTrainStep:
    def test_none_plan_zero_mea(self, small_data):
        cfg = TrainConfig(iterations=1, plan="none", seed=0, eval_every=0)
        model = StudentModel.create(seed=0)
        plan = make_plan(cfg)
        optim = T.AdamW(model.named_tensors(), lr=cfg.learning_rate)
        batch = [(small_data.train_scenes[0], small_data.train_feats[0])]
        b = train_step(batch, model, plan, optim, step=0)
        assert b.mea_total == 0.0
        assert b.total == b.original
        assert b.identities_hold()

    def test_zero_lr_freezes_parameters(self, small_data):
        cfg = TrainConfig(iterations=1, plan="amfd", seed=0, eval_every=0,
                          learning_rate=0.0)
        model = StudentModel.create(seed=0)
        plan = make_plan(cfg)
        optim = T.AdamW(model.named_tensors() + plan.named_tensors(), lr=0.0,
                        weight_decay=0.0)
        before = {n: t.data.copy() for n, t in model.named_tensors()}
        batch = [(small_data.train_scenes[0], small_data.train_feats[0])]
        b1 = train_step(batch, model, plan, optim, step=0)
        b2 = train_step(batch, model, plan, optim, step=1)
        for n, t in model.named_tensors():
            assert np.array_equal(before[n], t.data)
        assert b1.total == b2.total

    def test_step_reduces_loss_on_same_batch(self, small_data):
        cfg = TrainConfig(iterations=1, plan="amfd", seed=1, eval_every=0,
                          learning_rate=1e-4)
        model = StudentModel.create(seed=1)
        plan = make_plan(cfg)
        optim = T.AdamW(model.named_tensors() + plan.named_tensors(),
                        lr=1e-4, weight_decay=1e-4)
        batch = [(s, f) for s, f in zip(small_data.train_scenes[:2],
                                        small_data.train_feats[:2])]
        before = train_step(batch, model, plan, optim, step=0)
        after = train_step(batch, model, plan, optim, step=1)
        assert after.total < before.total

    def test_breakdown_identities_with_amfd(self, small_data):
        cfg = TrainConfig(iterations=1, plan="amfd", seed=2, eval_every=0)
        model = StudentModel.create(seed=2)
        plan = make_plan(cfg)
        optim = T.AdamW(model.named_tensors() + plan.named_tensors())
        batch = [(s, f) for s, f in zip(small_data.train_scenes,
                                        small_data.train_feats)][:2]
        b = train_step(batch, model, plan, optim, step=0)
        assert b.identities_hold()
        assert b.mea_total > 0.0


class TestLrSchedule:
    def test_constant_by_default(self):
        cfg = TrainConfig(iterations=100, learning_rate=2e-3)
        assert cfg.lr_at(0) == cfg.lr_at(99) == 2e-3

    def test_linear_decay_endpoints(self):
        cfg = TrainConfig(iterations=101, learning_rate=1e-2, lr_decay="linear")
        assert cfg.lr_at(0) == 1e-2
        assert cfg.lr_at(100) == pytest.approx(5e-3)

    def test_bad_schedule_rejected(self):
        import pytest as _pytest
        from amfd.errors import ShapeMismatch
        with _pytest.raises(ShapeMismatch):
            TrainConfig(lr_decay="cosine")


class TestRunDistillation:
    def test_zero_iterations(self, small_data):
        cfg = TrainConfig(iterations=0, plan="amfd", seed=0, eval_every=0)
        res = run_distillation(cfg, small_data)
        assert res.history == []
        fresh = StudentModel.create(img_channels=1, seed=0)
        for (n1, t1), (n2, t2) in zip(res.model.named_tensors(),
                                      fresh.named_tensors()):
            assert n1 == n2 and np.array_equal(t1.data, t2.data)

    def test_bit_identical_reruns(self, small_data):
        cfg = TrainConfig(iterations=8, plan="amfd", seed=5, eval_every=0)
        r1 = run_distillation(cfg, small_data)
        r2 = run_distillation(cfg, small_data)
        assert [b.as_dict() for b in r1.history] == [b.as_dict() for b in r2.history]
        for (n1, t1), (n2, t2) in zip(r1.model.named_tensors(),
                                      r2.model.named_tensors()):
            assert np.array_equal(t1.data, t2.data)

    def test_teacher_untouched_by_training(self, small_data):
        before = small_data.teacher.state_vector().tobytes()
        cfg = TrainConfig(iterations=6, plan="amfd", seed=6, eval_every=0)
        run_distillation(cfg, small_data)
        assert small_data.teacher.state_vector().tobytes() == before

    def test_identities_every_step(self, small_data):
        cfg = TrainConfig(iterations=10, plan="amfd", seed=7, eval_every=0)
        res = run_distillation(cfg, small_data)
        assert all(b.identities_hold() for b in res.history)

    def test_resume_matches_straight_run(self, small_data):
        full = TrainConfig(iterations=10, plan="amfd", seed=8, eval_every=0)
        straight = run_distillation(full, small_data)

        half = TrainConfig(iterations=5, plan="amfd", seed=8, eval_every=0)
        first = run_distillation(half, small_data)
        arrays = state_arrays(first.model, first.plan, first.optim, step=5)
        resumed = run_distillation(full, small_data, resume=arrays, start_step=5)

        for (n1, t1), (n2, t2) in zip(straight.model.named_tensors(),
                                      resumed.model.named_tensors()):
            assert np.array_equal(t1.data, t2.data), n1
        tail = [b.as_dict() for b in straight.history[5:]]
        assert tail == [b.as_dict() for b in resumed.history]

    def test_state_roundtrip_through_load(self, small_data):
        cfg = TrainConfig(iterations=4, plan="traditional", seed=9, eval_every=0)
        res = run_distillation(cfg, small_data)
        arrays = state_arrays(res.model, res.plan, res.optim, step=4)
        model2 = StudentModel.create(img_channels=1, seed=cfg.seed)
        plan2 = make_plan(cfg)
        optim2 = T.AdamW(model2.named_tensors() + plan2.named_tensors())
        step = load_state(model2, plan2, optim2, arrays)
        assert step == 4
        for (n1, t1), (n2, t2) in zip(res.model.named_tensors(),
                                      model2.named_tensors()):
            assert np.array_equal(t1.data, t2.data)
