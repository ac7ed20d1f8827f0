import numpy as np
import pytest

from trackprobe.errors import InvalidInputError
from trackprobe.grids import Grid2D, Point2D
from trackprobe.probe import (
    ProbeSample,
    bce_loss,
    conv2d,
    conv2d_backward,
    huber_loss,
    loss_and_grad_arrays,
    probe_forward,
    probe_init,
    probe_loss_and_grad,
    probe_track,
)

PARAM_NAMES = ("w_e1", "b_e1", "w_e2", "b_e2", "w_p", "b_p", "w_o", "b_o")


def conv_naive(x, w, b):
    """Direct nested-loop 3x3 zero-padded cross-correlation."""
    bsz, cin, h, ww = x.shape
    cout = w.shape[0]
    out = np.zeros((bsz, cout, h, ww))
    for bi in range(bsz):
        for o in range(cout):
            for y in range(h):
                for x_ in range(ww):
                    acc = b[o]
                    for c in range(cin):
                        for i in range(3):
                            for j in range(3):
                                yy, xx = y + i - 1, x_ + j - 1
                                if 0 <= yy < h and 0 <= xx < ww:
                                    acc += w[o, c, i, j] * x[bi, c, yy, xx]
                    out[bi, o, y, x_] = acc
    return out


def random_batch(rng, n=3, hw=8):
    batch = []
    for _ in range(n):
        batch.append(ProbeSample(
            cmap=rng.uniform(-1, 1, (hw, hw)),
            target_point=tuple(rng.uniform(0, hw - 1, size=2)),
            occluded=bool(rng.random() < 0.3),
        ))
    if all(s.occluded for s in batch):
        batch[0] = ProbeSample(batch[0].cmap, batch[0].target_point, False)
    return batch


class TestConv2d:
    def test_matches_naive_reference(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 5, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        np.testing.assert_allclose(conv2d(x, w, b), conv_naive(x, w, b), atol=1e-12)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 2, 4, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        g = rng.standard_normal((2, 3, 4, 5))
        dx, dw, db = conv2d_backward(x, w, g)
        h = 1e-6

        def loss():
            return float(np.sum(conv2d(x, w, b) * g))

        for arr, grad in ((x, dx), (w, dw), (b, db)):
            for _ in range(6):
                idx = tuple(rng.integers(0, s) for s in arr.shape)
                orig = arr[idx]
                arr[idx] = orig + h
                lp = loss()
                arr[idx] = orig - h
                lm = loss()
                arr[idx] = orig
                fd = (lp - lm) / (2 * h)
                assert abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-6) < 1e-6


class TestProbeInit:
    def test_deterministic_given_seed(self):
        a, b = probe_init(42), probe_init(42)
        for name in PARAM_NAMES:
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_parameter_count(self):
        # 160 + 4640 + 289 + 289 from the 1 -> 16 -> 32 -> (1, 1) layout
        assert probe_init(0).param_count() == 5378

    def test_different_seeds_differ(self):
        assert not np.array_equal(probe_init(0).w_e1, probe_init(1).w_e1)

    def test_biases_zero(self):
        p = probe_init(3)
        for name in ("b_e1", "b_e2", "b_p", "b_o"):
            assert np.all(getattr(p, name) == 0.0)


class TestProbeForward:
    def test_zero_params_give_centroid_and_logit_zero(self):
        p = probe_init(0)
        for arr in p.as_dict().values():
            arr[:] = 0.0
        out = probe_forward(Grid2D(np.random.default_rng(0).uniform(-1, 1, (1, 5, 9))), p)
        assert np.all(out.heatmap.data == 0.0)
        assert out.point == Point2D(x=pytest.approx(4.0), y=pytest.approx(2.0))
        assert out.occlusion_logit == 0.0

    def test_translation_shifts_interior_heatmap(self):
        rng = np.random.default_rng(4)
        p = probe_init(4)
        base = rng.uniform(-1, 1, (12, 12))
        shifted = np.roll(base, 1, axis=1)
        heat_a = probe_forward(Grid2D(base[None]), p).heatmap.data[0]
        heat_b = probe_forward(Grid2D(shifted[None]), p).heatmap.data[0]
        # three stacked 3x3 convolutions see 7x7 neighborhoods: compare
        # cells whose receptive fields avoid both boundaries
        m = 4
        np.testing.assert_allclose(heat_b[m:-m, m + 1:-m], heat_a[m:-m, m:-m - 1], atol=1e-10)

    def test_matches_naive_convolution_reference(self):
        rng = np.random.default_rng(5)
        p = probe_init(5)
        cmap = rng.uniform(-1, 1, (6, 6))
        out = probe_forward(Grid2D(cmap[None]), p)
        e1 = np.maximum(conv_naive(cmap[None, None], p.w_e1, p.b_e1), 0.0)
        e2 = np.maximum(conv_naive(e1, p.w_e2, p.b_e2), 0.0)
        heat = conv_naive(e2, p.w_p, p.b_p)[0, 0]
        occ = conv_naive(e2, p.w_o, p.b_o)[0, 0]
        np.testing.assert_allclose(out.heatmap.data[0], heat, atol=1e-10)
        assert out.occlusion_logit == pytest.approx(float(occ.mean()), abs=1e-12)
        w = np.exp(heat - heat.max())
        w /= w.sum()
        assert out.point.x == pytest.approx(float((w * np.arange(6)[None, :]).sum()), abs=1e-10)
        assert out.point.y == pytest.approx(float((w * np.arange(6)[:, None]).sum()), abs=1e-10)

    def test_batch_order_independence(self):
        rng = np.random.default_rng(6)
        p = probe_init(6)
        from trackprobe.probe import probe_forward_batch

        maps = rng.uniform(-1, 1, (5, 8, 8))
        pts, logits = probe_forward_batch(maps, p)
        perm = rng.permutation(5)
        pts_p, logits_p = probe_forward_batch(maps[perm], p)
        assert np.array_equal(pts_p, pts[perm])
        assert np.array_equal(logits_p, logits[perm])


class TestLosses:
    def test_huber_zero_at_match(self):
        assert huber_loss(Point2D(1.5, 2.5), Point2D(1.5, 2.5)) == 0.0

    def test_huber_quadratic_branch(self):
        assert huber_loss(Point2D(0.5, 0.0), Point2D(0.0, 0.0), delta=1.0) == pytest.approx(0.125)

    def test_huber_linear_branch(self):
        assert huber_loss(Point2D(2.0, 0.0), Point2D(0.0, 0.0), delta=1.0) == pytest.approx(1.5)

    def test_huber_requires_positive_delta(self):
        with pytest.raises(InvalidInputError):
            huber_loss(Point2D(0, 0), Point2D(0, 0), delta=0.0)

    def test_bce_at_logit_zero(self):
        assert bce_loss(0.0, 1) == pytest.approx(np.log(2.0), rel=1e-12)
        assert bce_loss(0.0, 0) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_bce_saturation(self):
        assert bce_loss(50.0, 1) < 1e-20
        assert bce_loss(-50.0, 0) < 1e-20
        assert bce_loss(50.0, 0) == pytest.approx(50.0, rel=1e-9)


class TestLossAndGrad:
    def test_empty_batch_rejected(self):
        with pytest.raises(InvalidInputError):
            probe_loss_and_grad([], probe_init(0))

    def test_gradients_match_finite_differences(self):
        from conftest import fd_probe_param_check

        rng = np.random.default_rng(7)
        p = probe_init(7)
        batch = random_batch(rng)
        cmaps = np.stack([s.cmap for s in batch])

        def loss_fn(params):
            return probe_loss_and_grad(batch, params)

        worst = fd_probe_param_check(cmaps, loss_fn, p, rng, step=1e-5, tol=1e-4,
                                     coords_per_group=3)
        assert worst is not None

    def test_all_occluded_zeroes_point_branch_gradient(self):
        rng = np.random.default_rng(8)
        p = probe_init(8)
        batch = [ProbeSample(cmap=rng.uniform(-1, 1, (8, 8)),
                             target_point=(2.0, 2.0), occluded=True) for _ in range(3)]
        _, grads = probe_loss_and_grad(batch, p)
        assert np.all(grads["w_p"] == 0.0)
        assert np.all(grads["b_p"] == 0.0)

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        p = probe_init(9)
        cmaps = rng.uniform(-1, 1, (2, 8, 8))
        targets = rng.uniform(0, 7, (2, 2))
        occluded = np.array([False, True])
        _, _, gx = loss_and_grad_arrays(cmaps, targets, occluded, p, want_input_grad=True)
        h = 1e-5
        for _ in range(8):
            idx = tuple(rng.integers(0, s) for s in cmaps.shape)
            orig = cmaps[idx]
            cmaps[idx] = orig + h
            lp = loss_and_grad_arrays(cmaps, targets, occluded, p)[0]
            cmaps[idx] = orig - h
            lm = loss_and_grad_arrays(cmaps, targets, occluded, p)[0]
            cmaps[idx] = orig
            fd = (lp - lm) / (2 * h)
            assert abs(fd - gx[idx]) / max(abs(fd), abs(gx[idx]), 1e-6) < 1e-4

    def test_chunked_normalizers_reproduce_whole_batch(self):
        rng = np.random.default_rng(10)
        p = probe_init(10)
        cmaps = rng.uniform(-1, 1, (6, 8, 8))
        targets = rng.uniform(0, 7, (6, 2))
        occluded = rng.random(6) < 0.4
        full_loss, full_grads, _ = loss_and_grad_arrays(cmaps, targets, occluded, p)
        n_vis = int((~occluded).sum())
        loss_sum = 0.0
        grad_sum = None
        for lo in (0, 3):
            l, g, _ = loss_and_grad_arrays(cmaps[lo:lo + 3], targets[lo:lo + 3],
                                           occluded[lo:lo + 3], p, normalizers=(n_vis, 6))
            loss_sum += l
            grad_sum = g if grad_sum is None else {k: grad_sum[k] + g[k] for k in g}
        assert loss_sum == pytest.approx(full_loss, rel=1e-12)
        for k in full_grads:
            np.testing.assert_allclose(grad_sum[k], full_grads[k], atol=1e-12)

    def test_gradient_descent_decreases_loss(self):
        rng = np.random.default_rng(11)
        decreased = 0
        for trial in range(100):
            p = probe_init(trial)
            batch = random_batch(rng, n=2, hw=6)
            loss, grads = probe_loss_and_grad(batch, p)
            for name in PARAM_NAMES:
                getattr(p, name)[...] -= 1e-5 * grads[name]
            loss2, _ = probe_loss_and_grad(batch, p)
            decreased += loss2 <= loss
        assert decreased >= 95

    def test_converged_singleton_has_near_zero_gradient(self):
        rng = np.random.default_rng(12)
        p = probe_init(12)
        batch = [ProbeSample(cmap=rng.uniform(-1, 1, (6, 6)),
                             target_point=(2.0, 3.0), occluded=False)]
        # crude Adam to a local optimum of the singleton batch
        m = {n: np.zeros_like(getattr(p, n)) for n in PARAM_NAMES}
        v = {n: np.zeros_like(getattr(p, n)) for n in PARAM_NAMES}
        for t in range(1, 801):
            _, grads = probe_loss_and_grad(batch, p)
            for n in PARAM_NAMES:
                m[n] = 0.9 * m[n] + 0.1 * grads[n]
                v[n] = 0.999 * v[n] + 0.001 * grads[n] ** 2
                mh = m[n] / (1 - 0.9 ** t)
                vh = v[n] / (1 - 0.999 ** t)
                getattr(p, n)[...] -= 1e-3 * mh / (np.sqrt(vh) + 1e-8)
        _, grads = probe_loss_and_grad(batch, p)
        norm = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
        assert norm < 1e-3


class TestProbeTrack:
    def test_visibility_threshold_ties_visible(self):
        p = probe_init(0)
        for arr in p.as_dict().values():
            arr[:] = 0.0
        traj = probe_track(np.zeros((3, 4, 4)), p)
        # logit 0 -> probability exactly 0.5 -> visible
        assert traj.visible.all()
        np.testing.assert_allclose(traj.occlusion_prob, 0.5)
