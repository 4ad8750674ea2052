"""Student/teacher encoders: contracts, equivalences, gradients, checkpoints."""

import numpy as np
import pytest

from gvr import autodiff as ad
from gvr import model as M
from gvr.errors import CapacityError, DegenerateInputError

F64 = dict(dtype="float64")


def toy_config(**kw):
    base = dict(dim_base=8, layers=2, heads=2, f_max=6, tau_init=0.07, **F64)
    base.update(kw)
    return M.ModelConfig(**base)


def toy_params(seed=0, **kw):
    return M.ModelParams.init(toy_config(**kw), seed=seed)


class TestEncodeText:
    def test_identity_init_preserves_direction(self):
        params = toy_params()
        rng = np.random.default_rng(0)
        v = rng.normal(size=8)
        out = M.encode_text(params, v).data
        np.testing.assert_allclose(out, v / np.linalg.norm(v), atol=1e-12)

    def test_unit_norm_contract(self):
        params = toy_params(seed=3)
        rng = np.random.default_rng(1)
        out = M.encode_text(params, rng.normal(size=(5, 8))).data
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)

    def test_adapter_gradient(self):
        params = toy_params()
        rng = np.random.default_rng(2)
        base = rng.normal(size=(3, 8))
        w = rng.normal(size=(3, 8))
        target = {"w": params["text_adapter.w"], "b": params["text_adapter.b"]}
        report = ad.grad_check(
            lambda: ad.weighted_sum(M.encode_text(params, base), w), target, eps=1e-5)
        assert report.max_rel_err < 1e-4

    def test_zero_direction_rejected(self):
        params = toy_params()
        with pytest.raises(DegenerateInputError):
            M.encode_text(params, np.zeros(8))


class TestEncodeVideo:
    def test_single_frame_defined_and_unit(self):
        params = toy_params(seed=1)
        rng = np.random.default_rng(3)
        out = M.encode_video(params, rng.normal(size=(1, 8))).data
        assert out.shape == (8,)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-5)

    def test_zero_pe_gives_permutation_invariance(self):
        params = toy_params(seed=2)  # pos_enc is zero at init
        rng = np.random.default_rng(4)
        frames = rng.normal(size=(5, 8))
        out1 = M.encode_video(params, frames).data
        out2 = M.encode_video(params, frames[rng.permutation(5)]).data
        np.testing.assert_allclose(out1, out2, atol=1e-5)

    def test_nonzero_pe_breaks_permutation_invariance(self):
        # with live residual projections, positional rows enter nonlinearly
        params = toy_params(seed=2)
        rng = np.random.default_rng(5)
        for name, t in params.params.items():
            if name.endswith((".wo", ".w2")):
                t.data += rng.normal(size=t.shape) * 0.3
        params["pos_enc"].data[:4] = rng.normal(size=(4, 8))
        frames = np.random.default_rng(6).normal(size=(4, 8))
        out1 = M.encode_video(params, frames).data
        out2 = M.encode_video(params, frames[::-1].copy()).data
        assert np.linalg.norm(out1 - out2) > 1e-4

    def test_capacity_error_beyond_f_max(self):
        params = toy_params()
        with pytest.raises(CapacityError):
            M.encode_video(params, np.zeros((7, 8)))

    def test_batched_equals_per_video(self):
        """The block-diagonal attention mask must make batching exact."""
        params = toy_params(seed=7)
        params["pos_enc"].data[:] = np.random.default_rng(8).normal(size=(6, 8)) * 0.3
        rng = np.random.default_rng(9)
        videos = [rng.normal(size=(4, 8)) for _ in range(5)]
        stacked = np.concatenate(videos, axis=0)
        batched = M.encode_video_batch(params, stacked, batch=5).data
        singles = np.stack([M.encode_video(params, v).data for v in videos])
        np.testing.assert_allclose(batched, singles, atol=1e-10)

    def test_mixed_frame_counts_preserve_order(self):
        params = toy_params(seed=11)
        rng = np.random.default_rng(12)
        videos = [rng.normal(size=(f, 8)) for f in (3, 1, 5, 1, 3)]
        out = M.encode_videos(params, videos).data
        singles = np.stack([M.encode_video(params, v).data for v in videos])
        np.testing.assert_allclose(out, singles, atol=1e-10)

    def test_unit_norm_so_cosine_equals_dot(self):
        params = toy_params(seed=13)
        rng = np.random.default_rng(14)
        ev = M.encode_video(params, rng.normal(size=(3, 8)))
        et = M.encode_text(params, rng.normal(size=8))
        cos = ad.cosine_similarity(ev, et).item()
        dot = float(ev.data @ et.data)
        assert abs(cos - dot) < 1e-6


class TestTeacher:
    def test_constant_video(self):
        v = np.array([1.0, 2.0, 2.0, 0.0])
        frames = np.tile(v, (4, 1))
        np.testing.assert_allclose(M.teacher_encode_video(frames), v / 3.0, atol=1e-12)

    def test_exact_permutation_invariance(self):
        rng = np.random.default_rng(15)
        frames = rng.normal(size=(6, 8))
        a = M.teacher_encode_video(frames)
        b = M.teacher_encode_video(frames[[3, 1, 5, 0, 4, 2]])
        assert a.tobytes() == b.tobytes()

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateInputError):
            M.teacher_encode_video(np.zeros((2, 4)))
        with pytest.raises(DegenerateInputError):
            M.teacher_encode_text(np.zeros(4))

    def test_passthrough_init_matches_teacher(self):
        """Identity adapters + zero out-projections leave the student equal to
        average pooling, so teacher and student coincide at init."""
        params = toy_params(seed=17)
        rng = np.random.default_rng(18)
        frames = rng.normal(size=(5, 8))
        student = M.encode_video(params, frames).data
        teacher = M.teacher_encode_video(frames)
        np.testing.assert_allclose(student, teacher, atol=1e-10)
        vec = rng.normal(size=8)
        np.testing.assert_allclose(M.encode_text(params, vec).data,
                                   M.teacher_encode_text(vec), atol=1e-10)


class TestGradients:
    def test_full_student_gradcheck(self):
        params = toy_params(seed=19)
        # move off the zero-out-projection point so every weight matters
        rng = np.random.default_rng(20)
        for name, t in params.params.items():
            if name.endswith((".wo", ".w2")) or name == "pos_enc":
                t.data += rng.normal(size=t.shape) * 0.1
        frames = rng.normal(size=(6, 8))  # 2 videos x 3 frames
        sentences = rng.normal(size=(2, 8))
        wv = rng.normal(size=(2, 8))
        wt = rng.normal(size=(2, 8))

        def f():
            ev = M.encode_video_batch(params, frames, batch=2)
            et = M.encode_text(params, sentences)
            return ad.add(ad.weighted_sum(ev, wv), ad.weighted_sum(et, wt))

        report = ad.grad_check(f, params.params, eps=1e-5,
                               max_coords_per_param=6, rng=np.random.default_rng(0))
        assert report.max_rel_err < 1e-4, report.worst


class TestCheckpoint:
    def test_round_trip_and_determinism(self, tmp_path):
        params = toy_params(seed=21)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        M.save_checkpoint(params, p1, step=3, seed=21)
        M.save_checkpoint(params, p2, step=3, seed=21)
        assert p1.read_bytes() == p2.read_bytes()
        loaded, header = M.load_checkpoint(p1)
        assert header["step"] == 3
        assert sorted(loaded.params) == sorted(params.params)
        for name, t in params.params.items():
            np.testing.assert_allclose(loaded[name].data, t.data.astype(np.float32), atol=1e-7)

    def test_tau_survives_round_trip(self, tmp_path):
        params = toy_params()
        M.save_checkpoint(params, tmp_path / "m.ckpt")
        loaded, _ = M.load_checkpoint(tmp_path / "m.ckpt")
        assert loaded.tau_value() == pytest.approx(0.07, rel=1e-5)
