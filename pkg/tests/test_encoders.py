import numpy as np
import pytest

from ski.autodiff import Tensor
from ski.core import ContractViolation, TextPrompt, VideoClip
from ski.encoders import (
    ClassifierHead,
    DualEncoderModel,
    ParameterSet,
    SkeletonEncoder,
    TextEncoder,
    VideoEncoder,
    canonicalize_pose,
    classify_skeleton,
    describe_checkpoint,
    encode_skeleton,
    encode_text,
    encode_video,
    load_arrays,
    save_arrays,
)
from ski.synthdata import camera_rotation, grammar_vocabulary
from fdutil import check_param_gradients

VOCAB = grammar_vocabulary()


def small_video_encoder(seed=0):
    return VideoEncoder(channels=2, height=16, width=16, hidden=(12,), d_out=6, seed=seed)


def small_skeleton_encoder(seed=0):
    return SkeletonEncoder(num_joints=5, hidden=(12,), d_out=6, seed=seed)


class TestParameterSet:
    def test_duplicate_name_rejected(self):
        ps = ParameterSet()
        ps.add("w", np.zeros(3))
        with pytest.raises(ContractViolation):
            ps.add("w", np.zeros(3))

    def test_checksum_tracks_data(self):
        ps = ParameterSet()
        t = ps.add("w", np.ones(4))
        before = ps.checksum()
        t.data = t.data * 2
        assert ps.checksum() != before

    def test_state_round_trip(self):
        ps = ParameterSet()
        ps.add("a", np.arange(6.0).reshape(2, 3))
        state = ps.state()
        ps["a"].data *= 3
        ps.load_state(state)
        assert np.array_equal(ps["a"].data, np.arange(6.0).reshape(2, 3))


class TestVideoEncoder:
    def test_constant_clip_equals_single_frame_feature(self):
        enc = small_video_encoder()
        rng = np.random.default_rng(0)
        frame = rng.uniform(0, 1, size=(2, 16, 16))
        clip = np.tile(frame, (4, 1, 1, 1))
        pooled = enc.encode_batch(clip[None]).data[0]
        single = enc.frame_features(frame[None]).data[0]
        single = single / np.linalg.norm(single)
        assert np.allclose(pooled, single, atol=1e-9)

    def test_output_is_unit_norm(self):
        enc = small_video_encoder()
        rng = np.random.default_rng(1)
        clips = rng.uniform(0, 1, size=(3, 4, 2, 16, 16))
        out = enc.encode_batch(clips).data
        assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)

    def test_frame_permutation_invariance(self):
        enc = small_video_encoder()
        rng = np.random.default_rng(2)
        clip = rng.uniform(0, 1, size=(5, 2, 16, 16))
        base = enc.encode_batch(clip[None]).data[0]
        perm = enc.encode_batch(clip[::-1].copy()[None]).data[0]
        assert np.allclose(base, perm, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        enc = small_video_encoder()
        rng = np.random.default_rng(3)
        clip = rng.uniform(0, 1, size=(1, 3, 2, 16, 16))
        w = rng.normal(size=6)

        def forward():
            return (enc.encode_batch(clip) * Tensor(w)).sum()

        check_param_gradients(forward, enc.ps.items(), n_coords=20)

    def test_dim_mismatch(self):
        enc = small_video_encoder()
        with pytest.raises(ContractViolation):
            enc.encode_batch(np.zeros((1, 2, 3, 8, 8)))

    def test_encode_video_op(self):
        enc = small_video_encoder()
        clip = VideoClip(frames=np.random.default_rng(4).uniform(0, 1, (3, 2, 16, 16)),
                         class_id=1)
        emb = encode_video(enc, clip)
        assert emb.normalized and emb.dim == 6


class TestSkeletonEncoder:
    def test_static_pose_equals_single_frame(self):
        enc = small_skeleton_encoder()
        rng = np.random.default_rng(0)
        pose = rng.normal(size=(5, 3))
        seq = np.tile(pose, (6, 1, 1))
        pooled = enc.encode_batch(seq[None]).data[0]
        single = enc.frame_features(pose[None]).data[0]
        assert np.allclose(pooled, single / np.linalg.norm(single), atol=1e-9)

    def test_frame_permutation_invariance(self):
        enc = small_skeleton_encoder()
        rng = np.random.default_rng(1)
        seq = rng.normal(size=(7, 5, 3))
        a = enc.encode_batch(seq[None]).data[0]
        b = enc.encode_batch(seq[::-1].copy()[None]).data[0]
        assert np.allclose(a, b, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        enc = small_skeleton_encoder()
        rng = np.random.default_rng(2)
        seq = rng.normal(size=(1, 4, 5, 3))
        w = rng.normal(size=6)

        def forward():
            return (enc.encode_batch(seq) * Tensor(w)).sum()

        check_param_gradients(forward, enc.ps.items(), n_coords=20)

    def test_penultimate_feeds_head(self, tiny_dataset):
        _, triplets, _ = tiny_dataset
        enc = SkeletonEncoder(num_joints=13, d_out=8, seed=0)
        head = ClassifierHead(8, 6, seed=0)
        logits = classify_skeleton(head, enc, triplets[0].skeleton)
        assert logits.shape == (6,)

    def test_encode_skeleton_op(self, tiny_dataset):
        _, triplets, _ = tiny_dataset
        enc = SkeletonEncoder(num_joints=13, d_out=8, seed=0)
        emb = encode_skeleton(enc, triplets[0].skeleton)
        assert emb.normalized and emb.dim == 8

    def test_zero_head_gives_zero_logits(self, tiny_dataset):
        _, triplets, _ = tiny_dataset
        enc = SkeletonEncoder(num_joints=13, d_out=8, seed=0)
        head = ClassifierHead(8, 6, seed=0)
        head.ps["head.w"].data = np.zeros_like(head.ps["head.w"].data)
        head.ps["head.b"].data = np.zeros_like(head.ps["head.b"].data)
        assert np.allclose(classify_skeleton(head, enc, triplets[0].skeleton), 0.0)

    def test_canonicalize_removes_camera(self, tiny_dataset):
        _, triplets, _ = tiny_dataset
        frames = triplets[0].skeleton.frames
        rotated = frames @ camera_rotation(0.8, -0.2).T
        assert np.allclose(canonicalize_pose(frames), canonicalize_pose(rotated), atol=1e-12)

    def test_canonicalized_encoder_is_view_invariant(self, tiny_dataset):
        _, triplets, _ = tiny_dataset
        enc = SkeletonEncoder(num_joints=13, d_out=8, seed=0, canonicalize=True)
        frames = triplets[0].skeleton.frames
        rotated = frames @ camera_rotation(-0.5, 0.3).T
        a = enc.encode_batch(frames[None]).data
        b = enc.encode_batch(rotated[None]).data
        assert np.allclose(a, b, atol=1e-9)


class TestTextEncoder:
    def test_deterministic(self):
        enc = TextEncoder(VOCAB, seed=0)
        a = enc.encode_batch(["a person waves the left arm"]).data
        b = enc.encode_batch(["a person waves the left arm"]).data
        assert np.array_equal(a, b)

    def test_distinct_prompts_not_collapsed_at_init(self):
        enc = TextEncoder(VOCAB, seed=0)
        prompts = [f"a person {v} the left arm" for v in
                   ("waves", "raises", "swings", "kicks", "nods")]
        Z = enc.encode_batch(prompts).data
        sims = Z @ Z.T - np.eye(len(prompts))
        assert sims.max() < 1.0 - 1e-6

    def test_oov_token_named(self):
        enc = TextEncoder(VOCAB, seed=0)
        with pytest.raises(ContractViolation, match="zumba"):
            enc.tokenize("a person waves zumba")

    def test_same_seed_identical_instances(self):
        a = TextEncoder(VOCAB, seed=4)
        b = TextEncoder(VOCAB, seed=4)
        prompts = ["a person kicks the right leg", "a person nods the head"]
        assert np.array_equal(a.encode_batch(prompts).data, b.encode_batch(prompts).data)

    def test_frozen_flag_blocks_gradients(self):
        enc = TextEncoder(VOCAB, seed=1, frozen=True)
        out = enc.encode_batch(["a person waves the left arm"])
        out.sum().backward()
        assert all(t.grad is None for _, t in enc.ps.items())
        assert enc.frozen

    def test_gradients_when_trainable(self):
        enc = TextEncoder(VOCAB, d_emb=8, hidden=(10,), d_out=6, seed=2)
        w = np.random.default_rng(0).normal(size=6)

        def forward():
            return (enc.encode_batch(["a person waves the left arm",
                                      "a person kicks the right leg"]) * Tensor(w)).sum()

        check_param_gradients(forward, enc.ps.items(), n_coords=10)

    def test_encode_text_op(self):
        enc = TextEncoder(VOCAB, seed=0)
        emb = encode_text(enc, TextPrompt(text="a person waves the left arm", class_id=0))
        assert emb.normalized

    def test_empty_and_long_text(self):
        enc = TextEncoder(VOCAB, seed=0)
        with pytest.raises(ContractViolation):
            enc.tokenize("")
        with pytest.raises(ContractViolation):
            enc.tokenize("arm " * (enc.MAX_TOKENS + 1))


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        arrays = {"enc.w": np.arange(12.0).reshape(3, 4), "enc.b": np.zeros(4)}
        path = tmp_path / "model.ckpt"
        save_arrays(path, arrays, fingerprint="abc123", config_text="kind = test\n")
        loaded, fp, cfg = load_arrays(path)
        assert fp == "abc123" and cfg == "kind = test\n"
        assert set(loaded) == set(arrays)
        assert np.array_equal(loaded["enc.w"], arrays["enc.w"])

    def test_describe(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_arrays(path, {"w": np.ones((2, 2))})
        rows = describe_checkpoint(path)
        assert rows == [("w", (2, 2), pytest.approx(2.0))]

    def test_bad_magic(self, tmp_path):
        from ski.core import DataFormatError

        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(DataFormatError):
            load_arrays(path)


class TestDualEncoderModel:
    def test_embed_and_text_matrix(self, tiny_dataset):
        _, triplets, _ = tiny_dataset
        enc = VideoEncoder(seed=0)
        model = DualEncoderModel(modality="video", encoder=enc,
                                 text_encoder=TextEncoder(VOCAB, seed=0))
        z = model.embed_sample(video=triplets[0].video)
        assert np.linalg.norm(z) == pytest.approx(1.0)
        mat, ids = model.text_matrix([triplets[0].prompt])
        assert mat.shape[0] == 1 and ids == [triplets[0].prompt.class_id]

    def test_state_round_trip_checksum(self):
        enc = VideoEncoder(seed=0)
        model = DualEncoderModel(modality="video", encoder=enc,
                                 text_encoder=TextEncoder(VOCAB, seed=0))
        before = model.checksum()
        state = model.state()
        enc.ps["stack.l0.w"].data += 1.0
        assert model.checksum() != before
        model.load_state(state)
        assert model.checksum() == before
