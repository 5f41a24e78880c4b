"""Properties of the seeded synthetic video generator."""

import numpy as np

from videocodes import synthetic as S


def test_deterministic():
    a = S.gen_synthetic_stream(S.SyntheticSceneSpec(seed=5))
    b = S.gen_synthetic_stream(S.SyntheticSceneSpec(seed=5))
    assert np.array_equal(a, b)


def test_seeds_differ():
    a = S.gen_synthetic_stream(S.SyntheticSceneSpec(seed=5))
    b = S.gen_synthetic_stream(S.SyntheticSceneSpec(seed=6))
    assert not np.array_equal(a, b)


def test_chunked_equals_whole():
    spec = S.SyntheticSceneSpec(seed=9, frames=24)
    whole = S.gen_synthetic_stream(spec)
    chunks = [S.gen_synthetic_stream(spec, start=s, count=8)
              for s in (0, 8, 16)]
    assert np.array_equal(np.concatenate(chunks), whole)


def test_values_in_unit_range():
    v = S.gen_synthetic_stream(S.SyntheticSceneSpec(seed=3, frames=16))
    assert v.min() >= 0.0 and v.max() <= 1.0


def test_shape():
    v = S.gen_synthetic_stream(S.SyntheticSceneSpec(seed=0, frames=4,
                                                    height=16, width=24))
    assert v.shape == (4, 16, 24, 3)


def test_motion_class_balance():
    labels = [S.motion_class(S.SyntheticSceneSpec(seed=i)) for i in range(400)]
    assert 0.4 < np.mean(labels) < 0.6


def test_reversed_spec_flips_class():
    for seed in range(20):
        spec = S.SyntheticSceneSpec(seed=seed)
        assert S.motion_class(S.reversed_spec(spec)) == 1 - S.motion_class(spec)


def test_frame_phase_labels_match_rule():
    spec = S.SyntheticSceneSpec(seed=11, frames=40)
    labels = S.frame_phase_labels(spec)
    obj = spec._params["objects"][0]
    half = obj["size"] / 2.0
    t = np.arange(40, dtype=np.float64)
    cx = S._bounce(obj["x0"], obj["vx"], t, half + 1.0,
                   spec.width - half - 1.0)
    assert np.array_equal(labels, (cx >= spec.width / 2).astype(int))


def test_bounce_stays_in_bounds():
    t = np.arange(0, 500, 0.25)
    pos = S._bounce(5.0, 0.73, t, 2.0, 27.0)
    assert pos.min() >= 2.0 and pos.max() <= 27.0


def test_make_dataset_deterministic():
    a, la, _ = S.make_dataset(3, 6)
    b, lb, _ = S.make_dataset(3, 6)
    assert np.array_equal(a, b) and np.array_equal(la, lb)


def test_small_frames_supported():
    v = S.gen_synthetic_stream(S.SyntheticSceneSpec(seed=1, frames=4,
                                                    height=8, width=8))
    assert v.shape == (4, 8, 8, 3)
