import struct
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stsub.data import (
    DataError,
    ExperimentConfig,
    FeatureSet,
    FormatError,
    KernelContext,
    Projection,
    ShapeError,
    generate_synthetic_crossview,
    load_feature_set,
    load_projection,
    parse_ratio,
    save_feature_set,
    save_projection,
    split_by_ratio,
)


def _csv(tmp_path, body, header="# d=3 n=4 cols=person_id,view_id,split,f0,f1,f2"):
    p = tmp_path / "feat.csv"
    p.write_text(header + "\n" + body)
    return p


def test_load_small_csv(tmp_path):
    p = _csv(tmp_path, "0,0,labeled,1,2,3\n0,1,labeled,4,5,6\n1,0,unlabeled,7,8,9\n,1,gallery,0,0,1\n")
    fs = load_feature_set(p)
    assert (fs.d, fs.n_samples) == (3, 4)
    assert fs.features[:, 1].tolist() == [4, 5, 6]
    assert fs.person_id.tolist() == [0, 0, 1, -1]
    assert fs.view_id.tolist() == [0, 1, 0, 1]
    assert fs.split_tag.tolist() == ["labeled", "labeled", "unlabeled", "gallery"]


def test_short_row_names_its_line(tmp_path):
    p = _csv(tmp_path, "0,0,labeled,1,2,3\n0,1,labeled,4,5\n1,0,labeled,7,8,9\n1,1,labeled,1,1,1\n")
    with pytest.raises(ShapeError, match="line 3"):
        load_feature_set(p)


def test_bad_number_is_a_format_error(tmp_path):
    p = _csv(tmp_path, "0,0,labeled,1,2,x\n")
    with pytest.raises(FormatError) as info:
        load_feature_set(p)
    assert info.value.line == 2


def test_missing_header(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("0,0,labeled,1\n")
    with pytest.raises(FormatError, match="line 1"):
        load_feature_set(p)


def test_sample_count_mismatch(tmp_path):
    p = _csv(tmp_path, "0,0,labeled,1,2,3\n")
    with pytest.raises(ShapeError, match="n=4"):
        load_feature_set(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_feature_set(tmp_path / "nope.csv")


def test_labeled_sample_needs_person():
    with pytest.raises(DataError):
        FeatureSet(np.ones((2, 2)), [0, -1], [0, 1], ["labeled", "labeled"])


def test_unknown_tag():
    with pytest.raises(DataError):
        FeatureSet(np.ones((2, 1)), [0], [0], ["train"])


def test_features_are_read_only():
    fs = generate_synthetic_crossview(3, seed=0, dim=4)
    with pytest.raises(ValueError):
        fs.features[0, 0] = 1.0


feature_sets = st.integers(1, 6).flatmap(
    lambda d: st.integers(1, 8).flatmap(
        lambda n: st.tuples(
            arrays(np.float64, (d, n), elements=st.floats(-1e6, 1e6, allow_nan=False)),
            st.lists(st.integers(-1, 5), min_size=n, max_size=n),
            st.lists(st.integers(0, 3), min_size=n, max_size=n),
            st.lists(st.sampled_from(["unlabeled", "probe", "gallery"]), min_size=n, max_size=n),
        )
    )
)


@given(feature_sets, st.sampled_from(["csv", "bin"]))
def test_round_trip_is_identity(tmp_path_factory, parts, suffix):
    X, pid, vid, tags = parts
    fs = FeatureSet(X, pid, vid, tags)
    path = tmp_path_factory.mktemp("rt") / f"f.{suffix}"
    save_feature_set(fs, path)
    back = load_feature_set(path)
    assert back.equals(fs)
    assert back.features.tobytes() == fs.features.tobytes()


def test_binary_size_is_checked(tmp_path):
    fs = generate_synthetic_crossview(3, seed=0, dim=4)
    p = tmp_path / "f.bin"
    save_feature_set(fs, p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ShapeError):
        load_feature_set(p)


def test_binary_bad_magic(tmp_path):
    p = tmp_path / "f.bin"
    p.write_bytes(b"NOPE" + struct.pack("<BQQ", 1, 1, 1))
    with pytest.raises(FormatError):
        load_feature_set(p)


def test_split_316_persons_at_one_third():
    fs = FeatureSet(np.zeros((1, 632)), np.repeat(np.arange(316), 2), np.tile([0, 1], 316), ["labeled"] * 632)
    part = split_by_ratio(fs, "1/3", seed=0)
    assert np.unique(fs.person_id[part.labeled_indices]).size == 105


def test_split_ratio_one_labels_everyone():
    fs = generate_synthetic_crossview(10, seed=0, dim=4)
    part = split_by_ratio(fs, 1, seed=3)
    assert part.unlabeled_indices.size == 0
    assert part.labeled_indices.size == fs.n_samples


def test_split_tiny_ratio_keeps_one_person():
    fs = generate_synthetic_crossview(5, seed=0, dim=4)
    part = split_by_ratio(fs, Fraction(1, 40), seed=0)
    assert np.unique(fs.person_id[part.labeled_indices]).size == 1


@given(st.integers(2, 30), st.fractions(min_value=Fraction(1, 50), max_value=1), st.integers(0, 2**32))
def test_split_is_by_person_and_deterministic(persons, ratio, seed):
    fs = generate_synthetic_crossview(persons, images_per_view=2, seed=1, dim=3)
    a = split_by_ratio(fs, ratio, seed)
    b = split_by_ratio(fs, ratio, seed)
    assert np.array_equal(a.labeled_indices, b.labeled_indices)
    both = np.concatenate([a.labeled_indices, a.unlabeled_indices])
    assert np.array_equal(np.sort(both), np.arange(fs.n_samples))
    lab = set(fs.person_id[a.labeled_indices])
    assert lab.isdisjoint(fs.person_id[a.unlabeled_indices])
    assert len(lab) == max(1, int(ratio * persons))


@pytest.mark.parametrize("bad", ["0", "3/2", "-1", "abc"])
def test_ratio_out_of_range(bad):
    with pytest.raises(DataError):
        parse_ratio(bad)


def test_zero_noise_latent_nearest_neighbor_is_exact():
    fs, latent, maps = generate_synthetic_crossview(50, noise_sigma=0.0, seed=4, dim=16, return_latent=True)
    # recover latents per view by least squares; cross-view NN in latent space is the true match
    z = {v: np.linalg.lstsq(maps[v], fs.features[:, fs.view_id == v], rcond=None)[0] for v in (0, 1)}
    d = ((z[0][:, :, None] - z[1][:, None, :]) ** 2).sum(axis=0)
    assert np.array_equal(d.argmin(axis=1), np.arange(50))
    a, b = fs.features[:, fs.view_id == 0], maps[0] @ latent
    assert np.allclose(a, b)


def test_synthetic_determinism_and_shape():
    a = generate_synthetic_crossview(7, images_per_view=3, latent_dim=2, seed=9, dim=5)
    b = generate_synthetic_crossview(7, images_per_view=3, latent_dim=2, seed=9, dim=5)
    assert a.equals(b)
    assert a.features.shape == (5, 42)
    assert np.bincount(a.view_id).tolist() == [21, 21]


def test_synthetic_rejects_one_person():
    with pytest.raises(ValueError):
        generate_synthetic_crossview(1)


def test_projection_round_trip(tmp_path, rng):
    lin = Projection("linear", rng.standard_normal((4, 2)))
    save_projection(lin, tmp_path / "l.stsp")
    back = load_projection(tmp_path / "l.stsp")
    assert back.kind == "linear" and np.array_equal(back.basis, lin.basis)

    ctx = KernelContext(rng.standard_normal((3, 5)), "gaussian", 1.7, (2.0, 2.5), np.array([0.4, 0.6]))
    ker = Projection("kernelized", rng.standard_normal((5, 2)), ctx)
    save_projection(ker, tmp_path / "k.stsp")
    back = load_projection(tmp_path / "k.stsp")
    Z = rng.standard_normal((3, 4))
    assert np.array_equal(back.transform(Z), ker.transform(Z))


def test_projection_trailing_bytes(tmp_path, rng):
    p = tmp_path / "l.stsp"
    save_projection(Projection("linear", rng.standard_normal((2, 1))), p)
    p.write_bytes(p.read_bytes() + b"x")
    with pytest.raises(FormatError):
        load_projection(p)


def test_projection_dimension_check(rng):
    proj = Projection("linear", rng.standard_normal((4, 2)))
    assert proj.subspace_dim == 2
    with pytest.raises(ShapeError):
        proj.transform(np.ones((3, 1)))


def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.eta, cfg.k_neighbors, cfg.max_iters, cfg.theta, cfg.trials) == (1.0, 2, 10, 0.01, 10)
    assert cfg.kernel_count == 11
    assert cfg.stop_tolerance == 0.0


@pytest.mark.parametrize("kw", [{"k_neighbors": 0}, {"max_iters": 0}, {"eta": -1}, {"method": "xqda"}, {"ratio": "2"}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ExperimentConfig(**kw)
