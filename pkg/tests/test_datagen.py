import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clusterfel import datagen, hetero
from clusterfel.errors import ConstraintViolation, ValidationError
from clusterfel.structures import ClusterAssignment


def scenario(**kw):
    base = dict(num_clients=6, num_classes=6, samples_per_client=[120] * 6,
                skew_mode="single_class_fraction", fraction=0.5, rng_seed=3)
    base.update(kw)
    return datagen.Scenario(**base)


def test_dirichlet_large_alpha_is_near_uniform():
    p = datagen.generate(scenario(skew_mode="dirichlet", alpha=1e6, samples_per_client=[5000] * 6))
    for c in p.clients:
        assert hetero.emd(c.label_distribution, np.full(6, 1 / 6)) < 0.05


def test_all_single_class_average_emd():
    Y = 8
    p = datagen.generate(scenario(num_clients=Y, num_classes=Y, samples_per_client=[50] * Y, fraction=1.0))
    assert np.allclose(p.global_distribution, 1 / Y)
    assert hetero.average_emd(p.as_pairs(), p.global_distribution) == pytest.approx(2 * (Y - 1) / Y)
    assert sorted(int(c.labels[0]) for c in p.clients) == list(range(Y))


def test_feature_noise_zero_levels_identical_pseudo():
    p = datagen.generate(scenario(skew_mode="feature_noise", noise_levels=[0.0] * 6))
    assert all(np.array_equal(p.pseudo_distributions[0], q) for q in p.pseudo_distributions)


def test_feature_noise_pseudo_moves_with_noise():
    p = datagen.generate(scenario(skew_mode="feature_noise", noise_levels=[0, 0, 0, 1, 2, 3]))
    emds = [hetero.emd(q, p.pseudo_distributions[0]) for q in p.pseudo_distributions]
    assert emds[0] == 0 and emds[3] < emds[4] < emds[5]


def test_too_many_single_class_clients():
    with pytest.raises(ValidationError):
        scenario(num_clients=8, num_classes=6, samples_per_client=[10] * 8, fraction=1.0)


@pytest.mark.parametrize("kw", [dict(num_clients=1, samples_per_client=[5]), dict(samples_per_client=[0] * 6),
                                dict(skew_mode="dirichlet", alpha=0.0), dict(skew_mode="bogus")])
def test_invalid_scenarios(kw):
    with pytest.raises(ValidationError):
        scenario(**kw)


def test_regeneration_bit_identical():
    a, b = datagen.generate(scenario()), datagen.generate(scenario())
    for x, y in zip(a.clients, b.clients):
        assert x.features.tobytes() == y.features.tobytes()
        assert x.labels.tobytes() == y.labels.tobytes()
    assert a.test.features.tobytes() == b.test.features.tobytes()


def test_label_distribution_matches_histogram():
    p = datagen.generate(scenario(skew_mode="dirichlet", alpha=0.3))
    for c in p.clients:
        assert np.allclose(c.label_distribution, np.bincount(c.labels, minlength=6) / c.n)
        assert c.features.shape == (c.n, 32)


def _cluster(p, head=5, members=(0, 1)):
    return ClusterAssignment((head, *[k for k in range(6) if k != head and k not in members]),
                             {head: tuple(members)})


def test_apply_sharing_zero_volume_unchanged():
    p = datagen.generate(scenario())
    out = datagen.apply_sharing(p.clients, _cluster(p), {5: 0}, 0)
    assert all(a is b for a, b in zip(out, p.clients))


def test_apply_sharing_full_volume_matches_mixture_exactly():
    p = datagen.generate(scenario())
    out = datagen.apply_sharing(p.clients, _cluster(p), {5: 120}, 0)
    for m in (0, 1):
        n, want = hetero.mix_distribution(120, p.clients[m].label_distribution, 120, p.clients[5].label_distribution)
        assert out[m].n == n
        assert np.allclose(out[m].label_distribution, want, atol=1e-12)


def test_apply_sharing_members_receive_identical_rows():
    p = datagen.generate(scenario())
    out = datagen.apply_sharing(p.clients, _cluster(p), {5: 40}, 9)
    assert out[0].features[120:].tobytes() == out[1].features[120:].tobytes()
    assert out[0].labels[120:].tobytes() == out[1].labels[120:].tobytes()


def test_apply_sharing_conserves_and_never_mutates_head():
    p = datagen.generate(scenario())
    before = p.clients[5].features.copy()
    out = datagen.apply_sharing(p.clients, _cluster(p), {5: 30}, 1)
    assert np.array_equal(out[5].features, before)
    assert sum(c.n for c in out) == sum(c.n for c in p.clients) + 2 * 30


def test_apply_sharing_over_volume():
    p = datagen.generate(scenario())
    with pytest.raises(ConstraintViolation):
        datagen.apply_sharing(p.clients, _cluster(p), {5: 121}, 0)


def test_apply_sharing_monte_carlo_mixture():
    # Partial sharing from a uniform head: the member's histogram matches the mixture law on average.
    sc = scenario(num_clients=4, num_classes=4, samples_per_client=[1000] * 4, fraction=0.75)
    gaps = []
    for s in range(5):
        p = datagen.generate(datagen.Scenario(**{**sc.to_dict(), "rng_seed": s}))
        a = ClusterAssignment((3, 1, 2), {3: (0,)})
        out = datagen.apply_sharing(p.clients, a, {3: 500}, s)
        _, want = hetero.mix_distribution(1000, p.clients[0].label_distribution, 500, p.clients[3].label_distribution)
        gaps.append(hetero.emd(out[0].label_distribution, want))
    assert np.mean(gaps) <= 0.1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 120), st.integers(0, 2**16))
def test_apply_sharing_total_property(v, seed):
    p = datagen.generate(scenario())
    out = datagen.apply_sharing(p.clients, _cluster(p), {5: v}, seed)
    assert sum(c.n for c in out) == 720 + 2 * v
    for m in (0, 1):
        assert abs(out[m].label_distribution.sum() - 1) < 1e-12


def test_binary_dump_roundtrip(tmp_path):
    p = datagen.generate(scenario())
    paths = datagen.dump_partition(p, tmp_path)
    back = datagen.load_client(paths[0])
    assert np.array_equal(back.features, p.clients[0].features.astype(np.float32))
    assert np.array_equal(back.labels, p.clients[0].labels)


def test_read_idx(tmp_path):
    import gzip
    import struct
    data = np.arange(12, dtype=np.uint8).reshape(3, 4)
    raw = struct.pack(">HBB", 0, 0x08, 2) + struct.pack(">II", 3, 4) + data.tobytes()
    (tmp_path / "x.idx").write_bytes(raw)
    (tmp_path / "x.idx.gz").write_bytes(gzip.compress(raw))
    assert np.array_equal(datagen.read_idx(tmp_path / "x.idx"), data)
    assert np.array_equal(datagen.read_idx(tmp_path / "x.idx.gz"), data)
