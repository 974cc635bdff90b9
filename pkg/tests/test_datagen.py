import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distinf.datagen import (
    BaseDistributionSpec,
    DatasetTable,
    RatioTransformer,
    apply_ratio,
    augment_oversample,
    load_csv,
    measure_correlation,
    oversample,
    poison_labels,
    round_half_up,
    save_csv,
    split_victim_adversary,
    synth_generate,
    undersample,
)
from distinf.errors import (
    DegenerateColumn,
    DistInfError,
    InsufficientData,
    MissingColumn,
    NonBinaryLabel,
    NonNumericFeature,
)


@pytest.fixture
def spec():
    return BaseDistributionSpec.with_correlation(0.3, feature_dim=4)


def table_with_counts(n_ones, n_zeros, seed=0, dim=3):
    rng = np.random.default_rng(seed)
    n = n_ones + n_zeros
    prop = np.array([1] * n_ones + [0] * n_zeros)
    return DatasetTable(rng.standard_normal((n, dim)), rng.integers(0, 2, n), prop)


def phi_bruteforce(y, p):
    # Pearson correlation of the two 0/1 columns, computed directly
    return float(np.corrcoef(y.astype(float), p.astype(float))[0, 1])


class TestSynthGenerate:
    def test_ratio_one_gives_all_ones(self, spec):
        t = synth_generate(spec, 100, 1.0, seed=7)
        assert t.property_attrs.tolist() == [1] * 100

    def test_independent_task_has_near_zero_phi(self):
        spec = BaseDistributionSpec.with_correlation(0.0)
        assert spec.task_given_property == (0.5, 0.5)
        t = synth_generate(spec, 100_000, 0.5, seed=1)
        phi = measure_correlation(t)
        assert abs(phi) <= 0.02
        assert phi == pytest.approx(phi_bruteforce(t.task_labels, t.property_attrs), abs=1e-12)

    def test_deterministic(self, spec):
        a = synth_generate(spec, 500, 0.3, seed=3)
        b = synth_generate(spec, 500, 0.3, seed=3)
        assert a.to_bytes() == b.to_bytes()
        assert not a.equals(synth_generate(spec, 500, 0.3, seed=4))

    @pytest.mark.parametrize("ratio", [0.3, 0.5, 0.7])
    def test_measured_phi_converges_to_implied(self, spec, ratio):
        t = synth_generate(spec, 200_000, ratio, seed=11)
        assert measure_correlation(t) == pytest.approx(spec.implied_correlation(ratio), abs=0.01)

    def test_with_correlation_hits_target_at_half(self):
        for phi in (-0.6, 0.0, 0.3, 0.9):
            assert BaseDistributionSpec.with_correlation(phi).implied_correlation(0.5) == pytest.approx(phi)

    def test_rejects_bad_arguments(self, spec):
        with pytest.raises(DistInfError):
            synth_generate(spec, 0, 0.5, seed=0)
        with pytest.raises(DistInfError):
            synth_generate(spec, 10, 1.5, seed=0)
        with pytest.raises(DistInfError):
            BaseDistributionSpec(2, np.zeros((2, 2, 2)), 1.0, (0.5, 1.2))

    def test_table_is_immutable(self, spec):
        t = synth_generate(spec, 10, 0.5, seed=0)
        with pytest.raises(ValueError):
            t.features[0, 0] = 1.0


class TestApplyRatio:
    def test_balanced_draw(self):
        t = table_with_counts(60, 40)
        out = apply_ratio(t, RatioTransformer(0.5, 80), seed=0)
        assert out.n == 80
        assert int(out.property_attrs.sum()) == 40

    def test_alpha_zero(self):
        out = apply_ratio(table_with_counts(60, 40), RatioTransformer(0.0, 10), seed=0)
        assert out.property_attrs.tolist() == [0] * 10

    def test_deterministic_and_without_replacement(self):
        t = table_with_counts(60, 40)
        a = apply_ratio(t, RatioTransformer(0.3, 50), seed=5)
        b = apply_ratio(t, RatioTransformer(0.3, 50), seed=5)
        assert a.equals(b)
        assert np.unique(a.row_ids).size == 50

    def test_insufficient(self):
        with pytest.raises(InsufficientData):
            apply_ratio(table_with_counts(10, 90), RatioTransformer(0.5, 40), seed=0)

    def test_round_half_up(self):
        assert RatioTransformer(0.35, 10).n_ones == 4
        assert RatioTransformer(0.25, 10).n_ones == 3
        assert round_half_up(2.5) == 3 and round_half_up(2.49) == 2

    def test_transformer_validation(self):
        with pytest.raises(DistInfError):
            RatioTransformer(1.1, 10)
        with pytest.raises(DistInfError):
            RatioTransformer(0.5, 0)


class TestSplit:
    def test_sizes_and_disjointness(self):
        t = table_with_counts(50, 50)
        v, a = split_victim_adversary(t, 0.8, seed=0)
        assert (v.n, a.n) == (80, 20)
        assert not set(v.row_ids) & set(a.row_ids)
        assert sorted(np.concatenate([v.row_ids, a.row_ids])) == list(range(100))

    def test_stratified(self):
        t = table_with_counts(50, 50, seed=2)
        v, a = split_victim_adversary(t, 0.5, seed=1)
        assert abs(int(v.property_attrs.sum()) - 25) <= 1
        assert abs(int(a.property_attrs.sum()) - 25) <= 1

    def test_deterministic(self):
        t = table_with_counts(30, 70)
        assert split_victim_adversary(t, 0.3, 9)[0].equals(split_victim_adversary(t, 0.3, 9)[0])

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_rejects_fraction(self, frac):
        with pytest.raises(DistInfError):
            split_victim_adversary(table_with_counts(5, 5), frac, 0)


class TestResampling:
    def test_undersample_counts(self):
        out = undersample(table_with_counts(70, 30), 0.5, seed=0)
        assert (int(out.property_attrs.sum()), int((out.property_attrs == 0).sum())) == (30, 30)

    def test_undersample_keeps_minority_untouched(self):
        t = table_with_counts(70, 30)
        out = undersample(t, 0.5, seed=0)
        zeros = t.row_ids[t.property_attrs == 0]
        assert set(zeros) <= set(out.row_ids)
        assert set(out.row_ids) <= set(t.row_ids)

    def test_undersample_identity_at_target(self):
        t = table_with_counts(50, 50)
        assert undersample(t, 0.5, seed=0) is t

    def test_undersample_density_preservation(self):
        # a marked subset of the pruned class survives at that class's rate
        t = table_with_counts(70, 30)
        marked = set(t.row_ids[:20].tolist())  # all attribute 1
        rates = []
        for seed in range(1000):
            out = undersample(t, 0.5, seed)
            rates.append(len(marked & set(out.row_ids.tolist())) / 20)
        assert np.mean(rates) == pytest.approx(30 / 70, abs=0.03)

    def test_undersample_rejects_empty_result(self):
        with pytest.raises(InsufficientData):
            undersample(table_with_counts(5, 0), 0.5, seed=0)

    def test_oversample_counts(self):
        t = table_with_counts(70, 30)
        out = oversample(t, 0.5, seed=0)
        assert (int(out.property_attrs.sum()), int((out.property_attrs == 0).sum())) == (70, 70)
        zero_ids = set(t.row_ids[t.property_attrs == 0].tolist())
        assert set(out.row_ids[out.property_attrs == 0].tolist()) == zero_ids

    def test_oversample_keeps_originals_and_copies_exactly(self):
        t = table_with_counts(70, 30)
        out = oversample(t, 0.5, seed=1)
        assert out.take(np.arange(t.n)).equals(t)
        for i in range(t.n, out.n):
            src = out.row_ids[i]
            np.testing.assert_array_equal(out.features[i], t.features[src])
            assert out.task_labels[i] == t.task_labels[src]

    def test_oversample_identity_and_errors(self):
        t = table_with_counts(50, 50)
        assert oversample(t, 0.5, seed=0) is t
        with pytest.raises(InsufficientData):
            oversample(table_with_counts(10, 0), 0.5, seed=0)
        with pytest.raises(InsufficientData):
            oversample(table_with_counts(10, 10), 1.0, seed=0)

    def test_augment_zero_noise_matches_oversample(self):
        t = table_with_counts(70, 30)
        assert augment_oversample(t, 0.5, 0.0, seed=4).equals(oversample(t, 0.5, seed=4))

    def test_augment_rows_are_new_but_keep_labels(self):
        t = table_with_counts(70, 30)
        out = augment_oversample(t, 0.5, 0.1, seed=4)
        ref = oversample(t, 0.5, seed=4)
        assert out.n == ref.n
        synth = out.features[t.n :]
        assert not any((synth[i] == t.features).all(axis=1).any() for i in range(len(synth)))
        src = out.row_ids[t.n :]
        np.testing.assert_array_equal(out.task_labels[t.n :], t.task_labels[src])
        np.testing.assert_array_equal(out.property_attrs[t.n :], t.property_attrs[src])

    def test_augment_rejects_negative_sigma(self):
        with pytest.raises(DistInfError):
            augment_oversample(table_with_counts(7, 3), 0.5, -1.0, seed=0)


class TestPoison:
    def test_zero_and_one(self):
        t = table_with_counts(50, 50)
        assert poison_labels(t, 0.0, 0).equals(t)
        np.testing.assert_array_equal(poison_labels(t, 1.0, 0).task_labels, 1 - t.task_labels)

    def test_exact_count(self):
        t = table_with_counts(50, 50)
        out = poison_labels(t, 0.2, 3)
        assert int(np.sum(out.task_labels != t.task_labels)) == 20
        np.testing.assert_array_equal(out.features, t.features)
        np.testing.assert_array_equal(out.property_attrs, t.property_attrs)

    def test_involution(self):
        t = table_with_counts(40, 60)
        assert poison_labels(poison_labels(t, 0.3, 8), 0.3, 8).equals(t)

    def test_rejects_r(self):
        with pytest.raises(DistInfError):
            poison_labels(table_with_counts(5, 5), 1.2, 0)


class TestCorrelation:
    def _table(self, y, p):
        return DatasetTable(np.zeros((len(y), 1)), y, p)

    def test_identical_and_complement(self):
        p = np.array([0, 1, 1, 0, 1])
        assert measure_correlation(self._table(p, p)) == 1.0
        assert measure_correlation(self._table(1 - p, p)) == -1.0

    def test_independent_table(self):
        y = np.array([0] * 50 + [1] * 50)
        p = np.array(([0] * 25 + [1] * 25) * 2)
        assert measure_correlation(self._table(y, p)) == 0.0

    def test_degenerate(self):
        with pytest.raises(DegenerateColumn):
            measure_correlation(self._table(np.ones(4, int), np.array([0, 1, 0, 1])))


class TestCsv:
    def test_load(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("f1,f2,y,p\n1.0,5,1,0\n2.0,5,0,1\n3.0,5,1,1\n")
        t = load_csv(f, "y", "p")
        assert t.features.shape == (3, 2)
        assert t.task_labels.tolist() == [1, 0, 1]
        assert t.property_attrs.tolist() == [0, 1, 1]
        np.testing.assert_allclose(t.features[:, 0], [-1.224744871391589, 0.0, 1.224744871391589])
        assert t.features[:, 1].tolist() == [0.0, 0.0, 0.0]

    def test_missing_column(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("f1,y\n1,0\n")
        with pytest.raises(MissingColumn):
            load_csv(f, "y", "p")

    def test_non_binary_and_non_numeric(self, tmp_path):
        f = tmp_path / "a.csv"
        f.write_text("f1,y,p\n1,2,0\n")
        with pytest.raises(NonBinaryLabel, match="row 1"):
            load_csv(f, "y", "p")
        g = tmp_path / "b.csv"
        g.write_text("f1,y,p\n1,1,0\nabc,0,1\n")
        with pytest.raises(NonNumericFeature, match=r"row 2, column 'f1'"):
            load_csv(g, "y", "p")

    def test_roundtrip(self, tmp_path, spec):
        t = synth_generate(spec, 50, 0.4, seed=2)
        save_csv(t, tmp_path / "t.csv")
        back = load_csv(tmp_path / "t.csv", "task", "property", standardize_features=False)
        np.testing.assert_array_equal(back.features, t.features)
        np.testing.assert_array_equal(back.task_labels, t.task_labels)
        np.testing.assert_array_equal(back.property_attrs, t.property_attrs)


@st.composite
def tables(draw):
    n1 = draw(st.integers(1, 60))
    n0 = draw(st.integers(1, 60))
    return table_with_counts(n1, n0, seed=draw(st.integers(0, 10)))


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(tables(), st.floats(0.05, 0.95), st.integers(0, 2**31))
    def test_resampling_hits_ratio(self, t, alpha, seed):
        for fn in (undersample, oversample):
            try:
                out = fn(t, alpha, seed)
            except InsufficientData:
                continue
            assert abs(out.property_ratio - alpha) <= 1.0 / out.n + 1e-12

    @settings(max_examples=60, deadline=None)
    @given(tables(), st.floats(0.0, 1.0), st.integers(1, 40), st.integers(0, 2**31))
    def test_apply_ratio_exact(self, t, alpha, size, seed):
        rt = RatioTransformer(alpha, size)
        try:
            out = apply_ratio(t, rt, seed)
        except InsufficientData:
            return
        assert int(out.property_attrs.sum()) == rt.n_ones
        assert abs(out.property_ratio - alpha) <= 1.0 / size

    @settings(max_examples=40, deadline=None)
    @given(tables(), st.floats(0.05, 0.95), st.integers(0, 2**31))
    def test_split_partitions(self, t, frac, seed):
        try:
            v, a = split_victim_adversary(t, frac, seed)
        except InsufficientData:
            assert round_half_up(frac * t.n) in (0, t.n)
            return
        assert v.n == round_half_up(frac * t.n)
        assert sorted(np.concatenate([v.row_ids, a.row_ids]).tolist()) == list(range(t.n))
