import numpy as np
import pytest
from scipy.special import expit, logit

from bglgm.covariance import matern_correlation, pairwise_distances
from bglgm.data import PlotRecord, SpatialDataset, build_design_matrix, design_from_covariates
from bglgm.errors import DataValidationError
from bglgm.sampling import (
    Strata,
    SyntheticConfig,
    generate_synthetic_dataset,
    make_strata,
    random_subsample,
    stratified_subsample,
    _largest_remainder_quotas,
)


def cloud_dataset(centers, per_cloud=10, seed=0, elevations=None):
    rng = np.random.default_rng(seed)
    records = []
    for c, (cx, cy) in enumerate(centers):
        elev = 320.0 if elevations is None else elevations[c]
        for i in range(per_cloud):
            records.append(PlotRecord(
                id=f"c{c}_{i}",
                x=cx + rng.normal(0, 0.05),
                y=cy + rng.normal(0, 0.05),
                n_total=10, y_hardwood=2,
                elevation=elev + rng.normal(0, 1.0),
                vegetation=float(rng.uniform(0, 1)),
            ))
    return SpatialDataset(tuple(records))


class TestMakeStrata:
    def test_recovers_separated_clouds(self):
        data = cloud_dataset([(0, 0), (50, 0), (0, 50)], per_cloud=12, seed=1)
        strata = make_strata(data, k=3, seed=7)
        # the three clouds map to three distinct labels
        labels = {}
        for sid, lab in strata.assignment.items():
            labels.setdefault(sid.split("_")[0], set()).add(lab)
        assert all(len(v) == 1 for v in labels.values())
        assert len(set.union(*labels.values())) == 3

    def test_every_site_assigned_and_nonempty(self):
        data = cloud_dataset([(0, 0), (10, 10)], per_cloud=8, seed=2)
        strata = make_strata(data, k=3, seed=3)
        assert set(strata.assignment) == set(data.ids)
        for s in range(3):
            assert strata.members(s)

    def test_k_equals_data_size(self):
        data = cloud_dataset([(0, 0)], per_cloud=5, seed=3)
        strata = make_strata(data, k=5, seed=1)
        assert sorted(len(strata.members(s)) for s in range(5)) == [1] * 5

    def test_deterministic_given_seed(self):
        data = cloud_dataset([(0, 0), (8, 3)], per_cloud=10, seed=4)
        a = make_strata(data, seed=11)
        b = make_strata(data, seed=11)
        assert a.assignment == b.assignment

    def test_beats_random_assignments(self):
        data = cloud_dataset([(0, 0), (5, 5), (9, 1)], per_cloud=12, seed=5)
        strata = make_strata(data, k=3, seed=9)
        feats = np.column_stack([data.coords, data.elevation])
        feats = (feats - feats.mean(0)) / feats.std(0)
        labels = np.array([strata.assignment[sid] for sid in data.ids])

        def within_ss(lab):
            total = 0.0
            for s in range(3):
                members = feats[lab == s]
                if len(members):
                    total += ((members - members.mean(0)) ** 2).sum()
            return total

        ours = within_ss(labels)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            random_lab = rng.integers(0, 3, len(data))
            assert ours <= within_ss(random_lab) + 1e-9

    def test_degenerate_data_rejected(self):
        # identical sites (up to the dedup jitter) carry no stratification
        # signal and are refused
        records = tuple(
            PlotRecord(id=f"p{i}", x=1.0, y=2.0, n_total=5, y_hardwood=1,
                       elevation=300.0, vegetation=0.5)
            for i in range(6)
        )
        data = SpatialDataset(records)
        with pytest.raises(DataValidationError):
            make_strata(data, k=2, seed=0)

    def test_too_few_sites_rejected(self):
        data = cloud_dataset([(0, 0)], per_cloud=2, seed=6)
        with pytest.raises(DataValidationError):
            make_strata(data, k=3, seed=0)


class TestStratifiedSubsample:
    def test_largest_remainder_quotas(self):
        np.testing.assert_array_equal(
            _largest_remainder_quotas(np.array([40, 35, 25]), 25), [10, 9, 6]
        )
        np.testing.assert_array_equal(
            _largest_remainder_quotas(np.array([3, 3, 3]), 9), [3, 3, 3]
        )
        assert _largest_remainder_quotas(np.array([5, 4]), 2).sum() == 2

    def test_systematic_selection_within_stratum(self):
        # one stratum of ten sites with vegetation 0.1..1.0 and quota five:
        # every second element of the sorted order, starting at the first
        records = tuple(
            PlotRecord(id=f"s{i}", x=float(i), y=0.0, n_total=5, y_hardwood=1,
                       elevation=300.0, vegetation=(i + 1) / 10.0)
            for i in range(10)
        )
        data = SpatialDataset(records)
        strata = Strata(assignment={sid: 0 for sid in data.ids}, centroids=((0.0, 0.0, 0.0),))
        chosen = stratified_subsample(data, strata, 5)
        veg = sorted((r.vegetation, r.id) for r in data.records)
        expected = {veg[i][1] for i in (0, 2, 4, 6, 8)}
        assert set(chosen) == expected

    def test_full_sample_returns_everything(self):
        data = cloud_dataset([(0, 0), (10, 0)], per_cloud=6, seed=7)
        strata = make_strata(data, k=2, seed=2)
        assert stratified_subsample(data, strata, len(data)) == list(data.ids)

    def test_quota_sums_and_uniqueness(self):
        data = cloud_dataset([(0, 0), (10, 0), (0, 10)], per_cloud=9, seed=8)
        strata = make_strata(data, k=3, seed=2)
        for m in (5, 10, 18, 27):
            chosen = stratified_subsample(data, strata, m)
            assert len(chosen) == m
            assert len(set(chosen)) == m

    def test_deterministic(self):
        data = cloud_dataset([(0, 0), (10, 0)], per_cloud=10, seed=9)
        strata = make_strata(data, k=2, seed=5)
        assert stratified_subsample(data, strata, 7) == stratified_subsample(data, strata, 7)

    def test_fewer_than_strata_warns(self, caplog):
        data = cloud_dataset([(0, 0), (10, 0), (0, 10)], per_cloud=5, seed=10)
        strata = make_strata(data, k=3, seed=1)
        with caplog.at_level("WARNING"):
            chosen = stratified_subsample(data, strata, 2)
        assert len(chosen) == 2
        assert any("strata" in rec.message for rec in caplog.records)

    def test_nested_subsampling(self):
        # select 10 from the 25-subset using strata inherited from the pool
        data = cloud_dataset([(0, 0), (10, 0), (0, 10)], per_cloud=12, seed=11)
        strata = make_strata(data, k=3, seed=4)
        first = stratified_subsample(data, strata, 25)
        subset = data.subset(first)
        sub_strata = Strata(
            assignment={sid: strata.assignment[sid] for sid in subset.ids},
            centroids=strata.centroids,
        )
        second = stratified_subsample(subset, sub_strata, 10)
        assert set(second) <= set(first)
        assert len(second) == 10


class TestRandomSubsample:
    def test_empty_and_full(self):
        data = cloud_dataset([(0, 0)], per_cloud=8, seed=12)
        assert random_subsample(data, 0, seed=0) == []
        assert random_subsample(data, 8, seed=0) == list(data.ids)

    def test_deterministic_given_seed(self):
        data = cloud_dataset([(0, 0), (5, 5)], per_cloud=10, seed=13)
        assert random_subsample(data, 6, seed=3) == random_subsample(data, 6, seed=3)

    def test_uniform_selection_frequencies(self):
        data = cloud_dataset([(0, 0), (5, 5)], per_cloud=50, seed=14)
        hits = {sid: 0 for sid in data.ids}
        for rep in range(10_000):
            for sid in random_subsample(data, 10, seed=rep):
                hits[sid] += 1
        freqs = np.array(list(hits.values())) / 10_000
        assert freqs.min() > 0.07 and freqs.max() < 0.13


class TestSyntheticGenerator:
    def test_saturating_intercept(self):
        config = SyntheticConfig(n_sites=80, beta=(-10.0, 0.0, 0.0, 0.0), seed=1)
        data, _, _ = generate_synthetic_dataset(config)
        assert data.y_hardwood.sum() <= 2

    def test_deterministic_given_seed(self):
        config = SyntheticConfig(n_sites=30, seed=99)
        a, _, _ = generate_synthetic_dataset(config)
        b, _, _ = generate_synthetic_dataset(config)
        assert a.records == b.records

    def test_truth_record_consistency(self):
        config = SyntheticConfig(n_sites=25, seed=21)
        data, _, truth = generate_synthetic_dataset(config)
        X = build_design_matrix(data)
        np.testing.assert_allclose(
            truth.t, X.values @ truth.beta + truth.u + truth.z, atol=1e-10
        )
        np.testing.assert_allclose(truth.p, expit(truth.t), atol=1e-12)
        assert np.all(data.y_hardwood <= data.n_total)

    def test_no_noise_moment_match(self):
        # with sigma2 = tau2 = 0 the pooled empirical logit tracks the
        # regression surface up to binomial error
        config = SyntheticConfig(
            n_sites=400, beta=(-0.8, 0.0, 0.0, 0.0), sigma2=0.0, tau2=0.0,
            n_total_min=40, n_total_max=40, seed=5,
        )
        data, _, _ = generate_synthetic_dataset(config)
        X = build_design_matrix(data).values
        eta = X @ np.array([-0.8, 0.0, 0.0, 0.0])
        pooled = data.y_hardwood.sum() / data.n_total.sum()
        expected = expit(eta).mean()
        assert pooled == pytest.approx(expected, abs=0.02)

    def test_raster_covariates_align_with_grid(self):
        config = SyntheticConfig(n_sites=20, seed=3, raster_nx=6, raster_ny=5)
        data, rasters, _ = generate_synthetic_dataset(config)
        assert rasters["elevation"].shape == (5, 6)
        assert rasters["vegetation"].shape == (5, 6)
        assert np.all((rasters["vegetation"] > 0) & (rasters["vegetation"] < 1))
        grid = rasters["grid"]
        assert grid.nx == 6 and grid.ny == 5

    def test_vegetation_spans_change_point(self):
        config = SyntheticConfig(n_sites=200, seed=8)
        data, _, _ = generate_synthetic_dataset(config)
        veg = data.vegetation
        assert (veg < 0.3).mean() > 0.1
        assert (veg > 0.3).mean() > 0.1

    @pytest.mark.slow
    def test_variogram_recovers_field_structure(self):
        # empirical semivariogram of (t - X beta) rises with distance and its
        # sill approaches sigma2 + tau2; averaged over a few realizations to
        # tame single-field variance fluctuations
        bins = np.array([0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
        edges = np.r_[0.0, bins]
        gammas = []
        for seed in range(6):
            config = SyntheticConfig(
                n_sites=500, box_km=20.0, sigma2=0.6, tau2=0.3, phi=1.5,
                n_total_min=50, n_total_max=50, seed=33 + seed,
            )
            data, _, truth = generate_synthetic_dataset(config)
            w = truth.u + truth.z
            dist = pairwise_distances(data.coords)
            iu = np.triu_indices_from(dist, k=1)
            d = dist[iu]
            sq = 0.5 * (w[:, None] - w[None, :])[iu] ** 2
            gammas.append([
                sq[(d >= lo) & (d < hi)].mean()
                for lo, hi in zip(edges[:-1], edges[1:])
            ])
        gamma = np.asarray(gammas).mean(axis=0)
        assert np.all(np.diff(gamma[:4]) > 0)
        sill = gamma[-2:].mean()
        assert abs(sill - 0.9) / 0.9 < 0.25
