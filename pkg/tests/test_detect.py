import json

import numpy as np
import pytest
from scipy.special import gammaincc
from scipy.stats import norm

from lowtide import (
    DetectionReport,
    HeavyWater,
    InfiniteCEError,
    RedGreen,
    SchemeConfig,
    SideInfoConfig,
    SideInfoStream,
    SimplexWater,
    SourceConfig,
    SpikeIID,
    TokenDistribution,
    ZeroNullVarianceError,
    CorrelatedChannel,
    Gumbel,
    cross_entropy,
    detect,
    detect_correlated_channel,
    detect_gumbel,
    detect_red_green,
    generate,
    gumbel_exact_p,
    lognormal_family,
    normal_cdf,
    normal_sf,
    random_score,
    simplex_score,
    watermark_size,
    z_test_report,
)


class TestNormalCdf:
    def test_against_scipy(self):
        zs = np.linspace(-10, 10, 4001)
        for z in zs:
            assert abs(normal_cdf(float(z)) - norm.cdf(z)) < 1e-12
            assert abs(normal_sf(float(z)) - norm.sf(z)) < 1e-12

    def test_symmetry(self):
        for z in (0.3, 1.7, 4.2):
            assert normal_cdf(z) + normal_sf(z) == pytest.approx(1.0)
            assert normal_sf(-z) == pytest.approx(normal_cdf(z))

    def test_far_tail_relative_accuracy(self):
        for z in (8.0, 12.0, 20.0):
            assert normal_sf(z) == pytest.approx(norm.sf(z), rel=1e-10)


class TestZTestReport:
    def test_z_three(self):
        # 100 normalized scores summing to 30: z = 30 / sqrt(100) = 3
        scores = np.zeros(100)
        scores[:30] = 1.0
        report = z_test_report(scores, np.zeros(100), np.ones(100))
        assert report.z == pytest.approx(3.0)
        assert report.p_value == pytest.approx(1.3498980316300957e-3, rel=1e-9)

    def test_empty_sequence(self):
        report = z_test_report(np.empty(0), np.empty(0), np.empty(0))
        assert report.n == 0 and report.p_value == 1.0 and report.z == 0.0

    def test_zero_variance_raises(self):
        with pytest.raises(ZeroNullVarianceError):
            z_test_report(np.ones(5), np.zeros(5), np.zeros(5))

    def test_p_monotone_in_z(self):
        reports = []
        for total in (5, 15, 30):
            scores = np.zeros(100)
            scores[:total] = 1.0
            reports.append(z_test_report(scores, np.zeros(100), np.ones(100)))
        zs = [r.z for r in reports]
        ps = [r.p_value for r in reports]
        assert zs == sorted(zs)
        assert ps == sorted(ps, reverse=True)

    def test_first_crossing_only(self):
        # strong prefix, then noise: crossing index must use the first prefix
        scores = np.concatenate([np.full(25, 1.0), np.full(75, 0.0)])
        report = z_test_report(scores, np.zeros(100), np.ones(100), p_star=1e-3)
        assert report.tokens_to_threshold is not None
        prefix = report.per_token_scores[: report.tokens_to_threshold]
        z = prefix.sum() / np.sqrt(prefix.size)
        assert normal_sf(z) <= 1e-3
        shorter = prefix[:-1]
        if shorter.size:
            assert normal_sf(shorter.sum() / np.sqrt(shorter.size)) > 1e-3

    def test_p_floor(self):
        scores = np.full(4000, 1.0)
        report = z_test_report(scores, np.zeros(4000), np.ones(4000))
        assert report.p_value == 1e-300


def _make_stream_cfg(k, key=42, scheme="fresh"):
    return SideInfoConfig(key=key, k=k, scheme=scheme)


class TestDetectRoundTrip:
    @pytest.mark.parametrize(
        "variant,needs_matrix",
        [
            (SimplexWater(), True),
            (HeavyWater(k=32), True),
            (RedGreen(gamma=0.5, delta_rg=1.5), False),
            (Gumbel(), False),
            (CorrelatedChannel(k=2), False),
        ],
        ids=["simplex", "heavy", "red-green", "gumbel", "cc"],
    )
    def test_scores_match_generation_trace(self, variant, needs_matrix):
        m = 16
        source = SourceConfig(SpikeIID(0.7), m=m, seed=3)
        if isinstance(variant, SimplexWater):
            f = simplex_score(m)
        elif isinstance(variant, HeavyWater):
            f = random_score(m, variant.k, variant.family, seed=5)
        else:
            f = None
        side = _make_stream_cfg(
            f.k if f is not None else (variant.k if hasattr(variant, "k") else 1)
        )
        scheme = SchemeConfig(variant=variant)
        result = generate(source, scheme, f, side, n=60, seed=11)
        if isinstance(variant, SimplexWater) or isinstance(variant, HeavyWater):
            report = detect(result.tokens, f, side)
        elif isinstance(variant, RedGreen):
            report = detect_red_green(result.tokens, side, m, variant.gamma)
        elif isinstance(variant, Gumbel):
            report = detect_gumbel(result.tokens, side, m)
        else:
            report = detect_correlated_channel(result.tokens, side, m, variant.k)
        generated = [step.score for step in result.trace]
        assert list(report.per_token_scores) == generated

    def test_detect_rejects_alphabet_mismatch(self):
        f = simplex_score(8)
        with pytest.raises(ValueError):
            detect([0, 1], f, _make_stream_cfg(9))

    def test_detect_rejects_out_of_range_token(self):
        f = simplex_score(8)
        with pytest.raises(ValueError):
            detect([0, 8], f, _make_stream_cfg(7))


class TestNullCalibration:
    def test_fraction_below_alpha(self):
        # unwatermarked tokens: p < 0.05 should occur for about 5% of trials
        m, n, trials = 16, 120, 400
        f = random_score(m, 64, lognormal_family(), seed=2)
        rng = np.random.default_rng(0)
        hits = 0
        for t in range(trials):
            tokens = rng.integers(m, size=n)
            report = detect(tokens, f, _make_stream_cfg(64, key=1000 + t))
            hits += report.p_value < 0.05
        assert 0.02 <= hits / trials <= 0.09

    def test_null_z_moments(self):
        m, n, trials = 16, 150, 300
        f = random_score(m, 64, lognormal_family(), seed=2)
        rng = np.random.default_rng(1)
        zs = []
        for t in range(trials):
            tokens = rng.integers(m, size=n)
            zs.append(detect(tokens, f, _make_stream_cfg(64, key=5000 + t)).z)
        assert abs(np.mean(zs)) < 0.2
        assert 0.75 < np.var(zs) < 1.3


class TestGumbelExact:
    def test_matches_gamma_tail_replay(self):
        m = 8
        side = _make_stream_cfg(4, key=9)
        tokens = [3, 1, 7, 2, 0]
        stream = SideInfoStream(side)
        total = 0.0
        for t, token in enumerate(tokens):
            u = stream.draw_uniforms(tokens[:t], m)
            total += -np.log1p(-u[token])
        assert gumbel_exact_p(tokens, side, m) == pytest.approx(
            float(gammaincc(len(tokens), total))
        )

    def test_empty_sequence(self):
        assert gumbel_exact_p([], _make_stream_cfg(4), 8) == 1.0

    def test_single_token_tail_formula(self):
        # Gamma(1,1) upper tail is exp(-T)
        side = _make_stream_cfg(4, key=77)
        u = SideInfoStream(side).draw_uniforms((), 8)
        p = gumbel_exact_p([5], side, 8)
        assert p == pytest.approx(np.exp(np.log1p(-u[5])))

    def test_null_is_uniform(self):
        m, n, trials = 8, 80, 300
        rng = np.random.default_rng(3)
        pvals = []
        for t in range(trials):
            tokens = rng.integers(m, size=n)
            pvals.append(gumbel_exact_p(tokens, _make_stream_cfg(4, key=t), m))
        from scipy.stats import kstest

        assert kstest(pvals, "uniform").statistic < 1.63 / np.sqrt(trials)


class TestWatermarkSize:
    def test_all_reach_same(self):
        reports = [DetectionReport(100, np.zeros(100), 0, 0, 0.5, 50) for _ in range(4)]
        size = watermark_size(reports)
        assert size.mean_tokens == 50.0 and size.fraction_missing == 0.0

    def test_mixed_sizes(self):
        reports = [
            DetectionReport(100, np.zeros(100), 0, 0, 0.5, 40),
            DetectionReport(100, np.zeros(100), 0, 0, 0.5, 60),
        ]
        assert watermark_size(reports).mean_tokens == 50.0

    def test_missing_fraction(self):
        reports = [
            DetectionReport(100, np.zeros(100), 0, 0, 0.5, 40),
            DetectionReport(100, np.zeros(100), 0, 0, 0.5, None),
        ]
        size = watermark_size(reports)
        assert size.mean_tokens == 40.0 and size.fraction_missing == 0.5


class TestCrossEntropy:
    def test_direct_arithmetic(self):
        laws = [np.array([0.8, 0.2])] * 3
        value = cross_entropy([0, 0, 1], laws)
        assert value == pytest.approx(-(2 * np.log(0.8) + np.log(0.2)) / 3)

    def test_deterministic_source_zero(self):
        laws = [np.array([1.0, 0.0])] * 5
        assert cross_entropy([0] * 5, laws) == 0.0

    def test_zero_probability_token_raises(self):
        with pytest.raises(InfiniteCEError):
            cross_entropy([1], [np.array([1.0, 0.0])])

    def test_accepts_token_distributions(self):
        laws = [TokenDistribution([0.5, 0.5])] * 2
        assert cross_entropy([0, 1], laws) == pytest.approx(np.log(2))

    def test_empty(self):
        assert cross_entropy([], []) == 0.0


class TestReportSerialization:
    def test_json_fields(self):
        report = DetectionReport(3, np.array([1.0, 0.0, 1.0]), 2.0, 1.5, 0.066, None)
        obj = json.loads(report.dumps())
        assert set(obj) == {
            "n",
            "per_token_scores",
            "statistic",
            "z",
            "p_value",
            "neg_log10_p",
            "tokens_to_threshold",
        }
        assert obj["neg_log10_p"] == pytest.approx(-np.log10(0.066))

    def test_zero_null_variance_detection(self):
        # every token is the all-zero simplex codeword
        f = simplex_score(4)
        with pytest.raises(ZeroNullVarianceError):
            detect([0, 0, 0], f, _make_stream_cfg(3))
