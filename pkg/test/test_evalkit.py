import unittest

import numpy as np
from parameterized import parameterized

import common
import dataio
import embnorm
import evalkit
import linear_norm
import plda
import synthgen


def exhaustive_eer(targets: np.ndarray, nontargets: np.ndarray) -> float:
    """Try every distinct score as threshold, interpolate at the crossing."""
    thresholds = list(np.unique(np.concatenate([targets, nontargets]))) + [np.inf]
    rates = [
        (float(np.mean(nontargets >= t)), float(np.mean(targets < t)))
        for t in thresholds
    ]
    for index, (far, frr) in enumerate(rates):
        if frr >= far:
            break
    if frr == far:
        return frr
    previous_far, previous_frr = rates[index - 1]
    weight = (previous_far - previous_frr) / (
        (frr - far) - (previous_frr - previous_far)
    )
    return previous_far + weight * (far - previous_far)


def labeled_scores(targets, nontargets) -> list[dataio.Score]:
    return [dataio.Score(f"t{i}", "x", s, True) for i, s in enumerate(targets)] + [
        dataio.Score(f"n{i}", "x", s, False) for i, s in enumerate(nontargets)
    ]


class Eer(unittest.TestCase):
    def setUp(self):
        embnorm.setup_logging(False, "DEBUG")

    @parameterized.expand(
        [
            ("separated", [2.0, 3.0], [-1.0, 0.0], 0.0),
            ("identical", [0.0, 1.0], [0.0, 1.0], 0.5),
            ("inverted", [0.0], [1.0], 1.0),
            ("toy", [0.6, 0.4, 0.8], [0.5, 0.3, 0.2], 1.0 / 3.0),
        ]
    )
    def test_examples(self, _name, targets, nontargets, expected):
        eer, _ = evalkit.compute_eer(targets, nontargets)
        self.assertEqual(eer, expected)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        for case in range(1000):
            n_target, n_nontarget = rng.integers(1, 30, size=2)
            if case % 2:
                # integer scores force ties
                targets = rng.integers(0, 10, n_target).astype(float)
                nontargets = rng.integers(0, 8, n_nontarget).astype(float)
            else:
                targets = rng.normal(1.0, 1.0, n_target)
                nontargets = rng.normal(0.0, 1.0, n_nontarget)
            eer, _ = evalkit.compute_eer(targets, nontargets)
            expected = exhaustive_eer(targets, nontargets)
            self.assertAlmostEqual(eer, expected, places=12)

    def test_bounds(self):
        rng = np.random.default_rng(1)
        targets = rng.normal(1.0, 1.0, 200)
        nontargets = rng.normal(-1.0, 1.5, 300)
        eer, _ = evalkit.compute_eer(targets, nontargets)
        points = evalkit.det_curve(targets, nontargets)
        self.assertLessEqual(eer, min(max(p.far, p.frr) for p in points) + 1e-12)
        self.assertGreaterEqual(eer, max(min(p.far, p.frr) for p in points) - 1e-12)

    def test_monotone_transform(self):
        rng = np.random.default_rng(2)
        targets = rng.normal(1.0, 1.0, 100)
        nontargets = rng.normal(0.0, 1.0, 150)
        eer, _ = evalkit.compute_eer(targets, nontargets)
        transformed, _ = evalkit.compute_eer(
            np.exp(0.5 * targets), np.exp(0.5 * nontargets)
        )
        self.assertAlmostEqual(eer, transformed, places=12)

    def test_det_curve(self):
        points = evalkit.det_curve([0.6, 0.4, 0.8], [0.5, 0.3, 0.2])
        self.assertEqual(len(points), 7)
        self.assertEqual((points[0].far, points[0].frr), (1.0, 0.0))
        self.assertEqual((points[-1].far, points[-1].frr), (0.0, 1.0))
        self.assertTrue(all(a.far >= b.far for a, b in zip(points, points[1:])))
        self.assertTrue(all(a.frr <= b.frr for a, b in zip(points, points[1:])))

    @parameterized.expand(
        [
            ("no_targets", [], [1.0]),
            ("no_nontargets", [1.0], []),
            ("not_finite", [np.nan], [1.0]),
        ]
    )
    def test_invalid(self, _name, targets, nontargets):
        with self.assertRaises(common.InvalidInputError):
            evalkit.compute_eer(targets, nontargets)

    def test_report_from_scores(self):
        report = evalkit.report_from_scores(
            labeled_scores([0.6, 0.4, 0.8], [0.5, 0.3, 0.2])
        )
        self.assertEqual(report.eer, 1.0 / 3.0)
        self.assertEqual(report.metrics()["targets"], 3)
        self.assertEqual(len(report.det_points), 7)

    def test_report_without_labels(self):
        report = evalkit.report_from_scores([dataio.Score("a", "b", 1.0)])
        self.assertIsNone(report.eer)
        self.assertEqual(report.metrics()["eer"], "")


class ScoreTrials(unittest.TestCase):
    def setUp(self):
        embnorm.setup_logging(False, "DEBUG")
        spec = synthgen.DomainSpec(dim=4, n_speakers=20, utts_per_speaker=5, seed=1)
        self.embeddings = synthgen.generate_domain(spec)
        self.model = plda.fit_plda(self.embeddings)
        self.trials = synthgen.make_trials(self.embeddings, 30, 60, seed=2)

    def test_raw_vectors(self):
        report = evalkit.score_trials(None, self.model, self.embeddings, self.trials)
        self.assertEqual(len(report.scores), 90)
        self.assertIsNotNone(report.eer)
        self.assertLessEqual(report.eer, 0.5)
        vectors = self.embeddings.matrix()
        index = self.embeddings.index()
        first = self.trials[0]
        self.assertAlmostEqual(
            report.scores[0].score,
            plda.score_llr(
                self.model,
                vectors[index[first.enroll_utterance_id]],
                vectors[index[first.test_utterance_id]],
            ),
            places=12,
        )
        self.assertEqual(report.scores[0].is_target, first.is_target)

    def test_one_dimensional_hand_case(self):
        model = plda.PldaModel(np.zeros(1), np.eye(1), np.eye(1))
        embeddings = dataio.EmbeddingSet.from_arrays(
            ["e", "t"], ["", ""], [[0.0], [0.0]]
        )
        report = evalkit.score_trials(None, model, embeddings, [dataio.Trial("e", "t")])
        self.assertAlmostEqual(
            report.scores[0].score, np.log(2.0) - 0.5 * np.log(3.0), delta=1e-12
        )
        self.assertIsNone(report.eer)

    def test_with_normalizer(self):
        pca = linear_norm.fit_pca(self.embeddings, 2)
        model = plda.fit_plda(pca.transform(self.embeddings))
        report = evalkit.score_trials(pca, model, self.embeddings, self.trials)
        self.assertEqual(len(report.scores), 90)
        with self.assertRaises(common.InvalidInputError):
            evalkit.score_trials(pca, self.model, self.embeddings, self.trials)

    def test_enrollment_average(self):
        ids = self.embeddings.utterance_ids
        trials = [dataio.Trial("model1", ids[10], True)]
        report = evalkit.score_trials(
            None,
            self.model,
            self.embeddings,
            trials,
            {"model1": [ids[0], ids[1]]},
        )
        vectors = self.embeddings.matrix()
        expected = plda.score_llr(
            self.model, (vectors[0] + vectors[1]) / 2, vectors[10]
        )
        self.assertAlmostEqual(report.scores[0].score, expected, places=12)

    def test_unknown_id(self):
        with self.assertRaisesRegex(common.InvalidInputError, "missing"):
            evalkit.score_trials(
                None, self.model, self.embeddings, [dataio.Trial("missing", "x")]
            )

    def test_no_trials(self):
        report = evalkit.score_trials(None, self.model, self.embeddings, [])
        self.assertEqual(report.scores, [])
        self.assertIsNone(report.eer)


class Gaussianity(unittest.TestCase):
    def setUp(self):
        embnorm.setup_logging(False, "DEBUG")

    @staticmethod
    def as_set(data: np.ndarray) -> dataio.EmbeddingSet:
        return dataio.EmbeddingSet.from_arrays(
            [f"u{i}" for i in range(len(data))], [""] * len(data), data
        )

    def test_gaussian(self):
        data = np.random.default_rng(0).standard_normal((20000, 2))
        report = evalkit.gaussianity_report(self.as_set(data))
        self.assertLess(report.abs_skewness_mean, 0.1)
        self.assertLess(report.abs_kurtosis_mean, 0.2)
        self.assertEqual(len(report.skewness), 2)

    def test_heavy_tails(self):
        data = np.random.default_rng(0).standard_t(5, size=(20000, 2))
        report = evalkit.gaussianity_report(self.as_set(data))
        self.assertGreater(report.kurtosis_mean, 1.0)
        self.assertGreater(report.pooled_kurtosis, 1.0)

    def test_two_point_values(self):
        data = np.random.default_rng(4).choice([-1.0, 1.0], size=(5000, 3))
        report = evalkit.gaussianity_report(self.as_set(data))
        self.assertAlmostEqual(report.kurtosis_mean, -2.0, delta=0.01)
        self.assertAlmostEqual(report.pooled_kurtosis, -2.0, delta=0.01)

    def test_mirrored_set(self):
        data = np.random.default_rng(1).exponential(size=(50, 3))
        mirrored = np.concatenate([data, -data])
        report = evalkit.gaussianity_report(self.as_set(mirrored))
        self.assertAlmostEqual(report.skewness_mean, 0.0, delta=1e-10)
        self.assertAlmostEqual(report.pooled_skewness, 0.0, delta=1e-10)

    def test_constant_dimension(self):
        data = np.random.default_rng(2).standard_normal((30, 2))
        data[:, 1] = 4.0
        with self.assertLogs("embnorm", level="WARNING"):
            report = evalkit.gaussianity_report(self.as_set(data))
        self.assertEqual(report.degenerate.tolist(), [False, True])
        self.assertEqual(
            report.abs_skewness_mean, abs(float(report.skewness[0])) / 2
        )

    def test_metrics_keys(self):
        data = np.random.default_rng(3).standard_normal((10, 2))
        metrics = evalkit.gaussianity_report(self.as_set(data)).metrics()
        self.assertEqual(
            list(metrics),
            [
                "skewness",
                "kurtosis",
                "abs_skewness",
                "abs_kurtosis",
                "pooled_skewness",
                "pooled_kurtosis",
            ],
        )

    def test_too_few(self):
        with self.assertRaises(common.InvalidInputError):
            evalkit.gaussianity_report(self.as_set(np.zeros((2, 2))))


if __name__ == "__main__":
    unittest.main()
