import unittest

import numpy as np
from parameterized import parameterized

import common
import embnorm
import evalkit
import synthgen


def small_spec(**kwargs) -> synthgen.DomainSpec:
    values = {"dim": 3, "n_speakers": 4, "utts_per_speaker": 3, "seed": 5}
    values.update(kwargs)
    return synthgen.DomainSpec(**values)


class GenerateDomain(unittest.TestCase):
    def setUp(self):
        embnorm.setup_logging(False, "DEBUG")

    def test_deterministic(self):
        spec = small_spec(shift=synthgen.DomainShift.random(3, seed=1))
        self.assertEqual(synthgen.generate_domain(spec), synthgen.generate_domain(spec))
        other = synthgen.generate_domain(small_spec(seed=6))
        self.assertFalse(
            np.array_equal(synthgen.generate_domain(spec).matrix(), other.matrix())
        )

    def test_speakers_independent_of_count(self):
        shift = synthgen.DomainShift.random(3, seed=2)
        few = synthgen.generate_domain(small_spec(n_speakers=5, shift=shift))
        many = synthgen.generate_domain(small_spec(n_speakers=10, shift=shift))
        self.assertTrue(np.array_equal(few.matrix(), many.matrix()[: len(few)]))

    def test_ids(self):
        embeddings = synthgen.generate_domain(small_spec(speaker_prefix="ood-"))
        self.assertEqual(len(embeddings), 12)
        self.assertEqual(embeddings.dim, 3)
        self.assertEqual(
            embeddings.utterance_ids[:4],
            [
                "ood-spk0000-utt000",
                "ood-spk0000-utt001",
                "ood-spk0000-utt002",
                "ood-spk0001-utt000",
            ],
        )
        self.assertEqual(embeddings.speakers, [f"ood-spk{i:04d}" for i in range(4)])

    def test_variance(self):
        spec = synthgen.DomainSpec(
            dim=2, n_speakers=2000, utts_per_speaker=10, warp_strength=0.0
        )
        variance = np.var(synthgen.generate_domain(spec).matrix(), axis=0)
        self.assertTrue(np.allclose(variance, 1.0 + 1.5**2, atol=0.2))

    def test_speaker_rank(self):
        spec = synthgen.DomainSpec(
            dim=5,
            n_speakers=400,
            utts_per_speaker=4,
            between_scale=2.0,
            speaker_rank=2,
            warp_strength=0.0,
            heavy_tail_dof=float("inf"),
        )
        embeddings = synthgen.generate_domain(spec)
        codes = np.repeat(np.arange(400), 4)
        data = embeddings.matrix()
        means = np.stack([data[codes == i].mean(axis=0) for i in range(400)])
        # speaker means carry 4 + 1.5² / 4 in the first two coordinates
        variance = np.var(means, axis=0)
        self.assertTrue(np.all(variance[:2] > 3.0))
        self.assertTrue(np.all(variance[2:] < 1.0))

    def test_speaker_rank_at_least_dim(self):
        full = synthgen.generate_domain(small_spec())
        self.assertEqual(full, synthgen.generate_domain(small_spec(speaker_rank=3)))
        self.assertEqual(full, synthgen.generate_domain(small_spec(speaker_rank=9)))

    def test_warp_is_odd(self):
        data = np.random.default_rng(0).standard_normal((5, 4))
        self.assertTrue(
            np.array_equal(synthgen.warp(-data, 0.7), -synthgen.warp(data, 0.7))
        )
        self.assertIs(synthgen.warp(data, 0.0), data)

    def test_warp_increases_kurtosis(self):
        medians = []
        for strength in (0.0, 1.0, 4.0):
            values = []
            for seed in range(5):
                spec = synthgen.DomainSpec(
                    dim=4,
                    n_speakers=300,
                    between_scale=0.6,
                    within_scale=0.8,
                    warp_strength=strength,
                    heavy_tail_dof=float("inf"),
                    seed=seed,
                )
                report = evalkit.gaussianity_report(synthgen.generate_domain(spec))
                values.append(report.abs_kurtosis_mean)
            medians.append(float(np.median(values)))
        self.assertLess(medians[0], medians[1])
        self.assertLess(medians[1], medians[2])

    def test_shift(self):
        shift = synthgen.DomainShift(np.diag([2.0, 3.0]), np.array([1.0, -1.0]))
        self.assertEqual(
            shift.apply(np.array([[1.0, 1.0]])).tolist(), [[3.0, 2.0]]
        )
        self.assertTrue(synthgen.DomainShift().is_identity)
        self.assertFalse(shift.is_identity)
        with self.assertRaises(common.InvalidInputError):
            shift.apply(np.zeros((1, 3)))

    @parameterized.expand(
        [
            ("singular", {"matrix": [[1.0, 0.0], [0.0, 0.0]]}),
            ("ill_conditioned", {"matrix": [[1.0, 0.0], [0.0, 1e-7]]}),
            ("not_square", {"matrix": [[1.0, 0.0]]}),
            ("negative_strength", {"nonlinear_strength": -1.0}),
        ]
    )
    def test_invalid_shift(self, _name, kwargs):
        with self.assertRaises(common.InvalidInputError):
            synthgen.DomainShift(**kwargs)

    @parameterized.expand(
        [
            ("dim", {"dim": 0}),
            ("speakers", {"n_speakers": 0}),
            ("within_scale", {"within_scale": 0.0}),
            ("speaker_rank", {"speaker_rank": -1}),
            ("warp", {"warp_strength": -0.1}),
            ("dof", {"heavy_tail_dof": 2.0}),
            ("prefix", {"speaker_prefix": "a b"}),
        ]
    )
    def test_invalid_spec(self, _name, kwargs):
        with self.assertRaises(common.InvalidInputError):
            synthgen.generate_domain(small_spec(**kwargs))


class Trials(unittest.TestCase):
    def setUp(self):
        embnorm.setup_logging(False, "DEBUG")
        # 4 speakers with 3 utterances: 12 target and 54 nontarget pairs
        self.embeddings = synthgen.generate_domain(small_spec())
        self.speaker = dict(
            zip(self.embeddings.utterance_ids, self.embeddings.speaker_ids)
        )

    def check_trials(self, trials, n_target, n_nontarget):
        self.assertEqual(sum(t.is_target is True for t in trials), n_target)
        self.assertEqual(sum(t.is_target is False for t in trials), n_nontarget)
        pairs = {
            frozenset((t.enroll_utterance_id, t.test_utterance_id)) for t in trials
        }
        self.assertEqual(len(pairs), len(trials))
        for trial in trials:
            self.assertNotEqual(trial.enroll_utterance_id, trial.test_utterance_id)
            self.assertEqual(
                trial.is_target,
                self.speaker[trial.enroll_utterance_id]
                == self.speaker[trial.test_utterance_id],
            )

    @parameterized.expand(
        [
            ("sampled", 5, 10),
            ("enumerated", 12, 54),
            ("mostly_enumerated", 3, 40),
            ("empty", 0, 0),
        ]
    )
    def test_counts_and_labels(self, _name, n_target, n_nontarget):
        trials = synthgen.make_trials(self.embeddings, n_target, n_nontarget, seed=3)
        self.check_trials(trials, n_target, n_nontarget)

    def test_deterministic(self):
        first = synthgen.make_trials(self.embeddings, 5, 10, seed=3)
        self.assertEqual(first, synthgen.make_trials(self.embeddings, 5, 10, seed=3))
        self.assertNotEqual(
            first, synthgen.make_trials(self.embeddings, 5, 10, seed=4)
        )

    @parameterized.expand([("targets", 13, 0), ("nontargets", 0, 55)])
    def test_too_many(self, _name, n_target, n_nontarget):
        with self.assertRaisesRegex(common.InvalidInputError, "at most"):
            synthgen.make_trials(self.embeddings, n_target, n_nontarget, seed=0)

    def test_unlabeled(self):
        with self.assertRaises(common.InvalidInputError):
            synthgen.make_trials(self.embeddings.without_labels(), 1, 1, seed=0)


class Split(unittest.TestCase):
    def setUp(self):
        embnorm.setup_logging(False, "DEBUG")
        self.embeddings = synthgen.generate_domain(small_spec(n_speakers=10))

    def test_disjoint(self):
        adaptation, test = synthgen.split_by_speaker(
            self.embeddings, synthgen.SplitSpec(4, 3), seed=1
        )
        self.assertEqual(len(adaptation.speakers), 4)
        self.assertEqual(len(test.speakers), 3)
        self.assertFalse(set(adaptation.speakers) & set(test.speakers))
        self.assertEqual(len(adaptation), 12)
        again, _ = synthgen.split_by_speaker(
            self.embeddings, synthgen.SplitSpec(4, 3), seed=1
        )
        self.assertEqual(adaptation, again)

    def test_too_many_speakers(self):
        with self.assertRaises(common.InvalidInputError):
            synthgen.split_by_speaker(self.embeddings, synthgen.SplitSpec(6, 5), seed=1)


class Presets(unittest.TestCase):
    def test_presets(self):
        self.assertEqual(set(synthgen.PRESETS), {"desk", "paper"})
        desk = synthgen.PRESETS["desk"]
        self.assertEqual((desk.ind.dim, desk.ind.n_speakers), (32, 200))
        self.assertEqual(desk.ood_speakers, 73)
        self.assertLessEqual(desk.ind.speaker_rank, 8)
        self.assertEqual(
            desk.split.adaptation_speakers + desk.split.test_speakers,
            desk.ood_speakers,
        )


if __name__ == "__main__":
    unittest.main()
