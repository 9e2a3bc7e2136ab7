from pathlib import Path
import shutil
import unittest

import common
import config as config_lib
import embnorm
import experiment


def tiny_config(**kwargs) -> config_lib.PipelineConfig:
    values = {
        "seeds": [1, 2],
        "no_progress_bars": True,
        "dim": 4,
        "ind_speakers": 20,
        "ind_test_speakers": 10,
        "ood_speakers": 12,
        "adaptation_speakers": 6,
        "test_speakers": 6,
        "utts_per_speaker": 4,
        "n_target": 20,
        "n_nontarget": 40,
        "linear_dim": 2,
        "vae_latent_dim": 2,
        "vae_hidden": [8],
        "vae_epochs": 3,
        "vae_batch_size": 16,
    }
    values.update(kwargs)
    return config_lib.PipelineConfig(**values)


class Experiment(unittest.TestCase):
    def setUp(self):
        embnorm.setup_logging(False, "DEBUG")
        self.output = Path("tmp_output/experiment") / self.id().split(".")[-1]
        shutil.rmtree(self.output, ignore_errors=True)

    def test_all_cells(self):
        config = tiny_config()
        with self.assertLogs("embnorm", level="WARNING"):
            result = experiment.run_experiment(config, self.output)
        self.assertEqual(result.systems, ["none", "pca", "lda", "vae", "cvae"])
        self.assertEqual(
            result.eer_rows,
            [
                "IND",
                "PLDA",
                "PLDA-RET",
                "PLDA-UAT",
                "Norm-Adapt",
                "Norm-Adapt+PLDA-RET",
            ],
        )
        for row in result.eer_rows:
            for system in result.systems:
                eers = result.eers[(row, system)]
                self.assertEqual(len(eers), 2)
                self.assertTrue(all(0.0 <= eer <= 1.0 for eer in eers))
        for row in experiment.GAUSSIANITY_ROWS:
            self.assertEqual(len(result.gaussianity[(row, "vae", "abs_kurtosis")]), 2)

        for name in ("results.csv", "replicas.csv", "results.md", "config.resolved"):
            self.assertTrue((self.output / name).is_file(), name)
        markdown = (self.output / "results.md").read_text(encoding="utf-8")
        self.assertIn("| C-VAE", markdown)
        self.assertIn("Norm-Adapt+PLDA-RET", markdown)

    def test_baseline_unaffected_by_normalizer_adaptation(self):
        result = experiment.run_experiment(
            tiny_config(seeds=[1], normalizers=["none"]), self.output
        )
        self.assertEqual(result.systems, ["none"])
        # the identity has nothing to adapt
        self.assertEqual(
            result.eers[("Norm-Adapt", "none")], result.eers[("PLDA", "none")]
        )
        self.assertEqual(
            result.eers[("Norm-Adapt+PLDA-RET", "none")],
            result.eers[("PLDA-RET", "none")],
        )

    def test_deterministic(self):
        config = tiny_config(seeds=[4], normalizers=["pca", "vae"])
        first = experiment.run_experiment(config, self.output / "first")
        second = experiment.run_experiment(config, self.output / "second")
        self.assertEqual(first.eers, second.eers)
        self.assertEqual(first.gaussianity, second.gaussianity)
        self.assertEqual(
            (self.output / "first/results.csv").read_bytes(),
            (self.output / "second/results.csv").read_bytes(),
        )

    def test_selected_adaptations(self):
        config = tiny_config(seeds=[1], normalizers=["pca"], adaptations=["plda-uat"])
        result = experiment.run_experiment(config, self.output)
        self.assertEqual(result.eer_rows, ["IND", "PLDA-UAT"])
        self.assertNotIn(("Adapted", "pca", "skewness"), result.gaussianity)

    def test_replica_sets_are_disjoint(self):
        data = experiment.generate_replica(tiny_config(), 1)
        self.assertFalse(set(data.ood_adapt.speakers) & set(data.ood_test.speakers))
        self.assertFalse(set(data.ind_train.speakers) & set(data.ind_test.speakers))
        self.assertEqual(len(data.ood_trials), 60)
        with self.assertRaises(common.InvalidInputError):
            experiment.check_disjoint(data.ood_test, data.ood_test)

    def test_summarize(self):
        self.assertEqual(experiment.summarize([0.2]), (0.2, 0.2, 0.2))
        self.assertEqual(experiment.summarize([1.0, 3.0]), (2.0, 1.5, 2.5))


if __name__ == "__main__":
    unittest.main()
