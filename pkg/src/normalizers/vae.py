"""VAE normalization: latent mean of a variational auto-encoder."""

import dataclasses

import normalizer
import vae_norm


def vae_config(config, cohesive_weight: float) -> vae_norm.VaeConfig:
    return vae_norm.VaeConfig(
        latent_dim=config.vae_latent_dim,
        hidden_sizes=tuple(config.vae_hidden),
        epochs=config.vae_epochs,
        batch_size=config.vae_batch_size,
        learning_rate=config.vae_learning_rate,
        finetune_learning_rate=config.vae_finetune_learning_rate,
        cohesive_weight=cohesive_weight,
        seed=config.seed,
        no_progress_bars=config.no_progress_bars,
    )


class Normalizer(normalizer.BaseNormalizer):
    kind = "vae"

    @property
    def cohesive_weight(self) -> float:
        return 0.0

    @property
    def vae_config(self) -> vae_norm.VaeConfig:
        return vae_config(self._config, self.cohesive_weight)

    def fit(self, embeddings):
        self.check_input(embeddings)
        self.logger.debug(
            f"{self.system_name}: training on {len(embeddings)} vectors "
            f"(latent dimension {self.vae_config.latent_dim})"
        )
        return vae_norm.train_vae(embeddings, self.vae_config)

    def adapt(self, model, adaptation_set):
        mode = self._config.vae_adapt_mode
        self.logger.debug(f"{self.system_name}: adaptation by {mode}")
        return vae_norm.adapt_vae(
            model,
            adaptation_set,
            dataclasses.replace(self.vae_config, cohesive_weight=model.cohesive_weight),
            mode,
        )
