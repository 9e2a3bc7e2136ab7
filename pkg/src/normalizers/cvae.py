"""C-VAE normalization: VAE with a cohesive loss on the speaker latents."""

from normalizers import vae


class Normalizer(vae.Normalizer):
    kind = "cvae"
    needs_labels = True

    @property
    def cohesive_weight(self) -> float:
        return self._config.cohesive_weight
