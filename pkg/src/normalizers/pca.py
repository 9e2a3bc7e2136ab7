"""PCA normalization: projection on the top principal directions."""

import linear_norm
import normalizer


class Normalizer(normalizer.BaseNormalizer):
    kind = "pca"

    def fit(self, embeddings):
        self.check_input(embeddings)
        return linear_norm.fit_pca(embeddings, self._config.linear_dim)
