"""LDA normalization: projection on the most discriminative directions."""

import linear_norm
import normalizer


class Normalizer(normalizer.BaseNormalizer):
    kind = "lda"
    needs_labels = True

    def fit(self, embeddings):
        self.check_input(embeddings)
        k = self._config.linear_dim
        n_classes = len(embeddings.speakers)
        if 1 < n_classes <= k:
            # adaptation sets can have fewer speakers than the configured dimension
            self.logger.warning(
                f"LDA: {n_classes} classes allow at most {n_classes - 1} "
                f"dimensions, using {n_classes - 1} instead of {k}"
            )
            k = n_classes - 1
        return linear_norm.fit_lda(embeddings, k)
