"""
VAE normalization model: a feed-forward encoder/decoder trained on the
variational lower bound. The latent mean of the encoder is the normalized
embedding. C-VAE adds a cohesive loss that pulls the latent means of a speaker
together.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import ClassVar

import numpy as np

from common import (
    InvalidInputError,
    NumericError,
    TrainingError,
    create_progress_bar,
    speaker_codes,
)
import dataio


LOGGER = logging.getLogger("embnorm")

LOGVAR_LIMIT = 10.0
ACTIVATIONS = ("tanh", "relu", "linear")
ADAPT_MODES = ("none", "retrain", "finetune")


###########################################################
# network
###########################################################


@dataclasses.dataclass(frozen=True, eq=False)
class Layer:
    # out×in
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"Unknown activation {self.activation}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise InvalidInputError(
                f"Layer shapes do not match: {self.weights.shape}, {self.bias.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        pre = inputs @ self.weights.T + self.bias
        match self.activation:
            case "tanh":
                return np.tanh(pre)
            case "relu":
                return np.maximum(pre, 0.0)
            case _:
                return pre

    def activation_grad(self, outputs: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the pre-activation, given the layer outputs."""
        match self.activation:
            case "tanh":
                return grad * (1.0 - outputs**2)
            case "relu":
                return grad * (outputs > 0.0)
            case _:
                return grad


@dataclasses.dataclass(frozen=True, eq=False)
class MlpNetwork:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("A network needs at least one layer")
        for previous, layer in zip(self.layers, self.layers[1:]):
            if previous.output_dim != layer.input_dim:
                raise InvalidInputError(
                    f"Layer dimensions do not chain: {previous.output_dim} -> "
                    f"{layer.input_dim}"
                )

    @classmethod
    def initialize(
        cls,
        sizes: list[int],
        rng: np.random.Generator,
        hidden_activation: str = "tanh",
    ) -> MlpNetwork:
        """Uniform init in ±sqrt(6 / (fan_in + fan_out)), zero biases, linear head."""
        layers = []
        for index, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            is_last = index == len(sizes) - 2
            layers.append(
                Layer(
                    rng.uniform(-limit, limit, size=(fan_out, fan_in)),
                    np.zeros(fan_out),
                    "linear" if is_last else hidden_activation,
                )
            )
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def forward(self, inputs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns the output and the activations of every layer, input first."""
        activations = [inputs]
        for layer in self.layers:
            activations.append(layer.forward(activations[-1]))
        return activations[-1], activations

    def backward(
        self, activations: list[np.ndarray], grad_output: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns the input gradient and the parameter gradients (W, b per layer)."""
        grads: list[np.ndarray] = []
        grad = grad_output
        for index in reversed(range(len(self.layers))):
            layer = self.layers[index]
            grad_pre = layer.activation_grad(activations[index + 1], grad)
            grads = [grad_pre.T @ activations[index], grad_pre.sum(axis=0)] + grads
            grad = grad_pre @ layer.weights
        return grad, grads

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in (layer.weights, layer.bias)]

    def with_parameters(self, parameters: list[np.ndarray]) -> MlpNetwork:
        if len(parameters) != 2 * len(self.layers):
            raise InvalidInputError("Parameter count does not match the network")
        return MlpNetwork(
            [
                Layer(parameters[2 * i], parameters[2 * i + 1], layer.activation)
                for i, layer in enumerate(self.layers)
            ]
        )


###########################################################
# model
###########################################################


@dataclasses.dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 8
    hidden_sizes: tuple[int, ...] = (64, 64)
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    finetune_learning_rate: float = 1e-4
    cohesive_weight: float = 0.0
    seed: int = 0
    no_progress_bars: bool = True


@dataio.register_model
@dataclasses.dataclass(frozen=True, eq=False)
class VaeModel:
    kind: ClassVar[str] = "vae"

    # d -> 2k: latent mean, then log-variance
    encoder: MlpNetwork
    # k -> d
    decoder: MlpNetwork
    cohesive_weight: float = 0.0
    train_seed: int = 0
    # per-dimension standardization of the inputs, from the training data
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    adapt_mode: str = "none"
    loss_history: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.encoder.output_dim != 2 * self.decoder.input_dim:
            raise InvalidInputError(
                f"Encoder output {self.encoder.output_dim} must be twice the "
                f"decoder input {self.decoder.input_dim}"
            )
        if self.cohesive_weight < 0:
            raise InvalidInputError("Cohesive weight must be non-negative")
        if self.adapt_mode not in ADAPT_MODES:
            raise InvalidInputError(f"Unknown adaptation mode {self.adapt_mode}")
        d = self.encoder.input_dim
        if self.input_mean is None:
            object.__setattr__(self, "input_mean", np.zeros(d))
        if self.input_scale is None:
            object.__setattr__(self, "input_scale", np.ones(d))

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def latent_dim(self) -> int:
        return self.decoder.input_dim

    @property
    def output_dim(self) -> int:
        return self.latent_dim

    def standardize(self, inputs: np.ndarray) -> np.ndarray:
        return (inputs - self.input_mean) / self.input_scale

    def parameters(self) -> list[np.ndarray]:
        return self.encoder.parameters() + self.decoder.parameters()

    def with_parameters(self, parameters: list[np.ndarray], **changes) -> VaeModel:
        split = len(self.encoder.parameters())
        return dataclasses.replace(
            self,
            encoder=self.encoder.with_parameters(parameters[:split]),
            decoder=self.decoder.with_parameters(parameters[split:]),
            **changes,
        )

    def transform(self, embeddings: dataio.EmbeddingSet) -> dataio.EmbeddingSet:
        return normalize(self, embeddings)

    def to_fields(self) -> dict[str, dataio.FieldValue]:
        fields: dict[str, dataio.FieldValue] = {
            "cohesive_weight": np.float64(self.cohesive_weight),
            "train_seed": self.train_seed,
            "input_mean": self.input_mean,
            "input_scale": self.input_scale,
            "adapt_mode": self.adapt_mode,
            "loss_history": self.loss_history,
        }
        for name, network in (("encoder", self.encoder), ("decoder", self.decoder)):
            fields[f"{name}_layers"] = len(network.layers)
            for index, layer in enumerate(network.layers):
                fields[f"{name}_{index}_weights"] = layer.weights
                fields[f"{name}_{index}_bias"] = layer.bias
                fields[f"{name}_{index}_activation"] = layer.activation
        return fields

    @classmethod
    def from_fields(cls, fields):
        networks = {}
        for name in ("encoder", "decoder"):
            networks[name] = MlpNetwork(
                [
                    Layer(
                        fields[f"{name}_{index}_weights"],
                        fields[f"{name}_{index}_bias"],
                        fields[f"{name}_{index}_activation"],
                    )
                    for index in range(fields[f"{name}_layers"])
                ]
            )
        return cls(
            encoder=networks["encoder"],
            decoder=networks["decoder"],
            cohesive_weight=float(fields["cohesive_weight"]),
            train_seed=fields["train_seed"],
            input_mean=fields["input_mean"],
            input_scale=fields["input_scale"],
            adapt_mode=fields["adapt_mode"],
            loss_history=fields["loss_history"],
        )


def build_vae(
    input_dim: int, config: VaeConfig, rng: np.random.Generator
) -> VaeModel:
    """Symmetric encoder/decoder around the code layer."""
    k = config.latent_dim
    hidden = list(config.hidden_sizes)
    encoder = MlpNetwork.initialize([input_dim] + hidden + [2 * k], rng)
    decoder = MlpNetwork.initialize([k] + hidden[::-1] + [input_dim], rng)
    return VaeModel(
        encoder, decoder, cohesive_weight=config.cohesive_weight, train_seed=config.seed
    )


###########################################################
# loss
###########################################################


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """
    KL(N(mu, exp(logvar)) || N(0, I)) per sample, in closed form.

    >>> float(kl_divergence(np.array([[1.0]]), np.array([[0.0]]))[0])
    0.5
    """
    return 0.5 * np.sum(mu**2 + np.exp(logvar) - logvar - 1.0, axis=1)


def cohesive_term(mu: np.ndarray, codes: np.ndarray) -> float:
    """
    Mean squared distance of every latent mean to the batch centroid of its
    speaker.

    >>> cohesive_term(np.array([[1.0], [3.0]]), np.array([0, 0]))
    1.0
    >>> cohesive_term(np.array([[1.0], [3.0]]), np.array([0, 1]))
    0.0
    """
    return float(np.sum((mu - _centroids(mu, codes)) ** 2) / len(mu))


def _centroids(mu: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Per-row centroid of the rows sharing the same code."""
    unique, inverse = np.unique(codes, return_inverse=True)
    sums = np.zeros((len(unique), mu.shape[1]))
    np.add.at(sums, inverse, mu)
    counts = np.bincount(inverse, minlength=len(unique))
    return (sums / counts[:, None])[inverse]


def gaussian_constant(dim: int) -> float:
    """The (d/2)·ln 2π term left out of the optimized reconstruction loss."""
    return 0.5 * dim * np.log(2.0 * np.pi)


@dataclasses.dataclass(frozen=True)
class LossTerms:
    kl: np.ndarray
    reconstruction: np.ndarray
    cohesive: float
    loss: float


def _check_finite(tensors: list[tuple[str, np.ndarray | float]]):
    for name, tensor in tensors:
        if not np.all(np.isfinite(tensor)):
            raise NumericError(f"Non-finite values in {name}")


def _forward(
    model: VaeModel, batch: np.ndarray, noise: np.ndarray
) -> tuple[dict[str, np.ndarray], list[np.ndarray], list[np.ndarray]]:
    inputs = model.standardize(batch)
    encoded, encoder_activations = model.encoder.forward(inputs)
    k = model.latent_dim
    mu = encoded[:, :k]
    raw_logvar = encoded[:, k:]
    logvar = np.clip(raw_logvar, -LOGVAR_LIMIT, LOGVAR_LIMIT)
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * noise
    reconstruction, decoder_activations = model.decoder.forward(z)
    _check_finite(
        [
            ("encoder output", encoded),
            ("latent sample", z),
            ("decoder output", reconstruction),
        ]
    )
    values = {
        "inputs": inputs,
        "mu": mu,
        "raw_logvar": raw_logvar,
        "logvar": logvar,
        "sigma": sigma,
        "reconstruction": reconstruction,
    }
    return values, encoder_activations, decoder_activations


def _check_batch(model: VaeModel, batch, labels, noise):
    batch = np.asarray(batch, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if batch.ndim != 2 or not len(batch):
        raise InvalidInputError("Batch must be a non-empty 2-D array")
    if batch.shape[1] != model.input_dim:
        raise InvalidInputError(
            f"VAE expects dimension {model.input_dim}, got {batch.shape[1]}"
        )
    if noise.shape != (len(batch), model.latent_dim):
        raise InvalidInputError(
            f"Noise must have shape {(len(batch), model.latent_dim)}, got {noise.shape}"
        )
    codes = None
    if model.cohesive_weight > 0:
        if labels is None:
            raise InvalidInputError("The cohesive loss needs speaker labels")
        codes = np.asarray(labels)
        if len(codes) != len(batch):
            raise InvalidInputError("Need one label per batch row")
    return batch, codes, noise


def elbo_terms(model: VaeModel, batch, labels=None, noise=None) -> LossTerms:
    """Per-sample KL and reconstruction terms plus the total loss."""
    batch, codes, noise = _check_batch(model, batch, labels, noise)
    values, _, _ = _forward(model, batch, noise)
    kl = kl_divergence(values["mu"], values["logvar"])
    reconstruction = 0.5 * np.sum(
        (values["inputs"] - values["reconstruction"]) ** 2, axis=1
    )
    cohesive = 0.0 if codes is None else cohesive_term(values["mu"], codes)
    loss = float(np.mean(kl + reconstruction) + model.cohesive_weight * cohesive)
    return LossTerms(kl, reconstruction, cohesive, loss)


def elbo_loss_and_grads(
    model: VaeModel, batch, labels=None, noise=None
) -> tuple[float, list[np.ndarray]]:
    """
    Negative lower bound averaged over the batch, plus the cohesive term, and
    its exact gradient w.r.t. every parameter (encoder first, then decoder).
    Uses one reparameterized sample z = mu + sigma·noise per row.
    """
    batch, codes, noise = _check_batch(model, batch, labels, noise)
    values, encoder_activations, decoder_activations = _forward(model, batch, noise)
    n = len(batch)
    mu, logvar, sigma = values["mu"], values["logvar"], values["sigma"]
    residual = values["inputs"] - values["reconstruction"]

    kl = kl_divergence(mu, logvar)
    reconstruction = 0.5 * np.sum(residual**2, axis=1)
    loss = float(np.mean(kl + reconstruction))
    if codes is not None:
        loss += model.cohesive_weight * cohesive_term(mu, codes)
    _check_finite([("loss", loss)])

    grad_z, decoder_grads = model.decoder.backward(decoder_activations, -residual / n)
    grad_mu = grad_z + mu / n
    if codes is not None:
        pull = 2.0 * (mu - _centroids(mu, codes)) / n
        grad_mu = grad_mu + model.cohesive_weight * pull
    grad_logvar = grad_z * noise * 0.5 * sigma + 0.5 * (np.exp(logvar) - 1.0) / n
    raw_logvar = values["raw_logvar"]
    grad_logvar = grad_logvar * (np.abs(raw_logvar) <= LOGVAR_LIMIT)
    _, encoder_grads = model.encoder.backward(
        encoder_activations, np.concatenate([grad_mu, grad_logvar], axis=1)
    )
    return loss, encoder_grads + decoder_grads


###########################################################
# optimizer
###########################################################


@dataclasses.dataclass(frozen=True, eq=False)
class AdamState:
    first_moments: list[np.ndarray]
    second_moments: list[np.ndarray]
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, parameters: list[np.ndarray], learning_rate: float = 1e-3):
        return cls(
            [np.zeros_like(p) for p in parameters],
            [np.zeros_like(p) for p in parameters],
            learning_rate=learning_rate,
        )


def adam_step(
    parameters: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """
    One bias-corrected adaptive-moment update. Inputs are left untouched.

    >>> params, state = adam_step(
    ...     [np.array([1.0])], [np.array([2.0])], AdamState.fresh([np.zeros(1)], 0.1)
    ... )
    >>> round(float(params[0][0]), 6), state.step
    (0.9, 1)
    """
    if not len(parameters) == len(grads) == len(state.first_moments):
        raise InvalidInputError("Parameters, gradients and optimizer state differ")
    step = state.step + 1
    correction1 = 1.0 - state.beta1**step
    correction2 = 1.0 - state.beta2**step
    new_parameters, first_moments, second_moments = [], [], []
    for parameter, grad, m, v in zip(
        parameters, grads, state.first_moments, state.second_moments
    ):
        if not parameter.shape == grad.shape == m.shape:
            raise InvalidInputError(
                f"Shape mismatch: {parameter.shape}, {grad.shape}, {m.shape}"
            )
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        new_parameters.append(parameter - state.learning_rate * update)
        first_moments.append(m)
        second_moments.append(v)
    return new_parameters, dataclasses.replace(
        state, first_moments=first_moments, second_moments=second_moments, step=step
    )


###########################################################
# training
###########################################################


def _standardization(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = data.mean(axis=0)
    scale = data.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def _optimize(
    model: VaeModel,
    embeddings: dataio.EmbeddingSet,
    config: VaeConfig,
    learning_rate: float,
    rng: np.random.Generator,
) -> VaeModel:
    data = embeddings.matrix()
    codes = None
    if model.cohesive_weight > 0:
        if not embeddings.is_labeled:
            raise InvalidInputError("C-VAE training needs speaker labels")
        codes = np.asarray(speaker_codes(embeddings.speaker_ids)[1])

    parameters = model.parameters()
    state = AdamState.fresh(parameters, learning_rate)
    losses = []
    progress_bar = create_progress_bar(config.epochs, "Epochs", config.no_progress_bars)
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for start in range(0, len(data), config.batch_size):
            rows = order[start : start + config.batch_size]
            noise = rng.standard_normal((len(rows), model.latent_dim))
            try:
                loss, grads = elbo_loss_and_grads(
                    model,
                    data[rows],
                    None if codes is None else codes[rows],
                    noise,
                )
            except NumericError as exc:
                raise TrainingError(str(exc), epoch) from exc
            parameters, state = adam_step(parameters, grads, state)
            if not all(np.all(np.isfinite(p)) for p in parameters):
                raise TrainingError("Non-finite parameters after the update", epoch)
            model = model.with_parameters(parameters)
            epoch_loss += loss * len(rows)
        losses.append(epoch_loss / len(data))
        LOGGER.debug(f"Epoch {epoch}: loss {losses[-1]:.6f}")
        progress_bar.update()
    progress_bar.close()

    if losses:
        LOGGER.info(
            f"VAE training: loss {losses[0]:.4f} -> {losses[-1]:.4f} after "
            f"{len(losses)} epochs (add {gaussian_constant(model.input_dim):.4f} "
            "for the negative lower bound)"
        )
        if losses[-1] > losses[0]:
            LOGGER.warning("VAE training loss did not decrease")
    history = np.concatenate([model.loss_history, np.asarray(losses, dtype=np.float64)])
    return dataclasses.replace(model, loss_history=history)


def train_vae(embeddings: dataio.EmbeddingSet, config: VaeConfig) -> VaeModel:
    if not len(embeddings):
        raise InvalidInputError("VAE training needs data")
    if config.cohesive_weight > 0 and not embeddings.is_labeled:
        raise InvalidInputError("C-VAE training needs speaker labels")
    rng = np.random.default_rng(config.seed)
    model = build_vae(embeddings.dim, config, rng)
    mean, scale = _standardization(embeddings.matrix())
    model = dataclasses.replace(model, input_mean=mean, input_scale=scale)
    return _optimize(model, embeddings, config, config.learning_rate, rng)


def normalize(model: VaeModel, embeddings: dataio.EmbeddingSet) -> dataio.EmbeddingSet:
    """The posterior mean mu(x) of every vector, without sampling."""
    if embeddings.dim != model.input_dim:
        raise InvalidInputError(
            f"VAE expects dimension {model.input_dim}, got {embeddings.dim}"
        )
    if not len(embeddings):
        return dataio.EmbeddingSet(model.latent_dim)
    encoded, _ = model.encoder.forward(model.standardize(embeddings.matrix()))
    return embeddings.with_vectors(encoded[:, : model.latent_dim])


def adapt_vae(
    model: VaeModel,
    ood_embeddings: dataio.EmbeddingSet,
    config: VaeConfig,
    mode: str = "retrain",
) -> VaeModel:
    """
    retrain: train a fresh model on the adaptation data.
    finetune: continue from the given model with the fine-tune learning rate.
    """
    if not len(ood_embeddings):
        raise InvalidInputError("VAE adaptation needs data")
    match mode:
        case "retrain":
            adapted = train_vae(
                ood_embeddings,
                dataclasses.replace(config, cohesive_weight=model.cohesive_weight),
            )
        case "finetune":
            if ood_embeddings.dim != model.input_dim:
                raise InvalidInputError(
                    f"VAE expects dimension {model.input_dim}, got {ood_embeddings.dim}"
                )
            rng = np.random.default_rng(config.seed)
            adapted = _optimize(
                model, ood_embeddings, config, config.finetune_learning_rate, rng
            )
        case _:
            raise InvalidInputError(f"Unknown VAE adaptation mode {mode}")
    return dataclasses.replace(adapted, adapt_mode=mode)


def reconstruct(model: VaeModel, embeddings: dataio.EmbeddingSet) -> np.ndarray:
    """f(mu(x)) in the original input space."""
    codes = normalize(model, embeddings).matrix()
    decoded, _ = model.decoder.forward(codes)
    return decoded * model.input_scale + model.input_mean


def sample(model: VaeModel, count: int, seed: int = 0) -> np.ndarray:
    """Decode draws from the standard normal prior."""
    rng = np.random.default_rng(seed)
    decoded, _ = model.decoder.forward(rng.standard_normal((count, model.latent_dim)))
    return decoded * model.input_scale + model.input_mean
