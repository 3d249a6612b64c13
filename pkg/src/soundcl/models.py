"""Model architectures: the 10-class classifier, the convolutional
autoencoder, and its variational variant.

All three consume 128-mel x 16-frame segments; the 128 mel bins are the
channel dimension and convolutions run across the 16 time frames. The
classifier pools globally over time so its first dense layer sees exactly
128 features.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .tensor import Tensor, conv1d, conv1d_transpose

N_MELS = 128
N_FRAMES = 16
LATENT_DIM = 50
N_CLASSES = 10
LOGVAR_CLAMP = 10.0

INIT_SCHEME = "fan_in_uniform"


def _init(rng, shape, fan_in, name) -> Tensor:
    if rng is None:
        data = np.zeros(shape)
    else:
        bound = 1.0 / np.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data, requires_grad=True, name=name)


class _Model:
    kind = "model"

    def params(self) -> list[Tensor]:
        return list(self._params.values())

    def named_params(self) -> dict[str, Tensor]:
        return dict(self._params)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        if missing:
            raise ValueError(f"state dict missing params: {sorted(missing)}")
        for name, p in self._params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"param {name}: shape {arr.shape} != {p.data.shape}"
                )
            p.data = arr.copy()

    def clone(self):
        twin = type(self)(rng=None)
        twin.load_state_dict(self.state_dict())
        return twin

    def freeze(self):
        for p in self._params.values():
            p.requires_grad = False
        return self

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()


def param_count(model: _Model) -> int:
    """Number of trainable scalars, biases included."""
    return sum(p.data.size for p in model.params())


def _check_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != N_MELS or x.shape[2] != N_FRAMES:
        raise ValueError(
            f"expected batch of shape (B, {N_MELS}, {N_FRAMES}), got {x.shape}"
        )
    return x


class ClassifierModel(_Model):
    """Two same-padded conv layers (64, 128 filters, length 3), global
    average pooling over time, then dense 50 and dense 10."""

    kind = "classifier"

    def __init__(self, rng=None):
        self._params = {
            "conv1/w": _init(rng, (64, N_MELS, 3), N_MELS * 3, "conv1/w"),
            "conv1/b": _init(rng, (64,), N_MELS * 3, "conv1/b"),
            "conv2/w": _init(rng, (128, 64, 3), 64 * 3, "conv2/w"),
            "conv2/b": _init(rng, (128,), 64 * 3, "conv2/b"),
            "fc1/w": _init(rng, (128, 50), 128, "fc1/w"),
            "fc1/b": _init(rng, (50,), 128, "fc1/b"),
            "fc2/w": _init(rng, (50, N_CLASSES), 50, "fc2/w"),
            "fc2/b": _init(rng, (N_CLASSES,), 50, "fc2/b"),
        }

    def forward(self, batch) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(_check_batch(batch))
        p = self._params
        h = conv1d(x, p["conv1/w"], p["conv1/b"], 1, "same").relu()
        h = conv1d(h, p["conv2/w"], p["conv2/b"], 1, "same").relu()
        h = h.mean(axis=2)
        h = (h @ p["fc1/w"] + p["fc1/b"]).relu()
        return h @ p["fc2/w"] + p["fc2/b"]

    def predict_logits(self, x: np.ndarray, batch_size: int = 200) -> np.ndarray:
        x = _check_batch(x)
        chunks = [self.forward(x[i:i + batch_size]).data
                  for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks, axis=0)


class AutoencoderModel(_Model):
    """Conv encoder (kernel 6/4/3, stride 1/2/2, valid) to a 50-dim latent,
    transposed-conv decoder (kernel 4/4/7, stride 2/2/1) back to 128x16,
    sigmoid output. ReLU after the first two conv layers on each side."""

    kind = "autoencoder"

    def __init__(self, rng=None):
        self._params = {
            "enc1/w": _init(rng, (128, 128, 6), 128 * 6, "enc1/w"),
            "enc1/b": _init(rng, (128,), 128 * 6, "enc1/b"),
            "enc2/w": _init(rng, (128, 128, 4), 128 * 4, "enc2/w"),
            "enc2/b": _init(rng, (128,), 128 * 4, "enc2/b"),
            "enc3/w": _init(rng, (128, 128, 3), 128 * 3, "enc3/w"),
            "enc3/b": _init(rng, (128,), 128 * 3, "enc3/b"),
            "enc_fc/w": _init(rng, (128, LATENT_DIM), 128, "enc_fc/w"),
            "enc_fc/b": _init(rng, (LATENT_DIM,), 128, "enc_fc/b"),
            "dec_fc/w": _init(rng, (LATENT_DIM, 128), LATENT_DIM, "dec_fc/w"),
            "dec_fc/b": _init(rng, (128,), LATENT_DIM, "dec_fc/b"),
            "dec1/w": _init(rng, (128, 128, 4), 128 * 4, "dec1/w"),
            "dec1/b": _init(rng, (128,), 128 * 4, "dec1/b"),
            "dec2/w": _init(rng, (128, 128, 4), 128 * 4, "dec2/w"),
            "dec2/b": _init(rng, (128,), 128 * 4, "dec2/b"),
            "dec3/w": _init(rng, (128, 128, 7), 128 * 7, "dec3/w"),
            "dec3/b": _init(rng, (128,), 128 * 7, "dec3/b"),
        }

    def encode(self, batch) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(_check_batch(batch))
        p = self._params
        h = conv1d(x, p["enc1/w"], p["enc1/b"], 1, "valid").relu()   # 16 -> 11
        h = conv1d(h, p["enc2/w"], p["enc2/b"], 2, "valid").relu()   # 11 -> 4
        h = conv1d(h, p["enc3/w"], p["enc3/b"], 2, "valid")          # 4 -> 1
        h = h.reshape(h.shape[0], 128)
        return h @ p["enc_fc/w"] + p["enc_fc/b"]

    def decode(self, latents) -> Tensor:
        z = latents if isinstance(latents, Tensor) else Tensor(np.asarray(latents, dtype=np.float64))
        if z.ndim != 2 or z.shape[1] != LATENT_DIM:
            raise ValueError(f"expected latents of shape (B, {LATENT_DIM}), got {z.shape}")
        p = self._params
        h = (z @ p["dec_fc/w"] + p["dec_fc/b"]).reshape(z.shape[0], 128, 1)
        h = conv1d_transpose(h, p["dec1/w"], p["dec1/b"], 2).relu()  # 1 -> 4
        h = conv1d_transpose(h, p["dec2/w"], p["dec2/b"], 2).relu()  # 4 -> 10
        h = conv1d_transpose(h, p["dec3/w"], p["dec3/b"], 1)         # 10 -> 16
        return h.sigmoid()

    def forward(self, batch) -> Tensor:
        return self.decode(self.encode(batch))


class VaeModel(AutoencoderModel):
    """Autoencoder topology with a linear head on the 50-dim embedding
    producing (mu, logvar) and reparameterized sampling."""

    kind = "vae"

    def __init__(self, rng=None):
        super().__init__(rng)
        self._params["vae_mu/w"] = _init(rng, (LATENT_DIM, LATENT_DIM),
                                         LATENT_DIM, "vae_mu/w")
        self._params["vae_mu/b"] = _init(rng, (LATENT_DIM,), LATENT_DIM,
                                         "vae_mu/b")
        self._params["vae_logvar/w"] = _init(rng, (LATENT_DIM, LATENT_DIM),
                                             LATENT_DIM, "vae_logvar/w")
        self._params["vae_logvar/b"] = _init(rng, (LATENT_DIM,), LATENT_DIM,
                                             "vae_logvar/b")

    def encode_stats(self, batch) -> tuple[Tensor, Tensor]:
        h = super().encode(batch)
        p = self._params
        mu = h @ p["vae_mu/w"] + p["vae_mu/b"]
        logvar = (h @ p["vae_logvar/w"] + p["vae_logvar/b"]).clip(
            -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar

    def forward(self, batch, rng=None) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (recon, mu, logvar); eps=0 when rng is None."""
        mu, logvar = self.encode_stats(batch)
        if rng is None:
            z = mu
        else:
            eps = rng.standard_normal(mu.shape)
            z = mu + (logvar * 0.5).exp() * Tensor(eps)
        return self.decode(z), mu, logvar


MODEL_KINDS = {
    "classifier": ClassifierModel,
    "autoencoder": AutoencoderModel,
    "vae": VaeModel,
}


def save_model(path, model: _Model, metadata: dict | None = None):
    meta = dict(metadata or {})
    meta["model_kind"] = model.kind
    meta.setdefault("task_index", -1)
    meta.setdefault("seed", -1)
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path) -> tuple[_Model, dict]:
    arrays, meta = load_checkpoint(path)
    kind = meta.get("model_kind")
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r} in {path}")
    model = MODEL_KINDS[kind](rng=None)
    model.load_state_dict(arrays)
    return model, meta


def write_model_card(path, model: _Model, task_index: int, seed: int):
    card = {
        "architecture": model.kind,
        "param_count": param_count(model),
        "task_index": task_index,
        "seed": seed,
        "init_scheme": INIT_SCHEME,
    }
    Path(path).write_text(json.dumps(card, indent=2, sort_keys=True))
    return card
