"""Pretrained encoder backends and their output-dimension contract."""

from __future__ import annotations

import numpy as np

EXPECTED_DIM = {
    "imagebind": 1024,
    "languagebind": 768,
    "wavlm": 768,
    "unispeech-sat": 768,
    "wav2vec2": 768,
}

DEFAULT_CHECKPOINT = {
    "wavlm": "microsoft/wavlm-base",
    "unispeech-sat": "microsoft/unispeech-sat-base",
    "wav2vec2": "facebook/wav2vec2-base",
}


class BackendError(RuntimeError):
    """Backend unavailable or producing out-of-contract embeddings."""


class HFBackend:
    """Hidden-state encoder: waveform in, (time, dim) features out."""

    def __init__(self, model, model_id: str):
        import torch

        self.torch = torch
        self.model = model.eval()
        self.model_id = model_id
        self.dim = int(model.config.hidden_size)

    def embed(self, waveform: np.ndarray) -> np.ndarray:
        with self.torch.no_grad():
            batch = self.torch.from_numpy(waveform).reshape(1, -1)
            out = self.model(batch)
        hidden = out.last_hidden_state[0].numpy()
        if hidden.shape[-1] != self.dim:
            raise BackendError(
                f"{self.model_id}: hidden size {hidden.shape[-1]} != {self.dim}"
            )
        return hidden


def load_backend(model_id: str, checkpoint: str | None = None) -> HFBackend:
    if model_id not in EXPECTED_DIM:
        raise BackendError(
            f"unknown model {model_id!r}; choose one of {sorted(EXPECTED_DIM)}"
        )
    if model_id in ("imagebind", "languagebind"):
        raise BackendError(
            f"{model_id} needs its own package (expected output dim "
            f"{EXPECTED_DIM[model_id]}); install it and register a backend here"
        )
    from transformers import AutoModel

    source = checkpoint or DEFAULT_CHECKPOINT[model_id]
    try:
        model = AutoModel.from_pretrained(source)
    except Exception as exc:
        raise BackendError(
            f"cannot load weights for {model_id} from {source!r}: {exc}"
        ) from exc
    backend = HFBackend(model, model_id)
    if backend.dim != EXPECTED_DIM[model_id]:
        raise BackendError(
            f"{model_id}: checkpoint hidden size {backend.dim} != "
            f"expected {EXPECTED_DIM[model_id]}"
        )
    return backend
