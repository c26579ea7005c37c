import numpy as np
import pytest
import torch
from scipy.io import wavfile
from transformers import Wav2Vec2Config, Wav2Vec2Model

from embextract.backends import HFBackend


def tiny_wav2vec2():
    torch.manual_seed(0)
    cfg = Wav2Vec2Config(
        hidden_size=768,
        num_hidden_layers=1,
        num_attention_heads=12,
        intermediate_size=256,
    )
    return Wav2Vec2Model(cfg)


@pytest.fixture(scope="session")
def backend():
    return HFBackend(tiny_wav2vec2(), "wav2vec2")


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt")
    tiny_wav2vec2().save_pretrained(path)
    return path


def write_tone(path, freq=440.0, seconds=0.3, rate=16_000, stereo=False):
    t = np.arange(int(seconds * rate)) / rate
    wave = (0.4 * np.sin(2 * np.pi * freq * t)).astype(np.float32)
    if stereo:
        wave = np.stack([wave, 0.5 * wave], axis=1)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, rate, wave)
    return path
