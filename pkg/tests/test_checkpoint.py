import numpy as np
import pytest

from restyle.checkpoint import (CheckpointError, load_checkpoint, load_models,
                                save_checkpoint, save_models)
from restyle.data import Vocab
from restyle.models import (GeneratorModel, NaturalnessDiscriminator, NeuralLM,
                            StyleClassifier, greedy_decode)


@pytest.fixture
def vocab():
    return Vocab([f"w{i}" for i in range(8)], {})


def test_roundtrip_all_models(tmp_path, vocab):
    path = str(tmp_path / "all.ckpt")
    gen = GeneratorModel(vocab, embed_dim=8, hidden_dim=12, seed=1)
    cls = StyleClassifier(vocab, embed_dim=8, filters=4, inter_dim=8, seed=2)
    adv = NaturalnessDiscriminator(vocab, embed_dim=8, hidden_dim=8, seed=3)
    lm = NeuralLM(vocab, embed_dim=8, hidden_dim=8, seed=4)
    lm.fingerprint = "train-split"
    save_models(path, {"generator": gen, "classifier": cls,
                       "discriminator": adv, "lm": lm},
                stage="finetune", config={"seed": 1})
    payload = load_models(path)
    assert payload["stage"] == "finetune"
    assert payload["config"] == {"seed": 1}
    assert payload["vocab"].id_to_token == vocab.id_to_token
    gen2 = payload["models"]["generator"]
    for k, p in gen.params().items():
        assert np.array_equal(p.values, gen2.params()[k].values)
    assert payload["models"]["lm"].fingerprint == "train-split"
    # decode behaviour identical after reload
    assert greedy_decode(gen2, [6, 7], 1) == greedy_decode(gen, [6, 7], 1)


def test_corrupt_checkpoint_detected(tmp_path, vocab):
    path = str(tmp_path / "x.ckpt")
    gen = GeneratorModel(vocab, embed_dim=8, hidden_dim=12, seed=5)
    save_models(path, {"generator": gen}, stage="bootstrap")
    blob = bytearray(open(path, "rb").read())
    blob[len(blob) // 2] ^= 0xFF  # flip one payload byte
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError, match="integrity"):
        load_models(path)


def test_bad_magic_and_version(tmp_path, vocab):
    path = str(tmp_path / "y.ckpt")
    open(path, "wb").write(b"NOTMAGIC" + b"\0" * 100)
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


def test_save_checkpoint_raw_tensors(tmp_path, vocab):
    from restyle.autodiff import Tensor

    path = str(tmp_path / "raw.ckpt")
    tensors = {"a": Tensor(np.arange(6, dtype=float).reshape(2, 3)),
               "b": Tensor(np.array([1.5]))}
    save_checkpoint(path, vocab, tensors, {"note": 1}, stage="s")
    payload = load_checkpoint(path)
    assert np.array_equal(payload["tensors"]["a"],
                          np.arange(6, dtype=float).reshape(2, 3))
    assert payload["hyperparams"] == {"note": 1}


def test_checkpoint_byte_stable(tmp_path, vocab):
    gen = GeneratorModel(vocab, embed_dim=8, hidden_dim=12, seed=6)
    p1 = str(tmp_path / "a.ckpt")
    p2 = str(tmp_path / "b.ckpt")
    save_models(p1, {"generator": gen}, stage="bootstrap")
    save_models(p2, {"generator": gen}, stage="bootstrap")
    assert open(p1, "rb").read() == open(p2, "rb").read()
