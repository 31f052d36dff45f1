import numpy as np
import pytest

from cascade_rec import checkpoint
from cascade_rec.checkpoint import CheckpointError
from cascade_rec.config import ConfigError, ExperimentSpec, build_spec, dump_flat, load_flat, parse_lines
from cascade_rec.models import Ranker, Retriever


@pytest.mark.parametrize("model", [Retriever(20, 4, seed=3), Ranker(20, 4, seed=4),
                                   Ranker(20, 4, seed=5, hidden=3, activation="tanh")])
def test_checkpoint_roundtrip_bit_exact(model, tmp_path):
    path = tmp_path / "m.ckpt"
    checkpoint.save(model, path)
    back = checkpoint.load(path)
    assert type(back) is type(model) and back.seed == model.seed
    assert getattr(back, "activation", None) == getattr(model, "activation", None)
    for name, value in model.params.items():
        assert back.params[name].tobytes() == value.tobytes()
    assert checkpoint.to_bytes(back) == path.read_bytes()


def test_checkpoint_header_layout():
    blob = checkpoint.to_bytes(Retriever(7, 3, seed=9))
    assert blob[:4] == b"CRCK"
    assert len(blob) == 28 + 8 * 7 * 3


def test_checkpoint_rejects_corruption():
    blob = checkpoint.to_bytes(Ranker(5, 2, seed=0))
    with pytest.raises(CheckpointError):
        checkpoint.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        checkpoint.from_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        checkpoint.from_bytes(blob + b"\0")
    with pytest.raises(CheckpointError):
        checkpoint.from_bytes(blob[:10])


def test_config_parsing_and_aliases():
    flat = parse_lines(["# comment", "seeds=1,2", "sampler.pool_size=50  # inline",
                        "trainer.epochs=3", "data.num_users=10", "eval.exclude_interacted=false",
                        "model.activation=tanh"])
    spec = build_spec(flat)
    assert spec.seeds == (1, 2)
    assert spec.trainer.pool_size == 50 and spec.trainer.epochs == 3
    assert spec.data.num_users == 10 and spec.eval.exclude_interacted is False
    assert spec.trainer.activation == "tanh"


@pytest.mark.parametrize("line", ["trainer.nope=1", "bogus.x=1", "trainer.epochs=ten",
                                  "trainer.learning_rate=-1", "seeds=", "eval.exclude_interacted=maybe",
                                  "loose"])
def test_config_errors(line):
    with pytest.raises(ConfigError):
        build_spec(parse_lines([line]))


def test_dump_roundtrip(tmp_path):
    spec = build_spec({"seeds": "4 5", "trainer.kl_weight": "0.25", "data.sharpness": "2"})
    path = tmp_path / "c.cfg"
    path.write_text(dump_flat(spec))
    assert build_spec(load_flat(path)) == spec
    assert build_spec({}) == ExperimentSpec()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_flat(tmp_path / "missing.cfg")
