import json
import struct

import numpy as np
import pytest

from graphtoken import cli
from graphtoken.checkpoint import MAGIC, Checkpoint, CheckpointError, read_header
from graphtoken.config import ConfigError, RunConfig, config_hash, from_dict, to_dict
from graphtoken.data import IngestError, ingest_lines

TINY = {
    "dims": {"gin_hidden": 8, "graph_dim": 8, "text_dim": 8, "proj_dim": 4, "lm_dim": 16, "lm_blocks": 1,
             "lm_heads": 2, "text_blocks": 1, "text_heads": 2, "heads": 2, "head_dim": 4, "slots": 8},
    "backbone": {"steps": 3, "batch_size": 4},
    "stage1": {"steps": 3, "batch_size": 8},
    "stage2": {"steps": 3, "batch_size": 4},
    "fewshot": {"steps": 2, "batch_size": 2},
}


# ----------------------------------------------------------------- config

def test_unknown_key_names_the_key():
    with pytest.raises(ConfigError) as exc:
        from_dict({"stage1": {"stpes": 3}})
    assert exc.value.key == "stage1.stpes"
    with pytest.raises(ConfigError) as exc:
        from_dict({"bogus": 1})
    assert exc.value.key == "bogus"


def test_type_and_range_errors():
    with pytest.raises(ConfigError) as exc:
        from_dict({"stage2": {"lr": "fast"}})
    assert exc.value.key == "stage2.lr"
    with pytest.raises(ConfigError) as exc:
        from_dict({"fraction": 1.5})
    assert exc.value.key == "fraction"


def test_config_hash_ignores_key_order():
    a = {"seed": 3, "stage1": {"lr": 0.1, "steps": 5}, "fraction": 0.1}
    b = {"fraction": 0.1, "stage1": {"steps": 5, "lr": 0.1}, "seed": 3}
    assert config_hash(from_dict(a)) == config_hash(from_dict(b))
    assert config_hash(from_dict(a)) != config_hash(from_dict({**a, "seed": 4}))
    assert config_hash(RunConfig()) == config_hash(from_dict(to_dict(RunConfig())))


# ----------------------------------------------------------------- checkpoint

def _ckpt():
    rng = np.random.default_rng(0)
    return Checkpoint({"a.w": rng.normal(size=(3, 2)), "b": rng.normal(size=4), "s": np.array(1.5)},
                      {"kind": "test", "config": {"x": 1}})


def test_checkpoint_roundtrip_bytes(tmp_path):
    c = _ckpt()
    p1, p2 = tmp_path / "a.g2t", tmp_path / "b.g2t"
    c.save(p1)
    Checkpoint.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = Checkpoint.load(p1)
    for k, v in c.tensors.items():
        assert back.tensors[k].tobytes() == v.tobytes() and back.tensors[k].shape == v.shape


def test_checkpoint_layout(tmp_path):
    blob = _ckpt().to_bytes()
    assert blob[:4] == MAGIC
    (n,) = struct.unpack("<Q", blob[4:12])
    header = json.loads(blob[12:12 + n])
    assert header["format_version"] == 1 and header["config"] == {"x": 1}
    names = [t["name"] for t in header["tensors"]]
    assert names == sorted(names)
    (tmp_path / "c.g2t").write_bytes(blob)
    assert read_header(tmp_path / "c.g2t") == header


def test_checkpoint_f32_tag():
    back = Checkpoint.from_bytes(_ckpt().to_bytes("f32"))
    assert back.tensors["b"].dtype == np.float32


def test_checkpoint_rejects_corruption():
    blob = bytearray(_ckpt().to_bytes())
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"XXXX" + bytes(blob[4:]))
    blob[-1] ^= 0xFF
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(bytes(blob))


def test_checkpoint_rejects_unknown_version():
    blob = _ckpt().to_bytes()
    (n,) = struct.unpack("<Q", blob[4:12])
    header = json.loads(blob[12:12 + n])
    header["format_version"] = 2
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(MAGIC + struct.pack("<Q", len(head)) + head + blob[12 + n:])


# ----------------------------------------------------------------- ingest

def test_ingest_examples():
    lines = ['{"smiles":"CCO","labels":{"tox":1}}', '{"smiles":"C("}', '{"smiles":"CCO","labels":{"tox":1}}',
             "not json", '{"smiles":"C","labels":{"x":"high"}}', '{"smiles":"C","extra":1}', ""]
    recs, report = ingest_lines(lines)
    assert len(recs) == 1 and report.duplicates == 1
    bad = {e["line"]: e["reason"] for e in report.errors}
    assert set(bad) == {2, 4, 5, 6}
    assert "ParseError" in bad[2]
    with pytest.raises(IngestError, match="line 2"):
        ingest_lines(lines, strict=True)


def test_ingest_null_label_allowed():
    recs, report = ingest_lines(['{"smiles":"C","labels":{"tox":null}}'])
    assert recs[0].labels == {"tox": None} and not report.errors


# ----------------------------------------------------------------- commands

@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return path


def _run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr()


def test_full_command_chain(tmp_path, tiny_config, capsys):
    out = tmp_path / "runs"
    common = ["--config", str(tiny_config), "--out", str(out)]
    for cmd in ("pretrain-backbone", "pretrain-stage1", "train-stage2"):
        code, cap = _run(capsys, cmd, *common)
        assert code == 0, cap.err
    run_dir = out / config_hash(from_dict(TINY))
    assert (run_dir / "stage2.g2t").exists() and (run_dir / "stage1.g2t").exists()
    code, cap = _run(capsys, "fewshot", *common)
    assert code == 0, cap.err
    assert json.loads(cap.out)["fraction"] == RunConfig().fraction

    # a new fraction changes the config hash, so inputs are passed explicitly
    code, cap = _run(capsys, "fewshot", *common, "--backbone", str(run_dir / "backbone.g2t"),
                     "--checkpoint", str(run_dir / "stage2.g2t"), "--fraction", "0.1")
    assert code == 0, cap.err
    report = json.loads(cap.out)
    assert report["fraction"] == 0.1 and report["sampled"] == int(np.ceil(0.1 * report["pool"]))
    assert report["config_hash"] != run_dir.name

    code, cap = _run(capsys, "evaluate", *common)
    assert code == 0, cap.err
    metrics = json.loads(cap.out)
    assert metrics["config_hash"] == run_dir.name and "mae" in metrics["metrics"]["atom_count"]

    code, cap = _run(capsys, "inspect", *common, "--smiles", "c1ccccc1")
    assert code == 0, cap.err
    heads = json.loads(cap.out)["heads"]
    assert len(heads) == 2 and len(heads[0]) == 8


def test_commands_are_reproducible(tmp_path, tiny_config, capsys):
    blobs = []
    for root in ("a", "b"):
        code, _ = _run(capsys, "pretrain-backbone", "--config", str(tiny_config), "--out", str(tmp_path / root))
        assert code == 0
        blobs.append(next((tmp_path / root).glob("*/backbone.g2t")).read_bytes())
    assert blobs[0] == blobs[1]


def test_env_var_sets_output_root(tmp_path, tiny_config, capsys, monkeypatch):
    monkeypatch.setenv("G2T_OUT_DIR", str(tmp_path / "env"))
    code, _ = _run(capsys, "pretrain-backbone", "--config", str(tiny_config))
    assert code == 0
    assert list((tmp_path / "env").glob("*/backbone.g2t"))


def test_unknown_config_key_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"stage2": {"learning_rate": 0.1}}))
    code, cap = _run(capsys, "train-stage2", "--config", str(bad), "--out", str(tmp_path))
    assert code == cli.EXIT_BAD_INPUT and "stage2.learning_rate" in cap.err


def test_missing_artifact_message(tmp_path, tiny_config, capsys):
    code, cap = _run(capsys, "train-stage2", "--config", str(tiny_config), "--out", str(tmp_path))
    assert code == cli.EXIT_BAD_INPUT and "backbone.g2t" in cap.err


def test_frozen_violation_is_fatal(tmp_path, tiny_config, capsys):
    common = ["--config", str(tiny_config), "--out", str(tmp_path)]
    assert _run(capsys, "pretrain-backbone", *common)[0] == 0
    path = next(tmp_path.glob("*/backbone.g2t"))
    ckpt = Checkpoint.load(path)
    ckpt.tensors["backbone.tok_emb"] = ckpt.tensors["backbone.tok_emb"] + 1e-3
    ckpt.save(path)  # self-consistent file, but not the backbone that was frozen
    code, cap = _run(capsys, "train-stage2", *common)
    assert code == cli.EXIT_VIOLATION and "frozen" in cap.err


def test_lock_blocks_concurrent_writer(tmp_path, tiny_config, capsys):
    from filelock import FileLock
    run_dir = tmp_path / config_hash(from_dict(TINY))
    run_dir.mkdir(parents=True)
    with FileLock(str(run_dir / ".lock")):
        code, cap = _run(capsys, "pretrain-backbone", "--config", str(tiny_config), "--out", str(tmp_path))
    assert code == cli.EXIT_LOCKED


def test_ingest_command(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    data.write_text('{"smiles":"CCO","labels":{"tox":1}}\n{"smiles":"C("}\n')
    code, cap = _run(capsys, "ingest", str(data), "--out", str(tmp_path))
    assert code == 0
    assert json.loads(cap.out)["accepted"] == 1
    code, cap = _run(capsys, "ingest", str(data), "--out", str(tmp_path), "--strict")
    assert code == cli.EXIT_BAD_INPUT


def test_gradcheck_command_exit_code(tmp_path, capsys, monkeypatch):
    code, cap = _run(capsys, "gradcheck", "--seeds", "1", "--out", str(tmp_path))
    assert code == 0 and "matmul" in cap.out
    monkeypatch.setattr(cli.gradsuite, "run_suite", lambda seeds, report=None: {"broken": 1.0})
    assert _run(capsys, "gradcheck", "--out", str(tmp_path))[0] == cli.EXIT_FAILED
