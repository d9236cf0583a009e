import hashlib
import json
import os
import shutil

import numpy as np
import pytest

from sponspeech.cli import main

TOY_CFG = """
model.d_model = 32
model.n_heads = 2
model.n_layers_ar = 1
model.n_layers_nar = 1
model.feedforward_dim = 48
model.dropout = 0.0
model.text_vocab = 64
model.max_seq_len = 256
model.n_layers_label_predictor = 1
model.n_layers_prosody_predictor = 1
codec.num_quantizers = 2
codec.vocab_size = 17
codec.frame_hop = 16
codec.sample_rate = 800
mel.n_mels = 20
mel.win_length = 64
mel.hop_length = 16
train.batch_size = 2
train.steps_pretrain = 4
train.steps_stage1 = 3
train.steps_stage2 = 3
train.steps_stage3 = 2
gen.num_utterances = 6
gen.num_chars = 8
gen.min_chars = 2
gen.max_chars = 3
gen.base_frames = 3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "toy.cfg"
    cfg.write_text(TOY_CFG)
    corpus = root / "corpus"
    assert main(["gen-data", "--seed", "0", "--out", str(corpus),
                 "--config", str(cfg)]) == 0
    run = root / "run"
    assert main(["pretrain", "--corpus", str(corpus), "--out", str(run),
                 "--config", str(cfg)]) == 0
    return root, cfg, corpus, run


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "gen-data" in capsys.readouterr().out


def test_unknown_flag_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--frobnicate"])
    assert exc.value.code == 2


def test_unknown_subcommand_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["make-it-speak"])
    assert exc.value.code == 2


def test_gen_data_and_annotate_check(workspace):
    root, cfg, corpus, _ = workspace
    assert (corpus / "corpus.jsonl").exists()
    assert main(["annotate-check", "--corpus", str(corpus)]) == 0


def test_annotate_check_flags_bad_records(tmp_path, workspace):
    _, _, corpus, _ = workspace
    bad = tmp_path / "bad.jsonl"
    lines = (corpus / "corpus.jsonl").read_text().splitlines()
    record = json.loads(lines[0])
    record["char_labels"] = record["char_labels"][:-1] + [99]
    bad.write_text(json.dumps(record) + "\n")
    assert main(["annotate-check", "--corpus", str(bad)]) == 1


def test_gen_data_env_seed_matches_flag(tmp_path, workspace, monkeypatch):
    _, cfg, _, _ = workspace
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["gen-data", "--seed", "5", "--out", str(a), "--config", str(cfg)]) == 0
    monkeypatch.setenv("SPON_SEED", "5")
    assert main(["gen-data", "--out", str(b), "--config", str(cfg)]) == 0
    assert (a / "corpus.jsonl").read_text() == (b / "corpus.jsonl").read_text()


def test_pretrain_writes_checkpoint_and_metrics(workspace):
    _, _, _, run = workspace
    assert (run / "pretrained.pt").exists()
    entries = [json.loads(x) for x in (run / "metrics.jsonl").read_text().splitlines()]
    assert entries and all(e["stage"] == "pretrained" for e in entries)


def test_training_does_not_mutate_corpus(workspace):
    _, cfg, corpus, run = workspace
    before = sha(corpus / "corpus.jsonl")
    wavs_before = sorted(os.listdir(corpus / "wavs"))
    assert main(["finetune", "--stage", "1", "--corpus", str(corpus),
                 "--ckpt", str(run / "pretrained.pt"), "--out", str(run),
                 "--config", str(cfg)]) == 0
    assert sha(corpus / "corpus.jsonl") == before
    assert sorted(os.listdir(corpus / "wavs")) == wavs_before


def test_finetune_stage_gating_error(workspace):
    _, cfg, corpus, run = workspace
    code = main(["finetune", "--stage", "3", "--corpus", str(corpus),
                 "--ckpt", str(run / "pretrained.pt"), "--out", str(run),
                 "--config", str(cfg)])
    assert code == 1


def test_finetune_hash_mismatch_refused_unless_forced(workspace, tmp_path):
    _, cfg, corpus, run = workspace
    other = tmp_path / "other.cfg"
    other.write_text(TOY_CFG + "train.seed = 99\n")
    args = ["finetune", "--stage", "1", "--corpus", str(corpus),
            "--ckpt", str(run / "pretrained.pt"), "--out", str(tmp_path / "out"),
            "--config", str(other)]
    assert main(args) == 1
    assert main(args + ["--force"]) == 0


def test_full_staging_synth_and_eval(workspace, tmp_path):
    _, cfg, corpus, run = workspace
    assert main(["finetune", "--stage", "all", "--corpus", str(corpus),
                 "--ckpt", str(run / "pretrained.pt"), "--out", str(run),
                 "--config", str(cfg)]) == 0
    for stage in (1, 2, 3):
        assert (run / f"stage{stage}.pt").exists()

    hyp = tmp_path / "hyp"
    hyp.mkdir()
    out_wav = hyp / "utt_0000.wav"
    assert main(["synth", "--ckpt", str(run / "stage3.pt"), "--corpus", str(corpus),
                 "--id", "utt_0000", "--out", str(out_wav),
                 "--config", str(cfg)]) == 0
    assert out_wav.exists()
    sidecar = json.loads((hyp / "utt_0000.wav.json").read_text())
    assert set(sidecar) == {"labels", "p_norms", "tokens_len", "seed"}

    # baseline synthesis from the stage-1 checkpoint
    assert main(["synth", "--ckpt", str(run / "stage1.pt"), "--corpus", str(corpus),
                 "--id", "utt_0001", "--out", str(hyp / "utt_0001.wav"),
                 "--baseline", "--config", str(cfg)]) == 0

    csv = tmp_path / "mcd.csv"
    assert main(["eval", "--ref", str(corpus / "wavs"), "--hyp", str(hyp),
                 "--out", str(csv), "--config", str(cfg)]) == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == "id,mcd"
    assert lines[-1].startswith("mean,")
    values = [float(line.split(",")[1]) for line in lines[1:]]
    assert all(np.isfinite(v) for v in values)


def test_synth_predicted_labels(workspace, tmp_path):
    _, cfg, corpus, run = workspace
    out = tmp_path / "pred.wav"
    assert main(["synth", "--ckpt", str(run / "stage3.pt"), "--corpus", str(corpus),
                 "--id", "utt_0002", "--out", str(out), "--labels", "predicted",
                 "--config", str(cfg)]) == 0
    sidecar = json.loads((tmp_path / "pred.wav.json").read_text())
    assert all(0 <= lab < 20 for lab in sidecar["labels"])


def test_synth_full_rejects_stage1(workspace, tmp_path):
    _, cfg, corpus, run = workspace
    code = main(["synth", "--ckpt", str(run / "stage1.pt"), "--corpus", str(corpus),
                 "--id", "utt_0000", "--out", str(tmp_path / "x.wav"),
                 "--config", str(cfg)])
    assert code == 1


def test_synth_request_file(workspace, tmp_path):
    _, cfg, corpus, run = workspace
    request = {
        "phonemes": [3, 5, 0],
        "chars": ["b", "c", "。"],
        "char_phoneme_counts": [1, 1, 1],
        "labels": [0, 2, 0],
        "prompt_tokens": [[1, 2], [3, 4]],
        "seed": 11,
    }
    path = tmp_path / "req.json"
    path.write_text(json.dumps(request))
    out = tmp_path / "req.wav"
    assert main(["synth", "--ckpt", str(run / "stage3.pt"), "--request", str(path),
                 "--out", str(out), "--config", str(cfg)]) == 0
    sidecar = json.loads((tmp_path / "req.wav.json").read_text())
    assert sidecar["seed"] == 11
    assert sidecar["labels"] == [0, 2, 0]


def test_eval_requires_overlap(workspace, tmp_path):
    _, cfg, corpus, _ = workspace
    empty = tmp_path / "empty"
    empty.mkdir()
    code = main(["eval", "--ref", str(corpus / "wavs"), "--hyp", str(empty),
                 "--config", str(cfg)])
    assert code == 1
