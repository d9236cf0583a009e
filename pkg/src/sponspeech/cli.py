"""Command-line entry point wiring data generation, training, synthesis, eval.

Exit codes: 0 success, 1 runtime failure (structured message on stderr),
2 usage errors. Logs go to stderr; artifacts go to the paths given by flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import annotation, datagen, training
from .codec import MockCodec, read_wav, write_wav
from .config import RunConfig
from .backbone import SamplingConfig
from .errors import SponSpeechError
from .evaluation import MelParams, mcd, mel_spectrogram
from .model import Checkpoint
from .synthesis import SynthesisRequest, synthesize


def _log(msg):
    print(msg, file=sys.stderr)


def _load_config(path) -> RunConfig:
    cfg = RunConfig.from_file(path) if path else RunConfig()
    return cfg.apply_env()


def _load_corpus_dir(corpus_dir):
    path = os.path.join(corpus_dir, "corpus.jsonl")
    if not os.path.exists(path):
        raise SponSpeechError(f"no corpus.jsonl under {corpus_dir}")
    return annotation.load_corpus(path)


def _prepare(corpus_dir, cfg: RunConfig):
    records = _load_corpus_dir(corpus_dir)
    codec = MockCodec(cfg.codec_spec())
    return training.prepare_items(records, codec, cfg.mel_params(),
                                  corpus_dir=corpus_dir), records


def _load_checkpoint(path, cfg: RunConfig, force: bool) -> Checkpoint:
    expected = None if force else cfg.hash()
    return Checkpoint.load(path, expected_hash=expected)


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.values["gen.seed"] = args.seed
    spec = cfg.gen_spec()
    records = datagen.generate(spec, args.out)
    _log(f"wrote {len(records)} utterances to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_config(args.config)
    items, _ = _prepare(args.corpus, cfg)
    os.makedirs(args.out, exist_ok=True)
    metrics = os.path.join(args.out, "metrics.jsonl")
    ckpt, history = training.pretrain(
        items, cfg.model_config(), cfg.training_config(), metrics_path=metrics
    )
    ckpt.config_hash = cfg.hash()
    path = os.path.join(args.out, "pretrained.pt")
    ckpt.save(path)
    _log(f"pretraining done, final loss {history[-1]['loss']:.4f}; saved {path}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_config(args.config)
    items, _ = _prepare(args.corpus, cfg)
    train_cfg = cfg.training_config()
    os.makedirs(args.out, exist_ok=True)
    metrics = os.path.join(args.out, "metrics.jsonl")
    ckpt = _load_checkpoint(args.ckpt, cfg, args.force)
    stages = ["1", "2", "3"] if args.stage == "all" else [args.stage]
    runner = {
        "1": training.finetune_stage1,
        "2": training.finetune_stage2,
        "3": training.finetune_stage3,
    }
    for stage in stages:
        ckpt, history = runner[stage](items, ckpt, train_cfg, metrics_path=metrics)
        ckpt.config_hash = cfg.hash()
        path = os.path.join(args.out, f"stage{stage}.pt")
        ckpt.save(path)
        _log(f"stage {stage} done, final loss {history[-1]['loss']:.4f}; saved {path}")
    return 0


def _request_from_record(record, cfg: RunConfig, corpus_dir, label_source,
                         sampling) -> SynthesisRequest:
    codec = MockCodec(cfg.codec_spec())
    if record.tokens is not None:
        grid = record.tokens
    else:
        wave = read_wav(os.path.join(corpus_dir, record.audio_path),
                        expected_rate=codec.spec.sample_rate)
        grid = codec.encode(wave).tokens
    prompt = grid[: cfg["model.prompt_frames"]]
    manual = list(record.char_labels) if label_source == "record" else None
    return SynthesisRequest(
        phonemes=list(record.phonemes),
        chars=list(record.chars),
        char_phoneme_counts=list(record.char_phoneme_counts),
        manual_labels=manual,
        prompt=prompt,
        sampling=sampling,
    )


def _request_from_file(path, cfg: RunConfig, sampling) -> SynthesisRequest:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    prompt = None
    if data.get("prompt_tokens") is not None:
        prompt = np.asarray(data["prompt_tokens"], dtype=np.int64)
    elif data.get("prompt_wav"):
        codec = MockCodec(cfg.codec_spec())
        wave = read_wav(data["prompt_wav"], expected_rate=codec.spec.sample_rate)
        prompt = codec.encode(wave).tokens[: cfg["model.prompt_frames"]]
    if data.get("seed") is not None:
        sampling = SamplingConfig(
            temperature=sampling.temperature, top_k=sampling.top_k,
            seed=int(data["seed"]), max_len=sampling.max_len,
        )
    return SynthesisRequest(
        phonemes=data["phonemes"],
        chars=data["chars"],
        char_phoneme_counts=data["char_phoneme_counts"],
        manual_labels=data.get("labels"),
        prompt=prompt,
        sampling=sampling,
    )


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    seed = cfg["synth.seed"] if args.seed is None else args.seed
    sampling = SamplingConfig(
        temperature=cfg["synth.temperature"], top_k=cfg["synth.top_k"], seed=seed
    )
    ckpt = _load_checkpoint(args.ckpt, cfg, args.force)
    if args.request:
        req = _request_from_file(args.request, cfg, sampling)
    elif args.corpus and args.id:
        records = {r.id: r for r in _load_corpus_dir(args.corpus)}
        if args.id not in records:
            raise SponSpeechError(f"utterance {args.id!r} not in {args.corpus}")
        req = _request_from_record(records[args.id], cfg, args.corpus,
                                   args.labels, sampling)
    else:
        raise SponSpeechError("synth needs either --request or --corpus with --id")
    wave, diagnostics = synthesize(req, ckpt, use_prosody=not args.baseline)
    write_wav(args.out, wave, cfg["codec.sample_rate"])
    with open(args.out + ".json", "w", encoding="utf-8") as fh:
        json.dump(diagnostics, fh)
    _log(f"wrote {args.out} ({diagnostics['tokens_len']} frames)")
    return 0


def cmd_annotate_check(args) -> int:
    path = args.corpus
    if os.path.isdir(path):
        base_dir = path
        path = os.path.join(path, "corpus.jsonl")
    else:
        base_dir = os.path.dirname(path)
    failures = 0
    total = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                utt = annotation.parse_transcript(line)
                if utt.audio_path is not None:
                    wav = os.path.join(base_dir, utt.audio_path)
                    if not os.path.exists(wav):
                        raise SponSpeechError(f"missing audio file {wav}")
            except SponSpeechError as exc:
                failures += 1
                _log(f"line {lineno}: {exc}")
    _log(f"checked {total} records, {failures} invalid")
    return 1 if failures else 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)

    def stems(d):
        return {
            os.path.splitext(name)[0]: os.path.join(d, name)
            for name in sorted(os.listdir(d))
            if name.endswith(".wav")
        }

    ref, hyp = stems(args.ref), stems(args.hyp)
    shared = sorted(set(ref) & set(hyp))
    if not shared:
        raise SponSpeechError("no common wav stems between --ref and --hyp")
    skipped = sorted(set(ref) ^ set(hyp))
    if skipped:
        _log(f"skipping {len(skipped)} unmatched stems")

    rows = []
    for stem in shared:
        wave_ref = read_wav(ref[stem])
        wave_hyp = read_wav(hyp[stem])
        mp = cfg.mel_params()
        value = mcd(mel_spectrogram(wave_ref, mp), mel_spectrogram(wave_hyp, mp))
        rows.append((stem, value))
    lines = ["id,mcd"]
    lines += [f"{stem},{value:.6f}" for stem, value in rows]
    lines.append(f"mean,{np.mean([v for _, v in rows]):.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _log(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sponspeech",
        description="Spontaneous-style codec language-model TTS toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="pretrain the acoustic backbone")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="run fine-tuning steps")
    p.add_argument("--stage", choices=["1", "2", "3", "all"], required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--force", action="store_true",
                   help="ignore checkpoint/config hash mismatches")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("synth", help="synthesize a waveform")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--request", default=None, help="JSON request file")
    p.add_argument("--corpus", default=None)
    p.add_argument("--id", default=None, help="corpus utterance id")
    p.add_argument("--labels", choices=["record", "predicted"], default="record")
    p.add_argument("--baseline", action="store_true",
                   help="zero the prosody conditioning")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("annotate-check", help="validate a corpus file")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_annotate_check)

    p = sub.add_parser("eval", help="MCD between two directories of wavs")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SponSpeechError as exc:
        _log(f"error: {exc}")
        return 1
    except (OSError, ValueError, KeyError) as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
