"""Command-line front end.

Subcommands: synth-data, train, train-baseline, enhance, evaluate,
gain-corr, verify. Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.

Training configuration files are flat ``key = value`` text; unknown keys
are rejected. Data directories produced by synth-data contain the clean
utterance WAVs per split, the three disjoint noise segments, envelope
dataset caches (train.pack / val.pack) and a meta.txt record.
"""

from __future__ import annotations

import argparse
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baseline, mixing, neural, pipeline
from .signal_io import TimeSignal, WavError, read_wav, to_working_rate, write_wav

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_CONFIG_KEYS = {
    "initial_lr_per_sample": float,
    "lr_decay": float,
    "lr_floor": float,
    "max_epochs": int,
    "minibatch": int,
    "seed": int,
    "hidden": str,
    "max_train_frames": int,
    "max_val_frames": int,
}


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # let SNR values like "-5:10" or "-5,0,5" pass as option values
        self._negative_number_matcher = re.compile(r"^-\d+[\d:,.]*$")

    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="envgain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a desk-scale mixing corpus")
    p.add_argument("--manifest", required=True,
                   help="WAV file list, or pseudo:COUNTxSECONDS for synthetic speech")
    p.add_argument("--noise", required=True,
                   help="ssn | babble | file:PATH")
    p.add_argument("--snr-range", default="-5:10", help="training SNR range LO:HI in dB")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train envelope-gain networks")
    p.add_argument("--data", required=True)
    p.add_argument("--objective", choices=("elc", "emse"), default="elc")
    p.add_argument("--band", default="all", help="0..14, all, or joint")
    p.add_argument("--config", help="key = value training overrides")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-baseline", help="train the spectral-magnitude MSE baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", type=int, default=512, help="hidden units per layer, e.g. 512 or 4096")
    p.add_argument("--config", help="key = value training overrides")
    p.add_argument("--out", required=True)

    p = sub.add_parser("enhance", help="enhance one WAV file")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score a model on a test set")
    p.add_argument("--model", required=True)
    p.add_argument("--testset", required=True)
    p.add_argument("--snrs", default="-5,0,5")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gain-corr", help="gain-vector correlation between two models")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--testset", required=True)
    p.add_argument("--snrs", default="-5,5")
    p.add_argument("--seed", type=int, default=0)

    sub.add_parser("verify", help="run the analytic-vs-numeric gradient checks")
    return parser


def _parse_snr_range(text: str):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise ValueError(f"bad SNR range {text!r}, expected LO:HI") from None
    if hi < lo:
        raise ValueError(f"bad SNR range {text!r}: HI < LO")
    return lo, hi


def _parse_snr_list(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"bad SNR list {text!r}, expected comma-separated dB values") from None


def _load_speech(manifest: str, seed: int) -> list[TimeSignal]:
    if manifest.startswith("pseudo:"):
        spec = manifest[len("pseudo:"):]
        try:
            count, secs = spec.split("x")
            count, secs = int(count), float(secs)
        except ValueError:
            raise ValueError(f"bad pseudo spec {manifest!r}, expected pseudo:COUNTxSECONDS") from None
        return mixing.pseudo_corpus(count, secs, seed)
    paths = mixing.read_manifest(manifest)
    if not paths:
        raise ValueError(f"{manifest}: empty manifest")
    return [to_working_rate(read_wav(p)) for p in paths]


def _load_train_config(path, objective="elc") -> tuple[neural.TrainConfig, dict]:
    """TrainConfig plus the extra keys (hidden, frame caps) from a config file."""
    extras = {"hidden": neural.DEFAULT_HIDDEN, "max_train_frames": None, "max_val_frames": None}
    config = neural.TrainConfig(objective=objective)
    if path is None:
        return config, extras
    raw = pipeline._parse_kv(path)
    unknown = set(raw) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}; "
                         f"allowed: {sorted(_CONFIG_KEYS)}")
    fields = {}
    for key, value in raw.items():
        if key == "hidden":
            extras["hidden"] = tuple(int(v) for v in value.split(","))
        elif key in ("max_train_frames", "max_val_frames"):
            extras[key] = int(value)
        else:
            fields[key] = _CONFIG_KEYS[key](value)
    return replace(config, **fields), extras


def _cmd_synth_data(args) -> int:
    speech = _load_speech(args.manifest, args.seed)
    if len(speech) < 3:
        raise ValueError(f"need at least 3 utterances to split, got {len(speech)}")
    snr_range = _parse_snr_range(args.snr_range)
    n = len(speech)
    n_val = max(1, n // 10)
    n_test = max(1, n // 10)
    n_train = n - n_val - n_test
    splits = {
        "train": speech[:n_train],
        "val": speech[n_train : n_train + n_val],
        "test": speech[n_train + n_val :],
    }

    longest_s = max(sig.duration_s for sig in speech)
    seg_s = max(10.0, 1.5 * longest_s)
    if args.noise == "ssn":
        noise = mixing.synth_ssn(splits["train"], 3 * seg_s, seed=args.seed + 1)
    elif args.noise == "babble":
        noise = mixing.synth_babble(splits["train"], 6, 3 * seg_s, seed=args.seed + 1)
    elif args.noise.startswith("file:"):
        noise = to_working_rate(read_wav(args.noise[len("file:"):]))
    else:
        raise ValueError(f"unknown noise source {args.noise!r}")
    # stored level is irrelevant (mixing rescales); keep 16-bit headroom
    noise = TimeSignal(noise.samples * (0.9 / np.max(np.abs(noise.samples))), noise.sample_rate_hz)
    noise_train, noise_val, noise_test = mixing.split_noise(
        noise, seg_s, seg_s, noise.duration_s - 2 * seg_s
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, signals in splits.items():
        d = out / f"clean_{split}"
        d.mkdir(exist_ok=True)
        for i, sig in enumerate(signals):
            write_wav(sig, d / f"{i:04d}.wav")
    write_wav(noise_train, out / "noise_train.wav")
    write_wav(noise_val, out / "noise_val.wav")
    write_wav(noise_test, out / "noise_test.wav")

    # caches are built from the quantized WAVs so that rebuilding from disk
    # reproduces them exactly
    def reread(split):
        d = out / f"clean_{split}"
        return [read_wav(p) for p in sorted(d.glob("*.wav"))]

    noise_label = args.noise.split(":")[0]
    train_ds = mixing.build_dataset(
        reread("train"), read_wav(out / "noise_train.wav"),
        split="train", seed=args.seed + 2, snr_range_db=snr_range, noise_source=noise_label,
    )
    val_ds = mixing.build_dataset(
        reread("val"), read_wav(out / "noise_val.wav"),
        split="validation", seed=args.seed + 3, snr_range_db=snr_range, noise_source=noise_label,
    )
    mixing.save_dataset(train_ds, out / "train.pack")
    mixing.save_dataset(val_ds, out / "val.pack")

    meta = [
        f"seed = {args.seed}",
        f"noise = {noise_label}",
        f"snr_range = {snr_range[0]:g}:{snr_range[1]:g}",
        f"n_train = {n_train}",
        f"n_val = {n_val}",
        f"n_test = {n_test}",
    ]
    (out / "meta.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")
    print(f"wrote {args.out}: {n_train} train / {n_val} val / {n_test} test utterances, "
          f"{train_ds.n_frames} train frames")
    return EXIT_OK


def _load_packs(data_dir):
    d = Path(data_dir)
    train_pack, val_pack = d / "train.pack", d / "val.pack"
    if not train_pack.exists() or not val_pack.exists():
        raise FileNotFoundError(f"{data_dir}: missing train.pack/val.pack (run synth-data)")
    return mixing.load_dataset(train_pack), mixing.load_dataset(val_pack)


def _cmd_train(args) -> int:
    train_ds, val_ds = _load_packs(args.data)
    config, extras = _load_train_config(args.config, args.objective)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    caps = dict(
        max_train_frames=extras["max_train_frames"], max_val_frames=extras["max_val_frames"]
    )

    if args.band in ("all", "joint"):
        system, reports = pipeline.train_enhancement_system(
            train_ds, val_ds, config, hidden=extras["hidden"],
            joint=args.band == "joint", **caps,
        )
        pipeline.save_system(system, out)
        for i, rep in enumerate(reports):
            label = "joint" if args.band == "joint" else f"band {i:2d}"
            last = rep.epochs[-1].validation_cost if rep.epochs else float("nan")
            print(f"{label}: {len(rep.epochs)} epochs, stop={rep.stop_reason}, "
                  f"final val cost {last:.6f}")
    else:
        try:
            band = int(args.band)
        except ValueError:
            raise ValueError(f"--band must be 0..14, all or joint, got {args.band!r}") from None
        if not 0 <= band < train_ds.n_bands:
            raise ValueError(f"band {band} out of range 0..{train_ds.n_bands - 1}")
        model, report, norm = pipeline.train_band_model(
            train_ds, val_ds, band, config, hidden=extras["hidden"], **caps
        )
        neural.save_model(model, out / f"band_{band:02d}.mdl", config.objective)
        pipeline._save_norm(norm, out / "feature_norm.bin")
        cfg = train_ds.stft_config
        lines = [
            "kind = per-band",
            f"objective = {config.objective}",
            f"n_bands = {train_ds.n_bands}",
            f"n_env = {train_ds.n_env}",
            f"fft_size = {cfg.fft_size}",
            f"hop = {cfg.hop}",
            f"sample_rate_hz = {train_ds.layout.sample_rate_hz}",
            f"first_center_hz = {train_ds.layout.bands[0].center_hz:g}",
            "out_of_band = zero",
        ]
        (out / "system.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        last = report.epochs[-1].validation_cost if report.epochs else float("nan")
        print(f"band {band}: {len(report.epochs)} epochs, stop={report.stop_reason}, "
              f"final val cost {last:.6f}")
    return EXIT_OK


def _read_split_wavs(data_dir, split):
    d = Path(data_dir) / f"clean_{split}"
    paths = sorted(d.glob("*.wav"))
    if not paths:
        raise FileNotFoundError(f"{d}: no WAV files")
    return [read_wav(p) for p in paths]


def _cmd_train_baseline(args) -> int:
    data = Path(args.data)
    meta = pipeline._parse_kv(data / "meta.txt")
    seed = int(meta.get("seed", "0"))
    snr_range = _parse_snr_range(meta.get("snr_range", "-5:10"))
    config, extras = _load_train_config(args.config, objective="emse")
    hidden = (args.hidden,) * 3 if extras["hidden"] == neural.DEFAULT_HIDDEN else extras["hidden"]

    train_ds = baseline.build_magnitude_dataset(
        _read_split_wavs(data, "train"), read_wav(data / "noise_train.wav"),
        seed=seed + 2, snr_range_db=snr_range,
    )
    val_ds = baseline.build_magnitude_dataset(
        _read_split_wavs(data, "val"), read_wav(data / "noise_val.wav"),
        seed=seed + 3, snr_range_db=snr_range,
    )
    system, report = baseline.train_classical(
        train_ds, val_ds, config, hidden=hidden,
        max_train_frames=extras["max_train_frames"], max_val_frames=extras["max_val_frames"],
    )
    baseline.save_classical(system, args.out)
    last = report.epochs[-1].validation_cost if report.epochs else float("nan")
    print(f"baseline: {len(report.epochs)} epochs, stop={report.stop_reason}, "
          f"final val cost {last:.6f}")
    return EXIT_OK


def _load_any_system(model_dir):
    meta = pipeline._parse_kv(Path(model_dir) / "system.txt")
    if meta.get("kind") == "classical":
        return baseline.load_classical(model_dir), "classical"
    return pipeline.load_system(model_dir), meta.get("kind", "per-band")


def _cmd_enhance(args) -> int:
    system, kind = _load_any_system(args.model)
    noisy = to_working_rate(read_wav(args.infile))
    if kind == "classical":
        enhanced = baseline.classical_enhance(system, noisy)
    else:
        enhanced = pipeline.enhance(system, noisy)
    write_wav(enhanced, args.out)
    print(f"enhanced {args.infile} -> {args.out} ({kind} model)")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    system, kind = _load_any_system(args.model)
    cleans = _read_split_wavs(args.testset, "test")
    noise = read_wav(Path(args.testset) / "noise_test.wav")
    meta = pipeline._parse_kv(Path(args.testset) / "meta.txt")
    noise_type = meta.get("noise", "noise")
    snrs = _parse_snr_list(args.snrs)
    if kind == "classical":
        rows = pipeline.evaluate_system(
            system, cleans, noise, snrs, seed=args.seed, noise_type=noise_type,
            enhancer=lambda sig: baseline.classical_enhance(system, sig),
        )
    else:
        rows = pipeline.evaluate_system(
            system, cleans, noise, snrs, seed=args.seed, noise_type=noise_type
        )
    sys.stdout.write(pipeline.report_tables(rows, args.format))
    return EXIT_OK


def _cmd_gain_corr(args) -> int:
    system_a, kind_a = _load_any_system(args.model_a)
    system_b, kind_b = _load_any_system(args.model_b)
    if "classical" in (kind_a, kind_b):
        raise ValueError("gain-corr requires two envelope-gain models")
    cleans = _read_split_wavs(args.testset, "test")
    noise = read_wav(Path(args.testset) / "noise_test.wav")
    meta = pipeline._parse_kv(Path(args.testset) / "meta.txt")
    for snr in _parse_snr_list(args.snrs):
        snr_key = int(round(snr * 1000)) % (1 << 32)
        children = np.random.SeedSequence([args.seed, snr_key]).spawn(len(cleans))
        noisy = [
            mixing.mix_at_snr(clean, noise, snr, np.random.default_rng(child))[0]
            for child, clean in zip(children, cleans)
        ]
        corr = pipeline.gain_correlation(system_a, system_b, noisy)
        print(f"{meta.get('noise', 'noise')}  {snr:+5.1f} dB  correlation {corr:.4f}")
    return EXIT_OK


def _cmd_verify() -> int:
    from .verification import run_verification

    results = run_verification()
    failed = False
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] {res.name}: {res.detail}")
        failed |= not res.passed
    return EXIT_NUMERIC if failed else EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "synth-data":
            return _cmd_synth_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "train-baseline":
            return _cmd_train_baseline(args)
        if args.command == "enhance":
            return _cmd_enhance(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "gain-corr":
            return _cmd_gain_corr(args)
        if args.command == "verify":
            return _cmd_verify()
        raise AssertionError(f"unhandled command {args.command}")
    except neural.NumericError as exc:
        print(f"envgain: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (WavError, neural.ModelFormatError, FileNotFoundError,
            NotADirectoryError, ValueError, OSError) as exc:
        print(f"envgain: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
