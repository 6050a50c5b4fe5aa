"""Command-line surface: mix, train, denoise, eval, gradcheck.

Exit codes: 0 success, 1 verification/eval failure, 2 usage or I/O error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import snmf as snmf_mod
from .audio_io import read_wav, write_wav
from .config import parse_config_file, resolve
from .dsp import compress, istft, stft
from .errors import ScesepError
from .inference import denoise, reconstruct_binary, reconstruct_ratio
from .metrics import CSV_HEADER, best_permutation, report
from .mixtures import (
    NOISE_KINDS,
    build_corpus,
    read_manifest,
    write_manifest,
)
from .model import (
    TrainState,
    load_checkpoint,
    load_inference_model,
    save_checkpoint,
    train,
    write_log,
)
from .seeding import stream_seed
from .verify import run_gradient_checks

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

ALGOS = ("sce-mi", "snmf", "oracle-binary", "identity")


def _build_parser():
    parser = argparse.ArgumentParser(prog="scesep", description=__doc__)
    parser.add_argument("--config", type=Path, help="key = value config file")
    parser.add_argument("--seed", type=int, help="master seed (default 0)")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_mix = sub.add_parser("mix", help="build a synthetic corpus manifest")
    p_mix.add_argument("--materialize", action="store_true", help="also write WAVs")

    p_train = sub.add_parser("train", help="train SCE+MI or fit SNMF dictionaries")
    p_train.add_argument("--manifest", type=Path, required=True)
    p_train.add_argument("--algo", choices=("sce-mi", "snmf"), default="sce-mi")
    p_train.add_argument("--resume", type=Path, help="checkpoint to continue from")

    p_den = sub.add_parser("denoise", help="separate one WAV into source stems")
    p_den.add_argument("--checkpoint", type=Path, required=True)
    p_den.add_argument("input_wav", type=Path)
    p_den.add_argument("--mode", choices=("cluster", "mi"), default="cluster")
    p_den.add_argument("--K", type=int, default=2)

    p_eval = sub.add_parser("eval", help="evaluate algorithms on the test split")
    p_eval.add_argument("--manifest", type=Path, required=True)
    p_eval.add_argument("--checkpoint", type=Path, help="SCEM checkpoint for sce-mi")
    p_eval.add_argument("--snmf-dir", type=Path, help="directory of SNMF dictionaries")
    p_eval.add_argument("--algo", action="append", choices=ALGOS)
    p_eval.add_argument("--mode", choices=("cluster", "mi", "both"), default="both")
    p_eval.add_argument("--K", type=int, default=2)

    sub.add_parser("gradcheck", help="finite-difference verification suite")
    return parser


def cmd_mix(cfg, out_dir: Path, materialize: bool) -> int:
    corpus = build_corpus(
        cfg.n_train, cfg.n_val, cfg.n_test,
        (cfg.snr_min_db, cfg.snr_max_db),
        seed=cfg.seed, cfg=cfg.stft_config(), clip_duration_s=cfg.clip_duration_s,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.tsv"
    write_manifest(manifest, corpus)
    print(f"wrote {manifest}: train={cfg.n_train} val={cfg.n_val} test={cfg.n_test}")
    if materialize:
        for split in ("train", "val", "test"):
            for rec in getattr(corpus, split):
                write_wav(out_dir / f"{rec.clip_id}.mix.wav", rec.mixture)
                for i, src in enumerate(rec.sources):
                    write_wav(out_dir / f"{rec.clip_id}.src{i}.wav", src)
        n = cfg.n_train + cfg.n_val + cfg.n_test
        print(f"materialized {n * (len(corpus.train[0].sources) + 1)} WAV files")
    return EXIT_OK


def cmd_train(cfg, out_dir: Path, manifest: Path, algo: str, resume: Path) -> int:
    corpus = read_manifest(manifest, cfg.seed, cfg.stft_config(), cfg.clip_duration_s)
    out_dir.mkdir(parents=True, exist_ok=True)
    if algo == "snmf":
        return _train_snmf(cfg, out_dir, corpus)
    model_cfg = cfg.model_config(corpus.n_sources)
    state = None
    if resume is not None:
        state, _ = load_checkpoint(resume)
        print(f"resuming from {resume} at epoch {state.epoch}")
    state = train(corpus.train, corpus.val, model_cfg, cfg.seed, state=state)
    ckpt = out_dir / "model.scem"
    save_checkpoint(ckpt, state, cfg.seed)
    write_log(out_dir / "train_log.csv", state.log_rows)
    last = state.log_rows[-1] if state.log_rows else (state.epoch, 0, 0, 0, 0)
    print(
        f"wrote {ckpt} (best val at epoch {state.best_epoch}); "
        f"final train_sce={last[1]:.4f} train_mi={last[2]:.6f}"
    )
    return EXIT_OK


def _train_snmf(cfg, out_dir: Path, corpus) -> int:
    snmf_cfg = cfg.snmf_config()
    by_class = {}
    for rec in corpus.train:
        for spec, clip_id in zip(rec.source_specs, rec.source_clip_ids):
            class_id = 0 if clip_id == rec.source_clip_ids[0] else (
                1 + NOISE_KINDS.index(rec.noise_kind)
            )
            mag = snmf_mod.trim_silence(compress(spec).mag, snmf_cfg.trim_threshold)
            by_class.setdefault(class_id, []).append(mag)
    for class_id, mags in sorted(by_class.items()):
        d, history = snmf_mod.fit_dictionary(mags, snmf_cfg, class_id, cfg.seed)
        path = out_dir / f"snmf_class{class_id}.dict"
        snmf_mod.save_dictionary(path, d)
        print(f"wrote {path} (rank {snmf_cfg.rank}, final objective {history[-1]:.4f})")
    return EXIT_OK


def cmd_denoise(cfg, out_dir: Path, checkpoint: Path, input_wav: Path, mode: str, k: int) -> int:
    model = load_inference_model(checkpoint)
    w = read_wav(input_wav)
    stft_cfg = cfg.stft_config()
    if w.sample_rate_hz != stft_cfg.sample_rate_hz:
        print(
            f"warning: resampling {input_wav} from {w.sample_rate_hz} Hz "
            f"to {stft_cfg.sample_rate_hz} Hz",
            file=sys.stderr,
        )
    result = denoise(
        model, w, mode=mode, k=k, cfg=stft_cfg, seed=cfg.seed,
        restarts=cfg.kmeans_restarts, low_energy_threshold=cfg.low_energy_threshold,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, stem in enumerate(result.stems):
        path = out_dir / f"{input_wav.stem}.src{i}.wav"
        write_wav(path, stem)
        rms = float(np.sqrt(np.mean(stem.samples**2)))
        print(f"{path} rms={rms:.6f}")
    return EXIT_OK


def _check_partition_invariants(rec, result, stft_cfg) -> None:
    """Mask partition invariants, enforced on every eval run."""
    if result.mode == "mi":
        roundtrip = istft(rec.mixture_spec, stft_cfg, trim=True, length=len(rec.mixture)).samples
        total = np.sum([s.samples for s in result.stems], axis=0)
        if np.max(np.abs(total - roundtrip)) > 1e-9:
            raise ScesepError("ratio-mask stems do not sum to the mixture")
    else:
        onehot = (result.masks + 1.0) / 2.0
        if not np.allclose(onehot.sum(axis=2), 1.0):
            raise ScesepError("binary masks are not an exact partition")
        history = np.array(result.assignment.inertia_history)
        if np.any(np.diff(history) > 1e-9 * max(history[0], 1.0)):
            raise ScesepError("K-means inertia increased across Lloyd iterations")


def _estimates_for(algo, mode, rec, model, dicts, cfg, stft_cfg, k):
    """Yield (mode_tag, stems) pairs for one algorithm on one record."""
    if algo == "identity":
        yield "", [rec.mixture for _ in rec.sources]
    elif algo == "oracle-binary":
        yield "", reconstruct_binary(rec.mixture_spec, rec.labels, stft_cfg, length=len(rec.mixture))
    elif algo == "snmf":
        masks = snmf_mod.separate(
            compress(rec.mixture_spec).mag, dicts, cfg.snmf_config(), cfg.seed
        )
        yield "", reconstruct_ratio(rec.mixture_spec, masks, stft_cfg)
    else:  # sce-mi
        modes = ("cluster", "mi") if mode == "both" else (mode,)
        for m in modes:
            result = denoise(
                model, rec.mixture, mode=m, k=k,
                cfg=stft_cfg, seed=stream_seed(cfg.seed, f"eval-{rec.clip_id}"),
                restarts=cfg.kmeans_restarts,
                low_energy_threshold=cfg.low_energy_threshold,
            )
            _check_partition_invariants(rec, result, stft_cfg)
            yield m, result.stems


def cmd_eval(cfg, out_dir: Path, manifest: Path, checkpoint: Path,
             snmf_dir: Path, algos, mode: str, k: int) -> int:
    corpus = read_manifest(manifest, cfg.seed, cfg.stft_config(), cfg.clip_duration_s)
    stft_cfg = cfg.stft_config()
    algos = algos or ["sce-mi"]
    model = load_inference_model(checkpoint) if "sce-mi" in algos else None
    dicts = None
    if "snmf" in algos:
        speech = snmf_mod.load_dictionary(snmf_dir / "snmf_class0.dict")
        noise_ws = []
        for kind_idx in range(1, 1 + len(NOISE_KINDS)):
            path = snmf_dir / f"snmf_class{kind_idx}.dict"
            if path.exists():
                noise_ws.append(snmf_mod.load_dictionary(path).w)
        dicts = [speech, snmf_mod.Dictionary(np.hstack(noise_ws), -1)]

    rows = []
    summaries = {}
    for algo in algos:
        for rec in corpus.test:
            for mode_tag, stems in _estimates_for(algo, mode, rec, model, dicts, cfg, stft_cfg, k):
                res = best_permutation(
                    rec.sources, stems, mixture=rec.mixture,
                    snr_db=rec.snr_db, noise_kind=rec.noise_kind,
                )
                summaries.setdefault((algo, mode_tag), []).append(res)
                for est_idx, ref_idx in enumerate(res.permutation):
                    rows.append(
                        f"{rec.clip_id},{algo},{mode_tag},{rec.snr_db!r},{rec.noise_kind},"
                        f"{ref_idx},{res.per_source_sdr_db[est_idx]!r},"
                        f"{res.sdr_improvement_db[est_idx]!r}"
                    )
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(CSV_HEADER + "\n")
        f.write("\n".join(rows) + "\n")
    print(f"wrote {csv_path} ({len(rows)} rows)")
    for (algo, mode_tag), results in summaries.items():
        label = f"{algo}/{mode_tag}" if mode_tag else algo
        for group, mean, median, count in report(results, "noise_kind"):
            print(f"{label:24s} noise={group:12s} mean={mean:+7.2f} dB "
                  f"median={median:+7.2f} dB n={count}")
    return EXIT_OK


def cmd_gradcheck(seed: int) -> int:
    failed = False
    for name, err, tol, ok in run_gradient_checks(seed):
        status = "PASS" if ok else "FAIL"
        print(f"{status} {name:28s} max_rel_error={err:.3e} tol={tol:.0e}")
        failed |= not ok
    return EXIT_FAIL if failed else EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        file_overrides = parse_config_file(args.config) if args.config else {}
        cfg = resolve(file_overrides, {"seed": args.seed})
        if args.seed is None and "seed" not in file_overrides:
            cfg.seed = 0
        if args.command == "mix":
            return cmd_mix(cfg, args.out, args.materialize)
        if args.command == "train":
            return cmd_train(cfg, args.out, args.manifest, args.algo, args.resume)
        if args.command == "denoise":
            return cmd_denoise(cfg, args.out, args.checkpoint, args.input_wav, args.mode, args.K)
        if args.command == "eval":
            return cmd_eval(cfg, args.out, args.manifest, args.checkpoint,
                            args.snmf_dir, args.algo, args.mode, args.K)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg.seed)
        parser.error(f"unknown command {args.command}")
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ScesepError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
