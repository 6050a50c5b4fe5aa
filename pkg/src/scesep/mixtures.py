"""Mixture construction at controlled SNR and per-bin dominance labels.

Synthetic speech-like and noise generators stand in for real corpora at
desk scale; real WAV clips can be substituted through the manifest.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dsp import StftConfig, Waveform, stft
from .errors import EmptyCorpus, ShapeMismatch, SilentSource, UnknownKind
from .seeding import rng_for, stream_seed

NOISE_KINDS = ("siren", "jackhammer", "engine", "crowd")
SPEECH_CLASS_ID = 0
SEGMENT_SECONDS = 2.0


@dataclass(frozen=True)
class SourceClip:
    waveform: Waveform
    class_id: int
    clip_id: str


@dataclass(frozen=True)
class MixRecord:
    """One mixture: waveforms, true source spectrograms, labels, provenance."""

    clip_id: str
    mixture: Waveform
    sources: list  # scaled source Waveforms, speech first
    snr_db: float
    mixture_spec: np.ndarray
    source_specs: list
    labels: np.ndarray  # (T, F, M) in {-1, +1}
    source_ids: list  # global source-table row per source
    source_clip_ids: list
    noise_kind: str
    seed: int


def _unit_power(x: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


def synth_speechlike(duration_s: float, seed: int, sample_rate_hz: int = 10000) -> SourceClip:
    """Harmonic stack with pitch contour, formant-like band emphasis, and
    a syllabic (~4 Hz) amplitude envelope. Unit power, deterministic."""
    if duration_s < SEGMENT_SECONDS:
        raise ValueError("duration_s must be >= 2")
    rng = np.random.default_rng(seed)
    fs = sample_rate_hz
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs

    f0 = rng.uniform(85.0, 220.0)
    vibrato = 0.03 * np.sin(2 * np.pi * rng.uniform(4.0, 7.0) * t + rng.uniform(0, 2 * np.pi))
    drift = 0.12 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
    inst_f0 = f0 * (1.0 + vibrato + drift)
    phase = 2 * np.pi * np.cumsum(inst_f0) / fs

    centers = np.array([rng.uniform(300, 800), rng.uniform(1000, 1800), rng.uniform(2200, 3000)])
    widths = np.array([150.0, 220.0, 300.0])

    sig = np.zeros(n)
    k_max = int(3800.0 / f0)
    for k in range(1, max(k_max, 1) + 1):
        fk = k * f0
        formant_gain = np.sum(np.exp(-0.5 * ((fk - centers) / widths) ** 2))
        amp = (formant_gain + 0.05) / np.sqrt(k)
        sig += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    syllable_rate = rng.uniform(3.0, 5.0)
    env = 0.5 * (1.0 + np.sin(2 * np.pi * syllable_rate * t + rng.uniform(0, 2 * np.pi)))
    sig *= (0.15 + 0.85 * env) ** 1.5

    return SourceClip(Waveform(_unit_power(sig), fs), SPEECH_CLASS_ID, f"speech-{seed}")


def synth_noise(kind: str, duration_s: float, seed: int, sample_rate_hz: int = 10000) -> SourceClip:
    """Synthetic noise of the given kind, unit power, deterministic."""
    if kind not in NOISE_KINDS:
        raise UnknownKind(f"unknown noise kind {kind!r}; choose from {NOISE_KINDS}")
    if duration_s < SEGMENT_SECONDS:
        raise ValueError("duration_s must be >= 2")
    rng = np.random.default_rng(seed)
    fs = sample_rate_hz
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs

    if kind == "siren":
        center = rng.uniform(700.0, 1100.0)
        depth = rng.uniform(300.0, 500.0)
        rate = rng.uniform(0.3, 0.7)
        inst_f = center + depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        sig = np.sin(2 * np.pi * np.cumsum(inst_f) / fs)
    elif kind == "jackhammer":
        period = int(fs / rng.uniform(25.0, 35.0))
        sig = np.zeros(n)
        click_len = int(0.003 * fs)
        decay = np.exp(-np.arange(click_len) / (0.001 * fs))
        for start in range(0, n - click_len, period):
            sig[start : start + click_len] += decay * rng.standard_normal(click_len)
        gate = (np.sin(2 * np.pi * rng.uniform(0.8, 1.2) * t + rng.uniform(0, 2 * np.pi)) > -0.4)
        sig *= gate
    elif kind == "engine":
        f0 = rng.uniform(50.0, 90.0)
        sig = np.zeros(n)
        for k in range(1, 6):
            sig += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
        rumble = np.fft.irfft(
            np.fft.rfft(rng.standard_normal(n))
            * np.exp(-np.fft.rfftfreq(n, 1 / fs) / 120.0),
            n=n,
        )
        sig = 0.85 * _unit_power(sig) + 0.35 * _unit_power(rumble)
    else:  # crowd: band-limited pink noise
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1 / fs)
        shaping = np.zeros_like(freqs)
        band = (freqs >= 100.0) & (freqs <= 4500.0)
        shaping[band] = 1.0 / np.sqrt(freqs[band])
        sig = np.fft.irfft(spec * shaping, n=n)

    return SourceClip(Waveform(_unit_power(sig), fs), 1 + NOISE_KINDS.index(kind), f"{kind}-{seed}")


def _segment(clip: SourceClip, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    x = clip.waveform.samples
    if len(x) < n_samples:
        raise ValueError(f"clip {clip.clip_id} shorter than {n_samples} samples")
    start = int(rng.integers(0, len(x) - n_samples + 1))
    return x[start : start + n_samples]


def make_labels(source_specs) -> np.ndarray:
    """Per-bin dominance labels: +1 for the loudest source, -1 otherwise.

    Ties (including all-zero bins) go to the lowest source index.
    """
    shapes = {s.shape for s in source_specs}
    if len(shapes) != 1:
        raise ShapeMismatch(f"source spectrograms differ in shape: {shapes}")
    mags = np.stack([np.abs(s) for s in source_specs], axis=-1)  # (T, F, M)
    winner = np.argmax(mags, axis=-1)
    y = -np.ones(mags.shape, dtype=np.float64)
    t_idx, f_idx = np.indices(winner.shape)
    y[t_idx, f_idx, winner] = 1.0
    return y


def mix_at_snr(
    speech: SourceClip,
    noise: SourceClip,
    snr_db: float,
    seed: int,
    cfg: StftConfig = StftConfig(),
    clip_id: str = "",
    source_ids: Optional[list] = None,
) -> MixRecord:
    """Mix 2 s segments of speech and noise at an exact SNR.

    Speech is kept at unit gain; the noise gain g solves
    10*log10(P_speech / (g^2 * P_noise)) = snr_db over the chosen segments.
    """
    rng = rng_for(seed, "segment-choice")
    n_seg = int(SEGMENT_SECONDS * cfg.sample_rate_hz)
    s = _segment(speech, n_seg, rng)
    v = _segment(noise, n_seg, rng)
    p_s = np.mean(s * s)
    p_v = np.mean(v * v)
    if p_s == 0.0 or p_v == 0.0:
        raise SilentSource("segment has zero power")
    g = np.sqrt(p_s / (p_v * 10.0 ** (snr_db / 10.0)))
    scaled = [s, g * v]
    mixture = Waveform(scaled[0] + scaled[1], cfg.sample_rate_hz)
    source_wavs = [Waveform(x, cfg.sample_rate_hz) for x in scaled]
    source_specs = [stft(w, cfg, pad=True) for w in source_wavs]
    mixture_spec = stft(mixture, cfg, pad=True)
    labels = make_labels(source_specs)
    return MixRecord(
        clip_id=clip_id or f"mix-{seed}",
        mixture=mixture,
        sources=source_wavs,
        snr_db=float(snr_db),
        mixture_spec=mixture_spec,
        source_specs=source_specs,
        labels=labels,
        source_ids=list(source_ids) if source_ids is not None else [0, 1],
        source_clip_ids=[speech.clip_id, noise.clip_id],
        noise_kind=NOISE_KINDS[noise.class_id - 1] if 1 <= noise.class_id <= len(NOISE_KINDS) else "unknown",
        seed=seed,
    )


@dataclass(frozen=True)
class Corpus:
    train: list
    val: list
    test: list
    n_sources: int  # rows needed in the source table (train + val sources)


def build_corpus(
    n_train: int,
    n_val: int,
    n_test: int,
    snr_range_db=(-5.0, 5.0),
    seed: int = 0,
    cfg: StftConfig = StftConfig(),
    clip_duration_s: float = 3.0,
) -> Corpus:
    """Synthetic corpus with disjoint source clips across splits.

    Every speech clip is its own "speaker" (one source-table row); noise
    rows are per noise kind, shared within the train+val pool. Test-split
    sources are out-of-set and get no table rows.
    """
    splits = {}
    next_source_id = 1 + len(NOISE_KINDS)  # rows 1..4 are the noise kinds
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        records = []
        for i in range(count):
            tag = f"{split}-{i}"
            sp_seed = stream_seed(seed, f"{tag}-speech")
            nz_seed = stream_seed(seed, f"{tag}-noise")
            kind = NOISE_KINDS[int(rng_for(seed, f"{tag}-kind").integers(len(NOISE_KINDS)))]
            speech = synth_speechlike(clip_duration_s, sp_seed, cfg.sample_rate_hz)
            speech = SourceClip(speech.waveform, speech.class_id, f"{tag}-speech")
            noise = synth_noise(kind, clip_duration_s, nz_seed, cfg.sample_rate_hz)
            noise = SourceClip(noise.waveform, noise.class_id, f"{tag}-{kind}")
            snr = float(rng_for(seed, f"{tag}-snr").uniform(*snr_range_db))
            if split == "test":
                ids = [0, noise.class_id]  # unused at inference
            else:
                ids = [next_source_id, noise.class_id]
                next_source_id += 1
            records.append(
                mix_at_snr(
                    speech,
                    noise,
                    snr,
                    seed=stream_seed(seed, f"{tag}-mix"),
                    cfg=cfg,
                    clip_id=tag,
                    source_ids=ids,
                )
            )
        splits[split] = records
    return Corpus(splits["train"], splits["val"], splits["test"], next_source_id)


# --- manifest (external interface) -------------------------------------

MANIFEST_COLUMNS = "clip_id\tsplit\tclass_id\tpath-or-synth-spec\tseed\tsnr_db"


def write_manifest(path, corpus: Corpus) -> None:
    """One record per line:
    clip_id, split, noise class_id, source specs, mixture seed, snr_db.

    The source-spec field holds `speech_spec,noise_spec`, each either
    `synth:<generator>:<clip_id>` or `wav:<path>`.
    """
    lines = []
    for split in ("train", "val", "test"):
        for rec in getattr(corpus, split):
            noise_class = 1 + NOISE_KINDS.index(rec.noise_kind)
            spec = (
                f"synth:speechlike:{rec.source_clip_ids[0]},"
                f"synth:{rec.noise_kind}:{rec.source_clip_ids[1]}"
            )
            lines.append(
                f"{rec.clip_id}\t{split}\t{noise_class}\t{spec}\t{rec.seed}\t{rec.snr_db!r}"
            )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _clip_from_spec(spec: str, corpus_seed: int, cfg: StftConfig, duration_s: float) -> SourceClip:
    parts = spec.split(":")
    if parts[0] == "wav":
        from .audio_io import read_wav
        from .dsp import resample, standardize

        path = ":".join(parts[1:])
        w = standardize(resample(read_wav(path), cfg.sample_rate_hz))
        return SourceClip(Waveform(_unit_power(w.samples), cfg.sample_rate_hz), -1, path)
    if parts[0] != "synth" or len(parts) != 3:
        raise ValueError(f"bad source spec {spec!r}")
    generator, clip_id = parts[1], parts[2]
    gen_seed = stream_seed(corpus_seed, clip_id.rsplit("-", 1)[0] + "-" + ("speech" if generator == "speechlike" else "noise"))
    if generator == "speechlike":
        clip = synth_speechlike(duration_s, gen_seed, cfg.sample_rate_hz)
    else:
        clip = synth_noise(generator, duration_s, gen_seed, cfg.sample_rate_hz)
    return SourceClip(clip.waveform, clip.class_id, clip_id)


def read_manifest(
    path,
    corpus_seed: int,
    cfg: StftConfig = StftConfig(),
    clip_duration_s: float = 3.0,
) -> Corpus:
    """Rebuild a corpus from a manifest (synthetic clips are regenerated)."""
    splits = {"train": [], "val": [], "test": []}
    speaker_ids = {}
    next_source_id = 1 + len(NOISE_KINDS)
    with open(path, encoding="utf-8") as f:
        rows = [line.rstrip("\n").split("\t") for line in f if line.strip()]
    if not rows:
        raise EmptyCorpus(f"manifest {path} is empty")
    for clip_id, split, class_id, spec, seed, snr_db in rows:
        sp_spec, nz_spec = spec.split(",")
        speech = _clip_from_spec(sp_spec, corpus_seed, cfg, clip_duration_s)
        noise = _clip_from_spec(nz_spec, corpus_seed, cfg, clip_duration_s)
        noise = SourceClip(noise.waveform, int(class_id), noise.clip_id)
        if split == "test":
            ids = [0, int(class_id)]
        else:
            if speech.clip_id not in speaker_ids:
                speaker_ids[speech.clip_id] = next_source_id
                next_source_id += 1
            ids = [speaker_ids[speech.clip_id], int(class_id)]
        splits[split].append(
            mix_at_snr(
                speech, noise, float(snr_db), int(seed), cfg, clip_id, ids
            )
        )
    return Corpus(splits["train"], splits["val"], splits["test"], next_source_id)
