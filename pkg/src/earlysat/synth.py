"""Synthetic multi-modal enrollment generator with a known generative
process, plus the analytic oracle used as the unbeatable reference in
calibration tests.

Generative process (fixed):
  - latent satisfaction s ~ Normal(LATENT_MEAN, LATENT_SD) truncated to
    [1, 5] by resampling;
  - ambivalence mixes an intrinsic Beta(2,2) draw with a
    dissatisfaction-linked term; it drives both the label noise scale
    (heteroscedasticity) and the event-type mix entropy, which is the
    only observable trace of it;
  - event times follow an inhomogeneous profile on the horizon window
    tilted by trajectory_effect_size * (s - 4) / 0.8: rising intensity
    for satisfied learners, decaying for dissatisfied ones. Expected
    event counts do not depend on s, so the label signal lives in event
    ORDER, not in aggregate counts;
  - with probability text_probability the enrollment emits 1-3 snippets
    whose embeddings point along a fixed direction with magnitude
    proportional to the same satisfaction signal;
  - observed label y = clamp(s + noise_sd * eps, 1, 5).

The latent normal constants are calibrated so the OBSERVED labels match
the target distribution (mean 4.02, sd 0.81) after truncation, noise,
and clamping.
"""

from __future__ import annotations

import datetime
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .data import Enrollment, EventRecord, TextSnippetRef, SECONDS_PER_DAY, store_events
from .text import write_embedding_cache

EVENT_TYPES = (
    "video_play",
    "video_pause",
    "quiz_submit",
    "quiz_fail",
    "forum_post",
    "forum_read",
    "page_view",
    "resource_download",
)

# Calibrated against the observed-label targets; see module docstring.
LATENT_MEAN = 5.65
LATENT_SD = 1.5

_PEAKED_MIX = np.array([0.30, 0.17, 0.13, 0.05, 0.04, 0.06, 0.18, 0.07])
_BASE_DATE = datetime.date(2023, 1, 2)


@dataclass(frozen=True)
class SynthConfig:
    n_runs: int = 20
    n_enrollments: int = 10000
    horizon_days: int = 7
    events_per_enrollment: float = 25.0
    event_rate_dispersion: float = 0.35
    silent_probability: float = 0.02  # enrollments with zero events
    text_probability: float = 0.18
    label_noise_min: float = 0.15
    label_noise_max: float = 0.55
    ambivalence_coupling: float = 0.7  # 0 = ambivalence independent of satisfaction
    trajectory_effect_size: float = 1.8
    text_signal: float = 1.0
    text_noise: float = 0.8
    d_llm: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.n_enrollments < 1:
            raise ValueError("n_enrollments must be >= 1")
        for name in ("silent_probability", "text_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not 0.0 <= self.ambivalence_coupling <= 1.0:
            raise ValueError("ambivalence_coupling must be in [0, 1]")
        if self.label_noise_min <= 0 or self.label_noise_max < self.label_noise_min:
            raise ValueError("need 0 < label_noise_min <= label_noise_max")


@dataclass(frozen=True)
class LatentRecord:
    enrollment_id: str
    s: float  # latent satisfaction
    ambivalence: float
    noise_sd: float


@dataclass
class SynthCorpus:
    enrollments: list[Enrollment]
    latents: list[LatentRecord]
    vocab: list[str]
    cache_items: list[tuple[str, np.ndarray]]
    events_path: str | None = None
    cache_path: str | None = None
    latents_path: str | None = None


def _sample_truncated_latent(rng: np.random.Generator) -> float:
    while True:
        s = rng.normal(LATENT_MEAN, LATENT_SD)
        if 1.0 <= s <= 5.0:
            return s


def _tilted_times(rng: np.random.Generator, n: int, gamma: float, horizon_seconds: float) -> np.ndarray:
    """Sample n event times with density proportional to exp(gamma * x)
    over the unit window; gamma = 0 reduces to uniform."""
    u = rng.random(n)
    if abs(gamma) < 1e-9:
        x = u
    else:
        x = np.log1p(u * math.expm1(gamma)) / gamma
    return np.sort(x) * horizon_seconds


def _satisfaction_signal(s: float) -> float:
    return (s - 4.0) / 0.8


def generate(
    config: SynthConfig,
    out_dir: str | None = None,
    events_path: str | None = None,
    cache_path: str | None = None,
    latents_path: str | None = None,
) -> SynthCorpus:
    """Build a corpus; with ``out_dir`` (or explicit paths) set, also
    write the event file, embedding cache, and latents table
    (byte-identical for equal configs)."""
    rng = np.random.default_rng(config.seed)
    horizon_seconds = config.horizon_days * SECONDS_PER_DAY
    text_dir = rng.normal(size=config.d_llm)
    text_dir /= np.linalg.norm(text_dir)

    run_ids = [f"run{r:03d}" for r in range(config.n_runs)]
    run_dates = {rid: _BASE_DATE + datetime.timedelta(days=7 * r) for r, rid in enumerate(run_ids)}

    enrollments: list[Enrollment] = []
    latents: list[LatentRecord] = []
    cache_items: list[tuple[str, np.ndarray]] = []

    for i in range(config.n_enrollments):
        eid = f"enr{i:06d}"
        run_id = run_ids[int(rng.integers(config.n_runs))]
        s = _sample_truncated_latent(rng)
        signal = _satisfaction_signal(s)

        intrinsic = rng.beta(2.0, 2.0)
        ambivalence = float(
            np.clip(
                (1.0 - config.ambivalence_coupling) * intrinsic
                + config.ambivalence_coupling * (5.0 - s) / 4.0,
                0.0,
                1.0,
            )
        )
        noise_sd = config.label_noise_min + ambivalence * (config.label_noise_max - config.label_noise_min)
        label = float(np.clip(s + noise_sd * rng.normal(), 1.0, 5.0))

        # event stream: count carries no satisfaction signal, order does
        if rng.random() < config.silent_probability:
            n_events = 0
        else:
            rate = config.events_per_enrollment * math.exp(
                config.event_rate_dispersion * rng.normal() - 0.5 * config.event_rate_dispersion**2
            )
            n_events = int(rng.poisson(rate))
        gamma = float(np.clip(config.trajectory_effect_size * signal, -8.0, 8.0))
        times = _tilted_times(rng, n_events, gamma, horizon_seconds)
        mix = (1.0 - ambivalence) * _PEAKED_MIX + ambivalence / len(EVENT_TYPES)
        type_idx = rng.choice(len(EVENT_TYPES), size=n_events, p=mix)
        events = tuple(
            EventRecord(eid, EVENT_TYPES[t], float(ts)) for t, ts in zip(type_idx, times)
        )

        snippets: list[TextSnippetRef] = []
        if rng.random() < config.text_probability:
            for k in range(int(rng.integers(1, 4))):
                sid = f"{eid}_s{k}"
                ts = float(rng.random() * horizon_seconds)
                snippets.append(TextSnippetRef(sid, eid, ts))
                vec = config.text_signal * signal * text_dir + config.text_noise * rng.normal(size=config.d_llm)
                cache_items.append((sid, vec / np.linalg.norm(vec)))
        snippets.sort(key=lambda r: (r.timestamp, r.snippet_id))

        enrollments.append(
            Enrollment(
                enrollment_id=eid,
                course_run_id=run_id,
                run_start_date=run_dates[run_id],
                label=label,
                events=events,
                snippets=tuple(snippets),
            )
        )
        latents.append(LatentRecord(eid, s, ambivalence, noise_sd))

    corpus = SynthCorpus(
        enrollments=enrollments,
        latents=latents,
        vocab=list(EVENT_TYPES),
        cache_items=cache_items,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        events_path = events_path or os.path.join(out_dir, "events.tsv")
        cache_path = cache_path or os.path.join(out_dir, "embeddings.tete")
        latents_path = latents_path or os.path.join(out_dir, "latents.tsv")
    if events_path is not None:
        corpus.events_path = events_path
        corpus.cache_path = cache_path
        corpus.latents_path = latents_path
        for p in (events_path, cache_path, latents_path):
            if p is not None:
                os.makedirs(os.path.dirname(os.path.abspath(p)), exist_ok=True)
        store_events(enrollments, corpus.vocab, corpus.events_path)
        write_embedding_cache(corpus.cache_path, config.d_llm, cache_items)
        with open(corpus.latents_path, "w", encoding="utf-8") as f:
            f.write("enrollment_id\ts\tambivalence\tnoise_sd\n")
            for rec in latents:
                f.write(f"{rec.enrollment_id}\t{rec.s!r}\t{rec.ambivalence!r}\t{rec.noise_sd!r}\n")
    return corpus


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _Phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def bayes_oracle(config: SynthConfig, latent: LatentRecord) -> tuple[float, float]:
    """Analytic conditional mean and variance of the observed label given
    the enrollment's latents.

    y = clamp(s + noise_sd * Z, 1, 5) is a censored normal; its first two
    moments have closed forms. Conditioning on the latents makes this an
    unbeatable reference for any model that sees only observables.
    """
    s, sd = latent.s, latent.noise_sd
    a = (1.0 - s) / sd
    b = (5.0 - s) / sd
    ey = a * _Phi(a) + (_phi(a) - _phi(b)) + b * (1.0 - _Phi(b))
    ey2 = a * a * _Phi(a) + b * b * (1.0 - _Phi(b)) + (_Phi(b) - _Phi(a) + a * _phi(a) - b * _phi(b))
    mean = s + sd * ey
    var = sd * sd * (ey2 - ey * ey)
    return mean, var


def permute_event_types(enrollment: Enrollment, rng: np.random.Generator) -> Enrollment:
    """Shuffle which event type occupies which timestamp slot. Preserves
    the timestamp multiset and per-type counts, so every aggregate
    feature is unchanged."""
    types = [e.event_type for e in enrollment.events]
    rng.shuffle(types)
    events = tuple(
        EventRecord(enrollment.enrollment_id, t, e.timestamp)
        for t, e in zip(types, enrollment.events)
    )
    return replace(enrollment, events=events)


def shuffle_event_gaps(enrollment: Enrollment, rng: np.random.Generator) -> Enrollment:
    """Permute the inter-event gap sequence and rebuild timestamps.
    Preserves event count, the type sequence, and the gap multiset, but
    destroys the temporal trend that carries the label signal."""
    if len(enrollment.events) < 2:
        return enrollment
    ts = np.array([e.timestamp for e in enrollment.events])
    gaps = np.diff(np.concatenate([[0.0], ts]))
    rng.shuffle(gaps)
    new_ts = np.cumsum(gaps)
    events = tuple(
        EventRecord(enrollment.enrollment_id, e.event_type, float(t))
        for e, t in zip(enrollment.events, new_ts)
    )
    return replace(enrollment, events=events)
