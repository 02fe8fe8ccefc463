"""Label schema, record model, synthetic data generation, splits, file IO.

The generator is the ground-truth oracle for the correlation and
multimodal-gain checks: themes are sampled from marginals, emotions
from theme-conditioned Bernoullis (with the falling/anxiety cell solved
to hit a target correlation), narratives are rendered from per-theme
keyword templates (plus decoy keywords in negated frames so keyword
presence alone is not a perfect theme signal), and EEG recordings carry
emotion-dependent band-power boosts scaled by ``eeg_emotion_gain``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import eeg
from .errors import InputError, SchemaError

THEMES = ["flying", "falling", "pursuit", "loss", "social_interaction", "water",
          "animals", "death", "transformation", "school", "food", "travel"]
EMOTIONS = ["joy", "fear", "anxiety", "sadness", "anger", "surprise", "disgust",
            "calmness"]
DREAM_TYPES = ["general", "lucid", "nightmare", "recurrent", "sparse", "surreal"]

THEME_KEYWORDS = {
    "flying": ["flying", "soaring", "wings", "floating"],
    "falling": ["falling", "plummeting", "cliff", "tumbling"],
    "pursuit": ["chased", "chasing", "pursuer", "fleeing"],
    "loss": ["lost", "missing", "losing", "vanished"],
    "social_interaction": ["party", "conversation", "friends", "crowd"],
    "water": ["ocean", "river", "swimming", "waves"],
    "animals": ["dog", "wolf", "birds", "snake"],
    "death": ["death", "funeral", "grave", "dying"],
    "transformation": ["transformed", "morphing", "shapeshifting", "changing"],
    "school": ["classroom", "exam", "teacher", "homework"],
    "food": ["feast", "eating", "kitchen", "bread"],
    "travel": ["journey", "train", "airport", "road"],
}

EMOTION_WORDS = {
    "joy": ["joyful", "delighted", "happy"],
    "fear": ["terrified", "afraid", "fearful"],
    "anxiety": ["anxious", "panicked", "uneasy"],
    "sadness": ["sorrowful", "weeping", "heartbroken"],
    "anger": ["furious", "enraged", "angry"],
    "surprise": ["astonished", "startled", "amazed"],
    "disgust": ["disgusted", "revolted", "sickened"],
    "calmness": ["calm", "peaceful", "serene"],
}

# Fixed filler pool. Negation words also appear here so that bare
# negation counts cannot separate decoy mentions from real ones.
FILLER_SENTENCES = [
    "the place felt strange and quiet",
    "i walked slowly around the old house",
    "a dim light filled the long room",
    "then the street turned before the corner",
    "the night air was warm and still",
    "i looked around but nothing made sense",
    "a soft sound came from far away",
    "the shadow moved again near the door",
    "somehow the morning never quite arrived",
    "everything kept shifting without any warning",
    "no part of the ground stayed level",
    "a voice said something i forgot",
    "the sky changed color while i waited",
    "after that the details blur together",
]

_THEME_SENTENCES = [
    "i dreamed of {kw1} and {kw2}",
    "the {kw1} and the {kw2} returned",
    "i saw {kw1} then {kw2}",
]
# Single-keyword decoys are separable from real mentions by keyword
# count; two-keyword decoys only by the negated frame around them.
_DECOY_SENTENCES = [
    "no {kw1} this time",
    "never any {kw1} there",
]
_HARD_DECOY_SENTENCES = [
    "no {kw1} or {kw2} this time",
    "never any {kw1} and {kw2} there",
]
_EMOTION_SENTENCES = ["i felt {word}", "so {word} inside"]

# Text verbalization rate per emotion. The physiology-coupled emotions
# (fear, surprise, calmness) stay almost entirely unspoken so text alone
# cannot recover them; their signal lives in the EEG band powers.
DEFAULT_EMOTION_TEXT_RATE = {
    "joy": 0.95, "fear": 0.05, "anxiety": 0.95, "sadness": 0.95,
    "anger": 0.95, "surprise": 0.05, "disgust": 0.95, "calmness": 0.05,
}


def default_theme_emotion_cond() -> np.ndarray:
    """Theme-conditioned emotion activation probabilities (12 x 8).

    Fear, surprise, and calmness are deliberately left independent of
    every theme (their activity comes from the base rates alone), so the
    narrative carries no indirect signal for them.
    """
    cond = np.zeros((12, 8))

    def set_cell(theme, emotion, p):
        cond[THEMES.index(theme), EMOTIONS.index(emotion)] = p

    set_cell("flying", "joy", 0.75)
    set_cell("falling", "anxiety", 0.95)  # overwritten when a target r is set
    set_cell("loss", "sadness", 0.70)
    set_cell("social_interaction", "joy", 0.35)
    set_cell("social_interaction", "anger", 0.45)
    set_cell("death", "sadness", 0.50)
    set_cell("death", "anger", 0.30)
    set_cell("school", "anger", 0.30)
    set_cell("food", "disgust", 0.50)
    set_cell("food", "joy", 0.30)
    return cond


# joy, fear, anxiety, sadness, anger, surprise, disgust, calmness
DEFAULT_EMOTION_BASE = np.array([0.05, 0.30, 0.02, 0.05, 0.05, 0.30, 0.04, 0.30])


@dataclass
class DreamRecord:
    id: str
    text: str
    themes: list
    emotions: list
    dream_type: str
    eeg_path: str | None = None

    def __post_init__(self):
        if len(self.themes) != 12:
            raise SchemaError(f"record {self.id}: expected 12 theme entries, got {len(self.themes)}")
        if len(self.emotions) != 8:
            raise SchemaError(f"record {self.id}: expected 8 emotion entries, got {len(self.emotions)}")
        if self.dream_type not in DREAM_TYPES:
            raise SchemaError(f"record {self.id}: unknown dream type {self.dream_type!r}")


@dataclass
class GeneratorSpec:
    n: int
    seed: int = 0
    theme_marginals: np.ndarray = field(default_factory=lambda: np.full(12, 0.25))
    theme_emotion_cond: np.ndarray = field(default_factory=default_theme_emotion_cond)
    emotion_base: np.ndarray = field(default_factory=lambda: DEFAULT_EMOTION_BASE.copy())
    emotion_text_rate: dict = field(default_factory=lambda: dict(DEFAULT_EMOTION_TEXT_RATE))
    eeg_fraction: float = 400 / 1500
    mean_words: float = 150.0
    std_words: float = 45.0
    eeg_emotion_gain: float = 1.0
    target_falling_anxiety_r: float | None = 0.9
    decoy_rate: float = 0.3
    hard_decoy_frac: float = 0.0
    theme_mentions: int = 1
    eeg_burst_frac: float = 0.35
    eeg_burst_gain: float = 0.0
    eeg_seconds: float = 30.0
    eeg_channels: int = 3
    sample_rate: float = 256.0

    def __post_init__(self):
        self.theme_marginals = np.asarray(self.theme_marginals, dtype=float)
        self.theme_emotion_cond = np.asarray(self.theme_emotion_cond, dtype=float)
        self.emotion_base = np.asarray(self.emotion_base, dtype=float)
        for name, arr in (("theme_marginals", self.theme_marginals),
                          ("theme_emotion_cond", self.theme_emotion_cond),
                          ("emotion_base", self.emotion_base)):
            if np.any(arr < 0) or np.any(arr > 1):
                raise InputError(f"{name} contains values outside [0, 1]")
        if not 0.0 <= self.eeg_fraction <= 1.0:
            raise InputError(f"eeg_fraction {self.eeg_fraction} outside [0, 1]")
        if self.theme_marginals.shape != (12,) or self.theme_emotion_cond.shape != (12, 8):
            raise InputError("theme table shapes must be (12,) and (12, 8)")


def solve_conditional_for_r(target_r: float, marginal: float, base: float) -> float:
    """Conditional activation probability that plants a target point-biserial
    correlation between a Bernoulli(marginal) theme and its emotion."""

    def r_of(cond):
        p_hi = base + (1.0 - base) * cond
        pa = marginal * p_hi + (1.0 - marginal) * base
        if pa <= 0 or pa >= 1:
            return 1.0
        cov = marginal * (p_hi - pa)
        return cov / math.sqrt(marginal * (1 - marginal) * pa * (1 - pa))

    if r_of(1.0) < target_r:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if r_of(mid) < target_r:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _render_text(rng, active_themes, active_emotions, target_words, spec) -> str:
    sentences = []
    for t_idx in active_themes:
        kws = THEME_KEYWORDS[THEMES[t_idx]]
        for _ in range(max(1, spec.theme_mentions)):
            kw1, kw2 = rng.choice(len(kws), size=2, replace=False)
            template = _THEME_SENTENCES[rng.integers(len(_THEME_SENTENCES))]
            sentences.append(template.format(kw1=kws[kw1], kw2=kws[kw2]))
    for t_idx in range(12):
        if t_idx in active_themes:
            continue
        if rng.random() < spec.decoy_rate:
            kws = THEME_KEYWORDS[THEMES[t_idx]]
            kw1, kw2 = rng.choice(len(kws), size=2, replace=False)
            if rng.random() < spec.hard_decoy_frac:
                template = _HARD_DECOY_SENTENCES[rng.integers(len(_HARD_DECOY_SENTENCES))]
                sentences.append(template.format(kw1=kws[kw1], kw2=kws[kw2]))
            else:
                template = _DECOY_SENTENCES[rng.integers(len(_DECOY_SENTENCES))]
                sentences.append(template.format(kw1=kws[kw1]))
    for e_idx in active_emotions:
        name = EMOTIONS[e_idx]
        if rng.random() < spec.emotion_text_rate[name]:
            word = EMOTION_WORDS[name][rng.integers(len(EMOTION_WORDS[name]))]
            template = _EMOTION_SENTENCES[rng.integers(len(_EMOTION_SENTENCES))]
            sentences.append(template.format(word=word))
    order = rng.permutation(len(sentences))
    words = []
    for i in order:
        words.extend(sentences[i].split())
    mandatory = len(words)
    while len(words) < target_words:
        filler = FILLER_SENTENCES[rng.integers(len(FILLER_SENTENCES))]
        words.extend(filler.split())
    if len(words) > target_words:
        words = words[:max(target_words, mandatory)]
    return " ".join(words)


def _synthesize_eeg(rng, active_emotions, spec) -> eeg.EegRecording:
    """Band-limited noise per channel. Each active emotion raises one
    (channel, band) cell for the whole recording and adds a stronger
    boost during one random contiguous burst, so part of the signal is
    transient."""
    n = int(spec.eeg_seconds * spec.sample_rate)
    n_cells = spec.eeg_channels * 3
    envelopes = np.ones((spec.eeg_channels, 3, n))
    burst_len = max(1, int(spec.eeg_burst_frac * n))
    for e_idx in active_emotions:
        c, b = divmod(e_idx % n_cells, 3)
        envelopes[c, b] += spec.eeg_emotion_gain
        start = int(rng.integers(0, n - burst_len + 1))
        envelopes[c, b, start:start + burst_len] += spec.eeg_burst_gain
    base_amp = [1.0, 0.8, 0.6]  # delta, theta, alpha
    channels = []
    for c in range(spec.eeg_channels):
        signal = 0.05 * rng.normal(size=n)
        for b, (_, lo, hi) in enumerate(eeg.BANDS):
            noise = eeg.bandpass(rng.normal(size=n), lo, hi, spec.sample_rate)
            rms = np.sqrt(np.mean(noise ** 2))
            if rms > 0:
                noise /= rms
            signal = signal + base_amp[b] * envelopes[c, b] * noise
        channels.append(signal)
    return eeg.EegRecording(sample_rate=spec.sample_rate, channels=channels)


def generate(spec: GeneratorSpec) -> tuple[list[DreamRecord], dict[str, eeg.EegRecording]]:
    """Deterministic synthetic dataset: records plus in-memory recordings."""
    rng = np.random.default_rng(spec.seed)
    cond = spec.theme_emotion_cond.copy()
    if spec.target_falling_anxiety_r is not None:
        f_idx, a_idx = THEMES.index("falling"), EMOTIONS.index("anxiety")
        cond[f_idx, a_idx] = solve_conditional_for_r(
            spec.target_falling_anxiety_r, float(spec.theme_marginals[f_idx]),
            float(spec.emotion_base[a_idx]))
    n_eeg = int(round(spec.n * spec.eeg_fraction))
    eeg_ids = set(rng.permutation(spec.n)[:n_eeg].tolist())
    records = []
    recordings: dict[str, eeg.EegRecording] = {}
    for i in range(spec.n):
        themes = (rng.random(12) < spec.theme_marginals).astype(int)
        active_themes = [t for t in range(12) if themes[t]]
        miss = (1.0 - spec.emotion_base)
        for t in active_themes:
            miss = miss * (1.0 - cond[t])
        emotions = (rng.random(8) < (1.0 - miss)).astype(int)
        active_emotions = [e for e in range(8) if emotions[e]]
        dream_type = DREAM_TYPES[rng.integers(len(DREAM_TYPES))]
        target = float(np.clip(rng.normal(spec.mean_words, spec.std_words), 20, 256))
        if dream_type == "sparse":
            target = max(20.0, target / 2.0)
        text = _render_text(rng, active_themes, active_emotions, int(target), spec)
        rec_id = f"d{i:05d}"
        eeg_path = None
        if i in eeg_ids:
            recordings[rec_id] = _synthesize_eeg(rng, active_emotions, spec)
            eeg_path = os.path.join("eeg", f"{rec_id}.eeg")
        records.append(DreamRecord(id=rec_id, text=text, themes=themes.tolist(),
                                   emotions=emotions.tolist(), dream_type=dream_type,
                                   eeg_path=eeg_path))
    return records, recordings


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _largest_remainder(n: int, ratios) -> list[int]:
    raw = [n * r for r in ratios]
    counts = [int(math.floor(x)) for x in raw]
    remainder = n - sum(counts)
    by_fraction = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in by_fraction[:remainder]:
        counts[i] += 1
    return counts


def split(records, ratios=(0.70, 0.20, 0.10), seed: int = 0):
    """Stratified-by-dream-type shuffle into train/val/test with exact sizes."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InputError(f"split ratios {ratios} do not sum to 1")
    n = len(records)
    targets = _largest_remainder(n, ratios)
    rng = np.random.default_rng(seed)
    groups: dict[str, list] = {}
    for rec in records:
        groups.setdefault(rec.dream_type, []).append(rec)
    type_names = sorted(groups)
    quotas = {}
    for name in type_names:
        members = groups[name]
        order = rng.permutation(len(members))
        groups[name] = [members[i] for i in order]
        quotas[name] = _largest_remainder(len(members), ratios)
    totals = [sum(quotas[t][s] for t in type_names) for s in range(len(ratios))]
    while totals != targets:
        over = next(s for s in range(len(ratios)) if totals[s] > targets[s])
        under = next(s for s in range(len(ratios)) if totals[s] < targets[s])
        movable = [t for t in type_names if quotas[t][over] > 0]
        chosen = max(movable, key=lambda t: quotas[t][over] - len(groups[t]) * ratios[over])
        quotas[chosen][over] -= 1
        quotas[chosen][under] += 1
        totals[over] -= 1
        totals[under] += 1
    parts = tuple([] for _ in ratios)
    for name in type_names:
        members = groups[name]
        start = 0
        for s, q in enumerate(quotas[name]):
            parts[s].extend(members[start:start + q])
            start += q
    return parts


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------

def save_records(records, path) -> None:
    """JSON-lines, one record per line, fixed key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"id": rec.id, "text": rec.text, "themes": list(map(int, rec.themes)),
                   "emotions": list(map(int, rec.emotions)), "dream_type": rec.dream_type}
            if rec.eeg_path is not None:
                obj["eeg_path"] = rec.eeg_path
            fh.write(json.dumps(obj) + "\n")


def load_records(path) -> list[DreamRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: line {lineno}: invalid JSON ({exc})") from exc
            try:
                records.append(DreamRecord(
                    id=obj["id"], text=obj["text"], themes=obj["themes"],
                    emotions=obj["emotions"], dream_type=obj["dream_type"],
                    eeg_path=obj.get("eeg_path")))
            except (KeyError, SchemaError) as exc:
                raise SchemaError(f"{path}: line {lineno}: {exc}") from exc
    return records


def save_dataset(records, recordings, out_dir) -> str:
    """Write dataset.jsonl plus EEG sidecar files; returns the jsonl path."""
    os.makedirs(out_dir, exist_ok=True)
    jsonl = os.path.join(out_dir, "dataset.jsonl")
    save_records(records, jsonl)
    if recordings:
        os.makedirs(os.path.join(out_dir, "eeg"), exist_ok=True)
        for rec in records:
            if rec.id in recordings:
                eeg.write_eeg(os.path.join(out_dir, rec.eeg_path), recordings[rec.id])
    return jsonl


def load_recordings(records, base_dir) -> dict[str, eeg.EegRecording]:
    out = {}
    for rec in records:
        if rec.eeg_path is not None:
            out[rec.id] = eeg.read_eeg(os.path.join(base_dir, rec.eeg_path))
    return out


def features_from_recordings(recordings, dim: int) -> dict[str, np.ndarray]:
    return {rid: eeg.featurize(rec, dim=dim) for rid, rec in recordings.items()}
