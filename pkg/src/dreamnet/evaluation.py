"""Multilabel metrics, ablations, dream-type stratification, correlation
analysis, k-fold protocol, and the keyword rule baseline.

Accuracy is the per-position mean over all label decisions (subset
accuracy, requiring every label of a sample correct, is also reported).
Precision/recall/F1 are micro-averaged by default with macro available;
AUC is the mean of per-label rank AUCs, skipping single-class labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import data as ddata
from .errors import InputError, ShapeError, UndefinedCorrelationError
from .model import DreamNet, ModelConfig
from .training import TrainConfig, finetune, prepare_samples


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    subset_accuracy: float
    n_samples: int
    per_label: list = field(default_factory=list)


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative, ties as 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InputError("auc undefined for single-class labels")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=float)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    wins_plus_half_ties = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return wins_plus_half_ties / (n_pos * n_neg)


def multilabel_metrics(probs, labels, tau: float = 0.5,
                       average: str = "micro") -> MetricsReport:
    """Binarize at tau and score every label decision."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if probs.shape != labels.shape or probs.ndim != 2:
        raise ShapeError(f"multilabel_metrics: shapes {probs.shape} vs {labels.shape}")
    if probs.shape[0] == 0:
        raise InputError("multilabel_metrics: no samples")
    if average not in ("micro", "macro"):
        raise InputError(f"unknown averaging mode {average!r}")
    preds = (probs >= tau).astype(int)
    accuracy = float((preds == labels).mean())
    subset_accuracy = float((preds == labels).all(axis=1).mean())

    def prf(tp, fp, fn):
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return precision, recall, f1

    per_label = []
    for j in range(labels.shape[1]):
        tp = int(((preds[:, j] == 1) & (labels[:, j] == 1)).sum())
        fp = int(((preds[:, j] == 1) & (labels[:, j] == 0)).sum())
        fn = int(((preds[:, j] == 0) & (labels[:, j] == 1)).sum())
        p_j, r_j, f_j = prf(tp, fp, fn)
        try:
            auc_j = auc(probs[:, j], labels[:, j])
        except InputError:
            auc_j = None
        per_label.append({"label": j, "precision": p_j, "recall": r_j, "f1": f_j,
                          "auc": auc_j, "support": int(labels[:, j].sum())})

    if average == "micro":
        tp = int(((preds == 1) & (labels == 1)).sum())
        fp = int(((preds == 1) & (labels == 0)).sum())
        fn = int(((preds == 0) & (labels == 1)).sum())
        precision, recall, f1 = prf(tp, fp, fn)
    else:
        precision = float(np.mean([pl["precision"] for pl in per_label]))
        recall = float(np.mean([pl["recall"] for pl in per_label]))
        f1 = float(np.mean([pl["f1"] for pl in per_label]))
    aucs = [pl["auc"] for pl in per_label if pl["auc"] is not None]
    mean_auc = float(np.mean(aucs)) if aucs else float("nan")
    return MetricsReport(accuracy=accuracy, precision=precision, recall=recall, f1=f1,
                         auc=mean_auc, subset_accuracy=subset_accuracy,
                         n_samples=probs.shape[0], per_label=per_label)


def stratified_eval(records, probs, tau: float = 0.5) -> dict[str, MetricsReport]:
    """Per-dream-type metrics; types absent from the input yield no row."""
    probs = np.asarray(probs, dtype=float)
    if len(records) != probs.shape[0]:
        raise ShapeError(f"{len(records)} records vs {probs.shape[0]} probability rows")
    labels = np.array([rec.emotions + rec.themes for rec in records], dtype=int)
    out = {}
    for dream_type in ddata.DREAM_TYPES:
        idx = [i for i, rec in enumerate(records) if rec.dream_type == dream_type]
        if idx:
            out[dream_type] = multilabel_metrics(probs[idx], labels[idx], tau)
    return out


# ---------------------------------------------------------------------------
# Correlations
# ---------------------------------------------------------------------------

@dataclass
class CorrelationResult:
    theme: str
    emotion: str
    r: float
    p_value: float
    n: int


def pearson(theme_col, emotion_col, n_perm: int = 10_000,
            rng: np.random.Generator | None = None, theme: str = "",
            emotion: str = "") -> CorrelationResult:
    """Sample Pearson r with a two-sided permutation p-value."""
    x = np.asarray(theme_col, dtype=float)
    y = np.asarray(emotion_col, dtype=float)
    if x.size != y.size or x.size < 3:
        raise InputError(f"pearson needs two equal columns of length >= 3, got {x.size}, {y.size}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("correlation undefined for a constant column")
    if rng is None:
        rng = np.random.default_rng(0)
    zx = (x - x.mean()) / x.std()
    zy = (y - y.mean()) / y.std()
    n = x.size
    r = float(zx @ zy / n)
    hits = 0
    for _ in range(n_perm):
        r_perm = zx @ rng.permutation(zy) / n
        if abs(r_perm) >= abs(r):
            hits += 1
    p = (hits + 1) / (n_perm + 1)
    return CorrelationResult(theme=theme, emotion=emotion, r=r, p_value=p, n=n)


def correlation_grid(theme_cols, emotion_cols, n_perm: int = 10_000,
                     seed: int = 0) -> list[CorrelationResult]:
    """All theme x emotion correlations; constant columns yield NaN rows."""
    rng = np.random.default_rng(seed)
    out = []
    for t, theme in enumerate(ddata.THEMES):
        for e, emotion in enumerate(ddata.EMOTIONS):
            try:
                out.append(pearson(theme_cols[:, t], emotion_cols[:, e], n_perm, rng,
                                   theme=theme, emotion=emotion))
            except UndefinedCorrelationError:
                out.append(CorrelationResult(theme=theme, emotion=emotion, r=float("nan"),
                                             p_value=float("nan"), n=theme_cols.shape[0]))
    return out


# ---------------------------------------------------------------------------
# Model-backed evaluations
# ---------------------------------------------------------------------------

def model_probs(model: DreamNet, records, vocab, features=None) -> np.ndarray:
    """(N, 20) matrix of emotion+theme probabilities, features used when given."""
    samples = prepare_samples(records, vocab, model.cfg.max_len, features)
    return np.stack([model.predict(seq, feats) for seq, feats, _, _ in samples])


def labels_matrix(records) -> np.ndarray:
    return np.array([rec.emotions + rec.themes for rec in records], dtype=int)


# -LSTM ablates the temporal module of the text-only configuration;
# -CrossAttention keeps physiology but fuses by concat + linear.
ABLATION_CONFIGS = (
    ("DNet-M", "full", True),
    ("DNet-T", "full", False),
    ("-LSTM", "no_lstm", False),
    ("-CrossAttention", "no_xattn", True),
)


@dataclass
class AblationRow:
    name: str
    per_seed: list  # list of MetricsReport, one per seed


def ablation(records, features, model_cfg: ModelConfig, train_cfg: TrainConfig,
             seeds=(0, 1, 2, 3, 4), split_seed: int = 0,
             configs=ABLATION_CONFIGS, pretrain_first: bool = False,
             min_freq: int = 2) -> list[AblationRow]:
    """Train and score architecture configurations on one split, repeating
    over seeds with identical data membership. With ``pretrain_first`` each
    run gets masked-token pretraining before fine-tuning."""
    train, val, test = ddata.split(records, seed=split_seed)
    corpus = [rec.text for rec in train]
    from .text import build_vocab
    from .training import pretrain
    vocab = build_vocab(corpus, min_freq=min_freq)
    rows = []
    for name, variant, use_features in configs:
        cfg = replace(model_cfg, vocab_size=len(vocab), variant=variant)
        reports = []
        for seed in seeds:
            model = DreamNet(cfg, seed=seed)
            run_cfg = replace(train_cfg, seed=seed)
            if pretrain_first and run_cfg.pre_epochs > 0:
                pretrain(corpus, vocab, model, run_cfg)
            feats = features if use_features else None
            finetune(train, val, model, vocab, run_cfg, feats)
            probs = model_probs(model, test, vocab, feats)
            reports.append(multilabel_metrics(probs, labels_matrix(test)))
        rows.append(AblationRow(name=name, per_seed=reports))
    return rows


# ---------------------------------------------------------------------------
# K-fold protocol
# ---------------------------------------------------------------------------

@dataclass
class KfoldResult:
    per_fold: list
    mean: dict
    std: dict


def kfold(records, k: int, run_fold, seed: int = 0) -> KfoldResult:
    """Deterministic shuffle into k near-equal folds; ``run_fold(train, test)``
    returns a MetricsReport per fold."""
    if len(records) < k:
        raise InputError(f"kfold: {len(records)} records < k={k}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    folds = np.array_split(order, k)
    reports = []
    for i in range(k):
        test = [records[j] for j in folds[i]]
        train = [records[j] for f in range(k) if f != i for j in folds[f]]
        reports.append(run_fold(train, test))
    keys = ("accuracy", "precision", "recall", "f1", "auc")
    mean = {key: float(np.mean([getattr(r, key) for r in reports])) for key in keys}
    std = {key: float(np.std([getattr(r, key) for r in reports])) for key in keys}
    return KfoldResult(per_fold=reports, mean=mean, std=std)


def kfold_indices(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    """Test-fold index sets, exposed for partition checks."""
    rng = np.random.default_rng(seed)
    return [np.sort(f) for f in np.array_split(rng.permutation(n), k)]


# ---------------------------------------------------------------------------
# Rule baseline
# ---------------------------------------------------------------------------

def default_lexicon() -> tuple[dict, dict]:
    """Theme keyword lists plus theme -> emotion priors (conditionals >= 0.5)."""
    cond = ddata.default_theme_emotion_cond()
    theme_emotions = {}
    for t, theme in enumerate(ddata.THEMES):
        theme_emotions[theme] = [ddata.EMOTIONS[e] for e in range(8) if cond[t, e] >= 0.5]
    return dict(ddata.THEME_KEYWORDS), theme_emotions


def rule_baseline(text: str, lexicon=None) -> np.ndarray:
    """Keyword matcher: a theme fires iff any of its keywords is present;
    emotions are the fired themes' priors. Returns a 0/1 vector of
    (emotions, themes), comparable with model probabilities."""
    if lexicon is None:
        lexicon = default_lexicon()
    theme_keywords, theme_emotions = lexicon
    from .text import split_words
    tokens = set(split_words(text))
    e_hat = np.zeros(8)
    s_hat = np.zeros(12)
    for t, theme in enumerate(ddata.THEMES):
        if tokens & set(theme_keywords[theme]):
            s_hat[t] = 1.0
            for emotion in theme_emotions[theme]:
                e_hat[ddata.EMOTIONS.index(emotion)] = 1.0
    return np.concatenate([e_hat, s_hat])


def rule_baseline_probs(records, lexicon=None) -> np.ndarray:
    return np.stack([rule_baseline(rec.text, lexicon) for rec in records])
