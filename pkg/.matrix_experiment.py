"""Scratch experiment: full ablation matrix at candidate acceptance settings."""
import time
import numpy as np
from dreamnet import data, evaluation as ev, text as tx
from dreamnet.model import DreamNet, ModelConfig
from dreamnet.training import TrainConfig, finetune, pretrain

t0 = time.perf_counter()
spec = data.GeneratorSpec(n=500, seed=42, eeg_fraction=1.0, mean_words=20, std_words=5,
                          decoy_rate=0.4, eeg_seconds=20.0, eeg_emotion_gain=1.5)
records, recordings = data.generate(spec)
feats = data.features_from_recordings(recordings, 192)
train, val, test = data.split(records, seed=0)
vocab = tx.build_vocab([r.text for r in train], min_freq=2)
labels = ev.labels_matrix(test)
base = ev.multilabel_metrics(ev.rule_baseline_probs(test), labels)
print(f"baseline F1: {base.f1:.4f}", flush=True)

def run(variant, use_feats, seed, pre=10, ft=40):
    mcfg = ModelConfig(vocab_size=len(vocab), d_model=32, n_layers=1,
                       n_heads_text=2, max_len=48, feature_dim=192, phys_tokens=4,
                       lstm_hidden=64, fusion_heads=4, fusion_d_k=16, mlp_dims=(96, 64),
                       dropout=0.2, variant=variant)
    model = DreamNet(mcfg, seed=seed)
    tcfg = TrainConfig(pre_epochs=pre, pre_lr=1e-3, ft_epochs=ft, ft_lr=2e-3,
                       batch_size=4, patience=None, seed=seed)
    pretrain([r.text for r in train], vocab, model, tcfg)
    f = feats if use_feats else None
    finetune(train, val, model, vocab, tcfg, f)
    probs = ev.model_probs(model, test, vocab, f)
    return ev.multilabel_metrics(probs, labels).f1

rows = {}
for name, variant, use_feats in (("DNet-M", "full", True), ("DNet-T", "full", False),
                                 ("-LSTM", "no_lstm", True), ("-CrossAttention", "no_xattn", True)):
    f1s = []
    for seed in range(5):
        t1 = time.perf_counter()
        f1 = run(variant, use_feats, seed)
        f1s.append(f1)
        print(f"{name} s{seed}: F1={f1:.4f} [{time.perf_counter()-t1:.0f}s]", flush=True)
    rows[name] = f1s

print("\n=== summary ===")
print(f"baseline: {base.f1:.4f}")
for name, f1s in rows.items():
    print(f"{name}: {' '.join(f'{x:.4f}' for x in f1s)}  mean={np.mean(f1s):.4f}")
gaps = [m - t for m, t in zip(rows["DNet-M"], rows["DNet-T"])]
print(f"gap M-T: {' '.join(f'{100*g:.1f}' for g in gaps)} pts; >=5 в {sum(g >= 0.05 for g in gaps)}/5")
for abl in ("DNet-T", "-LSTM", "-CrossAttention"):
    wins = sum(m >= a for m, a in zip(rows["DNet-M"], rows[abl]))
    print(f"DNet-M >= {abl}: {wins}/5")
print(f"baseline < DNet-T: {sum(base.f1 < t for t in rows['DNet-T'])}/5")
print(f"total: {(time.perf_counter()-t0)/60:.1f} min")
