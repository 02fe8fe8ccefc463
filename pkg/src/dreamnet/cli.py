"""Command-line entry point composing the full pipeline.

Subcommands generate data, pretrain, fine-tune, evaluate, run ablations
and correlations, and verify gradients. Every run is deterministic given
--seed, resolves its configuration from defaults < config file < flags,
and writes a manifest echoing the resolved configuration next to its
outputs. Exit codes: 0 success, 2 input/configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import data as ddata
from . import evaluation as ev
from . import tensor as T
from .errors import (CheckpointError, ConfigError, DreamNetError, InputError,
                     NumericalError, SchemaError)
from .model import DreamNet, ModelConfig
from .text import Vocab, build_vocab
from .training import TrainConfig, finetune, pretrain, write_loss_csv

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

# One flat key space: generator, model, and training settings plus run knobs.
DEFAULTS = {
    "n": 1500,
    "seed": 7,
    "eeg_fraction": 400 / 1500,
    "mean_words": 150.0,
    "std_words": 45.0,
    "eeg_emotion_gain": 1.0,
    "decoy_rate": 0.3,
    "theme_mentions": 1,
    "eeg_seconds": 30.0,
    "eeg_channels": 3,
    "target_r": 0.9,
    "min_freq": 2,
    "d_model": 64,
    "n_layers": 2,
    "n_heads_text": 4,
    "max_len": 256,
    "lstm_hidden": 128,
    "fusion_heads": 8,
    "fusion_d_k": 16,
    "mlp_hidden": 256,
    "phys_tokens": 4,
    "feature_dim": 768,
    "dropout": 0.1,
    "pe_scale": 0.1,
    "lstm_forget_bias": 2.5,
    "pre_epochs": 25,
    "pre_lr": 1e-5,
    "ft_epochs": 15,
    "ft_lr": 2e-5,
    "batch_size": 8,
    "lambda_e": 1.0,
    "lambda_s": 1.0,
    "weight_decay": 0.01,
    "mask_rate": 0.15,
    "patience": 3,
    "split_train": 0.70,
    "split_val": 0.20,
    "split_test": 0.10,
    "n_perm": 10000,
    "ablation_seeds": "0,1,2,3,4",
}

_INT_KEYS = {"n", "seed", "eeg_channels", "min_freq", "d_model", "n_layers",
             "n_heads_text", "max_len", "lstm_hidden", "fusion_heads", "fusion_d_k",
             "mlp_hidden", "phys_tokens", "feature_dim", "pre_epochs", "ft_epochs",
             "batch_size", "patience", "n_perm", "theme_mentions"}


def _coerce(key: str, raw: str):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown configuration key {key!r}")
    if key == "ablation_seeds":
        return raw
    if key in _INT_KEYS:
        return int(raw)
    return float(raw)


def parse_config_file(path) -> dict:
    """Plain-text key=value lines; # starts a comment."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            out[key] = _coerce(key, raw)
    return out


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        cfg[key.strip()] = _coerce(key.strip(), raw)
    # named flags win over file and --set
    for key in ("n", "seed", "eeg_fraction"):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            cfg[key] = value
    return cfg


def write_manifest(path, cfg: dict, argv) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# resolved run configuration\n")
        fh.write(f"command={' '.join(argv)}\n")
        for key in sorted(cfg):
            fh.write(f"{key}={cfg[key]}\n")


def generator_spec(cfg: dict) -> ddata.GeneratorSpec:
    return ddata.GeneratorSpec(
        n=cfg["n"], seed=cfg["seed"], eeg_fraction=cfg["eeg_fraction"],
        mean_words=cfg["mean_words"], std_words=cfg["std_words"],
        eeg_emotion_gain=cfg["eeg_emotion_gain"], decoy_rate=cfg["decoy_rate"],
        theme_mentions=cfg["theme_mentions"],
        target_falling_anxiety_r=cfg["target_r"] if cfg["target_r"] > 0 else None,
        eeg_seconds=cfg["eeg_seconds"], eeg_channels=cfg["eeg_channels"])


def model_config(cfg: dict, vocab_size: int, variant: str = "full") -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size, d_model=cfg["d_model"], n_layers=cfg["n_layers"],
        n_heads_text=cfg["n_heads_text"], max_len=cfg["max_len"],
        lstm_hidden=cfg["lstm_hidden"], mlp_dims=(cfg["mlp_hidden"], cfg["lstm_hidden"]),
        fusion_heads=cfg["fusion_heads"], fusion_d_k=cfg["fusion_d_k"],
        dropout=cfg["dropout"], phys_tokens=cfg["phys_tokens"],
        feature_dim=cfg["feature_dim"], variant=variant, pe_scale=cfg["pe_scale"],
        lstm_forget_bias=cfg["lstm_forget_bias"])


def train_config(cfg: dict) -> TrainConfig:
    patience = cfg["patience"] if cfg["patience"] > 0 else None
    return TrainConfig(
        pre_epochs=cfg["pre_epochs"], pre_lr=cfg["pre_lr"], ft_epochs=cfg["ft_epochs"],
        ft_lr=cfg["ft_lr"], batch_size=cfg["batch_size"], lambda_e=cfg["lambda_e"],
        lambda_s=cfg["lambda_s"], dropout=cfg["dropout"],
        weight_decay=cfg["weight_decay"], mask_rate=cfg["mask_rate"],
        patience=patience, seed=cfg["seed"])


def split_ratios(cfg: dict):
    return (cfg["split_train"], cfg["split_val"], cfg["split_test"])


def load_dataset(path):
    """Accept a dataset directory or a jsonl path; returns (records, base_dir)."""
    if os.path.isdir(path):
        jsonl = os.path.join(path, "dataset.jsonl")
    else:
        jsonl = path
    if not os.path.exists(jsonl):
        raise InputError(f"dataset not found at {jsonl}")
    return ddata.load_records(jsonl), os.path.dirname(jsonl) or "."


def load_features(records, base_dir, dim):
    recordings = ddata.load_recordings(records, base_dir)
    return ddata.features_from_recordings(recordings, dim)


def _vocab_sidecar(ckpt_path) -> str:
    return str(ckpt_path) + ".vocab"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, argv) -> int:
    cfg = resolve_config(args)
    spec = generator_spec(cfg)
    records, recordings = ddata.generate(spec)
    os.makedirs(args.out, exist_ok=True)
    ddata.save_dataset(records, recordings, args.out)
    write_manifest(os.path.join(args.out, "manifest.txt"), cfg, argv)
    print(f"wrote {len(records)} records ({len(recordings)} with EEG) to {args.out}")
    return EXIT_OK


def cmd_pretrain(args, argv) -> int:
    cfg = resolve_config(args)
    records, _ = load_dataset(args.data)
    if not records:
        raise InputError("pretraining corpus is empty")
    train, _, _ = ddata.split(records, split_ratios(cfg), seed=cfg["seed"])
    corpus = [rec.text for rec in train]
    vocab = build_vocab(corpus, min_freq=cfg["min_freq"])
    model = DreamNet(model_config(cfg, len(vocab)), seed=cfg["seed"])
    history = pretrain(corpus, vocab, model, train_config(cfg))
    model.save(args.ckpt_out)
    vocab.save(_vocab_sidecar(args.ckpt_out))
    report_dir = args.report_dir or os.path.dirname(args.ckpt_out) or "."
    os.makedirs(report_dir, exist_ok=True)
    write_loss_csv(os.path.join(report_dir, "loss.csv"), history)
    write_manifest(os.path.join(report_dir, "manifest.txt"), cfg, argv)
    print(f"pretrained {len(history)} epochs; final loss {history[-1]:.4f}")
    return EXIT_OK


def cmd_finetune(args, argv) -> int:
    cfg = resolve_config(args)
    records, base_dir = load_dataset(args.data)
    train, val, _ = ddata.split(records, split_ratios(cfg), seed=cfg["seed"])
    if args.init_ckpt:
        pre_model = DreamNet.load(args.init_ckpt)
        vocab = Vocab.load(_vocab_sidecar(args.init_ckpt))
        model = DreamNet(model_config(cfg, len(vocab)), seed=cfg["seed"])
        encoder = {name: arr for name, arr in pre_model.params.state_dict().items()
                   if name == "tok_emb" or name.startswith("enc")}
        model.params.load_state(encoder, subset=True)
    else:
        vocab = build_vocab([rec.text for rec in train], min_freq=cfg["min_freq"])
        model = DreamNet(model_config(cfg, len(vocab)), seed=cfg["seed"])
    features = load_features(records, base_dir, cfg["feature_dim"])
    train_hist, val_hist = finetune(train, val, model, vocab, train_config(cfg), features)
    model.save(args.ckpt_out)
    vocab.save(_vocab_sidecar(args.ckpt_out))
    report_dir = args.report_dir or os.path.dirname(args.ckpt_out) or "."
    os.makedirs(report_dir, exist_ok=True)
    write_loss_csv(os.path.join(report_dir, "loss.csv"), train_hist, val_hist)
    write_manifest(os.path.join(report_dir, "manifest.txt"), cfg, argv)
    best = f"; best val loss {min(val_hist):.4f}" if val_hist else ""
    print(f"fine-tuned {len(train_hist)} epochs{best}")
    return EXIT_OK


def _metric_row(name, rep) -> list:
    return [name, f"{rep.accuracy:.4f}", f"{rep.f1:.4f}", f"{rep.precision:.4f}",
            f"{rep.recall:.4f}", f"{rep.auc:.4f}", f"{rep.subset_accuracy:.4f}",
            rep.n_samples]


def cmd_eval(args, argv) -> int:
    cfg = resolve_config(args)
    records, base_dir = load_dataset(args.data)
    _, _, test = ddata.split(records, split_ratios(cfg), seed=cfg["seed"])
    model = DreamNet.load(args.ckpt)
    vocab = Vocab.load(_vocab_sidecar(args.ckpt))
    features = load_features(test, base_dir, model.cfg.feature_dim)
    labels = ev.labels_matrix(test)
    os.makedirs(args.report_dir, exist_ok=True)

    rows = [_metric_row("Rule-Based", ev.multilabel_metrics(
        ev.rule_baseline_probs(test), labels))]
    probs_text = ev.model_probs(model, test, vocab, features=None)
    rows.append(_metric_row("DNet-T", ev.multilabel_metrics(probs_text, labels)))
    if features:
        probs_multi = ev.model_probs(model, test, vocab, features)
        rows.append(_metric_row("DNet-M", ev.multilabel_metrics(probs_multi, labels)))
        strat_probs = probs_multi
    else:
        strat_probs = probs_text
    with open(os.path.join(args.report_dir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "accuracy", "f1", "precision", "recall", "auc",
                         "subset_accuracy", "n"])
        writer.writerows(rows)

    with open(os.path.join(args.report_dir, "dream_types.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dream_type", "accuracy", "f1", "precision", "recall", "auc",
                         "subset_accuracy", "n"])
        for dream_type, rep in ev.stratified_eval(test, strat_probs).items():
            writer.writerow(_metric_row(dream_type, rep))
    write_manifest(os.path.join(args.report_dir, "manifest.txt"), cfg, argv)
    print(f"wrote metrics.csv and dream_types.csv to {args.report_dir}")
    return EXIT_OK


def cmd_ablate(args, argv) -> int:
    cfg = resolve_config(args)
    records, base_dir = load_dataset(args.data)
    features = load_features(records, base_dir, cfg["feature_dim"])
    seeds = tuple(int(s) for s in str(cfg["ablation_seeds"]).split(",") if s != "")
    rows = ev.ablation(records, features, model_config(cfg, vocab_size=1),
                       train_config(cfg), seeds=seeds, split_seed=cfg["seed"],
                       pretrain_first=True, min_freq=cfg["min_freq"])
    os.makedirs(args.report_dir, exist_ok=True)
    with open(os.path.join(args.report_dir, "ablation.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["configuration", "accuracy_mean", "f1_mean", "accuracy_std",
                         "f1_std", "seeds"])
        for row in rows:
            accs = [rep.accuracy for rep in row.per_seed]
            f1s = [rep.f1 for rep in row.per_seed]
            writer.writerow([row.name, f"{np.mean(accs):.4f}", f"{np.mean(f1s):.4f}",
                             f"{np.std(accs):.4f}", f"{np.std(f1s):.4f}", len(seeds)])
    write_manifest(os.path.join(args.report_dir, "manifest.txt"), cfg, argv)
    print(f"wrote ablation.csv to {args.report_dir}")
    return EXIT_OK


def cmd_correlate(args, argv) -> int:
    cfg = resolve_config(args)
    records, base_dir = load_dataset(args.data)
    theme_cols = np.array([rec.themes for rec in records], dtype=float)
    if args.gold:
        emotion_cols = np.array([rec.emotions for rec in records], dtype=float)
        source = "gold labels"
    else:
        if not args.ckpt:
            raise InputError("correlate needs --ckpt unless --gold is given")
        model = DreamNet.load(args.ckpt)
        vocab = Vocab.load(_vocab_sidecar(args.ckpt))
        features = load_features(records, base_dir, model.cfg.feature_dim)
        emotion_cols = ev.model_probs(model, records, vocab, features)[:, :8]
        source = "predicted probabilities"
    results = ev.correlation_grid(theme_cols, emotion_cols, n_perm=cfg["n_perm"],
                                  seed=cfg["seed"])
    os.makedirs(args.report_dir, exist_ok=True)
    with open(os.path.join(args.report_dir, "correlations.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theme", "emotion", "r", "p_value", "n"])
        for res in results:
            writer.writerow([res.theme, res.emotion, f"{res.r:.4f}",
                             f"{res.p_value:.6f}", res.n])
    write_manifest(os.path.join(args.report_dir, "manifest.txt"), cfg, argv)
    print(f"wrote correlations.csv ({source}) to {args.report_dir}")
    return EXIT_OK


def grad_check_fixture(cfg: dict, seed: int):
    """Finite-difference fixture: a small multimodal graph, briefly trained
    so attention weights are differentiated and parameter gradients sit
    well above the float64 noise floor of central differences."""
    from .training import finetune, prepare_samples, total_loss

    spec = ddata.GeneratorSpec(n=12, seed=11, eeg_fraction=1.0, mean_words=12,
                               std_words=3, eeg_seconds=4.0, eeg_emotion_gain=1.5)
    records, recordings = ddata.generate(spec)
    feats = ddata.features_from_recordings(recordings, 48)
    vocab = build_vocab([rec.text for rec in records], min_freq=1)
    mcfg = ModelConfig(vocab_size=len(vocab), d_model=cfg["d_model"],
                       n_layers=cfg["n_layers"], n_heads_text=2, max_len=20,
                       lstm_hidden=cfg["lstm_hidden"], fusion_heads=cfg["fusion_heads"],
                       fusion_d_k=cfg["fusion_d_k"],
                       mlp_dims=(24, cfg["lstm_hidden"]), feature_dim=48,
                       phys_tokens=cfg["phys_tokens"], dropout=0.0)
    model = DreamNet(mcfg, seed=seed)
    tcfg = TrainConfig(ft_epochs=3, ft_lr=2e-3, batch_size=4, patience=None, seed=seed)
    finetune(records[:8], records[8:], model, vocab, tcfg, feats)
    samples = prepare_samples(records[:4], vocab, mcfg.max_len, feats)

    def f():
        e_hats, s_hats, e_labs, s_labs = [], [], [], []
        for seq, fv, e_lab, s_lab in samples:
            e_hat, s_hat = model.forward(seq, fv, train=False)
            e_hats.append(e_hat)
            s_hats.append(s_hat)
            e_labs.append(e_lab)
            s_labs.append(s_lab)
        return total_loss(e_hats, s_hats, e_labs, s_labs)

    return model, f


def cmd_grad_check(args, argv) -> int:
    cfg = resolve_config(args)
    model, f = grad_check_fixture(cfg, seed=cfg["seed"])
    err = T.grad_check(f, model.params.tensors(), eps=1e-5,
                       entries_per_param=args.entries, seed=cfg["seed"])
    print(f"max relative gradient error: {err:.3e}")
    if err >= 1e-4:
        print("gradient check FAILED (threshold 1e-4)", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dreamnet",
        description="Dream-narrative multilabel classifier pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a single configuration key")
        p.add_argument("--seed", type=int, help="master seed")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--n", type=int, help="number of records")
    p.add_argument("--eeg-fraction", type=float, dest="eeg_fraction")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="masked-token pretraining")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt-out", required=True, dest="ckpt_out")
    p.add_argument("--report-dir", dest="report_dir")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune the joint objective")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt-out", required=True, dest="ckpt_out")
    p.add_argument("--init-ckpt", dest="init_ckpt",
                   help="pretrained checkpoint; loads encoder weights, heads stay fresh")
    p.add_argument("--report-dir", dest="report_dir")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report-dir", required=True, dest="report_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare architecture variants")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--report-dir", required=True, dest="report_dir")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("correlate", help="theme-emotion correlation grid")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--gold", action="store_true",
                   help="correlate gold labels instead of predictions")
    p.add_argument("--report-dir", required=True, dest="report_dir")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--entries", type=int, default=3,
                   help="entries checked per parameter tensor")
    p.set_defaults(func=cmd_grad_check, seed=5)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ConfigError, SchemaError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DreamNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
