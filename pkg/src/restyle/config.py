"""Flat declarative key-value configuration.

One `key = value` pair per line, '#' comments; unknown keys are rejected.
The effective configuration (after defaults) is echoed into every report
with a `config.` prefix and reloads to an equal Config.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .data import SyntheticSpec
from .rewards import RewardWeights
from .training import ConfigError, TrainConfig

ENV_CONFIG = "RESTYLE_CONFIG"

# name -> (type, default); bool values are written/read as 0/1
SCHEMA: dict[str, tuple] = {
    # paths
    "corpus_dir": (str, "data/synthetic"),
    "embedding_file": (str, "data/synthetic/embeddings.txt"),
    "checkpoint_dir": (str, "checkpoints"),
    "report_dir": (str, "reports"),
    # generator / model sizes
    "embed_dim": (int, 64),
    "hidden_dim": (int, 128),
    "max_len_slack": (int, 5),
    "clf_embed_dim": (int, 64),
    "clf_filters": (int, 32),
    "clf_inter_dim": (int, 64),
    "adv_embed_dim": (int, 64),
    "adv_hidden_dim": (int, 64),
    "lm_embed_dim": (int, 64),
    "lm_hidden_dim": (int, 128),
    "vocab_max": (int, 10000),
    "vocab_min_freq": (int, 1),
    # training
    "batch_size": (int, 32),
    "lr_gen": (float, 3e-3),
    "lr_cls": (float, 1e-3),
    "lr_adv": (float, 1e-3),
    "epochs_stage1": (int, 8),
    "epochs_stage2": (int, 2),
    "dev_eval_interval": (int, 200),
    "seed": (int, 0),
    "clf_update": (str, "adversarial"),
    "lp_variant": (str, "verbatim"),
    "reward_norm": (str, "lang"),
    "content_reward": (str, "sim"),
    "clf_pretrain_epochs": (int, 3),
    "lm_epochs": (int, 2),
    "eval_lm_epochs": (int, 3),
    "holdout_frac": (float, 0.1),
    "dev_limit": (int, 0),
    # reward weights (fine-tune stage)
    "lambda_cls": (float, 1.0),
    "lambda_adv": (float, 0.5),
    "lambda_sim": (float, 20.0),
    "lambda_lang": (float, 2.0),
    "lambda_rec": (float, 1.0),
    "alpha": (float, 0.25),
    # bootstrap-stage weights
    "boot_lambda_cyc": (float, 1.0),
    "boot_lambda_cls": (float, 2.0),
    "boot_lambda_rec": (float, 1.0),
    # synthetic corpus
    "syn_train": (int, 5000),
    "syn_dev": (int, 500),
    "syn_test": (int, 500),
    "syn_seed": (int, 0),
    "syn_embed_dim": (int, 16),
    "syn_skew_token": (str, ""),
    "syn_skew_class": (int, 0),
    "syn_skew_p": (float, 0.99),
    "syn_skew_rate": (float, 0.25),
    "syn_mild_rate": (float, 0.0),
    "syn_mild_noise": (float, 0.0),
    # audit
    "audit_min_count": (int, 5),
    "audit_skew_threshold": (float, 0.9),
}


@dataclass
class Config:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, (_, default) in SCHEMA.items():
            self.values.setdefault(key, default)

    def __getattr__(self, key):
        values = object.__getattribute__(self, "values")
        if key in values:
            return values[key]
        raise AttributeError(key)

    def set(self, key: str, raw: str) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        typ = SCHEMA[key][0]
        try:
            self.values[key] = typ(raw)
        except ValueError:
            raise ConfigError(
                f"config key {key} expects {typ.__name__}, got {raw!r}") from None

    def to_kv_lines(self, prefix: str = "") -> list[str]:
        return [f"{prefix}{key} = {self.values[key]}" for key in SCHEMA]

    def __eq__(self, other):
        return isinstance(other, Config) and self.values == other.values


def parse_kv_lines(lines, config: Config | None = None,
                   prefix: str = "") -> Config:
    config = config or Config()
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if prefix:
            if not key.startswith(prefix):
                continue
            key = key[len(prefix):]
        config.set(key, raw.strip())
    return config


def load_config(path: str | None, overrides: list[str] | None = None) -> Config:
    """Config from a file (or defaults when None) plus --set overrides."""
    config = Config()
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            parse_kv_lines(fh, config)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        config.set(key.strip(), raw.strip())
    return config


def train_config(config: Config) -> TrainConfig:
    weights = RewardWeights(
        cls=config.lambda_cls, adv=config.lambda_adv, sim=config.lambda_sim,
        lang=config.lambda_lang, rec=config.lambda_rec, cyc=0.0,
        alpha=config.alpha)
    boot = RewardWeights(
        cls=config.boot_lambda_cls, adv=0.0, sim=0.0, lang=0.0,
        rec=config.boot_lambda_rec, cyc=config.boot_lambda_cyc,
        alpha=config.alpha)
    cfg = TrainConfig(
        weights=weights, boot_weights=boot, batch_size=config.batch_size,
        lr_gen=config.lr_gen, lr_cls=config.lr_cls, lr_adv=config.lr_adv,
        epochs_stage1=config.epochs_stage1, epochs_stage2=config.epochs_stage2,
        dev_eval_interval=config.dev_eval_interval, seed=config.seed,
        clf_update=config.clf_update, lp_variant=config.lp_variant,
        reward_norm=config.reward_norm, content_reward=config.content_reward,
        clf_pretrain_epochs=config.clf_pretrain_epochs,
        lm_epochs=config.lm_epochs, eval_lm_epochs=config.eval_lm_epochs,
        holdout_frac=config.holdout_frac, dev_limit=config.dev_limit)
    cfg.validate()
    return cfg


def synthetic_spec(config: Config) -> SyntheticSpec:
    return SyntheticSpec(
        mild_rate=config.syn_mild_rate, mild_noise=config.syn_mild_noise,
        skew_token=config.syn_skew_token or None,
        skew_class=config.syn_skew_class, skew_p=config.syn_skew_p,
        skew_rate=config.syn_skew_rate,
        sizes=(config.syn_train, config.syn_dev, config.syn_test),
        seed=config.syn_seed, embed_dim=config.syn_embed_dim)


def model_kwargs(config: Config) -> dict:
    return {
        "generator": {"embed_dim": config.embed_dim,
                      "hidden_dim": config.hidden_dim,
                      "max_len_slack": config.max_len_slack},
        "classifier": {"embed_dim": config.clf_embed_dim,
                       "filters": config.clf_filters,
                       "inter_dim": config.clf_inter_dim},
        "discriminator": {"embed_dim": config.adv_embed_dim,
                          "hidden_dim": config.adv_hidden_dim},
        "lm": {"embed_dim": config.lm_embed_dim,
               "hidden_dim": config.lm_hidden_dim},
    }
