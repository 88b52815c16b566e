"""Sectioned key-value run configuration.

Files are INI-style (``configparser``). Keys may be written with the
hyperparameter names of the pre-training and fine-tuning tables exactly
as printed ("Peak Learning Rate", "Adam β2", "Trade-off Weight λ", ...);
they are normalized by lowercasing, mapping Greek letters to their names
and turning spaces and hyphens into underscores, then resolved through
an alias table. Unknown keys are errors.

Sections: ``[run]``, ``[data]``, ``[encoder]``, ``[cul]``, ``[pretrain]``,
``[finetune]`` and any number of ``[task:NAME]``.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..cul import CULConfig
from ..downstream.finetune import FinetuneConfig
from ..downstream.tasks import TaskSpec
from ..encoder import EncoderConfig
from ..errors import ConfigError
from ..pretrain import TrainConfig

OUTPUT_ROOT_ENV = "VARMAE_OUTPUT_ROOT"

_GREEK = {"λ": "lambda", "ε": "epsilon", "β": "beta", "σ": "sigma", "μ": "mu", "₁": "1", "₂": "2"}

ALIASES = {
    "encoder": {
        "number_of_layers": "num_layers", "layers": "num_layers",
        "ffn_inner_hidden_size": "ffn_inner_size",
        "attention_heads": "num_heads", "heads": "num_heads",
        "attention_head_size": "head_size",
        "maximum_position": "max_position",
    },
    "cul": {},
    "pretrain": {
        "number_of_epoch": "epochs", "number_of_epochs": "epochs",
        "trade_off_weight_lambda": "lambda", "trade_off_weight": "lambda",
        "peak_learning_rate": "learning_rate",
        "maximum_length": "max_length",
        "gradient_accumulation_steps": "grad_accum_steps",
        "optimization_steps": "max_steps",
        "adam_epsilon": "adam_eps",
        "adam_beta1": "beta1", "adam_beta2": "beta2",
        "masking_rate": "masking_ratio",
    },
    "finetune": {
        "number_of_epoch": "epochs", "number_of_epochs": "epochs",
        "maximum_length": "max_length",
        "adam_epsilon": "adam_eps",
        "adam_beta1": "beta1", "adam_beta2": "beta2",
    },
}

_DATACLASS = {"encoder": EncoderConfig, "cul": CULConfig, "pretrain": TrainConfig, "finetune": FinetuneConfig}
# keys a section accepts beyond its dataclass fields
_EXTRA = {"pretrain": {"lambda"}, "finetune": {"dropout", "attention_dropout"}, "encoder": set(), "cul": set()}
# fields filled in by the program rather than by the user
_DERIVED = {"encoder": {"vocab_size"}, "cul": {"hidden_size"}, "pretrain": {"seed"}, "finetune": set()}
_RUN_KEYS = {"output_dir", "seed", "run_id", "checkpoint_every"}
_DATA_KEYS = {"generic_corpus", "domain_corpus", "vocab", "min_count", "corpus_fraction"}
_TASK_KEYS = {"kind", "labels", "train", "dev", "test", "multi_label", "metric"}
_TASK_KINDS = {"cls": "CLS", "mtc": "CLS", "ner": "TOKEN_LABELING", "se": "TOKEN_LABELING", "tm": "PAIR_MATCH",
               "token_labeling": "TOKEN_LABELING", "pair_match": "PAIR_MATCH"}


def normalize_key(key: str) -> str:
    k = key.strip().lower()
    for greek, name in _GREEK.items():
        k = k.replace(greek, name)
    for ch in " -":
        k = k.replace(ch, "_")
    for ch in "$\\{}":
        k = k.replace(ch, "")
    while "__" in k:
        k = k.replace("__", "_")
    return k.strip("_")


def _parse_bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}", key=key)


def _coerce(text: str, default, key: str):
    t = text.strip()
    try:
        if isinstance(default, bool):
            return _parse_bool(t, key)
        if isinstance(default, int):
            return int(t)
        if isinstance(default, float):
            return float(t)
        if isinstance(default, tuple):
            return tuple(float(x) if "." in x or "e" in x.lower() else int(x) for x in t.replace(",", " ").split())
        if default is None:
            if t.lower() in ("", "none", "auto"):
                return None
            if t.lower() in ("true", "false", "yes", "no", "on", "off"):
                return _parse_bool(t, key)
            return int(t)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}", key=key) from None
    return t


@dataclass
class DataConfig:
    generic_corpus: Path | None = None
    domain_corpus: Path | None = None
    vocab: Path | None = None
    min_count: int = 1
    corpus_fraction: float = 1.0


@dataclass
class RunConfig:
    encoder: dict = field(default_factory=dict)
    cul: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    finetune_dropout: dict = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    tasks: list = field(default_factory=list)
    output_dir: Path = Path("runs/default")
    seed: int = 0
    run_id: str = "run"
    checkpoint_every: int = 0
    source: Path | None = None
    explicit_seeds: bool = False

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(**{**self.encoder, "vocab_size": vocab_size})

    def cul_config(self) -> CULConfig:
        hidden = self.encoder.get("hidden_size", EncoderConfig.hidden_size)
        extra = {"latent_size": hidden} if "latent_size" not in self.cul else {}
        return CULConfig(**{"hidden_size": hidden, **extra, **self.cul})

    def apply_seed(self, seed: int) -> None:
        """Set the run seed; fine-tuning seeds follow it unless listed explicitly in the file."""
        self.seed = int(seed)
        self.train.seed = self.seed
        if not self.explicit_seeds:
            self.finetune.seeds = tuple(self.seed + i for i in range(len(self.finetune.seeds)))

    def to_ini(self) -> str:
        """Resolved configuration with every value spelled out; loads back to an equal config."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {"output_dir": str(self.output_dir), "seed": str(self.seed), "run_id": self.run_id,
                     "checkpoint_every": str(self.checkpoint_every)}
        d = self.data
        cp["data"] = {k: str(v) for k, v in (("generic_corpus", d.generic_corpus), ("domain_corpus", d.domain_corpus),
                                             ("vocab", d.vocab)) if v is not None}
        cp["data"].update(min_count=str(d.min_count), corpus_fraction=repr(d.corpus_fraction))
        enc_defaults = {f.name: getattr(EncoderConfig(), f.name) for f in fields(EncoderConfig)}
        cp["encoder"] = {k: _fmt(self.encoder.get(k, v)) for k, v in enc_defaults.items() if k != "vocab_size"}
        cul = self.cul_config()
        cp["cul"] = {f.name: _fmt(getattr(cul, f.name)) for f in fields(CULConfig) if f.name != "hidden_size"}
        cp["pretrain"] = {f.name: _fmt(getattr(self.train, f.name)) for f in fields(TrainConfig) if f.name != "seed"}
        ft = {f.name: _fmt(getattr(self.finetune, f.name)) for f in fields(FinetuneConfig)}
        if not self.explicit_seeds:
            ft.pop("seeds")
            ft["num_seeds"] = str(len(self.finetune.seeds))
        ft.update({k: _fmt(v) for k, v in self.finetune_dropout.items()})
        cp["finetune"] = ft
        for t in self.tasks:
            sec = {"kind": t.kind, "labels": ",".join(t.labels), "multi_label": _fmt(t.multi_label), "metric": t.metric}
            sec.update({s: str(p) for s, p in t.splits.items()})
            cp[f"task:{t.name}"] = sec
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def as_dict(self) -> dict:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(self.to_ini())
        return {s: dict(cp[s]) for s in cp.sections()}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _resolve_path(base: Path, text: str, key: str, must_exist: bool = True) -> Path:
    p = Path(os.path.expanduser(text.strip()))
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(f"{key}: path does not exist: {p}", key=key)
    return p


def _section_values(section: str, items, cls) -> dict:
    names = {f.name: f for f in fields(cls)}
    aliases = ALIASES.get(section, {})
    out = {}
    for raw_key, text in items:
        key = normalize_key(raw_key)
        key = aliases.get(key, key)
        if key in _DERIVED[section] or (key not in names and key not in _EXTRA[section]):
            raise ConfigError(f"[{section}] unknown key {raw_key!r}", key=raw_key)
        if key in out:
            raise ConfigError(f"[{section}] key {raw_key!r} given twice", key=raw_key)
        default = getattr(cls(), key) if key in names else 0.0
        out[key] = _coerce(text, default, f"{section}.{raw_key}")
    return out


def load_config(path, *, check_paths: bool = True) -> RunConfig:
    """Parse and validate a run configuration file. Raises :class:`ConfigError`."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}", key="config")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        import json

        try:
            text = json.loads(text)["resolved_config"]
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})", key="config") from None
    return parse_config(text, base=path.parent, check_paths=check_paths, source=path)


def parse_config(text: str, *, base: Path = Path("."), check_paths: bool = True, source=None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}".splitlines()[0], key="config") from None
    cfg = RunConfig(source=source)
    known = {"run", "data", "encoder", "cul", "pretrain", "finetune"}
    for section in cp.sections():
        if section not in known and not section.startswith("task:"):
            raise ConfigError(f"unknown section [{section}]", key=section)

    if cp.has_section("run"):
        for raw, text_v in cp.items("run"):
            key = normalize_key(raw)
            if key not in _RUN_KEYS:
                raise ConfigError(f"[run] unknown key {raw!r}", key=raw)
            if key == "output_dir":
                cfg.output_dir = Path(text_v.strip())
            elif key == "seed":
                cfg.seed = _coerce(text_v, 0, "run.seed")
            elif key == "checkpoint_every":
                cfg.checkpoint_every = _coerce(text_v, 0, "run.checkpoint_every")
            else:
                cfg.run_id = text_v.strip()

    if cp.has_section("data"):
        d = cfg.data
        for raw, text_v in cp.items("data"):
            key = normalize_key(raw)
            if key not in _DATA_KEYS:
                raise ConfigError(f"[data] unknown key {raw!r}", key=raw)
            if key in ("generic_corpus", "domain_corpus", "vocab"):
                setattr(d, key, _resolve_path(base, text_v, f"data.{key}", check_paths))
            elif key == "min_count":
                d.min_count = _coerce(text_v, 1, "data.min_count")
            else:
                d.corpus_fraction = _coerce(text_v, 1.0, "data.corpus_fraction")
        if not 0.0 < d.corpus_fraction <= 1.0:
            raise ConfigError("data.corpus_fraction must lie in (0, 1]", key="corpus_fraction")
        if d.min_count < 1:
            raise ConfigError("data.min_count must be >= 1", key="min_count")

    for section in ("encoder", "cul"):
        if cp.has_section(section):
            setattr(cfg, section, _section_values(section, cp.items(section), _DATACLASS[section]))

    train = _section_values("pretrain", cp.items("pretrain"), TrainConfig) if cp.has_section("pretrain") else {}
    if "lambda" in train:
        lam = train.pop("lambda")
        if "lambda_masked" in train or "lambda_unmasked" in train:
            raise ConfigError("give either the shared trade-off weight or the per-branch weights", key="lambda")
        train["lambda_masked"] = train["lambda_unmasked"] = lam
    ft_items = list(cp.items("finetune")) if cp.has_section("finetune") else []
    num_seeds = None
    rest = []
    for raw, text_v in ft_items:
        if normalize_key(raw) == "num_seeds":
            num_seeds = _coerce(text_v, 3, "finetune.num_seeds")
        else:
            rest.append((raw, text_v))
    ft = _section_values("finetune", rest, FinetuneConfig)
    for key in ("dropout", "attention_dropout"):
        if key in ft:
            cfg.finetune_dropout[key] = float(ft.pop(key))
    cfg.explicit_seeds = "seeds" in ft
    if num_seeds is not None:
        if cfg.explicit_seeds:
            raise ConfigError("give either seeds or num_seeds", key="num_seeds")
        if num_seeds < 1:
            raise ConfigError("finetune.num_seeds must be >= 1", key="num_seeds")
        ft["seeds"] = tuple(range(num_seeds))
    try:
        cfg.train = TrainConfig(**{**train, "seed": cfg.seed})
        cfg.finetune = FinetuneConfig(**ft)
        cfg.encoder_config(vocab_size=8)
        cfg.cul_config()
    except TypeError as exc:
        raise ConfigError(str(exc), key="config") from None
    cfg.apply_seed(cfg.seed)

    for section in cp.sections():
        if not section.startswith("task:"):
            continue
        name = section.split(":", 1)[1].strip()
        if not name or not name.replace("_", "").replace("-", "").isalnum():
            raise ConfigError(f"bad task name in [{section}]", key=section)
        vals = {}
        for raw, text_v in cp.items(section):
            key = normalize_key(raw)
            if key not in _TASK_KEYS:
                raise ConfigError(f"[{section}] unknown key {raw!r}", key=raw)
            vals[key] = text_v.strip()
        kind_text = vals.get("kind", "").lower()
        if kind_text not in _TASK_KINDS:
            raise ConfigError(f"[{section}] kind must be one of {sorted(_TASK_KINDS)}", key="kind")
        if "labels" not in vals:
            raise ConfigError(f"[{section}] labels are required", key="labels")
        multi = _parse_bool(vals["multi_label"], "multi_label") if "multi_label" in vals else kind_text == "mtc"
        metric = vals.get("metric") or ("token_f1" if kind_text == "se" else None)
        splits = {s: _resolve_path(base, vals[s], f"{section}.{s}", check_paths)
                  for s in ("train", "dev", "test") if s in vals}
        cfg.tasks.append(TaskSpec(name, _TASK_KINDS[kind_text], [x.strip() for x in vals["labels"].split(",")],
                                  splits, multi_label=multi, metric=metric))
    return cfg


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def resolve_output(cfg: RunConfig, override=None) -> Path:
    """``--output`` wins; otherwise ``[run] output_dir``, relative paths resolved against the output-root variable."""
    p = Path(override) if override is not None else cfg.output_dir
    return p if p.is_absolute() else output_root() / p
