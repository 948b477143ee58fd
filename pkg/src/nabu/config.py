"""Model and training configuration, plus the flat ``key=value`` config file."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .graph import DEFAULT_LANGUAGES

TASK_SIZES = {"mono": 1, "bi": 2, "multi": 3}
ENCODERS = ("gat", "linearized-transformer")


@dataclass
class ModelConfig:
    embed_dim: int = 256          # m
    hidden_dim: int = 256         # n
    vocab_size: int = 4000        # K
    heads: int = 8
    layers: int = 6
    ffn_dim: int = 1024
    dropout: float = 0.3
    max_decode_len: int = 128
    max_positions: int = 512
    encoder: str = "gat"
    gat_mode: str = "gat"         # or "gcn": fixed 1/|N_i| coefficients
    edge_aggregation: str = "mean"
    shared_predicates: bool = False
    languages: tuple = DEFAULT_LANGUAGES

    def __post_init__(self):
        self.languages = tuple(self.languages)
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.embed_dim != self.hidden_dim:
            raise ConfigError("embed_dim and hidden_dim must be equal")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.gat_mode not in ("gat", "gcn"):
            raise ConfigError(f"unknown gat_mode {self.gat_mode!r}")
        if self.edge_aggregation not in ("mean", "sum"):
            raise ConfigError(f"unknown edge_aggregation {self.edge_aggregation!r}")

    @property
    def head_dim(self):
        return self.hidden_dim // self.heads

    def digest(self):
        """Hash of everything that fixes parameter shapes and semantics."""
        d = asdict(self)
        for volatile in ("dropout", "max_decode_len"):
            d.pop(volatile)
        d["languages"] = list(d["languages"])
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def to_json(self):
        d = asdict(self)
        d["languages"] = list(d["languages"])
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.001
    epochs: int = 30
    seed: int = 0
    task: str = "multi"
    languages: tuple = DEFAULT_LANGUAGES
    grad_clip: float = 1.0
    warmup_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    precision: str = "float32"
    target_bleu: float = None     # stop early once training BLEU reaches this
    eval_every: int = 25

    def __post_init__(self):
        self.languages = tuple(self.languages)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.task not in TASK_SIZES:
            raise ConfigError(f"unknown task {self.task!r}")
        if len(self.languages) != TASK_SIZES[self.task]:
            raise ConfigError(f"task {self.task} needs {TASK_SIZES[self.task]} languages, "
                              f"got {list(self.languages)}")


@dataclass
class RunConfig:
    """Everything a config file may set."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tokenizer_size: int = 4000
    beam_size: int = 5
    length_penalty: float = 0.6
    copy: bool = True
    kfold: int = 10
    data_dir: str = None
    out_dir: str = "run"


_ALIASES = {"m": "embed_dim", "n": "hidden_dim", "K": "tokenizer_size", "vocab_size": "tokenizer_size",
            "eta": "heads"}


def _coerce(raw, like, key):
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(like, tuple):
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    try:
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float) or like is None and key == "target_bleu":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def parse_config(text, base=None):
    """Parse flat ``key=value`` lines; ``#`` starts a comment; unknown keys fail."""
    run = base or RunConfig()
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    run_keys = {f.name for f in fields(RunConfig)} - {"model", "train"}
    model_kw, train_kw = asdict(run.model), asdict(run.train)
    run_kw = {k: getattr(run, k) for k in run_keys}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key == "languages":
            value = _coerce(raw, (), key)
            model_kw[key] = train_kw[key] = value
        elif key in model_keys:
            model_kw[key] = _coerce(raw, model_kw[key], key)
        elif key in train_keys:
            train_kw[key] = _coerce(raw, train_kw[key], key)
        elif key in run_keys:
            run_kw[key] = _coerce(raw, run_kw[key], key)
        else:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
    return RunConfig(model=ModelConfig(**model_kw), train=TrainConfig(**train_kw), **run_kw)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def format_config(run):
    lines = []
    for k, v in asdict(run.model).items():
        lines.append(f"{k}={','.join(v) if isinstance(v, (tuple, list)) else v}")
    for k, v in asdict(run.train).items():
        if k != "languages" and v is not None:
            lines.append(f"{k}={v}")
    for f in fields(RunConfig):
        if f.name not in ("model", "train") and getattr(run, f.name) is not None:
            lines.append(f"{f.name}={getattr(run, f.name)}")
    return "\n".join(lines) + "\n"
