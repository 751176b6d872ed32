"""Training/coding configuration and its ``key = value`` text form."""

from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError

# config-file spelling -> attribute name, where they differ
_ALIASES = {"lambda": "lam"}


@dataclass(frozen=True)
class TrainingConfig:
    initial_iters: int = 10
    feedback_rounds: int = 2
    rho0: float = 1e-3
    lam: float = 0.15
    r: int = 64
    r_bg: int = 64
    nu: int = 2
    label_frac: float = 0.25
    seed: int = 0
    svm_c_patch: float = 1.0
    svm_c_image: float = 10.0
    kmeans_iters: int = 30
    patch_size: int = 64
    stride: int = 16
    threshold: float = 0.5
    train1_pos_frac: float = 70 / 150
    train1_neg_frac: float = 30 / 110

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("initial_iters", "feedback_rounds", "seed"):
                if v < 0:
                    raise ConfigError(f"{f.name} must be >= 0")
            elif f.name in ("label_frac", "threshold", "train1_pos_frac", "train1_neg_frac"):
                if not 0 < v <= 1:
                    raise ConfigError(f"{f.name} must lie in (0, 1]")
            elif not v > 0:
                raise ConfigError(f"{f.name} must be positive")
        if self.stride > self.patch_size:
            raise ConfigError("stride must not exceed patch_size")

    def to_text(self):
        inv = {v: k for k, v in _ALIASES.items()}
        return "".join(f"{inv.get(k, k)} = {v!r}\n" for k, v in asdict(self).items())

    def with_overrides(self, **kw):
        return replace(self, **kw)


def parse_config(text):
    types = {f.name: f.type for f in fields(TrainingConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key or not value:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        name = _ALIASES.get(key, key)
        if name not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        cast = int if types[name] in (int, "int") else float
        try:
            values[name] = cast(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} needs a numeric value, got {value!r}") from None
    return TrainingConfig(**values)


def load_config(path=None):
    if path is None:
        return TrainingConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
