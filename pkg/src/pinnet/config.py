"""Flat ``key = value`` run configuration with dotted keys.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Command-line overrides use the same ``key=value`` form and win over the
file. Unknown keys are rejected so a typo never silently falls back to a
default.
"""
from dataclasses import dataclass

from .training import TrainConfig


class ConfigFileError(ValueError):
    pass


def _str(v):
    return v


def _bool(v):
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _fractions(v):
    parts = [float(p) for p in v.split(",")]
    if len(parts) != 3:
        raise ValueError("expected three comma-separated fractions")
    return tuple(parts)


def _delimiter(v):
    return {"tab": "\t", "\\t": "\t", "comma": ",", "space": " "}.get(v, v)


@dataclass(frozen=True)
class Key:
    name: str
    parse: object
    default: str
    target: str = ""  # TrainConfig field, if any


_T = TrainConfig()

KEYS = {k.name: k for k in [
    Key("data.path", _str, ""),
    Key("data.train", _str, ""),
    Key("data.valid", _str, ""),
    Key("data.test", _str, ""),
    Key("data.vocab", _str, ""),
    Key("data.schema", _str, ""),
    Key("data.label", _str, "label"),
    Key("data.delimiter", _delimiter, "tab"),
    Key("data.min_count", int, "20"),
    Key("data.bins", int, "10"),
    Key("data.fractions", _fractions, "0.7,0.1,0.2"),
    Key("data.split_seed", int, "0"),
    Key("model.embedding_dim", int, str(_T.embedding_dim), "embedding_dim"),
    Key("model.pin_layers", int, str(_T.pin_layers), "pin_layers"),
    Key("model.subspaces", int, str(_T.subspaces), "subspaces"),
    Key("model.activation", _str, _T.activation, "activation"),
    Key("train.batch_size", int, str(_T.batch_size), "batch_size"),
    Key("train.eval_every_steps", int, str(_T.eval_every_steps), "eval_every_steps"),
    Key("train.early_stop_patience", int, str(_T.early_stop_patience), "early_stop_patience"),
    Key("train.max_steps", int, str(_T.max_steps), "max_steps"),
    Key("train.seed", int, str(_T.seed), "seed"),
    Key("opt.name", _str, _T.optimizer, "optimizer"),
    Key("opt.alpha", float, repr(_T.alpha), "alpha"),
    Key("opt.beta", float, repr(_T.beta), "beta"),
    Key("opt.lambda1", float, repr(_T.lambda1), "lambda1"),
    Key("opt.lambda2", float, repr(_T.lambda2), "lambda2"),
    Key("opt.adam_lr", float, repr(_T.adam_lr), "adam_lr"),
    Key("opt.adam_beta1", float, repr(_T.adam_beta1), "adam_beta1"),
    Key("opt.adam_beta2", float, repr(_T.adam_beta2), "adam_beta2"),
    Key("opt.adam_eps", float, repr(_T.adam_eps), "adam_eps"),
    Key("out.dir", _str, "run"),
]}


def parse_assignment(line, where):
    if "=" not in line:
        raise ConfigFileError(f"{where}: expected key = value, got {line!r}")
    key, _, value = line.partition("=")
    key, value = key.strip(), value.strip()
    if key not in KEYS:
        raise ConfigFileError(f"{where}: unknown key {key!r}")
    try:
        KEYS[key].parse(value)
    except ValueError as exc:
        raise ConfigFileError(f"{where}: bad value for {key}: {exc}") from None
    return key, value


class RunConfig:
    """Raw string settings plus typed access; defaults fill anything unset."""

    def __init__(self, values=None):
        self.raw = {k: key.default for k, key in KEYS.items()}
        for k, v in (values or {}).items():
            if k not in KEYS:
                raise ConfigFileError(f"unknown key {k!r}")
            self.raw[k] = str(v)

    @classmethod
    def from_text(cls, text, source="<config>"):
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if line:
                k, v = parse_assignment(line, f"{source}:{lineno}")
                values[k] = v
        return cls(values)

    @classmethod
    def load(cls, path, overrides=()):
        with open(path, encoding="utf-8") as fh:
            cfg = cls.from_text(fh.read(), source=str(path))
        return cfg.with_overrides(overrides)

    def with_overrides(self, overrides):
        raw = dict(self.raw)
        for i, item in enumerate(overrides):
            k, v = parse_assignment(item, f"override {i + 1}")
            raw[k] = v
        return RunConfig(raw)

    def __getitem__(self, key):
        return KEYS[key].parse(self.raw[key])

    def train_config(self):
        kw = {key.target: self[name] for name, key in KEYS.items() if key.target}
        try:
            return TrainConfig(**kw)
        except ValueError as exc:
            raise ConfigFileError(str(exc)) from None

    def to_text(self):
        """Every effective setting, sorted, in the same format the loader reads."""
        return "".join(f"{k} = {self.raw[k]}\n" for k in sorted(self.raw))
