"""Plain-text run configuration.

A configuration file holds one ``key = value`` pair per line; ``#`` starts a
comment. Lists are comma separated. Optimizer settings use the ``opt.``
prefix (``opt.max_iters = 300``). Example::

    study = are
    model = lorenz
    estimators = S, LT, EM
    h = 0.01, 0.05
    N = 5000
    M = 100
    seed = 1

Values are resolved in the order defaults < preset < file < command-line
flags. :meth:`RunConfig.dumps` writes the resolved configuration in a
canonical form that parses back to the same object and re-serializes to the
same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .objectives import ESTIMATORS
from .optimize import OptimizerConfig

STUDIES = ("are", "timing", "normality", "convergence")

_CONV_H = tuple(0.32 * 2.0 ** -k for k in range(5, 10))

PRESETS = {
    ("are", "desk"): dict(estimators=ESTIMATORS, h=(0.001, 0.005, 0.01, 0.05), N=(1000, 5000), M=100),
    ("are", "paper"): dict(estimators=ESTIMATORS, h=(0.001, 0.005, 0.01, 0.05), N=(5000,), M=1000),
    ("timing", "desk"): dict(estimators=ESTIMATORS, h=(0.005, 0.01, 0.02), N=(250, 500, 1000, 2000), M=3),
    ("timing", "paper"): dict(estimators=ESTIMATORS, h=(0.005, 0.01, 0.02),
                              N=(1000, 2500, 5000, 7500, 10000), M=10),
    ("normality", "desk"): dict(estimators=("S",), h=(0.01,), N=(1000, 5000), M=200),
    ("normality", "paper"): dict(estimators=("S",), h=(0.01,), N=(1000, 5000, 10000), M=1000),
    ("convergence", "desk"): dict(schemes=("EM", "LT", "S"), h=_CONV_H, n_paths=2000),
    ("convergence", "paper"): dict(schemes=("EM", "LT", "S"), h=_CONV_H, n_paths=10000),
}


def _floats(text):
    return tuple(float(v) for v in _items(text))


def _ints(text):
    return tuple(int(v) for v in _items(text))


def _items(text):
    parts = [p.strip() for p in str(text).split(",")]
    if not parts or any(p == "" for p in parts):
        raise ValueError("empty list entry")
    return parts


def _upper_list(text):
    return tuple(p.upper() for p in _items(text))


def _opt_int(text):
    return None if str(text).strip().lower() in ("", "none", "auto") else int(text)


# key -> (parser, formatter)
def _fmt_list(v):
    return ", ".join(_fmt_scalar(x) for x in v)


def _fmt_scalar(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


_SCHEMA = {
    "study": (lambda t: t.strip().lower(), str),
    "preset": (lambda t: t.strip().lower(), str),
    "model": (lambda t: t.strip().lower(), str),
    "theta0": (_floats, _fmt_list),
    "estimators": (_upper_list, _fmt_list),
    "schemes": (_upper_list, _fmt_list),
    "N": (_ints, _fmt_list),
    "h": (_floats, _fmt_list),
    "M": (int, str),
    "seed": (int, str),
    "threads": (_opt_int, str),
    "out": (lambda t: t.strip(), str),
    "oversample": (_opt_int, str),
    "fine_step": (float, _fmt_scalar),
    "burn_in": (float, _fmt_scalar),
    "x0": (_floats, _fmt_list),
    "init": (lambda t: t.strip().lower(), str),
    "trim_fraction": (float, _fmt_scalar),
    "n_paths": (int, str),
    "T": (float, _fmt_scalar),
    "ref_factor": (int, str),
}

_OPT_FIELDS = {f.name: f.type for f in fields(OptimizerConfig)}


@dataclass(frozen=True)
class RunConfig:
    study: str | None = None
    preset: str | None = None
    model: str = "lorenz"
    theta0: tuple | None = None
    estimators: tuple = ESTIMATORS
    schemes: tuple = ("EM", "LT", "S")
    N: tuple = (5000,)
    h: tuple = (0.01,)
    M: int = 100
    seed: int = 0
    threads: int | None = None
    out: str | None = None
    oversample: int | None = None
    fine_step: float = 1e-4
    burn_in: float = 10.0
    x0: tuple | None = None
    init: str = "default"
    trim_fraction: float = 0.01
    n_paths: int = 2000
    T: float = 1.0
    ref_factor: int = 64
    optimizer: dict = field(default_factory=dict)

    def validate(self):
        if self.study is not None and self.study not in STUDIES:
            raise ConfigError(f"study: expected one of {STUDIES}, got {self.study!r}")
        if self.preset is not None and self.preset not in ("desk", "paper"):
            raise ConfigError(f"preset: expected 'desk' or 'paper', got {self.preset!r}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"estimators: unknown {bad}; expected a subset of {ESTIMATORS}")
        bad = [s for s in self.schemes if s not in ("EM", "LT", "S")]
        if bad:
            raise ConfigError(f"schemes: unknown {bad}")
        if self.M < 1:
            raise ConfigError("M: must be >= 1")
        if any(n < 1 for n in self.N):
            raise ConfigError("N: must be >= 1")
        if any(not h > 0 for h in self.h):
            raise ConfigError("h: steps must be positive")
        if self.oversample is not None and self.oversample < 1:
            raise ConfigError("oversample: must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads: must be >= 1")
        if self.init not in ("default", "theta0"):
            raise ConfigError("init: expected 'default' or 'theta0'")
        try:
            self.optimizer_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"opt.*: {exc}") from None
        return self

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(**self.optimizer)

    def dumps(self) -> str:
        """Canonical ``key = value`` text; ``loads(dumps())`` reproduces ``self``."""
        lines = []
        for f in fields(self):
            if f.name == "optimizer":
                continue
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {_SCHEMA[f.name][1](v)}")
        for k in sorted(self.optimizer):
            v = self.optimizer[k]
            lines.append(f"opt.{k} = {_fmt_scalar(v)}")
        return "\n".join(lines) + "\n"


def _parse_value(key, text):
    if key.startswith("opt."):
        name = key[4:]
        if name not in _OPT_FIELDS:
            raise KeyError(key)
        default = getattr(OptimizerConfig(), name)
        if isinstance(default, str):
            return name, text.strip()
        if isinstance(default, int):
            return name, int(text)
        return name, float(text)
    if key not in _SCHEMA:
        raise KeyError(key)
    return key, _SCHEMA[key][0](text)


def parse_pairs(pairs, source="<config>"):
    """Turn ``(lineno, key, value_text)`` triples into a field dict.

    Raises
    ------
    ConfigError
        With ``source:line: field`` in the message.
    """
    values, opt = {}, {}
    for lineno, key, text in pairs:
        where = f"{source}:{lineno}" if lineno else source
        try:
            name, val = _parse_value(key, text)
        except KeyError:
            raise ConfigError(f"{where}: unknown field {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"{where}: field {key!r}: cannot parse {text!r} ({exc})") from None
        if key.startswith("opt."):
            opt[name] = val
        else:
            values[name] = val
    return values, opt


def read_pairs(text, source="<config>"):
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, val = line.partition("=")
        pairs.append((lineno, key.strip(), val.strip()))
    return pairs


def loads(text, source="<config>") -> RunConfig:
    values, opt = parse_pairs(read_pairs(text, source), source)
    return RunConfig(**values, optimizer=opt).validate()


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return loads(text, str(path))


def resolve(file_text=None, overrides=None, source="<config>", study=None) -> RunConfig:
    """Merge defaults, preset, file and flag overrides (later wins).

    ``overrides`` maps field names (or ``opt.*`` keys) to value strings.
    """
    file_vals, file_opt = ({}, {})
    if file_text is not None:
        file_vals, file_opt = parse_pairs(read_pairs(file_text, source), source)
    flag_pairs = [(0, k, v) for k, v in (overrides or {}).items() if v is not None]
    flag_vals, flag_opt = parse_pairs(flag_pairs, "command line")

    merged = {**file_vals, **flag_vals}
    if study is not None:
        merged["study"] = study
    cfg = RunConfig()
    preset = merged.get("preset")
    st = merged.get("study")
    if preset is not None:
        if preset not in ("desk", "paper"):
            raise ConfigError(f"preset: expected 'desk' or 'paper', got {preset!r}")
        if st is None:
            raise ConfigError("preset: a preset needs a study")
        cfg = replace(cfg, **PRESETS[(st, preset)])
    cfg = replace(cfg, **merged, optimizer={**file_opt, **flag_opt})
    return cfg.validate()
