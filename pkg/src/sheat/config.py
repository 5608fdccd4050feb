"""Experiment configuration: INI-style ``key = value`` sections plus overrides."""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .estimator import FUNCTIONALS, rung_factors
from .nemytskii import DIFFUSIONS, DRIFTS, ModelSpec, make_model
from .spectral import EigenBasis, SpectralField


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None, source: str | None = None):
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"[{field}]")
        super().__init__(f"{': '.join([' '.join(where)] if where else [])}{': ' if where else ''}{message}")
        self.message = message
        self.field = field
        self.line = line


def default_config_path() -> Path:
    return Path(str(resources.files("sheat") / "configs" / "default.ini"))


@dataclass
class ExperimentConfig:
    a: float = 0.0
    b: float = 1.0
    m: int = 64
    P: int = 128
    T: float = 1.0
    dts: list[float] = field(default_factory=lambda: [2.0**-j for j in range(4, 10)])
    ref_refine: int = 3
    drift: str = "zero"
    drift_params: dict = field(default_factory=dict)
    diffusion: str = "additive"
    diffusion_params: dict = field(default_factory=lambda: {"level": 1.0})
    initial: str = "mode"
    initial_mode: int = 1
    initial_amplitude: float = 1.0
    phi: str = "phi_exp"
    M_weak: int = 100_000
    M_strong: int = 2_000
    moment_order: int = 2
    moment_paths: int = 1_000
    moment_dt: float | None = None
    validate_radius: float = 10.0
    validate_samples: int = 4001
    experiment_seed: int = 20240611
    workers: int = 1
    chunk: int = 250
    output: str = "results"

    def validate(self) -> None:
        """Check cross-field invariants; raises ConfigError naming the field."""
        if not self.b > self.a:
            raise ConfigError(f"need a < b, got a={self.a}, b={self.b}", "domain.b")
        if self.m < 1:
            raise ConfigError("m must be a positive integer", "domain.m")
        if self.P < 2 * self.m:
            raise ConfigError(f"P={self.P} must be at least 2m={2 * self.m}", "domain.P")
        if self.T <= 0:
            raise ConfigError("T must be positive", "time.T")
        if not self.dts:
            raise ConfigError("the dt ladder is empty", "time.ladder")
        if any(dt > 1 for dt in self.dts):
            raise ConfigError("every ladder step must satisfy dt <= 1", "time.ladder")
        try:
            rung_factors(self.T, self.dts, self.ref_refine)
        except ValueError as exc:
            raise ConfigError(str(exc), "time.ladder") from None
        if self.drift not in DRIFTS:
            raise ConfigError(f"unknown drift {self.drift!r}; available: {', '.join(DRIFTS)}", "model.drift")
        if self.diffusion not in DIFFUSIONS:
            raise ConfigError(f"unknown diffusion {self.diffusion!r}; available: {', '.join(DIFFUSIONS)}",
                              "model.diffusion")
        if self.phi not in FUNCTIONALS:
            raise ConfigError(f"unknown test functional {self.phi!r}; available: {', '.join(FUNCTIONALS)}",
                              "estimator.phi")
        if self.initial not in ("mode", "zero"):
            raise ConfigError("initial shape must be 'mode' or 'zero'", "initial.shape")
        if not 1 <= self.initial_mode <= self.m:
            raise ConfigError(f"initial mode must be in 1..{self.m}", "initial.mode")
        if self.M_weak < 2 or self.M_strong < 2 or self.moment_paths < 2:
            raise ConfigError("sample counts must be at least 2", "estimator")
        if self.moment_order not in (2, 4):
            raise ConfigError("moment order must be 2 or 4", "estimator.moment_order")
        if not 0 <= self.experiment_seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer", "run.seed")
        if self.workers < 1 or self.chunk < 1:
            raise ConfigError("workers and chunk must be positive", "run.workers")
        try:
            self.model()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), "model") from None

    def basis(self) -> EigenBasis:
        return EigenBasis(self.a, self.b, self.m)

    def model(self) -> ModelSpec:
        return make_model(self.drift, self.diffusion, self.drift_params, self.diffusion_params)

    def initial_field(self) -> SpectralField:
        basis = self.basis()
        if self.initial == "zero":
            return SpectralField.zeros(basis)
        return SpectralField.mode(basis, self.initial_mode, self.initial_amplitude)

    @property
    def resolved_moment_dt(self) -> float:
        return self.moment_dt if self.moment_dt is not None else min(self.dts)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# parsing

# (section, key) -> (attribute, converter)
_SCALARS = {
    ("domain", "a"): ("a", float),
    ("domain", "b"): ("b", float),
    ("domain", "m"): ("m", int),
    ("domain", "p"): ("P", int),
    ("time", "t"): ("T", float),
    ("time", "ref_refine"): ("ref_refine", int),
    ("model", "drift"): ("drift", str),
    ("model", "diffusion"): ("diffusion", str),
    ("initial", "shape"): ("initial", str),
    ("initial", "mode"): ("initial_mode", int),
    ("initial", "amplitude"): ("initial_amplitude", float),
    ("estimator", "phi"): ("phi", str),
    ("estimator", "m_weak"): ("M_weak", int),
    ("estimator", "m_strong"): ("M_strong", int),
    ("estimator", "moment_order"): ("moment_order", int),
    ("estimator", "moment_paths"): ("moment_paths", int),
    ("estimator", "moment_dt"): ("moment_dt", float),
    ("validate", "radius"): ("validate_radius", float),
    ("validate", "samples"): ("validate_samples", int),
    ("run", "seed"): ("experiment_seed", int),
    ("run", "workers"): ("workers", int),
    ("run", "chunk"): ("chunk", int),
    ("run", "output"): ("output", str),
}


def _int(text: str) -> int:
    # accept 1e5 style counts when they are integral
    try:
        return int(text.replace("_", ""))
    except ValueError:
        v = float(text)
        if v != int(v):
            raise
        return int(v)


def parse_ladder(text: str, T: float) -> list[float]:
    """'4..9' or '4, 5, 6' are exponents j with dt = T * 2**-j."""
    text = text.strip()
    m = re.fullmatch(r"(\d+)\s*\.\.\s*(\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise ValueError(f"empty exponent range {text!r}")
        js = range(lo, hi + 1)
    else:
        js = [int(t) for t in re.split(r"[,\s]+", text) if t]
    return [T * 2.0**-j for j in js]


def parse_dts(text: str) -> list[float]:
    return [float(t) for t in re.split(r"[,\s]+", text.strip()) if t]


class _Lines:
    """Line numbers of ``key = value`` entries in the raw text."""

    def __init__(self, text: str):
        self.where = {}
        section = None
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            hdr = re.fullmatch(r"\[([^\]]+)\]", line)
            if hdr:
                section = hdr.group(1).strip().lower()
                continue
            kv = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
            if kv and section:
                self.where[(section, kv.group(1).strip().lower())] = n

    def __call__(self, section, key):
        return self.where.get((section, key))


def _apply(cfg: ExperimentConfig, section: str, key: str, value: str, line, source) -> None:
    section, key = section.lower(), key.lower()
    fld = f"{section}.{key}"
    try:
        if (section, key) in _SCALARS:
            attr, conv = _SCALARS[(section, key)]
            conv = _int if conv is int else conv
            setattr(cfg, attr, conv(value.strip()))
            cfg._given.add(attr)
        elif section == "time" and key == "ladder":
            cfg._ladder = value
        elif section == "time" and key == "dts":
            cfg._dts = value
        elif section == "model" and "." in key:
            which, param = key.split(".", 1)
            if which not in ("drift", "diffusion"):
                raise ValueError(f"parameter prefix must be drift. or diffusion., got {which!r}")
            getattr(cfg, f"{which}_params")[param] = float(value)
        else:
            raise ConfigError("unknown setting", fld, line, source)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad value {value.strip()!r}: {exc}", fld, line, source) from None


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a config file (default: the shipped one) and apply ``section.key=value`` overrides."""
    path = Path(path) if path is not None else default_config_path()
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", source=str(path)) from None
    return parse_config(text, overrides, source=str(path))


def parse_config(text: str, overrides: list[str] | None = None, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc),
                          line=line, source=source) from None
    lines = _Lines(text)
    overridden = set()
    cfg = ExperimentConfig(drift_params={}, diffusion_params={})
    cfg._ladder, cfg._dts, cfg._given = None, None, set()
    for section in parser.sections():
        for key, value in parser.items(section):
            _apply(cfg, section, key, value, lines(section.lower(), key.lower()), source)
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value", source="--set")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if section.lower() == "time" and key.lower() in ("ladder", "dts"):
            cfg._ladder = cfg._dts = None  # an override replaces either form
        _apply(cfg, section, key, value, None, "--set")
        overridden.add((section.strip().lower(), key.strip().lower()))
    if ("time", "ladder") in overridden or ("time", "dts") in overridden:
        lines, source = _Lines(""), "--set"
    ladder_key = "dts" if cfg._dts is not None else "ladder"
    _resolve_ladder(cfg, lines, source)
    if "P" not in cfg._given:
        cfg.P = 2 * cfg.m  # collocation follows the truncation unless pinned
    del cfg._ladder, cfg._dts, cfg._given
    try:
        cfg.validate()
    except ConfigError as exc:
        if exc.line is None and exc.field and "." in exc.field:
            sec, key = exc.field.split(".", 1)
            key = key.lower()
            if (sec, key) == ("time", "ladder"):
                key = ladder_key
            if (sec, key) in overridden:
                raise ConfigError(exc.message, exc.field, None, "--set") from None
            raise ConfigError(exc.message, exc.field, lines(sec, key), source) from None
        raise
    return cfg


def _resolve_ladder(cfg, lines, source):
    if cfg._ladder is not None and cfg._dts is not None:
        raise ConfigError("give either ladder or dts, not both", "time.ladder", lines("time", "ladder"), source)
    try:
        if cfg._dts is not None:
            cfg.dts = parse_dts(cfg._dts)
        elif cfg._ladder is not None:
            cfg.dts = parse_ladder(cfg._ladder, cfg.T)
        else:
            cfg.dts = [cfg.T * 2.0**-j for j in range(4, 10)]
    except ValueError as exc:
        key = "dts" if cfg._dts is not None else "ladder"
        raise ConfigError(f"bad ladder: {exc}", f"time.{key}", lines("time", key), source) from None
