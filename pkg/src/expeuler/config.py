"""Line-oriented experiment configuration.

Format: one ``key = value`` per line, ``#`` starts a comment, lists are
comma-separated. Unknown or repeated keys are errors. Defaults::

    problem       = laplacian_sine     # or laplacian_linear (f = 0)
    dimension     = 10
    t_end         = 0.1
    hurst_values  = 0.6, 0.7, 0.8, 0.9
    coarse_steps  = 4, 8, 16, 32, 64
    ref_steps     = 1024
    paths         = 200
    seed          = 20240601
    error_mode    = sup                # or endpoint
    noise_mode    = <auto>             # exact-cholesky if ref_steps <= 64, else riemann-oracle
    noise_scale   = 1.0                # 0 switches the noise off
    quad_order    = 16
    covariance_cap = 4096
    lipschitz     = <problem default>  # K used by the stability subcommand
    chunk_paths   = 50
    output_dir    = results
"""
import hashlib
from dataclasses import dataclass, fields, replace
from typing import Optional, Tuple

from .errors import ConfigError

PROBLEMS = ("laplacian_sine", "laplacian_linear")
ERROR_MODES = ("sup", "endpoint")
NOISE_MODES = ("exact-cholesky", "riemann-oracle")
EXACT_REF_LIMIT = 64

DESK_PATHS, DESK_REF = 200, 1024
FULL_PATHS, FULL_REF = 1000, 2048


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "laplacian_sine"
    dimension: int = 10
    t_end: float = 0.1
    hurst_values: Tuple[float, ...] = (0.6, 0.7, 0.8, 0.9)
    coarse_steps: Tuple[int, ...] = (4, 8, 16, 32, 64)
    ref_steps: int = DESK_REF
    paths: int = DESK_PATHS
    seed: int = 20240601
    error_mode: str = "sup"
    noise_mode: Optional[str] = None
    noise_scale: float = 1.0
    quad_order: int = 16
    covariance_cap: int = 4096
    lipschitz: Optional[float] = None
    chunk_paths: int = 50
    output_dir: str = "results"

    @property
    def resolved_noise_mode(self):
        if self.noise_mode is not None:
            return self.noise_mode
        return "riemann-oracle" if self.ref_steps > EXACT_REF_LIMIT else "exact-cholesky"

    def canonical_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "noise_mode":
                v = self.resolved_noise_mode
            if isinstance(v, tuple):
                v = ",".join(_fmt(x) for x in v)
            elif v is None:
                v = "default"
            else:
                v = _fmt(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    def with_overrides(self, **kw):
        cfg = replace(self, **{k: v for k, v in kw.items() if v is not None})
        validate(cfg)
        return cfg


def _fmt(x):
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _int(text):
    return int(text, 10)


def _pos_int(text):
    v = _int(text)
    if v <= 0:
        raise ValueError("must be a positive integer")
    return v


def _seed(text):
    v = _int(text)
    if not 0 <= v < 2 ** 64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return v


def _float(text):
    return float(text)


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _hurst_list(text):
    vals = tuple(float(x) for x in text.split(","))
    for h in vals:
        if not 0.5 < h < 1:
            raise ValueError(f"Hurst parameter {h} outside (1/2, 1)")
    return vals


def _step_list(text):
    return tuple(_pos_int(x.strip()) for x in text.split(","))


_PARSERS = {
    "problem": _choice(PROBLEMS),
    "dimension": _pos_int,
    "t_end": _float,
    "hurst_values": _hurst_list,
    "coarse_steps": _step_list,
    "ref_steps": _pos_int,
    "paths": _pos_int,
    "seed": _seed,
    "error_mode": _choice(ERROR_MODES),
    "noise_mode": _choice(NOISE_MODES),
    "noise_scale": _float,
    "quad_order": _pos_int,
    "covariance_cap": _pos_int,
    "lipschitz": _float,
    "chunk_paths": _pos_int,
    "output_dir": str,
}


def validate(cfg, lines=None):
    lines = lines or {}

    def fail(msg, key):
        raise ConfigError(msg, lines.get(key))

    if not cfg.hurst_values:
        fail("hurst_values is empty", "hurst_values")
    if not cfg.coarse_steps:
        fail("coarse_steps is empty", "coarse_steps")
    for key in ("dimension", "ref_steps", "paths", "quad_order", "covariance_cap", "chunk_paths"):
        if not getattr(cfg, key) > 0:
            fail(f"{key} must be positive", key)
    if not 0 <= cfg.seed < 2 ** 64:
        fail("seed must fit in an unsigned 64-bit integer", "seed")
    if not cfg.t_end > 0:
        fail("t_end must be positive", "t_end")
    for N in cfg.coarse_steps:
        if cfg.ref_steps % N:
            fail(f"ref_steps {cfg.ref_steps} is not divisible by coarse step count {N}", "ref_steps")
    if cfg.ref_steps < 8 * max(cfg.coarse_steps):
        fail("ref_steps must be at least 8 times the largest coarse step count", "ref_steps")
    if cfg.lipschitz is not None and cfg.lipschitz < 0:
        fail("lipschitz must be non-negative", "lipschitz")
    if cfg.noise_scale < 0:
        fail("noise_scale must be non-negative", "noise_scale")


def parse_config(text):
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno) from None
        lines[key] = lineno
    cfg = ExperimentConfig(**values)
    validate(cfg, lines)
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
