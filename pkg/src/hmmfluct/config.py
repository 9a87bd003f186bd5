"""Experiment configuration: sectioned key-value files, validation, hashing."""

import configparser
import hashlib
import re
from dataclasses import asdict, dataclass, fields, replace

import sympy

from .errors import ConfigError
from .functions import ClosedForm
from .hmm_core import QuadratureSpec
from .randfield import LrcFieldSpec, SrcFieldSpec, ZeroFieldSpec

# section -> ordered keys; each key maps to an ExperimentConfig field of the same name
SECTIONS = {
    "mesh": ("N", "ratio"),
    "field": ("kind", "eps", "amplitude", "alpha", "kappa_g", "b", "resolution"),
    "scheme": ("n_q", "min_subdivisions", "cg_tol", "jacobi", "beta"),
    "functions": ("q0", "f", "phi"),
    "ensemble": ("samples", "seed", "threads", "ratios", "eps_list", "n_ref"),
    "output": ("dir", "prefix"),
}
# keys that do not change any computed number
_UNHASHED = {"threads", "dir", "prefix"}


@dataclass(frozen=True)
class ExperimentConfig:
    N: int = 8
    ratio: float = 1.0
    kind: str = "src"
    eps: float = 2.0**-9
    amplitude: float = 1.0
    alpha: float = 1.0
    kappa_g: float = 1.0
    b: float = 1.0
    resolution: float = 0.125
    n_q: int = 4
    min_subdivisions: int = 4
    cg_tol: float = 1e-10
    jacobi: bool = False
    beta: float = None
    q0: str = "1.5 + 0.5*x*y"
    f: str = "sin(pi*x)*sin(pi*y)"
    phi: str = "1"
    samples: int = 1000
    seed: int = 0
    threads: int = 1
    ratios: tuple = (1.0, 0.5)
    eps_list: tuple = ()
    n_ref: int = 128
    dir: str = "results"
    prefix: str = "run"

    @property
    def h(self):
        return 1.0 / self.N

    @property
    def delta(self):
        return self.ratio / self.N

    def field_spec(self):
        if self.kind == "src":
            return SrcFieldSpec(self.amplitude)
        if self.kind == "lrc":
            return LrcFieldSpec(self.alpha, self.kappa_g, self.b, self.resolution)
        return ZeroFieldSpec()

    def effective_beta(self):
        if self.beta is not None:
            return float(self.beta)
        return float(self.alpha) if self.kind == "lrc" else 2.0

    def quadrature(self):
        return QuadratureSpec(self.n_q, self.min_subdivisions)

    def functions(self):
        return ClosedForm(self.q0), ClosedForm(self.f), ClosedForm(self.phi)

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_DEFAULTS = ExperimentConfig()


def _number(text):
    try:
        return float(text)
    except ValueError:
        pass
    try:
        val = sympy.sympify(text)
    except (sympy.SympifyError, SyntaxError, TypeError):
        raise ValueError(f"not a number: {text!r}") from None
    if not val.is_number:
        raise ValueError(f"not a number: {text!r}")
    return float(val)


def _convert(key, text):
    typ = _TYPES[key]
    text = text.strip()
    if key == "beta":
        return None if text.lower() in ("", "auto", "none") else _number(text)
    if key in ("ratios", "eps_list"):
        return tuple(_number(t) for t in text.split(",") if t.strip())
    if typ is bool or typ == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if typ is int or typ == "int":
        val = _number(text)
        if val != int(val):
            raise ValueError(f"not an integer: {text!r}")
        return int(val)
    if typ is float or typ == "float":
        return _number(text)
    return text


def _line_numbers(text):
    """(section, key) -> 1-based line number, for error messages."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            continue
        m = re.match(r"\s*([^=:#;\s]+)\s*[=:]", line)
        if m and section:
            out[(section, m.group(1).strip().lower())] = no
    return out


def parse_config_text(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from None
    lines = _line_numbers(text)
    lower_keys = {k.lower(): k for keys in SECTIONS.values() for k in keys}
    values = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]; accepted sections: {', '.join(SECTIONS)}")
        accepted = {k.lower(): k for k in SECTIONS[sec]}
        for key, raw in parser.items(section):
            where = f"{source}:{lines.get((sec, key), '?')}"
            if key not in accepted:
                raise ConfigError(
                    f"{where}: unknown key {key!r} in [{section}]; accepted keys: {', '.join(SECTIONS[sec])}"
                )
            name = lower_keys[key]
            try:
                values[name] = _convert(name, raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
    cfg = ExperimentConfig(**values)
    validate(cfg)
    return cfg


def parse_config(path):
    """Read and validate an experiment configuration file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def validate(cfg):
    if cfg.N < 2:
        raise ConfigError(f"mesh N must be at least 2, got {cfg.N}")
    if cfg.kind not in ("src", "lrc", "zero"):
        raise ConfigError(f"field kind must be src, lrc or zero, got {cfg.kind!r}")
    ratios = {cfg.ratio, *cfg.ratios}
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ConfigError(f"patch ratio delta/h must lie in (0, 1], got {r}")
    if not cfg.eps > 0:
        raise ConfigError(f"eps must be positive, got {cfg.eps}")
    for eps in {cfg.eps, *cfg.eps_list}:
        for r in ratios:
            delta = r / cfg.N
            if eps > delta / 8 * (1 + 1e-12):
                raise ConfigError(
                    f"eps exceeds delta/8: eps = {eps:g} but delta = {delta:g} (N={cfg.N}, ratio={r:g}) "
                    f"allows at most {delta / 8:g}"
                )
    if cfg.kind == "lrc":
        if not 0.0 < cfg.alpha < 2.0:
            raise ConfigError(f"alpha must lie in (0, 2), got {cfg.alpha}")
        if not 0.0 < cfg.resolution <= 0.25:
            raise ConfigError(f"grid resolution must lie in (0, 1/4], got {cfg.resolution}")
        if cfg.kappa_g <= 0:
            raise ConfigError("kappa_g must be positive")
    if cfg.samples < 1:
        raise ConfigError("samples must be positive")
    if cfg.threads < 1:
        raise ConfigError("threads must be positive")
    if cfg.n_q < 1 or cfg.min_subdivisions < 1:
        raise ConfigError("n_q and min_subdivisions must be positive")
    if not 0 < cfg.cg_tol < 1:
        raise ConfigError(f"cg_tol must lie in (0, 1), got {cfg.cg_tol}")
    if cfg.n_ref < 4 * cfg.N:
        raise ConfigError(f"n_ref must be at least 4*N = {4 * cfg.N}, got {cfg.n_ref}")
    try:
        q0, _, _ = cfg.functions()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    bound = cfg.field_spec().bound
    qmin = q0.min_on_grid()
    if cfg.kind != "zero" and not qmin > bound:
        raise ConfigError(
            f"q0 lower bound {qmin:g} must exceed the field amplitude bound {bound:g} "
            "so that the total potential stays positive"
        )
    return cfg


def _format(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def serialize_config(cfg, include_unhashed=True):
    data = asdict(cfg)
    out = []
    for section, keys in SECTIONS.items():
        body = [f"{k} = {_format(data[k])}" for k in keys if include_unhashed or k not in _UNHASHED]
        if body:
            out.append(f"[{section}]")
            out.extend(body)
            out.append("")
    return "\n".join(out)


def config_hash(cfg):
    """sha256 of the canonical text of every setting that affects results."""
    return hashlib.sha256(serialize_config(cfg, include_unhashed=False).encode("utf-8")).hexdigest()
