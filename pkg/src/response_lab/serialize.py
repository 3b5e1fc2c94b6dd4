"""Run configuration, atomic file output, CSV/JSON writers and SVG plots."""

from __future__ import annotations

import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .maps import get_family
from .response import DEFAULT_EPS_LIST

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FLOAT_FMT = "%.17g"

# config key -> RunConfig attribute
CONFIG_KEYS = {
    "family": "family",
    "epsilon": "epsilon",
    "grid.n": "grid_n",
    "grid.refine_near_ae": "refine_near_ae",
    "tol.fixed_point": "tol_fixed_point",
    "tol.resolvent": "tol_resolvent",
    "eps_list": "eps_list",
    "seed": "seed",
    "output_dir": "output_dir",
}
MIN_GRID_N = 128


@dataclass
class RunConfig:
    """Settings shared by every command.

    ``epsilon`` is a single value or a list; commands that need one value use
    the first entry.
    """

    family: str = "cusp-tent-example"
    epsilon: float | list = 0.0
    grid_n: int = 2048
    refine_near_ae: bool = False
    tol_fixed_point: float = 1e-10
    tol_resolvent: float = 1e-12
    eps_list: list = field(default_factory=lambda: list(DEFAULT_EPS_LIST))
    seed: int = 0
    output_dir: str = "out"

    @property
    def epsilons(self) -> list[float]:
        return list(self.epsilon) if isinstance(self.epsilon, (list, tuple)) else [self.epsilon]

    def to_dict(self) -> dict:
        """Flat echo keyed by the config-file names."""
        return {key: _plain(getattr(self, attr)) for key, attr in CONFIG_KEYS.items()}

    def validate(self) -> "RunConfig":
        try:
            fam = get_family(self.family)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        if not isinstance(self.grid_n, int) or isinstance(self.grid_n, bool):
            raise ConfigError(f"grid.n must be an integer, got {self.grid_n!r}")
        if self.grid_n < MIN_GRID_N:
            raise ConfigError(f"grid.n must be >= {MIN_GRID_N}, got {self.grid_n}")
        for name in ("tol_fixed_point", "tol_resolvent"):
            val = getattr(self, name)
            if not isinstance(val, (int, float)) or not val > 0 or not math.isfinite(val):
                raise ConfigError(f"{name.replace('_', '.', 1)} must be a positive number, got {val!r}")
        if self.tol_fixed_point < 1e-12:
            raise ConfigError(f"tol.fixed_point must be >= 1e-12, got {self.tol_fixed_point}")
        if not self.epsilons:
            raise ConfigError("epsilon must not be empty")
        for label, values in (("epsilon", self.epsilons), ("eps_list", self.eps_list)):
            for e in values:
                if not isinstance(e, (int, float)) or isinstance(e, bool):
                    raise ConfigError(f"{label} entries must be numbers, got {e!r}")
                try:
                    fam.check_eps(float(e))
                except DomainError as exc:
                    raise ConfigError(f"{label}: {exc}") from None
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        return self


def _plain(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def _flatten(table: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in table.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a validated :class:`RunConfig` from a TOML file plus overrides.

    Overrides use the same dotted keys as the file and take precedence.
    ``None`` override values are ignored.
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                values = _flatten(tomllib.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {CONFIG_KEYS[k]: v for k, v in values.items()}
    for attr in ("epsilon", "eps_list"):
        if isinstance(kwargs.get(attr), tuple):
            kwargs[attr] = list(kwargs[attr])
    if "eps_list" in kwargs and not isinstance(kwargs["eps_list"], list):
        raise ConfigError("eps_list must be a list of numbers")
    return RunConfig(**kwargs).validate()


# -- atomic writers ------------------------------------------------------------


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> Path:
    """Write ``data`` to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def format_number(v) -> str:
    if v is None:
        return ""
    return FLOAT_FMT % float(v)


def write_csv(path, header: list[str], columns: list) -> Path:
    """CSV with a header row and numbers printed to 17 significant digits.

    ``None`` entries become empty fields.
    """
    rows = zip(*columns)
    lines = [",".join(header)]
    lines += [",".join(format_number(v) for v in row) for row in rows]
    return atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a file written by :func:`write_csv`; empty fields load as NaN."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(t) if t else math.nan for t in line.strip().split(",")] for line in fh if line.strip()]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def write_density_csv(path, density) -> Path:
    return write_csv(path, ["node", "value"], [density.nodes, density.values])


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _finite(obj):
    # JSON has no inf/nan; emit them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path, payload: dict) -> Path:
    text = json.dumps(_finite(payload), indent=2, sort_keys=False, default=_json_default)
    return atomic_write_bytes(path, (text + "\n").encode("utf-8"))


# -- plots -----------------------------------------------------------------------


def plot_deltas_svg(path, eps_list, deltas, title: str = "") -> Path:
    """Static log-log plot of delta against epsilon."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "response-lab", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(5, 3.6))
        ax.loglog(eps_list, deltas, "o-", label=r"$\delta(\varepsilon)$")
        if len(eps_list) > 1:
            ref = np.asarray(eps_list) * deltas[0] / eps_list[0]
            ax.loglog(eps_list, ref, "k--", lw=0.8, label=r"slope 1")
        ax.set_xlabel(r"$\varepsilon$")
        ax.set_ylabel(r"$\delta$ (L1)")
        if title:
            ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp")
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        plt.close(fig)
        os.replace(tmp, path)
    return path
