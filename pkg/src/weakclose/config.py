"""JSON run configuration: schema validation and defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .fields import SpaceTimeGrid
from .flux import FluxModel, Window, flux_from_dict

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "load_schema", "parse_config"]


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "window": {"p": [-6.0, 6.0], "n_p": 257, "beta": [-6.0, 6.0], "n_beta": 257, "zero_tol": None},
    "grid": {"L": 1.0, "T": 1.0, "n_x": 64, "n_t": 64},
    "seed": 0,
    "out": "out",
    "sets": {"points": []},
    "anchor": {"kind": "affine", "p": 0.0, "beta": 1.0},
    "minimize": {"max_iter": 2000, "tol_I": 0.0, "init_noise": 0.1, "residual_every": 0},
    "experiment": {
        "p": 0.0, "beta": 1.0, "js": [4, 8, 16, 32], "claimed_sigma": None,
        "periods_per_block": 4, "threshold": 0.95, "laminate_j": 8, "divcurl_tol": 1e-2,
    },
    "residual": {"cg_tol": 1e-10, "field": "anchor", "j": 8, "max_residual": None},
}


def load_schema() -> dict:
    return json.loads(resources.files("weakclose").joinpath("config_schema.json").read_text())


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class RunConfig:
    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key):
        return self.data[key]

    def flux(self) -> FluxModel:
        return flux_from_dict(self.data["flux"], self.base_dir)

    def window_p(self) -> Window:
        w = self.data["window"]
        lo, hi = w["p"]
        pad = w.get("pad_p", 0.25 * (hi - lo))
        return Window(lo, hi, w["n_p"], pad)

    def window_beta(self) -> Window:
        w = self.data["window"]
        lo, hi = w["beta"]
        pad = w.get("pad_beta", 0.25 * (hi - lo))
        return Window(lo, hi, w["n_beta"], pad)

    def grid(self) -> SpaceTimeGrid:
        g = self.data["grid"]
        return SpaceTimeGrid(g["L"], g["T"], g["n_x"], g["n_t"])

    def with_overrides(self, **kw) -> "RunConfig":
        """Apply CLI overrides (``seed``, ``cg_tol``, ``grid``, ``out``)."""
        d = copy.deepcopy(self.data)
        if kw.get("seed") is not None:
            d["seed"] = int(kw["seed"])
        if kw.get("cg_tol") is not None:
            d["residual"]["cg_tol"] = float(kw["cg_tol"])
        if kw.get("grid") is not None:
            d["grid"]["n_x"], d["grid"]["n_t"] = (int(v) for v in kw["grid"])
        if kw.get("out") is not None:
            d["out"] = str(kw["out"])
        _validate(d)
        return RunConfig(d, self.base_dir)


def _validate(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    err = errors[0]
    pointer = "/" + "/".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        # name the offending key rather than its parent
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        if extra:
            pointer = pointer.rstrip("/") + "/" + extra[0]
    raise ConfigError(f"config error at {pointer}: {err.message}")


def parse_config(source) -> RunConfig:
    """Parse a config from a path, a JSON string or a dict; fill defaults."""
    base_dir = Path.cwd()
    if isinstance(source, dict):
        raw = source
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON: {exc}") from exc
        else:
            path = Path(text)
            try:
                content = path.read_text()
            except OSError as exc:
                raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
            try:
                raw = json.loads(content)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
            base_dir = path.resolve().parent
    if not isinstance(raw, dict):
        raise ConfigError("config error at /: top level must be an object")
    _validate(raw)
    data = _merge(DEFAULTS, raw)
    _validate(data)
    return RunConfig(data, base_dir)
