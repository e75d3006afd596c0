"""Line-based ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. ``kernel.offset`` may repeat;
every other key may appear once. Unknown keys are rejected with the
offending key and line number in the message.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import BrwModel, OffspringLaw, WalkKernel, build_simple_kernel, require_admissible
from .vaccination import VaccinationParams, vaccinated_model

_LAW_KEY = re.compile(r"law\.b(\d+)$")

# key -> (parser, default)
_RUN_KEYS = {
    "box.half_width": ("int", 20),
    "time.t_max": ("float", 2.0),
    "time.steps": ("int", 100),
    "mc.replicas": ("int", 1000),
    "mc.seed": ("int", 0),
    "mc.cap": ("int", 10**6),
    "mc.initial": ("choice:single,window", "single"),
    "mc.start": ("point", None),
    "mc.window": ("int", None),
    "mc.max_order": ("int", 2),
    "moments.max_order": ("int", 2),
    "moments.flavor": ("choice:total,local", "total"),
    "moments.target": ("point", None),
    "moments.z": ("floats", (math.inf,)),
    "analyze.schedule": ("ints", (10, 20, 40)),
    "analyze.betas": ("floats", None),
    "analyze.fit_window": ("floats", (10.0, 30.0)),
    "output.sites": ("points", None),
}
_MODEL_KEYS = {"dimension", "kernel.total_rate", "kernel.offset", "vaccination.alpha"}


def _parse_point(text: str, key: str, lineno: int) -> tuple[int, ...]:
    try:
        return tuple(int(c) for c in text.split(","))
    except ValueError:
        raise ConfigError(f"{key} (line {lineno}): expected comma-separated integers, got {text!r}") from None


def _convert(kind: str, text: str, key: str, lineno: int):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "ints":
            return tuple(int(v) for v in text.split(","))
        if kind == "floats":
            return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{key} (line {lineno}): cannot parse {text!r} as {kind}") from None
    if kind == "point":
        return _parse_point(text, key, lineno)
    if kind == "points":
        return tuple(_parse_point(p.strip(), key, lineno) for p in text.split(";") if p.strip())
    choices = kind.split(":", 1)[1].split(",")
    if text not in choices:
        raise ConfigError(f"{key} (line {lineno}): expected one of {choices}, got {text!r}")
    return text


@dataclass(frozen=True)
class RunConfig:
    """Model plus run parameters; ``model`` already carries any vaccination."""

    base_model: BrwModel
    alpha: float | None
    half_width: int
    t_max: float
    steps: int
    replicas: int
    seed: int
    cap: int
    initial: str
    start: tuple[int, ...]
    window: int
    mc_max_order: int
    max_order: int
    flavor: str
    target: tuple[int, ...]
    z_values: tuple[float, ...]
    schedule: tuple[int, ...]
    betas: tuple[float, ...] | None
    fit_window: tuple[float, float]
    sites: tuple[tuple[int, ...], ...]
    source: str = field(default="<string>", compare=False)

    @property
    def dimension(self) -> int:
        return self.base_model.dimension

    @property
    def model(self) -> BrwModel:
        if self.alpha is None:
            return self.base_model
        return vaccinated_model(self.base_model, VaccinationParams(self.alpha))


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    raw: dict[str, tuple[str, int]] = {}
    offsets: list[tuple[str, int]] = []
    law: dict[int, float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not value:
            raise ConfigError(f"{key} (line {lineno}): missing value")
        m = _LAW_KEY.match(key)
        if m:
            n = int(m.group(1))
            if n == 1:
                raise ConfigError(f"{key} (line {lineno}): b1 is derived from the other rates")
            if n in law:
                raise ConfigError(f"{key} (line {lineno}): duplicate key")
            law[n] = _convert("float", value, key, lineno)
            continue
        if key == "kernel.offset":
            offsets.append((value, lineno))
            continue
        if key not in _MODEL_KEYS and key not in _RUN_KEYS:
            raise ConfigError(f"unknown key {key!r} (line {lineno})")
        if key in raw:
            raise ConfigError(f"{key} (line {lineno}): duplicate key")
        raw[key] = (value, lineno)

    if "dimension" not in raw:
        raise ConfigError("missing required key 'dimension'")
    d = _convert("int", *raw["dimension"][:1], "dimension", raw["dimension"][1])
    if d < 1:
        raise ConfigError("dimension: must be a positive integer")

    if "kernel.total_rate" in raw and offsets:
        raise ConfigError("kernel.total_rate and kernel.offset are mutually exclusive")
    if "kernel.total_rate" in raw:
        value, lineno = raw["kernel.total_rate"]
        rate = _convert("float", value, "kernel.total_rate", lineno)
        if not rate > 0:
            raise ConfigError(f"kernel.total_rate (line {lineno}): must be positive")
        kernel = build_simple_kernel(d, rate)
    elif offsets:
        intensities = {}
        for value, lineno in offsets:
            if ":" not in value:
                raise ConfigError(f"kernel.offset (line {lineno}): expected 'z1,...,zd : rate'")
            z_text, r_text = value.split(":", 1)
            z = _parse_point(z_text.strip(), "kernel.offset", lineno)
            if len(z) != d:
                raise ConfigError(f"kernel.offset (line {lineno}): offset {z} is not {d}-dimensional")
            if z in intensities:
                raise ConfigError(f"kernel.offset (line {lineno}): duplicate offset {z}")
            intensities[z] = _convert("float", r_text.strip(), "kernel.offset", lineno)
        kernel = WalkKernel(d, intensities)
    else:
        raise ConfigError("missing kernel: give kernel.total_rate or kernel.offset lines")

    model = BrwModel(kernel, OffspringLaw.from_rates(law))
    require_admissible(model)

    alpha = None
    if "vaccination.alpha" in raw:
        value, lineno = raw["vaccination.alpha"]
        alpha = VaccinationParams(_convert("float", value, "vaccination.alpha", lineno)).alpha

    run = {}
    for key, (kind, default) in _RUN_KEYS.items():
        if key in raw:
            value, lineno = raw[key]
            run[key] = _convert(kind, value, key, lineno)
        else:
            run[key] = default

    origin = (0,) * d
    L = run["box.half_width"]
    if L < kernel.radius:
        raise ConfigError(f"box.half_width: {L} is smaller than the kernel radius {kernel.radius}")
    if run["time.t_max"] < 0 or not math.isfinite(run["time.t_max"]):
        raise ConfigError("time.t_max: must be finite and nonnegative")
    if run["time.steps"] < 2:
        raise ConfigError("time.steps: must be at least 2")
    if run["mc.replicas"] < 1:
        raise ConfigError("mc.replicas: must be positive")
    if run["mc.cap"] < 1:
        raise ConfigError("mc.cap: must be positive")
    window = run["mc.window"] if run["mc.window"] is not None else 2 * L
    if run["mc.initial"] == "window" and window < L:
        raise ConfigError(f"mc.window: {window} is smaller than box.half_width {L}")
    if not 1 <= run["mc.max_order"] <= 4:
        raise ConfigError("mc.max_order: must lie in 1..4")
    if run["moments.max_order"] < 1:
        raise ConfigError("moments.max_order: must be positive")
    if len(run["analyze.fit_window"]) != 2 or not run["analyze.fit_window"][0] < run["analyze.fit_window"][1]:
        raise ConfigError("analyze.fit_window: expected 't1, t2' with t1 < t2")
    if any(z < 0 for z in run["moments.z"]):
        raise ConfigError("moments.z: values must be nonnegative")
    if not run["analyze.schedule"] or min(run["analyze.schedule"]) < kernel.radius:
        raise ConfigError("analyze.schedule: half-widths must be at least the kernel radius")

    def point(key, default):
        p = run[key] if run[key] is not None else default
        if len(p) != d:
            raise ConfigError(f"{key}: point {p} is not {d}-dimensional")
        return p

    start = point("mc.start", origin)
    target = point("moments.target", origin)
    sites = run["output.sites"] if run["output.sites"] else (origin,)
    for s in sites:
        if len(s) != d:
            raise ConfigError(f"output.sites: point {s} is not {d}-dimensional")
        if max(abs(c) for c in s) > L:
            raise ConfigError(f"output.sites: point {s} lies outside the box of half-width {L}")
    if max(abs(c) for c in target) > L:
        raise ConfigError(f"moments.target: point {target} lies outside the box")

    return RunConfig(
        base_model=model,
        alpha=alpha,
        half_width=L,
        t_max=float(run["time.t_max"]),
        steps=run["time.steps"],
        replicas=run["mc.replicas"],
        seed=run["mc.seed"],
        cap=run["mc.cap"],
        initial=run["mc.initial"],
        start=start,
        window=window,
        mc_max_order=run["mc.max_order"],
        max_order=run["moments.max_order"],
        flavor=run["moments.flavor"],
        target=target,
        z_values=run["moments.z"],
        schedule=tuple(sorted(run["analyze.schedule"])),
        betas=run["analyze.betas"],
        fit_window=tuple(run["analyze.fit_window"]),
        sites=tuple(sites),
        source=source,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
