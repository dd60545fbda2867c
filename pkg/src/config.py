"""Configuration helpers for the gfx-lab verification runs."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import threading
from dataclasses import asdict, dataclass, field, replace
from typing import Any, List

DEFAULT_CONFIG_FILE = os.environ.get("GFX_LAB_CONFIG_FILE", "gfx_lab.json")
OUTPUT_DIR_ENV = "GFX_LAB_OUTPUT_DIR"

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
_FORMATS = ("json", "csv")


class ConfigError(RuntimeError):
    """Raised when a configuration file or run configuration cannot be used."""


def _ensure_directory(path: str) -> None:
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory, exist_ok=True)


def validate_seed(seed: Any) -> int:
    """Normalises a seed given as int or decimal/hex string to an unsigned 64-bit word."""
    if isinstance(seed, bool):
        raise ValueError("Seed must be an integer, not a boolean.")
    if isinstance(seed, str):
        text = seed.strip().lower()
        if not text:
            raise ValueError("Seed cannot be empty.")
        try:
            seed = int(text, 16) if text.startswith("0x") else int(text)
        except ValueError:
            raise ValueError(f"Seed must be an integer, got {text!r}.") from None
    if not isinstance(seed, int):
        raise ValueError(f"Seed must be an integer, got {seed!r}.")
    if not 0 <= seed < 2**64:
        raise ValueError("Seed must fit in an unsigned 64-bit word.")
    return seed


class LabConfig:
    """Persistent lab defaults: output location, seed, threads and logging."""

    def __init__(self, path: str = DEFAULT_CONFIG_FILE):
        self.path = path
        self.output_dir: str = "results"
        self.seed: int = 20240611
        self.threads: int = 1
        self.log_level: str = "INFO"
        self.log_json: bool = False
        self.log_file: str | None = None
        self._lock = threading.RLock()
        self.last_error: Exception | None = None
        self.warnings: List[str] = []
        self.load_config()

    # ------------------------------------------------------------------
    # Public API
    # ------------------------------------------------------------------
    def load_config(self) -> None:
        """Loads the configuration from disk, falling back to safe defaults."""
        with self._lock:
            self._reset()
            if os.path.exists(self.path):
                self._read_file()
            override = os.environ.get(OUTPUT_DIR_ENV, "").strip()
            if override:
                self.output_dir = override

    def save_config(self) -> None:
        """Persists the current configuration atomically."""
        with self._lock:
            _ensure_directory(self.path)
            fd, temp_path = tempfile.mkstemp(
                dir=os.path.dirname(self.path) or ".", prefix="gfx_lab.", suffix=".tmp"
            )
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as tmp:
                    json.dump(self.as_dict(), tmp, indent=2, sort_keys=True)
                    tmp.flush()
                    os.fsync(tmp.fileno())
                os.replace(temp_path, self.path)
            finally:
                if os.path.exists(temp_path):
                    os.remove(temp_path)

    def as_dict(self) -> dict[str, Any]:
        return {
            "output_dir": self.output_dir,
            "seed": self.seed,
            "threads": self.threads,
            "log_level": self.log_level,
            "log_json": self.log_json,
            "log_file": self.log_file,
        }

    @property
    def log_level_number(self) -> int:
        return getattr(logging, self.log_level)

    # ------------------------------------------------------------------
    # Loading helpers
    # ------------------------------------------------------------------
    def _reset(self) -> None:
        self.output_dir = "results"
        self.seed = 20240611
        self.threads = 1
        self.log_level = "INFO"
        self.log_json = False
        self.log_file = None
        self.last_error = None
        self.warnings = []

    def _read_file(self) -> None:
        try:
            with open(self.path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            self.last_error = ConfigError(f"Invalid JSON in {self.path!r}: {exc.msg}")
            return
        if not isinstance(data, dict):
            self.last_error = ConfigError(f"{self.path!r} must contain a JSON object.")
            return

        for key in sorted(set(data) - set(self.as_dict())):
            self.warnings.append(f"Ignoring unknown key {key!r} in {self.path!r}.")

        output_dir = data.get("output_dir", self.output_dir)
        if isinstance(output_dir, str) and output_dir.strip():
            self.output_dir = output_dir.strip()
        else:
            self.last_error = ConfigError(
                f"Invalid output_dir in {self.path!r}: value must be a non-empty string"
            )

        if "seed" in data:
            try:
                self.seed = validate_seed(data["seed"])
            except ValueError as exc:
                self.last_error = ConfigError(f"Invalid seed in {self.path!r}: {exc}")

        threads = data.get("threads", self.threads)
        if isinstance(threads, int) and not isinstance(threads, bool) and threads >= 1:
            self.threads = threads
        else:
            self.warnings.append(f"threads must be a positive integer; using {self.threads}.")

        level = str(data.get("log_level", self.log_level)).upper()
        if level in _LOG_LEVELS:
            self.log_level = level
        else:
            self.warnings.append(f"Unknown log_level {level!r}; using {self.log_level}.")

        self.log_json = bool(data.get("log_json", self.log_json))
        log_file = data.get("log_file")
        self.log_file = log_file if isinstance(log_file, str) and log_file.strip() else None


# Minimum ensemble sizes below which a sub-command's statistics mean nothing.
MIN_SAMPLES = {
    "verify-martingale": 100,
    "verify-spine": 1000,
    "verify-spine-stable": 10_000,
    "verify-bismut": 1000,
    "verify-many-to-one": 100,
    "verify-hitting": 100,
    "verify-gf": 100,
    "verify-spine-gf": 1000,
    "verify-sum-kappa": 100,
    "kappa": 0,
    "verify-all": 0,
}

DEFAULT_SAMPLES = {
    "verify-martingale": 20_000,
    "verify-spine": 100_000,
    "verify-spine-stable": 100_000,
    "verify-bismut": 100_000,
    "verify-many-to-one": 20_000,
    "verify-hitting": 20_000,
    "verify-gf": 5_000,
    "verify-spine-gf": 50_000,
    "verify-sum-kappa": 50_000,
    "kappa": 0,
    "verify-all": 0,
}


@dataclass(frozen=True)
class RunConfig:
    """Parameters of one sub-command run; ``validate`` is called before any sampling."""

    subcommand: str
    d: int = 3
    alpha: float = 1.2
    x: tuple[float, ...] = (1.0, 0.0)
    levels: tuple[float, ...] = (0.3, 0.6)
    omega: float | None = None
    N: int | None = None
    steps: int = 16_384
    seed: int = 20240611
    size_floor: float = 1e-3
    eps_floor: float = 1e-4
    max_gen: int = 4
    a_max: float = 1.0
    variant: str = "toy"
    lam: float = 1.0
    beta: float = 0.5
    drift: float = 0.25
    bracket: tuple[float, float] = (0.5, 10.0)
    window: tuple[float, float] | None = None
    spec_file: str | None = None
    output: str = "results"
    format: str = "json"
    threads: int = 1
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def samples(self) -> int:
        return DEFAULT_SAMPLES.get(self.subcommand, 0) if self.N is None else self.N

    @property
    def weight_exponent(self) -> float:
        return float(self.d if self.omega is None else self.omega)

    def with_overrides(self, **changes: Any) -> "RunConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["N"] = self.samples
        return payload

    def validate(self) -> "RunConfig":
        """Checks every parameter against the preconditions of the operations to be run."""
        if self.subcommand not in MIN_SAMPLES:
            raise ConfigError(f"Unknown sub-command {self.subcommand!r}.")
        problems: list[str] = []
        minimum = MIN_SAMPLES[self.subcommand]
        if self.samples < minimum:
            problems.append(f"N={self.samples} is below the minimum of {minimum}.")
        if self.d < 3:
            problems.append("d must be at least 3.")
        if len(self.x) != self.d - 1:
            problems.append(f"x must have {self.d - 1} components.")
        elif self.subcommand != "kappa" and math.hypot(*self.x) == 0:
            problems.append("x must be non-zero.")
        if not self.levels or any(not a > 0 for a in self.levels):
            problems.append("levels must be positive.")
        if not 0 < self.alpha < 2:
            problems.append("alpha must lie in (0, 2).")
        if self.omega is not None and not self.omega > 0:
            problems.append("omega must be positive.")
        if self.steps < 2:
            problems.append("steps must be at least 2.")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must fit in an unsigned 64-bit word.")
        if not 0 < self.size_floor < 1:
            problems.append("size_floor must lie in (0, 1).")
        if self.eps_floor < 0:
            problems.append("eps_floor must be non-negative.")
        if self.max_gen < 0:
            problems.append("max_gen must be non-negative.")
        if not self.a_max > 0:
            problems.append("a_max must be positive.")
        if self.variant not in ("toy", "stable"):
            problems.append("variant must be 'toy' or 'stable'.")
        if not self.bracket[0] < self.bracket[1]:
            problems.append("bracket must be increasing.")
        if self.window is not None and not self.window[0] < self.window[1]:
            problems.append("window must be increasing.")
        if not 0 < self.beta < 1 and self.variant == "toy":
            problems.append("beta must lie in (0, 1).")
        if self.lam < 0:
            problems.append("lambda must be non-negative.")
        if self.format not in _FORMATS:
            problems.append(f"format must be one of {_FORMATS}.")
        if self.threads < 1:
            problems.append("threads must be at least 1.")
        if problems:
            raise ConfigError("Invalid run configuration: " + " ".join(problems))
        return self
