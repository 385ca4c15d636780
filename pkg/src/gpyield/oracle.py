"""High-fidelity S-parameter providers and evaluation cost accounting.

Two oracle families are supported:

* `WaveguideOracle` — an analytic transfer-matrix model of a rectangular
  waveguide with a dispersive dielectric inlay.  It can be priced per
  frequency point, which enables the short-circuit strategy.
* `BlackboxOracle` — delegates evaluation to an external solver process
  over a newline-delimited JSON protocol.  One request returns the whole
  frequency sweep, so cost is counted per call.

`EvalCounters` tracks offline/online high-fidelity work and the derived
effective (parallelizable) evaluation counts.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_points

__all__ = [
    "SPEED_OF_LIGHT",
    "FrequencyGrid",
    "SParamSample",
    "WaveguideConfig",
    "WaveguideOracle",
    "BlackboxEndpoint",
    "BlackboxOracle",
    "EvalCounters",
    "BlackboxError",
    "BlackboxProcessError",
    "BlackboxProtocolError",
    "BlackboxTimeoutError",
    "waveguide_eval",
    "waveguide_s11",
    "blackbox_eval",
    "magnitude_db",
]

SPEED_OF_LIGHT = 299_792_458.0  # m/s
VACUUM_PERMEABILITY = 4e-7 * math.pi  # H/m
VACUUM_PERMITTIVITY = 1.0 / (VACUUM_PERMEABILITY * SPEED_OF_LIGHT**2)  # F/m

# Floor applied before taking log magnitudes, so exact zeros stay finite.
DB_FLOOR = 1e-30

# Relaxation frequencies of the inlay's permittivity / permeability models.
_EPS_RELAXATION = 2.0 * math.pi * 5e9  # rad/s
_MU_RELAXATION = 1.1 * 2.0 * math.pi * 20e9  # rad/s


def magnitude_db(values) -> np.ndarray:
    """Magnitude in dB (20 log10 |.|), floored to keep zeros finite."""
    return 20.0 * np.log10(np.maximum(np.abs(values), DB_FLOOR))


class BlackboxError(RuntimeError):
    """Base class for external-solver failures."""


class BlackboxProcessError(BlackboxError):
    """The solver child process failed to start, died, or closed its pipe."""


class BlackboxProtocolError(BlackboxError):
    """The solver produced output that violates the wire protocol."""


class BlackboxTimeoutError(BlackboxError):
    """The solver did not answer within the configured timeout."""


@dataclass(frozen=True)
class FrequencyGrid:
    """Discrete angular-frequency points inside a closed band (rad/s)."""

    points: np.ndarray
    band: tuple[float, float]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).copy()
        if pts.ndim != 1 or pts.size < 1:
            raise ValueError("grid needs at least one frequency point")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("frequency points must be strictly increasing")
        lo, hi = float(self.band[0]), float(self.band[1])
        if not lo <= pts[0] or not pts[-1] <= hi:
            raise ValueError("frequency points must lie inside the band")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "band", (lo, hi))

    @classmethod
    def equidistant(cls, band: tuple[float, float], n_points: int) -> "FrequencyGrid":
        lo, hi = float(band[0]), float(band[1])
        if n_points < 1:
            raise ValueError("n_points must be at least 1")
        if n_points == 1:
            pts = np.array([0.5 * (lo + hi)])
        else:
            pts = np.linspace(lo, hi, n_points)
        return cls(points=pts, band=(lo, hi))

    def __len__(self) -> int:
        return self.points.size


@dataclass(frozen=True)
class SParamSample:
    """Complex S-parameter values aligned with a frequency grid."""

    values: np.ndarray
    grid: FrequencyGrid

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex).copy()
        if vals.shape != (len(self.grid),):
            raise ValueError(
                f"expected {len(self.grid)} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("S-parameter values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def magnitude_db(self) -> np.ndarray:
        return magnitude_db(self.values)


@dataclass(frozen=True)
class WaveguideConfig:
    """Geometry of the rectangular waveguide with dielectric inlay.

    The four uncertain parameters of an evaluation point are the inlay
    length p1 (mm), the vacuum offset p2 (mm) in front of it, and the two
    dimensionless material parameters p3, p4 entering the dispersive
    permittivity / permeability of the inlay.
    """

    width_mm: float = 30.0
    length_mm: float = 30.0

    def __post_init__(self):
        if self.width_mm <= 0:
            raise ValueError(f"width_mm must be positive, got {self.width_mm}")
        if self.length_mm <= 0:
            raise ValueError(f"length_mm must be positive, got {self.length_mm}")

    @property
    def cutoff_rad_s(self) -> float:
        """TE10 cutoff angular frequency of the air-filled cross-section."""
        return math.pi * SPEED_OF_LIGHT / (self.width_mm * 1e-3)


def relative_permittivity(omega, p3):
    """Dispersive relative permittivity of the inlay material."""
    return 1.0 + p3 + (1.0 - p3) / (1.0 + 1j * omega / _EPS_RELAXATION)


def relative_permeability(omega, p4):
    """Dispersive relative permeability of the inlay material."""
    return 1.0 + p4 + (2.0 - p4) / (1.0 + 1j * omega / _MU_RELAXATION)


def waveguide_s11(config: WaveguideConfig, P, omegas) -> np.ndarray:
    """TE10 reflection coefficient of the three-section guide.

    Cascades 2x2 transmission-line (ABCD) matrices for the vacuum offset,
    the dielectric inlay, and the trailing vacuum section, with the
    modal wave impedance Z = omega * mu / beta and the propagation
    constant beta = sqrt(omega^2 * eps * mu - (pi / a)^2).

    Parameters
    ----------
    P : array-like, shape (n, 4) or (4,)
        Points (p1, p2, p3, p4); lengths in mm.
    omegas : array-like, shape (m,)
        Angular frequencies in rad/s.

    Returns
    -------
    ndarray, shape (n, m), complex
    """
    P = as_points(P, 4, "P")
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    a = config.width_mm * 1e-3
    total = config.length_mm * 1e-3
    p1 = P[:, 0, np.newaxis] * 1e-3
    p2 = P[:, 1, np.newaxis] * 1e-3
    p3 = P[:, 2, np.newaxis]
    p4 = P[:, 3, np.newaxis]
    if np.any(p1 < 0) or np.any(p2 < 0) or np.any(p1 + p2 > total + 1e-15):
        raise ValueError(
            "non-physical geometry: inlay length and offset must be nonnegative "
            "and fit inside the guide"
        )
    kc_sq = (math.pi / a) ** 2
    w = omegas[np.newaxis, :]
    beta0_sq = (w / SPEED_OF_LIGHT) ** 2 - kc_sq
    if np.any(beta0_sq <= 0):
        raise ValueError(
            "TE10 mode is evanescent at some grid frequency; all frequencies must "
            f"exceed the cutoff {math.sqrt(kc_sq) * SPEED_OF_LIGHT:.4e} rad/s"
        )
    beta0 = np.sqrt(beta0_sq)
    z0 = w * VACUUM_PERMEABILITY / beta0
    eps = relative_permittivity(w, p3) * VACUUM_PERMITTIVITY
    mu = relative_permeability(w, p4) * VACUUM_PERMEABILITY
    beta_d = np.sqrt(w**2 * eps * mu - kc_sq + 0j)
    z_d = w * mu / beta_d

    # Entrywise ABCD cascade: vacuum(p2) * dielectric(p1) * vacuum(rest).
    A = np.ones(np.broadcast_shapes(p1.shape, w.shape), dtype=complex)
    B = np.zeros_like(A)
    C = np.zeros_like(A)
    D = np.ones_like(A)
    sections = (
        (beta0 + 0j, z0 + 0j, p2),
        (beta_d, z_d, p1),
        (beta0 + 0j, z0 + 0j, total - p1 - p2),
    )
    for beta, z, length in sections:
        bl = beta * length
        cos_bl = np.cos(bl)
        jsin_bl = 1j * np.sin(bl)
        a11, a12 = cos_bl, z * jsin_bl
        a21, a22 = jsin_bl / z, cos_bl
        A, B, C, D = (
            A * a11 + B * a21,
            A * a12 + B * a22,
            C * a11 + D * a21,
            C * a12 + D * a22,
        )
    denom = A * z0 + B + C * z0**2 + D * z0
    return (A * z0 + B - C * z0**2 - D * z0) / denom


def waveguide_eval(config: WaveguideConfig, p, grid: FrequencyGrid) -> SParamSample:
    """Full-sweep evaluation of a single point on the waveguide model."""
    values = waveguide_s11(config, p, grid.points)[0]
    return SParamSample(values=values, grid=grid)


def blackbox_eval(endpoint: "BlackboxEndpoint", p, grid: FrequencyGrid) -> SParamSample:
    """One-shot full-sweep evaluation through an external solver process."""
    with BlackboxOracle(endpoint) as oracle:
        values = oracle.evaluate(p, grid.points)[0]
    return SParamSample(values=values, grid=grid)


class WaveguideOracle:
    """In-process analytic oracle; deterministic and safe to call concurrently.

    Cost is priced per frequency point so that the short-circuit strategy
    saves real work.
    """

    cost_convention = "per-frequency"

    def __init__(self, config: WaveguideConfig | None = None):
        self.config = config or WaveguideConfig()

    def evaluate(self, P, omegas) -> np.ndarray:
        return waveguide_s11(self.config, P, omegas)


@dataclass(frozen=True)
class BlackboxEndpoint:
    """How to reach an external solver: command line, cwd, and patience."""

    command: tuple[str, ...]
    workdir: str | None = None
    timeout_s: float = 60.0

    def __post_init__(self):
        cmd = tuple(str(c) for c in (
            (self.command,) if isinstance(self.command, str) else self.command
        ))
        if not cmd:
            raise ValueError("endpoint command must not be empty")
        if self.timeout_s <= 0:
            raise ValueError(f"timeout_s must be positive, got {self.timeout_s}")
        object.__setattr__(self, "command", cmd)


class BlackboxOracle:
    """S-parameter oracle backed by a child process speaking NDJSON.

    Wire protocol (one line per message on stdin/stdout):

        request:  {"id": <int>, "params": [<float>...], "freq_rad_s": [<float>...]}
        response: {"id": <int>, "s_real": [<float>...], "s_imag": [<float>...]}

    Every request returns the whole frequency sweep, so cost is counted
    per call.  Any stdout content that is not a well-formed response is a
    protocol error; process death and timeouts surface as distinct errors
    and abort the run — values are never imputed.
    """

    cost_convention = "per-call"

    def __init__(self, endpoint: BlackboxEndpoint):
        self.endpoint = endpoint
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue | None = None
        self._next_id = 0
        self._lock = threading.Lock()

    # -- process management --------------------------------------------------

    def _ensure_started(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        try:
            self._proc = subprocess.Popen(
                list(self.endpoint.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=self.endpoint.workdir,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BlackboxProcessError(
                f"failed to start solver process {self.endpoint.command}: {exc}"
            ) from exc
        self._lines = queue.Queue()

        def pump(proc, sink):
            for line in proc.stdout:
                sink.put(line)
            sink.put(None)  # EOF marker

        threading.Thread(
            target=pump, args=(self._proc, self._lines), daemon=True
        ).start()

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.poll() is None:
                self._proc.terminate()
                try:
                    self._proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
                    self._proc.wait()
            else:
                self._proc.wait()
            self._proc = None
            self._lines = None

    def __enter__(self) -> "BlackboxOracle":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _stderr_tail(self) -> str:
        # Only safe to drain stderr once the child has exited.
        if self._proc is None or self._proc.stderr is None or self._proc.poll() is None:
            return ""
        try:
            tail = self._proc.stderr.read() or ""
        except (OSError, ValueError):
            return ""
        return tail.strip()[-500:]

    # -- evaluation ------------------------------------------------------------

    def evaluate(self, P, omegas) -> np.ndarray:
        P = as_points(P, None, "P")
        omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
        out = np.empty((P.shape[0], omegas.size), dtype=complex)
        with self._lock:
            for i, p in enumerate(P):
                out[i] = self._request(p, omegas)
        return out

    def _request(self, p: np.ndarray, omegas: np.ndarray) -> np.ndarray:
        self._ensure_started()
        req_id = self._next_id
        self._next_id += 1
        line = json.dumps(
            {"id": req_id, "params": p.tolist(), "freq_rad_s": omegas.tolist()}
        )
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BlackboxProcessError(
                f"solver process closed its input pipe: {self._stderr_tail()}"
            ) from exc
        try:
            raw = self._lines.get(timeout=self.endpoint.timeout_s)
        except queue.Empty:
            raise BlackboxTimeoutError(
                f"no response within {self.endpoint.timeout_s} s"
            ) from None
        if raw is None:
            code = self._proc.poll()
            raise BlackboxProcessError(
                f"solver process exited (code {code}) before responding: "
                f"{self._stderr_tail()}"
            )
        return self._parse_response(raw, req_id, omegas.size)

    def _parse_response(self, raw: str, req_id: int, n_freq: int) -> np.ndarray:
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise BlackboxProtocolError(
                f"solver wrote a non-JSON line to stdout: {raw!r}"
            ) from exc
        if not isinstance(payload, dict) or payload.get("id") != req_id:
            raise BlackboxProtocolError(
                f"response id mismatch: expected {req_id}, got {payload!r}"
            )
        s_real = payload.get("s_real")
        s_imag = payload.get("s_imag")
        if (
            not isinstance(s_real, list)
            or not isinstance(s_imag, list)
            or len(s_real) != n_freq
            or len(s_imag) != n_freq
        ):
            raise BlackboxProtocolError(
                f"response arrays must both have {n_freq} entries, got {payload!r}"
            )
        values = np.asarray(s_real, dtype=float) + 1j * np.asarray(s_imag, dtype=float)
        if not np.all(np.isfinite(values)):
            raise BlackboxProtocolError("response contains non-finite values")
        return values


@dataclass
class EvalCounters:
    """High-fidelity evaluation counts, split by estimation phase.

    Units are frequency-point evaluations for per-frequency oracles and
    solver calls for per-call oracles.  Effective counts (the
    non-parallelizable cost under a batch of size ``batch_size``) are
    recomputed on access, never stored.
    """

    batch_size: int = 1
    hf_offline: int = 0
    hf_online: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add_offline(self, k: int = 1) -> None:
        with self._lock:
            self.hf_offline += k

    def add_online(self, k: int = 1) -> None:
        with self._lock:
            self.hf_online += k

    @property
    def hf_total(self) -> int:
        return self.hf_offline + self.hf_online

    @property
    def effective_offline(self) -> int:
        return math.ceil(self.hf_offline / self.batch_size)

    @property
    def effective_online(self) -> int:
        return math.ceil(self.hf_online / self.batch_size)

    @property
    def effective_total(self) -> int:
        return math.ceil(self.hf_total / self.batch_size)

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "hf_offline": self.hf_offline,
            "hf_online": self.hf_online,
            "hf_total": self.hf_total,
            "effective_offline": self.effective_offline,
            "effective_online": self.effective_online,
            "effective_total": self.effective_total,
        }
