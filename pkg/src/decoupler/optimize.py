"""ADAM, the phase training loop and per-iteration traces."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

CSV_HEADER = ("iteration", "phase", "objective", "fidelity", "hst_cost", "wall_time_ms")


class TrainingError(RuntimeError):
    """An objective or gradient evaluation failed during training."""


@dataclass(frozen=True)
class AdamConfig:
    alpha: float = 0.01
    beta1: float = 0.8
    beta2: float = 0.9
    epsilon: float = 1e-8
    max_iters: int = 3000
    cost_threshold: float = 1e-4
    patience: int = 200
    min_delta: float = 1e-6

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1 or self.patience < 1:
            raise ValueError("max_iters and patience must be at least 1")

    def updated(self, **overrides) -> "AdamConfig":
        return replace(self, **overrides)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(state: AdamState, params, grad, cfg: AdamConfig) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected ADAM update; returns new arrays and leaves the inputs untouched."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or state.first_moment.shape != params.shape:
        raise ValueError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, state {state.first_moment.shape}"
        )
    t = state.step_count + 1
    m = cfg.beta1 * state.first_moment + (1 - cfg.beta1) * grad
    v = cfg.beta2 * state.second_moment + (1 - cfg.beta2) * grad**2
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    new = params - cfg.alpha * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return new, AdamState(m, v, t)


class TraceRow(NamedTuple):
    iteration: int
    phase: str
    objective: float
    fidelity: float
    hst_cost: float
    wall_time_ms: float


@dataclass
class TrainingTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    @property
    def next_iteration(self) -> int:
        return self.rows[-1].iteration + 1 if self.rows else 0

    def append(self, phase, objective, fidelity, hst_cost, wall_time_ms) -> TraceRow:
        row = TraceRow(self.next_iteration, str(phase), float(objective), float(fidelity), float(hst_cost), float(wall_time_ms))
        self.rows.append(row)
        return row

    def phase_rows(self, phase: str) -> list[TraceRow]:
        return [r for r in self.rows if r.phase == phase]

    def phases(self) -> list[str]:
        seen = []
        for r in self.rows:
            if not seen or seen[-1] != r.phase:
                seen.append(r.phase)
        return seen

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            # repr keeps every bit so seeded reruns compare byte for byte
            writer.writerow([r.iteration, r.phase, repr(r.objective), repr(r.fidelity), repr(r.hst_cost), f"{r.wall_time_ms:.3f}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "TrainingTrace":
        return cls.parse_csv(Path(path).read_text())

    @classmethod
    def parse_csv(cls, text: str) -> "TrainingTrace":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected trace header {header!r}")
        rows = []
        for rec in reader:
            if rec:
                rows.append(TraceRow(int(rec[0]), rec[1], float(rec[2]), float(rec[3]), float(rec[4]), float(rec[5])))
        return cls(rows)


def train_phase(
    value_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    params,
    cfg: AdamConfig,
    trace: TrainingTrace,
    phase: str = "train",
    trainable=None,
    diagnostic: Callable[[np.ndarray], tuple[float, float]] | None = None,
) -> tuple[np.ndarray, str]:
    """Run ADAM on the ``trainable`` entries until a stopping rule fires.

    Each iteration evaluates the objective and records a trace row before
    deciding whether to stop, so the row count equals the iterations run.
    Returns the final parameters and one of ``threshold``, ``patience`` or
    ``max_iters``.
    """
    params = np.array(params, dtype=float).reshape(-1)
    idx = np.arange(params.size) if trainable is None else np.asarray(sorted(trainable), dtype=int)
    state = AdamState.zeros(idx.size)
    best = np.inf
    stale = 0
    start = time.perf_counter()
    for it in range(cfg.max_iters):
        try:
            value = float(value_fn(params))
        except Exception as exc:
            raise TrainingError(f"phase {phase!r}, iteration {it}: objective failed: {exc}") from exc
        if not np.isfinite(value):
            raise TrainingError(f"phase {phase!r}, iteration {it}: non-finite objective {value!r}")
        fid, hst = diagnostic(params) if diagnostic is not None else (np.nan, np.nan)
        trace.append(phase, value, fid, hst, (time.perf_counter() - start) * 1e3)
        if value < cfg.cost_threshold:
            return params, "threshold"
        if value < best - cfg.min_delta:
            best, stale = value, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                return params, "patience"
        if it == cfg.max_iters - 1:
            break
        try:
            grad = np.asarray(grad_fn(params), dtype=float)
        except Exception as exc:
            raise TrainingError(f"phase {phase!r}, iteration {it}: gradient failed: {exc}") from exc
        if not np.all(np.isfinite(grad[idx])):
            raise TrainingError(f"phase {phase!r}, iteration {it}: non-finite gradient")
        params = params.copy()
        params[idx], state = adam_step(state, params[idx], grad[idx], cfg)
    return params, "max_iters"
