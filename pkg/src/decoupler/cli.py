"""Command-line experiment runner: compile, cost-eval, grad-check and plot."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import circuit as qc
from . import cost, decouple, grad
from .circuit import DoubledBinding
from .cost import Partition
from .optimize import AdamConfig, TrainingError, TrainingTrace
from .statekit import haar_random_unitary

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

EXPERIMENTS = ("two_qubit_haar", "four_qubit_haar", "four_qubit_spindle", "custom")
METHODS = ("decoupling", "direct_hst", "direct_lhst")
ADAM_KEYS = ("alpha", "beta1", "beta2", "epsilon", "max_iters", "cost_threshold", "patience", "min_delta")
PLAN_KEYS = ("layers_outer", "layers_inner", "final_objective", "joint_final", "max_iters", "cost_threshold")
CONFIG_KEYS = (
    "experiment",
    "seeds",
    "method",
    "evaluator",
    "adam",
    "plan",
    "output_dir",
    "target_seed",
    "shared_target",
    "target_circuit",
    "workers",
)


class ConfigError(ValueError):
    pass


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return lineno
    return None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seeds: tuple[int, ...]
    method: str = "decoupling"
    shots: int | None = None
    adam: dict = field(default_factory=dict)
    plan: dict = field(default_factory=dict)
    output_dir: str = "out"
    target_seed: int = 2024
    shared_target: bool | None = None
    target_circuit: str | None = None
    workers: int | None = None

    @classmethod
    def parse(cls, text: str, base_dir: Path | str | None = None) -> "ExperimentConfig":
        base_dir = None if base_dir is None else Path(base_dir)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("line 1: config must be a JSON object")

        def fail(key, msg):
            line = _line_of(text, key)
            where = f"line {line}: " if line else ""
            raise ConfigError(f"{where}{key}: {msg}")

        for key in doc:
            if key not in CONFIG_KEYS:
                fail(key, "unknown key")
        if doc.get("experiment") not in EXPERIMENTS:
            fail("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        seeds = doc.get("seeds")
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            fail("seeds", "must be a nonempty list of integers")
        method = doc.get("method", "decoupling")
        if method not in METHODS:
            fail("method", f"must be one of {', '.join(METHODS)}")
        shots = None
        ev = doc.get("evaluator", "exact")
        if isinstance(ev, dict) and set(ev) == {"sampled"}:
            shots = ev["sampled"]
            if not isinstance(shots, int) or shots < 1:
                fail("evaluator", "sampled shots must be an integer >= 1")
        elif ev != "exact":
            fail("evaluator", 'must be "exact" or {"sampled": shots}')
        adam = doc.get("adam", {})
        if not isinstance(adam, dict) or any(k not in ADAM_KEYS for k in adam):
            fail("adam", f"allowed keys are {', '.join(ADAM_KEYS)}")
        try:
            AdamConfig(**adam)
        except (TypeError, ValueError) as exc:
            fail("adam", str(exc))
        plan = doc.get("plan", {})
        if not isinstance(plan, dict) or any(k not in PLAN_KEYS for k in plan):
            fail("plan", f"allowed keys are {', '.join(PLAN_KEYS)}")
        if plan.get("final_objective", "LHST") not in ("LHST", "HST"):
            fail("plan", "final_objective must be LHST or HST")
        target_circuit = doc.get("target_circuit")
        if doc["experiment"] == "custom":
            if not isinstance(target_circuit, str):
                fail("experiment", "custom experiments need a target_circuit path")
            if base_dir is not None and not os.path.isabs(target_circuit):
                target_circuit = str(base_dir / target_circuit)
        workers = doc.get("workers")
        if workers is not None and (not isinstance(workers, int) or workers < 1):
            fail("workers", "must be a positive integer")
        output_dir = doc.get("output_dir", "out")
        if base_dir is not None and not os.path.isabs(output_dir):
            output_dir = str(base_dir / output_dir)
        return cls(
            experiment=doc["experiment"],
            seeds=tuple(seeds),
            method=method,
            shots=shots,
            adam=dict(adam),
            plan=dict(plan),
            output_dir=output_dir,
            target_seed=int(doc.get("target_seed", 2024)),
            shared_target=doc.get("shared_target"),
            target_circuit=target_circuit,
            workers=workers,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.parse(path.read_text(), path.parent)

    def adam_config(self) -> AdamConfig:
        cfg = AdamConfig(**self.adam)
        overrides = {k: self.plan[k] for k in ("max_iters", "cost_threshold") if k in self.plan}
        return cfg.updated(**overrides)


def load_target_circuit(path) -> np.ndarray:
    c = qc.loads(Path(path).read_text())
    if c.num_params:
        raise ConfigError(f"{path}: target circuit must not have free parameters")
    return qc.to_unitary(c)


def build_plan(config: ExperimentConfig, num_qubits: int) -> decouple.DecouplingPlan:
    adam = config.adam_config()
    final = config.plan.get("final_objective", "LHST")
    if num_qubits == 2:
        return decouple.default_plan_2q(adam, final)
    if num_qubits == 4:
        spindle = config.experiment == "four_qubit_spindle"
        return decouple.default_plan_4q(
            config.plan.get("layers_outer", 1 if spindle else 4),
            config.plan.get("layers_inner", 1 if spindle else 2),
            adam,
            final,
            # spindle targets are compiled with their own one-layer family, where the
            # frozen pipeline strands gauge-rotated leftovers; joint tuning closes them
            bool(config.plan.get("joint_final", spindle)),
        )
    raise ConfigError(f"no default plan for {num_qubits} qubits")


def experiment_target(config: ExperimentConfig, seed: int) -> np.ndarray:
    """Target for one seed; Haar experiments share one target unless shared_target is false."""
    if config.experiment == "custom":
        return load_target_circuit(config.target_circuit)
    if config.experiment == "four_qubit_spindle":
        shared = bool(config.shared_target)
        return decouple.spindle_target(config.target_seed if shared else seed)
    shared = True if config.shared_target is None else bool(config.shared_target)
    rng = np.random.default_rng(config.target_seed if shared else [config.target_seed, seed])
    n = 2 if config.experiment == "two_qubit_haar" else 4
    return haar_random_unitary(n, rng)


def run_seed(config: ExperimentConfig, seed: int) -> decouple.CompiledResult:
    target = experiment_target(config, seed)
    plan = build_plan(config, int(np.log2(target.shape[0])))
    if config.method == "decoupling":
        return decouple.run_decoupling(target, plan, seed, config.shots)
    # the direct baseline gets the decoupling run's whole iteration budget
    adam = plan.phases[-1].adam.updated(max_iters=decouple.total_budget(plan))
    objective = "HST" if config.method == "direct_hst" else "LHST"
    return decouple.run_direct_baseline(target, plan.assembled_circuit(), objective, adam, seed)


def _run_seed_job(args):
    return run_seed(*args)


def fidelity_quartiles(traces) -> np.ndarray:
    """Per-iteration Q1, median, Q3 of fidelity; shorter traces hold their last value."""
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    length = max(len(t) for t in traces)
    table = np.empty((len(traces), length))
    for i, t in enumerate(traces):
        fid = t.column("fidelity")
        table[i, : len(fid)] = fid
        table[i, len(fid) :] = fid[-1]
    return np.percentile(table, [25, 50, 75], axis=0)


@dataclass
class RunSummary:
    config: ExperimentConfig
    results: list[decouple.CompiledResult]

    @property
    def fidelities(self) -> np.ndarray:
        return np.array([r.fidelity for r in self.results])

    @property
    def median_fidelity(self) -> float:
        return float(np.median(self.fidelities))

    def quartiles(self) -> np.ndarray:
        return fidelity_quartiles(r.trace for r in self.results)

    def to_dict(self) -> dict:
        q = self.quartiles()
        return {
            "experiment": self.config.experiment,
            "method": self.config.method,
            "seeds": list(self.config.seeds),
            "median_fidelity": self.median_fidelity,
            "final_fidelity_quartiles": [float(x) for x in np.percentile(self.fidelities, [25, 50, 75])],
            "fidelity_quartiles": {"q1": q[0].tolist(), "median": q[1].tolist(), "q3": q[2].tolist()},
            "results": [r.to_dict() for r in self.results],
        }


def run_experiment(config: ExperimentConfig) -> RunSummary:
    workers = config.workers or os.cpu_count() or 1
    jobs = [(config, s) for s in config.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = [run_seed(config, s) for s in config.seeds]
    return RunSummary(config, results)


def cmd_compile(config: ExperimentConfig) -> RunSummary:
    summary = run_experiment(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in summary.results:
        r.trace.to_csv(out / f"trace_seed{r.seed}.csv")
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=1) + "\n")
    (out / "curves.svg").write_text(render_svg({config.method: [r.trace for r in summary.results]}))
    return summary


# -- plotting --------------------------------------------------------------------

_COLORS = ["#d62728", "#7b3294", "#1f77b4", "#2ca02c", "#ff7f0e", "#8c564b"]


def method_of(trace: TrainingTrace) -> str:
    first = trace.rows[0].phase if trace.rows else "empty"
    return first if first.startswith("direct_") else "decoupling"


def phase_starts(traces) -> list[tuple[str, float]]:
    """Median start iteration of every phase after the first."""
    names = []
    for t in traces:
        for p in t.phases()[1:]:
            if p not in names:
                names.append(p)
    out = []
    for p in names:
        starts = [t.phase_rows(p)[0].iteration for t in traces if t.phase_rows(p)]
        out.append((p, float(np.median(starts))))
    return out


def render_svg(groups: dict, width: int = 720, height: int = 440) -> str:
    """Log-scale 1 - F curves: a median line and Q1-Q3 band per group."""
    left, right, top, bottom = 70, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom
    series = {}
    for name, traces in groups.items():
        q = fidelity_quartiles(traces)
        series[name] = np.clip(1.0 - q, 1e-16, None)
    length = max(s.shape[1] for s in series.values())
    lo = np.floor(np.log10(min(s.min() for s in series.values())))
    hi = np.ceil(np.log10(max(s.max() for s in series.values())))
    if hi <= lo:
        hi = lo + 1

    def x(i):
        return left + pw * (i / max(length - 1, 1))

    def y(v):
        return top + ph * (hi - np.log10(v)) / (hi - lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="white" stroke="black"/>',
    ]
    for e in range(int(lo), int(hi) + 1):
        yy = y(10.0**e)
        parts.append(f'<line x1="{left - 4}" y1="{yy:.2f}" x2="{left}" y2="{yy:.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{yy + 4:.2f}" font-size="11" text-anchor="end">1e{e}</text>')
    parts.append(
        f'<text x="{left + pw / 2}" y="{height - 12}" font-size="12" text-anchor="middle">iteration (0 to {length - 1})</text>'
    )
    parts.append(
        f'<text x="16" y="{top + ph / 2}" font-size="12" transform="rotate(-90 16 {top + ph / 2})" text-anchor="middle">1 - F</text>'
    )
    for k, (name, s) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        q1, med, q3 = s[0], s[1], s[2]
        # 1 - F flips the quartile order: Q3 of F is the lower edge
        upper = " ".join(f"{x(i):.2f},{y(v):.2f}" for i, v in enumerate(q1))
        lower = " ".join(f"{x(i):.2f},{y(v):.2f}" for i, v in reversed(list(enumerate(q3))))
        parts.append(f'<polygon class="band" points="{upper} {lower}" fill="{color}" fill-opacity="0.25" stroke="none"/>')
        line = " ".join(f"{x(i):.2f},{y(v):.2f}" for i, v in enumerate(med))
        parts.append(f'<polyline class="median" points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for phase, start in phase_starts(groups[name]):
            xx = x(start)
            parts.append(
                f'<line class="phase" x1="{xx:.2f}" y1="{top}" x2="{xx:.2f}" y2="{top + ph}" stroke="{color}" stroke-dasharray="4 3"/>'
            )
            parts.append(f'<text x="{xx + 3:.2f}" y="{top + 12}" font-size="10" fill="{color}">{escape(phase)}</text>')
        parts.append(
            f'<text x="{left + pw - 6}" y="{top + 16 + 14 * k}" font-size="11" text-anchor="end" fill="{color}">{escape(name)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(paths, output) -> None:
    groups: dict[str, list[TrainingTrace]] = {}
    for p in paths:
        trace = TrainingTrace.from_csv(p)
        if not trace.rows:
            raise ValueError(f"{p}: trace has no rows")
        groups.setdefault(method_of(trace), []).append(trace)
    Path(output).write_text(render_svg(groups))


# -- checks ------------------------------------------------------------------------


def _load_circuit(path) -> qc.Circuit:
    return qc.loads(Path(path).read_text())


def _partition(spec: str | None, scored: str | None, n: int) -> Partition:
    part = Partition.bipartition(n) if spec is None else Partition.parse(spec, scored)
    if part.num_qubits != n:
        raise cost.PartitionError(f"partition covers {part.num_qubits} qubits, circuit has {n}")
    return part


def cmd_cost_eval(circuit_path, partition=None, scored=None, mode="exact", shots=1000, seed=0, params=None) -> cost.CostEstimate:
    c = _load_circuit(circuit_path)
    part = _partition(partition, scored, c.num_qubits)
    p = np.zeros(c.num_params) if params is None else np.asarray(params, dtype=float)
    if mode == "exact":
        u = qc.to_unitary(c, p)
        return cost.CostEstimate(float(cost.decoupling_cost_unitaries(u, u, part)))
    if mode == "sampled":
        return cost.decoupling_cost_sampled(c, p, part, shots, np.random.default_rng(seed))
    raise ValueError(f"unknown mode {mode!r}")


def cmd_grad_check(circuit_path, partition=None, scored=None, tol=1e-6, seed=0, points=5):
    """Shift-rule versus central-difference gradient of C_D at random points."""
    c = _load_circuit(circuit_path)
    part = _partition(partition, scored, c.num_qubits)
    rng = np.random.default_rng(seed)
    report = []
    if c.num_params == 0:
        return True, report
    ev = grad.ExactEvaluator()

    def value(p):
        return ev(c, part, [DoubledBinding(p)])[0].value

    for _ in range(points):
        p = rng.uniform(-np.pi, np.pi, c.num_params)
        g = grad.shift_rule_gradient_cd(c, p, part, ev)
        fd = grad.finite_difference_gradient(value, p)
        err = float(np.max(np.abs(g - fd)))
        report.append({"max_abs_diff": err, "passed": err < tol})
    return all(r["passed"] for r in report), report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decoupler", description="Variational circuit decoupling experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compile", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    p.add_argument("--output-dir", default=None)

    p = sub.add_parser("cost-eval", help="evaluate C_D of a circuit")
    p.add_argument("circuit")
    p.add_argument("--partition", default=None, help='blocks like "0,1;2,3" (default: halves)')
    p.add_argument("--scored", default=None, help='scored block indices like "0,1" (default: all)')
    p.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    p.add_argument("--shots", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", default=None, help="JSON list of parameter values (default: zeros)")

    p = sub.add_parser("grad-check", help="compare shift-rule and finite-difference gradients")
    p.add_argument("circuit")
    p.add_argument("--partition", default=None)
    p.add_argument("--scored", default=None)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=5)

    p = sub.add_parser("plot", help="render trace CSVs as an SVG")
    p.add_argument("traces", nargs="+")
    p.add_argument("-o", "--output", default="curves.svg")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.command == "compile":
            config = ExperimentConfig.load(args.config)
            overrides = {}
            if args.workers is not None:
                overrides["workers"] = args.workers
            if args.output_dir is not None:
                overrides["output_dir"] = args.output_dir
            if overrides:
                config = ExperimentConfig(**{**config.__dict__, **overrides})
            summary = cmd_compile(config)
            print(json.dumps({"median_fidelity": summary.median_fidelity, "output_dir": config.output_dir}))
        elif args.command == "cost-eval":
            if args.shots < 1:
                raise ValueError("--shots must be at least 1")
            params = None if args.params is None else json.loads(args.params)
            est = cmd_cost_eval(args.circuit, args.partition, args.scored, args.mode, args.shots, args.seed, params)
            print(json.dumps({"value": est.value, "std_error": est.std_error, "shots_used": est.shots_used}))
        elif args.command == "grad-check":
            ok, report = cmd_grad_check(args.circuit, args.partition, args.scored, args.tol, args.seed, args.points)
            for i, row in enumerate(report):
                print(json.dumps({"point": i, **row}))
            print("PASS" if ok else "FAIL")
            return EXIT_OK if ok else EXIT_CHECK
        elif args.command == "plot":
            cmd_plot(args.traces, args.output)
    except (TrainingError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, qc.CircuitError, cost.PartitionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
