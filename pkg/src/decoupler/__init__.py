"""Variational circuit decoupling in dense classical simulation."""

from .circuit import Circuit, GateOp, layered_ansatz, to_unitary, universal_two_qubit_ansatz
from .cost import CostEstimate, Partition, decoupling_cost_exact, gate_fidelity, hst_cost, lhst_cost
from .decouple import DecouplingPlan, default_plan_2q, default_plan_4q, run_decoupling, run_direct_baseline
from .optimize import AdamConfig, TrainingTrace

__version__ = "0.1.0"

__all__ = [
    "AdamConfig",
    "Circuit",
    "CostEstimate",
    "DecouplingPlan",
    "GateOp",
    "Partition",
    "TrainingTrace",
    "decoupling_cost_exact",
    "default_plan_2q",
    "default_plan_4q",
    "gate_fidelity",
    "hst_cost",
    "layered_ansatz",
    "lhst_cost",
    "run_decoupling",
    "run_direct_baseline",
    "to_unitary",
    "universal_two_qubit_ansatz",
]
