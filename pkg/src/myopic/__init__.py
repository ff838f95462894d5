"""Incentive design for myopic agents.

Submodules:
    linprog     embedded LP/MILP solver, MPS io, external solver bridge
    behavior    agent model, closed-form daily decisions, simulation
    estimation  inverse-optimization MLE/MAP parameter recovery
    design      single-agent incentive plan optimization
    abma        budgeted multi-agent visit allocation
    harness     synthetic program runner, baselines, experiments, CLI
"""

__version__ = "0.1.0"
