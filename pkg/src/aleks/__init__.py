"""Autonomous multi-agent engine for iterative, data-driven research experiments.

A data-analyst agent proposes modeling strategies, a machine-learning
engineer generates and executes analysis scripts in a sandbox, and a
domain scientist critiques the results; all three communicate through a
shared, role-scoped experiment ledger until a stop decision or the
research budget runs out.
"""

__version__ = "0.1.0"
