"""Self-evolving procedural skills for text-world agents.

The engine runs a closed loop: an executor guided by the current skill
produces trajectories, trajectories are reflected into typed revision
signals, signals are consolidated and applied as constrained edits, and
the revised skill guides the next round of execution.
"""

__version__ = "0.1.0"
