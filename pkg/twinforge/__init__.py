"""
TwinForge - network digital twin workbench
Scenario generation, packet-level simulation, queueing analytics, a trainable
path-link delay model and routing optimization on top of it
"""

__version__ = "1.0.0"
