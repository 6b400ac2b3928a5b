"""Offline visualization for simulation frame dumps.

Read-only consumer of the documented binary frame format and manifest CSV;
renders particle scatter images/animations and diagnostic trend charts.
"""

__version__ = "0.1.0"
