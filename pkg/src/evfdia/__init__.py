"""EV charging stations as voltage-regulation resources: state estimation,
false-data-injection construction under lossy communication, and a
closed-loop day simulator."""

__version__ = "0.1.0"
