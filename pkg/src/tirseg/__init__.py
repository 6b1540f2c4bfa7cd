"""Small-target detection in thermal-infrared imagery."""

__version__ = "0.1.0"
