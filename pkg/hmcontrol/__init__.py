"""
hmcontrol
Numerical laboratory for magnetically steered harmonic map heat flow on S².
"""

__version__ = "0.3.1"
