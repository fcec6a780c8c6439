"""Physically based simulation of human athletics.

Articulated rigid-body dynamics with hand-designed control laws for
running, bicycling, vaulting, balancing and group riding.
"""

__version__ = "0.1.0"
