"""Lease-based access control for personal communication channels.

Leases expire on their own unless both parties keep them alive, and the
party who loses access is never told why. The package simulates such
leases over push-to-talk and other media and counts the explanations an
observer is left with.
"""

__version__ = "0.1.0"
