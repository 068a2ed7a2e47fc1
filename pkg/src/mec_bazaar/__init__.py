"""Edge-compute resource market simulator.

Suppliers bid affine supply-function slopes, customers shift a fixed
daily budget of demand across slots, and the two coupled games are
iterated to a bilateral equilibrium that an independent convex oracle
can verify.
"""

__version__ = "0.1.0"
