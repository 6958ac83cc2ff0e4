"""Tangent-bundle structures that turn vector fields into second-order ODEs.

The package builds and verifies the geometric data (vertical endomorphism,
dilation field, chart maps) under which a given first-order vector field is
the velocity-acceleration field of some second-order system, then applies the
machinery to a regularized central-force problem and to frequency-deformed
harmonic oscillators.
"""

__version__ = "0.1.0"
