"""Project-wide numerical tolerances.

Every module reads its thresholds from here so that a single table
documents what "equal" means throughout the package.
"""

#: row sums of transition matrices, probability normalisation
STOCHASTIC = 1e-12
#: entries below this are treated as structural zeros in support graphs
SUPPORT_ZERO = 1e-15
#: Perron residual, <pi, q> = lambda, stationarity of pi
SPECTRAL = 1e-10
#: semigroup identities (error accumulates through exponentials)
SEMIGROUP = 1e-9
#: symmetry of reduced operators
SYMMETRY = 1e-12
#: centring test <pi, f> = 0 for functions handed to covariance routines
CENTERED = 1e-10
#: Lyapunov residual ||B K + K B^T + 2 A||_inf
LYAPUNOV_RESIDUAL = 1e-9
#: minimal eigenvalue for a positive definite verdict
POSITIVE_DEFINITE = 1e-12
#: Poisson tail mass dropped by uniformisation
POISSON_TAIL = 1e-14
#: largest Poisson mean handled in one uniformisation step
UNIFORMIZATION_MAX_RATE_TIME = 50.0
#: stationary solve residual of the exact oracle
STATIONARY_RESIDUAL = 1e-10
#: default lattice cap of the exact oracle
LATTICE_CAP = 2_000_000
#: relative agreement of the two covariance routes
ROUTE_AGREEMENT = 1e-6
#: default absolute tolerance of the covariance quadrature
QUADRATURE = 1e-8
