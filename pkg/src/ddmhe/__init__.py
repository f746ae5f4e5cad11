"""Data-driven moving-horizon estimation for unknown autonomous systems.

Subpackages: ``behavioral`` (Hankel machinery), ``dynamics`` (de-tumbling
plant), ``qp``/``sdp`` (dense convex solvers), ``mhe`` (the estimator),
``stability`` (observer-gain synthesis), ``baselines`` (ESKF, Koopman MHE),
``harness`` (experiment runner), ``cli`` (command-line entry point).
"""

__version__ = "0.1.0"
