"""Numerical laboratory for y(x) = E y(alpha (x - beta))."""
from .chain import (
    FixedHorizon,
    HitOne,
    HitPositive,
    HitZero,
    LatticeReturn,
    SmallModulus,
    chain_step,
    run_until,
    sample_stopped_shift,
    simulate_paths,
    stopped_mean,
    tau_distribution,
)
from .laws import (
    Atom,
    CoefficientLaw,
    ExponentialFrom,
    PointMass,
    PointPlusHypoexp,
    QLattice,
    Regime,
    Uniform,
    classify_regime,
    detect_degeneracies,
    discrete_law,
    log_scale_moment,
    sample_pair,
)
from .solver import GridFunction, apply_operator, dispersion, picard_iterate, residual_sup

__version__ = "0.1.0"
