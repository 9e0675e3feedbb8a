"""Robust center-based clustering with tau scales (K-Tau centers)."""
__version__ = "0.1.0"

from .scales import (
    DegenerateScaleError,
    RhoConfig,
    TauWeights,
    calibrate_c,
    default_rho,
    lloyd_rho,
    m_scale,
    psi,
    psi_over_t,
    rho,
    tau_scale,
    tau_weights,
)
from .core import (
    ClusteringResult,
    KTauConfig,
    distances,
    kmeans_fit,
    ktau_fit,
    ktau_iterate,
    ktau_objective,
    robin_init,
    tkmeans_fit,
    tkmeans_iterate,
)
from .robust_covariance import (
    OutlierPolicy,
    RobustEllipsoid,
    chi2_quantile,
    classical_flags,
    flag_outliers,
    improved_ktau,
    mahalanobis_sq,
    robust_flags,
    robust_location_scatter,
)
from .evaluation import (
    LabeledDataset,
    MethodSpec,
    SimScenario,
    cer,
    fit_method,
    generate_m5,
    generate_scenario,
    run_simulation,
)
from .imaging import (
    CellGrid,
    extreme_outlier,
    geographic_search,
    pack_gray_cells,
    pack_rgb_cells,
    si_transform,
)
