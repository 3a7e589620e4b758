"""Fast Chebyshev evaluation of the Bingham closure and a spectral active-nematic solver."""
from .chebmap import (
    ChebMap1D,
    ChebMap2D,
    MapFormatError,
    default_map,
    eval_map_2d,
    eval_map_3d,
    fit_map_2d,
    fit_map_3d,
    load_map,
    save_map,
)
from .diagnostics import (
    ShellSpectrum,
    entropy_functionals,
    onset_wavenumber,
    read_spectrum_csv,
    shell_spectrum,
    vorticity,
    write_spectrum_csv,
)
from .frame import closure_eval, contract_rotate, eig, eig2, eig3, recover_B
from .nematic import (
    FieldState,
    NumericalError,
    SimConfig,
    Simulator,
    read_snapshot,
    run,
    stokes_solve,
    write_snapshot,
)
from .solve import (
    BinghamParams,
    ConvergenceError,
    quadrature_estimate,
    solve_lambda_2d,
    solve_lambda_3d,
    sphere_moments,
    square_to_triangle,
    triangle_to_square,
)
from .special import bessel_ratio, gauss_polar_rule

__version__ = "0.1.0"
