"""Sparse linear solves used by the policy iterations."""

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

log = logging.getLogger(__name__)

# node counts above which "auto" switches to the iterative path; 3-D
# factorizations fill in much faster than planar ones
DIRECT_LIMIT = 64 ** 3
DIRECT_LIMIT_3D = 32 ** 3


def _direct(A, b, refine=2):
    lu = spla.splu(sp.csc_matrix(A))
    x = lu.solve(b)
    for _ in range(refine):
        r = b - A @ x
        x = x + lu.solve(r)
    return x


def _amg(A, b, rtol):
    import pyamg

    # the spectral radius estimate inside the setup starts from np.random;
    # seed it so repeated runs are bitwise identical, then restore the caller's state
    state = np.random.get_state()
    np.random.seed(0)
    try:
        ml = pyamg.smoothed_aggregation_solver(sp.csr_matrix(A), symmetry="nonsymmetric")
    finally:
        np.random.set_state(state)
    res = []
    x = ml.solve(b, tol=rtol, accel="gmres", maxiter=400, residuals=res)
    # defect correction reuses the hierarchy; the Krylov tolerance is relative
    for _ in range(3):
        r = b - A @ x
        if np.abs(r).max() <= 1e-14 * max(np.abs(b).max(), 1.0):
            break
        x = x + ml.solve(r, tol=rtol, accel="gmres", maxiter=400)
    return x, res


def _ilu_krylov(A, b, rtol):
    ilu = spla.spilu(sp.csc_matrix(A), drop_tol=1e-5, fill_factor=20)
    P = spla.LinearOperator(A.shape, ilu.solve)
    x, info = spla.gmres(A, b, M=P, rtol=rtol, atol=0.0, restart=100, maxiter=50)
    return x, info


def solve(A, b, method="auto", rtol=1e-13, saddle=False, dim=2):
    """Solve ``A x = b``.

    ``method`` is "direct" (SuperLU with iterative refinement), "iterative"
    (AMG-preconditioned GMRES, or ILU-GMRES for bordered ``saddle`` systems)
    or "auto" (direct up to :data:`DIRECT_LIMIT` unknowns, or
    :data:`DIRECT_LIMIT_3D` when ``dim >= 3``).
    """
    A = sp.csr_matrix(A)
    if method == "auto":
        limit = DIRECT_LIMIT if dim <= 2 else DIRECT_LIMIT_3D
        method = "direct" if A.shape[0] <= limit else "iterative"
    if method == "direct":
        try:
            x = _direct(A, b)
        except RuntimeError as exc:  # SuperLU: exactly singular
            raise SolverError(f"singular system: {exc}") from exc
    elif method == "iterative":
        if saddle:
            x, info = _ilu_krylov(A, b, rtol)
            if info != 0:
                log.warning("ILU-GMRES did not converge (info=%s); falling back to direct", info)
                x = _direct(A, b)
        else:
            x, res = _amg(A, b, rtol)
            if res and res[-1] > rtol * max(res[0], 1e-300) * 10:
                log.warning("AMG-GMRES stalled at %.2e; falling back to direct", res[-1])
                x = _direct(A, b)
    else:
        raise SolverError(f"unknown linear solver {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve produced non-finite values")
    return x
