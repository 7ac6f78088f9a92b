"""Independent reference implementations used only by the tests."""
import numpy as np
from scipy.integrate import solve_ivp

from momentdd.schedule import compile_pulses


def integrate_schrodinger(schedule, model, T, rtol=1e-13, atol=1e-15):
    """Propagator from an adaptive 8th-order integrator, segment by segment."""
    h = model.total()
    d = h.shape[0]
    eye_b = np.eye(model.d_bath)
    at_cut = dict(compile_pulses(schedule))

    def rhs(t, y):
        u = y.view(complex).reshape(d, d)
        return (-1j * h @ u).ravel().view(float)

    U = np.eye(d, dtype=complex)
    b = schedule.boundaries
    for lo, hi in zip(b, b[1:]):
        sol = solve_ivp(rhs, (lo * T, hi * T), U.ravel().view(float).copy(), method="DOP853",
                        rtol=rtol, atol=atol)
        U = sol.y[:, -1].view(complex).reshape(d, d)
        if hi in at_cut:
            U = np.kron(at_cut[hi].to_matrix(), eye_b) @ U
    return U
