"""Compare velocity errors at nu = 1 and nu = 1e-6 on the curl test case.

HDG and EDG-HDG give exactly divergence-free velocities, so their velocity
error does not see the large pressure; EDG does.  Usage:
``python demos/pressure_robustness.py [cells_per_side]``.
"""
import sys

from stokes_hybrid import error_norms, generate_rectangle, solve_stokes
from stokes_hybrid.solutions import curl_case

n = int(sys.argv[1]) if len(sys.argv) > 1 else 32
mesh = generate_rectangle(0.0, 0.0, 1.0, 1.0, n, n)
print(f"{mesh.num_cells} cells, P1-P0")
print(f"{'variant':8s} {'nu=1':>10s} {'nu=1e-6':>10s} {'ratio':>9s}")
for variant in ("HDG", "EDG_HDG", "EDG"):
    errs = []
    for nu in (1.0, 1e-6):
        ex = curl_case(nu)
        sol = solve_stokes(mesh, 1, variant, nu=nu, f=ex.f, g=ex.g, solver="direct", tol=1e-10)
        errs.append(error_norms(mesh, sol.dofmap, sol, ex).err_u)
    print(f"{variant:8s} {errs[0]:10.2e} {errs[1]:10.2e} {errs[1] / errs[0]:9.1f}")
