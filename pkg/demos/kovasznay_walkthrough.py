"""Step through one Kovasznay solve by hand: mesh, dofs, condensation, solve, errors.

Run with ``python demos/kovasznay_walkthrough.py [variant] [k]``.
"""
import sys
import time

from stokes_hybrid import (assemble_global, back_substitute, build_dofmap, condense,
                           error_norms, generate_rectangle, penalty_parameter)
from stokes_hybrid.solutions import kovasznay
from stokes_hybrid.solver import pressure_mean, solve_condensed

variant = sys.argv[1] if len(sys.argv) > 1 else "EDG_HDG"
k = int(sys.argv[2]) if len(sys.argv) > 2 else 2

exact = kovasznay()
mesh = generate_rectangle(-0.5, -0.5, 1.0, 1.5, 16, 21)
print(f"mesh: {mesh.num_cells} cells, lambda = {exact.lam:.6f}")

dm = build_dofmap(mesh, k, variant)
print(f"{variant} P{k}: {dm.n_full} unknowns in total, {dm.n_condensed} after condensation "
      f"(facet velocity {dm.n_ubar_free}, cell pressure {dm.n_p}, facet pressure {dm.n_pbar})")

t0 = time.perf_counter()
system = assemble_global(mesh, dm, exact.nu, penalty_parameter(k, variant), f=exact.f,
                         g_boundary=exact.g)
cs = condense(system)
U, report, _ = solve_condensed(cs, "minres", tol=1e-12)
u = back_substitute(cs, U)
print(f"MINRES: {report.iterations} iterations, true residual {report.final_residual:.1e}, "
      f"{time.perf_counter() - t0:.2f} s")


class Fields:
    pass


sol = Fields()
sol.u = u
sol.ubar = system.g.copy()
sol.ubar[~dm.constrained] = U[:dm.n_ubar_free]
_, sol.p, sol.pbar = dm.split_condensed(U)
# the error routine compares against a zero-mean pressure
shift = pressure_mean(mesh, dm, sol.p)
sol.p = sol.p - shift
sol.pbar = sol.pbar - shift

rep = error_norms(mesh, dm, sol, exact)
print(f"||u - u_h|| = {rep.err_u:.2e}   ||p - p_h|| = {rep.err_p:.2e}")
print(f"||div u_h|| = {rep.div_norm:.1e}   normal jump = {rep.jump_norm:.1e}")
