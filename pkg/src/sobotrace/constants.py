"""Calibrated constants for bounds whose theory leaves the constant unnamed.

Each value was measured once on the reference battery below and then frozen
with a safety factor of three over the worst observed ratio; the test suite
re-runs fresh random data against the frozen values and treats any violation
as a hard failure.  Do not retune these to make a failing case pass: a
violation means the estimate itself broke.

Reference battery (seeds feed the band-limited field generator):

* ``lift_m1_energy``: strips of thickness 1 over 1- and 2-dimensional unit
  cells, shapes (64, 64) and (24, 24, 24), a = 0.5, p in {1.5, 2, 3},
  seeds 0..4, ratio = gradient energy of the lift over the data energy
  (gap term weighted by thickness^(1-p) plus both wall seminorms at
  radius a).
* ``graph_lift_energy``: sinusoidal graphs of amplitude 0.15 over a
  1-dimensional cell, bounding shapes (64, 72), a = 0.4, same p and seed
  sweep, ratio taken after dividing out the (1 + L)^p amplification.
* ``convolution_estimate``: kernels from the first and second derivative
  families of the two-moment mollifier, a = 0.4, b = 1, p in {1.5, 2, 3},
  seeds 0..4 on a 96-node circle and a (32, 32) torus.
* ``dirichlet_energy``: wall problems on thickness-1 strips over 1- and
  2-dimensional cells, shapes (48, 24) and (12, 12, 8), the power model and
  its drift variant, p in {1.5, 2, 3}, seeds 0..4, ratio = solution gradient
  energy over source integral + wall gap + both screened wall seminorms at
  radius 1 and order 1 - 1/p.
* ``neumann_energy``: flux problems on the same strips with compatible
  random densities, ratio = gradient energy over source integral + data dual
  norm (estimated over the test dictionary augmented by the solution) raised
  to the conjugate power.  For the power model the solution itself saturates
  the estimate, so the observed ratio sits at one exactly.
"""

CALIBRATED = {
    # worst observed 1.310
    "lift_m1_energy": 4.0,
    # worst observed 0.199 after removing the (1 + L)^p factor
    "graph_lift_energy": 0.6,
    # worst observed 0.525
    "convolution_estimate": 1.6,
    # worst observed 0.194
    "dirichlet_energy": 0.6,
    # worst observed 1.000, saturated by the model integrand
    "neumann_energy": 3.0,
}
