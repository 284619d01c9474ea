"""How the two attenuation parameters shape the kernel's order weights.

For each (alpha, beta) the script prints log10 xi_nu for a few orders and the
order nu that dominates xi_nu |h_nu(kR)|^2 at the array radius, i.e. where
the kernel puts its energy for a given frequency.

    python3 demos/01_attenuation_weights.py
"""
import numpy as np

from exterior_gp.kernel_gpr import AttenuationParams, log_xi_table
from exterior_gp.specfun import log_sph_hankel1_all

NMAX = 20
KR = 2 * np.pi * 1000.0 / 343.0 * 0.81  # 1 kHz at the t-design radius

log_h, _ = log_sph_hankel1_all(NMAX, KR)
print(f"kR = {KR:.2f}")
print("alpha  beta   log10 xi_0  xi_5   xi_10   xi_20   dominant order")
for alpha, beta in [(2, 1), (10, 1), (30, 1), (60, 1), (30, 0.5), (30, 2), (30, 4)]:
    lx = log_xi_table(NMAX, AttenuationParams(alpha, beta))
    energy = lx + 2 * log_h
    cols = "  ".join(f"{lx[n] / np.log(10):6.1f}" for n in (0, 5, 10, 20))
    print(f"{alpha:5g} {beta:5g}   {cols}   {int(np.argmax(energy)):3d}")
