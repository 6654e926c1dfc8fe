"""Unit conversions.

Lengths are in cm and velocities in cm/s throughout the solver; fluid
properties are stored in SI.  The pressure unknown is kinematic (P / rho0) in
cm^2/s^2.  Wall shear stress is reported in Pa.
"""

M_PER_CM = 1e-2
CM2_PER_M2 = 1e4


def kinematic_viscosity_cgs(nu_si):
    """m^2/s -> cm^2/s"""
    return nu_si * CM2_PER_M2


def pressure_pa(p_kinematic_cgs, rho0):
    """Kinematic pressure in cm^2/s^2 -> Pa."""
    return rho0 * p_kinematic_cgs / CM2_PER_M2


def shear_stress_pa(mu_dyn, rate_per_s):
    """Dynamic viscosity (Pa s) times a velocity gradient (1/s)."""
    return mu_dyn * rate_per_s
