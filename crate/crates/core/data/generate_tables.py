"""Regenerate the bundled approximate spectra and mass-attenuation tables.

Spectra: Kramers photon-number law (kVp - E) / E for a tungsten anode,
hardened by 1 mm Cu plus 2.5 mm Al inherent filtration, 1 keV bins.
Attenuation: log-log interpolation of tabulated mass attenuation
coefficients (cm^2/g) for cortical bone and water.

These are approximations for testing and demos, not measured tables.
"""
import numpy as np

NODES = np.array([10, 15, 20, 30, 40, 50, 60, 80, 100, 150], dtype=float)
WATER = np.array([5.329, 1.673, 0.8096, 0.3756, 0.2683, 0.2269, 0.2059, 0.1837, 0.1707, 0.1505])
BONE = np.array([28.51, 9.032, 4.001, 1.331, 0.6655, 0.4242, 0.3148, 0.2229, 0.1855, 0.1480])
COPPER = np.array([215.9, 74.05, 33.79, 10.92, 4.862, 2.613, 1.593, 0.7630, 0.4584, 0.2217])
ALUMINIUM = np.array([26.21, 7.955, 3.441, 1.128, 0.5685, 0.3681, 0.2778, 0.2018, 0.1704, 0.1378])


def loglog(table, energies):
    return np.exp(np.interp(np.log(energies), np.log(NODES), np.log(table)))


def spectrum(kvp):
    e = np.arange(10.0, kvp + 1.0)
    raw = np.clip(kvp - e, 0.0, None) / e
    cu = np.exp(-loglog(COPPER, e) * 8.96 * 0.1)
    al = np.exp(-loglog(ALUMINIUM, e) * 2.70 * 0.25)
    w = raw * cu * al
    w /= w.sum()
    return e, w


for kvp in (80, 140):
    e, w = spectrum(kvp)
    with open(f"spectrum_{kvp}kv_approx.csv", "w") as fh:
        fh.write("energy_kev,weight\n")
        for a, b in zip(e, w):
            fh.write(f"{a:.1f},{b:.10e}\n")

e = np.arange(10.0, 151.0)
with open("bone_water_approx.csv", "w") as fh:
    fh.write("energy_kev,phi,theta\n")
    for a, p, t in zip(e, loglog(BONE, e), loglog(WATER, e)):
        fh.write(f"{a:.1f},{p:.8e},{t:.8e}\n")
