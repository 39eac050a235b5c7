"""
Recovering response curves from observations
============================================

The contract solver leans on two fitted curves: predicted accuracy as a
function of effort and data quality, and the quality score as a function
of effective sample count. Here we generate observations from known
parameters, add measurement noise, and fit both curves back with the
multi-start simplex fitter.
"""

import numpy as np

from contractfl.contracts import AccuracyCurveParams, accuracy_curve
from contractfl.fitting import fit_curve, predict

rng = np.random.default_rng(42)

# accuracy curve: observations are (effort, theta, accuracy) triples
truth = AccuracyCurveParams()
efforts = np.linspace(100.0, 15000.0, 12)
thetas = np.arange(1, 11) / 10.0
rows = []
for e in efforts:
    for th in thetas:
        acc = accuracy_curve(e, th, truth) + rng.normal(0.0, 0.003)
        rows.append((e, th, acc))
samples = np.array(rows)

fit = fit_curve(samples, "accuracy_curve", seed=0)
print("accuracy curve fit")
print(f"  rmse {fit.rmse:.5f} after {fit.n_evals} evaluations")
names = ("beta1", "beta2", "beta3", "beta4", "beta5")
gen = (truth.beta1, truth.beta2, truth.beta3, truth.beta4, truth.beta5)
for name, want in zip(names, gen):
    print(f"  {name}: generating {want:<8g} recovered {fit.params[name]:.4g}")

# quality curve: observations are (effective quantity, theta) pairs,
# where effective quantity is the sample count minus the skew penalty
z = np.linspace(10.0, 4000.0, 50)
theta = 1.0 - 10.559 * np.exp(-1.803 * z ** 0.155) + rng.normal(0.0, 0.002, z.size)
qfit = fit_curve(np.column_stack([z, theta]), "data_quality", seed=0)
print("\nquality curve fit")
print(f"  rmse {qfit.rmse:.5f}")
for name, want in (("gamma1", 10.559), ("gamma2", 1.803), ("gamma4", 0.155)):
    print(f"  {name}: generating {want:<8g} recovered {qfit.params[name]:.4g}")

# the fitted curve, not the recovered coefficients, is what the solver
# consumes; predictions matter more than coefficient identity
grid = np.column_stack([np.linspace(50, 3500, 8), np.full(8, 0.6)])
got = predict("accuracy_curve", np.array([fit.params[n] for n in names]), grid)
want = predict("accuracy_curve", np.array(gen), grid)
print(f"\nlargest prediction gap on a fresh grid: {np.abs(got - want).max():.5f}")
