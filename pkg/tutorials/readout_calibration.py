"""
Read-out calibration
====================

Simulates the calibration experiment (prepare every basis string, measure)
and compares the observed flip rates with those implied by a gate set.
"""

import numpy as np

from qmonitor.metrics import (
    ErrorRates,
    binomial_sigma,
    calibration_matrix,
    error_rates_from_calibration,
    fill_estimated_rates,
)
from qmonitor.noise import true_gateset

truth = true_gateset()
shots = 8192
cm = calibration_matrix(truth, shots, np.random.default_rng(0))
print("calibration matrix", cm.matrix.shape, "diagonal mean", np.mean(np.diag(cm.matrix)).round(4))

##############################################################################
# Observed rates average over all rows that prepare the given bit.  The
# 1 -> 0 rate includes the error of the X gate used to prepare |1>, which
# the "accurate" estimate accounts for.

observed = error_rates_from_calibration(cm)
implied = fill_estimated_rates(ErrorRates(), truth, range(5))
n = 16 * shots
print(f"{'q':>2}{'e01 obs':>10}{'e01 est':>10}{'e10 obs':>10}{'e10 acc':>10}{'e10 M only':>12}")
for q in range(5):
    print(f"{q:>2}{observed.e01_exp[q]:10.4f}{implied.e01_est[q]:10.4f}"
          f"{observed.e10_exp[q]:10.4f}{implied.e10_est_acc[q]:10.4f}{implied.e10_est[q]:12.4f}")
    assert abs(observed.e01_exp[q] - implied.e01_est[q]) < 4 * binomial_sigma(implied.e01_est[q], n)
