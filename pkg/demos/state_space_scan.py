"""
Diagonal state-space scans
==========================

Zero-order-hold discretization, the recurrent scan, its convolution form,
and why a carried hidden state lets a sequence be processed in pieces.
"""

import numpy as np

from polarscan.ssm import causal_conv, discretize_zoh, init_fixed, init_selective, kernel, scan, selective_scan

###############################################################################
# With a = -1, b = 1 and a unit step, a_bar = e^-1 and b_bar = 1 - e^-1.

a_bar, b_bar = discretize_zoh(-1.0, 1.0, 1.0)
print(a_bar, np.exp(-1), b_bar, 1 - np.exp(-1))

###############################################################################
# A time-invariant scan equals a causal convolution with kernel K_k = C a_bar^k b_bar.

p = init_fixed(d=4, n=8, seed=0)
x = np.random.default_rng(0).normal(size=(64, 4))
y_rec, _ = scan(p, x)
y_conv = causal_conv(x, kernel(p, len(x)), p.d_skip)
print("recurrent vs convolution:", np.abs(y_rec - y_conv).max())

###############################################################################
# Splitting the input and handing the state over reproduces the full run exactly.

sel = init_selective(d=4, n=8, seed=1)
full, _ = selective_scan(sel, x)
first, state = selective_scan(sel, x[:25])
rest, _ = selective_scan(sel, x[25:], state)
print("bit-exact prefix:", np.array_equal(np.concatenate([first, rest]), full))
