#!/usr/bin/env python3
"""Example black-box target: log density of Gamma(3, 1) x Beta(2, 5), speaking the EVAL protocol."""
import math
import sys

def log_density(a, b):
    if a <= 0 or not 0 < b < 1:
        return -math.inf
    return (2 * math.log(a) - a - math.lgamma(3)) + (math.log(b) + 4 * math.log1p(-b) - math.log(1 / 30))

for line in sys.stdin:
    parts = line.split()
    if not parts:
        continue
    if parts[0] == "QUIT":
        break
    if parts[0] != "EVAL" or len(parts) != 3:
        print("nan", flush=True)
        continue
    print(repr(log_density(float(parts[1]), float(parts[2]))), flush=True)
