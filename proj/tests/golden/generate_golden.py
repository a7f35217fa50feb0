#!/usr/bin/env python3
"""Regenerates tests/golden/golden_values.hpp.

Computes the frozen micro-values checked by the acceptance suite with plain
Python arithmetic, independent of the C++ library. Run from the repo root:

    python3 tests/golden/generate_golden.py > tests/golden/golden_values.hpp
"""
import math


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def swish(x):
    return x * sigmoid(x)


def gelu_tanh(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + math.tanh(c * (x + 0.044715 * x * x * x)))


def head_gammas(h):
    return [1.0 - 2.0 ** (-5.0 - i) for i in range(h)]


def decay_mask(n, gamma):
    return [[gamma ** (r - c) if r >= c else 0.0 for c in range(n)] for r in range(n)]


def retention_recurrence(q, k, v, gamma):
    """Scalar-head retention, step by step: s_n = gamma*s_{n-1} + k_n*v_n, o_n = q_n*s_n."""
    s = 0.0
    out = []
    for qn, kn, vn in zip(q, k, v):
        s = gamma * s + kn * vn
        out.append(qn * s)
    return out


def lit(x):
    return repr(float(x))


def main():
    gammas3 = head_gammas(3)
    mask = decay_mask(3, 0.5)
    worked = retention_recurrence([1.0, 1.0], [1.0, 1.0], [2.0, 3.0], 0.5)

    print("// Generated by tests/golden/generate_golden.py -- do not edit by hand.")
    print("#pragma once")
    print()
    print("namespace golden {")
    print()
    print(f"inline constexpr double kSwishAtOne = {lit(swish(1.0))};")
    print(f"inline constexpr double kGeluAtOne = {lit(gelu_tanh(1.0))};")
    print()
    print("inline constexpr double kHeadGammas3[3] = {%s};" % ", ".join(lit(g) for g in gammas3))
    print()
    print("inline constexpr double kDecayMask3Gamma05[3][3] = {")
    for row in mask:
        print("    {%s}," % ", ".join(lit(x) for x in row))
    print("};")
    print()
    print("// One-dimensional head, q = k = [1, 1], v = [2, 3], gamma = 0.5.")
    print("inline constexpr double kWorkedRetention[2] = {%s};" % ", ".join(lit(o) for o in worked))
    print()
    print("} // namespace golden")


if __name__ == "__main__":
    main()
