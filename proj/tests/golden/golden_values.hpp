// Generated by tests/golden/generate_golden.py -- do not edit by hand.
#pragma once

namespace golden {

inline constexpr double kSwishAtOne = 0.7310585786300049;
inline constexpr double kGeluAtOne = 0.8411919906082768;

inline constexpr double kHeadGammas3[3] = {0.96875, 0.984375, 0.9921875};

inline constexpr double kDecayMask3Gamma05[3][3] = {
    {1.0, 0.0, 0.0},
    {0.5, 1.0, 0.0},
    {0.25, 0.5, 1.0},
};

// One-dimensional head, q = k = [1, 1], v = [2, 3], gamma = 0.5.
inline constexpr double kWorkedRetention[2] = {2.0, 4.0};

} // namespace golden
