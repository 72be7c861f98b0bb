#pragma once

#include <complex>

namespace emtgis {

using Complex = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSqrt2 = 1.41421356237309504880;

/// Wraps an angle into (-pi, pi].
double normalize_angle(double radians);

/// Polar-form electrical quantity: per-unit magnitude (RMS) and angle in
/// radians. The angle is kept in (-pi, pi]; a negative magnitude passed to
/// the constructor is folded into the angle.
class Phasor {
public:
    Phasor() = default;
    Phasor(double magnitude, double angle);

    static Phasor from_complex(Complex z);

    [[nodiscard]] double magnitude() const noexcept { return magnitude_; }
    [[nodiscard]] double angle() const noexcept { return angle_; }
    [[nodiscard]] Complex to_complex() const;

    /// Instantaneous value sqrt(2)*|X|*cos(omega*t + angle + shift).
    [[nodiscard]] double instantaneous(double omega, double t, double shift = 0.0) const;

    friend Phasor operator*(const Phasor& a, const Phasor& b);
    friend Phasor operator/(const Phasor& a, const Phasor& b);
    friend Phasor operator+(const Phasor& a, const Phasor& b);
    friend Phasor operator-(const Phasor& a, const Phasor& b);
    [[nodiscard]] Phasor conj() const { return {magnitude_, -angle_}; }

private:
    double magnitude_ = 0.0;
    double angle_ = 0.0;
};

}  // namespace emtgis
