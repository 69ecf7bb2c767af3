#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace shakesim {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

inline constexpr double kPi = std::numbers::pi;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }

/// Workspace footprint on the table, centered on the origin (x along the long side).
struct Workspace {
    double size_x = 1.8;
    double size_y = 1.2;

    [[nodiscard]] bool contains(const Vec2& p, double margin = 0.0) const {
        return std::abs(p.x()) <= 0.5 * size_x - margin && std::abs(p.y()) <= 0.5 * size_y - margin;
    }
};

// Error types. Everything derives from std::runtime_error or std::invalid_argument so
// callers that do not care about the category can catch the standard bases.

/// A precondition or argument check failed. `field()` names the offending input.
class InvalidArgument : public std::invalid_argument {
public:
    InvalidArgument(std::string field, const std::string& what)
        : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
    [[nodiscard]] const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class SimulationDiverged : public std::runtime_error {
public:
    explicit SimulationDiverged(std::uint64_t step)
        : std::runtime_error("simulation diverged at step " + std::to_string(step)), step_(step) {}
    [[nodiscard]] std::uint64_t step() const noexcept { return step_; }

private:
    std::uint64_t step_;
};

class GraspMiss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised when a scripted generator cannot satisfy its predicate.
class GenerationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline bool all_finite(const Vec3& v) { return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z()); }

/// Mixes a base seed with a stream index (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace shakesim
