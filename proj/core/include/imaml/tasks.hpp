#pragma once

// Seeded task distributions: explicit quadratics with a controlled condition
// number, sinusoid regression, and N-way K-shot Gaussian-cluster
// classification.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imaml/types.hpp"

namespace imaml {

// Examples are columns: x is (input_dim x n), y is (output_dim x n).
struct Split {
  Matrix x;
  Matrix y;
  Index size() const noexcept { return x.cols(); }
};

// Train loss 0.5 phi^T A phi + b^T phi; test loss uses (test_a, test_b).
struct QuadraticPayload {
  Matrix a;
  Vector b;
  Matrix test_a;
  Vector test_b;
};

struct Task {
  std::uint64_t id = 0;
  Split train;
  Split test;
  std::optional<QuadraticPayload> quadratic;
};

enum class TaskKind { kQuadratic, kSinusoid, kGaussianClasses };

enum class Spectrum {
  kClustered,   // a few geometric eigenvalue levels spanning [1, kappa]
  kLogUniform,  // i.i.d. log-uniform eigenvalues with endpoints pinned
};

struct TaskDistribution {
  TaskKind kind = TaskKind::kQuadratic;
  Index dim = 50;            // quadratic parameter dim / classification input dim
  double kappa = 50.0;       // quadratic condition number of A
  Spectrum spectrum = Spectrum::kClustered;
  int spectrum_levels = 5;
  int ways = 5;              // classification
  int shots = 10;            // train examples (per class for classification)
  int test_shots = 10;       // test examples (per class for classification)
  std::uint64_t base_seed = 0;
};

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);
std::string to_string(Spectrum s);
Spectrum spectrum_from_string(const std::string& s);

// Validates the distribution parameters (kappa >= 1, ways >= 2, shots >= 1,
// dim >= 1); throws ConfigError.
void validate(const TaskDistribution& dist);

// Deterministic in (dist, count, seed); task i only depends on
// (dist, seed, i) so any prefix of the list is reproducible on its own.
std::vector<Task> sample_tasks(const TaskDistribution& dist, std::size_t count,
                               std::uint64_t seed);

Task make_quadratic_task(Index dim, double kappa, std::uint64_t seed,
                         Spectrum spectrum = Spectrum::kClustered,
                         int levels = 5);
Task make_sinusoid_task(int shots, int test_shots, std::uint64_t seed);
Task make_gaussian_classes_task(Index dim, int ways, int shots, int test_shots,
                                std::uint64_t seed);

// Ranges of the sinusoid family y = amplitude * sin(x + phase).
inline constexpr double kSinusoidAmplitudeMin = 0.1;
inline constexpr double kSinusoidAmplitudeMax = 5.0;
inline constexpr double kSinusoidPhaseMax = 3.14159265358979323846;
inline constexpr double kSinusoidInputMax = 5.0;
// Radius of the sphere the class means are drawn on.
inline constexpr double kClassMeanRadius = 3.0;

// JSON form: {"id", "train": [[x, y], ...], "test": [[x, y], ...],
// "quadratic": {"A", "b", "A_test", "b_test"}} with row-major matrices.
nlohmann::json task_to_json(const Task& task);
Task task_from_json(const nlohmann::json& j);

// Seeding helpers shared with the trainer. All draws go through
// mt19937_64 raw output so streams are identical across standard libraries.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept;

}  // namespace imaml
