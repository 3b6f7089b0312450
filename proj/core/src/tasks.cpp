#include "imaml/tasks.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/QR>

#include "imaml/errors.hpp"
#include "rng.hpp"

namespace imaml {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
  // splitmix64 finalizer over a simple combination.
  std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kQuadratic: return "quadratic";
    case TaskKind::kSinusoid: return "sinusoid";
    case TaskKind::kGaussianClasses: return "gaussian-classes";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "quadratic") return TaskKind::kQuadratic;
  if (s == "sinusoid") return TaskKind::kSinusoid;
  if (s == "gaussian-classes") return TaskKind::kGaussianClasses;
  throw ConfigError("unsupported task kind '" + s + "'");
}

std::string to_string(Spectrum s) {
  return s == Spectrum::kClustered ? "clustered" : "log-uniform";
}

Spectrum spectrum_from_string(const std::string& s) {
  if (s == "clustered") return Spectrum::kClustered;
  if (s == "log-uniform") return Spectrum::kLogUniform;
  throw ConfigError("unsupported spectrum '" + s + "'");
}

void validate(const TaskDistribution& dist) {
  if (dist.dim < 1) throw ConfigError("task dimension must be >= 1");
  if (!(dist.kappa >= 1.0)) throw ConfigError("condition number kappa must be >= 1");
  if (dist.spectrum_levels < 1) throw ConfigError("spectrum_levels must be >= 1");
  if (dist.kind == TaskKind::kGaussianClasses && dist.ways < 2) {
    throw ConfigError("classification needs ways >= 2");
  }
  if (dist.shots < 1) throw ConfigError("shots must be >= 1");
  if (dist.test_shots < 1) throw ConfigError("test_shots must be >= 1");
}

Task make_quadratic_task(Index dim, double kappa, std::uint64_t seed,
                         Spectrum spectrum, int levels) {
  if (dim < 1) throw ConfigError("quadratic task dimension must be >= 1");
  if (!(kappa >= 1.0)) throw ConfigError("condition number kappa must be >= 1");
  if (levels < 1) throw ConfigError("spectrum levels must be >= 1");
  Rng rng(seed);

  Matrix g(dim, dim);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < dim; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  // Fix column signs so Q is a deterministic function of g.
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < dim; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }

  const double log_kappa = std::log(kappa);
  Vector eig(dim);
  if (spectrum == Spectrum::kClustered) {
    const int lv = static_cast<int>(std::min<Index>(levels, dim));
    for (Index i = 0; i < dim; ++i) {
      const auto level = static_cast<int>(i * lv / dim);
      eig(i) = lv == 1 ? 1.0 : std::exp(log_kappa * level / (lv - 1));
    }
    if (lv > 1) eig(dim - 1) = kappa;
  } else {
    for (Index i = 0; i < dim; ++i) eig(i) = std::exp(log_kappa * rng.uniform());
    eig(0) = 1.0;
    if (dim > 1) eig(1) = kappa;
  }
  if (dim == 1) eig(0) = 1.0;

  Task t;
  t.id = seed;
  QuadraticPayload p;
  p.a = q * eig.asDiagonal() * q.transpose();
  p.a = 0.5 * (p.a + p.a.transpose()).eval();
  p.b.resize(dim);
  for (Index i = 0; i < dim; ++i) p.b(i) = rng.normal();
  p.test_a = p.a;
  p.test_b.resize(dim);
  for (Index i = 0; i < dim; ++i) p.test_b(i) = rng.normal();
  t.quadratic = std::move(p);
  return t;
}

Task make_sinusoid_task(int shots, int test_shots, std::uint64_t seed) {
  if (shots < 1 || test_shots < 1) throw ConfigError("sinusoid task needs at least one example per split");
  Rng rng(seed);
  const double amplitude =
      rng.uniform(kSinusoidAmplitudeMin, kSinusoidAmplitudeMax);
  const double phase = rng.uniform(0.0, kSinusoidPhaseMax);
  auto fill = [&](Split& s, int n, const Split* avoid) {
    s.x.resize(1, n);
    s.y.resize(1, n);
    for (int j = 0; j < n; ++j) {
      double x = 0.0;
      bool clash = true;
      while (clash) {
        x = rng.uniform(-kSinusoidInputMax, kSinusoidInputMax);
        clash = false;
        if (avoid != nullptr) {
          for (Index k = 0; k < avoid->x.cols(); ++k) clash |= avoid->x(0, k) == x;
        }
      }
      s.x(0, j) = x;
      s.y(0, j) = amplitude * std::sin(x + phase);
    }
  };
  Task t;
  t.id = seed;
  fill(t.train, shots, nullptr);
  fill(t.test, test_shots, &t.train);
  return t;
}

Task make_gaussian_classes_task(Index dim, int ways, int shots, int test_shots,
                                std::uint64_t seed) {
  if (ways < 2) throw ConfigError("classification needs ways >= 2");
  if (shots < 1 || test_shots < 1) throw ConfigError("classification needs shots >= 1");
  if (dim < 1) throw ConfigError("classification input dimension must be >= 1");
  Rng rng(seed);
  Matrix means(dim, ways);
  for (int c = 0; c < ways; ++c) {
    Vector m(dim);
    for (Index i = 0; i < dim; ++i) m(i) = rng.normal();
    const double norm = m.norm();
    means.col(c) = norm > 0.0 ? Vector(kClassMeanRadius * m / norm)
                              : Vector::Constant(dim, kClassMeanRadius / std::sqrt(double(dim)));
  }
  auto fill = [&](Split& s, int per_class) {
    const Index n = static_cast<Index>(ways) * per_class;
    s.x.resize(dim, n);
    s.y = Matrix::Zero(ways, n);
    Index col = 0;
    for (int k = 0; k < per_class; ++k) {
      for (int c = 0; c < ways; ++c, ++col) {
        for (Index i = 0; i < dim; ++i) s.x(i, col) = means(i, c) + rng.normal();
        s.y(c, col) = 1.0;
      }
    }
  };
  Task t;
  t.id = seed;
  fill(t.train, shots);
  fill(t.test, test_shots);
  return t;
}

std::vector<Task> sample_tasks(const TaskDistribution& dist, std::size_t count,
                               std::uint64_t seed) {
  if (count < 1) throw ConfigError("task count must be >= 1");
  validate(dist);
  std::vector<Task> out;
  out.reserve(count);
  const std::uint64_t stream = mix_seed(dist.base_seed, seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = mix_seed(stream, i);
    Task t;
    switch (dist.kind) {
      case TaskKind::kQuadratic:
        t = make_quadratic_task(dist.dim, dist.kappa, s, dist.spectrum,
                                dist.spectrum_levels);
        break;
      case TaskKind::kSinusoid:
        t = make_sinusoid_task(dist.shots, dist.test_shots, s);
        break;
      case TaskKind::kGaussianClasses:
        t = make_gaussian_classes_task(dist.dim, dist.ways, dist.shots,
                                       dist.test_shots, s);
        break;
    }
    t.id = i;
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Index>(j.size());
  const Index cols = rows == 0 ? 0 : static_cast<Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Index>(row.size()) != cols) {
      throw DimensionError("ragged matrix in task JSON");
    }
    for (Index k = 0; k < cols; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
  }
  return m;
}

nlohmann::json vector_to_json(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

nlohmann::json split_to_json(const Split& s) {
  nlohmann::json pairs = nlohmann::json::array();
  for (Index j = 0; j < s.size(); ++j) {
    pairs.push_back({vector_to_json(s.x.col(j)), vector_to_json(s.y.col(j))});
  }
  return pairs;
}

Split split_from_json(const nlohmann::json& j) {
  Split s;
  const auto n = static_cast<Index>(j.size());
  if (n == 0) return s;
  const Vector x0 = vector_from_json(j.at(0).at(0));
  const Vector y0 = vector_from_json(j.at(0).at(1));
  s.x.resize(x0.size(), n);
  s.y.resize(y0.size(), n);
  for (Index k = 0; k < n; ++k) {
    const auto& pair = j.at(static_cast<std::size_t>(k));
    const Vector x = vector_from_json(pair.at(0));
    const Vector y = vector_from_json(pair.at(1));
    if (x.size() != s.x.rows() || y.size() != s.y.rows()) {
      throw DimensionError("inconsistent example sizes in task JSON");
    }
    s.x.col(k) = x;
    s.y.col(k) = y;
  }
  return s;
}

}  // namespace

nlohmann::json task_to_json(const Task& task) {
  nlohmann::json j;
  j["id"] = task.id;
  j["train"] = split_to_json(task.train);
  j["test"] = split_to_json(task.test);
  if (task.quadratic) {
    j["quadratic"] = {{"A", matrix_to_json(task.quadratic->a)},
                      {"b", vector_to_json(task.quadratic->b)},
                      {"A_test", matrix_to_json(task.quadratic->test_a)},
                      {"b_test", vector_to_json(task.quadratic->test_b)}};
  }
  return j;
}

Task task_from_json(const nlohmann::json& j) {
  Task t;
  t.id = j.at("id").get<std::uint64_t>();
  t.train = split_from_json(j.at("train"));
  t.test = split_from_json(j.at("test"));
  if (j.contains("quadratic")) {
    const auto& q = j.at("quadratic");
    QuadraticPayload p;
    p.a = matrix_from_json(q.at("A"));
    p.b = vector_from_json(q.at("b"));
    p.test_a = matrix_from_json(q.at("A_test"));
    p.test_b = vector_from_json(q.at("b_test"));
    t.quadratic = std::move(p);
  }
  return t;
}

}  // namespace imaml
