#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tcd/distill.hpp"
#include "tcd/eval.hpp"
#include "tcd/oracle.hpp"
#include "tcd/sampling.hpp"
#include "tcd/schedule.hpp"

namespace tcd {

/// One `samplers` entry. `nfe` may list several grid sizes; `all_labels`
/// splits n_samples evenly across every class of a labeled mixture.
struct SamplerSpec {
  std::string name;
  SamplerMode mode = SamplerMode::sss;
  std::vector<int> nfe{4};
  double gamma = 0.2;
  SolverKind solver = SolverKind::ddim;
  Eigen::Index n_samples = 2000;
  Label label = null_label;
  bool all_labels = false;
};

struct MetricSpec {
  std::string name;  ///< sliced_w2, mmd_rbf, mode_recall or class_accuracy
  int projections = default_projections;
  std::optional<double> bandwidth;  ///< absent: median heuristic
  double radius = 0.5;
};

struct ExperimentConfig {
  GaussianMixture gmm = GaussianMixture::standard_normal(2);
  NoiseSchedule schedule;
  DistillConfig distill;
  TeacherConfig teacher;  ///< `distill.teacher_training`, used by train-teacher
  std::vector<SamplerSpec> samplers;
  std::vector<MetricSpec> metrics;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
};

/// Parses and validates a JSON experiment document. Errors are config_error
/// with the offending key path (and the line/column for syntax errors).
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// splitmix64 finaliser applied to `seed ^ tag`, for independent sub-streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace tcd
