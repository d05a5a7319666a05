#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tcd/config.hpp"

namespace tcd {

struct CommandOptions {
  std::optional<std::string> checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::vector<std::string> inputs;  ///< eval: sample CSV files
  std::optional<std::vector<double>> gammas;  ///< sweep-gamma; absent means {0, 0.2, 0.5, 1}
  bool timing = false;  ///< record wall-clock time in the training log
};

struct CommandResult {
  int exit_code = 0;  ///< 0 success, 1 validation failure, 2 runtime failure
  std::vector<std::string> written;
  std::string summary;
};

/// Applies --seed and --out overrides; the seed also reseeds distillation.
void apply_overrides(ExperimentConfig& cfg, const CommandOptions& opts);

struct CheckRow {
  std::string check;
  double value;
  double threshold;
  bool pass;
};

/// Self-checks of the oracle, solvers, TCF algebra and transition kernel on
/// `gmm`, plus convergence-order fits on a fixed two-mode mixture.
std::vector<CheckRow> run_oracle_checks(const GaussianMixture& gmm, const NoiseSchedule& schedule,
                                        std::uint64_t seed);
std::string check_rows_to_csv(const std::vector<CheckRow>& rows);

/// Local-error sweep used by the order checks: step sizes in log-SNR and errors.
struct OrderSweep {
  Vec h;
  Vec errors;
  double slope;
};
OrderSweep order_sweep(TcfOrder order, std::uint64_t seed);
/// Two isotropic components at (1, 1) and (-1, -1) with standard deviation 0.3.
GaussianMixture order_test_mixture();

/// Metrics of `samples` against fresh draws from the experiment mixture.
std::vector<MetricReport> compute_metrics(const ExperimentConfig& cfg, const PointSet& samples,
                                          const std::vector<Label>& labels, std::uint64_t seed);

/// Draws one sampler population. Sampler modes other than ode_solver need `student`.
LabeledPoints run_sampler(const ExperimentConfig& cfg, const SamplerSpec& spec, int nfe, double gamma,
                          const Denoiser* student, const Denoiser& teacher, std::uint64_t seed);

CommandResult cmd_oracle_check(const ExperimentConfig& cfg);
CommandResult cmd_distill(const ExperimentConfig& cfg, bool timing = false);
CommandResult cmd_train_teacher(const ExperimentConfig& cfg);
CommandResult cmd_sample(const ExperimentConfig& cfg, const std::optional<std::string>& checkpoint);
CommandResult cmd_eval(const ExperimentConfig& cfg, const std::vector<std::string>& sample_files);
CommandResult cmd_sweep_gamma(const ExperimentConfig& cfg, const std::optional<std::string>& checkpoint,
                              const std::vector<double>& gammas);

}  // namespace tcd
