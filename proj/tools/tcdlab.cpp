#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tcd/commands.hpp"
#include "tcd/distill.hpp"

namespace {

std::vector<double> parse_gamma_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw tcd::argument_error("--gammas: cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tcdlab: trajectory consistency distillation on Gaussian-mixture oracles"};
  app.require_subcommand(1);

  std::string config_path;
  tcd::CommandOptions opts;
  std::string gamma_text;

  auto add_common = [&](CLI::App* sub, bool with_checkpoint) {
    sub->add_option("--config", config_path, "experiment JSON")->required()->check(CLI::ExistingFile);
    if (with_checkpoint)
      sub->add_option_function<std::string>("--checkpoint", [&](const std::string& p) { opts.checkpoint = p; },
                                            "student checkpoint");
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { opts.seed = s; },
                                            "override the config seed");
    sub->add_option_function<std::string>("--out", [&](const std::string& d) { opts.out_dir = d; },
                                          "override the output directory");
  };

  auto* oracle = app.add_subcommand("oracle-check", "run the oracle, solver and TCF self-checks");
  add_common(oracle, false);
  auto* distill = app.add_subcommand("distill", "train a student and write student.ckpt + train_log.csv");
  add_common(distill, false);
  distill->add_flag("--timing", opts.timing, "record wall-clock milliseconds in the training log");
  auto* teacher = app.add_subcommand("train-teacher", "fit a network teacher by denoising score matching");
  add_common(teacher, false);
  auto* sample = app.add_subcommand("sample", "draw sample sets for every configured sampler and NFE");
  add_common(sample, true);
  auto* eval = app.add_subcommand("eval", "score sample CSV files against the mixture");
  add_common(eval, false);
  eval->add_option("samples", opts.inputs, "sample CSV files")->required()->check(CLI::ExistingFile);
  auto* sweep = app.add_subcommand("sweep-gamma", "sample and score across gamma values");
  add_common(sweep, true);
  auto* gammas_opt =
      sweep->add_option("--gammas", gamma_text, "comma-separated gamma values (default 0,0.2,0.5,1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    tcd::ExperimentConfig cfg = tcd::load_config(config_path);
    tcd::apply_overrides(cfg, opts);
    tcd::CommandResult res;
    if (*oracle) {
      res = tcd::cmd_oracle_check(cfg);
    } else if (*distill) {
      res = tcd::cmd_distill(cfg, opts.timing);
    } else if (*teacher) {
      res = tcd::cmd_train_teacher(cfg);
    } else if (*sample) {
      res = tcd::cmd_sample(cfg, opts.checkpoint);
    } else if (*eval) {
      res = tcd::cmd_eval(cfg, opts.inputs);
    } else {
      const std::vector<double> gammas =
          gammas_opt->count() > 0 ? parse_gamma_list(gamma_text) : std::vector<double>{0.0, 0.2, 0.5, 1.0};
      res = tcd::cmd_sweep_gamma(cfg, opts.checkpoint, gammas);
    }
    for (const auto& path : res.written) std::cout << "wrote " << path << '\n';
    std::cout << res.summary << '\n';
    return res.exit_code;
  } catch (const tcd::config_error& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const tcd::argument_error& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 1;
  } catch (const tcd::range_error& e) {
    std::cerr << "out of range: " << e.what() << '\n';
    return 1;
  } catch (const tcd::io_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 2;
  } catch (const tcd::training_error& e) {
    std::cerr << "training failed: " << e.what() << '\n' << tcd::records_to_csv(e.records);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
