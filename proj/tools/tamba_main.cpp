#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tamba/harness.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw tamba::ValidationError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

tamba::RunConfig load_config(const std::string& path) {
  if (path.empty()) return tamba::RunConfig{};
  return tamba::run_config_from_json(read_file(path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajectory prediction workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint;
  uint64_t seed = 0;
  int n_generate = 10;
  int reps = 20;
  std::vector<int64_t> lengths = tamba::default_benchmark_lengths();

  bool seed_given = false;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_option("--seed", seed, "override the config seed")
        ->each([&seed_given](const std::string&) { seed_given = true; });
    cmd->add_option("--out", out_dir, "output directory")->required();
  };

  CLI::App* cmd_generate =
      app.add_subcommand("generate", "write synthetic scenario files");
  add_common(cmd_generate);
  cmd_generate->add_option("--n", n_generate, "number of scenarios");

  CLI::App* cmd_train = app.add_subcommand("train", "fit a model");
  add_common(cmd_train);

  CLI::App* cmd_evaluate =
      app.add_subcommand("evaluate", "score a checkpoint on the validation split");
  add_common(cmd_evaluate);
  cmd_evaluate->add_option("--checkpoint", checkpoint, "trained weights")->required();

  CLI::App* cmd_ablate =
      app.add_subcommand("ablate", "run the block-kind x joint-encoding grid");
  add_common(cmd_ablate);

  CLI::App* cmd_benchmark =
      app.add_subcommand("benchmark", "time one block forward across lengths");
  add_common(cmd_benchmark);
  cmd_benchmark->add_option("--reps", reps, "samples per point");
  cmd_benchmark->add_option("--lengths", lengths, "sequence lengths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    tamba::RunConfig cfg = load_config(config_path);
    if (seed_given) cfg.seed = seed;

    if (app.got_subcommand(cmd_generate)) {
      tamba::generate_dataset(cfg.data, n_generate, cfg.seed, out_dir);
      std::cout << "wrote " << n_generate << " scenarios to " << out_dir << "\n";
    } else if (app.got_subcommand(cmd_train)) {
      tamba::TrainResult r = tamba::train(cfg, out_dir);
      std::cout << "best validation minADE " << r.best_val << " at epoch "
                << r.best_epoch << " (baseline " << r.baseline_min_ade << ")\n";
    } else if (app.got_subcommand(cmd_evaluate)) {
      tamba::evaluate(cfg, checkpoint, out_dir);
      std::cout << "report written to " << out_dir << "/report.json\n";
    } else if (app.got_subcommand(cmd_ablate)) {
      tamba::ablate(cfg, out_dir);
      std::cout << "grid written to " << out_dir << "/ablation.csv\n";
    } else if (app.got_subcommand(cmd_benchmark)) {
      tamba::BenchReport r = tamba::benchmark_scaling(
          tamba::model_block_config(cfg.model), lengths, reps, out_dir);
      std::cout << "slopes: ssm " << r.slope_ssm << ", attention "
                << r.slope_attention << "\n";
    }
  } catch (const tamba::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const tamba::NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
