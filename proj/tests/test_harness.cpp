#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "tamba/block.hpp"
#include "tamba/checkpoint.hpp"
#include "tamba/harness.hpp"
#include "test_util.hpp"

using namespace tamba;

TEST_SUITE_BEGIN("harness");

namespace {

RunConfig tiny_run() {
  RunConfig c;
  c.model.d = 16;
  c.model.n_state = 4;
  c.model.d_ff = 32;
  c.model.depth = 1;
  c.model.K = 6;
  c.model.scorer_hidden = 12;
  c.data.observed = 8;
  c.data.future = 6;
  c.data.n_vehicles = 2;
  c.data.n_lanes = 2;
  c.data.n_pedestrians = 0;
  c.data.n_traffic_lights = 0;
  c.data.w_turn = 0.0;  // constant velocity only
  c.data.w_yield = 0.0;
  c.batch_size = 4;
  c.epochs = 2;
  c.n_train = 8;
  c.n_val = 4;
  c.seed = 7;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(bool(in), "missing file: ", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string scratch(const std::string& leaf) {
  const auto dir = std::filesystem::temp_directory_path() / "harness_scratch" / leaf;
  std::filesystem::remove_all(dir);
  return dir.string();
}

std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace

TEST_CASE("plateau scheduler cuts only on patience expiry") {
  PlateauScheduler s(1e-3, 0.1, 5, 1e-4);
  CHECK(s.lr() == 1e-3);

  SUBCASE("a flat metric cuts on the patience-th observation") {
    for (int i = 0; i < 4; ++i) CHECK_FALSE(s.observe(1.0));
    CHECK(s.lr() == 1e-3);
    CHECK(s.observe(1.0));
    CHECK(s.lr() == 1e-3 * 0.1);
    CHECK(s.cuts() == 1);
    // counter restarts after a cut
    for (int i = 0; i < 4; ++i) CHECK_FALSE(s.observe(1.0));
    CHECK(s.observe(1.0));
    CHECK(s.lr() == 1e-3 * 0.1 * 0.1);
    CHECK(s.cuts() == 2);
  }

  SUBCASE("an exact-threshold decrease counts as improvement") {
    CHECK_FALSE(s.observe(1.0));
    CHECK_FALSE(s.observe(1.0 - 1e-4));
    CHECK(s.best() == 1.0 - 1e-4);
    for (int i = 0; i < 4; ++i) CHECK_FALSE(s.observe(1.0 - 1e-4));
    CHECK(s.observe(1.0 - 1e-4));  // patience ran out again
    CHECK(s.lr() == 1e-3 * 0.1);
  }

  SUBCASE("a sub-threshold decrease does not reset patience") {
    CHECK_FALSE(s.observe(1.0));
    for (int i = 0; i < 3; ++i) CHECK_FALSE(s.observe(1.0 - 5e-5));
    CHECK(s.observe(1.0 - 5e-5));
    CHECK(s.lr() == 1e-3 * 0.1);
    CHECK(s.best() == 1.0);
  }

  SUBCASE("steady improvement never decays") {
    double metric = 10.0;
    for (int i = 0; i < 50; ++i) {
      CHECK_FALSE(s.observe(metric));
      metric -= 1e-3;
    }
    CHECK(s.lr() == 1e-3);
    CHECK(s.cuts() == 0);
  }

  SUBCASE("under any feed the lr is non-increasing by exact factors") {
    Rng rng(5);
    double prev = s.lr();
    for (int i = 0; i < 200; ++i) {
      const bool cut = s.observe(rng.uniform(0.0, 2.0));
      if (cut)
        CHECK(s.lr() == prev * 0.1);
      else
        CHECK(s.lr() == prev);
      CHECK(s.lr() <= prev);
      prev = s.lr();
    }
  }

  SUBCASE("construction and inputs are validated") {
    CHECK_THROWS_AS(PlateauScheduler(0.0, 0.1, 5, 1e-4), ConfigError);
    CHECK_THROWS_AS(PlateauScheduler(1e-3, 1.0, 5, 1e-4), ConfigError);
    CHECK_THROWS_AS(PlateauScheduler(1e-3, 0.1, 0, 1e-4), ConfigError);
    CHECK_THROWS_AS(PlateauScheduler(1e-3, 0.1, 5, -1.0), ConfigError);
    CHECK_THROWS_AS(s.observe(std::nan("")), NumericError);
  }
}

TEST_CASE("adam matches a hand-rolled reference and minimizes a quadratic") {
  ParamStore store;
  Tensor w = store.add("w", Tensor::from_vec({3}, {5.0, -3.0, 2.0}, true));
  const double target[3] = {1.0, 2.0, 3.0};
  Tensor t = Tensor::from_vec({3}, {target[0], target[1], target[2]});

  OptimConfig oc;
  Adam opt(oc);
  const double lr = 1e-2;

  // reference trajectory from the analytic gradient 2(w - t)
  double rw[3] = {5.0, -3.0, 2.0};
  double rm[3] = {0, 0, 0}, rv[3] = {0, 0, 0};

  for (int step = 1; step <= 25; ++step) {
    Tensor diff = sub(w, t);
    Tensor loss = sum(mul(diff, diff));
    loss.backward();
    opt.step(store, lr);
    store.zero_grads();

    const double bc1 = 1.0 - std::pow(oc.beta1, step);
    const double bc2 = 1.0 - std::pow(oc.beta2, step);
    for (int i = 0; i < 3; ++i) {
      const double g = 2.0 * (rw[i] - target[i]);
      rm[i] = oc.beta1 * rm[i] + (1.0 - oc.beta1) * g;
      rv[i] = oc.beta2 * rv[i] + (1.0 - oc.beta2) * g * g;
      rw[i] -= lr * (rm[i] / bc1) / (std::sqrt(rv[i] / bc2) + oc.eps);
    }
    for (int i = 0; i < 3; ++i)
      CHECK(w.data()[static_cast<size_t>(i)] == doctest::Approx(rw[i]).epsilon(1e-13));
  }
  CHECK(opt.steps() == 25);

  for (int step = 0; step < 3000; ++step) {
    Tensor diff = sub(w, t);
    sum(mul(diff, diff)).backward();
    opt.step(store, 5e-2);
    store.zero_grads();
  }
  Tensor diff = sub(w, t);
  CHECK(sum(mul(diff, diff)).item() < 1e-6);

  SUBCASE("the optimizer refuses a different parameter set") {
    ParamStore other;
    other.add("a", Tensor::zeros({2}, true));
    other.add("b", Tensor::zeros({2}, true));
    CHECK_THROWS_AS(opt.step(other, lr), ConfigError);
  }
}

TEST_CASE("two epochs on constant-velocity scenarios reduce the loss") {
  const RunConfig cfg = tiny_run();
  const std::string dir = scratch("smoke");
  TrainResult r = train(cfg, dir);

  REQUIRE(r.train_loss.size() == 2);
  CHECK(r.train_loss[1] < r.train_loss[0]);
  REQUIRE(r.val_min_ade.size() == 2);
  CHECK(r.best_epoch >= 1);
  CHECK(r.best_val <= r.val_min_ade[0]);
  CHECK(r.baseline_min_ade > 0.0);
  CHECK(r.final_lr == cfg.optim.lr);  // patience 5 cannot expire in 2 epochs

  // log: header plus one row per step, lr column carries the configured rate
  const auto lines = csv_lines(slurp(r.log_path));
  REQUIRE(lines.size() == 1 + 2 * 2);  // 8 examples / batch 4 = 2 steps per epoch
  CHECK(lines[0] == "epoch,step,L_proposal,L_refine,L_cls,L_total,lr");
  for (size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split_csv(lines[i]);
    REQUIRE(cells.size() == 7);
    CHECK(std::stod(cells[6]) == cfg.optim.lr);
    CHECK(std::isfinite(std::stod(cells[5])));
  }

  // config echo reparses to the exact run configuration
  CHECK(run_config_from_json(slurp(dir + "/config.json")) == cfg);

  nlohmann::json sum = nlohmann::json::parse(slurp(dir + "/train_summary.json"));
  CHECK(sum.at("best_epoch").get<int>() == r.best_epoch);
  CHECK(sum.at("baseline_minADE").get<double>() == r.baseline_min_ade);
  CHECK(sum.at("val_minADE").size() == 2);

  // the checkpoint loads into a freshly built model of the same shape
  TambaModel fresh = make_model(cfg.model, 999);
  load_checkpoint(fresh.params, r.checkpoint_path);
}

TEST_CASE("training and evaluation are bitwise reproducible") {
  const RunConfig cfg = tiny_run();
  const std::string d1 = scratch("rep1");
  const std::string d2 = scratch("rep2");
  TrainResult r1 = train(cfg, d1);
  TrainResult r2 = train(cfg, d2);

  CHECK(slurp(r1.checkpoint_path) == slurp(r2.checkpoint_path));
  CHECK(slurp(r1.log_path) == slurp(r2.log_path));
  CHECK(slurp(d1 + "/train_summary.json") == slurp(d2 + "/train_summary.json"));

  const std::string e1 = scratch("rep1_eval");
  const std::string e2 = scratch("rep2_eval");
  evaluate(cfg, r1.checkpoint_path, e1);
  evaluate(cfg, r2.checkpoint_path, e2);
  CHECK(slurp(e1 + "/report.json") == slurp(e2 + "/report.json"));
  CHECK(slurp(e1 + "/pred_0000_veh0.csv") == slurp(e2 + "/pred_0000_veh0.csv"));
}

TEST_CASE("a diverging run aborts with the failing epoch and step") {
  RunConfig cfg = tiny_run();
  cfg.optim.lr = 1e200;  // one update throws every weight to ~1e200
  cfg.epochs = 3;
  std::string msg;
  try {
    train(cfg, scratch("nan_abort"));
  } catch (const NumericError& e) {
    msg = e.what();
  }
  REQUIRE_FALSE(msg.empty());
  CHECK(msg.find("epoch") != std::string::npos);
  CHECK(msg.find("step") != std::string::npos);
}

TEST_CASE("generated datasets reload byte for byte") {
  GeneratorSpec spec;
  spec.observed = 8;
  spec.future = 6;
  spec.n_vehicles = 2;
  spec.n_lanes = 2;
  spec.n_pedestrians = 1;
  spec.n_traffic_lights = 1;

  const std::string da = scratch("gen_a");
  const std::string db = scratch("gen_b");
  generate_dataset(spec, 10, 42, da);

  nlohmann::json manifest = nlohmann::json::parse(slurp(da + "/index.json"));
  CHECK(manifest.at("n").get<int>() == 10);
  CHECK(manifest.at("seed").get<uint64_t>() == 42);
  REQUIRE(manifest.at("files").size() == 10);

  std::vector<Scenario> loaded = load_dataset(da);
  REQUIRE(loaded.size() == 10);
  for (const Scenario& s : loaded) validate_scenario(s);

  generate_dataset(spec, 10, 42, db);
  for (const auto& f : manifest.at("files"))
    CHECK(slurp(da + "/" + f.get<std::string>()) == slurp(db + "/" + f.get<std::string>()));
  CHECK(slurp(da + "/index.json") == slurp(db + "/index.json"));

  CHECK_THROWS_AS(load_dataset("build/harness_scratch/nowhere"), ValidationError);
  CHECK_THROWS_AS(generate_dataset(spec, 0, 1, scratch("gen_c")), ConfigError);

  SUBCASE("training consumes a scenario directory") {
    RunConfig cfg = tiny_run();
    cfg.data = spec;
    cfg.scenario_dir = da;
    cfg.n_train = 6;
    cfg.n_val = 4;
    cfg.epochs = 1;
    TrainResult r = train(cfg, scratch("from_dir"));
    CHECK(r.val_min_ade.size() == 1);

    cfg.n_train = 20;
    CHECK_THROWS_AS(train(cfg, scratch("from_dir_overdrawn")), ValidationError);
  }
}

TEST_CASE("evaluation reports replay from the exported csvs") {
  const RunConfig cfg = tiny_run();
  const std::string dir = scratch("eval_train");
  TrainResult tr = train(cfg, dir);
  const std::string ev = scratch("eval_out");
  MetricReport rep = evaluate(cfg, tr.checkpoint_path, ev);

  REQUIRE(rep.per_k.size() == 2);
  CHECK(rep.per_k[0].first == 6);
  CHECK(rep.per_k[1].first == 1);
  CHECK(rep.n_targets == cfg.n_val);
  CHECK(rep.params_m > 0.0);
  CHECK(rep.flops_g > 0.0);

  nlohmann::json j = nlohmann::json::parse(slurp(ev + "/report.json"));
  CHECK(j.contains("K6"));
  CHECK(j.contains("K1"));
  CHECK(j.at("n_targets").get<int>() == cfg.n_val);

  // replay oracle: rebuild the metrics from nothing but the exported CSVs
  // and the ground truth, independently of the metrics module
  double ade6 = 0, fde6 = 0, ade1 = 0;
  for (int i = 0; i < cfg.n_val; ++i) {
    Scenario s = generate_synthetic(derive_seed(cfg.seed, 2, static_cast<uint64_t>(i)), cfg.data);
    Tensor gt = ground_truth_tensor(s, "veh0");
    char name[64];
    std::snprintf(name, sizeof(name), "/pred_%04d_veh0.csv", i);
    const auto lines = csv_lines(slurp(ev + name));
    REQUIRE(lines[0] == "mode,step,x,y,scale_x,scale_y,pi");

    const int T = cfg.data.future;
    std::vector<std::vector<double>> xs(6, std::vector<double>(T)), ys = xs;
    std::vector<double> pi(6, 0.0);
    REQUIRE(lines.size() == size_t(1 + 6 * T));
    for (size_t r = 1; r < lines.size(); ++r) {
      const auto c = split_csv(lines[r]);
      REQUIRE(c.size() == 7);
      const int mode = std::stoi(c[0]);
      const int step = std::stoi(c[1]);
      xs[mode][step] = std::stod(c[2]);
      ys[mode][step] = std::stod(c[3]);
      pi[mode] = std::stod(c[6]);
    }
    auto mode_ade = [&](int k) {
      double a = 0;
      for (int t = 0; t < T; ++t)
        a += std::hypot(xs[k][t] - gt.at({t, 0}), ys[k][t] - gt.at({t, 1}));
      return a / T;
    };
    auto mode_fde = [&](int k) {
      return std::hypot(xs[k][T - 1] - gt.at({T - 1, 0}), ys[k][T - 1] - gt.at({T - 1, 1}));
    };
    std::vector<int> by_pi = {0, 1, 2, 3, 4, 5};
    std::stable_sort(by_pi.begin(), by_pi.end(), [&](int a, int b) { return pi[a] > pi[b]; });
    double a6 = 1e300, f6 = 1e300;
    for (int k : by_pi) {
      a6 = std::min(a6, mode_ade(k));
      f6 = std::min(f6, mode_fde(k));
    }
    ade6 += a6;
    fde6 += f6;
    ade1 += mode_ade(by_pi[0]);
  }
  ade6 /= cfg.n_val;
  fde6 /= cfg.n_val;
  ade1 /= cfg.n_val;
  CHECK(rep.per_k[0].second.min_ade == doctest::Approx(ade6).epsilon(1e-12));
  CHECK(rep.per_k[0].second.min_fde == doctest::Approx(fde6).epsilon(1e-12));
  CHECK(rep.per_k[1].second.min_ade == doctest::Approx(ade1).epsilon(1e-12));

  SUBCASE("a perfect predictor scores zero everywhere") {
    std::vector<Scenario> val;
    for (int i = 0; i < 3; ++i)
      val.push_back(generate_synthetic(derive_seed(1, 2, static_cast<uint64_t>(i)), cfg.data));
    Predictor oracle = [](const Scenario& s, const std::string& tid) {
      Tensor gt = ground_truth_tensor(s, tid);
      PredictionSet ps;
      ps.target_id = tid;
      std::vector<double> pv(6, 0.0);
      pv[0] = 1.0;
      for (int k = 0; k < 6; ++k) {
        ps.proposals.push_back(gt);
        ps.mu.push_back(gt);
        ps.b.push_back(Tensor::full(gt.shape(), 0.5));
      }
      ps.pi = Tensor::from_vec({6}, pv);
      ps.scores = Tensor::from_vec({6}, pv);
      return ps;
    };
    MetricReport z = evaluate_dataset(oracle, val, {6, 1}, 0.0, 0.0, scratch("eval_oracle"));
    for (const auto& [k, m] : z.per_k) {
      CHECK(m.min_ade == 0.0);
      CHECK(m.min_fde == 0.0);
      CHECK(m.b_min_fde == 0.0);
      CHECK(m.miss_rate == 0.0);
    }
  }

  SUBCASE("a checkpoint with foreign shapes is rejected") {
    RunConfig narrow = cfg;
    narrow.model.d = 8;
    narrow.model.scorer_hidden = 8;
    CHECK_THROWS_AS(evaluate(narrow, tr.checkpoint_path, scratch("eval_mismatch")),
                    CheckpointError);
  }
}

TEST_CASE("the ablation grid emits six comparable rows") {
  RunConfig cfg = tiny_run();
  cfg.epochs = 1;
  cfg.n_train = 4;
  cfg.n_val = 2;
  const std::string dir = scratch("ablate");
  ablate(cfg, dir);

  const auto lines = csv_lines(slurp(dir + "/ablation.csv"));
  REQUIRE(lines.size() == 7);
  CHECK(lines[0] == "block,joint,minFDE_6,minADE_6,minFDE_1,minADE_1,params_M");
  const char* expect_kind[6] = {"attention", "attention", "mamba", "mamba", "tamba", "tamba"};
  const char* expect_joint[6] = {"yes", "no", "yes", "no", "yes", "no"};

  std::vector<int64_t> micro_params(6);
  for (int r = 0; r < 6; ++r) {
    const auto c = split_csv(lines[static_cast<size_t>(r) + 1]);
    REQUIRE(c.size() == 7);
    CHECK(c[0] == expect_kind[r]);
    CHECK(c[1] == expect_joint[r]);
    const double fde6 = std::stod(c[2]), ade6 = std::stod(c[3]);
    const double fde1 = std::stod(c[4]), ade1 = std::stod(c[5]);
    CHECK(std::isfinite(fde6));
    CHECK(ade6 <= ade1);  // more modes can only help
    CHECK(fde6 <= fde1);
    micro_params[static_cast<size_t>(r)] = std::llround(std::stod(c[6]) * 1e6);

    // the reported count matches a freshly built model of that cell
    RunConfig cell = cfg;
    cell.model.kind = block_kind_from_string(c[0]);
    cell.model.joint = c[1] == "yes";
    TambaModel m = make_model(cell.model, 0);
    CHECK(micro_params[static_cast<size_t>(r)] == std::llround(count_params(m.params) * 1e6));
  }

  // the joint-path surcharge is one fusion layer, identical across kinds
  const int64_t joint_delta = micro_params[0] - micro_params[1];
  CHECK(joint_delta == micro_params[2] - micro_params[3]);
  CHECK(joint_delta == micro_params[4] - micro_params[5]);
  CHECK(joint_delta > 0);
  // encoder kinds differ in the block inner parameterization
  CHECK(micro_params[4] != micro_params[2]);
  CHECK(micro_params[4] != micro_params[0]);
}

TEST_CASE("the scaling benchmark reports medians and the analytic column") {
  BlockConfig bc;
  bc.d = 8;
  bc.n_state = 4;
  bc.m = 8;
  bc.d_ff = 16;
  const std::vector<int64_t> lengths = {8, 16, 32};
  const std::string dir = scratch("bench");
  BenchReport rep = benchmark_scaling(bc, lengths, 5, dir);

  REQUIRE(rep.rows.size() == 6);
  for (const BenchRow& r : rep.rows) {
    CHECK(r.median_ns > 0.0);
    const BlockKind kind = block_kind_from_string(r.kind);
    CHECK(r.flops == block_flops(kind, bc, r.length).total());
  }
  CHECK(std::isfinite(rep.slope_ssm));
  CHECK(std::isfinite(rep.slope_attention));
  CHECK(finite_checks_enabled());  // restored after the timed region

  const auto lines = csv_lines(slurp(dir + "/benchmark.csv"));
  REQUIRE(lines.size() == 7);
  CHECK(lines[0] == "L,block,median_ns,flops");
  nlohmann::json sum = nlohmann::json::parse(slurp(dir + "/benchmark_summary.json"));
  CHECK(sum.contains("slope_ssm"));
  CHECK(sum.contains("slope_attention"));

  CHECK_THROWS_AS(benchmark_scaling(bc, {}, 5, dir), ConfigError);
  CHECK_THROWS_AS(benchmark_scaling(bc, lengths, 3, dir), ConfigError);
  CHECK_THROWS_AS(benchmark_scaling(bc, {0}, 5, dir), ConfigError);
}

TEST_CASE("run config json codec round trips and rejects junk") {
  CHECK(run_config_from_json("{}") == RunConfig{});

  const RunConfig cfg = tiny_run();
  CHECK(run_config_from_json(run_config_to_json(cfg)) == cfg);

  RunConfig parsed = run_config_from_json(R"({
    "model": {"kind": "attention", "joint": false, "d": 24},
    "loss": {"winner": "min_fde", "lambda": 0.5},
    "optim": {"lr": 0.01, "plateau_patience": 3},
    "seed": 11,
    "scenario_dir": "data/scenes"
  })");
  CHECK(parsed.model.kind == BlockKind::attention);
  CHECK_FALSE(parsed.model.joint);
  CHECK(parsed.model.d == 24);
  CHECK(parsed.model.n_state == ModelConfig{}.n_state);  // untouched default
  CHECK(parsed.loss.winner == WinnerCriterion::min_fde);
  CHECK(parsed.loss.lambda == 0.5);
  CHECK(parsed.optim.lr == 0.01);
  CHECK(parsed.optim.plateau_patience == 3);
  CHECK(parsed.seed == 11);
  CHECK(parsed.scenario_dir == "data/scenes");

  CHECK_THROWS_AS(run_config_from_json("not json"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json("[1,2]"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"model": {"bogus": 1}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"epochs": "five"})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"epochs": 0})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"batch_size": -4})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"seed": -3})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"optim": {"lr": "fast"}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"optim": {"plateau_factor": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"loss": {"lambda": -1}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"model": {"kind": "lstm"}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"loss": {"winner": "best"}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"model": {"joint": "yes"}})"), ConfigError);
}

TEST_SUITE_END();
