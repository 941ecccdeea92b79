// Command-line front end: simulate | train | tune | evaluate |
// test-covariates | test-representations | benchmark.
// Exit codes: 0 success, 1 contract violation / bad usage, 2 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepin/deepin.hpp"

namespace fs = std::filesystem;
using deepin::json;

namespace {

std::vector<std::size_t> parse_index_set(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    const long v = std::stol(tok);
    if (v < 1) throw deepin::contract_violation("--index-set entries are 1-based positive ints");
    out.push_back(static_cast<std::size_t>(v - 1));
  }
  if (out.empty()) throw deepin::contract_violation("--index-set must name at least one index");
  return out;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw deepin::contract_violation("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw deepin::contract_violation("malformed JSON in " + path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& doc) {
  fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw deepin::contract_violation("cannot open " + path);
  out << doc.dump(2) << "\n";
}

deepin::ExperimentConfig config_from_file_or_default(const std::string& path) {
  if (path.empty()) return deepin::ExperimentConfig{};
  return deepin::load_experiment_config(path);
}

void write_history_csv(const std::string& path, const deepin::TrainHistory& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw deepin::contract_violation("cannot open " + path);
  out << "epoch,objective,data_loss,rho1,rho2,rho31,l1_theta,dims,n_vars,nnz\n";
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const deepin::EpochStats& s = history.epochs[e];
    out << (e + 1) << "," << deepin::format_real(s.objective) << ","
        << deepin::format_real(s.data_loss) << "," << deepin::format_real(s.penalty.rho1) << ","
        << deepin::format_real(s.penalty.rho2) << "," << deepin::format_real(s.penalty.rho31)
        << "," << deepin::format_real(s.penalty.l1_theta) << "," << s.structure.dims << ","
        << s.structure.n_vars << "," << s.structure.nnz << "\n";
  }
}

json metrics_to_json(const deepin::MetricsReport& m) {
  json doc;
  const auto put = [&](const char* key, const std::optional<double>& v) {
    doc[key] = v ? json(*v) : json(nullptr);
  };
  put("pe", m.pe);
  put("mse", m.mse);
  put("acc", m.acc);
  put("auc", m.auc);
  put("tpr", m.tpr);
  put("fpr", m.fpr);
  doc["dims"] = m.dims;
  doc["n_vars"] = m.n_vars;
  put("prop_zero", m.prop_zero);
  doc["diagnostics"] = m.diagnostics;
  return doc;
}

int run(int argc, char** argv) {
  CLI::App app{"DeepIn: self-interpretable networks with representation learning and inference"};
  app.require_subcommand(1);

  // ---- simulate ----
  auto* sim = app.add_subcommand("simulate", "generate a synthetic benchmark dataset");
  deepin::SyntheticSpec spec;
  bool d0_given = false;
  std::string sim_out = "out";
  std::string scheme = "equicorrelated";
  sim->add_option("--setting", spec.setting, "1 additive, 2 interactive, 3 network, 4 classification");
  sim->add_option("--n", spec.n, "sample size");
  sim->add_option("--d", spec.d, "ambient dimension");
  sim->add_option("--s0", spec.s0, "informative variables");
  sim->add_option("--d0", spec.d0, "true representation count")->each([&](const std::string&) {
    d0_given = true;
  });
  sim->add_option("--rho", spec.rho, "correlation level in [0,1)");
  sim->add_option("--sigma", spec.sigma, "noise standard deviation");
  sim->add_option("--scheme", scheme, "equicorrelated | ar1");
  sim->add_option("--seed", spec.seed, "random seed");
  sim->add_option("--out", sim_out, "output directory");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "fit a model on a CSV dataset");
  std::string tr_data, tr_response = "y", tr_task = "regression", tr_config, tr_out = "out";
  std::uint64_t tr_seed = 1;
  tr->add_option("--data", tr_data, "dataset CSV")->required();
  tr->add_option("--response", tr_response, "response column name");
  tr->add_option("--task", tr_task, "regression | classification");
  tr->add_option("--config", tr_config, "config JSON (architecture/penalty/train/method)");
  tr->add_option("--seed", tr_seed, "random seed");
  tr->add_option("--out", tr_out, "output directory");

  // ---- tune ----
  auto* tu = app.add_subcommand("tune", "sequential lambda grid search");
  std::string tu_data, tu_response = "y", tu_task = "regression", tu_config, tu_out = "out";
  std::uint64_t tu_seed = 1;
  tu->add_option("--data", tu_data, "dataset CSV")->required();
  tu->add_option("--response", tu_response, "response column name");
  tu->add_option("--task", tu_task, "regression | classification");
  tu->add_option("--config", tu_config, "config JSON with grids");
  tu->add_option("--seed", tu_seed, "random seed");
  tu->add_option("--out", tu_out, "output directory");

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "metrics for a saved model on a dataset");
  std::string ev_model, ev_data, ev_response = "y", ev_truth, ev_out;
  ev->add_option("--model", ev_model, "model JSON")->required();
  ev->add_option("--data", ev_data, "dataset CSV")->required();
  ev->add_option("--response", ev_response, "response column name");
  ev->add_option("--truth", ev_truth, "truth sidecar JSON from simulate");
  ev->add_option("--out", ev_out, "optional output directory");

  // ---- test-covariates ----
  auto* tc = app.add_subcommand("test-covariates", "chi-square test per selected variable");
  std::string tc_model, tc_data, tc_response = "y", tc_out = "out";
  std::uint64_t tc_seed = 17;
  tc->add_option("--model", tc_model, "fitted model JSON")->required();
  tc->add_option("--data", tc_data, "dataset CSV")->required();
  tc->add_option("--response", tc_response, "response column name");
  tc->add_option("--seed", tc_seed, "seed for the conditional-mean fit");
  tc->add_option("--out", tc_out, "output directory");

  // ---- test-representations ----
  auto* tp = app.add_subcommand("test-representations", "split-sample representation test");
  std::string tp_data, tp_response = "y", tp_task = "regression", tp_config, tp_out = "out";
  std::string tp_index;
  std::size_t tp_rep_dim = 0;
  std::uint64_t tp_seed = 1;
  tp->add_option("--data", tp_data, "dataset CSV")->required();
  tp->add_option("--response", tp_response, "response column name");
  tp->add_option("--task", tp_task, "regression | classification");
  tp->add_option("--rep-dim", tp_rep_dim, "representation dimension of the fits")->required();
  tp->add_option("--index-set", tp_index, "retained representations, 1-based, e.g. 1,3,5")
      ->required();
  tp->add_option("--config", tp_config, "config JSON (architecture/train)");
  tp->add_option("--seed", tp_seed, "random seed");
  tp->add_option("--out", tp_out, "output directory");

  // ---- benchmark ----
  auto* bm = app.add_subcommand("benchmark", "replicated experiment with summary outputs");
  std::string bm_config;
  std::optional<std::uint64_t> bm_seed;
  std::optional<std::string> bm_out;
  bm->add_option("--config", bm_config, "experiment config JSON")->required();
  bm->add_option("--seed", bm_seed, "override config seed");
  bm->add_option("--out", bm_out, "override output directory");

  CLI11_PARSE(app, argc, argv);

  if (*sim) {
    if (spec.setting == 3 && !d0_given) spec.d0 = 10;
    deepin::LabeledDataset ds = deepin::gen_setting(spec);
    fs::create_directories(sim_out);
    deepin::write_dataset((fs::path(sim_out) / "data.csv").string(), ds.x, ds.y);
    json truth;
    truth["setting"] = spec.setting;
    truth["sigma"] = spec.sigma;
    truth["seed"] = spec.seed;
    truth["d0"] = spec.d0;
    json informative = json::array();
    for (std::size_t j : ds.truth.informative) informative.push_back(j + 1);
    truth["informative"] = informative;
    truth["b0"] = {{"rows", ds.truth.b0.rows}, {"cols", ds.truth.b0.cols},
                   {"data", ds.truth.b0.data}};
    truth["f0"] = ds.truth.f0;
    write_json_file((fs::path(sim_out) / "truth.json").string(), truth);
    std::cout << "wrote " << (fs::path(sim_out) / "data.csv").string() << " and truth.json\n";
    return 0;
  }

  if (*tr || *tu) {
    const bool tuning = static_cast<bool>(*tu);
    const std::string data_path = tuning ? tu_data : tr_data;
    const std::string response = tuning ? tu_response : tr_response;
    const std::string task_str = tuning ? tu_task : tr_task;
    const std::string out_dir = tuning ? tu_out : tr_out;
    const std::uint64_t seed = tuning ? tu_seed : tr_seed;

    deepin::ExperimentConfig cfg = config_from_file_or_default(tuning ? tu_config : tr_config);
    cfg.task = task_str == "classification" || task_str == "binary_classification"
                   ? deepin::Task::binary_classification
                   : deepin::Task::regression;
    deepin::CsvDataset ds = deepin::read_dataset(data_path, response);
    deepin::TrainOptions opts = cfg.train_options;
    opts.seed = seed;
    fs::create_directories(out_dir);

    if (tuning) {
      const deepin::ExperimentConfig* cfgp = &cfg;
      const std::size_t d = ds.x.cols;
      deepin::PenaltyConfig chosen = deepin::tune(
          [cfgp, d](std::uint64_t s) {
            return deepin::make_deepin_model(d, cfgp->hidden_dims, cfgp->power, cfgp->task, s);
          },
          ds.x, ds.y, cfg.task, cfg.grids, opts);
      json doc = {{"lambda1", chosen.lambda1}, {"lambda2", chosen.lambda2},
                  {"lambda3", chosen.lambda3}, {"lambda4", chosen.lambda4},
                  {"tau1", chosen.tau1},       {"tau2", chosen.tau2},
                  {"tau3", chosen.tau3}};
      write_json_file((fs::path(out_dir) / "tuned.json").string(), doc);
      std::cout << doc.dump(2) << "\n";
      return 0;
    }

    deepin::PenaltyConfig penalty = cfg.penalty;
    deepin::detail::apply_method_policy(cfg, penalty, opts);
    deepin::DeepInModel model = deepin::detail::build_method_model(cfg, ds.x.cols, seed);
    deepin::TrainResult res = deepin::train(std::move(model), ds.x, ds.y, penalty, opts);
    deepin::save_model(res.model, penalty, seed, (fs::path(out_dir) / "model.json").string());
    write_history_csv((fs::path(out_dir) / "history.csv").string(), res.history);
    const deepin::StructureTriplet st = deepin::active_structure(res.model);
    std::cout << "trained: dims=" << st.dims << " n_vars=" << st.n_vars << " nnz=" << st.nnz
              << "\nwrote " << (fs::path(out_dir) / "model.json").string() << "\n";
    return 0;
  }

  if (*ev) {
    deepin::SavedModel saved = deepin::load_model(ev_model);
    deepin::CsvDataset ds = deepin::read_dataset(ev_data, ev_response);
    deepin::Vec f0;
    std::vector<std::size_t> truth_idx;
    if (!ev_truth.empty()) {
      const json truth = load_json_file(ev_truth);
      if (truth.contains("f0")) f0 = truth["f0"].get<deepin::Vec>();
      if (truth.contains("informative"))
        for (const auto& v : truth["informative"])
          truth_idx.push_back(v.get<std::size_t>() - 1);
    }
    const deepin::MetricsReport m = deepin::evaluate_model(
        saved.model, ds.x, ds.y, f0.empty() ? nullptr : &f0, truth_idx);
    const json doc = metrics_to_json(m);
    std::cout << doc.dump(2) << "\n";
    if (!ev_out.empty()) write_json_file((fs::path(ev_out) / "metrics.json").string(), doc);
    return 0;
  }

  if (*tc) {
    deepin::SavedModel saved = deepin::load_model(tc_model);
    deepin::CsvDataset ds = deepin::read_dataset(tc_data, tc_response);
    deepin::CovariateTestOptions opts;
    opts.conditional_mean.seed = tc_seed;
    const deepin::CovariateTestReport rep = deepin::covariate_test(saved.model, ds.x, ds.y, opts);
    json doc;
    doc["df"] = rep.df;
    doc["degenerate"] = rep.degenerate;
    doc["diagnostics"] = rep.diagnostics;
    json vars = json::array();
    for (std::size_t j = 0; j < rep.variables.size(); ++j) {
      json v;
      const std::size_t col = rep.variables[j];
      v["variable"] = col + 1;
      v["name"] = col < ds.feature_names.size() ? ds.feature_names[col] : "";
      v["statistic"] = rep.statistic[j];
      v["u"] = rep.u[j];
      v["p_value"] = rep.p_value[j] ? json(*rep.p_value[j]) : json(nullptr);
      vars.push_back(v);
    }
    doc["variables"] = vars;
    write_json_file((fs::path(tc_out) / "tests" / "covariates.json").string(), doc);
    std::cout << doc.dump(2) << "\n";
    return 0;
  }

  if (*tp) {
    deepin::CsvDataset ds = deepin::read_dataset(tp_data, tp_response);
    const deepin::Task task = tp_task == "classification" || tp_task == "binary_classification"
                                  ? deepin::Task::binary_classification
                                  : deepin::Task::regression;
    deepin::RepresentationTestOptions opts;
    if (!tp_config.empty()) {
      const deepin::ExperimentConfig cfg = deepin::load_experiment_config(tp_config);
      opts.hidden_dims = cfg.hidden_dims;
      opts.train = cfg.train_options;
      opts.train.truncation_enabled = false;
    }
    opts.train.seed = tp_seed;
    const std::vector<std::size_t> index_set = parse_index_set(tp_index);
    const deepin::RepresentationTestReport rep =
        deepin::representation_test(ds.x, ds.y, task, tp_rep_dim, index_set, opts);
    json doc;
    json idx = json::array();
    for (std::size_t i : rep.index_set) idx.push_back(i + 1);
    doc["index_set"] = idx;
    doc["t_n"] = rep.t_n;
    doc["varsigma2"] = rep.varsigma2;
    doc["z"] = rep.z;
    doc["p_value"] = rep.p_value ? json(*rep.p_value) : json(nullptr);
    doc["degenerate"] = rep.degenerate;
    doc["diagnostics"] = rep.diagnostics;
    write_json_file((fs::path(tp_out) / "tests" / "representations.json").string(), doc);
    std::cout << doc.dump(2) << "\n";
    return 0;
  }

  if (*bm) {
    deepin::ExperimentConfig cfg = deepin::load_experiment_config(bm_config);
    if (bm_seed) cfg.seed = *bm_seed;
    if (bm_out) cfg.out_dir = *bm_out;
    const deepin::BenchmarkSummary summary = deepin::run_benchmark(cfg);
    std::cout << summary.summary.dump(2) << "\n";
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const deepin::contract_violation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const deepin::numerical_failure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
