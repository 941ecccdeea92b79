#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepin/datagen.hpp"
#include "deepin/inference.hpp"
#include "deepin/metrics.hpp"
#include "deepin/trainer.hpp"

namespace deepin {

using json = nlohmann::json;

/// Doubles in CSV output carry 17 significant digits so a read-back is
/// bit-exact.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// model persistence

struct SavedModel {
  DeepInModel model;
  PenaltyConfig penalty;
  std::uint64_t seed = 0;
};

inline json model_to_json(const DeepInModel& model, const PenaltyConfig& penalty,
                          std::uint64_t seed) {
  json doc;
  doc["format_version"] = 1;
  doc["task"] = task_name(model.task);
  doc["p"] = model.net.power;
  doc["B"] = {{"rows", model.rep.b.rows}, {"cols", model.rep.b.cols}, {"data", model.rep.b.data}};
  json layers = json::array();
  for (const Layer& l : model.net.layers)
    layers.push_back({{"rows", l.w.rows}, {"cols", l.w.cols}, {"W", l.w.data}, {"a", l.a}});
  doc["layers"] = layers;
  doc["masks"] = {{"rows", model.rep.active_rows}, {"cols", model.rep.active_cols}};
  doc["penalty"] = {{"lambda1", penalty.lambda1}, {"lambda2", penalty.lambda2},
                    {"lambda3", penalty.lambda3}, {"lambda4", penalty.lambda4},
                    {"tau1", penalty.tau1},       {"tau2", penalty.tau2},
                    {"tau3", penalty.tau3}};
  doc["seed"] = seed;
  return doc;
}

inline void save_model(const DeepInModel& model, const PenaltyConfig& penalty,
                       std::uint64_t seed, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw contract_violation("save_model: cannot open " + path);
  out << model_to_json(model, penalty, seed).dump(2) << "\n";
  if (!out) throw numerical_failure("save_model: write failed for " + path);
}

inline SavedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw contract_violation("load_model: cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw contract_violation("load_model: malformed model document: " + std::string(e.what()));
  }

  static const std::set<std::string> known = {"format_version", "task", "p",       "B",
                                              "layers",         "masks", "penalty", "seed"};
  for (const auto& [key, _] : doc.items())
    if (!known.count(key))
      throw contract_violation("load_model: unknown field '" + key +
                               "'; this build reads format_version 1 documents only");
  if (!doc.contains("format_version") || !doc["format_version"].is_number_integer())
    throw contract_violation("load_model: missing format_version");
  const int version = doc["format_version"].get<int>();
  if (version != 1)
    throw contract_violation("load_model: unsupported format_version " +
                             std::to_string(version) + "; this build reads version 1");

  try {
    SavedModel out;
    const std::string task = doc.at("task").get<std::string>();
    if (task == "regression")
      out.model.task = Task::regression;
    else if (task == "binary_classification")
      out.model.task = Task::binary_classification;
    else
      throw contract_violation("load_model: unknown task '" + task + "'");

    Matrix b(doc.at("B").at("rows").get<std::size_t>(), doc.at("B").at("cols").get<std::size_t>());
    const auto bdata = doc.at("B").at("data").get<Vec>();
    if (bdata.size() != b.rows * b.cols)
      throw contract_violation("load_model: B data length does not match its shape");
    b.data = bdata;
    out.model.rep = RepMatrix(std::move(b));

    out.model.net.power = doc.at("p").get<int>();
    if (out.model.net.power < 2) throw contract_violation("load_model: p must be >= 2");
    for (const auto& l : doc.at("layers")) {
      Layer layer;
      layer.w = Matrix(l.at("rows").get<std::size_t>(), l.at("cols").get<std::size_t>());
      const auto wdata = l.at("W").get<Vec>();
      if (wdata.size() != layer.w.rows * layer.w.cols)
        throw contract_violation("load_model: layer W length does not match its shape");
      layer.w.data = wdata;
      layer.a = l.at("a").get<Vec>();
      if (layer.a.size() != layer.w.rows)
        throw contract_violation("load_model: layer bias length does not match its shape");
      out.model.net.layers.push_back(std::move(layer));
    }
    if (out.model.net.layers.empty()) throw contract_violation("load_model: no layers");
    for (std::size_t l = 0; l + 1 < out.model.net.layers.size(); ++l)
      if (out.model.net.layers[l + 1].w.cols != out.model.net.layers[l].w.rows)
        throw contract_violation("load_model: layer dimensions do not chain");
    if (out.model.net.input_dim() != out.model.rep.b.rows)
      throw contract_violation("load_model: network input dim does not match B rows");

    out.model.rep.active_rows = doc.at("masks").at("rows").get<std::vector<std::uint8_t>>();
    out.model.rep.active_cols = doc.at("masks").at("cols").get<std::vector<std::uint8_t>>();
    if (out.model.rep.active_rows.size() != out.model.rep.b.rows ||
        out.model.rep.active_cols.size() != out.model.rep.b.cols)
      throw contract_violation("load_model: mask lengths do not match B");

    const auto& pen = doc.at("penalty");
    out.penalty.lambda1 = pen.at("lambda1").get<double>();
    out.penalty.lambda2 = pen.at("lambda2").get<double>();
    out.penalty.lambda3 = pen.at("lambda3").get<double>();
    out.penalty.lambda4 = pen.at("lambda4").get<double>();
    out.penalty.tau1 = pen.at("tau1").get<double>();
    out.penalty.tau2 = pen.at("tau2").get<double>();
    out.penalty.tau3 = pen.at("tau3").get<double>();
    out.seed = doc.at("seed").get<std::uint64_t>();
    return out;
  } catch (const json::exception& e) {
    throw contract_violation("load_model: malformed model document: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------
// dataset CSV

struct CsvDataset {
  Matrix x;
  Vec y;
  std::vector<std::string> feature_names;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline double parse_cell(const std::string& cell, std::size_t row, const std::string& col) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || end != begin + cell.size())
    throw contract_violation("read_dataset: parse error at row " + std::to_string(row) +
                             ", column " + col);
  if (!std::isfinite(v))
    throw contract_violation("read_dataset: non-finite value at row " + std::to_string(row) +
                             ", column " + col);
  return v;
}

}  // namespace detail

/// Reads a UTF-8, LF-terminated, comma-separated file with a header row.
/// Row numbers in errors are 1-based over data rows.
inline CsvDataset read_dataset(const std::string& path, const std::string& response = "y") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw contract_violation("read_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw contract_violation("read_dataset: empty file " + path);
  const std::vector<std::string> header = detail::split_csv_line(line);

  std::size_t y_col = header.size();
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == response) y_col = j;
  if (y_col == header.size())
    throw contract_violation("read_dataset: missing response column '" + response + "'");

  CsvDataset ds;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (j != y_col) ds.feature_names.push_back(header[j]);

  std::vector<Vec> rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (line.empty() && in.eof()) break;
    ++row_no;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw contract_violation("read_dataset: row " + std::to_string(row_no) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(header.size()));
    Vec feats;
    feats.reserve(header.size() - 1);
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const double v = detail::parse_cell(cells[j], row_no, header[j]);
      if (j == y_col)
        ds.y.push_back(v);
      else
        feats.push_back(v);
    }
    rows.push_back(std::move(feats));
  }
  if (rows.empty()) throw contract_violation("read_dataset: no data rows in " + path);
  ds.x = Matrix(rows.size(), ds.feature_names.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < ds.x.cols; ++j) ds.x(i, j) = rows[i][j];
  return ds;
}

inline void write_dataset(const std::string& path, const Matrix& x, const Vec& y,
                          const std::string& response = "y") {
  if (x.rows != y.size()) throw contract_violation("write_dataset: X/y length mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw contract_violation("write_dataset: cannot open " + path);
  for (std::size_t j = 0; j < x.cols; ++j) out << "x" << (j + 1) << ",";
  out << response << "\n";
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) out << format_real(x(i, j)) << ",";
    out << format_real(y[i]) << "\n";
  }
  if (!out) throw numerical_failure("write_dataset: write failed for " + path);
}

// ---------------------------------------------------------------------------
// experiment configuration

enum class Method { deepin, vanilla_dnn, index_model };

struct ExperimentConfig {
  // data source: exactly one of synthetic / csv_path
  std::optional<SyntheticSpec> synthetic;
  std::size_t n_test = 1000;  // synthetic test draw size
  std::string csv_path;
  std::string response = "y";
  double test_fraction = 0.25;  // csv split
  Task task = Task::regression;

  Method method = Method::deepin;
  std::size_t index_k = 1;

  std::vector<std::size_t> hidden_dims = {16, 8};
  int power = 2;

  PenaltyConfig penalty;
  bool tune_enabled = false;
  TuneGrids grids;

  TrainOptions train_options;
  std::size_t replications = 1;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
};

inline Method parse_method(const std::string& name) {
  if (name == "deepin") return Method::deepin;
  if (name == "vanilla-dnn") return Method::vanilla_dnn;
  if (name == "index-model") return Method::index_model;
  throw contract_violation("unknown method '" + name + "'");
}

inline ExperimentConfig parse_experiment_config(const json& doc) {
  ExperimentConfig cfg;
  try {
    if (doc.contains("data")) {
      const auto& d = doc["data"];
      const std::string type = d.value("type", "synthetic");
      if (type == "synthetic") {
        SyntheticSpec spec;
        spec.setting = d.value("setting", 1);
        spec.n = d.value("n", spec.n);
        spec.d = d.value("d", spec.d);
        spec.rho = d.value("rho", spec.rho);
        spec.s0 = d.value("s0", spec.s0);
        spec.d0 = d.value("d0", spec.setting == 3 ? std::size_t{10} : std::size_t{5});
        spec.sigma = d.value("sigma", spec.sigma);
        spec.scheme = d.value("scheme", std::string("equicorrelated")) == "ar1"
                          ? CorrelationScheme::ar1
                          : CorrelationScheme::equicorrelated;
        cfg.synthetic = spec;
        cfg.task = spec.task();
        cfg.n_test = d.value("n_test", cfg.n_test);
      } else if (type == "csv") {
        cfg.csv_path = d.at("path").get<std::string>();
        cfg.response = d.value("response", cfg.response);
        cfg.test_fraction = d.value("test_fraction", cfg.test_fraction);
        cfg.task = d.value("task", std::string("regression")) == "binary_classification"
                       ? Task::binary_classification
                       : Task::regression;
      } else {
        throw contract_violation("config: data.type must be 'synthetic' or 'csv'");
      }
    }
    if (doc.contains("method")) {
      cfg.method = parse_method(doc["method"].value("name", "deepin"));
      cfg.index_k = doc["method"].value("k", cfg.index_k);
    }
    if (doc.contains("architecture")) {
      cfg.hidden_dims = doc["architecture"].value("hidden", cfg.hidden_dims);
      cfg.power = doc["architecture"].value("power", cfg.power);
    }
    if (doc.contains("penalty")) {
      const auto& p = doc["penalty"];
      cfg.penalty.lambda1 = p.value("lambda1", 0.0);
      cfg.penalty.lambda2 = p.value("lambda2", 0.0);
      cfg.penalty.lambda3 = p.value("lambda3", 0.0);
      cfg.penalty.lambda4 = p.value("lambda4", 0.0);
      cfg.penalty.tau1 = p.value("tau1", 0.0);
      cfg.penalty.tau2 = p.value("tau2", 0.0);
      cfg.penalty.tau3 = p.value("tau3", 0.0);
    }
    if (doc.contains("grids")) {
      const auto& g = doc["grids"];
      cfg.tune_enabled = g.value("enabled", true);
      cfg.grids.lambda1 = g.value("lambda1", Vec{0.0});
      cfg.grids.lambda2 = g.value("lambda2", Vec{0.0});
      cfg.grids.lambda3 = g.value("lambda3", Vec{0.0});
      cfg.grids.lambda4 = g.value("lambda4", Vec{0.0});
    }
    if (doc.contains("train")) {
      const auto& t = doc["train"];
      TrainOptions& o = cfg.train_options;
      o.epochs = t.value("epochs", o.epochs);
      o.batch_size = t.value("batch_size", o.batch_size);
      o.learning_rate = t.value("learning_rate", o.learning_rate);
      o.momentum = t.value("momentum", o.momentum);
      o.truncation_period = t.value("truncation_period", o.truncation_period);
      o.warmup_epochs = t.value("warmup_epochs", o.warmup_epochs);
      o.penalty_warmup = t.value("penalty_warmup", o.penalty_warmup);
      o.truncation_enabled = t.value("truncation_enabled", o.truncation_enabled);
      o.grad_clip = t.value("grad_clip", o.grad_clip);
      o.relative_thresholds = t.value("relative_thresholds", o.relative_thresholds);
      o.rel_tau_b = t.value("rel_tau_b", o.rel_tau_b);
      o.rel_tau_theta = t.value("rel_tau_theta", o.rel_tau_theta);
      o.validation_fraction = t.value("validation_fraction", o.validation_fraction);
    }
    cfg.replications = doc.value("replications", cfg.replications);
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.out_dir = doc.value("out", cfg.out_dir);
  } catch (const json::exception& e) {
    throw contract_violation("config: " + std::string(e.what()));
  }
  if (cfg.replications < 1) throw contract_violation("config: replications must be >= 1");
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw contract_violation("config: cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw contract_violation("config: malformed JSON: " + std::string(e.what()));
  }
  return parse_experiment_config(doc);
}

// ---------------------------------------------------------------------------
// model construction per method

/// DeepIn initialization: B starts at the identity plus small noise so the
/// model begins as a vanilla network and penalties carve structure away.
inline DeepInModel make_deepin_model(std::size_t d, const std::vector<std::size_t>& hidden,
                                     int power, Task task, std::uint64_t seed) {
  Rng rng(seed);
  Matrix b = Matrix::identity(d);
  for (double& v : b.data) v += rng.normal(0.0, 0.01);
  std::vector<std::size_t> dims{d};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  RepuNetwork net = make_network(dims, power);
  init_params(net, rng);
  return make_model(std::move(b), std::move(net), task);
}

inline DeepInModel make_vanilla_model(std::size_t d, const std::vector<std::size_t>& hidden,
                                      int power, Task task, std::uint64_t seed) {
  Rng rng(seed);
  Matrix b = Matrix::identity(d);
  std::vector<std::size_t> dims{d};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  RepuNetwork net = make_network(dims, power);
  init_params(net, rng);
  return make_model(std::move(b), std::move(net), task);
}

inline DeepInModel make_index_model(std::size_t k, std::size_t d,
                                    const std::vector<std::size_t>& hidden, int power, Task task,
                                    std::uint64_t seed) {
  if (k < 1 || k > d) throw contract_violation("index model: k must lie in [1, d]");
  Rng rng(seed);
  Matrix b(k, d);
  const double bound = 0.5 * std::sqrt(6.0 / static_cast<double>(k + d));
  for (double& v : b.data) v = rng.uniform(-bound, bound);
  std::vector<std::size_t> dims{k};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  RepuNetwork net = make_network(dims, power);
  init_params(net, rng);
  return make_model(std::move(b), std::move(net), task);
}

// ---------------------------------------------------------------------------
// benchmark

struct ReplicationRow {
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  MetricsReport metrics;
};

struct BenchmarkSummary {
  std::vector<ReplicationRow> rows;
  json summary;
};

namespace detail {

struct SplitData {
  Matrix x_train, x_test;
  Vec y_train, y_test;
  const Vec* f0_test = nullptr;  // synthetic only
  Vec f0_storage;
  std::vector<std::size_t> truth;  // informative variables, empty when unknown
};

inline SplitData replication_data(const ExperimentConfig& cfg, const CsvDataset* csv,
                                  std::uint64_t rep_seed) {
  SplitData out;
  if (cfg.synthetic) {
    // one draw covering train + test rows so both sides share the same truth
    SyntheticSpec spec = *cfg.synthetic;
    const std::size_t n_train = spec.n;
    spec.n = n_train + cfg.n_test;
    spec.seed = rep_seed;
    LabeledDataset ds = gen_setting(spec);
    out.x_train = Matrix(n_train, ds.x.cols);
    out.x_test = Matrix(cfg.n_test, ds.x.cols);
    out.y_train.assign(ds.y.begin(), ds.y.begin() + n_train);
    out.y_test.assign(ds.y.begin() + n_train, ds.y.end());
    for (std::size_t i = 0; i < n_train; ++i)
      for (std::size_t j = 0; j < ds.x.cols; ++j) out.x_train(i, j) = ds.x(i, j);
    for (std::size_t i = 0; i < cfg.n_test; ++i)
      for (std::size_t j = 0; j < ds.x.cols; ++j) out.x_test(i, j) = ds.x(n_train + i, j);
    out.f0_storage.assign(ds.truth.f0.begin() + n_train, ds.truth.f0.end());
    out.f0_test = &out.f0_storage;
    out.truth = ds.truth.informative;
    return out;
  }
  if (!csv) throw contract_violation("benchmark: no data source configured");
  Rng rng(rep_seed ^ 0xc5u);
  std::vector<std::size_t> order(csv->x.rows);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const std::size_t n_test = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(cfg.test_fraction * static_cast<double>(csv->x.rows))));
  if (n_test >= csv->x.rows) throw contract_violation("benchmark: test split leaves no training rows");
  const std::size_t n_train = csv->x.rows - n_test;
  out.x_train = Matrix(n_train, csv->x.cols);
  out.x_test = Matrix(n_test, csv->x.cols);
  out.y_train.resize(n_train);
  out.y_test.resize(n_test);
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t j = 0; j < csv->x.cols; ++j) out.x_train(i, j) = csv->x(order[i], j);
    out.y_train[i] = csv->y[order[i]];
  }
  for (std::size_t i = 0; i < n_test; ++i) {
    for (std::size_t j = 0; j < csv->x.cols; ++j) out.x_test(i, j) = csv->x(order[n_train + i], j);
    out.y_test[i] = csv->y[order[n_train + i]];
  }
  return out;
}

inline DeepInModel build_method_model(const ExperimentConfig& cfg, std::size_t d,
                                      std::uint64_t seed) {
  switch (cfg.method) {
    case Method::deepin:
      return make_deepin_model(d, cfg.hidden_dims, cfg.power, cfg.task, seed);
    case Method::vanilla_dnn:
      return make_vanilla_model(d, cfg.hidden_dims, cfg.power, cfg.task, seed);
    default:
      return make_index_model(cfg.index_k, d, cfg.hidden_dims, cfg.power, cfg.task, seed);
  }
}

/// Method-specific training policy: vanilla freezes B with no penalty or
/// truncation; the index model trains a k x d B without row selection.
inline void apply_method_policy(const ExperimentConfig& cfg, PenaltyConfig& penalty,
                                TrainOptions& opts) {
  if (cfg.method == Method::vanilla_dnn) {
    penalty = PenaltyConfig{};
    opts.freeze_b = true;
    opts.truncation_enabled = false;
  } else if (cfg.method == Method::index_model) {
    penalty = PenaltyConfig{};
    opts.truncation_enabled = false;
  }
}

inline std::string opt_cell(const std::optional<double>& v) {
  return v ? format_real(*v) : std::string();
}

}  // namespace detail

inline MetricsReport evaluate_model(const DeepInModel& model, const Matrix& x_test,
                                    const Vec& y_test, const Vec* f0_test,
                                    const std::vector<std::size_t>& truth) {
  Vec pred(x_test.rows);
  Vec xi(x_test.cols);
  for (std::size_t i = 0; i < x_test.rows; ++i) {
    for (std::size_t j = 0; j < x_test.cols; ++j) xi[j] = x_test(i, j);
    pred[i] = model.task == Task::regression ? predict(model, xi) : predict_proba(model, xi);
  }
  MetricsReport m = prediction_metrics(pred, y_test, f0_test, model.task);
  const StructureTriplet st = active_structure(model);
  m.dims = st.dims;
  m.n_vars = st.n_vars;
  const NetworkStructure ns = structure(model.net);
  m.prop_zero = 1.0 - static_cast<double>(ns.nnz) / static_cast<double>(ns.size);
  if (!truth.empty()) {
    std::vector<std::size_t> selected;
    for (std::size_t j = 0; j < model.rep.b.cols; ++j)
      if (col_norm(model.rep.b, j) != 0.0) selected.push_back(j);
    const auto [tpr, fpr] = selection_metrics(selected, truth, model.rep.b.cols);
    m.tpr = tpr;
    m.fpr = fpr;
  }
  return m;
}

inline void write_replications_csv(const std::string& path,
                                   const std::vector<ReplicationRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw contract_violation("benchmark: cannot open " + path);
  out << "rep,seed,status,pe,mse,acc,auc,dims,n_vars,prop_zero,tpr,fpr\n";
  for (const ReplicationRow& r : rows) {
    out << r.rep << "," << r.seed << "," << (r.ok ? "ok" : "failed") << ","
        << detail::opt_cell(r.metrics.pe) << "," << detail::opt_cell(r.metrics.mse) << ","
        << detail::opt_cell(r.metrics.acc) << "," << detail::opt_cell(r.metrics.auc) << ","
        << r.metrics.dims << "," << r.metrics.n_vars << ","
        << detail::opt_cell(r.metrics.prop_zero) << "," << detail::opt_cell(r.metrics.tpr) << ","
        << detail::opt_cell(r.metrics.fpr) << "\n";
  }
}

inline json summarize_rows(const std::vector<ReplicationRow>& rows) {
  const auto aggregate = [&](auto getter) -> json {
    Vec vals;
    for (const ReplicationRow& r : rows) {
      if (!r.ok) continue;
      const std::optional<double> v = getter(r);
      if (v) vals.push_back(*v);
    }
    if (vals.empty()) return nullptr;
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double sd = 0.0;
    if (vals.size() > 1) {
      for (double v : vals) sd += (v - mean) * (v - mean);
      sd = std::sqrt(sd / static_cast<double>(vals.size() - 1));
    }
    return json{{"mean", mean}, {"sd", sd}, {"count", vals.size()}};
  };

  json s;
  s["pe"] = aggregate([](const ReplicationRow& r) { return r.metrics.pe; });
  s["mse"] = aggregate([](const ReplicationRow& r) { return r.metrics.mse; });
  s["acc"] = aggregate([](const ReplicationRow& r) { return r.metrics.acc; });
  s["auc"] = aggregate([](const ReplicationRow& r) { return r.metrics.auc; });
  s["tpr"] = aggregate([](const ReplicationRow& r) { return r.metrics.tpr; });
  s["fpr"] = aggregate([](const ReplicationRow& r) { return r.metrics.fpr; });
  s["prop_zero"] = aggregate([](const ReplicationRow& r) { return r.metrics.prop_zero; });
  s["dims"] = aggregate(
      [](const ReplicationRow& r) { return std::optional<double>(static_cast<double>(r.metrics.dims)); });
  s["n_vars"] = aggregate([](const ReplicationRow& r) {
    return std::optional<double>(static_cast<double>(r.metrics.n_vars));
  });
  std::size_t failures = 0;
  for (const ReplicationRow& r : rows) failures += !r.ok;
  s["failures"] = failures;
  s["replications"] = rows.size();
  return s;
}

/// Runs R replications with seeds seed+0 .. seed+R-1, writes
/// <out>/replications.csv, <out>/summary.json and <out>/models/rep_<i>.json.
/// Per-replication training failures are recorded and the run continues.
inline BenchmarkSummary run_benchmark(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  fs::create_directories(fs::path(cfg.out_dir) / "models");

  std::optional<CsvDataset> csv;
  if (!cfg.synthetic) csv = read_dataset(cfg.csv_path, cfg.response);

  BenchmarkSummary result;
  for (std::size_t rep = 0; rep < cfg.replications; ++rep) {
    ReplicationRow row;
    row.rep = rep;
    row.seed = cfg.seed + rep;
    try {
      detail::SplitData data =
          detail::replication_data(cfg, csv ? &*csv : nullptr, row.seed);
      PenaltyConfig penalty = cfg.penalty;
      TrainOptions opts = cfg.train_options;
      opts.seed = row.seed;
      detail::apply_method_policy(cfg, penalty, opts);
      if (cfg.tune_enabled && cfg.method == Method::deepin) {
        const ExperimentConfig* cfgp = &cfg;
        const std::size_t d = data.x_train.cols;
        penalty = tune(
            [cfgp, d](std::uint64_t seed) {
              return make_deepin_model(d, cfgp->hidden_dims, cfgp->power, cfgp->task, seed);
            },
            data.x_train, data.y_train, cfg.task, cfg.grids, opts);
      }
      DeepInModel model = detail::build_method_model(cfg, data.x_train.cols, row.seed);
      TrainResult tr = train(std::move(model), data.x_train, data.y_train, penalty, opts);
      row.metrics =
          evaluate_model(tr.model, data.x_test, data.y_test, data.f0_test, data.truth);
      save_model(tr.model, penalty, row.seed,
                 (fs::path(cfg.out_dir) / "models" / ("rep_" + std::to_string(rep) + ".json"))
                     .string());
    } catch (const numerical_failure& e) {
      row.ok = false;
      row.error = e.what();
    }
    result.rows.push_back(std::move(row));
  }

  write_replications_csv((fs::path(cfg.out_dir) / "replications.csv").string(), result.rows);
  result.summary = summarize_rows(result.rows);
  std::ofstream out(fs::path(cfg.out_dir) / "summary.json", std::ios::binary);
  out << result.summary.dump(2) << "\n";
  return result;
}

}  // namespace deepin
