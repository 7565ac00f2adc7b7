#pragma once

// Training loop, metrics, experiment drivers (LOOCV, sweeps, ablation) and
// report emission in the mean (std) table layout.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stiln/data.hpp"
#include "stiln/error.hpp"
#include "stiln/io.hpp"
#include "stiln/loss.hpp"
#include "stiln/model.hpp"
#include "stiln/optim.hpp"

namespace stiln {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr = 0.0005;
  int batch_size = 256;  // clamped to the training-set size
  int epochs = 20;
  std::uint64_t seed = 0;
  Variant variant = Variant::net0;
  int lstm_hidden = 64;
  Task task = Task::arousal;
  std::array<int, 5> conv_widths{32, 64, 64, 64, 64};
  int eval_batch = 64;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch normalization)");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
    model_config();
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.lstm_hidden = lstm_hidden;
    m.conv_widths = conv_widths;
    return make_ablation(variant, m);
  }
};

inline ordered_json to_json(const ModelConfig& m) {
  ordered_json j;
  j["variant"] = variant_name(m.variant);
  j["lstm_hidden"] = m.lstm_hidden;
  j["conv_widths"] = m.conv_widths;
  j["se_ratio"] = m.se_ratio;
  j["head_stride"] = m.head_stride;
  j["fc_hidden"] = m.fc_hidden;
  j["frames"] = m.frames;
  j["input"] = {m.height, m.width, m.bands};
  j["use_cbam"] = m.use_cbam;
  j["instance_norm_early"] = m.instance_norm_early;
  j["residual_fusion"] = m.residual_fusion;
  j["use_se"] = m.use_se;
  j["bidirectional"] = m.bidirectional;
  return j;
}

inline ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["variant"] = variant_name(c.variant);
  j["lstm_hidden"] = c.lstm_hidden;
  j["task"] = task_name(c.task);
  j["conv_widths"] = c.conv_widths;
  j["eval_batch"] = c.eval_batch;
  return j;
}

inline TrainConfig train_config_from_json(const json& j) {
  static const std::set<std::string> known{"lr",   "batch_size", "epochs",      "seed",      "variant",
                                           "lstm_hidden", "task", "conv_widths", "eval_batch"};
  TrainConfig c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.variant = parse_variant(j.value("variant", variant_name(c.variant)));
    c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
    c.task = parse_task(j.value("task", task_name(c.task)));
    if (j.contains("conv_widths")) c.conv_widths = j.at("conv_widths").get<std::array<int, 5>>();
    c.eval_batch = j.value("eval_batch", c.eval_batch);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// STILN_SEED, when set, replaces the configured seed.
inline void apply_seed_override(TrainConfig& c) {
  const char* env = std::getenv("STILN_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || env[0] == '-') throw ConfigError("STILN_SEED must be a non-negative integer");
  c.seed = v;
}

using LogFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  std::vector<double> loss_curve;  // one entry per optimizer step
  int steps = 0;
};

// zero grads -> forward -> BCE -> backward -> Adam. Returns the batch loss.
template <typename T>
double train_step(Stiln<T>& model, AdamState<T>& adam, const Tensor<T>& x, const Tensor<T>& y) {
  model.zero_grad();
  Tape<T> tape;
  TapeScope<T> scope(tape);
  Tensor<T> loss = bce_loss(model.forward(x, true), y);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) {
    throw TrainingDiverged("loss is " + std::to_string(value) + " at step " + std::to_string(adam.t + 1));
  }
  backward(loss);
  auto params = model.parameter_tensors();
  adam_step<T>(adam, params);
  return value;
}

// Seeded shuffled mini-batches over `indices`. A trailing batch of one sample
// is dropped because batch normalization needs two.
template <typename T>
TrainResult train(Stiln<T>& model, std::span<const LabeledSample> samples, std::vector<std::size_t> indices,
                  const TrainConfig& cfg, std::uint64_t shuffle_seed, const LogFn& log = {}) {
  cfg.validate();
  if (indices.size() < 2) throw InvalidArgument("train: need at least 2 training samples");
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), indices.size());
  AdamState<T> adam;
  adam.lr = cfg.lr;
  std::mt19937_64 rng(shuffle_seed);
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(indices.begin(), indices.end(), rng);
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start + 2 <= indices.size(); start += bs) {
      const std::size_t len = std::min(bs, indices.size() - start);
      if (len < 2) break;
      const auto [x, y] = make_batch<T>(samples, std::span(indices).subspan(start, len));
      double loss = 0.0;
      try {
        loss = train_step(model, adam, x, y);
      } catch (const TrainingDiverged& e) {
        throw TrainingDiverged(std::string(e.what()) + " (epoch " + std::to_string(epoch + 1) + ")");
      }
      result.loss_curve.push_back(loss);
      epoch_loss += loss;
      ++epoch_steps;
    }
    result.steps += epoch_steps;
    if (log) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "epoch %d/%d mean loss %.6f", epoch + 1, cfg.epochs,
                    epoch_steps ? epoch_loss / epoch_steps : 0.0);
      log(buf);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double acc = 0.0;
  double f1 = 0.0;
  bool degenerate_f1 = false;  // no positive predictions and no positive labels
};

// "high" is the positive class.
inline Metrics confusion_metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
  const std::int64_t total = tp + fp + fn + tn;
  if (total <= 0) throw InvalidArgument("metrics: empty confusion matrix");
  Metrics m{tp, fp, fn, tn};
  m.acc = static_cast<double>(tp + tn) / static_cast<double>(total);
  const std::int64_t denom = 2 * tp + fp + fn;
  m.degenerate_f1 = denom == 0;
  m.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  return m;
}

// Inference-mode predictions (argmax of the two sigmoid outputs).
template <typename T>
std::vector<int> predict(Stiln<T>& model, std::span<const LabeledSample> samples,
                         std::span<const std::size_t> indices, int batch = 64) {
  std::vector<int> out;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t len = std::min(static_cast<std::size_t>(batch), indices.size() - start);
    const auto [x, y] = make_batch<T>(samples, indices.subspan(start, len));
    const Tensor<T> p = model.forward(x, false);
    for (std::size_t i = 0; i < len; ++i) out.push_back(p[2 * i + 1] > p[2 * i] ? 1 : 0);
  }
  return out;
}

template <typename T>
Metrics evaluate(Stiln<T>& model, std::span<const LabeledSample> samples, std::span<const std::size_t> indices,
                 int batch = 64, const LogFn& log = {}) {
  if (indices.empty()) throw InvalidArgument("evaluate: empty sample list");
  const auto pred = predict(model, samples, indices, batch);
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int truth = samples[indices[i]].label;
    if (pred[i] == 1) {
      (truth == 1 ? tp : fp)++;
    } else {
      (truth == 1 ? fn : tn)++;
    }
  }
  Metrics m = confusion_metrics(tp, fp, fn, tn);
  if (m.degenerate_f1 && log) log("warning: F1 undefined (no positive labels or predictions); reported as 0");
  return m;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct SubjectRow {
  int subject = 0;
  double acc = 0.0;
  double f1 = 0.0;
  std::int64_t n = 0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline MeanStd mean_std(std::span<const double> v) {
  if (v.empty()) return {};
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / static_cast<double>(v.size());
  double q = 0.0;
  for (double x : v) q += (x - mean) * (x - mean);
  return {mean, std::sqrt(q / static_cast<double>(v.size()))};
}

struct EvalReport {
  std::string label;  // table row label: sweep value, variant name, ...
  Task task = Task::arousal;
  std::vector<SubjectRow> per_subject;
  double mean_acc = 0.0, std_acc = 0.0, mean_f1 = 0.0, std_f1 = 0.0;
  int top_k = 10;
  double top_mean_acc = 0.0, top_std_acc = 0.0, top_mean_f1 = 0.0, top_std_f1 = 0.0;
  std::uint64_t split_hash = 0;
  std::int64_t parameter_count = 0;
  ordered_json config = ordered_json::object();

  // Aggregates are pure functions of per_subject. The top-k block covers the k
  // subjects with the highest accuracy (ties: lower subject id first).
  void recompute() {
    std::vector<double> acc, f1;
    for (const auto& r : per_subject) {
      acc.push_back(r.acc);
      f1.push_back(r.f1);
    }
    const MeanStd a = mean_std(acc), f = mean_std(f1);
    mean_acc = a.mean;
    std_acc = a.std;
    mean_f1 = f.mean;
    std_f1 = f.std;
    std::vector<SubjectRow> ranked = per_subject;
    std::stable_sort(ranked.begin(), ranked.end(), [](const SubjectRow& x, const SubjectRow& y) {
      return x.acc != y.acc ? x.acc > y.acc : x.subject < y.subject;
    });
    ranked.resize(std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(std::max(top_k, 0))));
    acc.clear();
    f1.clear();
    for (const auto& r : ranked) {
      acc.push_back(r.acc);
      f1.push_back(r.f1);
    }
    const MeanStd ta = mean_std(acc), tf = mean_std(f1);
    top_mean_acc = ta.mean;
    top_std_acc = ta.std;
    top_mean_f1 = tf.mean;
    top_std_f1 = tf.std;
  }
};

inline ordered_json to_json(const EvalReport& r) {
  ordered_json j;
  j["label"] = r.label;
  j["task"] = task_name(r.task);
  ordered_json rows = ordered_json::array();
  for (const auto& s : r.per_subject) rows.push_back({{"subject", s.subject}, {"p_acc", s.acc}, {"p_f1", s.f1}, {"n", s.n}});
  j["per_subject"] = rows;
  j["mean_acc"] = r.mean_acc;
  j["std_acc"] = r.std_acc;
  j["mean_f1"] = r.mean_f1;
  j["std_f1"] = r.std_f1;
  j["top_k"] = r.top_k;
  j["top_mean_acc"] = r.top_mean_acc;
  j["top_std_acc"] = r.top_std_acc;
  j["top_mean_f1"] = r.top_mean_f1;
  j["top_std_f1"] = r.top_std_f1;
  j["split_hash"] = r.split_hash;
  j["parameter_count"] = r.parameter_count;
  j["config"] = r.config;
  return j;
}

inline EvalReport report_from_json(const ordered_json& j) {
  EvalReport r;
  try {
    r.label = j.at("label").get<std::string>();
    r.task = parse_task(j.at("task").get<std::string>());
    for (const auto& s : j.at("per_subject")) {
      r.per_subject.push_back({s.at("subject").get<int>(), s.at("p_acc").get<double>(), s.at("p_f1").get<double>(),
                               s.at("n").get<std::int64_t>()});
    }
    r.mean_acc = j.at("mean_acc").get<double>();
    r.std_acc = j.at("std_acc").get<double>();
    r.mean_f1 = j.at("mean_f1").get<double>();
    r.std_f1 = j.at("std_f1").get<double>();
    r.top_k = j.at("top_k").get<int>();
    r.top_mean_acc = j.at("top_mean_acc").get<double>();
    r.top_std_acc = j.at("top_std_acc").get<double>();
    r.top_mean_f1 = j.at("top_mean_f1").get<double>();
    r.top_std_f1 = j.at("top_std_f1").get<double>();
    r.split_hash = j.at("split_hash").get<std::uint64_t>();
    r.parameter_count = j.at("parameter_count").get<std::int64_t>();
    r.config = j.at("config");
  } catch (const json::exception& e) {
    throw IoError(std::string("report: ") + e.what());
  }
  return r;
}

inline bool operator==(const SubjectRow& a, const SubjectRow& b) {
  return a.subject == b.subject && a.acc == b.acc && a.f1 == b.f1 && a.n == b.n;
}

inline bool operator==(const EvalReport& a, const EvalReport& b) {
  return a.label == b.label && a.task == b.task && a.per_subject == b.per_subject && a.mean_acc == b.mean_acc &&
         a.std_acc == b.std_acc && a.mean_f1 == b.mean_f1 && a.std_f1 == b.std_f1 && a.top_k == b.top_k &&
         a.top_mean_acc == b.top_mean_acc && a.top_std_acc == b.top_std_acc && a.top_mean_f1 == b.top_mean_f1 &&
         a.top_std_f1 == b.top_std_f1 && a.split_hash == b.split_hash && a.parameter_count == b.parameter_count &&
         a.config == b.config;
}

inline std::vector<EvalReport> load_reports(const std::filesystem::path& path) {
  ordered_json j;
  try {
    j = ordered_json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw IoError(path.string() + ": expected an array of reports");
  std::vector<EvalReport> out;
  for (const auto& item : j) out.push_back(report_from_json(item));
  return out;
}

// ---------------------------------------------------------------------------
// Experiment drivers
// ---------------------------------------------------------------------------

struct RunOptions {
  int top_k = 10;
  LogFn log;
};

// Leave-one-subject-out: a freshly seeded model per fold (checked by checksum),
// trained on every other subject and scored on the held-out one.
inline EvalReport run_loocv(std::span<const LabeledSample> samples, const TrainConfig& cfg,
                            const RunOptions& opt = {}, std::string label = "ALL Subjects") {
  cfg.validate();
  if (samples.empty()) throw InvalidArgument("run_loocv: empty dataset");
  for (const auto& s : samples) {
    if (s.task != cfg.task) throw ConfigError("run_loocv: dataset task differs from config task");
  }
  const auto subjects = subjects_of(samples);
  const SplitPlan plan = loocv_split(subjects);
  const ModelConfig mc = cfg.model_config();
  EvalReport report;
  report.label = std::move(label);
  report.task = cfg.task;
  report.top_k = opt.top_k;
  report.split_hash = plan.hash();
  report.config = to_json(cfg);
  std::uint64_t init_checksum = 0;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const Fold& fold = plan.folds[f];
    Stiln<float> model(mc, cfg.seed);
    if (f == 0) {
      init_checksum = model.checksum();
      report.parameter_count = model.parameter_count();
    } else if (model.checksum() != init_checksum) {
      throw ContractViolation("run_loocv: fold " + std::to_string(f + 1) + " did not start from the seeded init");
    }
    const FoldIndices idx = fold_indices(samples, fold);
    if (idx.train.empty() || idx.test.empty()) {
      throw InvalidArgument("run_loocv: subject " + std::to_string(fold.test_subject) + " leaves an empty split");
    }
    if (opt.log) {
      opt.log("fold " + std::to_string(f + 1) + "/" + std::to_string(plan.folds.size()) + ": test subject " +
              std::to_string(fold.test_subject) + ", " + std::to_string(idx.train.size()) + " train / " +
              std::to_string(idx.test.size()) + " test samples");
    }
    train(model, samples, idx.train, cfg, derive_seed(cfg.seed, 0x5EED, f + 1), opt.log);
    const Metrics m = evaluate(model, samples, idx.test, cfg.eval_batch, opt.log);
    if (opt.log) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "subject %d: P_acc %.4f P_F1 %.4f", fold.test_subject, m.acc, m.f1);
      opt.log(buf);
    }
    report.per_subject.push_back({fold.test_subject, m.acc, m.f1, static_cast<std::int64_t>(idx.test.size())});
  }
  report.recompute();
  return report;
}

enum class SweepKind { hidden, lr };

struct SweepGrid {
  SweepKind kind = SweepKind::hidden;
  std::vector<double> values;

  static SweepGrid published(SweepKind kind) {
    if (kind == SweepKind::hidden) return {kind, {16, 32, 64, 128, 256}};
    return {kind, {0.0001, 0.0005, 0.001}};
  }
};

inline SweepKind parse_sweep_kind(const std::string& s) {
  if (s == "hidden") return SweepKind::hidden;
  if (s == "lr") return SweepKind::lr;
  throw ConfigError("unknown sweep grid '" + s + "' (expected hidden or lr)");
}

inline std::string format_setting(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// One LOOCV per grid value; every other setting is held fixed.
inline std::vector<EvalReport> run_sweep(std::span<const LabeledSample> samples, const TrainConfig& base,
                                         const SweepGrid& grid, const RunOptions& opt = {}) {
  if (grid.values.empty()) throw InvalidArgument("run_sweep: empty grid");
  std::vector<EvalReport> out;
  for (double v : grid.values) {
    TrainConfig cfg = base;
    if (grid.kind == SweepKind::hidden) {
      if (!(v >= 1.0) || v != std::floor(v)) throw InvalidArgument("run_sweep: hidden sizes must be positive integers");
      cfg.lstm_hidden = static_cast<int>(v);
    } else {
      if (!(v > 0.0)) throw InvalidArgument("run_sweep: learning rates must be positive");
      cfg.lr = v;
    }
    if (opt.log) opt.log((grid.kind == SweepKind::hidden ? "hidden " : "lr ") + format_setting(v));
    out.push_back(run_loocv(samples, cfg, opt, format_setting(v)));
  }
  return out;
}

// NET0..NET5 on identical data, splits and seeds.
inline std::vector<EvalReport> run_ablation(std::span<const LabeledSample> samples, const TrainConfig& base,
                                            const RunOptions& opt = {}) {
  std::vector<EvalReport> out;
  for (Variant v : kAllVariants) {
    TrainConfig cfg = base;
    cfg.variant = v;
    if (opt.log) opt.log(variant_name(v));
    out.push_back(run_loocv(samples, cfg, opt, variant_name(v)));
    if (out.back().split_hash != out.front().split_hash) {
      throw ContractViolation("run_ablation: " + variant_name(v) + " used different folds");
    }
  }
  const auto count = [&](Variant v) { return out[static_cast<std::size_t>(v)].parameter_count; };
  for (Variant v : {Variant::net1, Variant::net4, Variant::net5}) {
    if (!(count(v) < count(Variant::net0))) {
      throw ContractViolation("run_ablation: " + variant_name(v) + " does not have fewer parameters than NET0");
    }
  }
  if (opt.log) {
    for (const auto& r : out) opt.log(r.label + " parameters: " + std::to_string(r.parameter_count));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

inline std::string format_cell(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f (%.4f)", mean, std);
  return buf;
}

inline std::string full_precision(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

enum class TableStyle {
  summary,   // TOPk / ALL subject rows per task
  settings,  // one row per report label
};

// Rows are report labels (or TOPk/ALL for summary), columns P_acc and P_F1 per
// task present, cells "mean (std)".
inline std::string markdown_table(std::span<const EvalReport> reports, TableStyle style,
                                  const std::string& row_header) {
  std::vector<Task> tasks;
  for (Task t : {Task::arousal, Task::valence}) {
    if (std::any_of(reports.begin(), reports.end(), [&](const EvalReport& r) { return r.task == t; })) tasks.push_back(t);
  }
  std::vector<std::string> rows;
  std::map<std::pair<std::string, Task>, std::pair<std::string, std::string>> cells;
  auto add_row = [&](const std::string& row, Task t, std::string acc, std::string f1) {
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
    cells[{row, t}] = {std::move(acc), std::move(f1)};
  };
  for (const auto& r : reports) {
    if (style == TableStyle::summary) {
      add_row("TOP" + std::to_string(r.top_k) + " Subjects", r.task, format_cell(r.top_mean_acc, r.top_std_acc),
              format_cell(r.top_mean_f1, r.top_std_f1));
      add_row("ALL Subjects", r.task, format_cell(r.mean_acc, r.std_acc), format_cell(r.mean_f1, r.std_f1));
    } else {
      add_row(r.label, r.task, format_cell(r.mean_acc, r.std_acc), format_cell(r.mean_f1, r.std_f1));
    }
  }
  std::string md = "| " + row_header + " |";
  std::string rule = "|---|";
  for (Task t : tasks) {
    const std::string name = t == Task::arousal ? "Arousal" : "Valence";
    md += " " + name + " P_acc | " + name + " P_F1 |";
    rule += "---|---|";
  }
  md += "\n" + rule + "\n";
  for (const auto& row : rows) {
    md += "| " + row + " |";
    for (Task t : tasks) {
      const auto it = cells.find({row, t});
      md += it == cells.end() ? " - | - |" : " " + it->second.first + " | " + it->second.second + " |";
    }
    md += "\n";
  }
  md += "\nStandard deviation in brackets.\n";
  return md;
}

inline std::string report_csv(std::span<const EvalReport> reports) {
  std::string csv = "label,task,subject,n,p_acc,p_f1\n";
  for (const auto& r : reports) {
    for (const auto& s : r.per_subject) {
      csv += r.label + "," + task_name(r.task) + "," + std::to_string(s.subject) + "," + std::to_string(s.n) + "," +
             full_precision(s.acc) + "," + full_precision(s.f1) + "\n";
    }
    csv += r.label + "," + task_name(r.task) + ",mean,," + full_precision(r.mean_acc) + "," + full_precision(r.mean_f1) + "\n";
    csv += r.label + "," + task_name(r.task) + ",std,," + full_precision(r.std_acc) + "," + full_precision(r.std_f1) + "\n";
  }
  return csv;
}

// Per-subject rows only, one line per (setting, subject): box-plot input.
inline std::string boxplot_csv(std::span<const EvalReport> reports, const std::string& setting_header) {
  std::string csv = setting_header + ",task,subject,p_acc,p_f1\n";
  for (const auto& r : reports)
    for (const auto& s : r.per_subject)
      csv += r.label + "," + task_name(r.task) + "," + std::to_string(s.subject) + "," + full_precision(s.acc) + "," +
             full_precision(s.f1) + "\n";
  return csv;
}

enum class ReportFormat { csv, json, markdown };

struct EmitOptions {
  std::string stem = "report";
  TableStyle style = TableStyle::settings;
  std::string row_header = "Setting";
  std::vector<ReportFormat> formats{ReportFormat::csv, ReportFormat::json, ReportFormat::markdown};
};

// Renders every requested format before writing anything, so a rejected call
// leaves no partial output. Returns the written paths.
inline std::vector<std::filesystem::path> emit_report(std::span<const EvalReport> reports,
                                                      const std::filesystem::path& dir, const EmitOptions& opt = {}) {
  if (reports.empty()) throw InvalidArgument("emit_report: no reports");
  if (opt.formats.empty()) throw InvalidArgument("emit_report: no formats requested");
  std::vector<std::pair<std::filesystem::path, std::string>> files;
  for (ReportFormat f : opt.formats) {
    switch (f) {
      case ReportFormat::csv:
        files.emplace_back(dir / (opt.stem + ".csv"), report_csv(reports));
        break;
      case ReportFormat::json: {
        ordered_json arr = ordered_json::array();
        for (const auto& r : reports) arr.push_back(to_json(r));
        files.emplace_back(dir / (opt.stem + ".json"), arr.dump(2) + "\n");
        break;
      }
      case ReportFormat::markdown:
        files.emplace_back(dir / (opt.stem + ".md"), markdown_table(reports, opt.style, opt.row_header));
        break;
    }
  }
  std::vector<std::filesystem::path> written;
  for (const auto& [path, text] : files) {
    detail::write_text(path, text);
    written.push_back(path);
  }
  return written;
}

}  // namespace stiln
