// stiln: synthetic data, preprocessing, training and experiment drivers.
// Progress goes to stdout; failures print one JSON object on stderr and exit 1
// (2 for usage errors).

#include <png.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "stiln/checkpoint.hpp"
#include "stiln/data.hpp"
#include "stiln/harness.hpp"
#include "stiln/io.hpp"

namespace fs = std::filesystem;
using namespace stiln;

namespace {

// Share of high-arousal samples in the original recordings (10108 of 17252).
constexpr double kRecordedHighFraction = 10108.0 / (7144.0 + 10108.0);

void log_out(const std::string& s) { std::cout << s << '\n' << std::flush; }

void fail_json(const std::string& kind, const std::string& message) {
  std::cerr << ordered_json{{"error", kind}, {"message", message}}.dump() << '\n';
}

TrainConfig load_train_config(const std::string& path) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : train_config_from_json(read_json(path));
  apply_seed_override(cfg);
  return cfg;
}

std::vector<fs::path> trial_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".trial") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError(dir.string() + ": no .trial files");
  return files;
}

std::string trial_name(int subject, int trial) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%02d_t%02d.trial", subject, trial);
  return buf;
}

// --- synth -----------------------------------------------------------------

void cmd_synth(const std::string& spec_path, const fs::path& out, bool recorded_imbalance) {
  SynthSpec spec = spec_path.empty() ? SynthSpec{} : synth_spec_from_json(read_json(spec_path));
  if (recorded_imbalance) spec.high_fraction = kRecordedHighFraction;
  if (const char* env = std::getenv("STILN_SEED"); env && *env) {
    TrainConfig tmp;
    apply_seed_override(tmp);
    spec.seed = tmp.seed;
  }
  spec.validate();
  const auto trials = synth_generate(spec);
  fs::create_directories(out);
  for (const auto& t : trials) write_trial(out / trial_name(t.subject_id, t.trial_id), t);
  write_json(out / "synth.json", to_json(spec));
  log_out("wrote " + std::to_string(trials.size()) + " trials to " + out.string());
}

// --- preprocess ------------------------------------------------------------

void cmd_preprocess(const fs::path& in, const fs::path& out, const std::string& task_name_arg) {
  const Task task = parse_task(task_name_arg);
  const TopoMapper mapper;
  std::vector<LabeledSample> samples;
  std::vector<std::string> names;
  std::size_t discarded = 0;
  for (const auto& file : trial_files(in)) {
    const RawTrial clean = preprocess(read_trial(file));
    const std::array<RawTrial, 1> one{clean};
    auto part = build_dataset(one, task, mapper);
    if (part.empty()) ++discarded;
    samples.insert(samples.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    names.push_back(file.filename().string());
  }
  if (samples.empty()) throw InvalidArgument("preprocess: no labelled samples (all trials discarded or too short)");
  write_dataset(out, samples, task, names);
  std::size_t high = 0;
  for (const auto& s : samples) high += s.label == 1;
  log_out("wrote " + std::to_string(samples.size()) + " samples (" + std::to_string(high) + " high, " +
          std::to_string(samples.size() - high) + " low; " + std::to_string(discarded) + " trials contributed none) to " +
          out.string());
}

// --- train -----------------------------------------------------------------

void cmd_train(const std::string& config, const fs::path& data, const fs::path& out) {
  const TrainConfig cfg = load_train_config(config);
  const auto samples = read_dataset(data);
  for (const auto& s : samples)
    if (s.task != cfg.task) throw ConfigError("train: dataset task differs from config task");
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  Stiln<float> model(cfg.model_config(), cfg.seed);
  log_out("training " + variant_name(cfg.variant) + " (" + std::to_string(model.parameter_count()) + " parameters) on " +
          std::to_string(samples.size()) + " samples");
  const TrainResult r = train(model, samples, idx, cfg, derive_seed(cfg.seed, 0x5EED, 0), log_out);
  const Metrics m = evaluate(model, samples, idx, cfg.eval_batch, log_out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, model);
  ordered_json summary;
  summary["config"] = to_json(cfg);
  summary["model"] = to_json(model.config());
  summary["steps"] = r.steps;
  summary["loss_curve"] = r.loss_curve;
  summary["train_acc"] = m.acc;
  summary["train_f1"] = m.f1;
  write_json(fs::path(out.string() + ".train.json"), summary);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d steps, training P_acc %.4f P_F1 %.4f", r.steps, m.acc, m.f1);
  log_out(buf);
  log_out("checkpoint " + checkpoint_paths(out).index.string());
}

// --- experiments -----------------------------------------------------------

void print_written(const std::vector<fs::path>& files) {
  for (const auto& f : files) log_out("wrote " + f.string());
}

void cmd_loocv(const std::string& config, const fs::path& data, const fs::path& report, int top_k) {
  const TrainConfig cfg = load_train_config(config);
  const auto samples = read_dataset(data);
  const EvalReport r = run_loocv(samples, cfg, {.top_k = top_k, .log = log_out}, "ALL Subjects");
  const std::vector<EvalReport> reports{r};
  fs::create_directories(report);
  print_written(emit_report(reports, report, {.stem = "loocv", .style = TableStyle::summary, .row_header = "Subjects"}));
  std::cout << markdown_table(reports, TableStyle::summary, "Subjects");
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("sweep: bad grid value '" + item + "'");
    }
  }
  return out;
}

void cmd_sweep(const std::string& config, const fs::path& data, const fs::path& report, const std::string& grid_name,
               const std::string& values, int top_k) {
  const TrainConfig cfg = load_train_config(config);
  const SweepKind kind = parse_sweep_kind(grid_name);
  SweepGrid grid = SweepGrid::published(kind);
  if (!values.empty()) grid.values = parse_values(values);
  const auto samples = read_dataset(data);
  const auto reports = run_sweep(samples, cfg, grid, {.top_k = top_k, .log = log_out});
  const std::string header = kind == SweepKind::hidden ? "Hidden size" : "Learning rate";
  fs::create_directories(report);
  print_written(emit_report(reports, report, {.stem = "sweep_" + grid_name, .row_header = header}));
  const fs::path box = report / ("sweep_" + grid_name + "_boxplot.csv");
  detail::write_text(box, boxplot_csv(reports, grid_name));
  log_out("wrote " + box.string());
  std::cout << markdown_table(reports, TableStyle::settings, header);
}

void cmd_ablate(const std::string& config, const fs::path& data, const fs::path& report, int top_k) {
  const TrainConfig cfg = load_train_config(config);
  const auto samples = read_dataset(data);
  const auto reports = run_ablation(samples, cfg, {.top_k = top_k, .log = log_out});
  fs::create_directories(report);
  print_written(emit_report(reports, report, {.stem = "ablation", .row_header = "Model"}));
  std::cout << markdown_table(reports, TableStyle::settings, "Model");
}

// --- describe --------------------------------------------------------------

void cmd_describe(const std::string& config) {
  const TrainConfig cfg = load_train_config(config);
  const Stiln<float> model(cfg.model_config(), cfg.seed);
  std::cout << "| Layer | Operation | Kernel/stride | Activation | Output | Parameters |\n|---|---|---|---|---|---|\n";
  for (const auto& r : model.describe())
    std::cout << "| " << r.layer << " | " << r.operation << " | " << r.kernel << " | " << r.activation << " | "
              << r.output << " | " << r.params << " |\n";
  std::cout << "\n" << variant_name(cfg.variant) << " total parameters: " << model.parameter_count() << "\n";
}

// --- export-topo -----------------------------------------------------------

std::vector<unsigned char> to_gray(const TopoFrame& f, int band) {
  float lo = INFINITY, hi = -INFINITY;
  for (int r = 0; r < kFrameSize; ++r)
    for (int c = 0; c < kFrameSize; ++c) {
      lo = std::min(lo, f.at(r, c, band));
      hi = std::max(hi, f.at(r, c, band));
    }
  std::vector<unsigned char> px(static_cast<std::size_t>(kFrameSize * kFrameSize));
  const float span = hi > lo ? hi - lo : 1.0f;
  for (int r = 0; r < kFrameSize; ++r)
    for (int c = 0; c < kFrameSize; ++c)
      px[static_cast<std::size_t>(r * kFrameSize + c)] =
          static_cast<unsigned char>(std::lround(255.0f * (f.at(r, c, band) - lo) / span));
  return px;
}

void write_pgm(const fs::path& path, const std::vector<unsigned char>& px) {
  const std::string head = "P5\n" + std::to_string(kFrameSize) + " " + std::to_string(kFrameSize) + "\n255\n";
  detail::write_file(path, head, std::vector<char>(px.begin(), px.end()));
}

void write_png(const fs::path& path, const std::vector<unsigned char>& px) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError(path.string() + ": cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError(path.string() + ": PNG encoding failed");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, kFrameSize, kFrameSize, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < kFrameSize; ++r)
    png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<std::size_t>(r * kFrameSize)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError(path.string() + ": write failed");
}

void cmd_export_topo(const fs::path& data, const fs::path& out, int sample, bool png) {
  const auto samples = read_dataset(data);
  if (sample < 0 || static_cast<std::size_t>(sample) >= samples.size()) {
    throw InvalidArgument("export-topo: sample " + std::to_string(sample) + " out of range (dataset has " +
                          std::to_string(samples.size()) + ")");
  }
  fs::create_directories(out);
  const auto& s = samples[static_cast<std::size_t>(sample)];
  int written = 0;
  for (std::size_t t = 0; t < s.frames.size(); ++t)
    for (int b = 0; b < kBandCount; ++b) {
      const auto px = to_gray(s.frames[t], b);
      const std::string stem = "sample" + std::to_string(sample) + "_sec" + std::to_string(t + 1) + "_" + std::string(kBands[b].name);
      if (png) {
        write_png(out / (stem + ".png"), px);
      } else {
        write_pgm(out / (stem + ".pgm"), px);
      }
      ++written;
    }
  log_out("wrote " + std::to_string(written) + (png ? " PNG" : " PGM") + " maps to " + out.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STILN EEG emotion recognition: data, training and experiments"};
  app.require_subcommand(1);

  std::string spec_path, config, task = "arousal", grid = "hidden", values;
  fs::path in, out, data, report;
  bool recorded_imbalance = false, png = false;
  int top_k = 10, sample = 0;

  auto* synth = app.add_subcommand("synth", "generate synthetic trials");
  synth->add_option("--spec", spec_path, "synthetic spec JSON (defaults if omitted)")->check(CLI::ExistingFile);
  synth->add_option("--out", out, "output directory")->required();
  synth->add_flag("--recorded-imbalance", recorded_imbalance, "use the recorded high/low class ratio instead of 50/50");

  auto* prep = app.add_subcommand("preprocess", "trials -> labelled topographic-map dataset");
  prep->add_option("--in", in, "directory of .trial files")->required();
  prep->add_option("--out", out, "dataset directory")->required();
  prep->add_option("--task", task, "arousal or valence");

  auto* tr = app.add_subcommand("train", "train one model on a whole dataset and save a checkpoint");
  tr->add_option("--config", config, "training config JSON");
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--out", out, "checkpoint stem")->required();

  auto* lo = app.add_subcommand("loocv", "leave-one-subject-out evaluation");
  auto* sw = app.add_subcommand("sweep", "LOOCV over a hidden-size or learning-rate grid");
  auto* ab = app.add_subcommand("ablate", "LOOCV for NET0..NET5");
  for (auto* sub : {lo, sw, ab}) {
    sub->add_option("--config", config, "training config JSON");
    sub->add_option("--data", data, "dataset directory")->required();
    sub->add_option("--report", report, "report directory")->required();
    sub->add_option("--top-k", top_k, "subjects in the TOP-k summary row");
  }
  sw->add_option("--grid", grid, "hidden or lr")->required();
  sw->add_option("--values", values, "comma-separated grid values (default: the published grid)");

  auto* de = app.add_subcommand("describe", "print the layer table");
  de->add_option("--config", config, "training config JSON");

  auto* ex = app.add_subcommand("export-topo", "write the topographic maps of one sample as images");
  ex->add_option("--data", data, "dataset directory")->required();
  ex->add_option("--out", out, "image directory")->required();
  ex->add_option("--sample", sample, "sample index");
  ex->add_flag("--png", png, "PNG instead of PGM");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    fail_json("usage", e.what());
    return 2;
  }

  try {
    if (*synth) cmd_synth(spec_path, out, recorded_imbalance);
    if (*prep) cmd_preprocess(in, out, task);
    if (*tr) cmd_train(config, data, out);
    if (*lo) cmd_loocv(config, data, report, top_k);
    if (*sw) cmd_sweep(config, data, report, grid, values, top_k);
    if (*ab) cmd_ablate(config, data, report, top_k);
    if (*de) cmd_describe(config);
    if (*ex) cmd_export_topo(data, out, sample, png);
  } catch (const Error& e) {
    fail_json(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    fail_json("internal", e.what());
    return 1;
  }
  return 0;
}
