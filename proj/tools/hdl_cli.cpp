// Command-line front end: dataset generation, training, evaluation, gradient
// checking, and plot/comparison data extraction.
//
// Exit codes: 0 success, 1 check/assertion failure, 2 usage/config error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hdl/report.hpp"
#include "hdl/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Thrown for problems the user can fix by changing arguments or files.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw UsageError("cannot write " + path);
  f << j.dump(2) << "\n";
}

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw UsageError(path + ": not valid JSON: " + e.what());
  }
  return j;
}

template <typename V>
V jget(const json& j, const std::string& section, const std::string& key) {
  if (!j.contains(section) || !j[section].contains(key))
    throw UsageError("config file is missing \"" + section + "." + key + "\"");
  try {
    return j[section][key].get<V>();
  } catch (const std::exception& e) {
    throw UsageError("config field \"" + section + "." + key + "\": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  std::string preset = "shapes-desk";
  std::uint64_t seed = 0;
  std::int64_t train_count = -1, test_count = -1, image_size = -1;
  bool stratified = false;
};

hdl::ShapesConfig resolve_generate_config(const GenerateArgs& a) {
  hdl::ShapesConfig cfg;
  if (a.preset == "shapes-desk") {
    cfg.image_size = 32;
    cfg.train_count = 2000;
    cfg.test_count = 600;
  } else {  // shapes-paper
    cfg.image_size = 128;
    cfg.train_count = 20000;
    cfg.test_count = 6000;
  }
  if (a.train_count >= 0) cfg.train_count = a.train_count;
  if (a.test_count >= 0) cfg.test_count = a.test_count;
  if (a.image_size >= 0) cfg.image_size = a.image_size;
  cfg.seed = a.seed;
  cfg.stratified = a.stratified;
  return cfg;
}

int cmd_generate(const GenerateArgs& a) {
  const hdl::ShapesConfig cfg = resolve_generate_config(a);
  generate_shapes(cfg, a.out);

  const hdl::Taxonomy tax = hdl::Taxonomy::load(a.out + "/taxonomy.txt");
  std::int64_t classes = 0;
  for (const auto& level : tax.levels()) classes += static_cast<std::int64_t>(level.classes.size());
  std::cout << "wrote " << cfg.train_count << " train / " << cfg.test_count << " test images ("
            << cfg.image_size << "x" << cfg.image_size << ") to " << a.out << "\n"
            << "taxonomy: " << tax.num_levels() << " levels, " << classes << " classes, "
            << tax.count_valid_paths() << " valid label paths\n";

  json j;
  j["command"] = "generate";
  j["preset"] = a.preset;
  j["generate"] = {{"image_size", cfg.image_size},
                   {"train_count", cfg.train_count},
                   {"test_count", cfg.test_count},
                   {"seed", cfg.seed},
                   {"stratified", cfg.stratified},
                   {"min_scale", cfg.min_scale},
                   {"max_scale", cfg.max_scale},
                   {"border_thickness", cfg.thickness()}};
  j["outputs"] = {{"taxonomy", "taxonomy.txt"},
                  {"train_manifest", "train_manifest.csv"},
                  {"test_manifest", "test_manifest.csv"}};
  write_json_file(a.out + "/generate_config.json", j);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out = ".";
  std::string preset;  // empty = no preset
  double lr = 0.005;
  std::int64_t batch = 64;
  std::int64_t epochs = 30;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> widths = {64, 128, 256, 512};
  std::int64_t blocks = 1;
  std::int64_t stem_kernel = 7;
  std::int64_t stem_stride = 2;
  bool no_residual = false;
  std::vector<double> lambdas;  // empty = all 1
  std::int64_t center_level = 0;  // 1-based; 0 = widest level
  bool cascade_softmax = false;
  bool center_normalize = false;
  std::int64_t baseline_level = 0;  // 1-based; 0 = full cascade
  bool center_alpha_batch = false;
  double center_alpha = 0.5;
  bool fixed_timing = false;
  bool f64 = false;
  bool quiet = false;
};

// Preset values apply only to options the user left untouched.
void apply_train_preset(const CLI::App& cmd, TrainArgs& a) {
  if (a.preset.empty()) return;
  auto unset = [&](const std::string& flag) { return cmd.count(flag) == 0; };
  if (a.preset == "shapes-desk") {
    if (unset("--widths")) a.widths = {32, 96};
    if (unset("--blocks")) a.blocks = 1;
    // 3x3 stem: at 32x32 a 7x7/2 stem blurs the thin border ring away.
    if (unset("--stem-kernel")) a.stem_kernel = 3;
    if (unset("--lambdas")) a.lambdas = {0.1, 1.0, 1.0, 1.0};
    if (unset("--center-normalize")) a.center_normalize = true;
    if (unset("--epochs")) a.epochs = 30;
  } else {  // shapes-paper
    if (unset("--widths")) a.widths = {64, 128, 256, 512};
    if (unset("--blocks")) a.blocks = 2;
    if (unset("--epochs")) a.epochs = 30;
  }
}

std::string method_name(const TrainArgs& a) {
  return a.baseline_level > 0 ? "baseline_l" + std::to_string(a.baseline_level) : "hdl";
}

template <typename T>
int run_train(const TrainArgs& a, const hdl::Taxonomy& tax, std::vector<hdl::Sample> train_samples,
              std::vector<hdl::Sample> test_samples) {
  hdl::BackboneConfig bcfg;
  bcfg.in_h = train_samples.front().image.height;
  bcfg.in_w = train_samples.front().image.width;
  bcfg.stage_widths = a.widths;
  bcfg.blocks_per_stage = a.blocks;
  bcfg.stem_kernel = a.stem_kernel;
  bcfg.stem_stride = a.stem_stride;
  bcfg.residual = !a.no_residual;

  hdl::HeadConfig hcfg;
  hcfg.feature_dim = bcfg.feature_dim();
  hcfg.cascade_softmax = a.cascade_softmax;
  hcfg.center_normalize = a.center_normalize;
  if (a.baseline_level > 0) {
    const auto n_levels = static_cast<std::int64_t>(tax.num_levels());
    if (a.baseline_level > n_levels)
      throw UsageError("baseline level " + std::to_string(a.baseline_level) +
                       " exceeds the taxonomy's " + std::to_string(n_levels) + " levels");
    hcfg.level_sizes = {static_cast<std::int64_t>(
        tax.level(static_cast<std::size_t>(a.baseline_level - 1)).classes.size())};
    hcfg.lambdas = {0.0, 1.0};  // plain cross-entropy
  } else {
    for (const auto& level : tax.levels())
      hcfg.level_sizes.push_back(static_cast<std::int64_t>(level.classes.size()));
    hcfg.lambdas = a.lambdas;
    if (a.center_level > 0) hcfg.center_level = a.center_level - 1;
  }
  hcfg.validate();

  hdl::TrainConfig tcfg;
  tcfg.lr = a.lr;
  tcfg.batch_size = a.batch;
  tcfg.epochs = a.epochs;
  tcfg.seed = a.seed;
  tcfg.center_alpha_batch = a.center_alpha_batch;
  tcfg.center_alpha = a.center_alpha;
  tcfg.baseline_level = a.baseline_level;
  tcfg.fixed_timing = a.fixed_timing;
  tcfg.validate();

  fs::create_directories(a.out);
  const std::string metrics_path = a.out + "/metrics.csv";
  const std::string params_path = a.out + "/params.bin";
  const std::string config_path = a.out + "/train_config.json";

  json j;
  j["command"] = "train";
  j["method"] = method_name(a);
  j["preset"] = a.preset;
  j["precision"] = a.f64 ? "f64" : "f32";
  j["data"] = {{"dir", a.data},
               {"taxonomy", a.data + "/taxonomy.txt"},
               {"train_manifest", a.data + "/train_manifest.csv"},
               {"test_manifest", a.data + "/test_manifest.csv"},
               {"train_count", train_samples.size()},
               {"test_count", test_samples.size()},
               {"image_height", bcfg.in_h},
               {"image_width", bcfg.in_w}};
  j["backbone"] = {{"in_channels", bcfg.in_channels},
                   {"in_h", bcfg.in_h},
                   {"in_w", bcfg.in_w},
                   {"stem_kernel", bcfg.stem_kernel},
                   {"stem_stride", bcfg.stem_stride},
                   {"stage_widths", bcfg.stage_widths},
                   {"blocks_per_stage", bcfg.blocks_per_stage},
                   {"residual", bcfg.residual},
                   {"feature_dim", bcfg.feature_dim()}};
  j["head"] = {{"level_sizes", hcfg.level_sizes},
               {"lambdas", hcfg.resolved_lambdas()},
               {"center_level", hcfg.resolved_center_level() + 1},
               {"cascade_softmax", hcfg.cascade_softmax},
               {"center_normalize", hcfg.center_normalize}};
  j["train"] = {{"lr", tcfg.lr},
                {"batch_size", tcfg.batch_size},
                {"epochs", tcfg.epochs},
                {"seed", tcfg.seed},
                {"beta1", tcfg.beta1},
                {"beta2", tcfg.beta2},
                {"adam_eps", tcfg.adam_eps},
                {"center_alpha_batch", tcfg.center_alpha_batch},
                {"center_alpha", tcfg.center_alpha},
                {"baseline_level", tcfg.baseline_level},
                {"fixed_timing", tcfg.fixed_timing}};
  j["outputs"] = {{"metrics_csv", "metrics.csv"}, {"params", "params.bin"}};
  write_json_file(config_path, j);

  auto model = hdl::HdlModel<T>::build(bcfg, hcfg, a.seed);
  std::vector<hdl::MetricsRecord> history;
  try {
    history = hdl::train(model, train_samples, test_samples, tax, tcfg, metrics_path,
                         a.quiet ? nullptr : &std::cout);
  } catch (const hdl::Error& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  save_params(params_path, model.to_named_tensors());

  const hdl::MetricsRecord& last = history.back();
  std::cout << "final loss " << hdl::format_fixed(last.loss_total, 6) << ", accuracy";
  for (double acc : last.acc_levels) std::cout << " " << hdl::format_fixed(acc, 4);
  std::cout << "\nwrote " << metrics_path << ", " << params_path << ", " << config_path << "\n";
  return kExitOk;
}

int cmd_train(const CLI::App& cmd, TrainArgs a) {
  apply_train_preset(cmd, a);
  const hdl::Taxonomy tax = hdl::Taxonomy::load(a.data + "/taxonomy.txt");
  std::vector<hdl::Sample> train_samples =
      hdl::load_dataset(a.data + "/train_manifest.csv", tax);
  std::vector<hdl::Sample> test_samples = hdl::load_dataset(a.data + "/test_manifest.csv", tax);
  if (a.f64) return run_train<double>(a, tax, std::move(train_samples), std::move(test_samples));
  return run_train<float>(a, tax, std::move(train_samples), std::move(test_samples));
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string params;
  std::string config;  // default: train_config.json next to params
  std::string split = "test";
  std::int64_t batch = 64;
  bool as_json = false;
};

template <typename T>
int run_eval(const EvalArgs& a, const json& cfg_json) {
  hdl::BackboneConfig bcfg;
  bcfg.in_channels = jget<std::int64_t>(cfg_json, "backbone", "in_channels");
  bcfg.in_h = jget<std::int64_t>(cfg_json, "backbone", "in_h");
  bcfg.in_w = jget<std::int64_t>(cfg_json, "backbone", "in_w");
  bcfg.stem_kernel = jget<std::int64_t>(cfg_json, "backbone", "stem_kernel");
  bcfg.stem_stride = jget<std::int64_t>(cfg_json, "backbone", "stem_stride");
  bcfg.stage_widths = jget<std::vector<std::int64_t>>(cfg_json, "backbone", "stage_widths");
  bcfg.blocks_per_stage = jget<std::int64_t>(cfg_json, "backbone", "blocks_per_stage");
  bcfg.residual = jget<bool>(cfg_json, "backbone", "residual");

  hdl::HeadConfig hcfg;
  hcfg.level_sizes = jget<std::vector<std::int64_t>>(cfg_json, "head", "level_sizes");
  hcfg.feature_dim = bcfg.feature_dim();
  hcfg.lambdas = jget<std::vector<double>>(cfg_json, "head", "lambdas");
  hcfg.center_level = jget<std::int64_t>(cfg_json, "head", "center_level") - 1;
  hcfg.cascade_softmax = jget<bool>(cfg_json, "head", "cascade_softmax");
  hcfg.center_normalize = jget<bool>(cfg_json, "head", "center_normalize");

  const auto baseline_level = jget<std::int64_t>(cfg_json, "train", "baseline_level");

  auto model = hdl::HdlModel<T>::build(bcfg, hcfg, 0);
  model.load_named_tensors(hdl::load_params<T>(a.params));

  const hdl::Taxonomy tax = hdl::Taxonomy::load(a.data + "/taxonomy.txt");
  // The model must fit the taxonomy it is evaluated against.
  if (baseline_level > 0) {
    if (baseline_level > static_cast<std::int64_t>(tax.num_levels()) ||
        hcfg.level_sizes[0] !=
            static_cast<std::int64_t>(
                tax.level(static_cast<std::size_t>(baseline_level - 1)).classes.size()))
      throw UsageError("model's baseline level does not match the taxonomy in " + a.data);
  } else {
    bool ok = hcfg.level_sizes.size() == tax.num_levels();
    for (std::size_t l = 0; ok && l < tax.num_levels(); ++l)
      ok = hcfg.level_sizes[l] == static_cast<std::int64_t>(tax.level(l).classes.size());
    if (!ok) throw UsageError("model's level sizes do not match the taxonomy in " + a.data);
  }

  const std::vector<hdl::Sample> samples =
      hdl::load_dataset(a.data + "/" + a.split + "_manifest.csv", tax);

  hdl::EvalResult ev;
  try {
    ev = evaluate(model, samples, tax, static_cast<std::size_t>(a.batch), baseline_level);
  } catch (const hdl::Error& e) {
    std::cerr << "evaluation failed: " << e.what() << "\n";
    return kExitCheckFailed;
  }

  if (a.as_json) {
    json out;
    out["split"] = a.split;
    out["samples"] = samples.size();
    json levels = json::array();
    for (std::size_t l = 0; l < tax.num_levels(); ++l) {
      const bool predicted =
          baseline_level == 0 || static_cast<std::int64_t>(l + 1) == baseline_level;
      json entry = {{"level", l + 1}, {"name", tax.level(l).name}};
      if (predicted)
        entry["accuracy"] = ev.acc_levels[l];
      else
        entry["accuracy"] = nullptr;  // this baseline does not predict the level
      levels.push_back(entry);
    }
    out["accuracy_per_level"] = levels;
    if (baseline_level == 0) {
      out["violation_rate"] = ev.violation_rate;
      out["path_accuracy"] = ev.path_acc;
    }
    std::cout << out.dump(2) << "\n";
    return kExitOk;
  }

  std::cout << "split " << a.split << " (" << samples.size() << " samples)\n";
  for (std::size_t l = 0; l < tax.num_levels(); ++l) {
    std::cout << "level " << (l + 1) << " (" << tax.level(l).name
              << "): accuracy " << hdl::format_fixed(ev.acc_levels[l], 4);
    if (baseline_level > 0 && static_cast<std::int64_t>(l + 1) != baseline_level)
      std::cout << "  [not predicted by this baseline model]";
    std::cout << "\n";
  }
  if (baseline_level == 0)
    std::cout << "violation_rate " << hdl::format_fixed(ev.violation_rate, 4)
              << "\npath_accuracy " << hdl::format_fixed(ev.path_acc, 4) << "\n";
  return kExitOk;
}

int cmd_eval(EvalArgs a) {
  if (a.config.empty())
    a.config = (fs::path(a.params).parent_path() / "train_config.json").string();
  const json cfg_json = read_json_file(a.config);
  if (!cfg_json.contains("precision"))
    throw UsageError(a.config + ": missing \"precision\"");
  const std::string precision = cfg_json["precision"].get<std::string>();
  if (precision == "f64") return run_eval<double>(a, cfg_json);
  if (precision == "f32") return run_eval<float>(a, cfg_json);
  throw UsageError(a.config + ": unknown precision \"" + precision + "\"");
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
  int seeds = 20;
  std::uint64_t base_seed = 1234;
  bool full_model = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const std::vector<hdl::OpCheckResult> results = hdl::run_gradcheck_suite(a.seeds, a.base_seed);

  // One line per op with the worst error across seeds.
  struct Agg {
    double max_rel_err = 0;
    double tolerance = 0;
    bool pass = true;
  };
  std::map<std::string, Agg> by_op;
  for (const auto& r : results) {
    const std::string op = r.op.substr(0, r.op.find('#'));
    Agg& agg = by_op[op];
    agg.max_rel_err = std::max(agg.max_rel_err, r.max_rel_err);
    agg.tolerance = r.tolerance;
    agg.pass = agg.pass && r.pass;
  }

  bool all_pass = true;
  char line[160];
  for (const auto& [op, agg] : by_op) {
    std::snprintf(line, sizeof line, "%-24s max rel err %.3e  (tol %.0e)  %s", op.c_str(),
                  agg.max_rel_err, agg.tolerance, agg.pass ? "PASS" : "FAIL");
    std::cout << line << "\n";
    all_pass = all_pass && agg.pass;
  }

  if (a.full_model) {
    const hdl::GradCheckReport rep = hdl::full_model_grad_check(a.base_seed);
    const bool pass = rep.pass(1e-4);
    std::snprintf(line, sizeof line, "%-24s max rel err %.3e  (tol %.0e)  %s", "full_model",
                  rep.max_rel_err, 1e-4, pass ? "PASS" : "FAIL");
    std::cout << line << "\n";
    all_pass = all_pass && pass;
  }

  std::cout << (all_pass ? "all gradient checks passed" : "gradient checks FAILED") << "\n";
  return all_pass ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// plotdata
// ---------------------------------------------------------------------------

struct PlotdataArgs {
  std::vector<std::string> metrics;
  std::string out;         // empty = stdout
  std::string comparison;  // when set, also write a method/level/lr table
};

int cmd_plotdata(const PlotdataArgs& a) {
  const hdl::ParsedMetrics first = hdl::parse_metrics_csv(a.metrics.front());
  if (a.out.empty()) {
    hdl::write_plotdata(first, std::cout);
  } else {
    std::ofstream f(a.out, std::ios::trunc | std::ios::binary);
    if (!f) throw UsageError("cannot write " + a.out);
    hdl::write_plotdata(first, f);
    std::cout << "wrote " << a.out << "\n";
  }

  if (!a.comparison.empty()) {
    std::vector<hdl::ComparisonRow> rows;
    for (const std::string& path : a.metrics) {
      const hdl::ParsedMetrics pm = hdl::parse_metrics_csv(path);
      const std::string sidecar =
          (fs::path(path).parent_path() / "train_config.json").string();
      const json cfg_json = read_json_file(sidecar);
      if (!cfg_json.contains("method"))
        throw UsageError(sidecar + ": missing \"method\"");
      const auto method = cfg_json["method"].get<std::string>();
      const auto lr = jget<double>(cfg_json, "train", "lr");
      const auto baseline_level = jget<std::int64_t>(cfg_json, "train", "baseline_level");
      const auto extra = comparison_rows(method, pm, lr, baseline_level);
      rows.insert(rows.end(), extra.begin(), extra.end());
    }
    std::ofstream f(a.comparison, std::ios::trunc | std::ios::binary);
    if (!f) throw UsageError("cannot write " + a.comparison);
    hdl::write_comparison(rows, f);
    std::cout << "wrote " << a.comparison << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical deep-loss classifier: dataset generation, training, evaluation"};
  app.require_subcommand(1);

  GenerateArgs gen_args;
  CLI::App* gen = app.add_subcommand("generate", "Generate a synthetic shapes dataset");
  gen->add_option("--out", gen_args.out, "Output directory")->required();
  gen->add_option("--preset", gen_args.preset, "shapes-desk (2000/600 at 32x32) or shapes-paper (20000/6000 at 128x128)")
      ->check(CLI::IsMember({"shapes-desk", "shapes-paper"}));
  gen->add_option("--seed", gen_args.seed, "Generation seed");
  gen->add_option("--train-count", gen_args.train_count, "Override train image count");
  gen->add_option("--test-count", gen_args.test_count, "Override test image count");
  gen->add_option("--image-size", gen_args.image_size, "Override square image size in pixels");
  gen->add_flag("--stratified", gen_args.stratified,
                "Cycle through all label combinations instead of sampling them");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train a model and write metrics + parameters");
  train->add_option("--data", train_args.data, "Dataset directory (from `generate`)")->required();
  train->add_option("--out", train_args.out, "Output directory for metrics.csv/params.bin");
  train->add_option("--preset", train_args.preset,
                    "shapes-desk or shapes-paper model/schedule defaults")
      ->check(CLI::IsMember({"shapes-desk", "shapes-paper"}));
  train->add_option("--lr", train_args.lr, "Adam learning rate");
  train->add_option("--batch", train_args.batch, "Batch size");
  train->add_option("--epochs", train_args.epochs, "Training epochs");
  train->add_option("--seed", train_args.seed, "Training seed");
  train->add_option("--widths", train_args.widths, "Stage widths, e.g. 32,96")->delimiter(',');
  train->add_option("--blocks", train_args.blocks, "Residual blocks per stage");
  train->add_option("--stem-kernel", train_args.stem_kernel, "Stem convolution kernel size");
  train->add_option("--stem-stride", train_args.stem_stride, "Stem convolution stride");
  train->add_flag("--no-residual", train_args.no_residual, "Disable residual shortcuts");
  train->add_option("--lambdas", train_args.lambdas,
                    "Loss weights: center,level1,...,levelN (default all 1)")
      ->delimiter(',');
  train->add_option("--center-level", train_args.center_level,
                    "1-based level whose labels drive the center loss (default: widest level)");
  train->add_flag("--cascade-softmax", train_args.cascade_softmax,
                  "Feed softmax probabilities (not raw logits) to the next level");
  train->add_flag("--center-normalize", train_args.center_normalize,
                  "Divide the center loss by the batch size");
  train->add_option("--baseline-level", train_args.baseline_level,
                    "Train the flat single-level baseline for this 1-based level");
  train->add_flag("--center-alpha-batch", train_args.center_alpha_batch,
                  "Update centers after every batch with the damped delta rule");
  train->add_option("--center-alpha", train_args.center_alpha,
                    "Damping factor for --center-alpha-batch");
  train->add_flag("--fixed-timing", train_args.fixed_timing,
                  "Write 0.000 in the seconds column for byte-reproducible CSVs");
  train->add_flag("--f64", train_args.f64, "Train in 64-bit precision");
  train->add_flag("--quiet", train_args.quiet, "Suppress per-epoch progress output");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate saved parameters on a dataset split");
  eval->add_option("--data", eval_args.data, "Dataset directory")->required();
  eval->add_option("--params", eval_args.params, "Parameter file from `train`")->required();
  eval->add_option("--config", eval_args.config,
                   "Run config sidecar (default: train_config.json next to --params)");
  eval->add_option("--split", eval_args.split, "Dataset split")
      ->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--batch", eval_args.batch, "Evaluation batch size");
  eval->add_flag("--json", eval_args.as_json, "Emit a machine-readable JSON report");

  GradcheckArgs grad_args;
  CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference checks for all operations");
  grad->add_option("--seeds", grad_args.seeds, "Random seeds per operation")
      ->check(CLI::PositiveNumber);
  grad->add_option("--base-seed", grad_args.base_seed, "Base seed for the suite");
  grad->add_flag("--full-model", grad_args.full_model,
                 "Also check every parameter of an assembled model");

  PlotdataArgs plot_args;
  CLI::App* plot = app.add_subcommand("plotdata", "Extract per-level loss curves from metrics CSVs");
  plot->add_option("--metrics", plot_args.metrics, "Metrics CSV (repeatable for --comparison)")
      ->required();
  plot->add_option("--out", plot_args.out, "Loss-curve CSV path (default: stdout)");
  plot->add_option("--comparison", plot_args.comparison,
                   "Also write a method,level,lr,accuracy table for all --metrics files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_args);
    if (train->parsed()) return cmd_train(*train, train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (grad->parsed()) return cmd_gradcheck(grad_args);
    if (plot->parsed()) return cmd_plotdata(plot_args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const hdl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
