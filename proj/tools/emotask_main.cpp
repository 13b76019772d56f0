#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "emotask/data.hpp"
#include "emotask/gradcheck.hpp"
#include "emotask/metrics.hpp"
#include "emotask/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

// exit codes: 0 ok, 1 I/O, 2 config, 3 data, 4 verification failure
constexpr int kExitIo = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitVerify = 4;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw emotask::IoError("cannot write " + path.string());
  f << text;
  if (!f) throw emotask::IoError("write failed: " + path.string());
}

emotask::Dataset load_dataset(const std::string& dir) {
  emotask::Dataset ds;
  ds.records = emotask::load_annotations((fs::path(dir) / "manifest.csv").string());
  ds.images = emotask::load_images((fs::path(dir) / "images.bin").string());
  return ds;
}

struct TrainFlags {
  std::string data_dir;
  std::string out_dir = "run";
  std::string mode = "multitask";
  std::string trunk = "mlp";
  int epochs = 10;
  std::size_t batch = 64;
  double lr = 0.001;
  double lr_min = 0.0;
  double gamma = 2.0;
  std::vector<double> alpha;
  std::size_t hidden = 128;
  std::size_t feature_dim = emotask::kDefaultFeatureDim;
  double threshold = 0.5;
  double val_frac = 0.2;
  std::vector<std::uint64_t> seeds = {0};
  unsigned jobs = 1;
};

emotask::TrainConfig make_train_config(const TrainFlags& flags, const emotask::Dataset& ds,
                                       std::uint64_t seed) {
  emotask::TrainConfig cfg;
  cfg.mode = emotask::parse_train_mode(flags.mode);
  cfg.epochs = flags.epochs;
  cfg.batch_size = flags.batch;
  cfg.schedule.lr_start = flags.lr;
  cfg.schedule.lr_min = flags.lr_min;
  cfg.schedule.total_epochs = flags.epochs;
  cfg.focal.gamma = flags.gamma;
  if (!flags.alpha.empty()) {
    if (flags.alpha.size() != 7)
      throw emotask::ConfigError("--alpha needs exactly 7 values");
    std::copy(flags.alpha.begin(), flags.alpha.end(), cfg.focal.alpha.begin());
  }
  cfg.seed = seed;
  cfg.au_threshold = flags.threshold;
  cfg.validation_fraction = flags.val_frac;

  std::vector<std::size_t> input_shape = {3, ds.images.height, ds.images.width};
  if (flags.trunk == "mlp") {
    cfg.model = emotask::mlp_config(input_shape, flags.hidden, flags.feature_dim);
  } else if (flags.trunk == "smallcnn") {
    if (ds.images.height != ds.images.width)
      throw emotask::ConfigError("smallcnn trunk requires square images");
    cfg.model = emotask::smallcnn_config(ds.images.height, 8, 16, flags.hidden,
                                         flags.feature_dim);
  } else {
    throw emotask::ConfigError("unknown trunk preset: " + flags.trunk);
  }
  return cfg;
}

ordered_json train_config_json(const emotask::TrainConfig& cfg, const TrainFlags& flags) {
  ordered_json j;
  j["mode"] = emotask::train_mode_name(cfg.mode);
  j["epochs"] = cfg.epochs;
  j["batch"] = cfg.batch_size;
  j["lr"] = cfg.schedule.lr_start;
  j["lr_min"] = cfg.schedule.lr_min;
  j["gamma"] = cfg.focal.gamma;
  j["alpha"] = cfg.focal.alpha;
  j["seed"] = cfg.seed;
  j["threshold"] = cfg.au_threshold;
  j["val_frac"] = cfg.validation_fraction;
  j["trunk"] = flags.trunk;
  j["hidden"] = flags.hidden;
  j["feature_dim"] = cfg.model.feature_dim;
  j["input_shape"] = cfg.model.input_shape;
  j["init_scale"] = cfg.init_scale;
  return j;
}

void run_one_training(const TrainFlags& flags, const emotask::Dataset& ds,
                      std::uint64_t seed, const fs::path& out) {
  fs::create_directories(out);
  emotask::TrainConfig cfg = make_train_config(flags, ds, seed);

  // run manifest goes out before any training so a rerun can reproduce it
  ordered_json manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["config"] = train_config_json(cfg, flags);
  manifest["config_hash"] = emotask::config_hash(cfg);
  manifest["data"] = flags.data_dir;
  manifest["artifacts"] = {{"checkpoint", (out / "checkpoint.bin").string()},
                           {"stats", (out / "stats.jsonl").string()},
                           {"metrics_json", (out / "metrics.json").string()},
                           {"metrics_table", (out / "metrics.txt").string()}};
  write_text(out / "run_manifest.json", manifest.dump(2) + "\n");

  emotask::FitResult fit = emotask::fit(ds, cfg);

  std::ostringstream stats;
  for (const auto& s : fit.stats) stats << emotask::epoch_stats_to_jsonl(s);
  write_text(out / "stats.jsonl", stats.str());
  emotask::save_checkpoint(fit.best, (out / "checkpoint.bin").string());
  write_text(out / "metrics.json", emotask::report_to_json(fit.best_val_report));
  write_text(out / "metrics.txt",
             emotask::report_to_table(fit.best_val_report, flags.mode));

  std::ostringstream log;
  log << std::fixed << std::setprecision(4);
  for (const auto& s : fit.stats)
    log << "epoch " << s.epoch << "  lr " << std::setprecision(6) << s.lr
        << std::setprecision(4) << "  val_expr " << s.val_expr_score << "  val_au "
        << s.val_au_score << "\n";
  log << "best epoch " << fit.best_epoch << " score " << fit.best_score << "\n";
  std::cout << log.str();
}

int cmd_synth(const emotask::SynthConfig& cfg, const std::string& out_dir) {
  emotask::SynthDataset ds = emotask::synth_generate(cfg);
  fs::create_directories(out_dir);
  emotask::save_annotations(ds.data.records, (fs::path(out_dir) / "manifest.csv").string());
  emotask::save_images(ds.data.images, (fs::path(out_dir) / "images.bin").string());

  emotask::DatasetPartition part = emotask::partition(ds.data.records);
  ordered_json report;
  report["n_samples"] = cfg.n_samples;
  report["seed"] = cfg.seed;
  report["partition"] = {{"expr_only", part.expr_only.size()},
                         {"au_only", part.au_only.size()},
                         {"both", part.both.size()},
                         {"unlabeled", part.excluded}};
  std::array<std::size_t, 7> expr_counts{};
  for (int e : ds.true_expr) expr_counts[static_cast<std::size_t>(e)] += 1;
  report["true_expr_counts"] = expr_counts;
  std::array<double, 12> au_rates{};
  for (const auto& aus : ds.true_aus)
    for (std::size_t j = 0; j < 12; ++j) au_rates[j] += aus[j];
  for (double& r : au_rates) r /= static_cast<double>(cfg.n_samples);
  report["true_au_rates"] = au_rates;
  write_text(fs::path(out_dir) / "synth_report.json", report.dump(2) + "\n");

  std::cout << "wrote " << cfg.n_samples << " samples to " << out_dir << "  E="
            << part.expr_only.size() << " A=" << part.au_only.size() << " B="
            << part.both.size() << " unlabeled=" << part.excluded << "\n";
  return 0;
}

int cmd_train(const TrainFlags& flags) {
  emotask::Dataset ds = load_dataset(flags.data_dir);
  if (flags.seeds.size() == 1) {
    run_one_training(flags, ds, flags.seeds[0], flags.out_dir);
    return 0;
  }
  // multiple seeds: independent runs under out/<seed>/, up to --jobs at a time
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= flags.seeds.size() || failure) return;
        i = next++;
      }
      try {
        run_one_training(flags, ds, flags.seeds[i],
                         fs::path(flags.out_dir) / ("seed" + std::to_string(flags.seeds[i])));
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  unsigned n_threads = std::max(1u, std::min<unsigned>(flags.jobs,
                                                       static_cast<unsigned>(flags.seeds.size())));
  for (unsigned i = 0; i < n_threads; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& out_dir, double threshold) {
  emotask::Checkpoint ckpt = emotask::load_checkpoint(checkpoint_path);
  emotask::Dataset ds = load_dataset(data_dir);

  emotask::TrainConfig cfg;
  cfg.model = ckpt.model.config;
  cfg.validation_fraction = 0.0;  // score the whole set
  cfg.au_threshold = threshold;
  emotask::TrainingData data = emotask::prepare_training_data(ds, cfg);
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    if (ds.records[i].expr || ds.records[i].aus) labeled.push_back(i);
  if (labeled.empty()) throw emotask::DataError("dataset has no labeled records to score");

  emotask::MetricsReport report = emotask::evaluate(ckpt.model, data, labeled, threshold);
  std::string table = emotask::report_to_table(report, "eval");
  std::cout << table;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "metrics.json", emotask::report_to_json(report));
    write_text(fs::path(out_dir) / "metrics.txt", table);
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double step, double tol, bool corrupt) {
  auto results = emotask::run_gradcheck_suite(seed, step, tol, corrupt);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << std::left << std::setw(24) << r.component << " params "
              << std::setw(6) << r.params_checked << " max_rel_error "
              << std::scientific << std::setprecision(3) << r.max_rel_error
              << (r.pass ? "  PASS" : "  FAIL") << std::defaultfloat << "\n";
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : kExitVerify;
}

int cmd_report(const std::string& metrics_path, const std::string& method) {
  std::ifstream f(metrics_path);
  if (!f) throw emotask::IoError("cannot open metrics file: " + metrics_path);
  nlohmann::json j;
  f >> j;
  emotask::MetricsReport report;
  if (j.contains("expr")) {
    report.has_expr = true;
    report.expr.f1 = j["expr"]["f1"].get<double>();
    report.expr.acc = j["expr"]["acc"].get<double>();
    report.expr_score = j["expr"]["score"].get<double>();
  }
  if (j.contains("au")) {
    report.has_au = true;
    report.au.f1 = j["au"]["f1"].get<double>();
    report.au.acc = j["au"]["acc"].get<double>();
    report.au_score = j["au"]["score"].get<double>();
  }
  std::cout << emotask::report_to_table(report, method);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task expression / action-unit training engine"};
  app.require_subcommand(1);
  app.set_config("--config");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic correlated-label dataset");
  emotask::SynthConfig scfg;
  std::string synth_out = "synth";
  synth->add_option("--n", scfg.n_samples, "number of samples");
  synth->add_option("--seed", scfg.seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--frac-expr-only", scfg.frac_expr_only, "fraction with expression label only");
  synth->add_option("--frac-au-only", scfg.frac_au_only, "fraction with AU labels only");
  synth->add_option("--frac-both", scfg.frac_both, "fraction with both labels");
  synth->add_option("--label-noise", scfg.label_noise, "per-AU flip probability");
  synth->add_option("--image-size", scfg.image_size, "square image edge");
  synth->add_option("--patch-amplitude", scfg.patch_amplitude, "per-AU patch brightness");
  synth->add_option("--pixel-noise", scfg.pixel_noise, "Gaussian pixel noise sigma");
  std::vector<double> emotion_weights;
  synth->add_option("--emotion-weights", emotion_weights,
                    "7 relative class weights (default uniform)")
      ->expected(7);

  // train
  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  TrainFlags tf;
  train->add_option("--data", tf.data_dir, "dataset directory")->required();
  train->add_option("--out", tf.out_dir, "output directory");
  train->add_option("--mode", tf.mode, "expr_only|au_only|shared_backbone|multitask");
  train->add_option("--trunk", tf.trunk, "mlp|smallcnn");
  train->add_option("--epochs", tf.epochs, "training epochs");
  train->add_option("--batch", tf.batch, "mini-batch size");
  train->add_option("--lr", tf.lr, "starting learning rate");
  train->add_option("--lr-min", tf.lr_min, "final learning rate");
  train->add_option("--gamma", tf.gamma, "focal loss gamma");
  train->add_option("--alpha", tf.alpha, "7 focal class weights")->expected(7);
  train->add_option("--hidden", tf.hidden, "trunk hidden width");
  train->add_option("--feature-dim", tf.feature_dim, "shared feature width");
  train->add_option("--threshold", tf.threshold, "AU decision threshold");
  train->add_option("--val-frac", tf.val_frac, "validation fraction");
  train->add_option("--seed,--seeds", tf.seeds, "one or more seeds");
  train->add_option("--jobs", tf.jobs, "parallel runs across seeds");

  // eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint against a labeled dataset");
  std::string eval_ckpt, eval_data, eval_out;
  double eval_threshold = 0.5;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--out", eval_out, "optional output directory");
  eval->add_option("--threshold", eval_threshold, "AU decision threshold");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of all gradients");
  std::uint64_t grad_seed = 0;
  double grad_step = 1e-6, grad_tol = 1e-4;
  bool grad_corrupt = false;
  grad->add_option("--seed", grad_seed, "suite seed");
  grad->add_option("--step", grad_step, "finite-difference step");
  grad->add_option("--tol", grad_tol, "relative-error tolerance");
  grad->add_flag("--corrupt", grad_corrupt, "test hook: corrupt one gradient")
      ->group("");  // hidden

  // report
  auto* report = app.add_subcommand("report", "format a metrics.json as a table");
  std::string report_path, report_method = "run";
  report->add_option("--metrics", report_path, "metrics.json path")->required();
  report->add_option("--method", report_method, "method name column");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (!emotion_weights.empty())
        std::copy(emotion_weights.begin(), emotion_weights.end(),
                  scfg.emotion_weights.begin());
      return cmd_synth(scfg, synth_out);
    }
    if (train->parsed()) return cmd_train(tf);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_out, eval_threshold);
    if (grad->parsed()) return cmd_gradcheck(grad_seed, grad_step, grad_tol, grad_corrupt);
    if (report->parsed()) return cmd_report(report_path, report_method);
  } catch (const emotask::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const emotask::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const emotask::DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const emotask::ContractError& e) {
    std::cerr << "verification error: " << e.what() << "\n";
    return kExitVerify;
  } catch (const emotask::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return 0;
}
