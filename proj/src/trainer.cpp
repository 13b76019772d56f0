#include "emotask/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "emotask/rng.hpp"
#include "json.hpp"

namespace emotask {

namespace {

constexpr char kCheckpointMagic[4] = {'E', 'M', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct PhasePlan {
  char tag;
  std::vector<std::size_t> indices;
  bool use_expr;
  bool use_au;
};

Tensor gather_batch(const TrainingData& data, const std::vector<std::size_t>& idx) {
  const Tensor& first = data.inputs[idx[0]];
  std::vector<std::size_t> shape;
  shape.push_back(idx.size());
  shape.insert(shape.end(), first.shape.begin(), first.shape.end());
  Tensor batch = Tensor::zeros(shape);
  std::size_t per = first.size();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::memcpy(&batch.data[i * per], data.inputs[idx[i]].data.data(), per * sizeof(double));
  return batch;
}

std::vector<int> gather_expr_targets(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<int> t;
  t.reserve(idx.size());
  for (std::size_t i : idx) t.push_back(*ds.records[i].expr);
  return t;
}

Tensor gather_au_targets(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Tensor t = Tensor::zeros({idx.size(), kNumActionUnits});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& aus = *ds.records[idx[i]].aus;
    for (std::size_t j = 0; j < kNumActionUnits; ++j) t.at2(i, j) = aus[j];
  }
  return t;
}

void write_raw(std::ofstream& f, const void* p, std::size_t n) {
  f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <typename T>
void write_pod(std::ofstream& f, T v) {
  write_raw(f, &v, sizeof(T));
}
template <typename T>
T read_pod(std::ifstream& f, const std::string& path) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError("corrupt or truncated checkpoint: " + path);
  return v;
}

void write_tensor(std::ofstream& f, const Tensor& t) {
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t d : t.shape) write_pod<std::uint64_t>(f, d);
  write_raw(f, t.data.data(), t.data.size() * sizeof(double));
}

Tensor read_tensor(std::ifstream& f, const std::string& path) {
  auto ndim = read_pod<std::uint32_t>(f, path);
  std::vector<std::size_t> shape;
  for (std::uint32_t i = 0; i < ndim; ++i)
    shape.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(f, path)));
  Tensor t = Tensor::zeros(shape);
  f.read(reinterpret_cast<char*>(t.data.data()),
         static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!f) throw IoError("corrupt or truncated checkpoint: " + path);
  return t;
}

void write_model_config(std::ofstream& f, const ModelConfig& c) {
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(c.input_shape.size()));
  for (std::size_t d : c.input_shape) write_pod<std::uint64_t>(f, d);
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(c.trunk.size()));
  for (const LayerSpec& l : c.trunk) {
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(l.kind));
    write_pod<std::uint64_t>(f, l.in_dim);
    write_pod<std::uint64_t>(f, l.out_dim);
    write_pod<std::uint64_t>(f, l.in_channels);
    write_pod<std::uint64_t>(f, l.out_channels);
    write_pod<std::uint64_t>(f, l.kernel_size);
    write_pod<std::uint64_t>(f, l.stride);
  }
  write_pod<std::uint64_t>(f, c.feature_dim);
}

ModelConfig read_model_config(std::ifstream& f, const std::string& path) {
  ModelConfig c;
  auto nin = read_pod<std::uint32_t>(f, path);
  for (std::uint32_t i = 0; i < nin; ++i)
    c.input_shape.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(f, path)));
  auto nl = read_pod<std::uint32_t>(f, path);
  for (std::uint32_t i = 0; i < nl; ++i) {
    LayerSpec l;
    l.kind = static_cast<LayerKind>(read_pod<std::uint32_t>(f, path));
    l.in_dim = static_cast<std::size_t>(read_pod<std::uint64_t>(f, path));
    l.out_dim = static_cast<std::size_t>(read_pod<std::uint64_t>(f, path));
    l.in_channels = static_cast<std::size_t>(read_pod<std::uint64_t>(f, path));
    l.out_channels = static_cast<std::size_t>(read_pod<std::uint64_t>(f, path));
    l.kernel_size = static_cast<std::size_t>(read_pod<std::uint64_t>(f, path));
    l.stride = static_cast<std::size_t>(read_pod<std::uint64_t>(f, path));
    c.trunk.push_back(l);
  }
  c.feature_dim = static_cast<std::size_t>(read_pod<std::uint64_t>(f, path));
  return c;
}

double mode_score(TrainMode mode, const MetricsReport& r) {
  switch (mode) {
    case TrainMode::ExprOnly:
    case TrainMode::SharedBackbone:
      return r.expr_score;
    case TrainMode::AuOnly:
      return r.au_score;
    case TrainMode::Multitask:
      return 0.5 * (r.expr_score + r.au_score);
  }
  return 0.0;
}

}  // namespace

TrainMode parse_train_mode(const std::string& name) {
  if (name == "expr_only") return TrainMode::ExprOnly;
  if (name == "au_only") return TrainMode::AuOnly;
  if (name == "shared_backbone") return TrainMode::SharedBackbone;
  if (name == "multitask") return TrainMode::Multitask;
  throw ConfigError("unknown training mode: " + name);
}

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::ExprOnly: return "expr_only";
    case TrainMode::AuOnly: return "au_only";
    case TrainMode::SharedBackbone: return "shared_backbone";
    case TrainMode::Multitask: return "multitask";
  }
  return "?";
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << train_mode_name(cfg.mode) << '|' << cfg.epochs << '|' << cfg.batch_size << '|'
     << cfg.schedule.lr_start << '|' << cfg.schedule.lr_min << '|'
     << cfg.schedule.total_epochs << '|' << cfg.focal.gamma << '|';
  for (double a : cfg.focal.alpha) os << a << ';';
  os << '|' << cfg.seed << '|' << cfg.au_threshold << '|' << cfg.validation_fraction << '|';
  for (double m : cfg.preprocess.channel_means) os << m << ';';
  for (double s : cfg.preprocess.channel_stds) os << s << ';';
  os << '|';
  for (std::size_t d : cfg.model.input_shape) os << d << ';';
  os << '|';
  for (const LayerSpec& l : cfg.model.trunk)
    os << static_cast<int>(l.kind) << ',' << l.in_dim << ',' << l.out_dim << ','
       << l.in_channels << ',' << l.out_channels << ',' << l.kernel_size << ','
       << l.stride << ';';
  os << '|' << cfg.model.feature_dim << '|' << cfg.init_scale;

  // FNV-1a 64
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : os.str()) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

TrainingData prepare_training_data(const Dataset& dataset, const TrainConfig& cfg) {
  TrainingData td;
  td.dataset = &dataset;
  PreprocessConfig pp = cfg.preprocess;
  pp.height = dataset.images.height;
  pp.width = dataset.images.width;
  if (cfg.model.input_shape != std::vector<std::size_t>{3, pp.height, pp.width})
    throw ConfigError("model input shape " + shape_str(cfg.model.input_shape) +
                      " does not match dataset images [3," + std::to_string(pp.height) +
                      "," + std::to_string(pp.width) + "]");
  td.inputs.reserve(dataset.records.size());
  for (const auto& rec : dataset.records) {
    if (rec.image_index >= dataset.images.count())
      throw DataError("record " + rec.id + " references a missing image");
    td.inputs.push_back(preprocess(dataset.images, rec.image_index, pp));
  }

  std::vector<std::size_t> all(dataset.records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Rng rng(mix_seed(cfg.seed, 0x5157ULL));
  rng.shuffle(all);
  std::size_t n_val = static_cast<std::size_t>(
      std::floor(cfg.validation_fraction * static_cast<double>(all.size())));
  td.train_indices.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_val));
  td.val_indices.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
  return td;
}

EpochStats train_epoch(ModelParams& model, AdamState& opt, const DatasetPartition& part,
                       const TrainingData& data, const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw ContractError("epoch index outside configured range");
  const Dataset& ds = *data.dataset;

  std::vector<PhasePlan> phases;
  auto join = [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<std::size_t> out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
  };
  switch (cfg.mode) {
    case TrainMode::Multitask:
      phases.push_back({'E', part.expr_only, true, false});
      phases.push_back({'A', part.au_only, false, true});
      phases.push_back({'B', part.both, true, true});
      break;
    case TrainMode::SharedBackbone:
      // multitask with the combined B-phase disabled
      phases.push_back({'E', part.expr_only, true, false});
      phases.push_back({'A', part.au_only, false, true});
      break;
    case TrainMode::ExprOnly:
      phases.push_back({'E', join(part.expr_only, part.both), true, false});
      break;
    case TrainMode::AuOnly:
      phases.push_back({'A', join(part.au_only, part.both), false, true});
      break;
  }

  std::size_t effective = 0;
  for (const auto& p : phases) effective += p.indices.size();
  if (effective == 0)
    throw ConfigError("no usable training samples for mode " + train_mode_name(cfg.mode));

  EpochStats stats;
  stats.epoch = epoch;
  stats.lr = cosine_lr(epoch, cfg.schedule);

  for (std::size_t pi = 0; pi < phases.size(); ++pi) {
    const PhasePlan& phase = phases[pi];
    if (phase.indices.empty()) continue;
    auto batches = make_batches(phase.indices, cfg.batch_size,
                                mix_seed(cfg.seed, 0x100 + pi), epoch);
    double loss_sum = 0.0;
    for (const auto& batch_idx : batches) {
      Tensor batch = gather_batch(data, batch_idx);
      ForwardResult fr = forward(model, batch);

      double loss = 0.0;
      Tensor expr_grads, au_grads;
      if (phase.use_expr) {
        LossResult lr_ = focal_loss(fr.expr_logits, gather_expr_targets(ds, batch_idx), cfg.focal);
        expr_grads = std::move(lr_.logit_grads);
        loss = lr_.loss;
      }
      if (phase.use_au) {
        LossResult lr_ = bce_loss(fr.au_logits, gather_au_targets(ds, batch_idx));
        au_grads = std::move(lr_.logit_grads);
        loss = phase.use_expr ? combined_loss(loss, lr_.loss) : lr_.loss;
      }
      backward(model, fr.cache, phase.use_expr ? &expr_grads : nullptr,
               phase.use_au ? &au_grads : nullptr);
      adam_step(model, opt, stats.lr);
      if (cfg.step_observer) cfg.step_observer(phase.tag, model, opt);

      loss_sum += loss;
      stats.events.push_back({phase.tag, loss});
      if (phase.tag == 'B') ++stats.steps_b;
      else if (phase.tag == 'A') ++stats.steps_a;
      else ++stats.steps_e;
    }
    double mean = loss_sum / static_cast<double>(batches.size());
    if (phase.tag == 'B') stats.mean_loss_b = mean;
    else if (phase.tag == 'A') stats.mean_loss_a = mean;
    else stats.mean_loss_e = mean;
  }
  return stats;
}

MetricsReport evaluate(const ModelParams& model, const TrainingData& data,
                       const std::vector<std::size_t>& indices, double au_threshold) {
  const Dataset& ds = *data.dataset;
  std::vector<std::size_t> expr_idx, au_idx;
  for (std::size_t i : indices) {
    if (ds.records[i].expr) expr_idx.push_back(i);
    if (ds.records[i].aus) au_idx.push_back(i);
  }

  MetricsReport report;
  constexpr std::size_t kEvalChunk = 256;

  if (!expr_idx.empty()) {
    std::vector<int> preds, truth;
    for (std::size_t start = 0; start < expr_idx.size(); start += kEvalChunk) {
      std::vector<std::size_t> chunk(expr_idx.begin() + start,
                                     expr_idx.begin() + std::min(start + kEvalChunk, expr_idx.size()));
      PredictionSet ps = predict(model, gather_batch(data, chunk));
      preds.insert(preds.end(), ps.expr_pred.begin(), ps.expr_pred.end());
      for (std::size_t i : chunk) truth.push_back(*ds.records[i].expr);
    }
    report.has_expr = true;
    report.expr = expr_metrics(preds, truth);
  }

  if (!au_idx.empty()) {
    Tensor probs = Tensor::zeros({au_idx.size(), kNumActionUnits});
    Tensor truth = Tensor::zeros({au_idx.size(), kNumActionUnits});
    std::size_t row = 0;
    for (std::size_t start = 0; start < au_idx.size(); start += kEvalChunk) {
      std::vector<std::size_t> chunk(au_idx.begin() + start,
                                     au_idx.begin() + std::min(start + kEvalChunk, au_idx.size()));
      PredictionSet ps = predict(model, gather_batch(data, chunk));
      for (std::size_t i = 0; i < chunk.size(); ++i, ++row) {
        for (std::size_t j = 0; j < kNumActionUnits; ++j) {
          probs.at2(row, j) = ps.au_probs.at2(i, j);
          truth.at2(row, j) = (*ds.records[chunk[i]].aus)[j];
        }
      }
    }
    report.has_au = true;
    report.au = au_metrics(probs, truth, au_threshold);
  }

  BlendedScores s = blended_scores(report.has_expr ? report.expr.f1 : 0.0,
                                   report.has_expr ? report.expr.acc : 0.0,
                                   report.has_au ? report.au.f1 : 0.0,
                                   report.has_au ? report.au.acc : 0.0);
  report.expr_score = s.expr_score;
  report.au_score = s.au_score;
  return report;
}

FitResult fit(const Dataset& dataset, const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");

  TrainingData data = prepare_training_data(dataset, cfg);

  DatasetPartition part;
  for (std::size_t i : data.train_indices) {
    const auto& r = dataset.records[i];
    if (r.expr && r.aus) part.both.push_back(i);
    else if (r.expr) part.expr_only.push_back(i);
    else if (r.aus) part.au_only.push_back(i);
    else part.excluded += 1;
  }

  FitResult result;
  ModelParams model = build_model(cfg.model, cfg.seed, cfg.init_scale);
  AdamState opt = AdamState::init(model);
  std::uint64_t chash = config_hash(cfg);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats = train_epoch(model, opt, part, data, cfg, epoch);
    MetricsReport val = evaluate(model, data, data.val_indices, cfg.au_threshold);
    stats.val_expr_score = val.expr_score;
    stats.val_au_score = val.au_score;
    double score = mode_score(cfg.mode, val);
    if (epoch == 0 || score > result.best_score) {
      result.best_score = score;
      result.best_epoch = epoch;
      result.best = Checkpoint{model, opt, epoch, chash};
      result.best_val_report = val;
    }
    result.stats.push_back(std::move(stats));
  }
  result.model = std::move(model);
  return result;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  write_raw(f, kCheckpointMagic, 4);
  write_pod<std::uint32_t>(f, kCheckpointVersion);
  write_pod<std::uint64_t>(f, ckpt.config_hash);
  write_pod<std::int32_t>(f, ckpt.epoch);
  write_model_config(f, ckpt.model.config);
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ckpt.model.params.size()));
  for (const auto& p : ckpt.model.params) {
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(p.name.size()));
    write_raw(f, p.name.data(), p.name.size());
    write_tensor(f, p.value);
  }
  write_pod<double>(f, ckpt.opt.beta1);
  write_pod<double>(f, ckpt.opt.beta2);
  write_pod<double>(f, ckpt.opt.epsilon);
  write_pod<std::int64_t>(f, ckpt.opt.step_count);
  for (const auto& t : ckpt.opt.m) write_tensor(f, t);
  for (const auto& t : ckpt.opt.v) write_tensor(f, t);
  if (!f) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path,
                           std::optional<std::uint64_t> expected_config_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("corrupt checkpoint (bad magic): " + path);
  auto version = read_pod<std::uint32_t>(f, path);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.config_hash = read_pod<std::uint64_t>(f, path);
  if (expected_config_hash && *expected_config_hash != ckpt.config_hash)
    throw ContractError("checkpoint config hash mismatch: file was produced by a "
                        "different configuration");
  ckpt.epoch = read_pod<std::int32_t>(f, path);
  ModelConfig config = read_model_config(f, path);
  ckpt.model = build_model(config, 0, 0.0);

  auto n_params = read_pod<std::uint32_t>(f, path);
  if (n_params != ckpt.model.params.size())
    throw IoError("checkpoint parameter count mismatch: " + path);
  for (auto& p : ckpt.model.params) {
    auto name_len = read_pod<std::uint32_t>(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f || name != p.name)
      throw IoError("checkpoint tensor table mismatch at " + p.name);
    Tensor t = read_tensor(f, path);
    if (!t.same_shape(p.value)) throw IoError("checkpoint tensor shape mismatch at " + p.name);
    p.value = std::move(t);
  }
  ckpt.opt.beta1 = read_pod<double>(f, path);
  ckpt.opt.beta2 = read_pod<double>(f, path);
  ckpt.opt.epsilon = read_pod<double>(f, path);
  ckpt.opt.step_count = read_pod<std::int64_t>(f, path);
  for (std::size_t i = 0; i < ckpt.model.params.size(); ++i)
    ckpt.opt.m.push_back(read_tensor(f, path));
  for (std::size_t i = 0; i < ckpt.model.params.size(); ++i)
    ckpt.opt.v.push_back(read_tensor(f, path));
  return ckpt;
}

std::string epoch_stats_to_jsonl(const EpochStats& s) {
  nlohmann::ordered_json j;
  j["epoch"] = s.epoch;
  j["lr"] = s.lr;
  j["steps"] = {{"E", s.steps_e}, {"A", s.steps_a}, {"B", s.steps_b}};
  j["mean_loss"] = {{"E", s.mean_loss_e}, {"A", s.mean_loss_a}, {"B", s.mean_loss_b}};
  std::string phases;
  for (const auto& ev : s.events) phases += ev.phase;
  j["phases"] = phases;
  j["val_expr_score"] = s.val_expr_score;
  j["val_au_score"] = s.val_au_score;
  return j.dump() + "\n";
}

}  // namespace emotask
