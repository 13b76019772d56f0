#include "emotask/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "emotask/rng.hpp"

namespace emotask {

namespace {

constexpr char kImageMagic[4] = {'E', 'M', 'I', 'M'};
constexpr std::uint32_t kImageVersion = 1;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

void write_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError("truncated image file: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::vector<AnnotationRecord> load_annotations(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw IoError("cannot open manifest: " + manifest_path);
  std::vector<AnnotationRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto where = [&] { return manifest_path + ":" + std::to_string(line_no); };
    std::vector<std::string> fields = split(line, ',');
    if (fields.size() != 3)
      throw DataError("manifest line needs 3 comma fields at " + where());
    AnnotationRecord rec;
    rec.id = fields[0];
    rec.image_index = records.size();
    if (rec.id.empty()) throw DataError("empty sample id at " + where());

    if (!fields[1].empty() && fields[1] != "-1") {
      int e;
      try {
        e = std::stoi(fields[1]);
      } catch (const std::exception&) {
        throw DataError("bad expression field '" + fields[1] + "' at " + where());
      }
      if (e < 0 || e > 6)
        throw DataError("expression label must be in {-1,0..6} at " + where());
      rec.expr = e;
    }

    if (!fields[2].empty()) {
      std::vector<std::string> bits = split(fields[2], ';');
      if (bits.size() != 12)
        throw DataError("AU vector must have 12 entries, got " +
                        std::to_string(bits.size()) + " at " + where());
      std::array<std::uint8_t, 12> aus{};
      for (std::size_t j = 0; j < 12; ++j) {
        if (bits[j] == "0")
          aus[j] = 0;
        else if (bits[j] == "1")
          aus[j] = 1;
        else
          throw DataError("AU entry must be 0 or 1 at " + where());
      }
      rec.aus = aus;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_annotations(const std::vector<AnnotationRecord>& records,
                      const std::string& manifest_path) {
  std::ofstream f(manifest_path, std::ios::trunc);
  if (!f) throw IoError("cannot write manifest: " + manifest_path);
  for (const auto& rec : records) {
    f << rec.id << ',';
    if (rec.expr) f << *rec.expr;
    else f << -1;
    f << ',';
    if (rec.aus) {
      for (std::size_t j = 0; j < 12; ++j) {
        if (j) f << ';';
        f << static_cast<int>((*rec.aus)[j]);
      }
    }
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + manifest_path);
}

DatasetPartition partition(const std::vector<AnnotationRecord>& records) {
  DatasetPartition p;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.expr && r.aus)
      p.both.push_back(i);
    else if (r.expr)
      p.expr_only.push_back(i);
    else if (r.aus)
      p.au_only.push_back(i);
    else
      p.excluded += 1;
  }
  return p;
}

Tensor preprocess(const ImageStore& images, std::size_t index,
                  const PreprocessConfig& cfg) {
  if (images.height != cfg.height || images.width != cfg.width)
    throw DimensionError("image is " + std::to_string(images.height) + "x" +
                         std::to_string(images.width) + ", expected " +
                         std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                         " (no resizing is performed)");
  if (images.channels != 3) throw DimensionError("expected 3-channel RGB images");
  if (index >= images.count()) throw ContractError("image index out of range");

  std::size_t h = cfg.height, w = cfg.width;
  Tensor out = Tensor::zeros({3, h, w});
  const std::uint8_t* px = images.image(index);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = static_cast<double>(px[(y * w + x) * 3 + c]) / 255.0;
        out.data[(c * h + y) * w + x] = (v - cfg.channel_means[c]) / cfg.channel_stds[c];
      }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& indices,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order = indices;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::size_t end = std::min(start + batch_size, order.size());
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

SynthDataset synth_generate(const SynthConfig& cfg) {
  if (cfg.n_samples < 1) throw ConfigError("n_samples must be positive");
  if (cfg.frac_expr_only < 0 || cfg.frac_au_only < 0 || cfg.frac_both < 0)
    throw ConfigError("label fractions must be nonnegative");
  double frac_sum = cfg.frac_expr_only + cfg.frac_au_only + cfg.frac_both;
  if (frac_sum > 1.0 + 1e-12)
    throw ConfigError("label fractions sum to " + std::to_string(frac_sum) + " > 1");
  if (cfg.label_noise < 0.0 || cfg.label_noise >= 1.0)
    throw ConfigError("label_noise must be in [0,1)");
  if (cfg.image_size < 8) throw ConfigError("image_size must be >= 8");

  std::size_t s = cfg.image_size;
  SynthDataset ds;
  ds.data.images.height = s;
  ds.data.images.width = s;
  ds.data.images.channels = 3;
  ds.data.images.pixels.assign(cfg.n_samples * s * s * 3, 0);

  Rng rng(cfg.seed);
  std::vector<double> weights(cfg.emotion_weights.begin(), cfg.emotion_weights.end());
  std::size_t patch = s / 4;  // 3x4 grid of AU patches

  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    int emotion = static_cast<int>(rng.categorical(weights));
    std::array<std::uint8_t, 12> aus = cfg.emotion_prototypes[emotion];
    for (std::size_t j = 0; j < 12; ++j) {
      if (rng.bernoulli(cfg.label_noise)) aus[j] ^= 1;
      if (rng.bernoulli(cfg.au_base_rates[j])) aus[j] = 1;
    }

    std::uint8_t* px = ds.data.images.pixels.data() + i * s * s * 3;
    std::vector<double> canvas(s * s * 3, 32.0);
    for (std::size_t j = 0; j < 12; ++j) {
      if (!aus[j]) continue;
      std::size_t y0 = (j / 4) * (s / 3);
      std::size_t x0 = (j % 4) * patch;
      std::size_t ch = j % 3;
      for (std::size_t y = y0; y < std::min(y0 + patch, s); ++y)
        for (std::size_t x = x0; x < std::min(x0 + patch, s); ++x)
          canvas[(y * s + x) * 3 + ch] += cfg.patch_amplitude;
    }
    for (std::size_t k = 0; k < canvas.size(); ++k) {
      double v = canvas[k] + rng.normal(0.0, cfg.pixel_noise);
      px[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }

    AnnotationRecord rec;
    {
      std::ostringstream name;
      name << "synth" << i;
      rec.id = name.str();
    }
    rec.image_index = i;
    double mask = rng.uniform01();
    if (mask < cfg.frac_expr_only) {
      rec.expr = emotion;
    } else if (mask < cfg.frac_expr_only + cfg.frac_au_only) {
      rec.aus = aus;
    } else if (mask < frac_sum) {
      rec.expr = emotion;
      rec.aus = aus;
    }
    ds.data.records.push_back(std::move(rec));
    ds.true_expr.push_back(emotion);
    ds.true_aus.push_back(aus);
  }
  return ds;
}

void save_images(const ImageStore& images, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write image file: " + path);
  f.write(kImageMagic, 4);
  write_u32(f, kImageVersion);
  write_u32(f, static_cast<std::uint32_t>(images.count()));
  write_u32(f, static_cast<std::uint32_t>(images.height));
  write_u32(f, static_cast<std::uint32_t>(images.width));
  write_u32(f, static_cast<std::uint32_t>(images.channels));
  f.write(reinterpret_cast<const char*>(images.pixels.data()),
          static_cast<std::streamsize>(images.pixels.size()));
  if (!f) throw IoError("write failed: " + path);
}

ImageStore load_images(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image file: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kImageMagic, 4) != 0)
    throw IoError("bad magic in image file: " + path);
  std::uint32_t version = read_u32(f, path);
  if (version != kImageVersion)
    throw IoError("unsupported image file version " + std::to_string(version));
  std::uint32_t count = read_u32(f, path);
  ImageStore store;
  store.height = read_u32(f, path);
  store.width = read_u32(f, path);
  store.channels = read_u32(f, path);
  std::size_t total = static_cast<std::size_t>(count) * store.height * store.width * store.channels;
  store.pixels.resize(total);
  f.read(reinterpret_cast<char*>(store.pixels.data()), static_cast<std::streamsize>(total));
  if (!f) throw IoError("truncated image file: " + path);
  return store;
}

}  // namespace emotask
