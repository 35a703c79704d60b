#include "las/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace las::io {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path);
}

namespace {

template <class T>
T byteswap_if(T v, bool swap) {
  if (!swap) return v;
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  std::memcpy(&v, b, sizeof(T));
  return v;
}

constexpr bool kLittleHost = std::endian::native == std::endian::little;

template <class T>
void put_le(std::string& out, T v) {
  v = byteswap_if(v, !kLittleHost);
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}
  template <class T>
  T le() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return byteswap_if(v, !kLittleHost);
  }
  std::string str(size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) throw CorruptFileError(path_ + ": truncated file");
  }
  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

// ------------------------------------------------------------------- PFM

Tensor read_pfm(const std::string& path) {
  const std::string bytes = read_file(path);
  std::istringstream hs(bytes);
  std::string magic;
  int64_t w = 0, h = 0;
  double scale = 0.0;
  if (!(hs >> magic)) throw CorruptFileError(path + ": empty PFM");
  if (magic == "PF") throw IoError(path + ": colour PFM is not supported");
  if (magic != "Pf") throw CorruptFileError(path + ": not a PFM file");
  if (!(hs >> w >> h >> scale) || w <= 0 || h <= 0 || scale == 0.0) throw CorruptFileError(path + ": bad PFM header");
  hs.get();  // single whitespace byte ends the header
  const auto offset = static_cast<size_t>(hs.tellg());
  const size_t need = static_cast<size_t>(w * h) * sizeof(float);
  if (bytes.size() < offset + need) throw CorruptFileError(path + ": truncated PFM payload");
  const bool swap = (scale < 0.0) != kLittleHost;
  Tensor t({h, w});
  for (int64_t row = 0; row < h; ++row)
    for (int64_t x = 0; x < w; ++x) {
      float v;
      std::memcpy(&v, bytes.data() + offset + static_cast<size_t>(row * w + x) * sizeof(float), sizeof v);
      t[(h - 1 - row) * w + x] = byteswap_if(v, swap);
    }
  return t;
}

void write_pfm(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_pfm: expected [H,W], got " + shape_str(map.shape()));
  const int64_t h = map.dim(0), w = map.dim(1);
  std::string out = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
  for (int64_t row = h; row-- > 0;)
    for (int64_t x = 0; x < w; ++x) put_le(out, map[row * w + x]);
  write_file(path, out);
}

// ------------------------------------------------------------------- PNG

Tensor read_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError(path + ": cannot read PNG (" + img.message + ")");
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError(path + ": cannot decode PNG (" + msg + ")");
  }
  const int64_t h = img.height, w = img.width;
  Tensor t({3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        t[(c * h + y) * w + x] = static_cast<float>(buf[static_cast<size_t>((y * w + x) * 3 + c)]) / 255.0f;
  return t;
}

void write_png(const std::string& path, const Tensor& image) {
  const bool gray = image.rank() == 2;
  if (!gray && !(image.rank() == 3 && image.dim(0) == 3))
    throw ShapeError("write_png: expected [3,H,W] or [H,W], got " + shape_str(image.shape()));
  const int64_t h = image.dim(gray ? 0 : 1), w = image.dim(gray ? 1 : 2), ch = gray ? 1 : 3;
  std::vector<unsigned char> buf(static_cast<size_t>(h * w * ch));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < ch; ++c) {
        const float v = std::clamp(image[(c * h + y) * w + x], 0.0f, 1.0f);
        buf[static_cast<size_t>((y * w + x) * ch + c)] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError(path + ": cannot write PNG (" + img.message + ")");
}

// --------------------------------------------------------------- weights

void save_weights(const std::string& path, const WeightStore& weights) {
  std::string header(kWeightMagic, 8);
  put_le<uint64_t>(header, weights.size());
  size_t header_size = header.size();
  for (const auto& [name, e] : weights.entries())
    header_size += 4 + name.size() + 4 + 8 * e.value.shape().size() + 8;
  uint64_t offset = header_size;
  std::string payload;
  for (const auto& [name, e] : weights.entries()) {
    put_le<uint32_t>(header, static_cast<uint32_t>(name.size()));
    header += name;
    put_le<uint32_t>(header, static_cast<uint32_t>(e.value.rank()));
    for (int64_t d : e.value.shape()) put_le<int64_t>(header, d);
    put_le<uint64_t>(header, offset);
    for (float v : e.value.data()) put_le(payload, v);
    offset += static_cast<uint64_t>(e.value.numel()) * sizeof(float);
  }
  write_file(path, header + payload);
}

std::map<std::string, Tensor> read_weight_file(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8) throw CorruptFileError(path + ": truncated file");
  if (bytes.compare(0, 8, kWeightMagic) != 0)
    throw VersionError(path + ": unknown weight file magic '" + bytes.substr(0, 8) + "'");
  Reader r(bytes, path);
  r.str(8);
  const auto count = r.le<uint64_t>();
  if (count > bytes.size()) throw CorruptFileError(path + ": implausible tensor count");
  struct Record {
    std::string name;
    Shape shape;
    uint64_t offset;
  };
  std::vector<Record> records;
  for (uint64_t i = 0; i < count; ++i) {
    Record rec;
    rec.name = r.str(r.le<uint32_t>());
    const auto rank = r.le<uint32_t>();
    if (rank > 8) throw CorruptFileError(path + ": implausible rank for " + rec.name);
    for (uint32_t k = 0; k < rank; ++k) {
      const auto d = r.le<int64_t>();
      if (d < 0) throw CorruptFileError(path + ": negative extent for " + rec.name);
      rec.shape.push_back(d);
    }
    rec.offset = r.le<uint64_t>();
    records.push_back(std::move(rec));
  }
  std::map<std::string, Tensor> out;
  uint64_t end_of_previous = r.pos();
  for (const Record& rec : records) {
    const uint64_t n = static_cast<uint64_t>(shape_numel(rec.shape));
    if (rec.offset < end_of_previous) throw CorruptFileError(path + ": overlapping payload for " + rec.name);
    if (rec.offset + n * sizeof(float) > bytes.size()) throw CorruptFileError(path + ": truncated file");
    Tensor t(rec.shape);
    for (uint64_t k = 0; k < n; ++k) {
      float v;
      std::memcpy(&v, bytes.data() + rec.offset + k * sizeof(float), sizeof v);
      t[static_cast<int64_t>(k)] = byteswap_if(v, !kLittleHost);
    }
    end_of_previous = rec.offset + n * sizeof(float);
    if (!out.emplace(rec.name, std::move(t)).second) throw CorruptFileError(path + ": duplicate tensor " + rec.name);
  }
  return out;
}

WeightStore load_weights(const std::string& path, const NetworkConfig& config) {
  std::map<std::string, Tensor> raw = read_weight_file(path);
  WeightStore w = WeightStore::initialize(config, 0);
  for (const auto& [name, e] : w.entries()) {
    auto it = raw.find(name);
    if (it == raw.end()) throw ShapeError(path + ": missing tensor " + name + " required by the network config");
    if (it->second.shape() != e.value.shape())
      throw ShapeError(path + ": tensor " + name + " has shape " + shape_str(it->second.shape()) + ", config expects " +
                       shape_str(e.value.shape()));
    w.mutable_at(name) = it->second;
  }
  for (const auto& [name, t] : raw)
    if (!w.contains(name)) throw ShapeError(path + ": tensor " + name + " is not part of the network config");
  return w;
}

// --------------------------------------------------------------- configs

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  auto fail = [&](const std::string& m) { throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + m); };
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      cfg.values_[section];
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) fail("empty key");
    if (!cfg.values_[section].emplace(key, value).second) fail("duplicate key '" + key + "'");
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) { return parse(read_file(path), path); }

std::vector<std::string> ConfigFile::sections() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

const std::map<std::string, std::string>& ConfigFile::section(const std::string& name) const {
  static const std::map<std::string, std::string> empty;
  auto it = values_.find(name);
  return it == values_.end() ? empty : it->second;
}

void require_sections(const ConfigFile& cfg, const std::set<std::string>& allowed) {
  for (const std::string& s : cfg.sections())
    if (!allowed.count(s)) throw ConfigError("unknown config section [" + s + "]");
}

namespace {

// Consumes keys of one section; unknown keys are an error.
class SectionReader {
 public:
  SectionReader(const ConfigFile& cfg, std::string name) : name_(std::move(name)), values_(cfg.section(name_)) {}

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key) {
    used_.insert(key);
    return values_.at(key);
  }
  template <class F>
  void maybe(const std::string& key, F&& apply) {
    if (!has(key)) return;
    const std::string v = str(key);
    try {
      apply(v);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("[" + name_ + "] " + key + ": invalid value '" + v + "'");
    }
  }
  void finish() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError("unknown key '" + k + "' in section [" + name_ + "]");
  }

 private:
  std::string name_;
  const std::map<std::string, std::string>& values_;
  std::set<std::string> used_;
};

int64_t to_int(const std::string& s) {
  size_t pos = 0;
  const long long v = std::stoll(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

double to_double(const std::string& s) {
  size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

}  // namespace

NetworkConfig network_config(const ConfigFile& cfg, uint64_t* init_seed) {
  SectionReader r(cfg, "network");
  NetworkConfig c = NetworkConfig::micro();
  r.maybe("preset", [&](const std::string& v) { c = NetworkConfig::preset_named(v); });
  r.maybe("d_max", [&](const std::string& v) { c.d_max = to_int(v); });
  r.maybe("agg_variant", [&](const std::string& v) { c.agg_variant = agg_variant_from_string(v); });
  r.maybe("stem_channels", [&](const std::string& v) { c.stem_channels = to_int(v); });
  r.maybe("stages", [&](const std::string& v) {
    // "channels x blocks x expansion" per scale, comma separated
    const auto parts = split(v, ',');
    if (parts.size() != 4) throw ConfigError("[network] stages: expected four entries");
    for (size_t i = 0; i < 4; ++i) {
      const auto f = split(parts[i], 'x');
      if (f.size() != 3) throw ConfigError("[network] stages: expected CxBxE, got '" + parts[i] + "'");
      c.stages[i] = BackboneStage{to_int(f[0]), to_int(f[1]), to_int(f[2])};
    }
  });
  r.maybe("fused_channels", [&](const std::string& v) { c.fused_channels = to_int(v); });
  r.maybe("three_d_kernel", [&](const std::string& v) {
    const auto f = split(v, 'x');
    if (f.size() != 3) throw ConfigError("[network] three_d_kernel: expected DxHxW");
    for (size_t i = 0; i < 3; ++i) c.three_d_kernel[i] = to_int(f[i]);
  });
  r.maybe("three_d_proportion", [&](const std::string& v) { c.three_d_proportion = to_double(v); });
  r.maybe("three_d_width", [&](const std::string& v) { c.three_d_width = to_int(v); });
  r.maybe("two_d_layers", [&](const std::string& v) { c.two_d_layers = to_int(v); });
  r.maybe("two_d_channels", [&](const std::string& v) { c.two_d_channels = to_int(v); });
  r.maybe("two_d_expansion", [&](const std::string& v) { c.two_d_expansion = to_int(v); });
  r.maybe("two_d_kernel", [&](const std::string& v) { c.two_d_kernel = to_int(v); });
  r.maybe("head_channels", [&](const std::string& v) { c.head_channels = to_int(v); });
  r.maybe("reference_height", [&](const std::string& v) { c.reference_height = to_int(v); });
  r.maybe("reference_width", [&](const std::string& v) { c.reference_width = to_int(v); });
  uint64_t seed = 0;
  r.maybe("init_seed", [&](const std::string& v) { seed = static_cast<uint64_t>(to_int(v)); });
  r.finish();
  for (const auto& [k, v] : cfg.section("network"))
    if (k != "preset" && k != "init_seed") c.preset = SizePreset::Custom;
  c.validate();
  if (init_seed) *init_seed = seed;
  return c;
}

SceneSpec scene_spec(const ConfigFile& cfg) {
  SectionReader r(cfg, "scene");
  SceneSpec s;
  r.maybe("count", [&](const std::string& v) { s.count = to_int(v); });
  r.maybe("height", [&](const std::string& v) { s.height = to_int(v); });
  r.maybe("width", [&](const std::string& v) { s.width = to_int(v); });
  r.maybe("disparity_min", [&](const std::string& v) { s.disparity_min = to_double(v); });
  r.maybe("disparity_max", [&](const std::string& v) { s.disparity_max = to_double(v); });
  r.maybe("texture", [&](const std::string& v) { s.texture = texture_from_string(v); });
  r.maybe("object_count", [&](const std::string& v) { s.object_count = to_int(v); });
  r.maybe("seed", [&](const std::string& v) { s.seed = static_cast<uint64_t>(to_int(v)); });
  r.finish();
  s.validate();
  return s;
}

TrainJob train_job(const ConfigFile& cfg) {
  SectionReader r(cfg, "train");
  TrainJob j;
  StageConfig& s = j.stage;
  r.maybe("stage", [&](const std::string& v) {
    const int64_t k = to_int(v);
    if (k < 1 || k > 3) throw ConfigError("[train] stage must be 1, 2 or 3");
    s.stage = static_cast<Stage>(k);
  });
  r.maybe("steps", [&](const std::string& v) { s.steps = to_int(v); });
  r.maybe("batch_size", [&](const std::string& v) { s.batch_size = to_int(v); });
  r.maybe("peak_lr", [&](const std::string& v) { s.peak_lr = to_double(v); });
  r.maybe("crop", [&](const std::string& v) {
    const auto f = split(v, 'x');
    if (f.size() != 2) throw ConfigError("[train] crop: expected HxW");
    s.crop_height = to_int(f[0]);
    s.crop_width = to_int(f[1]);
  });
  r.maybe("teacher_update", [&](const std::string& v) { s.teacher_update = teacher_update_from_string(v); });
  r.maybe("ema_decay", [&](const std::string& v) { s.ema_decay = to_double(v); });
  r.maybe("hard_copy_interval", [&](const std::string& v) { s.hard_copy_interval = to_int(v); });
  r.maybe("lambda_disp", [&](const std::string& v) { s.lambda_disp = to_double(v); });
  r.maybe("lambda_feat", [&](const std::string& v) { s.lambda_feat = to_double(v); });
  r.maybe("seed", [&](const std::string& v) { s.seed = static_cast<uint64_t>(to_int(v)); });
  r.maybe("weight_decay", [&](const std::string& v) { s.weight_decay = to_double(v); });
  r.maybe("beta1", [&](const std::string& v) { s.beta1 = to_double(v); });
  r.maybe("beta2", [&](const std::string& v) { s.beta2 = to_double(v); });
  r.maybe("max_grad_norm", [&](const std::string& v) { s.max_grad_norm = to_double(v); });
  r.maybe("perturb_strength", [&](const std::string& v) { s.perturb_strength = to_double(v); });
  r.maybe("eval_every", [&](const std::string& v) { s.eval_every = to_int(v); });
  r.maybe("data", [&](const std::string& v) { j.data = v; });
  r.maybe("eval_data", [&](const std::string& v) { j.eval_data = v; });
  r.maybe("log", [&](const std::string& v) { j.log = v; });
  r.maybe("oracle_noise", [&](const std::string& v) { j.oracle_noise = to_double(v); });
  r.maybe("oracle_seed", [&](const std::string& v) { j.oracle_seed = static_cast<uint64_t>(to_int(v)); });
  r.finish();
  return j;
}

NetworkConfig network_config_arg(const std::string& arg) {
  if (arg == "micro" || arg == "paper-like") return NetworkConfig::preset_named(arg);
  ConfigFile cfg = ConfigFile::load(arg);
  return network_config(cfg);
}

// -------------------------------------------------------------- datasets

namespace {

std::string stem(const std::filesystem::path& dir, size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return (dir / buf).string();
}

}  // namespace

void write_dataset(const std::string& dir, const std::vector<StereoSample>& samples) {
  std::filesystem::create_directories(dir);
  std::string index;
  for (size_t i = 0; i < samples.size(); ++i) {
    const StereoSample& s = samples[i];
    check_sample(s);
    const std::string base = stem(dir, i);
    write_png(base + "_left.png", s.left);
    write_png(base + "_right.png", s.right);
    write_pfm(base + "_gt.pfm", s.gt);
    write_pfm(base + "_valid.pfm", s.valid);
    write_pfm(base + "_occ.pfm", s.occluded.empty() ? Tensor(s.gt.shape(), 0.0f) : s.occluded);
    index += std::to_string(s.id) + (s.provenance == Provenance::PseudoLabeled ? " pseudo\n" : " labeled\n");
  }
  write_file((std::filesystem::path(dir) / "index.txt").string(), index);
}

std::vector<StereoSample> read_dataset(const std::string& dir) {
  std::istringstream index(read_file((std::filesystem::path(dir) / "index.txt").string()));
  std::vector<StereoSample> out;
  std::string line;
  while (std::getline(index, line)) {
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    StereoSample s;
    std::string prov;
    if (!(ls >> s.id >> prov)) throw CorruptFileError(dir + "/index.txt: bad line '" + line + "'");
    s.provenance = prov == "pseudo" ? Provenance::PseudoLabeled : Provenance::SyntheticLabeled;
    const std::string base = stem(dir, out.size());
    s.left = read_png(base + "_left.png");
    s.right = read_png(base + "_right.png");
    s.gt = read_pfm(base + "_gt.pfm");
    s.valid = read_pfm(base + "_valid.pfm");
    s.occluded = read_pfm(base + "_occ.pfm");
    check_sample(s);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IoError(dir + ": dataset is empty");
  return out;
}

}  // namespace las::io
