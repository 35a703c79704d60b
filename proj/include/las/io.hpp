#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "las/network.hpp"
#include "las/synthetic.hpp"
#include "las/tensor.hpp"
#include "las/training.hpp"

namespace las::io {

// ----------------------------------------------------------------- images

// Grayscale PFM ("Pf"). Rows are stored bottom to top; a negative scale
// marks a little-endian payload. Writers always emit scale -1.
Tensor read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Tensor& map);

// 8-bit RGB; grey, palette and alpha inputs are converted. Values / 255.
Tensor read_png(const std::string& path);
// Rounds clamp(v,0,1)*255. Accepts [3,H,W] or [H,W].
void write_png(const std::string& path, const Tensor& image);

// ---------------------------------------------------------------- weights

// "LASW0001", u64 tensor count, then per tensor: u32 name length, name
// bytes, u32 rank, i64 extents, u64 payload offset. Payloads follow as
// little-endian float32, in record order.
inline constexpr char kWeightMagic[9] = "LASW0001";

void save_weights(const std::string& path, const WeightStore& weights);
// Raw tensors by name. Throws VersionError for a foreign magic and
// CorruptFileError for truncated or inconsistent files.
std::map<std::string, Tensor> read_weight_file(const std::string& path);
// Loads into the structure `config` declares; names and shapes must match
// exactly (ShapeError otherwise).
WeightStore load_weights(const std::string& path, const NetworkConfig& config);

// ---------------------------------------------------------------- configs

// Flat key = value text with [section] headers and '#' comments. Keys
// before any header belong to section "".
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text, const std::string& origin = "<string>");
  static ConfigFile load(const std::string& path);

  bool has_section(const std::string& section) const { return values_.count(section) > 0; }
  std::vector<std::string> sections() const;
  const std::map<std::string, std::string>& section(const std::string& name) const;

 private:
  std::string origin_;
  std::map<std::string, std::map<std::string, std::string>> values_;
};

// Typed readers. Each rejects unknown keys in its section.
// [network]: preset, d_max, agg_variant, stem_channels, stages, fused_channels,
// three_d_kernel, three_d_proportion, three_d_width, two_d_layers,
// two_d_channels, two_d_expansion, two_d_kernel, head_channels,
// reference_height, reference_width, init_seed.
NetworkConfig network_config(const ConfigFile& cfg, uint64_t* init_seed = nullptr);
// [scene]: count, height, width, disparity_min, disparity_max, texture,
// object_count, seed.
SceneSpec scene_spec(const ConfigFile& cfg);

// [train]: StageConfig fields plus the run's inputs and outputs.
struct TrainJob {
  StageConfig stage;
  std::string data;       // dataset directory
  std::string eval_data;  // optional
  std::string log;        // optional TrainLog path
  double oracle_noise = 0.0;
  uint64_t oracle_seed = 0;
};
TrainJob train_job(const ConfigFile& cfg);

// Rejects sections outside `allowed`.
void require_sections(const ConfigFile& cfg, const std::set<std::string>& allowed);

// Preset name ("micro", "paper-like") or a config file path.
NetworkConfig network_config_arg(const std::string& arg);

// --------------------------------------------------------------- datasets

// Directory layout: NNNNN_left.png, NNNNN_right.png, NNNNN_gt.pfm,
// NNNNN_valid.pfm, NNNNN_occ.pfm and index.txt listing sample ids.
void write_dataset(const std::string& dir, const std::vector<StereoSample>& samples);
std::vector<StereoSample> read_dataset(const std::string& dir);

// Little-endian helpers shared by the binary formats.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace las::io
