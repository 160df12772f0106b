#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "instseg/box.hpp"
#include "instseg/tensor.hpp"

namespace instseg {

/// Configuration of the synthetic-shapes scene generator.
struct SceneConfig {
  int image_height = 64;
  int image_width = 64;
  int num_categories = 3;       // foreground categories, excluding background
  int min_instances = 2;
  int max_instances = 5;
  int min_size = 8;             // shape extent in pixels
  int max_size = 28;
  std::vector<double> class_skew;  // relative frequency per category; empty = uniform
  std::uint64_t seed = 1;

  void validate() const;
};

struct InstanceRecord {
  int id = 0;        // dense 1..M within the sample
  int category = 0;  // 1..K
  Box box;           // tight hull of the instance's visible pixels
};

/// One generated scene: image, semantic labels, instance ids, records.
struct Sample {
  Tensor image;       // [3,H,W] in [0,1]
  LabelMap semantic;  // 0 = background, 1..K
  LabelMap instances; // 0 = none, else dense instance id
  std::vector<InstanceRecord> records;
};

/// Deterministic for (config.seed, index): same pair gives a bit-identical
/// sample. Later-drawn shapes occlude earlier ones; records describe the
/// visible pixel hull after occlusion.
Sample generate_sample(const SceneConfig& config, int index);

struct Manifest {
  SceneConfig config;
  struct Entry {
    std::string image;
    std::string semantic;
    std::string instances;
    std::vector<InstanceRecord> records;
  };
  std::vector<Entry> samples;
};

/// Writes per-sample tensor files plus manifest.json under out_dir and
/// returns the manifest. Paths in the manifest are relative to out_dir.
Manifest generate_dataset(const SceneConfig& config, int count, const std::string& out_dir);

Manifest load_manifest(const std::string& path);
void write_manifest(const Manifest& m, const std::string& path);

/// Loads the three tensor files of a manifest entry. `base_dir` is the
/// directory the manifest was read from.
Sample load_sample(const Manifest::Entry& entry, const std::string& base_dir);

}  // namespace instseg
