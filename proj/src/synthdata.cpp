#include "instseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "instseg/rng.hpp"
#include "instseg/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace instseg {

namespace {

struct Rgb {
  double r, g, b;
};

// Fixed palette for the first few categories, then golden-angle hues.
Rgb category_color(int category) {
  static const Rgb base[] = {
      {0.85, 0.25, 0.20},  // red
      {0.20, 0.70, 0.30},  // green
      {0.25, 0.35, 0.85},  // blue
      {0.85, 0.75, 0.20},  // yellow
      {0.70, 0.25, 0.75},  // purple
      {0.20, 0.70, 0.70},  // teal
  };
  const int n = static_cast<int>(sizeof(base) / sizeof(base[0]));
  if (category <= n) return base[category - 1];
  const double hue = std::fmod(0.618033988749895 * category, 1.0) * 6.0;
  const double c = 0.55, m = 0.25;
  const double x = c * (1.0 - std::fabs(std::fmod(hue, 2.0) - 1.0));
  switch (static_cast<int>(hue)) {
    case 0: return {c + m, x + m, m};
    case 1: return {x + m, c + m, m};
    case 2: return {m, c + m, x + m};
    case 3: return {m, x + m, c + m};
    case 4: return {x + m, m, c + m};
    default: return {c + m, m, x + m};
  }
}

int sample_category(Rng& rng, const std::vector<double>& cumulative) {
  const double u = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  const int idx = static_cast<int>(it - cumulative.begin());
  return std::min(idx, static_cast<int>(cumulative.size()) - 1) + 1;
}

json record_to_json(const InstanceRecord& r) {
  return json{{"id", r.id},
              {"category", r.category},
              {"box", {r.box.y_min, r.box.x_min, r.box.y_max, r.box.x_max}}};
}

InstanceRecord record_from_json(const json& j) {
  InstanceRecord r;
  r.id = j.at("id").get<int>();
  r.category = j.at("category").get<int>();
  const auto& b = j.at("box");
  r.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
              b.at(3).get<double>()};
  return r;
}

}  // namespace

void SceneConfig::validate() const {
  if (image_height < 1 || image_width < 1) {
    throw std::invalid_argument("scene: image dims must be positive");
  }
  if (num_categories < 1) throw std::invalid_argument("scene: num_categories must be >= 1");
  if (min_instances < 0 || max_instances < min_instances) {
    throw std::invalid_argument("scene: bad instances_per_image range");
  }
  if (min_size < 3) throw std::invalid_argument("scene: min shape size must be >= 3 px");
  if (max_size < min_size) throw std::invalid_argument("scene: size range inverted");
  if (max_size > std::min(image_height, image_width)) {
    throw std::invalid_argument("scene: max shape size exceeds image; no feasible placement");
  }
  if (!class_skew.empty()) {
    if (static_cast<int>(class_skew.size()) != num_categories) {
      throw std::invalid_argument("scene: class_skew length must equal num_categories");
    }
    for (double f : class_skew) {
      if (!(f > 0.0)) throw std::invalid_argument("scene: class_skew frequencies must be positive");
    }
  }
}

Sample generate_sample(const SceneConfig& config, int index) {
  config.validate();
  Rng rng = Rng::for_index(config.seed, static_cast<std::uint64_t>(index));
  const int h = config.image_height, w = config.image_width;

  std::vector<double> cumulative;
  {
    double acc = 0.0;
    for (int c = 0; c < config.num_categories; ++c) {
      acc += config.class_skew.empty() ? 1.0 : config.class_skew[static_cast<size_t>(c)];
      cumulative.push_back(acc);
    }
  }

  Sample s;
  s.image = Tensor({3, h, w});
  s.semantic = LabelMap(h, w, 0);
  s.instances = LabelMap(h, w, 0);

  // Background: dark gray with slight per-image tint.
  const double bg = 0.10 + 0.05 * rng.uniform();
  Tensor base({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) base.at(c, y, x) = bg;

  const int n_inst = static_cast<int>(rng.uniform_int(config.min_instances, config.max_instances));
  std::vector<int> draw_category(static_cast<size_t>(n_inst) + 1, 0);
  for (int inst = 1; inst <= n_inst; ++inst) {
    const int category = sample_category(rng, cumulative);
    draw_category[static_cast<size_t>(inst)] = category;
    const bool ellipse = rng.bernoulli(0.5);
    const int sh = static_cast<int>(rng.uniform_int(config.min_size, config.max_size));
    const int sw = static_cast<int>(rng.uniform_int(config.min_size, config.max_size));
    const int y0 = static_cast<int>(rng.uniform_int(0, h - sh));
    const int x0 = static_cast<int>(rng.uniform_int(0, w - sw));
    Rgb color = category_color(category);
    const double jitter = 0.04;
    color.r = std::clamp(color.r + jitter * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
    color.g = std::clamp(color.g + jitter * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
    color.b = std::clamp(color.b + jitter * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);

    const double cy = y0 + sh / 2.0, cx = x0 + sw / 2.0;
    const double ay = sh / 2.0, ax = sw / 2.0;
    for (int y = y0; y < y0 + sh; ++y) {
      for (int x = x0; x < x0 + sw; ++x) {
        if (ellipse) {
          const double dy = (y + 0.5 - cy) / ay;
          const double dx = (x + 0.5 - cx) / ax;
          if (dy * dy + dx * dx > 1.0) continue;
        }
        s.semantic.at(y, x) = category;
        s.instances.at(y, x) = inst;
        base.at(0, y, x) = color.r;
        base.at(1, y, x) = color.g;
        base.at(2, y, x) = color.b;
      }
    }
  }

  // Visible hulls after occlusion; fully hidden instances are dropped and
  // ids renumbered to stay dense.
  struct Hull {
    int min_y = 1 << 30, min_x = 1 << 30, max_y = -1, max_x = -1;
    bool visible() const { return max_y >= 0; }
  };
  std::vector<Hull> hulls(static_cast<size_t>(n_inst) + 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = s.instances.at(y, x);
      if (id == 0) continue;
      Hull& hull = hulls[static_cast<size_t>(id)];
      hull.min_y = std::min(hull.min_y, y);
      hull.min_x = std::min(hull.min_x, x);
      hull.max_y = std::max(hull.max_y, y);
      hull.max_x = std::max(hull.max_x, x);
    }
  }
  std::vector<int> remap(static_cast<size_t>(n_inst) + 1, 0);
  int next_id = 0;
  for (int inst = 1; inst <= n_inst; ++inst) {
    const Hull& hull = hulls[static_cast<size_t>(inst)];
    if (!hull.visible()) continue;
    remap[static_cast<size_t>(inst)] = ++next_id;
    InstanceRecord rec;
    rec.id = next_id;
    rec.category = draw_category[static_cast<size_t>(inst)];
    rec.box = Box{static_cast<double>(hull.min_y), static_cast<double>(hull.min_x),
                  static_cast<double>(hull.max_y + 1), static_cast<double>(hull.max_x + 1)};
    s.records.push_back(rec);
  }
  for (auto& v : s.instances.values) v = remap[static_cast<size_t>(v)];

  // Additive Gaussian noise, sigma = 0.05.
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = base.at(c, y, x) + 0.05 * rng.gaussian();
        s.image.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return s;
}

namespace {

json config_to_json(const SceneConfig& c) {
  return json{{"image_height", c.image_height},
              {"image_width", c.image_width},
              {"num_categories", c.num_categories},
              {"min_instances", c.min_instances},
              {"max_instances", c.max_instances},
              {"min_size", c.min_size},
              {"max_size", c.max_size},
              {"class_skew", c.class_skew},
              {"seed", c.seed}};
}

SceneConfig config_from_json(const json& j) {
  SceneConfig c;
  c.image_height = j.at("image_height").get<int>();
  c.image_width = j.at("image_width").get<int>();
  c.num_categories = j.at("num_categories").get<int>();
  c.min_instances = j.at("min_instances").get<int>();
  c.max_instances = j.at("max_instances").get<int>();
  c.min_size = j.at("min_size").get<int>();
  c.max_size = j.at("max_size").get<int>();
  c.class_skew = j.at("class_skew").get<std::vector<double>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

Manifest generate_dataset(const SceneConfig& config, int count, const std::string& out_dir) {
  config.validate();
  if (count < 0) throw std::invalid_argument("generate_dataset: negative count");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create dataset directory " + out_dir + ": " + ec.message());

  Manifest m;
  m.config = config;
  char name[64];
  for (int i = 0; i < count; ++i) {
    const Sample s = generate_sample(config, i);
    Manifest::Entry e;
    std::snprintf(name, sizeof(name), "sample_%05d_image.fcrt", i);
    e.image = name;
    std::snprintf(name, sizeof(name), "sample_%05d_semantic.fcrt", i);
    e.semantic = name;
    std::snprintf(name, sizeof(name), "sample_%05d_instances.fcrt", i);
    e.instances = name;
    e.records = s.records;
    write_tensor((fs::path(out_dir) / e.image).string(), s.image);
    write_tensor((fs::path(out_dir) / e.semantic).string(), label_map_to_tensor(s.semantic));
    write_tensor((fs::path(out_dir) / e.instances).string(), label_map_to_tensor(s.instances));
    m.samples.push_back(std::move(e));
  }
  write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

void write_manifest(const Manifest& m, const std::string& path) {
  json j;
  j["config"] = config_to_json(m.config);
  j["samples"] = json::array();
  for (const auto& e : m.samples) {
    json records = json::array();
    for (const auto& r : e.records) records.push_back(record_to_json(r));
    j["samples"].push_back(json{{"image", e.image},
                                {"semantic", e.semantic},
                                {"instances", e.instances},
                                {"records", records}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("manifest " + path + " is not valid JSON: " + e.what());
  }
  Manifest m;
  m.config = config_from_json(j.at("config"));
  for (const auto& je : j.at("samples")) {
    Manifest::Entry e;
    e.image = je.at("image").get<std::string>();
    e.semantic = je.at("semantic").get<std::string>();
    e.instances = je.at("instances").get<std::string>();
    for (const auto& jr : je.at("records")) e.records.push_back(record_from_json(jr));
    m.samples.push_back(std::move(e));
  }
  return m;
}

Sample load_sample(const Manifest::Entry& entry, const std::string& base_dir) {
  Sample s;
  s.image = read_tensor((fs::path(base_dir) / entry.image).string());
  s.semantic = tensor_to_label_map(read_tensor((fs::path(base_dir) / entry.semantic).string()));
  s.instances = tensor_to_label_map(read_tensor((fs::path(base_dir) / entry.instances).string()));
  s.records = entry.records;
  return s;
}

}  // namespace instseg
