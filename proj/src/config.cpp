// SPDX-License-Identifier: Apache-2.0
#include "ttslam/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace ttslam {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + s + "'");
  }
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& s) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("config key '" + key + "': expected an integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Entry {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define TTSLAM_INT(name)                                                         \
  Entry {                                                                        \
    #name, [](const RunConfig& c) { return std::to_string(c.name); },            \
        [](RunConfig& c, const std::string& k, const std::string& v) {          \
          c.name = parse_int<decltype(c.name)>(k, v);                            \
        }                                                                        \
  }
#define TTSLAM_DOUBLE(name)                                                                   \
  Entry {                                                                                     \
    #name, [](const RunConfig& c) { return format_double(c.name); },                          \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.name = parse_double(k, v); } \
  }
#define TTSLAM_BOOL(name)                                                                   \
  Entry {                                                                                   \
    #name, [](const RunConfig& c) { return std::string(c.name ? "true" : "false"); },       \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.name = parse_bool(k, v); } \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      TTSLAM_INT(seed),
      TTSLAM_INT(n0),
      TTSLAM_INT(group_size),
      TTSLAM_INT(tracking_points),
      TTSLAM_INT(ba_pixels),
      TTSLAM_INT(warp_pixels),
      TTSLAM_INT(tracking_window),
      TTSLAM_INT(keyframe_every),
      TTSLAM_INT(keyframe_max),
      TTSLAM_DOUBLE(keyframe_overlap),
      TTSLAM_INT(overlap_lattice),
      TTSLAM_INT(min_valid_reprojections),
      TTSLAM_INT(init_iters),
      TTSLAM_INT(init_warp_only_iters),
      TTSLAM_INT(init_pose_start),
      TTSLAM_INT(tracking_iters),
      TTSLAM_INT(ba_iters),
      Entry{"voxel_sizes",
            [](const RunConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.voxel_sizes.size(); ++i) {
                if (i) s += ",";
                s += format_double(c.voxel_sizes[i]);
              }
              return s;
            },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.voxel_sizes.clear();
              for (const auto& item : split(v, ',')) c.voxel_sizes.push_back(parse_double(k, item));
            }},
      TTSLAM_DOUBLE(tau_opacity),
      TTSLAM_DOUBLE(tau_color),
      TTSLAM_INT(samples),
      TTSLAM_BOOL(stratified),
      TTSLAM_DOUBLE(near),
      TTSLAM_DOUBLE(far),
      TTSLAM_DOUBLE(transmittance_cutoff),
      Entry{"alpha_rgb", [](const RunConfig& c) { return format_double(c.loss.alpha_rgb); },
            [](RunConfig& c, const std::string& k, const std::string& v) { c.loss.alpha_rgb = parse_double(k, v); }},
      Entry{"alpha_warping", [](const RunConfig& c) { return format_double(c.loss.alpha_warping); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.loss.alpha_warping = parse_double(k, v);
            }},
      Entry{"alpha_z",
            [](const RunConfig& c) {
              std::string s;
              for (const auto& [z, a] : c.loss.alpha_z) {
                if (!s.empty()) s += ",";
                s += std::to_string(z) + ":" + format_double(a);
              }
              return s;
            },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.loss.alpha_z.clear();
              for (const auto& item : split(v, ',')) {
                const auto colon = item.find(':');
                if (colon == std::string::npos) {
                  throw std::invalid_argument("config key 'alpha_z': expected size:weight pairs");
                }
                c.loss.alpha_z[parse_int<int>(k, trim(item.substr(0, colon)))] =
                    parse_double(k, trim(item.substr(colon + 1)));
              }
            }},
      TTSLAM_BOOL(init_depth_supervision),
      TTSLAM_DOUBLE(init_depth_weight),
      TTSLAM_DOUBLE(lr_grid),
      TTSLAM_DOUBLE(lr_decoder),
      TTSLAM_DOUBLE(lr_pose_tracking),
      TTSLAM_DOUBLE(lr_pose_ba),
      TTSLAM_DOUBLE(pose_clip),
      TTSLAM_BOOL(tt_enabled),
      TTSLAM_BOOL(ho_enabled),
      TTSLAM_INT(workers),
  };
  return table;
}

#undef TTSLAM_INT
#undef TTSLAM_DOUBLE
#undef TTSLAM_BOOL

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("invalid config: " + what);
}

}  // namespace

void RunConfig::validate() const {
  require(n0 >= 3, "n0 must be at least 3");
  require(group_size >= 1, "group_size must be positive");
  require(tracking_points >= 1, "tracking_points must be positive");
  require(ba_pixels >= 0 && warp_pixels >= 0, "pixel counts must be nonnegative");
  require(tracking_window >= 1, "tracking_window must be positive");
  require(keyframe_every >= 1, "keyframe_every must be positive");
  require(keyframe_max >= 0, "keyframe_max must be nonnegative");
  require(keyframe_overlap >= 0.0 && keyframe_overlap <= 1.0, "keyframe_overlap must lie in [0, 1]");
  require(overlap_lattice >= 1, "overlap_lattice must be positive");
  require(min_valid_reprojections >= 0, "min_valid_reprojections must be nonnegative");
  require(init_iters >= 0 && tracking_iters >= 0 && ba_iters >= 0, "iteration budgets must be nonnegative");
  require(init_warp_only_iters >= 0 && init_pose_start >= 0, "schedule boundaries must be nonnegative");
  require(voxel_sizes.size() == static_cast<std::size_t>(kLevels), "voxel_sizes needs 7 entries");
  require(tau_opacity > 0.0 && tau_color > 0.0, "temperatures must be positive");
  require(samples >= 2, "samples must be at least 2");
  require(near > 0.0, "near must be positive");
  require(far <= 0.0 || far > near, "far must exceed near");
  require(transmittance_cutoff >= 0.0 && transmittance_cutoff < 1.0, "transmittance_cutoff must lie in [0, 1)");
  require(init_depth_weight >= 0.0, "init_depth_weight must be nonnegative");
  require(lr_grid > 0.0 && lr_decoder > 0.0 && lr_pose_tracking > 0.0 && lr_pose_ba > 0.0,
          "learning rates must be positive");
  require(pose_clip > 0.0, "pose_clip must be positive");
  require(workers >= 0, "workers must be nonnegative");
  loss.validate();
}

std::vector<std::string> preset_names() { return {"default", "desk", "replica", "7scenes"}; }

RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "default" || name == "replica") return c;
  if (name == "7scenes") {
    c.ba_pixels = 5000;
    c.voxel_sizes = {0.48, 0.32, 0.24, 0.16, 0.12, 0.08, 0.04};
    return c;
  }
  if (name == "desk") {
    // Single-machine scale for 128x128 synthetic sequences.
    c.tracking_points = 2000;
    c.ba_pixels = 256;
    c.warp_pixels = 2;
    c.samples = 32;
    return c;
  }
  throw std::invalid_argument("unknown preset '" + name + "'");
}

void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value) {
  for (const Entry& e : entries()) {
    if (key == e.key) {
      e.set(config, key, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

void parse_config(std::istream& is, RunConfig& config) {
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected key=value");
    }
    apply_config_entry(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  parse_config(is, base);
  return base;
}

void write_config(std::ostream& os, const RunConfig& config) {
  for (const Entry& e : entries()) os << e.key << " = " << e.get(config) << "\n";
}

std::string to_string(const RunConfig& config) {
  std::ostringstream os;
  write_config(os, config);
  return os.str();
}

}  // namespace ttslam
