#include "vdet/cost_model.hpp"

#include <algorithm>
#include <sstream>

#include "vdet/tensor.hpp"

namespace vdet::cost {

namespace {

struct AxisTiling {
  std::int64_t win, count;
};

AxisTiling tile(std::int64_t len, int window) {
  const std::int64_t win = std::min<std::int64_t>(window, len);
  return {win, (len + win - 1) / win};
}

void check(std::int64_t h, std::int64_t w, std::int64_t t, int window) {
  if (h < 1 || w < 1 || t < 1 || window < 1) {
    throw ConfigError("cost model needs positive dimensions and window");
  }
}

}  // namespace

std::string mode_name(AttentionMode m) { return m == AttentionMode::kFull3D ? "full3d" : "vd"; }

AttentionMode parse_mode(const std::string& s) {
  if (s == "full3d") return AttentionMode::kFull3D;
  if (s == "vd") return AttentionMode::kVD;
  throw FormatError("unknown attention mode '" + s + "'");
}

std::int64_t view_pass_pairs(int view, std::int64_t h, std::int64_t w, std::int64_t t, int window) {
  check(h, w, t, window);
  std::int64_t planes = 0, rows = 0, cols = 0;
  switch (view) {
    case 0: planes = h, rows = w, cols = t; break;
    case 1: planes = w, rows = h, cols = t; break;
    case 2: planes = t, rows = h, cols = w; break;
    default: throw IndexError("view index must be 0, 1 or 2");
  }
  const AxisTiling r = tile(rows, window), c = tile(cols, window);
  const std::int64_t n = r.win * c.win;
  return planes * r.count * c.count * n * n;
}

std::int64_t pair_count(AttentionMode mode, std::int64_t h, std::int64_t w, std::int64_t t, int window) {
  check(h, w, t, window);
  if (mode == AttentionMode::kFull3D) {
    const std::int64_t n = h * w * t;
    return n * n;
  }
  std::int64_t total = 0;
  for (int v = 0; v < 3; ++v) total += 2 * view_pass_pairs(v, h, w, t, window);
  return total;
}

std::int64_t attention_flops(AttentionMode mode, const CostShape& s) {
  return 4 * s.channels * pair_count(mode, s.height, s.width, s.depth, s.window);
}

std::int64_t activation_bytes(AttentionMode mode, const CostShape& s, int bytes_per_scalar) {
  check(s.height, s.width, s.depth, s.window);
  if (s.channels < 1 || bytes_per_scalar < 1) throw ConfigError("channels and bytes_per_scalar must be positive");
  const std::int64_t n = s.height * s.width * s.depth;
  std::int64_t weights = 0;
  if (mode == AttentionMode::kFull3D) {
    weights = n * n;
  } else {
    for (int v = 0; v < 3; ++v) weights = std::max(weights, view_pass_pairs(v, s.height, s.width, s.depth, s.window));
  }
  return (5 * s.channels * n + weights) * bytes_per_scalar;
}

CostReport cost_report(AttentionMode mode, const CostShape& s, int bytes_per_scalar) {
  return CostReport{mode, s, pair_count(mode, s.height, s.width, s.depth, s.window), attention_flops(mode, s),
                    activation_bytes(mode, s, bytes_per_scalar)};
}

std::vector<CostShape> default_grid() {
  std::vector<CostShape> g;
  for (std::int64_t hw : {4, 8, 16, 32, 64, 128}) {
    for (std::int64_t t : {3, 4, 5}) {
      for (int w : {2, 4, 7}) g.push_back(CostShape{256, hw, hw, t, w});
    }
  }
  // Small cubes used by the brute-force checks.
  for (std::int64_t d : {2, 4, 8}) g.push_back(CostShape{32, d, d, d, 2});
  return g;
}

std::string to_csv(const std::vector<CostReport>& rows) {
  std::ostringstream os;
  os << "mode,channels,height,width,depth,window,pair_count,attention_flops,activation_bytes\n";
  for (const auto& r : rows) {
    os << mode_name(r.mode) << ',' << r.shape.channels << ',' << r.shape.height << ',' << r.shape.width << ','
       << r.shape.depth << ',' << r.shape.window << ',' << r.pairs << ',' << r.flops << ',' << r.bytes << '\n';
  }
  return os.str();
}

std::vector<CostReport> from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<CostReport> out;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;  // provenance comments
    if (!header) {
      header = true;
      continue;
    }
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 9) throw FormatError("cost CSV row has " + std::to_string(f.size()) + " fields: " + line);
    CostReport r;
    r.mode = parse_mode(f[0]);
    r.shape = CostShape{std::stoll(f[1]), std::stoll(f[2]), std::stoll(f[3]), std::stoll(f[4]), std::stoi(f[5])};
    r.pairs = std::stoll(f[6]);
    r.flops = std::stoll(f[7]);
    r.bytes = std::stoll(f[8]);
    out.push_back(r);
  }
  if (!header) throw FormatError("empty cost CSV");
  return out;
}

nlohmann::json to_json(const std::vector<CostReport>& rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"mode", mode_name(r.mode)},
                   {"channels", r.shape.channels},
                   {"height", r.shape.height},
                   {"width", r.shape.width},
                   {"depth", r.shape.depth},
                   {"window", r.shape.window},
                   {"pair_count", r.pairs},
                   {"attention_flops", r.flops},
                   {"activation_bytes", r.bytes}});
  }
  return arr;
}

std::vector<CostReport> from_json(const nlohmann::json& j) {
  std::vector<CostReport> out;
  for (const auto& o : j) {
    CostReport r;
    r.mode = parse_mode(o.at("mode").get<std::string>());
    r.shape = CostShape{o.at("channels").get<std::int64_t>(), o.at("height").get<std::int64_t>(),
                        o.at("width").get<std::int64_t>(), o.at("depth").get<std::int64_t>(),
                        o.at("window").get<int>()};
    r.pairs = o.at("pair_count").get<std::int64_t>();
    r.flops = o.at("attention_flops").get<std::int64_t>();
    r.bytes = o.at("activation_bytes").get<std::int64_t>();
    out.push_back(r);
  }
  return out;
}

}  // namespace vdet::cost
