#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace vdet::cost {

enum class AttentionMode { kFull3D, kVD };

std::string mode_name(AttentionMode m);
AttentionMode parse_mode(const std::string& s);

struct CostShape {
  std::int64_t channels = 1, height = 1, width = 1, depth = 1;
  int window = 1;

  bool operator==(const CostShape&) const = default;
};

/// Query-key logit entries computed. Full 3D: (HWT)^2. VD: over the three view planes and both
/// passes, planes x windows x (clamped window tokens)^2, padding tokens included.
std::int64_t pair_count(AttentionMode mode, std::int64_t h, std::int64_t w, std::int64_t t, int window);

/// Pair count of one view pass; `view` 0..2 in cascade order (WT, HT, HW).
std::int64_t view_pass_pairs(int view, std::int64_t h, std::int64_t w, std::int64_t t, int window);

/// Multiply-adds of QK^T and AV, counted as 2 FLOPs each: 4 C per logit entry.
std::int64_t attention_flops(AttentionMode mode, const CostShape& s);

/// Peak activation bytes: input and output feature maps (2CN) plus the QKV projection of the real
/// tokens (3CN) plus the attention weights live during one pass (N^2 for full 3D, the largest
/// view-pass pair count for VD). N = HWT.
std::int64_t activation_bytes(AttentionMode mode, const CostShape& s, int bytes_per_scalar = 4);

struct CostReport {
  AttentionMode mode = AttentionMode::kVD;
  CostShape shape;
  std::int64_t pairs = 0, flops = 0, bytes = 0;

  bool operator==(const CostReport&) const = default;
};

CostReport cost_report(AttentionMode mode, const CostShape& s, int bytes_per_scalar = 4);

/// Shapes evaluated by `bench` when no grid is given.
std::vector<CostShape> default_grid();

std::string to_csv(const std::vector<CostReport>& rows);
std::vector<CostReport> from_csv(const std::string& text);
nlohmann::json to_json(const std::vector<CostReport>& rows);
std::vector<CostReport> from_json(const nlohmann::json& j);

}  // namespace vdet::cost
