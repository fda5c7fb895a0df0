#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "vdet/autodiff.hpp"

/// Differentiable operations on tape values. Every op records its reverse rule on the
/// tape of its inputs; all reductions run in a fixed left-to-right order.
namespace vdet::ops {

using Index = std::shared_ptr<const std::vector<std::int64_t>>;

/// Batched matrix product. `a` is [..., m, k] (or [..., k, m] when trans_a), `b` is either a
/// shared [k, n] matrix or a batch [..., k, n] with the same leading dims as `a`.
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);

// Element-wise; `b` broadcasts into the shape of `a` (numpy rules, right-aligned, b dims 1 or equal).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);

Var reshape(Var a, Shape shape);

/// out[i] = a[index[i]], or 0 where index[i] < 0. Reverse rule scatter-adds in ascending i.
Var gather(Var a, Index index, Shape out_shape);

Var permute(Var a, const std::vector<int>& axes);
Var concat(std::span<const Var> parts, int axis);
Var stack(std::span<const Var> parts, int axis);
Var slice(Var a, int axis, std::int64_t start, std::int64_t length);
/// Selects index `i` along `axis` and drops that axis.
Var select(Var a, int axis, std::int64_t i);
/// Zero padding; pads[d] = {before, after} for every axis.
Var pad(Var a, const std::vector<std::pair<std::int64_t, std::int64_t>>& pads);
/// Cyclic roll: out[(i + shift) mod n] = a[i] along `axis`.
Var roll(Var a, int axis, std::int64_t shift);

Var softmax_last(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var x);
Var exp(Var x);

Var sum(Var x);
Var mean(Var x);

/// x: [..., in], weight: [in, out], bias: [out].
Var linear(Var x, Var weight, Var bias);
Var linear(Var x, Var weight);

/// x: [C, H, W], weight: [Co, C, k, k], bias: [Co]. Zero padding `pad` on every side.
Var conv2d(Var x, Var weight, Var bias, int stride, int pad);
/// x: [C, H, W] -> [C, 2H, 2W], nearest neighbour.
Var upsample_nearest2x(Var x);
/// x: [C, H, W] -> [C, H/2, W/2] (floor), kernel 2 stride 2.
Var maxpool2x2(Var x);

/// Mean binary cross-entropy over all elements, targets in {0, 1}.
Var bce_with_logits(Var logits, const Tensor& targets);
/// Mean softmax cross-entropy; logits [N, K], labels in [0, K).
Var cross_entropy(Var logits, std::span<const int> labels);
/// Sum of element-wise smooth-L1 (Huber with transition at beta).
Var smooth_l1(Var pred, const Tensor& target, double beta = 1.0);

// Raw kernels, exposed for tests and for code paths that need no tape.
void gemm(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n, bool trans_a,
          bool trans_b, bool accumulate);
Index make_index(std::vector<std::int64_t> v);
std::vector<std::int64_t> permute_index(const Shape& shape, const std::vector<int>& axes);
Shape permuted_shape(const Shape& shape, const std::vector<int>& axes);

}  // namespace vdet::ops
