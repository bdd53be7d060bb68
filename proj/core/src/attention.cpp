// SPDX-License-Identifier: Apache-2.0
#include "moediff/attention.hpp"

#include <cmath>
#include <string>

#include "moediff/errors.hpp"

namespace moediff {

namespace {

void check_dims(const Tensor& h, const Tensor& keyvals, const AttentionParams& p,
                int heads, const char* kind) {
  const std::string where(kind);
  if (h.rank() != 2 || keyvals.rank() != 2) {
    throw DimensionError(where + ": inputs must be rank 2");
  }
  const int d = h.dim(1);
  if (p.wq.rank() != 2 || p.wq.dim(0) != d || p.wq.dim(1) != d) {
    throw DimensionError(where + ": wq " + p.wq.shape_str() + " does not match d=" +
                         std::to_string(d));
  }
  const int dk = keyvals.dim(1);
  if (p.wk.dim(0) != dk || p.wk.dim(1) != d || p.wv.dim(0) != dk || p.wv.dim(1) != d) {
    throw DimensionError(where + ": wk/wv do not map " + std::to_string(dk) +
                         " -> " + std::to_string(d));
  }
  if (heads < 1 || d % heads != 0) {
    throw DimensionError(where + ": d=" + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
}

struct HeadsResult {
  Tensor out;
  Tensor mean_map;
};

HeadsResult attend(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                   const std::vector<bool>* excluded_cols) {
  const int d = q.dim(1);
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  Tensor map_sum;
  for (int head = 0; head < heads; ++head) {
    Tensor qh = heads == 1 ? q : slice_cols(q, head * dh, dh);
    Tensor kh = heads == 1 ? k : slice_cols(k, head * dh, dh);
    Tensor vh = heads == 1 ? v : slice_cols(v, head * dh, dh);
    Tensor logits = affine(matmul(qh, transpose(kh)), scale, 0.0);
    Tensor m = excluded_cols ? masked_softmax_rows(logits, *excluded_cols)
                             : softmax_rows(logits);
    outs.push_back(matmul(m, vh));
    map_sum = head == 0 ? m : add(map_sum, m);
  }
  HeadsResult r;
  r.out = heads == 1 ? outs.front() : concat_cols(outs);
  r.mean_map = heads == 1 ? map_sum : affine(map_sum, 1.0 / heads, 0.0);
  return r;
}

}  // namespace

CrossAttentionResult cross_attention(const Tensor& h, const Tensor& text,
                                     const AttentionParams& params,
                                     const std::vector<bool>& pad_cols, int heads) {
  check_dims(h, text, params, heads, "cross_attention");
  if (static_cast<int>(pad_cols.size()) != text.dim(0)) {
    throw DimensionError("cross_attention: pad mask length does not match caption");
  }
  Tensor q = matmul(h, params.wq);
  Tensor k = matmul(text, params.wk);
  Tensor v = matmul(text, params.wv);
  HeadsResult r = attend(q, k, v, heads, &pad_cols);
  return {r.out, AttentionMap{r.mean_map, pad_cols}};
}

Tensor self_attention(const Tensor& h, const AttentionParams& params, int heads) {
  check_dims(h, h, params, heads, "self_attention");
  Tensor q = matmul(h, params.wq);
  Tensor k = matmul(h, params.wk);
  Tensor v = matmul(h, params.wv);
  return attend(q, k, v, heads, nullptr).out;
}

}  // namespace moediff
