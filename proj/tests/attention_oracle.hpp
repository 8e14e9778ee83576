#pragma once

// Brute-force per-query attention oracle. Materializes K_i and V_i explicitly
// for every query with plain double loops; reads parameter values directly and
// never touches the Tape machinery it is used to check.

#include <cmath>
#include <cstddef>
#include <vector>

#include "grt/attention.hpp"
#include "grt/edge_features.hpp"

namespace oracle {

namespace detail {

inline const std::vector<double>& vals(const grt::Parameter* p) {
  return p->values;
}

// y[r] = x . W[:, r] + b[r] for a row vector x of width `in`.
inline std::vector<double> affine_row(const std::vector<double>& x,
                                      const std::vector<double>& w,
                                      const std::vector<double>& b,
                                      std::size_t in, std::size_t out) {
  std::vector<double> y(b);
  for (std::size_t t = 0; t < in; ++t) {
    const double xv = x[t];
    for (std::size_t r = 0; r < out; ++r) y[r] += xv * w[t * out + r];
  }
  return y;
}

}  // namespace detail

// One output row per query, concatenated heads projected through w_o.
// edges == nullptr runs the vanilla path.
inline std::vector<double> per_query_attention(
    const std::vector<double>& x, std::size_t n,
    const grt::EdgeTensor* edges, const grt::LayerWeights& layer,
    const grt::AttentionConfig& config, const grt::AttnMask& mask) {
  using detail::affine_row;
  using detail::vals;

  const std::size_t d_in = config.d_in;
  const std::size_t heads = config.n_heads;
  const std::size_t dk = config.head_dim_k();
  const std::size_t dv = config.head_dim_v();
  const bool fuse_k = edges != nullptr && config.fuse_keys();
  const bool fuse_v = edges != nullptr && config.fuse_values();
  const std::size_t fused_w = config.fused_width();

  auto x_row = [&](std::size_t j) {
    return std::vector<double>(x.begin() + j * d_in, x.begin() + (j + 1) * d_in);
  };

  // phi(x_j, e_ij) for query i and object j.
  auto phi_row = [&](std::size_t i, std::size_t j) {
    std::vector<double> row = x_row(j);
    const auto e = edges->at(i, j);
    if (config.fusion_fn == grt::FusionFn::kConcat) {
      std::vector<double> proj(config.d_e_prime, 0.0);
      for (std::size_t t = 0; t < e.size(); ++t)
        for (std::size_t r = 0; r < config.d_e_prime; ++r)
          proj[r] += e[t] * vals(layer.w_fuse)[t * config.d_e_prime + r];
      row.insert(row.end(), proj.begin(), proj.end());
    } else {
      for (std::size_t t = 0; t < e.size(); ++t)
        for (std::size_t r = 0; r < d_in; ++r)
          row[r] += e[t] * vals(layer.w_fuse)[t * d_in + r];
    }
    return row;
  };

  std::vector<double> out(n * d_in, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.allowed.empty()) {
      bool any = false;
      for (std::size_t j = 0; j < n; ++j) any = any || mask.allowed[i * n + j];
      if (!any) continue;  // fully-masked query outputs zeros
    }

    const std::vector<double> q =
        affine_row(x_row(i), vals(layer.w_q), vals(layer.b_q), d_in, heads * dk);

    // Materialize K_i and V_i row by row.
    std::vector<std::vector<double>> keys(n), values(n);
    for (std::size_t j = 0; j < n; ++j) {
      keys[j] = fuse_k ? affine_row(phi_row(i, j), vals(layer.w_k),
                                    vals(layer.b_k), fused_w, heads * dk)
                       : affine_row(x_row(j), vals(layer.w_k), vals(layer.b_k),
                                    d_in, heads * dk);
      values[j] = fuse_v ? affine_row(phi_row(i, j), vals(layer.w_v),
                                      vals(layer.b_v), fused_w, heads * dv)
                         : affine_row(x_row(j), vals(layer.w_v), vals(layer.b_v),
                                      d_in, heads * dv);
    }

    std::vector<double> ctx(heads * dv, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> logits(n, -HUGE_VAL);
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask.allowed.empty() && !mask.allowed[i * n + j]) continue;
        double s = 0.0;
        for (std::size_t t = 0; t < dk; ++t)
          s += q[h * dk + t] * keys[j][h * dk + t];
        logits[j] = s / std::sqrt(static_cast<double>(dk));
      }
      double mx = -HUGE_VAL;
      for (double l : logits) mx = std::max(mx, l);
      double denom = 0.0;
      for (double l : logits)
        if (l != -HUGE_VAL) denom += std::exp(l - mx);
      for (std::size_t j = 0; j < n; ++j) {
        if (logits[j] == -HUGE_VAL) continue;
        const double p = std::exp(logits[j] - mx) / denom;
        for (std::size_t t = 0; t < dv; ++t)
          ctx[h * dv + t] += p * values[j][h * dv + t];
      }
    }

    const std::vector<double> row =
        affine_row(ctx, vals(layer.w_o), vals(layer.b_o), heads * dv, d_in);
    for (std::size_t t = 0; t < d_in; ++t) out[i * d_in + t] = row[t];
  }
  return out;
}

}  // namespace oracle
