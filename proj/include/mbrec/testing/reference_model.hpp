#pragma once

// Loop-per-formula reimplementation of the scoring model used as a test
// oracle. Shares nothing with the tape code beyond the parameter arrays,
// which it looks up by name.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mbrec/graph.hpp"
#include "mbrec/model.hpp"

namespace mbrec::testing {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

class ReferenceModel {
 public:
  ReferenceModel(const ModelParams& params, const InteractionTensor& t, double layer_eps = 1e-12)
      : p_(params), t_(t), eps_(layer_eps) {
    const ModelConfig& c = params.config();
    d_ = c.dim;
    M_ = c.channels;
    C_ = c.heads;
    dh_ = d_ / C_;
    L_ = c.layers;
    K_ = t.num_behaviors();
    users_.push_back(table("embedding.user"));
    items_.push_back(table("embedding.item"));
    for (std::size_t l = 0; l < L_; ++l) {
      const std::string lp = "layer" + std::to_string(l) + ".";
      const std::string up = c.share_sides ? lp + "shared" : lp + "user";
      const std::string ip = c.share_sides ? lp + "shared" : lp + "item";
      Mat next_users(t.num_users()), next_items(t.num_items());
      for (std::size_t i = 0; i < t.num_users(); ++i) next_users[i] = node(up, Side::user, i, items_.back());
      for (std::size_t j = 0; j < t.num_items(); ++j) next_items[j] = node(ip, Side::item, j, users_.back());
      users_.push_back(std::move(next_users));
      items_.push_back(std::move(next_items));
    }
  }

  // Layer-l embedding of a user / item.
  const Vec& user(std::size_t l, std::size_t i) const { return users_[l][i]; }
  const Vec& item(std::size_t l, std::size_t j) const { return items_[l][j]; }

  // Head-averaged behavior attention of a node at the given layer (row k = query behavior).
  Mat attention(std::size_t layer, Side side, std::size_t node) const {
    const std::string prefix = side_prefix(layer, side);
    const Mat& src = side == Side::user ? items_[layer] : users_[layer];
    const Mat msgs = messages(prefix, side, node, src);
    Mat avg(K_, Vec(K_, 0.0));
    for (std::size_t c = 0; c < C_; ++c) {
      const Mat a = head_attention(prefix, msgs, c);
      for (std::size_t k = 0; k < K_; ++k)
        for (std::size_t k2 = 0; k2 < K_; ++k2) avg[k][k2] += a[k][k2] / static_cast<double>(C_);
    }
    return avg;
  }

  Vec aggregation(std::size_t layer, Side side, std::size_t node) const {
    const std::string prefix = side_prefix(layer, side);
    const Mat& src = side == Side::user ? items_[layer] : users_[layer];
    return behavior_weights(prefix, refine(prefix, messages(prefix, side, node, src)));
  }

  // phi[l][l'] averaged over heads.
  Mat layer_importance(std::size_t i, std::size_t j) const {
    Mat out(L_ + 1, Vec(L_ + 1, 0.0));
    const Mat u = normalized(users_, i), v = normalized(items_, j);
    for (std::size_t c = 0; c < C_; ++c)
      for (std::size_t l = 0; l <= L_; ++l)
        for (std::size_t l2 = 0; l2 <= L_; ++l2) out[l][l2] += phi(u[l], v[l2], c) / static_cast<double>(C_);
    return out;
  }

  double score(std::size_t i, std::size_t j) const {
    const Mat u = normalized(users_, i), v = normalized(items_, j);
    const Mat& T = table("fusion.value");
    Vec gamma(d_, 0.0);
    for (std::size_t c = 0; c < C_; ++c) {
      for (std::size_t l = 0; l <= L_; ++l) {
        for (std::size_t l2 = 0; l2 <= L_; ++l2) {
          const double w = phi(u[l], v[l2], c);
          for (std::size_t r = c * dh_; r < (c + 1) * dh_; ++r) {
            double tu = 0, tv = 0;
            for (std::size_t q = 0; q < d_; ++q) {
              tu += T[r][q] * u[l][q];
              tv += T[r][q] * v[l2][q];
            }
            gamma[r] += w * tu * tv;
          }
        }
      }
    }
    const Mat& W3 = table("predict.hidden_weight");
    const Mat& b3 = table("predict.hidden_bias");
    const Mat& w4 = table("predict.output_weight");
    double out = 0;
    for (std::size_t r = 0; r < d_; ++r) {
      double h = b3[0][r];
      for (std::size_t q = 0; q < d_; ++q) h += W3[r][q] * gamma[q];
      out += w4[r][0] * (std::max(h, 0.0) + gamma[r]);
    }
    return out;
  }

 private:
  const Mat& table(const std::string& name) const {
    if (auto it = cache_.find(name); it != cache_.end()) return it->second;
    const auto idx = p_.find(name);
    if (!idx) throw ContractError("reference model: missing parameter " + name);
    const Array& a = p_[*idx];
    Mat m(a.rows(), Vec(a.cols()));
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t c = 0; c < a.cols(); ++c) m[r][c] = static_cast<double>(a(r, c));
    return cache_.emplace(name, std::move(m)).first->second;
  }

  std::string side_prefix(std::size_t layer, Side side) const {
    const std::string lp = "layer" + std::to_string(layer) + ".";
    if (p_.config().share_sides) return lp + "shared";
    return lp + (side == Side::user ? "user" : "item");
  }

  // Behavior-specific messages for one node.
  Mat messages(const std::string& prefix, Side side, std::size_t node, const Mat& src) const {
    Mat out;
    for (std::size_t k = 0; k < K_; ++k) {
      const std::string b = prefix + ".behavior" + std::to_string(k);
      const Mat& U = table(b + ".channel_transform");
      const Mat& G = table(b + ".channel_gate");
      const Mat& bias = table(b + ".channel_bias");
      Vec s(d_, 0.0);
      const auto nb = t_.neighbors(side, node, k);
      for (index_t j : nb)
        for (std::size_t q = 0; q < d_; ++q) s[q] += src[j][q];
      if (p_.config().mean_pool && !nb.empty())
        for (double& x : s) x /= static_cast<double>(nb.size());
      Vec msg(d_, 0.0);
      for (std::size_t m = 0; m < M_; ++m) {
        double gate = bias[0][m];
        for (std::size_t q = 0; q < d_; ++q) gate += G[m][q] * s[q];
        gate = std::max(gate, 0.0);
        for (std::size_t r = 0; r < d_; ++r) {
          double proj = 0;
          for (std::size_t q = 0; q < d_; ++q) proj += U[m * d_ + r][q] * s[q];
          msg[r] += gate * proj;
        }
      }
      out.push_back(std::move(msg));
    }
    return out;
  }

  Vec head_slice(const Mat& W, const Vec& x, std::size_t c) const {
    Vec out(dh_, 0.0);
    for (std::size_t r = 0; r < dh_; ++r)
      for (std::size_t q = 0; q < d_; ++q) out[r] += W[c * dh_ + r][q] * x[q];
    return out;
  }

  // alpha[k][k'] for head c.
  Mat head_attention(const std::string& prefix, const Mat& msgs, std::size_t c) const {
    const Mat& Q = table(prefix + ".attention_query");
    const Mat& Kw = table(prefix + ".attention_key");
    Mat alpha(K_, Vec(K_));
    for (std::size_t k = 0; k < K_; ++k) {
      const Vec q = head_slice(Q, msgs[k], c);
      double mx = -1e300;
      for (std::size_t k2 = 0; k2 < K_; ++k2) {
        const Vec kk = head_slice(Kw, msgs[k2], c);
        double dot = 0;
        for (std::size_t r = 0; r < dh_; ++r) dot += q[r] * kk[r];
        alpha[k][k2] = dot / std::sqrt(static_cast<double>(dh_));
        mx = std::max(mx, alpha[k][k2]);
      }
      double z = 0;
      for (double& a : alpha[k]) z += (a = std::exp(a - mx));
      for (double& a : alpha[k]) a /= z;
    }
    return alpha;
  }

  Mat refine(const std::string& prefix, const Mat& msgs) const {
    const Mat& V = table(prefix + ".attention_value");
    Mat out = msgs;
    for (std::size_t c = 0; c < C_; ++c) {
      const Mat alpha = head_attention(prefix, msgs, c);
      for (std::size_t k = 0; k < K_; ++k)
        for (std::size_t k2 = 0; k2 < K_; ++k2) {
          const Vec v = head_slice(V, msgs[k2], c);
          for (std::size_t r = 0; r < dh_; ++r) out[k][c * dh_ + r] += alpha[k][k2] * v[r];
        }
    }
    return out;
  }

  Vec behavior_weights(const std::string& prefix, const Mat& refined) const {
    const Mat& W1 = table(prefix + ".aggregate_hidden_weight");
    const Mat& b1 = table(prefix + ".aggregate_hidden_bias");
    const Mat& w2 = table(prefix + ".aggregate_output_weight");
    const Mat& b2 = table(prefix + ".aggregate_output_bias");
    Vec beta(K_);
    double mx = -1e300;
    for (std::size_t k = 0; k < K_; ++k) {
      double s = b2[0][0];
      for (std::size_t h = 0; h < W1.size(); ++h) {
        double z = b1[0][h];
        for (std::size_t q = 0; q < d_; ++q) z += W1[h][q] * refined[k][q];
        s += w2[h][0] * std::max(z, 0.0);
      }
      beta[k] = s;
      mx = std::max(mx, s);
    }
    double z = 0;
    for (double& b : beta) z += (b = std::exp(b - mx));
    for (double& b : beta) b /= z;
    return beta;
  }

  Vec node(const std::string& prefix, Side side, std::size_t n, const Mat& src) const {
    const Mat refined = refine(prefix, messages(prefix, side, n, src));
    const Vec beta = behavior_weights(prefix, refined);
    Vec out(d_, 0.0);
    for (std::size_t k = 0; k < K_; ++k)
      for (std::size_t q = 0; q < d_; ++q) out[q] += beta[k] * refined[k][q];
    return out;
  }

  Mat normalized(const std::vector<Mat>& layers, std::size_t n) const {
    Mat out;
    for (const Mat& layer : layers) {
      Vec v = layer[n];
      double s = 0;
      for (double x : v) s += x * x;
      const double inv = 1.0 / std::sqrt(s + eps_);
      for (double& x : v) x *= inv;
      out.push_back(std::move(v));
    }
    return out;
  }

  double phi(const Vec& u, const Vec& v, std::size_t c) const {
    const Mat& P = table("fusion.key");
    const Vec pu = head_slice(P, u, c), pv = head_slice(P, v, c);
    double dot = 0;
    for (std::size_t r = 0; r < dh_; ++r) dot += pu[r] * pv[r];
    return std::max(dot, 0.0);
  }

  const ModelParams& p_;
  const InteractionTensor& t_;
  double eps_;
  std::size_t d_ = 0, M_ = 0, C_ = 0, dh_ = 0, L_ = 0, K_ = 0;
  std::vector<Mat> users_, items_;
  mutable std::map<std::string, Mat> cache_;  // node-stable references
};

}  // namespace mbrec::testing
