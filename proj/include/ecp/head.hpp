// Copyright 2026 The ecp authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecp/binio.hpp"
#include "ecp/rng.hpp"

namespace ecp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Exact Gaussian-error-function GELU: x * Phi(x).
inline double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

inline double gelu_grad(double x) {
  const double phi_cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double phi_pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return phi_cdf + x * phi_pdf;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

enum class HeadMode { Linear, ProbeLinear, ProbeMlp };

inline std::string to_string(HeadMode m) {
  switch (m) {
    case HeadMode::Linear: return "linear";
    case HeadMode::ProbeLinear: return "probe_linear";
    case HeadMode::ProbeMlp: return "probe_mlp";
  }
  throw std::logic_error("bad HeadMode");
}

inline HeadMode parse_head_mode(const std::string& s) {
  if (s == "linear") return HeadMode::Linear;
  if (s == "probe_linear") return HeadMode::ProbeLinear;
  if (s == "probe_mlp") return HeadMode::ProbeMlp;
  throw std::runtime_error("unknown head mode: '" + s + "'");
}

struct ProbeParams {
  Matrix Q;  // M x D learned queries
  Matrix W;  // D x d projection
};

struct AffineParams {
  Matrix W;  // out x in
  Vector b;  // out
};

struct LayerNormParams {
  Vector gain;
  Vector bias;
};

struct MlpParams {
  AffineParams fc1, fc2, fc3;
  LayerNormParams ln1, ln2;
  double dropout_p = 0.1;
};

// Trainable head. Linear mode mean-pools patches into a single affine layer;
// the probe modes aggregate with learned queries, optionally followed by the
// three-layer MLP.
struct HeadParams {
  HeadMode mode = HeadMode::ProbeMlp;
  ProbeParams probe;
  AffineParams linear;  // single-affine classifier (Linear / ProbeLinear)
  MlpParams mlp;        // ProbeMlp classifier

  int patch_dim() const {
    return mode == HeadMode::Linear ? int(linear.W.cols()) : int(probe.Q.cols());
  }
  int feature_dim() const {
    return mode == HeadMode::Linear ? int(linear.W.cols())
                                    : int(probe.Q.rows() * probe.W.cols());
  }
};

inline constexpr double kLayerNormEps = 1e-5;

// Applies f(name, tensor) to every enabled tensor in declaration order. This
// order defines checkpoint layout and optimizer iteration.
template <class HP, class F>
void for_each_tensor(HP& p, F&& f) {
  if (p.mode != HeadMode::Linear) {
    f("probe.Q", p.probe.Q);
    f("probe.W", p.probe.W);
  }
  if (p.mode == HeadMode::ProbeMlp) {
    f("mlp.fc1.W", p.mlp.fc1.W);
    f("mlp.fc1.b", p.mlp.fc1.b);
    f("mlp.ln1.gain", p.mlp.ln1.gain);
    f("mlp.ln1.bias", p.mlp.ln1.bias);
    f("mlp.fc2.W", p.mlp.fc2.W);
    f("mlp.fc2.b", p.mlp.fc2.b);
    f("mlp.ln2.gain", p.mlp.ln2.gain);
    f("mlp.ln2.bias", p.mlp.ln2.bias);
    f("mlp.fc3.W", p.mlp.fc3.W);
    f("mlp.fc3.b", p.mlp.fc3.b);
  } else {
    f("linear.W", p.linear.W);
    f("linear.b", p.linear.b);
  }
}

inline HeadParams zeros_like(const HeadParams& p) {
  HeadParams z = p;
  for_each_tensor(z, [](const char*, auto& t) { t.setZero(); });
  return z;
}

// acc += inc, tensor by tensor.
inline void accumulate(HeadParams& acc, const HeadParams& inc) {
  if (acc.mode != inc.mode)
    throw std::runtime_error("accumulate: head mode mismatch");
  std::vector<Eigen::Map<Eigen::ArrayXd>> a;
  std::vector<Eigen::Map<const Eigen::ArrayXd>> b;
  for_each_tensor(acc, [&](const char*, auto& t) { a.emplace_back(t.data(), t.size()); });
  for_each_tensor(inc, [&](const char*, const auto& t) { b.emplace_back(t.data(), t.size()); });
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size())
      throw std::runtime_error("accumulate: tensor shape mismatch");
    a[i] += b[i];
  }
}

namespace detail {

inline void fill_uniform(Matrix& m, double scale, Rng& rng) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-scale, scale);
}

inline AffineParams init_affine(int out, int in, Rng& rng) {
  AffineParams a;
  a.W = Matrix(out, in);
  fill_uniform(a.W, 1.0 / std::sqrt(double(in)), rng);
  a.b = Vector::Zero(out);
  return a;
}

inline LayerNormParams init_layer_norm(int n) {
  return {Vector::Ones(n), Vector::Zero(n)};
}

}  // namespace detail

// Symmetric uniform init with 1/sqrt(fan_in) scale; normalization gain 1,
// bias 0. Tensor fill order is fixed so a seed pins the parameters exactly.
inline HeadParams init_head(HeadMode mode, int patch_dim, int num_queries,
                            int proj_dim, int hidden, double dropout_p, Rng rng) {
  if (patch_dim < 1) throw std::runtime_error("init_head: patch_dim must be >= 1");
  if (dropout_p < 0 || dropout_p >= 1)
    throw std::runtime_error("init_head: dropout_p must be in [0, 1)");
  HeadParams p;
  p.mode = mode;
  if (mode != HeadMode::Linear) {
    if (num_queries < 1 || proj_dim < 1)
      throw std::runtime_error("init_head: num_queries and proj_dim must be >= 1");
    const double s = 1.0 / std::sqrt(double(patch_dim));
    p.probe.Q = Matrix(num_queries, patch_dim);
    detail::fill_uniform(p.probe.Q, s, rng);
    p.probe.W = Matrix(patch_dim, proj_dim);
    detail::fill_uniform(p.probe.W, s, rng);
  }
  const int feat = mode == HeadMode::Linear ? patch_dim : num_queries * proj_dim;
  if (mode == HeadMode::ProbeMlp) {
    if (hidden < 1) throw std::runtime_error("init_head: hidden must be >= 1");
    p.mlp.fc1 = detail::init_affine(hidden, feat, rng);
    p.mlp.ln1 = detail::init_layer_norm(hidden);
    p.mlp.fc2 = detail::init_affine(hidden, hidden, rng);
    p.mlp.ln2 = detail::init_layer_norm(hidden);
    p.mlp.fc3 = detail::init_affine(1, hidden, rng);
    p.mlp.dropout_p = dropout_p;
  } else {
    p.linear = detail::init_affine(1, feat, rng);
  }
  return p;
}

namespace detail {

inline void check_input(const Matrix& X, int patch_dim) {
  if (X.rows() < 1) throw std::runtime_error("head: input has no patches");
  if (int(X.cols()) != patch_dim)
    throw std::runtime_error("head: input patch dim " + std::to_string(X.cols()) +
                             " does not match parameter dim " +
                             std::to_string(patch_dim));
  if (!X.allFinite()) throw std::runtime_error("head: non-finite input");
}

struct ProbeCache {
  Matrix A;  // M x P attention
  Matrix B;  // M x D aggregated patches (A * X)
};

// A = row-softmax(Q X^T / sqrt(D)), stabilized by row-max subtraction;
// features F = A X W flattened row-major to length M*d.
inline Vector probe_forward(const Matrix& X, const ProbeParams& probe,
                            ProbeCache* cache) {
  const auto D = probe.Q.cols();
  if (probe.W.rows() != D)
    throw std::runtime_error("head: probe W rows must equal query dim");
  Matrix S = probe.Q * X.transpose() / std::sqrt(double(D));
  Matrix A(S.rows(), S.cols());
  for (Eigen::Index m = 0; m < S.rows(); ++m) {
    const double mx = S.row(m).maxCoeff();
    A.row(m) = (S.row(m).array() - mx).exp();
    A.row(m) /= A.row(m).sum();
  }
  const Matrix B = A * X;
  const Matrix F = B * probe.W;
  Vector out(F.rows() * F.cols());
  for (Eigen::Index m = 0; m < F.rows(); ++m)
    for (Eigen::Index j = 0; j < F.cols(); ++j) out(m * F.cols() + j) = F(m, j);
  if (cache) {
    cache->A = std::move(A);
    cache->B = B;
  }
  return out;
}

struct LayerCache {
  Vector z;        // affine output
  Vector xhat;     // normalized z
  double inv_std = 0;
  Vector u;        // gain .* xhat + bias
  Vector a;        // gelu(u)
  Vector mask;     // dropout multiplier per unit
  Vector h;        // layer output a .* mask
};

inline void layer_forward(const Vector& input, const AffineParams& fc,
                          const LayerNormParams& ln, double dropout_p,
                          bool train_mode, Rng& rng, LayerCache& c) {
  c.z = fc.W * input + fc.b;
  const auto n = c.z.size();
  const double mu = c.z.mean();
  const double var = (c.z.array() - mu).square().sum() / double(n);
  c.inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  c.xhat = (c.z.array() - mu) * c.inv_std;
  c.u = ln.gain.array() * c.xhat.array() + ln.bias.array();
  c.a = c.u.unaryExpr([](double v) { return gelu(v); });
  c.mask = Vector::Ones(n);
  if (train_mode && dropout_p > 0) {
    const double keep_scale = 1.0 / (1.0 - dropout_p);
    for (Eigen::Index i = 0; i < n; ++i)
      c.mask(i) = rng.uniform01() < dropout_p ? 0.0 : keep_scale;
  }
  c.h = c.a.array() * c.mask.array();
}

// Backward through dropout, GELU and layer normalization; returns the
// gradient w.r.t. the affine output z and fills the LN parameter grads.
inline Vector layer_backward(const Vector& dh, const LayerNormParams& ln,
                             const LayerCache& c, Vector& dgain, Vector& dbias) {
  const Vector da = dh.array() * c.mask.array();
  const Vector du =
      da.array() * c.u.unaryExpr([](double v) { return gelu_grad(v); }).array();
  dgain = du.array() * c.xhat.array();
  dbias = du;
  const Vector dxhat = du.array() * ln.gain.array();
  const double mean_dxhat = dxhat.mean();
  const double mean_dxhat_xhat = (dxhat.array() * c.xhat.array()).mean();
  return c.inv_std *
         (dxhat.array() - mean_dxhat - c.xhat.array() * mean_dxhat_xhat).matrix();
}

struct HeadTrace {
  ProbeCache probe;
  Vector pooled;
  LayerCache l1, l2;
  double z_out = 0;
  double p = 0;
};

inline void forward_traced(const Matrix& X, const HeadParams& params,
                           bool train_mode, Rng& rng, HeadTrace& tr) {
  check_input(X, params.patch_dim());
  if (params.mode == HeadMode::Linear) {
    tr.pooled = X.colwise().mean().transpose();
  } else {
    tr.pooled = probe_forward(X, params.probe, &tr.probe);
  }
  if (params.mode == HeadMode::ProbeMlp) {
    const auto& mlp = params.mlp;
    if (mlp.fc1.W.cols() != tr.pooled.size())
      throw std::runtime_error("head: MLP input width does not match probe output");
    layer_forward(tr.pooled, mlp.fc1, mlp.ln1, mlp.dropout_p, train_mode, rng, tr.l1);
    layer_forward(tr.l1.h, mlp.fc2, mlp.ln2, mlp.dropout_p, train_mode, rng, tr.l2);
    tr.z_out = (mlp.fc3.W * tr.l2.h)(0) + mlp.fc3.b(0);
  } else {
    if (params.linear.W.cols() != tr.pooled.size())
      throw std::runtime_error("head: linear input width does not match features");
    tr.z_out = (params.linear.W * tr.pooled)(0) + params.linear.b(0);
  }
  tr.p = sigmoid(tr.z_out);
}

// Gradient of the pooled features back through the attentive probe.
inline void probe_backward(const Matrix& X, const ProbeParams& probe,
                           const ProbeCache& cache, const Vector& dpooled,
                           Matrix& dQ, Matrix& dW) {
  const auto M = probe.Q.rows();
  const auto D = probe.Q.cols();
  const auto d = probe.W.cols();
  Matrix G_F(M, d);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index j = 0; j < d; ++j) G_F(m, j) = dpooled(m * d + j);
  dW = cache.B.transpose() * G_F;
  const Matrix G_B = G_F * probe.W.transpose();
  const Matrix G_A = G_B * X.transpose();
  Matrix G_S(M, cache.A.cols());
  for (Eigen::Index m = 0; m < M; ++m) {
    const double dot = (G_A.row(m).array() * cache.A.row(m).array()).sum();
    G_S.row(m) = cache.A.row(m).array() * (G_A.row(m).array() - dot);
  }
  dQ = G_S * X / std::sqrt(double(D));
}

}  // namespace detail

// Attention pooling with learned queries: each of the M attention rows sums
// to one over the P patches; output is the rows of A X W concatenated.
inline Vector attentive_pool(const Matrix& X, const ProbeParams& probe) {
  if (!X.allFinite()) throw std::runtime_error("attentive_pool: non-finite input");
  if (X.cols() != probe.Q.cols())
    throw std::runtime_error("attentive_pool: patch dim " + std::to_string(X.cols()) +
                             " does not match query dim " +
                             std::to_string(probe.Q.cols()));
  return detail::probe_forward(X, probe, nullptr);
}

inline double head_forward(const Matrix& X, const HeadParams& params,
                           bool train_mode, Rng& rng) {
  detail::HeadTrace tr;
  detail::forward_traced(X, params, train_mode, rng, tr);
  return tr.p;
}

// Deterministic evaluation: dropout is identity, no rng consumed.
inline double head_forward(const Matrix& X, const HeadParams& params) {
  Rng unused(0);
  return head_forward(X, params, false, unused);
}

struct HeadBackwardResult {
  double p = 0;
  HeadParams grads;
};

// Reverse-mode gradients of the BCE loss w.r.t. every enabled parameter.
// Recomputes the forward pass with the supplied rng so the dropout masks are
// replayed; when expected_p is given, a mismatch with the recomputed
// probability means the rng stream diverged from the forward call.
inline HeadBackwardResult head_backward(const Matrix& X, const HeadParams& params,
                                        int label, bool train_mode, Rng rng,
                                        std::optional<double> expected_p = {}) {
  if (label != 0 && label != 1)
    throw std::runtime_error("head_backward: label must be 0 or 1");
  detail::HeadTrace tr;
  detail::forward_traced(X, params, train_mode, rng, tr);
  if (expected_p && !(tr.p == *expected_p))
    throw std::runtime_error(
        "head_backward: rng stream mismatch, dropout mask replay produced a "
        "different probability");

  HeadBackwardResult out;
  out.p = tr.p;
  out.grads = zeros_like(params);
  const double dz_out = tr.p - double(label);

  Vector dpooled;
  if (params.mode == HeadMode::ProbeMlp) {
    auto& g = out.grads.mlp;
    g.fc3.W = dz_out * tr.l2.h.transpose();
    g.fc3.b(0) = dz_out;
    const Vector dh2 = params.mlp.fc3.W.transpose() * dz_out;
    const Vector dz2 =
        detail::layer_backward(dh2, params.mlp.ln2, tr.l2, g.ln2.gain, g.ln2.bias);
    g.fc2.W = dz2 * tr.l1.h.transpose();
    g.fc2.b = dz2;
    const Vector dh1 = params.mlp.fc2.W.transpose() * dz2;
    const Vector dz1 =
        detail::layer_backward(dh1, params.mlp.ln1, tr.l1, g.ln1.gain, g.ln1.bias);
    g.fc1.W = dz1 * tr.pooled.transpose();
    g.fc1.b = dz1;
    dpooled = params.mlp.fc1.W.transpose() * dz1;
  } else {
    out.grads.linear.W = dz_out * tr.pooled.transpose();
    out.grads.linear.b(0) = dz_out;
    dpooled = params.linear.W.transpose() * dz_out;
  }
  if (params.mode != HeadMode::Linear)
    detail::probe_backward(X, params.probe, tr.probe, dpooled, out.grads.probe.Q,
                           out.grads.probe.W);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic "HDP1", u32 LE header length, JSON header (mode, shapes,
// seed), then every tensor row-major as f64 LE in declaration order.

inline void save_checkpoint(const std::string& path, const HeadParams& params,
                            std::uint64_t seed) {
  nlohmann::json header;
  header["mode"] = to_string(params.mode);
  header["seed"] = seed;
  if (params.mode == HeadMode::ProbeMlp) header["dropout_p"] = params.mlp.dropout_p;
  auto tensors = nlohmann::json::array();
  for_each_tensor(params, [&](const char* name, const auto& t) {
    tensors.push_back({{"name", name},
                       {"rows", static_cast<std::int64_t>(t.rows())},
                       {"cols", static_cast<std::int64_t>(t.cols())}});
  });
  header["tensors"] = tensors;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write("HDP1", 4);
  detail::write_u32_le(out, static_cast<std::uint32_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for_each_tensor(params, [&](const char*, const auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) detail::write_f64_le(out, t(r, c));
  });
}

inline std::pair<HeadParams, std::uint64_t> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "HDP1", 4) != 0)
    throw std::runtime_error(path + ": not an HDP1 checkpoint");
  std::uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i) hlen |= std::uint32_t(bytes[4 + i]) << (8 * i);
  if (bytes.size() < 8 + std::size_t(hlen))
    throw std::runtime_error(path + ": truncated checkpoint header");
  nlohmann::json header = nlohmann::json::parse(
      std::string(reinterpret_cast<const char*>(bytes.data() + 8), hlen));

  HeadParams params;
  params.mode = parse_head_mode(header.at("mode").get<std::string>());
  const std::uint64_t seed = header.at("seed").get<std::uint64_t>();
  if (params.mode == HeadMode::ProbeMlp)
    params.mlp.dropout_p = header.at("dropout_p").get<double>();

  // allocate tensors per the header, in declaration order
  std::size_t ti = 0;
  const auto& tensors = header.at("tensors");
  for_each_tensor(params, [&](const char* name, auto& t) {
    if (ti >= tensors.size())
      throw std::runtime_error(path + ": checkpoint missing tensor " + name);
    const auto& spec = tensors[ti++];
    if (spec.at("name").get<std::string>() != name)
      throw std::runtime_error(path + ": unexpected tensor order, wanted " +
                               std::string(name));
    t.resize(spec.at("rows").get<std::int64_t>(), spec.at("cols").get<std::int64_t>());
  });
  if (ti != tensors.size())
    throw std::runtime_error(path + ": checkpoint has extra tensors");

  std::size_t off = 8 + hlen;
  for_each_tensor(params, [&](const char* name, auto& t) {
    const std::size_t need = std::size_t(t.rows()) * t.cols() * 8;
    if (bytes.size() < off + need)
      throw std::runtime_error(path + ": truncated payload at tensor " +
                               std::string(name));
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c, off += 8)
        t(r, c) = detail::read_f64_le(bytes.data() + off);
  });
  if (off != bytes.size())
    throw std::runtime_error(path + ": trailing bytes after tensors");
  return {std::move(params), seed};
}

}  // namespace ecp
