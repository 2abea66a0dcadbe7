#pragma once

// Parameterized graph convolutional autoencoder.
//
//   encoder  x (n x 1) -> GC -> ... -> GC -> mean-pool -> dense -> z
//   fcnn     dt        -> dense -> ... -> dense -> z_p
//   decoder  z -> dense -> broadcast to nodes, concat node coordinates
//                  -> GC -> ... -> GC (1 feature) -> x_hat
//
// GC(H) = act(A_hat H W + b), A_hat = D^{-1/2}(A + I)D^{-1/2}. Hidden
// activations are ELU, outputs of enc head, fcnn and last GC are identity.
// Gradients are hand-written reverse mode over a flat parameter vector.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "romforge/binary_io.hpp"
#include "romforge/data_model.hpp"
#include "romforge/error.hpp"
#include "romforge/snapshot_io.hpp"

namespace romforge::gca {

// ---------------------------------------------------------------- graph

struct Graph {
  Eigen::Index n_nodes = 0;
  Eigen::SparseMatrix<double> adjacency_norm;  // symmetric
  Eigen::MatrixXd node_features;               // n x node_features_dim, coordinates scaled to [-1, 1]

  Eigen::Index node_features_dim() const { return node_features.cols(); }
};

inline Graph build_graph(const MeshGeometry& mesh) {
  mesh.validate(0);
  Graph g;
  g.n_nodes = static_cast<Eigen::Index>(mesh.n_nodes());
  const auto n = g.n_nodes;

  Eigen::VectorXd degree = Eigen::VectorXd::Ones(n);  // self-loop
  for (const auto& e : mesh.edges) {
    degree(e.a) += 1.0;
    degree(e.b) += 1.0;
  }
  const Eigen::VectorXd inv_sqrt = degree.array().rsqrt();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(n) + 2 * mesh.edges.size());
  for (Eigen::Index i = 0; i < n; ++i) triplets.emplace_back(i, i, inv_sqrt(i) * inv_sqrt(i));
  for (const auto& e : mesh.edges) {
    const double w = inv_sqrt(e.a) * inv_sqrt(e.b);
    triplets.emplace_back(e.a, e.b, w);
    triplets.emplace_back(e.b, e.a, w);
  }
  g.adjacency_norm.resize(n, n);
  g.adjacency_norm.setFromTriplets(triplets.begin(), triplets.end());
  g.adjacency_norm.makeCompressed();

  g.node_features.resize(n, 3);
  for (int c = 0; c < 3; ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& p : mesh.node_coords) {
      lo = std::min(lo, p[static_cast<std::size_t>(c)]);
      hi = std::max(hi, p[static_cast<std::size_t>(c)]);
    }
    const double mid = 0.5 * (lo + hi);
    const double half = 0.5 * (hi - lo);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = mesh.node_coords[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
      g.node_features(i, c) = half > 0.0 ? (v - mid) / half : 0.0;
    }
  }
  return g;
}

// ---------------------------------------------------------------- model

enum class Activation { Elu, Identity };

struct Architecture {
  std::vector<int> encoder_widths{16, 32};  // graph-conv outputs, input width 1
  int latent_dim = 12;
  int decoder_hidden = 32;                  // dense latent -> per-node seed width
  std::vector<int> decoder_widths{16};      // graph-conv hidden outputs; a final 1-wide GC follows
  std::vector<int> fcnn_widths{32, 32};     // hidden widths, input width 1
  int node_features_dim = 3;
};

struct TensorSlot {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

struct LayerSlot {
  TensorSlot weight;  // in x out
  TensorSlot bias;    // 1 x out
  Activation act = Activation::Elu;
};

struct Layout {
  std::vector<LayerSlot> encoder;
  LayerSlot enc_head;
  std::vector<LayerSlot> fcnn;
  LayerSlot dec_head;
  std::vector<LayerSlot> decoder;
  std::size_t total = 0;

  /// Every tensor in storage order.
  std::vector<TensorSlot> tensors() const {
    std::vector<TensorSlot> out;
    auto add = [&](const LayerSlot& l) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    };
    for (const auto& l : encoder) add(l);
    add(enc_head);
    for (const auto& l : fcnn) add(l);
    add(dec_head);
    for (const auto& l : decoder) add(l);
    return out;
  }
};

inline Layout make_layout(const Architecture& arch) {
  if (arch.latent_dim < 1 || arch.decoder_hidden < 1 || arch.encoder_widths.empty())
    throw ConfigError("gca: architecture widths must be positive and the encoder non-empty");
  Layout layout;
  auto slot = [&](const std::string& name, int in, int out, Activation act) {
    if (in < 1 || out < 1) throw ConfigError("gca: layer '" + name + "' has a non-positive width");
    LayerSlot l;
    l.weight = {name + ".weight", in, out, layout.total};
    layout.total += l.weight.size();
    l.bias = {name + ".bias", 1, out, layout.total};
    layout.total += l.bias.size();
    l.act = act;
    return l;
  };
  int width = 1;
  for (std::size_t i = 0; i < arch.encoder_widths.size(); ++i) {
    layout.encoder.push_back(slot("encoder." + std::to_string(i), width, arch.encoder_widths[i], Activation::Elu));
    width = arch.encoder_widths[i];
  }
  layout.enc_head = slot("enc_head", width, arch.latent_dim, Activation::Identity);
  width = 1;
  for (std::size_t i = 0; i < arch.fcnn_widths.size(); ++i) {
    layout.fcnn.push_back(slot("fcnn." + std::to_string(i), width, arch.fcnn_widths[i], Activation::Elu));
    width = arch.fcnn_widths[i];
  }
  layout.fcnn.push_back(slot("fcnn." + std::to_string(arch.fcnn_widths.size()), width, arch.latent_dim,
                             Activation::Identity));
  layout.dec_head = slot("dec_head", arch.latent_dim, arch.decoder_hidden, Activation::Elu);
  width = arch.decoder_hidden + arch.node_features_dim;
  for (std::size_t i = 0; i < arch.decoder_widths.size(); ++i) {
    layout.decoder.push_back(slot("decoder." + std::to_string(i), width, arch.decoder_widths[i], Activation::Elu));
    width = arch.decoder_widths[i];
  }
  layout.decoder.push_back(slot("decoder." + std::to_string(arch.decoder_widths.size()), width, 1,
                                Activation::Identity));
  return layout;
}

/// Scalar affine maps between physical units and network space.
struct Normalization {
  double dt_offset = 0.0;
  double dt_scale = 1.0;
  double field_offset = 0.0;
  double field_scale = 1.0;
};

struct GcaModel {
  Architecture arch;
  Layout layout;
  std::vector<double> params;
  Normalization norm;
  std::uint64_t seed = 0;

  Eigen::Index latent_dim() const { return arch.latent_dim; }
};

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline Eigen::Map<const Eigen::MatrixXd> view(const std::vector<double>& p, const TensorSlot& s) {
  return {p.data() + s.offset, s.rows, s.cols};
}
inline Eigen::Map<Eigen::MatrixXd> view(std::vector<double>& p, const TensorSlot& s) {
  return {p.data() + s.offset, s.rows, s.cols};
}
inline Eigen::Map<const Eigen::RowVectorXd> row(const std::vector<double>& p, const TensorSlot& s) {
  return {p.data() + s.offset, s.cols};
}
inline Eigen::Map<Eigen::RowVectorXd> row(std::vector<double>& p, const TensorSlot& s) {
  return {p.data() + s.offset, s.cols};
}

template <class M>
Eigen::MatrixXd apply(Activation a, const M& pre) {
  if (a == Activation::Identity) return pre;
  const auto x = pre.array();
  return (x > 0.0).select(x, x.min(0.0).exp() - 1.0).matrix();
}
template <class M>
Eigen::MatrixXd apply_grad(Activation a, const M& pre) {
  if (a == Activation::Identity) return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
  const auto x = pre.array();
  return (x > 0.0).select(Eigen::ArrayXXd::Ones(pre.rows(), pre.cols()), x.min(0.0).exp()).matrix();
}

struct GcCache {
  Eigen::MatrixXd ah;   // A_hat * H_in
  Eigen::MatrixXd pre;  // ah * W + b
};

struct DenseCache {
  Eigen::RowVectorXd in;
  Eigen::RowVectorXd pre;
};

inline Eigen::MatrixXd gc_forward(const Eigen::SparseMatrix<double>& a, const Eigen::MatrixXd& h,
                                  const std::vector<double>& p, const LayerSlot& l, GcCache& cache) {
  if (h.cols() != l.weight.rows || h.rows() != a.rows())
    throw ShapeError("gca: graph-conv '" + l.weight.name + "' expects " + std::to_string(a.rows()) + "x" +
                     std::to_string(l.weight.rows) + " features, got " + std::to_string(h.rows()) + "x" +
                     std::to_string(h.cols()));
  cache.ah = a * h;
  cache.pre = cache.ah * view(p, l.weight);
  cache.pre.rowwise() += row(p, l.bias);
  return apply(l.act, cache.pre);
}

// Accumulates parameter gradients; returns dL/dH_in when `want_input`.
inline Eigen::MatrixXd gc_backward(const Eigen::SparseMatrix<double>& a, const std::vector<double>& p,
                                   const LayerSlot& l, const GcCache& cache, const Eigen::MatrixXd& d_out,
                                   std::vector<double>& grad, bool want_input) {
  const Eigen::MatrixXd d_pre = d_out.cwiseProduct(apply_grad(l.act, cache.pre));
  view(grad, l.weight).noalias() += cache.ah.transpose() * d_pre;
  row(grad, l.bias) += d_pre.colwise().sum();
  if (!want_input) return {};
  return a * (d_pre * view(p, l.weight).transpose());  // A_hat is symmetric
}

inline Eigen::RowVectorXd dense_forward(const Eigen::RowVectorXd& in, const std::vector<double>& p,
                                        const LayerSlot& l, DenseCache& cache) {
  cache.in = in;
  cache.pre = in * view(p, l.weight) + row(p, l.bias);
  return apply(l.act, cache.pre);
}

inline Eigen::RowVectorXd dense_backward(const std::vector<double>& p, const LayerSlot& l, const DenseCache& cache,
                                         const Eigen::RowVectorXd& d_out, std::vector<double>& grad) {
  const Eigen::RowVectorXd d_pre = d_out.cwiseProduct(apply_grad(l.act, cache.pre));
  view(grad, l.weight).noalias() += cache.in.transpose() * d_pre;
  row(grad, l.bias) += d_pre;
  return d_pre * view(p, l.weight).transpose();
}

struct DecoderTape {
  DenseCache head;
  std::vector<GcCache> layers;
};

struct Tape {
  std::vector<GcCache> encoder;
  DenseCache enc_head;
  std::vector<DenseCache> fcnn;
  DecoderTape decoder;
};

inline Eigen::RowVectorXd encode(const GcaModel& m, const Graph& g, const Eigen::VectorXd& x, Tape& tape) {
  if (x.size() != g.n_nodes)
    throw ShapeError("gca: field has " + std::to_string(x.size()) + " nodes, graph has " + std::to_string(g.n_nodes));
  tape.encoder.resize(m.layout.encoder.size());
  Eigen::MatrixXd h = x;
  for (std::size_t i = 0; i < m.layout.encoder.size(); ++i)
    h = gc_forward(g.adjacency_norm, h, m.params, m.layout.encoder[i], tape.encoder[i]);
  const Eigen::RowVectorXd pooled = h.colwise().mean();
  return dense_forward(pooled, m.params, m.layout.enc_head, tape.enc_head);
}

inline Eigen::RowVectorXd param_branch(const GcaModel& m, double dt, Tape& tape) {
  tape.fcnn.resize(m.layout.fcnn.size());
  Eigen::RowVectorXd h(1);
  h(0) = (dt - m.norm.dt_offset) / m.norm.dt_scale;
  for (std::size_t i = 0; i < m.layout.fcnn.size(); ++i) h = dense_forward(h, m.params, m.layout.fcnn[i], tape.fcnn[i]);
  return h;
}

inline Eigen::VectorXd decode(const GcaModel& m, const Graph& g, const Eigen::RowVectorXd& z, DecoderTape& tape) {
  if (z.size() != m.arch.latent_dim) throw ShapeError("gca: latent vector has the wrong length");
  if (g.node_features_dim() != m.arch.node_features_dim) throw ShapeError("gca: graph node features do not match model");
  const Eigen::RowVectorXd seed = dense_forward(z, m.params, m.layout.dec_head, tape.head);
  Eigen::MatrixXd h(g.n_nodes, seed.size() + g.node_features_dim());
  h.leftCols(seed.size()) = seed.replicate(g.n_nodes, 1);
  h.rightCols(g.node_features_dim()) = g.node_features;
  tape.layers.resize(m.layout.decoder.size());
  for (std::size_t i = 0; i < m.layout.decoder.size(); ++i)
    h = gc_forward(g.adjacency_norm, h, m.params, m.layout.decoder[i], tape.layers[i]);
  return h.col(0);
}

}  // namespace detail

/// Glorot-uniform weights, zero biases.
inline GcaModel init_model(const Architecture& arch, std::uint64_t seed, Normalization norm = {}) {
  GcaModel m;
  m.arch = arch;
  m.layout = make_layout(arch);
  m.params.assign(m.layout.total, 0.0);
  m.norm = norm;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  for (const auto& t : m.layout.tensors()) {
    if (t.rows == 1 && t.name.ends_with(".bias")) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
    for (std::size_t i = 0; i < t.size(); ++i) m.params[t.offset + i] = limit * (2.0 * detail::unit_uniform(rng) - 1.0);
  }
  return m;
}

struct ForwardResult {
  Eigen::VectorXd x_hat;
  Eigen::RowVectorXd z;
  Eigen::RowVectorXd z_p;
};

/// Network-space forward pass: `x` is the normalized field, `dt` in seconds.
inline ForwardResult gca_forward(const GcaModel& model, const Graph& graph, const Eigen::VectorXd& x, double dt) {
  detail::Tape tape;
  ForwardResult out;
  out.z = detail::encode(model, graph, x, tape);
  out.z_p = detail::param_branch(model, dt, tape);
  out.x_hat = detail::decode(model, graph, out.z, tape.decoder);
  return out;
}

/// Decoder alone, from an arbitrary latent vector.
inline Eigen::VectorXd decode(const GcaModel& model, const Graph& graph, const Eigen::RowVectorXd& z) {
  detail::DecoderTape tape;
  return detail::decode(model, graph, z, tape);
}

struct LossParts {
  double reconstruction = 0.0;
  double consistency = 0.0;
  double total = 0.0;
};

/// Mean squared reconstruction error plus lambda times mean squared latent mismatch.
inline LossParts gca_loss_parts(const Eigen::VectorXd& x, const Eigen::VectorXd& x_hat, const Eigen::RowVectorXd& z,
                                const Eigen::RowVectorXd& z_p, double lambda) {
  if (x.size() != x_hat.size() || z.size() != z_p.size()) throw ShapeError("gca_loss: shape mismatch");
  LossParts l;
  l.reconstruction = (x - x_hat).squaredNorm() / static_cast<double>(x.size());
  l.consistency = (z - z_p).squaredNorm() / static_cast<double>(z.size());
  l.total = l.reconstruction + lambda * l.consistency;
  return l;
}

inline double gca_loss(const Eigen::VectorXd& x, const Eigen::VectorXd& x_hat, const Eigen::RowVectorXd& z,
                       const Eigen::RowVectorXd& z_p, double lambda) {
  return gca_loss_parts(x, x_hat, z, z_p, lambda).total;
}

/// One training example in network space. The encoder sees `input`; the
/// reconstruction target is `target` (they differ under denoising).
struct Sample {
  Eigen::VectorXd input;
  Eigen::VectorXd target;
  double dwell_time = 0.0;
};

struct BackwardResult {
  LossParts loss;  // averaged over the batch
  std::vector<double> grad;
};

/// Batch-mean loss and its exact gradient with respect to every parameter.
inline BackwardResult gca_backward(const GcaModel& m, const Graph& g, std::span<const Sample> batch, double lambda) {
  if (batch.empty()) throw EmptyInputError("gca_backward: empty batch");
  BackwardResult out;
  out.grad.assign(m.params.size(), 0.0);
  const double w = 1.0 / static_cast<double>(batch.size());
  const auto n = static_cast<double>(g.n_nodes);
  const auto latent = static_cast<double>(m.arch.latent_dim);

  for (const auto& s : batch) {
    detail::Tape tape;
    const Eigen::RowVectorXd z = detail::encode(m, g, s.input, tape);
    const Eigen::RowVectorXd z_p = detail::param_branch(m, s.dwell_time, tape);
    const Eigen::VectorXd x_hat = detail::decode(m, g, z, tape.decoder);
    const auto parts = gca_loss_parts(s.target, x_hat, z, z_p, lambda);
    out.loss.reconstruction += w * parts.reconstruction;
    out.loss.consistency += w * parts.consistency;
    out.loss.total += w * parts.total;

    // decoder
    Eigen::MatrixXd d_h = (w * (-2.0 / n)) * (s.target - x_hat);
    for (std::size_t i = m.layout.decoder.size(); i-- > 0;)
      d_h = detail::gc_backward(g.adjacency_norm, m.params, m.layout.decoder[i], tape.decoder.layers[i], d_h, out.grad,
                                true);
    const Eigen::RowVectorXd d_seed = d_h.leftCols(m.arch.decoder_hidden).colwise().sum();
    Eigen::RowVectorXd d_z = detail::dense_backward(m.params, m.layout.dec_head, tape.decoder.head, d_seed, out.grad);

    // consistency term
    const Eigen::RowVectorXd d_mismatch = (w * lambda * 2.0 / latent) * (z - z_p);
    d_z += d_mismatch;
    Eigen::RowVectorXd d_f = -d_mismatch;
    for (std::size_t i = m.layout.fcnn.size(); i-- > 0;)
      d_f = detail::dense_backward(m.params, m.layout.fcnn[i], tape.fcnn[i], d_f, out.grad);

    // encoder
    const Eigen::RowVectorXd d_pooled = detail::dense_backward(m.params, m.layout.enc_head, tape.enc_head, d_z, out.grad);
    Eigen::MatrixXd d_enc = d_pooled.replicate(g.n_nodes, 1) / n;
    for (std::size_t i = m.layout.encoder.size(); i-- > 0;)
      d_enc = detail::gc_backward(g.adjacency_norm, m.params, m.layout.encoder[i], tape.encoder[i], d_enc, out.grad,
                                  i > 0);
  }
  return out;
}

// ---------------------------------------------------------------- optimization

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  explicit AdamWState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Adam moments with bias correction and decoupled weight decay.
inline void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                       const AdamWConfig& cfg, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("adamw_step: parameter, gradient and state sizes differ");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * params[i]);
  }
}

struct ScheduleConfig {
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  int t0 = 50;
  int mult = 2;
};

/// Cosine annealing with warm restarts; periods t0, t0*mult, t0*mult^2, ...
/// Accepts fractional epochs so the end of a period can be probed.
inline double cosine_warm_restart_lr(double epoch, const ScheduleConfig& cfg) {
  if (epoch < 0.0) throw ConfigError("cosine_warm_restart_lr: epoch must be >= 0");
  double start = 0.0;
  double period = cfg.t0;
  while (epoch >= start + period) {
    start += period;
    period *= cfg.mult;
  }
  const double t_cur = epoch - start;
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * t_cur / period));
}

struct GcaTrainConfig {
  double lambda = 0.5;
  ScheduleConfig schedule;
  AdamWConfig adamw;
  int patience = 50;
  double noise_sigma = 0.01;  // network units, i.e. a fraction of the data standard deviation
  int max_epochs = 2000;
  std::uint64_t seed = 0;
  Architecture arch;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("gca: lambda must be >= 0");
    if (patience < 1) throw ConfigError("gca: patience must be >= 1");
    if (!(schedule.lr_min >= 0.0) || !(schedule.lr_max >= schedule.lr_min))
      throw ConfigError("gca: need lr_max >= lr_min >= 0");
    if (schedule.t0 < 1 || schedule.mult < 1) throw ConfigError("gca: warm restart period and multiplier must be >= 1");
    if (!(noise_sigma >= 0.0)) throw ConfigError("gca: noise_sigma must be >= 0");
    if (max_epochs < 1) throw ConfigError("gca: max_epochs must be >= 1");
  }
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double reconstruction = 0.0;
  double consistency = 0.0;
};

struct TrainResult {
  GcaModel model;  // best-monitor weights
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

/// Physical-unit final fields mapped to network space.
inline std::vector<Sample> make_samples(const SnapshotTensor& t, const Normalization& norm) {
  std::vector<Sample> out;
  for (const auto& m : t.matrices()) {
    Eigen::VectorXd x = (m.final_field().array() - norm.field_offset) / norm.field_scale;
    out.push_back({x, x, m.parameter.dwell_time});
  }
  return out;
}

inline double evaluate_loss(const GcaModel& m, const Graph& g, std::span<const Sample> samples, double lambda) {
  double total = 0.0;
  for (const auto& s : samples) {
    const auto f = gca_forward(m, g, s.input, s.dwell_time);
    total += gca_loss(s.target, f.x_hat, f.z, f.z_p, lambda);
  }
  return total / static_cast<double>(samples.size());
}

/// Scalar normalization fitted to the training final fields and dwell times.
inline Normalization fit_normalization(const SnapshotTensor& train) {
  Normalization norm;
  const auto dts = train.dwell_times();
  const auto [lo, hi] = std::minmax_element(dts.begin(), dts.end());
  norm.dt_offset = *lo;
  norm.dt_scale = *hi > *lo ? *hi - *lo : 1.0;
  double sum = 0.0;
  double sq = 0.0;
  double count = 0.0;
  for (const auto& m : train.matrices()) {
    const Eigen::VectorXd f = m.final_field();
    sum += f.sum();
    sq += f.squaredNorm();
    count += static_cast<double>(f.size());
  }
  norm.field_offset = sum / count;
  const double var = sq / count - norm.field_offset * norm.field_offset;
  norm.field_scale = var > 0.0 ? std::sqrt(var) : 1.0;
  return norm;
}

/// Full-batch denoising training with AdamW, warm-restart cosine schedule
/// and early stopping on the validation loss (training loss if `val` is empty).
inline TrainResult train_gca(const SnapshotTensor& train, const SnapshotTensor& val, const Graph& graph,
                             const GcaTrainConfig& config) {
  config.validate();
  if (train.empty()) throw EmptyInputError("train_gca: no training samples");
  if (train.n_nodes() != graph.n_nodes) throw ShapeError("train_gca: data and graph node counts differ");

  const Normalization norm = fit_normalization(train);
  GcaModel model = init_model(config.arch, config.seed, norm);
  const auto clean = make_samples(train, norm);
  const auto val_samples = make_samples(val, norm);

  std::mt19937_64 noise_rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  std::normal_distribution<double> noise(0.0, 1.0);
  AdamWState state(model.params.size());

  TrainResult result;
  std::vector<double> best_params = model.params;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<Sample> batch = clean;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = cosine_warm_restart_lr(epoch, config.schedule);
    if (config.noise_sigma > 0.0)
      for (std::size_t i = 0; i < batch.size(); ++i)
        batch[i].input = clean[i].target.unaryExpr([&](double v) { return v + config.noise_sigma * noise(noise_rng); });

    auto step = gca_backward(model, graph, batch, config.lambda);
    if (!std::isfinite(step.loss.total))
      throw DivergenceError("train_gca: loss is not finite at epoch " + std::to_string(epoch) + " (lr " +
                            std::to_string(lr) + ")");
    adamw_step(model.params, step.grad, state, config.adamw, lr);

    const double monitor = val_samples.empty() ? evaluate_loss(model, graph, clean, config.lambda)
                                               : evaluate_loss(model, graph, val_samples, config.lambda);
    if (!std::isfinite(monitor))
      throw DivergenceError("train_gca: monitored loss is not finite at epoch " + std::to_string(epoch) + " (lr " +
                            std::to_string(lr) + ")");
    result.history.push_back({epoch, lr, step.loss.total, monitor, step.loss.reconstruction, step.loss.consistency});
    if (monitor < best) {
      best = monitor;
      best_params = model.params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.params = std::move(best_params);
  result.model = std::move(model);
  return result;
}

/// Inference path: fcnn latent through the decoder, in physical units (mm).
inline Eigen::VectorXd predict_gca(const GcaModel& model, const Graph& graph, double dt) {
  detail::Tape tape;
  const Eigen::RowVectorXd z_p = detail::param_branch(model, dt, tape);
  const Eigen::VectorXd x = decode(model, graph, z_p);
  return (x.array() * model.norm.field_scale + model.norm.field_offset).matrix();
}

// ---------------------------------------------------------------- checkpoint

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json architecture_to_json(const Architecture& a) {
  return {{"encoder_widths", a.encoder_widths}, {"latent_dim", a.latent_dim},
          {"decoder_hidden", a.decoder_hidden}, {"decoder_widths", a.decoder_widths},
          {"fcnn_widths", a.fcnn_widths},       {"node_features_dim", a.node_features_dim}};
}

inline Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture a;
  a.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  a.latent_dim = j.at("latent_dim").get<int>();
  a.decoder_hidden = j.at("decoder_hidden").get<int>();
  a.decoder_widths = j.at("decoder_widths").get<std::vector<int>>();
  a.fcnn_widths = j.at("fcnn_widths").get<std::vector<int>>();
  a.node_features_dim = j.at("node_features_dim").get<int>();
  return a;
}

inline nlohmann::json train_config_to_json(const GcaTrainConfig& c) {
  return {{"lambda", c.lambda},
          {"lr_max", c.schedule.lr_max},
          {"lr_min", c.schedule.lr_min},
          {"warm_restart_T0", c.schedule.t0},
          {"warm_restart_mult", c.schedule.mult},
          {"adamw", {{"beta1", c.adamw.beta1}, {"beta2", c.adamw.beta2}, {"eps", c.adamw.eps},
                     {"weight_decay", c.adamw.weight_decay}}},
          {"patience", c.patience},
          {"noise_sigma", c.noise_sigma},
          {"max_epochs", c.max_epochs},
          {"seed", c.seed}};
}

/// Writes gca.json (architecture, layer table, normalization, mesh, config)
/// and gca_weights.bin (raw little-endian f64 in layer-table order).
inline void save_gca(const GcaModel& model, const MeshGeometry& mesh, const GcaTrainConfig& config,
                     const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw WriteError("cannot create directory '" + dir.string() + "': " + ec.message());
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& t : model.layout.tensors())
    layers.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", t.offset}});
  nlohmann::json manifest{
      {"model", "gca"},
      {"version", kCheckpointVersion},
      {"seed", model.seed},
      {"architecture", architecture_to_json(model.arch)},
      {"layers", layers},
      {"n_params", model.params.size()},
      {"normalization",
       {{"dt_offset", io::hex_f64(model.norm.dt_offset)},
        {"dt_scale", io::hex_f64(model.norm.dt_scale)},
        {"field_offset", io::hex_f64(model.norm.field_offset)},
        {"field_scale", io::hex_f64(model.norm.field_scale)}}},
      {"config", train_config_to_json(config)},
      {"mesh", mesh_to_json(mesh)}};
  write_json_file(manifest, dir / "gca.json");
  io::ByteWriter w;
  w.f64s(model.params);
  w.write_file(dir / "gca_weights.bin");
}

struct LoadedGca {
  GcaModel model;
  MeshGeometry mesh;
};

inline LoadedGca load_gca(const std::filesystem::path& dir) {
  for (const char* name : {"gca.json", "gca_weights.bin"})
    if (!std::filesystem::exists(dir / name))
      throw FormatError("GCA checkpoint '" + dir.string() + "' is missing " + name);
  const auto manifest = read_json_file(dir / "gca.json");
  LoadedGca out;
  try {
    if (manifest.at("version").get<int>() != kCheckpointVersion)
      throw FormatError("gca.json version " + manifest.at("version").dump() + " is not supported");
    out.model.arch = architecture_from_json(manifest.at("architecture"));
    out.model.layout = make_layout(out.model.arch);
    out.model.seed = manifest.at("seed").get<std::uint64_t>();
    const auto tensors = out.model.layout.tensors();
    const auto& layers = manifest.at("layers");
    if (layers.size() != tensors.size()) throw CorruptionError("gca.json layer table does not match architecture");
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (layers[i].at("name").get<std::string>() != tensors[i].name ||
          layers[i].at("rows").get<Eigen::Index>() != tensors[i].rows ||
          layers[i].at("cols").get<Eigen::Index>() != tensors[i].cols ||
          layers[i].at("offset").get<std::size_t>() != tensors[i].offset)
        throw CorruptionError("gca.json layer '" + tensors[i].name + "' does not match architecture");
    const auto& n = manifest.at("normalization");
    out.model.norm = {io::unhex_f64(n.at("dt_offset").get<std::string>()),
                      io::unhex_f64(n.at("dt_scale").get<std::string>()),
                      io::unhex_f64(n.at("field_offset").get<std::string>()),
                      io::unhex_f64(n.at("field_scale").get<std::string>())};
    out.mesh = mesh_from_json(manifest.at("mesh"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("gca.json in '" + dir.string() + "' is malformed: " + e.what());
  }
  auto r = io::ByteReader::from_file(dir / "gca_weights.bin");
  if (r.remaining() != 8 * out.model.layout.total)
    throw CorruptionError("gca_weights.bin holds " + std::to_string(r.remaining()) + " bytes, manifest implies " +
                          std::to_string(8 * out.model.layout.total));
  out.model.params.resize(out.model.layout.total);
  r.f64s(out.model.params);
  for (double v : out.model.params)
    if (!std::isfinite(v)) throw DataError("gca_weights.bin contains NaN or Inf");
  return out;
}

inline void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + file.string() + "' for writing");
  out << "epoch,lr,train_loss,val_loss,L_rec,L_param\n";
  char buf[256];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", h.epoch, h.lr, h.train_loss, h.val_loss,
                  h.reconstruction, h.consistency);
    out << buf;
  }
  if (!out) throw WriteError("write to '" + file.string() + "' failed");
}

}  // namespace romforge::gca
