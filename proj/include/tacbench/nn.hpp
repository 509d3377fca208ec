#pragma once

// Small dense networks with hand-written reverse mode: a shared tanh encoder
// feeding a Gaussian policy head, a value head and an optional
// forward-dynamics head. Parameters live in one flat vector so the optimizer,
// gradient clipping and checkpoints treat them uniformly.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tacbench/binary_io.hpp"
#include "tacbench/rng.hpp"

namespace tacbench {

using Mat = Eigen::MatrixXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct NetworkSpec {
  int obs_dim = 0;
  int n_actions = 0;
  std::vector<int> hidden = {256, 256};
  double init_log_std = -0.5;
  // Forward-dynamics head.
  bool aux_head = false;
  int aux_hidden = 64;
  int aux_target_dim = 0;

  bool operator==(const NetworkSpec&) const = default;
};

/// Offsets of every tensor inside the flat parameter vector. Weights are
/// column-major (out x in).
struct ParamLayout {
  struct Dense {
    int in = 0, out = 0;
    std::size_t w = 0, b = 0;
  };
  std::vector<Dense> encoder;
  Dense mean, value, aux1, aux2;
  std::size_t log_std = 0;
  std::size_t size = 0;

  explicit ParamLayout(const NetworkSpec& s) {
    std::size_t off = 0;
    auto dense = [&](int in, int out) {
      Dense d{in, out, off, off + static_cast<std::size_t>(in) * out};
      off = d.b + out;
      return d;
    };
    int width = s.obs_dim;
    for (int h : s.hidden) {
      encoder.push_back(dense(width, h));
      width = h;
    }
    mean = dense(width, s.n_actions);
    log_std = off;
    off += s.n_actions;
    value = dense(width, 1);
    if (s.aux_head) {
      aux1 = dense(width + s.n_actions, s.aux_hidden);
      aux2 = dense(s.aux_hidden, s.aux_target_dim);
    }
    size = off;
  }

  int encoding_dim(const NetworkSpec& s) const {
    return encoder.empty() ? s.obs_dim : encoder.back().out;
  }
};

inline ConstMatMap weight(const std::vector<double>& p, const ParamLayout::Dense& d) {
  return {p.data() + d.w, d.out, d.in};
}
inline ConstVecMap bias(const std::vector<double>& p, const ParamLayout::Dense& d) {
  return {p.data() + d.b, d.out};
}

/// Scaled normal init, one random stream per tensor so adding or removing a
/// head leaves every other tensor's initial values unchanged.
inline std::vector<double> init_params(const NetworkSpec& s, std::uint64_t seed) {
  const ParamLayout L(s);
  std::vector<double> p(L.size, 0.0);
  auto fill = [&](const ParamLayout::Dense& d, std::uint32_t stream, double gain) {
    CounterRng rng(seed, StreamDomain::kInit, stream);
    const double scale = gain / std::sqrt(static_cast<double>(d.in));
    for (int i = 0; i < d.in * d.out; ++i) p[d.w + i] = scale * rng.normal();
  };
  for (std::size_t l = 0; l < L.encoder.size(); ++l)
    fill(L.encoder[l], static_cast<std::uint32_t>(l), std::sqrt(2.0));
  fill(L.mean, 100, 0.01);
  fill(L.value, 101, 1.0);
  for (int a = 0; a < s.n_actions; ++a) p[L.log_std + a] = s.init_log_std;
  if (s.aux_head) {
    fill(L.aux1, 102, 1.0);
    fill(L.aux2, 103, 1.0);
  }
  return p;
}

inline double clamped_log_std(double s) { return std::clamp(s, kLogStdMin, kLogStdMax); }

/// Gaussian entropy summed over action dims.
inline double gaussian_entropy(std::span<const double> log_std) {
  const double c = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  double h = 0.0;
  for (double s : log_std) h += clamped_log_std(s) + c;
  return h;
}

inline double gaussian_log_prob(std::span<const double> u, std::span<const double> mu,
                                std::span<const double> log_std) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (std::size_t a = 0; a < u.size(); ++a) {
    const double s = clamped_log_std(log_std[a]);
    const double z = (u[a] - mu[a]) * std::exp(-s);
    lp += -0.5 * z * z - s - half_log_2pi;
  }
  return lp;
}

/// Log-density correction for a = tanh(u).
inline double tanh_log_det(std::span<const double> u) {
  double c = 0.0;
  for (double x : u) {
    const double t = std::tanh(x);
    c -= std::log(std::max(1.0 - t * t, 1e-12));
  }
  return c;
}

/// Encoder activations for a batch (columns are samples).
struct EncoderPass {
  std::vector<Mat> h;  // h[0] is the input, h.back() the encoding
  const Mat& encoding() const { return h.back(); }
};

inline void encode(const std::vector<double>& p, const ParamLayout& L, const Eigen::Ref<const Mat>& x,
                   EncoderPass& out) {
  out.h.resize(L.encoder.size() + 1);
  out.h[0] = x;
  for (std::size_t l = 0; l < L.encoder.size(); ++l) {
    const auto& d = L.encoder[l];
    out.h[l + 1].noalias() = weight(p, d) * out.h[l];
    out.h[l + 1].colwise() += bias(p, d);
    out.h[l + 1] = out.h[l + 1].array().tanh().matrix();
  }
}

/// Policy mean and value for a batch.
inline void policy_value(const std::vector<double>& p, const ParamLayout& L,
                         const Eigen::Ref<const Mat>& x, Mat& mu, Eigen::RowVectorXd& v,
                         EncoderPass& pass) {
  encode(p, L, x, pass);
  mu.noalias() = weight(p, L.mean) * pass.encoding();
  mu.colwise() += bias(p, L.mean);
  v.noalias() = weight(p, L.value) * pass.encoding();
  v.array() += p[L.value.b];
}

/// Scalar weights for one gradient chunk. Losses are sums over the chunk
/// scaled so that chunk contributions add up to minibatch means.
struct LossWeights {
  double clip_epsilon = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double aux_coef = 0.0;
  double sample_scale = 1.0;   // 1 / minibatch size
  double aux_scale = 0.0;      // 1 / (valid aux samples in minibatch * target dim)
  double entropy_scale = 1.0;  // chunk share of the entropy term
};

/// Training samples for one chunk; columns are samples.
struct ChunkData {
  Eigen::Ref<const Mat> obs;
  Eigen::Ref<const Mat> u;  // pre-squash actions
  std::span<const double> old_log_prob;
  std::span<const double> advantages;
  std::span<const double> returns;
  Eigen::Ref<const Mat> aux_target;  // empty when unused
  std::span<const std::uint8_t> aux_mask;
};

struct LossStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double aux_loss = 0.0;
  double total = 0.0;

  LossStats& operator+=(const LossStats& o) {
    policy_loss += o.policy_loss;
    value_loss += o.value_loss;
    entropy += o.entropy;
    approx_kl += o.approx_kl;
    clip_fraction += o.clip_fraction;
    aux_loss += o.aux_loss;
    total += o.total;
    return *this;
  }
};

/// Adds d(loss)/d(params) for one chunk into `grad` and returns the chunk's
/// loss contributions. Reported policy/value/kl/clip stats are already
/// multiplied by sample_scale; the aux stat by aux_scale.
inline LossStats loss_and_grad(const std::vector<double>& p, const NetworkSpec& spec,
                               const ParamLayout& L, const ChunkData& d, const LossWeights& w,
                               std::vector<double>& grad) {
  const Eigen::Index B = d.obs.cols();
  const int A = spec.n_actions;
  EncoderPass pass;
  Mat mu;
  Eigen::RowVectorXd v;
  policy_value(p, L, d.obs, mu, v, pass);
  const Mat& e = pass.encoding();

  Eigen::VectorXd s(A), inv_var(A);
  for (int a = 0; a < A; ++a) {
    s[a] = clamped_log_std(p[L.log_std + a]);
    inv_var[a] = std::exp(-2.0 * s[a]);
  }
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);

  LossStats st;
  Mat dmu(A, B);
  Eigen::VectorXd ds = Eigen::VectorXd::Zero(A);
  Eigen::RowVectorXd dv(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    double lp = 0.0;
    for (int a = 0; a < A; ++a) {
      const double diff = d.u(a, i) - mu(a, i);
      lp += -0.5 * diff * diff * inv_var[a] - s[a] - half_log_2pi;
    }
    const double log_ratio = lp - d.old_log_prob[i];
    const double ratio = std::exp(log_ratio);
    const double adv = d.advantages[i];
    const double clipped = std::clamp(ratio, 1.0 - w.clip_epsilon, 1.0 + w.clip_epsilon);
    const double surr1 = ratio * adv;
    const double surr2 = clipped * adv;
    const bool unclipped = surr1 <= surr2;
    st.policy_loss -= w.sample_scale * (unclipped ? surr1 : surr2);
    st.approx_kl += w.sample_scale * ((ratio - 1.0) - log_ratio);
    if (std::abs(ratio - 1.0) > w.clip_epsilon) st.clip_fraction += w.sample_scale;
    const double dlp = unclipped ? -w.sample_scale * ratio * adv : 0.0;
    for (int a = 0; a < A; ++a) {
      const double diff = d.u(a, i) - mu(a, i);
      dmu(a, i) = dlp * diff * inv_var[a];
      ds[a] += dlp * (diff * diff * inv_var[a] - 1.0);
    }
    const double verr = v[i] - d.returns[i];
    st.value_loss += w.sample_scale * verr * verr;
    dv[i] = w.sample_scale * w.value_coef * 2.0 * verr;
  }
  st.entropy = w.entropy_scale * gaussian_entropy({p.data() + L.log_std, static_cast<std::size_t>(A)});
  for (int a = 0; a < A; ++a) ds[a] -= w.entropy_scale * w.entropy_coef;

  auto gW = [&](const ParamLayout::Dense& dl) { return MatMap(grad.data() + dl.w, dl.out, dl.in); };
  auto gb = [&](const ParamLayout::Dense& dl) { return VecMap(grad.data() + dl.b, dl.out); };

  gW(L.mean).noalias() += dmu * e.transpose();
  gb(L.mean) += dmu.rowwise().sum();
  for (int a = 0; a < A; ++a) {
    const double raw = p[L.log_std + a];
    if (raw > kLogStdMin && raw < kLogStdMax) grad[L.log_std + a] += ds[a];
  }
  gW(L.value).noalias() += dv * e.transpose();
  grad[L.value.b] += dv.sum();

  Mat de = weight(p, L.mean).transpose() * dmu;
  de.noalias() += weight(p, L.value).transpose() * dv;

  if (spec.aux_head && w.aux_coef != 0.0) {
    const int H = L.encoding_dim(spec);
    Mat z(H + A, B);
    z.topRows(H) = e;
    z.bottomRows(A) = d.u.array().tanh().matrix();
    Mat f = weight(p, L.aux1) * z;
    f.colwise() += bias(p, L.aux1);
    f = f.array().tanh().matrix();
    Mat pred = weight(p, L.aux2) * f;
    pred.colwise() += bias(p, L.aux2);
    Mat dpred = Mat::Zero(pred.rows(), B);
    for (Eigen::Index i = 0; i < B; ++i) {
      if (!d.aux_mask[i]) continue;
      const auto r = pred.col(i) - d.aux_target.col(i);
      st.aux_loss += w.aux_scale * r.squaredNorm();
      dpred.col(i) = (w.aux_coef * w.aux_scale * 2.0) * r;
    }
    gW(L.aux2).noalias() += dpred * f.transpose();
    gb(L.aux2) += dpred.rowwise().sum();
    const Mat dfpre =
        ((weight(p, L.aux2).transpose() * dpred).array() * (1.0 - f.array().square())).matrix();
    gW(L.aux1).noalias() += dfpre * z.transpose();
    gb(L.aux1) += dfpre.rowwise().sum();
    de.noalias() += weight(p, L.aux1).leftCols(H).transpose() * dfpre;
  }

  Mat dh = std::move(de);
  for (std::size_t l = L.encoder.size(); l-- > 0;) {
    const auto& dl = L.encoder[l];
    const Mat dpre = (dh.array() * (1.0 - pass.h[l + 1].array().square())).matrix();
    gW(dl).noalias() += dpre * pass.h[l].transpose();
    gb(dl) += dpre.rowwise().sum();
    if (l > 0) dh = weight(p, dl).transpose() * dpre;
  }

  st.total = st.policy_loss + w.value_coef * st.value_loss - w.entropy_coef * st.entropy +
             w.aux_coef * st.aux_loss;
  return st;
}

/// Mean squared error between predicted and target next-frame blocks over
/// the masked-in samples.
inline double aux_forward_dynamics_loss(const Eigen::Ref<const Mat>& prediction,
                                        const Eigen::Ref<const Mat>& target,
                                        std::span<const std::uint8_t> mask) {
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < prediction.cols(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    sum += (prediction.col(i) - target.col(i)).squaredNorm();
    n += prediction.rows();
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

/// Forward-dynamics head prediction for a batch.
inline Mat predict_next_proprio(const std::vector<double>& p, const NetworkSpec& spec,
                                const ParamLayout& L, const Eigen::Ref<const Mat>& obs,
                                const Eigen::Ref<const Mat>& u) {
  EncoderPass pass;
  encode(p, L, obs, pass);
  const int H = L.encoding_dim(spec);
  Mat z(H + spec.n_actions, obs.cols());
  z.topRows(H) = pass.encoding();
  z.bottomRows(spec.n_actions) = u.array().tanh().matrix();
  Mat f = weight(p, L.aux1) * z;
  f.colwise() += bias(p, L.aux1);
  f = f.array().tanh().matrix();
  Mat pred = weight(p, L.aux2) * f;
  pred.colwise() += bias(p, L.aux2);
  return pred;
}

/// Adam with bias correction.
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m, v;
  std::uint64_t t = 0;

  explicit Adam(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& p, const std::vector<double>& g, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }

  void write(BinaryWriter& w) const {
    w.put(m);
    w.put(v);
    w.put(t);
  }
  void read(BinaryReader& r) {
    r.get_into(m);
    r.get_into(v);
    t = r.get<std::uint64_t>();
  }
};

/// Rescales `g` so its Euclidean norm is at most max_norm; returns the norm
/// before clipping.
inline double clip_grad_norm(std::vector<double>& g, double max_norm) {
  double sq = 0.0;
  for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (double& x : g) x *= s;
  }
  return norm;
}

/// Per-dimension streaming mean and variance (Chan et al. merge of batch
/// moments), used to normalize observations.
class RunningNorm {
 public:
  RunningNorm() = default;
  explicit RunningNorm(std::size_t dim, double clip = 5.0)
      : mean_(dim, 0.0), m2_(dim, 0.0), clip_(clip) {}

  std::size_t dim() const { return mean_.size(); }
  std::uint64_t count() const { return count_; }
  double clip() const { return clip_; }
  const std::vector<double>& mean() const { return mean_; }
  double variance(std::size_t i) const {
    return count_ > 0 ? m2_[i] / static_cast<double>(count_) : 1.0;
  }

  /// Folds in `rows` samples laid out row by row.
  void update(std::span<const double> data, std::size_t rows) {
    if (rows == 0) return;
    const std::size_t D = dim();
    const double nb = static_cast<double>(rows);
    std::vector<double> bmean(D, 0.0), bm2(D, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < D; ++i) bmean[i] += data[r * D + i];
    for (std::size_t i = 0; i < D; ++i) bmean[i] /= nb;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < D; ++i) {
        const double dlt = data[r * D + i] - bmean[i];
        bm2[i] += dlt * dlt;
      }
    const double na = static_cast<double>(count_);
    const double n = na + nb;
    for (std::size_t i = 0; i < D; ++i) {
      const double delta = bmean[i] - mean_[i];
      mean_[i] += delta * nb / n;
      m2_[i] += bm2[i] + delta * delta * na * nb / n;
    }
    count_ += rows;
  }

  void normalize(std::span<const double> in, std::span<double> out) const {
    const std::size_t D = dim();
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t i = k % D;
      const double z = (in[k] - mean_[i]) / std::sqrt(variance(i) + 1e-8);
      out[k] = std::clamp(z, -clip_, clip_);
    }
  }

  void hash_into(Digest& d) const {
    d.add(mean_);
    d.add(m2_);
    d.add(&count_, sizeof(count_));
  }

  void write(BinaryWriter& w) const {
    w.put(mean_);
    w.put(m2_);
    w.put(count_);
    w.put(clip_);
  }
  void read(BinaryReader& r) {
    r.get_into(mean_);
    r.get_into(m2_);
    count_ = r.get<std::uint64_t>();
    clip_ = r.get<double>();
  }

  bool operator==(const RunningNorm&) const = default;

 private:
  std::vector<double> mean_, m2_;
  std::uint64_t count_ = 0;
  double clip_ = 5.0;
};

}  // namespace tacbench
