#include "fcf/models/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <type_traits>

#include <Eigen/Core>

#include "fcf/error.hpp"
#include "fcf/synth.hpp"

namespace fcf::models {
namespace {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapMat = Eigen::Map<RowMat<S>>;
template <class S>
using ConstMapMat = Eigen::Map<const RowMat<S>>;
template <class S>
using RowVecMap = Eigen::Map<Eigen::Array<S, 1, Eigen::Dynamic>>;
template <class S>
using ConstRowVecMap = Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>>;

constexpr int kBlocks = 3;

// Parameter slots.
constexpr std::size_t conv_w(int i) { return 4 * static_cast<std::size_t>(i); }
constexpr std::size_t conv_b(int i) { return 4 * static_cast<std::size_t>(i) + 1; }
constexpr std::size_t bn_gamma(int i) { return 4 * static_cast<std::size_t>(i) + 2; }
constexpr std::size_t bn_beta(int i) { return 4 * static_cast<std::size_t>(i) + 3; }
constexpr std::size_t kFc1W = 12, kFc1B = 13, kFc2W = 14, kFc2B = 15, kOutW = 16, kOutB = 17;
constexpr std::array<std::size_t, 6> kWeightSlots{conv_w(0), conv_w(1), conv_w(2), kFc1W, kFc2W, kOutW};

template <class S>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<S> data;

  // Keeps the allocation; contents are unspecified afterwards.
  void reshape(int n_, int c_, int h_, int w_) {
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    data.resize(static_cast<std::size_t>(n_) * c_ * h_ * w_);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  S* sample(int i) { return data.data() + static_cast<std::size_t>(i) * c * plane(); }
  const S* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * c * plane(); }
  S* channel(int i, int ch) { return sample(i) + static_cast<std::size_t>(ch) * plane(); }
  const S* channel(int i, int ch) const { return sample(i) + static_cast<std::size_t>(ch) * plane(); }
};

// Eigen's reductions peel unaligned heads, so their summation order depends on
// the buffer address. These keep the order fixed for reproducible training.
template <class S>
double ordered_sum(const S* p, std::size_t n) {
  double a[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    a[0] += p[k];
    a[1] += p[k + 1];
    a[2] += p[k + 2];
    a[3] += p[k + 3];
  }
  for (; k < n; ++k) a[0] += p[k];
  return (a[0] + a[1]) + (a[2] + a[3]);
}

template <class S>
double ordered_dot(const S* x, const S* y, std::size_t n) {
  double a[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    for (int j = 0; j < 4; ++j) a[j] += static_cast<double>(x[k + j]) * y[k + j];
  }
  for (; k < n; ++k) a[0] += static_cast<double>(x[k]) * y[k];
  return (a[0] + a[1]) + (a[2] + a[3]);
}

template <class S>
double ordered_sq_dev(const S* p, std::size_t n, double mu) {
  double a[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    for (int j = 0; j < 4; ++j) {
      const double d = p[k + j] - mu;
      a[j] += d * d;
    }
  }
  for (; k < n; ++k) a[0] += (p[k] - mu) * (p[k] - mu);
  return (a[0] + a[1]) + (a[2] + a[3]);
}

template <class S>
void im2col(const S* x, int c, int h, int w, RowMat<S>& cols) {
  cols.resize(static_cast<Eigen::Index>(c) * 9, static_cast<Eigen::Index>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    const S* src = x + static_cast<std::size_t>(ch) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        S* dst = cols.data() + (static_cast<std::size_t>(ch) * 9 + ky * 3 + kx) * h * w;
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          S* row = dst + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, S(0));
            continue;
          }
          if (x0 > 0) row[0] = S(0);
          if (x1 < w) row[w - 1] = S(0);
          std::copy(src + static_cast<std::size_t>(sy) * w + x0 + dx, src + static_cast<std::size_t>(sy) * w + x1 + dx, row + x0);
        }
      }
    }
  }
}

template <class S>
void col2im_add(const RowMat<S>& cols, int c, int h, int w, S* dx_out) {
  for (int ch = 0; ch < c; ++ch) {
    S* dst = dx_out + static_cast<std::size_t>(ch) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const S* src = cols.data() + (static_cast<std::size_t>(ch) * 9 + ky * 3 + kx) * h * w;
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const S* row = src + static_cast<std::size_t>(y) * w;
          S* out = dst + static_cast<std::size_t>(sy) * w + dx;
          for (int xx = x0; xx < x1; ++xx) out[xx] += row[xx];
        }
      }
    }
  }
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <class S>
struct Work {
  struct Block {
    Tensor<S> input;              // conv input
    Tensor<S> xhat;               // batch-normalized conv output, before the affine step
    std::vector<double> inv_std;  // per channel
    std::vector<int> argmax;      // pool source index within the plane
    std::vector<S> mask;          // dropout scale per pooled element (empty = none)
    int out_h = 0, out_w = 0;
  };
  std::array<Block, kBlocks> blocks;
  Tensor<S> pooled;             // output of the last block
  RowMat<S> flat;               // N x F
  RowMat<S> z1, h1, mask1;      // dense 1
  RowMat<S> z2, h2;             // dense 2
  int n = 0;

  RowMat<S> cols, dcols;
  Tensor<S> dz;
  std::vector<S> dcur, dnext;

  std::vector<std::vector<S>> value;  // parameter values in S
  std::vector<std::vector<S>> grad;   // weight-matrix gradients in S

  void load(const std::vector<CnnModel::Param>& params) {
    value.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) value[i].assign(params[i].value.begin(), params[i].value.end());
  }
};

}  // namespace

struct CnnModel::Cache {
  Work<float> single;
  Work<double> dbl;

  template <class S>
  Work<S>& get() {
    if constexpr (std::is_same_v<S, float>) {
      return single;
    } else {
      return dbl;
    }
  }
};

CnnModel::CnnModel(Shape3 input, const CnnConfig& config) : input_(input), config_(config) { init_params(); }

void CnnModel::init_params() {
  std::mt19937_64 rng(synth::derive_seed(config_.seed, 0xC0FFEE));
  std::normal_distribution<double> normal(0.0, 1.0);
  params_.clear();
  auto add = [&](const std::string& name, std::size_t size, double scale, double fill) {
    Param p;
    p.name = name;
    p.value.resize(size);
    for (double& v : p.value) v = scale > 0.0 ? scale * normal(rng) : fill;
    p.grad.assign(size, 0.0);
    p.m.assign(size, 0.0);
    p.v.assign(size, 0.0);
    params_.push_back(std::move(p));
  };
  int in_c = input_.channels, h = input_.height, w = input_.width;
  for (int i = 0; i < kBlocks; ++i) {
    const int out_c = config_.filters[i];
    const auto fan_in = static_cast<std::size_t>(in_c) * 9;
    const std::string tag = std::to_string(i + 1);
    add("conv" + tag + ".weight", static_cast<std::size_t>(out_c) * fan_in, std::sqrt(2.0 / static_cast<double>(fan_in)), 0.0);
    add("conv" + tag + ".bias", static_cast<std::size_t>(out_c), 0.0, 0.0);
    add("bn" + tag + ".gamma", static_cast<std::size_t>(out_c), 0.0, 1.0);
    add("bn" + tag + ".beta", static_cast<std::size_t>(out_c), 0.0, 0.0);
    bn_running_[i].mean.assign(static_cast<std::size_t>(out_c), 0.0);
    bn_running_[i].var.assign(static_cast<std::size_t>(out_c), 1.0);
    in_c = out_c;
    h /= 2;
    w /= 2;
  }
  if (h < 1 || w < 1) throw Error(ErrorCode::ShapeMismatch, "input too small for three pooling stages");
  const std::size_t flat = static_cast<std::size_t>(in_c) * h * w;
  const auto h0 = static_cast<std::size_t>(config_.hidden[0]);
  const auto h1 = static_cast<std::size_t>(config_.hidden[1]);
  add("fc1.weight", h0 * flat, std::sqrt(2.0 / static_cast<double>(flat)), 0.0);
  add("fc1.bias", h0, 0.0, 0.0);
  add("fc2.weight", h1 * h0, std::sqrt(2.0 / static_cast<double>(h0)), 0.0);
  add("fc2.bias", h1, 0.0, 0.0);
  add("out.weight", h1, std::sqrt(1.0 / static_cast<double>(h1)), 0.0);
  add("out.bias", 1, 0.0, 0.0);
}

std::size_t CnnModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

double& CnnModel::parameter(std::size_t i) {
  for (auto& p : params_) {
    if (i < p.value.size()) return p.value[i];
    i -= p.value.size();
  }
  throw Error(ErrorCode::OutOfRange, "parameter index out of range");
}

double CnnModel::gradient(std::size_t i) const {
  for (const auto& p : params_) {
    if (i < p.grad.size()) return p.grad[i];
    i -= p.grad.size();
  }
  throw Error(ErrorCode::OutOfRange, "parameter index out of range");
}

void CnnModel::zero_gradients() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

void CnnModel::zero_all_but_output_bias(double bias) {
  for (auto& p : params_) std::fill(p.value.begin(), p.value.end(), 0.0);
  params_[kOutB].value[0] = bias;
}

// Expects the cache's parameter copy to be current.
template <class S>
void CnnModel::forward(const std::vector<const CnnInput*>& batch, bool training, bool use_dropout,
                       std::uint64_t dropout_seed, Cache& cache, std::vector<double>* outputs) const {
  if (params_.empty()) throw Error(ErrorCode::Untrained, "CNN has no parameters");
  const int n = static_cast<int>(batch.size());
  if (n == 0) throw Error(ErrorCode::EmptyData, "empty CNN batch");
  for (const CnnInput* x : batch) {
    if (x->channels != input_.channels || x->height != input_.height || x->width != input_.width ||
        x->data.size() != static_cast<std::size_t>(x->channels) * x->height * x->width) {
      throw Error(ErrorCode::ShapeMismatch, "CNN input dims differ from the model");
    }
  }
  Work<S>& C = cache.get<S>();
  C.n = n;
  std::mt19937_64 rng(dropout_seed);
  const double keep = 1.0 - config_.dropout;
  const bool dropout_on = training && use_dropout && config_.dropout > 0.0;

  C.blocks[0].input.reshape(n, input_.channels, input_.height, input_.width);
  for (int i = 0; i < n; ++i) std::copy(batch[i]->data.begin(), batch[i]->data.end(), C.blocks[0].input.sample(i));

  for (int b = 0; b < kBlocks; ++b) {
    auto& blk = C.blocks[b];
    const Tensor<S>& in = blk.input;
    const int in_c = in.c, h = in.h, w = in.w;
    const int out_c = config_.filters[b];
    const auto plane = static_cast<Eigen::Index>(in.plane());
    ConstMapMat<S> W(C.value[conv_w(b)].data(), out_c, static_cast<Eigen::Index>(in_c) * 9);
    const auto& bias = C.value[conv_b(b)];

    Tensor<S>& z = blk.xhat;
    z.reshape(n, out_c, h, w);
    for (int i = 0; i < n; ++i) {
      im2col(in.sample(i), in_c, h, w, C.cols);
      MapMat<S> out(z.sample(i), out_c, plane);
      out.noalias() = W * C.cols;
      for (int c = 0; c < out_c; ++c) out.row(c).array() += bias[c];
    }

    // Batch norm, normalized in place.
    blk.inv_std.resize(static_cast<std::size_t>(out_c));
    const double count = static_cast<double>(n) * static_cast<double>(plane);
    for (int c = 0; c < out_c; ++c) {
      double mu, inv;
      if (training) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += ordered_sum(z.channel(i, c), plane);
        mu = s / count;
        double ss = 0.0;
        for (int i = 0; i < n; ++i) ss += ordered_sq_dev(z.channel(i, c), plane, mu);
        const double var = ss / count;
        inv = 1.0 / std::sqrt(var + config_.bn_eps);
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        auto& run = bn_running_[b];
        run.mean[c] = (1.0 - config_.bn_momentum) * run.mean[c] + config_.bn_momentum * mu;
        run.var[c] = (1.0 - config_.bn_momentum) * run.var[c] + config_.bn_momentum * unbiased;
      } else {
        mu = bn_running_[b].mean[c];
        inv = 1.0 / std::sqrt(bn_running_[b].var[c] + config_.bn_eps);
      }
      blk.inv_std[c] = inv;
      for (int i = 0; i < n; ++i) {
        RowVecMap<S> row(z.channel(i, c), plane);
        row = (row - static_cast<S>(mu)) * static_cast<S>(inv);
      }
    }

    // Affine + ReLU + 2x2 max-pool + dropout.
    const auto& gamma = C.value[bn_gamma(b)];
    const auto& beta = C.value[bn_beta(b)];
    const int ph = h / 2, pw = w / 2;
    Tensor<S>& pooled = b + 1 < kBlocks ? C.blocks[b + 1].input : C.pooled;
    pooled.reshape(n, out_c, ph, pw);
    blk.argmax.resize(pooled.data.size());
    if (dropout_on) {
      blk.mask.resize(pooled.data.size());
    } else {
      blk.mask.clear();
    }
    const S scale = static_cast<S>(1.0 / keep);
    std::size_t idx = 0;
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < out_c; ++c) {
        const S* p = z.channel(i, c);
        const S g = gamma[c], be = beta[c];
        for (int y = 0; y < ph; ++y) {
          const int r0 = (2 * y) * w, r1 = r0 + w;
          for (int x = 0; x < pw; ++x, ++idx) {
            const int k[4] = {r0 + 2 * x, r0 + 2 * x + 1, r1 + 2 * x, r1 + 2 * x + 1};
            int best = k[0];
            S v = std::max(S(0), g * p[k[0]] + be);
            for (int q = 1; q < 4; ++q) {
              const S r = g * p[k[q]] + be;
              if (r > v) {
                v = r;
                best = k[q];
              }
            }
            if (dropout_on) {
              blk.mask[idx] = uniform01(rng) < keep ? scale : S(0);
              v *= blk.mask[idx];
            }
            blk.argmax[idx] = best;
            pooled.data[idx] = v;
          }
        }
      }
    }
    blk.out_h = ph;
    blk.out_w = pw;
  }

  const auto flat_dim = static_cast<Eigen::Index>(static_cast<std::size_t>(C.pooled.c) * C.pooled.plane());
  C.flat = ConstMapMat<S>(C.pooled.data.data(), n, flat_dim);
  const int h0 = config_.hidden[0], h1 = config_.hidden[1];
  ConstMapMat<S> W1(C.value[kFc1W].data(), h0, flat_dim);
  ConstMapMat<S> W2(C.value[kFc2W].data(), h1, h0);
  ConstMapMat<S> Wo(C.value[kOutW].data(), 1, h1);

  C.z1.noalias() = C.flat * W1.transpose();
  for (int j = 0; j < h0; ++j) C.z1.col(j).array() += C.value[kFc1B][j];
  C.h1 = C.z1.cwiseMax(S(0));
  if (dropout_on) {
    const S scale = static_cast<S>(1.0 / keep);
    C.mask1.resize(n, h0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < h0; ++j) C.mask1(i, j) = uniform01(rng) < keep ? scale : S(0);
    }
    C.h1 = C.h1.cwiseProduct(C.mask1);
  } else {
    C.mask1.resize(0, 0);
  }
  C.z2.noalias() = C.h1 * W2.transpose();
  for (int j = 0; j < h1; ++j) C.z2.col(j).array() += C.value[kFc2B][j];
  C.h2 = C.z2.cwiseMax(S(0));
  Eigen::Matrix<S, Eigen::Dynamic, 1> out = C.h2 * Wo.transpose();
  out.array() += C.value[kOutB][0];

  if (outputs) outputs->assign(out.data(), out.data() + out.size());
}

template <class S>
void CnnModel::backward(const std::vector<double>& dout, Cache& cache) {
  Work<S>& C = cache.get<S>();
  const int n = C.n;
  const int h0 = config_.hidden[0], h1 = config_.hidden[1];
  const Eigen::Index flat_dim = C.flat.cols();
  C.grad.resize(params_.size());
  for (std::size_t s : kWeightSlots) C.grad[s].assign(params_[s].value.size(), S(0));
  const Eigen::Matrix<S, Eigen::Dynamic, 1> g_out = Eigen::Map<const Eigen::VectorXd>(dout.data(), n).cast<S>();

  MapMat<S> gWo(C.grad[kOutW].data(), 1, h1);
  gWo.noalias() += g_out.transpose() * C.h2;
  params_[kOutB].grad[0] += ordered_sum(dout.data(), dout.size());
  ConstMapMat<S> Wo(C.value[kOutW].data(), 1, h1);
  RowMat<S> d2 = g_out * Wo;  // n x h1
  d2 = d2.cwiseProduct((C.z2.array() > S(0)).template cast<S>().matrix());

  MapMat<S> gW2(C.grad[kFc2W].data(), h1, h0);
  gW2.noalias() += d2.transpose() * C.h1;
  for (int j = 0; j < h1; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += d2(i, j);
    params_[kFc2B].grad[j] += s;
  }
  ConstMapMat<S> W2(C.value[kFc2W].data(), h1, h0);
  RowMat<S> d1 = d2 * W2;  // n x h0
  if (C.mask1.size()) d1 = d1.cwiseProduct(C.mask1);
  d1 = d1.cwiseProduct((C.z1.array() > S(0)).template cast<S>().matrix());

  MapMat<S> gW1(C.grad[kFc1W].data(), h0, flat_dim);
  gW1.noalias() += d1.transpose() * C.flat;
  for (int j = 0; j < h0; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += d1(i, j);
    params_[kFc1B].grad[j] += s;
  }
  ConstMapMat<S> W1(C.value[kFc1W].data(), h0, flat_dim);
  C.dcur.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(flat_dim));
  MapMat<S>(C.dcur.data(), n, flat_dim).noalias() = d1 * W1;

  for (int b = kBlocks - 1; b >= 0; --b) {
    auto& blk = C.blocks[b];
    const Tensor<S>& xhat = blk.xhat;
    const int c_out = xhat.c, h = xhat.h, w = xhat.w;
    const auto plane = static_cast<Eigen::Index>(xhat.plane());
    const std::size_t pplane = static_cast<std::size_t>(blk.out_h) * blk.out_w;
    const auto& gamma = C.value[bn_gamma(b)];
    const auto& beta = C.value[bn_beta(b)];

    // Through dropout, pool and ReLU into the batch-norm output.
    Tensor<S>& dz = C.dz;
    dz.reshape(n, c_out, h, w);
    std::fill(dz.data.begin(), dz.data.end(), S(0));
    std::size_t idx = 0;
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < c_out; ++c) {
        const S* xh = xhat.channel(i, c);
        S* d = dz.channel(i, c);
        for (std::size_t k = 0; k < pplane; ++k, ++idx) {
          S g = C.dcur[idx];
          if (!blk.mask.empty()) g *= blk.mask[idx];
          const int src = blk.argmax[idx];
          if (gamma[c] * xh[src] + beta[c] > S(0)) d[src] += g;
        }
      }
    }

    // Batch norm with batch statistics.
    auto& gg = params_[bn_gamma(b)].grad;
    auto& gb = params_[bn_beta(b)].grad;
    const double count = static_cast<double>(n) * static_cast<double>(plane);
    for (int c = 0; c < c_out; ++c) {
      double sum_d = 0.0, sum_dx = 0.0;
      for (int i = 0; i < n; ++i) {
        sum_d += ordered_sum(dz.channel(i, c), static_cast<std::size_t>(plane));
        sum_dx += ordered_dot(dz.channel(i, c), xhat.channel(i, c), static_cast<std::size_t>(plane));
      }
      gg[c] += sum_dx;
      gb[c] += sum_d;
      const auto scale = static_cast<S>(gamma[c] * blk.inv_std[c] / count);
      const auto cnt = static_cast<S>(count), sd = static_cast<S>(sum_d), sdx = static_cast<S>(sum_dx);
      for (int i = 0; i < n; ++i) {
        RowVecMap<S> d(dz.channel(i, c), plane);
        ConstRowVecMap<S> xh(xhat.channel(i, c), plane);
        d = scale * (cnt * d - sd - xh * sdx);
      }
    }

    // Convolution.
    const Tensor<S>& in = blk.input;
    const int in_c = in.c;
    MapMat<S> gW(C.grad[conv_w(b)].data(), c_out, static_cast<Eigen::Index>(in_c) * 9);
    ConstMapMat<S> W(C.value[conv_w(b)].data(), c_out, static_cast<Eigen::Index>(in_c) * 9);
    auto& gbias = params_[conv_b(b)].grad;
    if (b > 0) C.dnext.assign(in.data.size(), S(0));
    for (int i = 0; i < n; ++i) {
      ConstMapMat<S> dO(dz.sample(i), c_out, plane);
      im2col(in.sample(i), in_c, h, w, C.cols);
      gW.noalias() += dO * C.cols.transpose();
      for (int c = 0; c < c_out; ++c) gbias[c] += ordered_sum(dz.channel(i, c), static_cast<std::size_t>(plane));
      if (b > 0) {
        C.dcols.noalias() = W.transpose() * dO;
        col2im_add(C.dcols, in_c, h, w, C.dnext.data() + static_cast<std::size_t>(i) * in_c * plane);
      }
    }
    std::swap(C.dcur, C.dnext);
  }

  for (std::size_t s : kWeightSlots) {
    auto& g = params_[s].grad;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += C.grad[s][k];
  }
}

double CnnModel::loss_and_gradient(const std::vector<const CnnInput*>& batch, const std::vector<double>& targets,
                                   bool use_dropout, std::uint64_t dropout_seed) {
  if (targets.size() != batch.size()) throw Error(ErrorCode::LengthMismatch, "targets and batch differ in size");
  if (!workspace_) workspace_ = std::make_shared<Cache>();
  std::vector<double> out;
  const bool dbl = precision_ == Precision::Double;
  if (dbl) {
    workspace_->dbl.load(params_);
    forward<double>(batch, true, use_dropout, dropout_seed, *workspace_, &out);
  } else {
    workspace_->single.load(params_);
    forward<float>(batch, true, use_dropout, dropout_seed, *workspace_, &out);
  }
  const double n = static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<double> dout(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double e = out[i] - targets[i];
    loss += e * e;
    dout[i] = 2.0 * e / n;
  }
  if (dbl) {
    backward<double>(dout, *workspace_);
  } else {
    backward<float>(dout, *workspace_);
  }
  return loss / n;
}

std::vector<double> CnnModel::predict_batch(const std::vector<const CnnInput*>& batch) const {
  // One sample at a time: inference statistics are fixed, and the buffers stay small.
  Cache cache;
  std::vector<double> out, one;
  out.reserve(batch.size());
  auto run = [&]<class S>(Work<S>& work) {
    work.load(params_);
    for (const CnnInput* x : batch) {
      forward<S>({x}, false, false, 0, cache, &one);
      out.push_back(one.front());
    }
  };
  if (precision_ == Precision::Double) {
    run(cache.dbl);
  } else {
    run(cache.single);
  }
  return out;
}

double CnnModel::predict_raw(const CnnInput& x) const { return predict_batch({&x}).front(); }

void CnnModel::adam_step(double lr, int step) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, step);
  const double c2 = 1.0 - std::pow(b2, step);
  for (auto& p : params_) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.m[i] = b1 * p.m[i] + (1.0 - b1) * g;
      p.v[i] = b2 * p.v[i] + (1.0 - b2) * g * g;
      p.value[i] -= lr * (p.m[i] / c1) / (std::sqrt(p.v[i] / c2) + eps);
    }
  }
}

namespace {

constexpr char kCnnMagic[8] = {'F', 'C', 'F', 'C', 'N', 'N', '0', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& p) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::IoError, p.string() + ": truncated CNN weights");
  return v;
}

void put_vec(std::ostream& out, const std::vector<double>& v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_vec(std::istream& in, const std::filesystem::path& p) {
  const auto n = get<std::uint64_t>(in, p);
  if (n > (1ULL << 32)) throw Error(ErrorCode::IoError, p.string() + ": implausible tensor size");
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw Error(ErrorCode::IoError, p.string() + ": truncated tensor");
  return v;
}

}  // namespace

void CnnModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(kCnnMagic, 8);
  put<std::int32_t>(out, input_.channels);
  put<std::int32_t>(out, input_.height);
  put<std::int32_t>(out, input_.width);
  for (int f : config_.filters) put<std::int32_t>(out, f);
  for (int h : config_.hidden) put<std::int32_t>(out, h);
  put<double>(out, config_.dropout);
  put<double>(out, config_.learning_rate);
  put<std::int32_t>(out, config_.batch_size);
  put<std::int32_t>(out, config_.patience);
  put<std::int32_t>(out, config_.max_epochs);
  put<double>(out, config_.val_fraction);
  put<double>(out, config_.bn_momentum);
  put<double>(out, config_.bn_eps);
  put<std::uint64_t>(out, config_.seed);
  put<std::int32_t>(out, best_epoch);
  put<double>(out, best_val_loss);
  put<std::uint64_t>(out, train_seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) put_vec(out, p.value);
  for (const auto& r : bn_running_) {
    put_vec(out, r.mean);
    put_vec(out, r.var);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(log.size()));
  for (const auto& e : log) {
    put<std::int32_t>(out, e.epoch);
    put<double>(out, e.train_loss);
    put<double>(out, e.val_loss);
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

CnnModel CnnModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCnnMagic, 8) != 0) throw Error(ErrorCode::IoError, path.string() + ": not a CNN weight file");
  Shape3 shape;
  shape.channels = get<std::int32_t>(in, path);
  shape.height = get<std::int32_t>(in, path);
  shape.width = get<std::int32_t>(in, path);
  CnnConfig cfg;
  for (int& f : cfg.filters) f = get<std::int32_t>(in, path);
  for (int& h : cfg.hidden) h = get<std::int32_t>(in, path);
  cfg.dropout = get<double>(in, path);
  cfg.learning_rate = get<double>(in, path);
  cfg.batch_size = get<std::int32_t>(in, path);
  cfg.patience = get<std::int32_t>(in, path);
  cfg.max_epochs = get<std::int32_t>(in, path);
  cfg.val_fraction = get<double>(in, path);
  cfg.bn_momentum = get<double>(in, path);
  cfg.bn_eps = get<double>(in, path);
  cfg.seed = get<std::uint64_t>(in, path);
  CnnModel m(shape, cfg);
  m.best_epoch = get<std::int32_t>(in, path);
  m.best_val_loss = get<double>(in, path);
  m.train_seed = get<std::uint64_t>(in, path);
  const auto n_params = get<std::uint32_t>(in, path);
  if (n_params != m.params_.size()) throw Error(ErrorCode::IoError, path.string() + ": parameter count mismatch");
  for (auto& p : m.params_) {
    auto v = get_vec(in, path);
    if (v.size() != p.value.size()) throw Error(ErrorCode::IoError, path.string() + ": tensor size mismatch for " + p.name);
    p.value = std::move(v);
  }
  for (auto& r : m.bn_running_) {
    r.mean = get_vec(in, path);
    r.var = get_vec(in, path);
  }
  const auto n_log = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_log; ++i) {
    EpochLog e;
    e.epoch = get<std::int32_t>(in, path);
    e.train_loss = get<double>(in, path);
    e.val_loss = get<double>(in, path);
    m.log.push_back(e);
  }
  return m;
}

CnnModel train_cnn(const std::vector<CnnInput>& samples, const std::vector<double>& labels, const CnnConfig& config,
                   const std::vector<std::string>* groups) {
  if (samples.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "samples and labels differ in count");
  if (samples.size() < 20) throw Error(ErrorCode::TooFewSamples, "CNN training needs at least 20 samples");
  const Shape3 shape{samples.front().channels, samples.front().height, samples.front().width};
  for (const auto& s : samples) {
    if (s.channels != shape.channels || s.height != shape.height || s.width != shape.width ||
        s.data.size() != static_cast<std::size_t>(s.channels) * s.height * s.width) {
      throw Error(ErrorCode::ShapeMismatch, "inconsistent spectrogram dims");
    }
  }
  if (groups && groups->size() != samples.size()) throw Error(ErrorCode::LengthMismatch, "one group id per sample");

  std::mt19937_64 rng(synth::derive_seed(config.seed, 0x5EED));
  const std::size_t n = samples.size();
  std::vector<std::size_t> train_idx, val_idx;

  std::vector<std::string> distinct;
  if (groups) {
    std::set<std::string> seen(groups->begin(), groups->end());
    distinct.assign(seen.begin(), seen.end());
  }
  if (distinct.size() >= 2) {
    std::shuffle(distinct.begin(), distinct.end(), rng);
    auto n_val = static_cast<std::size_t>(std::ceil(config.val_fraction * static_cast<double>(distinct.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, distinct.size() - 1);
    std::set<std::string> val_groups(distinct.begin(), distinct.begin() + static_cast<std::ptrdiff_t>(n_val));
    for (std::size_t i = 0; i < n; ++i) ((val_groups.count((*groups)[i]) ? val_idx : train_idx)).push_back(i);
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
  }

  CnnModel model(shape, config);
  model.train_seed = config.seed;
  {
    double mean = 0.0;
    for (std::size_t i : train_idx) mean += labels[i];
    model.params_[kOutB].value[0] = mean / static_cast<double>(train_idx.size());
  }

  auto val_loss = [&]() {
    double acc = 0.0;
    for (std::size_t start = 0; start < val_idx.size(); start += static_cast<std::size_t>(config.batch_size)) {
      std::vector<const CnnInput*> batch;
      const std::size_t stop = std::min(val_idx.size(), start + static_cast<std::size_t>(config.batch_size));
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&samples[val_idx[i]]);
      const auto out = model.predict_batch(batch);
      for (std::size_t i = start; i < stop; ++i) {
        const double e = out[i - start] - labels[val_idx[i]];
        acc += e * e;
      }
    }
    return acc / static_cast<double>(val_idx.size());
  };

  std::vector<CnnModel::Param> best_params = model.params_;
  auto best_running = model.bn_running_;
  model.best_val_loss = val_loss();
  model.best_epoch = 0;
  int since_best = 0;
  int step = 0;
  std::vector<std::size_t> order = train_idx;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_acc = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      // A single-sample batch has no batch-norm statistics to speak of.
      if (stop - start < 2) continue;
      std::vector<const CnnInput*> batch;
      std::vector<double> targets;
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&samples[order[i]]);
        targets.push_back(labels[order[i]]);
      }
      model.zero_gradients();
      const double loss = model.loss_and_gradient(batch, targets, true, rng());
      train_acc += loss * static_cast<double>(stop - start);
      model.adam_step(config.learning_rate, ++step);
    }
    const double vl = val_loss();
    model.log.push_back({epoch, train_acc / static_cast<double>(order.size()), vl});
    if (vl < model.best_val_loss) {
      model.best_val_loss = vl;
      model.best_epoch = epoch;
      best_params = model.params_;
      best_running = model.bn_running_;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.params_ = std::move(best_params);
  model.bn_running_ = best_running;
  for (auto& p : model.params_) {
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }
  return model;
}

}  // namespace fcf::models
