#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cav/milp.hpp"

namespace cav {

namespace {

using SparseRow = std::vector<std::pair<std::uint32_t, double>>;

PwlNet::Block identity_block(std::size_t n) {
  PwlNet::Block b;
  b.in = b.out = n;
  b.rows.resize(n);
  for (std::size_t i = 0; i < n; ++i) b.rows[i] = {{static_cast<std::uint32_t>(i), 1.0}};
  b.bias.assign(n, 0.0);
  return b;
}

PwlNet::Block dense_block(const Dense& d) {
  PwlNet::Block b;
  b.in = d.in;
  b.out = d.out;
  b.rows.resize(d.out);
  for (std::size_t i = 0; i < d.out; ++i)
    for (std::size_t j = 0; j < d.in; ++j)
      if (double w = d.weights[i * d.in + j]; w != 0.0)
        b.rows[i].emplace_back(static_cast<std::uint32_t>(j), w);
  b.bias = d.bias;
  return b;
}

PwlNet::Block conv_block(const Conv2d& c, const Shape& in) {
  const std::size_t H = in[1], W = in[2];
  const std::size_t oh = (H - c.kernel_h) / c.stride + 1, ow = (W - c.kernel_w) / c.stride + 1;
  PwlNet::Block b;
  b.in = c.in_channels * H * W;
  b.out = c.out_channels * oh * ow;
  b.rows.resize(b.out);
  b.bias.resize(b.out);
  for (std::size_t o = 0; o < c.out_channels; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t col = 0; col < ow; ++col) {
        const std::size_t idx = (o * oh + r) * ow + col;
        b.bias[idx] = c.bias[o];
        for (std::size_t ic = 0; ic < c.in_channels; ++ic)
          for (std::size_t kh = 0; kh < c.kernel_h; ++kh)
            for (std::size_t kw = 0; kw < c.kernel_w; ++kw) {
              double w = c.kernels[((o * c.in_channels + ic) * c.kernel_h + kh) * c.kernel_w + kw];
              if (w == 0.0) continue;
              std::size_t j = (ic * H + r * c.stride + kh) * W + col * c.stride + kw;
              b.rows[idx].emplace_back(static_cast<std::uint32_t>(j), w);
            }
      }
  return b;
}

// outer ∘ inner
PwlNet::Block compose(const PwlNet::Block& outer, const PwlNet::Block& inner) {
  PwlNet::Block b;
  b.in = inner.in;
  b.out = outer.out;
  b.rows.resize(outer.out);
  b.bias.resize(outer.out);
  std::vector<double> acc(inner.in, 0.0);
  std::vector<char> touched(inner.in, 0);
  std::vector<std::uint32_t> list;
  for (std::size_t i = 0; i < outer.out; ++i) {
    double bias = outer.bias[i];
    for (auto [k, w] : outer.rows[i]) {
      bias += w * inner.bias[k];
      for (auto [j, v] : inner.rows[k]) {
        if (!touched[j]) touched[j] = 1, list.push_back(j);
        acc[j] += w * v;
      }
    }
    std::sort(list.begin(), list.end());
    for (std::uint32_t j : list) {
      if (acc[j] != 0.0) b.rows[i].emplace_back(j, acc[j]);
      acc[j] = 0.0;
      touched[j] = 0;
    }
    list.clear();
    b.bias[i] = bias;
  }
  return b;
}

}  // namespace

PwlNet linearize(const Network& net) {
  PwlNet p;
  p.input_size = net.input_size();
  std::optional<PwlNet::Block> pending;
  std::size_t width = p.input_size;
  bool after_relu = false;
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    const Layer& layer = net.layers()[k];
    std::optional<PwlNet::Block> next;
    if (auto* d = std::get_if<Dense>(&layer)) next = dense_block(*d);
    else if (auto* c = std::get_if<Conv2d>(&layer)) next = conv_block(*c, net.shapes()[k]);
    if (next) {
      width = next->out;
      pending = pending ? compose(*next, *pending) : std::move(*next);
      after_relu = false;
    } else if (std::holds_alternative<Relu>(layer)) {
      if (after_relu && !pending) continue;  // ReLU∘ReLU = ReLU
      p.blocks.push_back(pending ? std::move(*pending) : identity_block(width));
      pending.reset();
      after_relu = true;
    }
  }
  p.blocks.push_back(pending ? std::move(*pending) : identity_block(width));
  return p;
}

std::vector<double> PwlNet::forward(std::span<const double> x) const {
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const Block& b = blocks[k];
    std::vector<double> next(b.out);
    for (std::size_t i = 0; i < b.out; ++i) {
      double s = b.bias[i];
      for (auto [j, w] : b.rows[i]) s += w * cur[j];
      next[i] = k + 1 < blocks.size() ? std::max(0.0, s) : s;
    }
    cur.swap(next);
  }
  return cur;
}

std::size_t NeuronBounds::unstable_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k + 1 < lower.size(); ++k)
    for (std::size_t j = 0; j < lower[k].size(); ++j)
      if (lower[k][j] < -kStableTol && upper[k][j] > kStableTol) ++n;
  return n;
}

namespace {

constexpr double kRound = 2.3e-16;

struct Relax {
  double al, bl, au, bu;  // al z + bl <= ReLU(z) <= au z + bu
};

Relax relaxation(double l, double u, Phase ph) {
  if (ph == Phase::kInactive || u <= kStableTol) return {0, 0, 0, 0};
  if (ph == Phase::kActive || l >= -kStableTol) return {1, 0, 1, 0};
  const double s = u / (u - l);
  return {u > -l ? 1.0 : 0.0, 0.0, s, -s * l};
}

/// Bound of c·h + c0 where h is the output of hidden block `level`-1 (the
/// input when level is 0), substituting the ReLU relaxations down to the box.
double backsub(const PwlNet& net, const NeuronBounds& nb, const Phases* phases,
               std::size_t level, std::vector<double> c, double c0, std::span<const double> lo,
               std::span<const double> hi, bool upper,
               std::vector<std::vector<double>>* intercepts = nullptr) {
  double mag = std::abs(c0);
  std::size_t terms = 2;
  while (level > 0) {
    const std::size_t j = level - 1;
    const auto& b = net.blocks[j];
    std::vector<double> nc(b.in, 0.0);
    for (std::size_t m = 0; m < b.out; ++m) {
      const double cm = c[m];
      if (cm == 0.0) continue;
      ++terms;
      const Relax r = relaxation(nb.lower[j][m], nb.upper[j][m],
                                 phases ? (*phases)[j][m] : Phase::kFree);
      const bool use_upper = (cm > 0) == upper;
      const double a = use_upper ? r.au : r.al, beta = use_upper ? r.bu : r.bl;
      c0 += cm * beta;
      mag += std::abs(cm * beta);
      if (intercepts) (*intercepts)[j][m] += std::abs(cm * beta);
      if (a == 0.0) continue;
      const double coef = cm * a;
      c0 += coef * b.bias[m];
      mag += std::abs(coef * b.bias[m]);
      for (auto [i, w] : b.rows[m]) nc[i] += coef * w;
    }
    c.swap(nc);
    --level;
  }
  double s = c0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i] == 0.0) continue;
    ++terms;
    const double v = (c[i] > 0) == upper ? hi[i] : lo[i];
    s += c[i] * v;
    mag += std::abs(c[i]) * std::max(std::abs(lo[i]), std::abs(hi[i]));
  }
  const double pad = kRound * static_cast<double>(terms) * mag;
  return upper ? s + pad : s - pad;
}

}  // namespace

std::optional<NeuronBounds> propagate_bounds(const PwlNet& net, std::span<const double> lo,
                                             std::span<const double> hi, const Phases* phases,
                                             BoundMethod method) {
  if (lo.size() != net.input_size || hi.size() != net.input_size)
    throw std::invalid_argument("box size mismatch");
  NeuronBounds nb;
  std::vector<double> vl(lo.begin(), lo.end()), vh(hi.begin(), hi.end());
  for (std::size_t k = 0; k < net.blocks.size(); ++k) {
    const auto& b = net.blocks[k];
    std::vector<double> l(b.out), u(b.out);
    for (std::size_t i = 0; i < b.out; ++i) {
      double sl = b.bias[i], su = b.bias[i], mag = std::abs(b.bias[i]);
      for (auto [j, w] : b.rows[i]) {
        if (w > 0) sl += w * vl[j], su += w * vh[j];
        else sl += w * vh[j], su += w * vl[j];
        mag += std::abs(w) * std::max(std::abs(vl[j]), std::abs(vh[j]));
      }
      const double pad = kRound * static_cast<double>(b.rows[i].size() + 2) * mag;
      l[i] = sl - pad;
      u[i] = su + pad;
    }
    const bool hidden = k + 1 < net.blocks.size();
    if (method == BoundMethod::kSymbolic && k > 0) {
      std::vector<double> c(b.in, 0.0);
      for (std::size_t i = 0; i < b.out; ++i) {
        if (hidden && (u[i] <= kStableTol || l[i] >= -kStableTol)) continue;
        for (auto [j, w] : b.rows[i]) c[j] = w;
        u[i] = std::min(u[i], backsub(net, nb, phases, k, c, b.bias[i], lo, hi, true));
        l[i] = std::max(l[i], backsub(net, nb, phases, k, c, b.bias[i], lo, hi, false));
        for (auto [j, w] : b.rows[i]) c[j] = 0.0;
      }
    }
    if (hidden) {
      vl.assign(b.out, 0.0);
      vh.assign(b.out, 0.0);
      for (std::size_t i = 0; i < b.out; ++i) {
        Phase ph = phases ? (*phases)[k][i] : Phase::kFree;
        if (l[i] > u[i] + kStableTol) return std::nullopt;
        if (ph == Phase::kActive) {
          if (u[i] < -kStableTol) return std::nullopt;
          l[i] = std::max(l[i], 0.0);
        } else if (ph == Phase::kInactive) {
          if (l[i] > kStableTol) return std::nullopt;
          u[i] = std::min(u[i], 0.0);
        }
        if (u[i] > kStableTol && ph != Phase::kInactive) {
          vl[i] = std::max(l[i], 0.0);
          vh[i] = u[i];
        }
      }
    }
    nb.lower.push_back(std::move(l));
    nb.upper.push_back(std::move(u));
  }
  return nb;
}

double linear_upper_bound(const PwlNet& net, const NeuronBounds& nb, const Phases* phases,
                          std::span<const double> lo, std::span<const double> hi,
                          std::span<const double> c, double c0,
                          std::vector<std::vector<double>>* intercepts) {
  if (intercepts) {
    intercepts->resize(net.hidden_layers());
    for (std::size_t k = 0; k < net.hidden_layers(); ++k)
      (*intercepts)[k].assign(net.blocks[k].out, 0.0);
  }
  return backsub(net, nb, phases, net.hidden_layers(), {c.begin(), c.end()}, c0, lo, hi, true,
                 intercepts);
}

NeuronBounds interval_bounds(const Network& net, std::span<const double> x, double eps) {
  if (!(eps >= 0.0)) throw std::invalid_argument("eps must be nonnegative");
  if (x.size() != net.input_size()) throw std::invalid_argument("input size mismatch");
  std::vector<double> lo(x.size()), hi(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lo[i] = std::max(0.0, x[i] - eps);
    hi[i] = std::min(1.0, x[i] + eps);
  }
  return *propagate_bounds(linearize(net), lo, hi);
}

}  // namespace cav
