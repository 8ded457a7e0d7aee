#include "ranpool/nn/layers.hpp"

#include <cmath>

namespace ranpool::nn {

void check_finite(const Eigen::MatrixXd& x, std::string_view layer) {
  if (!x.allFinite()) throw NumericalError("non-finite activation in layer '" + std::string(layer) + "'");
}

void check_finite(const Sequence& x, std::string_view layer) {
  for (const auto& m : x) check_finite(m, layer);
}

Sequence zeros_like(const Sequence& x) {
  Sequence out;
  out.reserve(x.size());
  for (const auto& m : x) out.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  return out;
}

// --- Dense -----------------------------------------------------------------

Dense Dense::create(ModelParams& params, const std::string& name, Partition partition,
                    Eigen::Index in, Eigen::Index out, Rng& rng, bool has_bias) {
  Dense d;
  d.in = in;
  d.out = out;
  d.has_bias = has_bias;
  d.weight = params.add(name + ".weight", partition, glorot(out, in, in, out, rng));
  if (has_bias) d.bias = params.add(name + ".bias", partition, Tensor::Zero(1, out));
  return d;
}

Eigen::MatrixXd Dense::forward(const ModelParams& p, const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd y = x * p[weight].transpose();
  if (has_bias) y.rowwise() += p[bias].row(0);
  return y;
}

Eigen::MatrixXd Dense::backward(const ModelParams& p, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& dy, ModelParams& grads) const {
  grads[weight].noalias() += dy.transpose() * x;
  if (has_bias) grads[bias] += dy.colwise().sum();
  return dy * p[weight];
}

Sequence Dense::forward(const ModelParams& p, const Sequence& x) const {
  Sequence y;
  y.reserve(x.size());
  for (const auto& xt : x) y.push_back(forward(p, xt));
  return y;
}

Sequence Dense::backward(const ModelParams& p, const Sequence& x, const Sequence& dy,
                         ModelParams& grads) const {
  Sequence dx;
  dx.reserve(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) dx.push_back(backward(p, x[t], dy[t], grads));
  return dx;
}

// --- CausalConv1d ------------------------------------------------------------

CausalConv1d CausalConv1d::create(ModelParams& params, const std::string& name,
                                  Partition partition, Eigen::Index in, Eigen::Index out,
                                  int kernel, int dilation, Rng& rng) {
  if (kernel < 1 || dilation < 1) throw ConfigError("conv: kernel and dilation must be >= 1");
  CausalConv1d c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.dilation = dilation;
  c.weight = params.add(name + ".weight", partition,
                        glorot(out, kernel * in, kernel * in, out, rng));
  c.bias = params.add(name + ".bias", partition, Tensor::Zero(1, out));
  return c;
}

Sequence CausalConv1d::forward(const ModelParams& p, const Sequence& x) const {
  const auto& w = p[weight];
  Sequence y;
  y.reserve(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    Eigen::MatrixXd yt(x[t].rows(), out);
    yt.rowwise() = p[bias].row(0);
    for (int k = 0; k < kernel; ++k) {
      const auto lag = static_cast<std::size_t>(k * dilation);
      if (lag > t) break;
      yt.noalias() += x[t - lag] * w.middleCols(k * in, in).transpose();
    }
    y.push_back(std::move(yt));
  }
  return y;
}

Sequence CausalConv1d::backward(const ModelParams& p, const Sequence& x, const Sequence& dy,
                                ModelParams& grads) const {
  const auto& w = p[weight];
  auto& gw = grads[weight];
  Sequence dx = zeros_like(x);
  for (std::size_t t = 0; t < x.size(); ++t) {
    grads[bias] += dy[t].colwise().sum();
    for (int k = 0; k < kernel; ++k) {
      const auto lag = static_cast<std::size_t>(k * dilation);
      if (lag > t) break;
      gw.middleCols(k * in, in).noalias() += dy[t].transpose() * x[t - lag];
      dx[t - lag].noalias() += dy[t] * w.middleCols(k * in, in);
    }
  }
  return dx;
}

// --- LayerNorm ---------------------------------------------------------------

LayerNorm LayerNorm::create(ModelParams& params, const std::string& name, Partition partition,
                            Eigen::Index channels) {
  if (channels < 2) throw ConfigError("layer norm needs at least two channels");
  LayerNorm ln;
  ln.channels = channels;
  ln.gain = params.add(name + ".gain", partition, Tensor::Ones(1, channels));
  ln.shift = params.add(name + ".shift", partition, Tensor::Zero(1, channels));
  return ln;
}

Sequence LayerNorm::forward(const ModelParams& p, const Sequence& x, Cache& cache) const {
  cache.normalized.clear();
  cache.inv_std.clear();
  Sequence y;
  y.reserve(x.size());
  const double c = static_cast<double>(channels);
  for (const auto& xt : x) {
    const Eigen::VectorXd mean = xt.rowwise().mean();
    Eigen::MatrixXd centered = xt.colwise() - mean;
    const Eigen::VectorXd var = centered.rowwise().squaredNorm() / c;
    const Eigen::VectorXd inv = (var.array() + epsilon).rsqrt();
    Eigen::MatrixXd xhat = centered.array().colwise() * inv.array();
    Eigen::MatrixXd yt = xhat.array().rowwise() * p[gain].row(0).array();
    yt.rowwise() += p[shift].row(0);
    y.push_back(std::move(yt));
    cache.normalized.push_back(std::move(xhat));
    cache.inv_std.push_back(inv);
  }
  return y;
}

Sequence LayerNorm::backward(const ModelParams& p, const Cache& cache, const Sequence& dy,
                             ModelParams& grads) const {
  Sequence dx;
  dx.reserve(dy.size());
  const double c = static_cast<double>(channels);
  for (std::size_t t = 0; t < dy.size(); ++t) {
    const auto& xhat = cache.normalized[t];
    grads[gain] += (dy[t].array() * xhat.array()).colwise().sum().matrix();
    grads[shift] += dy[t].colwise().sum();
    const Eigen::ArrayXXd dxhat = dy[t].array().rowwise() * p[gain].row(0).array();
    const Eigen::ArrayXd sum_d = dxhat.rowwise().sum();
    const Eigen::ArrayXd sum_dx = (dxhat * xhat.array()).rowwise().sum();
    Eigen::ArrayXXd g = (c * dxhat).colwise() - sum_d;
    g -= xhat.array().colwise() * sum_dx;
    g.colwise() *= cache.inv_std[t].array() / c;
    dx.push_back(g.matrix());
  }
  return dx;
}

// --- ReLU / dropout ----------------------------------------------------------

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Sequence relu(const Sequence& x) {
  Sequence y;
  y.reserve(x.size());
  for (const auto& xt : x) y.push_back(relu(xt));
  return y;
}

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
  return (x.array() > 0.0).select(dy, 0.0);
}

Sequence relu_backward(const Sequence& x, const Sequence& dy) {
  Sequence dx;
  dx.reserve(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) dx.push_back(relu_backward(x[t], dy[t]));
  return dx;
}

DropoutMask make_dropout_mask(const Sequence& shape_like, double rate, Rng& rng) {
  DropoutMask m;
  if (rate <= 0.0) return m;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (const auto& xt : shape_like) {
    Eigen::MatrixXd mt(xt.rows(), xt.cols());
    for (Eigen::Index j = 0; j < mt.cols(); ++j)
      for (Eigen::Index i = 0; i < mt.rows(); ++i) mt(i, j) = keep(rng) ? scale : 0.0;
    m.mask.push_back(std::move(mt));
  }
  return m;
}

Sequence apply_mask(const DropoutMask& mask, const Sequence& x) {
  if (!mask.active()) return x;
  Sequence y;
  y.reserve(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) y.push_back(x[t].cwiseProduct(mask.mask[t]));
  return y;
}

// --- LSTM --------------------------------------------------------------------

namespace {

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

}  // namespace

Lstm Lstm::create(ModelParams& params, const std::string& name, Partition partition,
                  Eigen::Index in, Eigen::Index hidden, Rng& rng) {
  Lstm l;
  l.in = in;
  l.hidden = hidden;
  l.w_input = params.add(name + ".w_input", partition, glorot(4 * hidden, in, in, hidden, rng));
  l.w_recurrent =
      params.add(name + ".w_recurrent", partition, glorot(4 * hidden, hidden, hidden, hidden, rng));
  Tensor b = Tensor::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();  // forget-gate bias
  l.bias = params.add(name + ".bias", partition, std::move(b));
  return l;
}

Lstm::State Lstm::zero_state(Eigen::Index batch) const {
  return {Eigen::MatrixXd::Zero(batch, hidden), Eigen::MatrixXd::Zero(batch, hidden)};
}

Lstm::State Lstm::step(const ModelParams& p, const Eigen::MatrixXd& x, const State& prev,
                       StepCache* cache) const {
  const Eigen::Index h = hidden;
  Eigen::MatrixXd z = x * p[w_input].transpose();
  z.noalias() += prev.h * p[w_recurrent].transpose();
  z.rowwise() += p[bias].row(0);
  Eigen::MatrixXd i = sigmoid(z.middleCols(0, h));
  Eigen::MatrixXd f = sigmoid(z.middleCols(h, h));
  Eigen::MatrixXd g = z.middleCols(2 * h, h).array().tanh().matrix();
  Eigen::MatrixXd o = sigmoid(z.middleCols(3 * h, h));
  State next;
  next.c = f.cwiseProduct(prev.c) + i.cwiseProduct(g);
  Eigen::MatrixXd tanh_c = next.c.array().tanh().matrix();
  next.h = o.cwiseProduct(tanh_c);
  if (cache) *cache = {std::move(i), std::move(f), std::move(g), std::move(o), next.c, std::move(tanh_c)};
  return next;
}

Sequence Lstm::forward(const ModelParams& p, const Sequence& x, Cache& cache) const {
  const Eigen::Index batch = x.empty() ? 0 : x.front().rows();
  cache.initial = zero_state(batch);
  cache.steps.assign(x.size(), {});
  Sequence out;
  out.reserve(x.size());
  State s = cache.initial;
  for (std::size_t t = 0; t < x.size(); ++t) {
    s = step(p, x[t], s, &cache.steps[t]);
    out.push_back(s.h);
  }
  return out;
}

Sequence Lstm::backward(const ModelParams& p, const Sequence& x, const Cache& cache,
                        const Sequence& dh, ModelParams& grads) const {
  const Eigen::Index h = hidden;
  const std::size_t steps = x.size();
  Sequence dx(steps);
  if (steps == 0) return dx;
  const Eigen::Index batch = x.front().rows();
  Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(batch, h);
  Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(batch, h);
  Eigen::MatrixXd dz(batch, 4 * h);

  for (std::size_t t = steps; t-- > 0;) {
    const auto& sc = cache.steps[t];
    const Eigen::MatrixXd& c_prev = t ? cache.steps[t - 1].c : cache.initial.c;
    const Eigen::MatrixXd h_prev =
        t ? cache.steps[t - 1].o.cwiseProduct(cache.steps[t - 1].tanh_c) : cache.initial.h;

    const Eigen::ArrayXXd dht = (dh[t] + dh_next).array();
    const Eigen::ArrayXXd dc =
        dc_next.array() + dht * sc.o.array() * (1.0 - sc.tanh_c.array().square());
    const Eigen::ArrayXXd i = sc.i.array(), f = sc.f.array(), g = sc.g.array(), o = sc.o.array();

    dz.middleCols(0, h) = (dc * g * i * (1.0 - i)).matrix();
    dz.middleCols(h, h) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
    dz.middleCols(2 * h, h) = (dc * i * (1.0 - g.square())).matrix();
    dz.middleCols(3 * h, h) = (dht * sc.tanh_c.array() * o * (1.0 - o)).matrix();

    grads[w_input].noalias() += dz.transpose() * x[t];
    grads[w_recurrent].noalias() += dz.transpose() * h_prev;
    grads[bias] += dz.colwise().sum();
    dx[t] = dz * p[w_input];
    dh_next = dz * p[w_recurrent];
    dc_next = (dc * f).matrix();
  }
  return dx;
}

}  // namespace ranpool::nn
