#include "ptsp/attention.hpp"

#include <algorithm>
#include <cmath>

#include "ptsp/image.hpp"

namespace ptsp {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw error(msg);
}

int bias_entries(int window) { return (2 * window - 1) * (2 * window - 1); }

}  // namespace

FeatureMap FeatureMap::zeros(int height, int width, int channels) {
  require(height > 0 && width > 0 && channels > 0,
          "feature map dims must be positive");
  FeatureMap f;
  f.height = height;
  f.width = width;
  f.channels = channels;
  f.data.assign(std::size_t(height) * width * channels, 0.0);
  return f;
}

AttentionParams AttentionParams::init(AttentionMode mode, int window,
                                      int channels, int dim, Rng& rng) {
  AttentionParams p;
  p.mode = mode;
  p.window = window;
  p.channels = channels;
  p.dim = dim;
  p.p_q.resize(channels, dim);
  p.p_k.resize(channels, dim);
  p.p_v.resize(channels, dim);
  p.bias_table.resize(bias_entries(window));
  double scale = 1.0 / std::sqrt(double(channels));
  for (Eigen::MatrixXd* m : {&p.p_q, &p.p_k, &p.p_v})
    for (Eigen::Index i = 0; i < m->size(); ++i)
      m->data()[i] = rng.uniform(-scale, scale);
  for (Eigen::Index i = 0; i < p.bias_table.size(); ++i)
    p.bias_table[i] = rng.uniform(-0.5, 0.5);
  p.validate();
  return p;
}

void AttentionParams::validate() const {
  require(window > 0, "window size must be positive");
  require(channels > 0 && dim > 0, "channels and dim must be positive");
  for (const Eigen::MatrixXd* m : {&p_q, &p_k, &p_v})
    require(m->rows() == channels && m->cols() == dim,
            "projection matrices must be " + std::to_string(channels) + "x" +
                std::to_string(dim));
  require(bias_table.size() == bias_entries(window),
          "bias table needs " + std::to_string(bias_entries(window)) +
              " entries for window " + std::to_string(window) + ", got " +
              std::to_string(bias_table.size()));
}

WindowFeatures window_partition(const FeatureMap& f, int window) {
  require(window > 0, "window size must be positive");
  if (f.height % window != 0 || f.width % window != 0)
    throw error("feature map " + std::to_string(f.height) + "x" +
                std::to_string(f.width) + " not divisible by window " +
                std::to_string(window));
  WindowFeatures w;
  w.window = window;
  w.grid_rows = f.height / window;
  w.grid_cols = f.width / window;
  w.channels = f.channels;
  w.windows.reserve(std::size_t(w.count()));
  for (int wr = 0; wr < w.grid_rows; ++wr) {
    for (int wc = 0; wc < w.grid_cols; ++wc) {
      Eigen::MatrixXd m(window * window, f.channels);
      for (int r = 0; r < window; ++r)
        for (int c = 0; c < window; ++c)
          for (int ch = 0; ch < f.channels; ++ch)
            m(r * window + c, ch) = f.at(wr * window + r, wc * window + c, ch);
      w.windows.push_back(std::move(m));
    }
  }
  return w;
}

FeatureMap window_reverse(const WindowFeatures& w) {
  require(w.window > 0 && w.grid_rows > 0 && w.grid_cols > 0,
          "window grid must be positive");
  require(int(w.windows.size()) == w.count(),
          "window count does not match the grid");
  int m2 = w.window * w.window;
  FeatureMap f =
      FeatureMap::zeros(w.grid_rows * w.window, w.grid_cols * w.window,
                        w.channels);
  for (int wr = 0; wr < w.grid_rows; ++wr) {
    for (int wc = 0; wc < w.grid_cols; ++wc) {
      const Eigen::MatrixXd& win = w.windows[std::size_t(wr) * w.grid_cols + wc];
      require(win.rows() == m2 && win.cols() == w.channels,
              "window matrix has wrong shape");
      for (int r = 0; r < w.window; ++r)
        for (int c = 0; c < w.window; ++c)
          for (int ch = 0; ch < w.channels; ++ch)
            f.at(wr * w.window + r, wc * w.window + c, ch) =
                win(r * w.window + c, ch);
    }
  }
  return f;
}

Qkv project_qkv(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                const AttentionParams& params) {
  params.validate();
  require(x.cols() == params.channels, "X has wrong channel count");
  const Eigen::MatrixXd& key_src = params.mode == AttentionMode::sa ? x : y;
  require(key_src.cols() == params.channels, "Y has wrong channel count");
  Qkv out;
  out.q = x * params.p_q;
  out.k = key_src * params.p_k;
  out.v = x * params.p_v;
  return out;
}

std::vector<int> relative_index_map(int window) {
  require(window > 0, "window size must be positive");
  int m2 = window * window;
  int side = 2 * window - 1;
  std::vector<int> idx(std::size_t(m2) * m2);
  for (int i = 0; i < m2; ++i) {
    int yi = i / window, xi = i % window;
    for (int j = 0; j < m2; ++j) {
      int dy = j / window - yi;
      int dx = j % window - xi;
      idx[std::size_t(i) * m2 + j] = (dy + window - 1) * side + (dx + window - 1);
    }
  }
  return idx;
}

Eigen::MatrixXd build_bias(const AttentionParams& params) {
  params.validate();
  int m2 = params.window * params.window;
  std::vector<int> idx = relative_index_map(params.window);
  Eigen::MatrixXd b(m2, m2);
  for (int i = 0; i < m2; ++i)
    for (int j = 0; j < m2; ++j)
      b(i, j) = params.bias_table[idx[std::size_t(i) * m2 + j]];
  return b;
}

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double mx = logits.row(r).maxCoeff();
    Eigen::ArrayXd e = (logits.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

Eigen::MatrixXd attention_forward(const Eigen::MatrixXd& q,
                                  const Eigen::MatrixXd& k,
                                  const Eigen::MatrixXd& v,
                                  const Eigen::MatrixXd& bias,
                                  AttentionCache* cache) {
  require(q.cols() == k.cols(), "Q and K dims differ");
  require(v.rows() == k.rows(), "K and V row counts differ");
  require(bias.rows() == q.rows() && bias.cols() == k.rows(),
          "bias shape does not match Q K^T");
  require(q.allFinite() && k.allFinite() && v.allFinite() && bias.allFinite(),
          "attention inputs must be finite");
  double scale = 1.0 / std::sqrt(double(q.cols()));
  Eigen::MatrixXd attn = row_softmax(q * k.transpose() * scale + bias);
  if (cache) {
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->attn = attn;
  }
  return attn * v;
}

WindowGrads attention_backward(const AttentionCache& cache,
                               const AttentionParams& params,
                               const Eigen::MatrixXd& grad_out) {
  params.validate();
  const Eigen::MatrixXd& a = cache.attn;
  require(grad_out.rows() == a.rows() && grad_out.cols() == cache.v.cols(),
          "grad_out shape does not match the cached forward");
  require(cache.x.rows() == cache.q.rows() && cache.y.rows() == cache.k.rows(),
          "cache inputs do not match the cached projections");
  double scale = 1.0 / std::sqrt(double(cache.q.cols()));

  Eigen::MatrixXd d_v = a.transpose() * grad_out;
  Eigen::MatrixXd d_a = grad_out * cache.v.transpose();
  // Row-wise softmax Jacobian: dZ = A .* (dA - rowsum(dA .* A)).
  Eigen::VectorXd rowdot = (d_a.array() * a.array()).rowwise().sum();
  Eigen::MatrixXd centered = d_a.colwise() - rowdot;
  Eigen::MatrixXd d_z = a.cwiseProduct(centered);

  WindowGrads g;
  int m2 = params.window * params.window;
  require(a.rows() == m2 && a.cols() == m2,
          "cache window does not match params window size");
  std::vector<int> idx = relative_index_map(params.window);
  g.d_bias_table = Eigen::VectorXd::Zero(params.bias_table.size());
  for (int i = 0; i < m2; ++i)
    for (int j = 0; j < m2; ++j)
      g.d_bias_table[idx[std::size_t(i) * m2 + j]] += d_z(i, j);

  Eigen::MatrixXd d_q = d_z * cache.k * scale;
  Eigen::MatrixXd d_k = d_z.transpose() * cache.q * scale;

  g.d_p_q = cache.x.transpose() * d_q;
  g.d_p_v = cache.x.transpose() * d_v;
  g.d_x = d_q * params.p_q.transpose() + d_v * params.p_v.transpose();
  Eigen::MatrixXd d_key_src = d_k * params.p_k.transpose();
  if (params.mode == AttentionMode::sa) {
    g.d_p_k = cache.x.transpose() * d_k;
    g.d_x += d_key_src;
    g.d_y = Eigen::MatrixXd::Zero(cache.y.rows(), cache.y.cols());
  } else {
    g.d_p_k = cache.y.transpose() * d_k;
    g.d_y = d_key_src;
  }
  return g;
}

FeatureMap attention_block_forward(const FeatureMap& x, const FeatureMap& y,
                                   const AttentionParams& params,
                                   BlockCache* cache) {
  params.validate();
  require(x.channels == params.channels, "X has wrong channel count");
  bool ca = params.mode == AttentionMode::ca;
  if (ca)
    require(x.same_shape(y), "X and Y shapes differ");
  WindowFeatures wx = window_partition(x, params.window);
  WindowFeatures wy = ca ? window_partition(y, params.window) : wx;
  Eigen::MatrixXd bias = build_bias(params);
  WindowFeatures out = wx;
  out.channels = params.dim;
  if (cache) {
    cache->height = x.height;
    cache->width = x.width;
    cache->windows.assign(wx.windows.size(), AttentionCache{});
  }
  for (std::size_t i = 0; i < wx.windows.size(); ++i) {
    Qkv qkv = project_qkv(wx.windows[i], wy.windows[i], params);
    AttentionCache* wc = cache ? &cache->windows[i] : nullptr;
    out.windows[i] = attention_forward(qkv.q, qkv.k, qkv.v, bias, wc);
    if (wc) {
      wc->x = wx.windows[i];
      wc->y = wy.windows[i];
    }
  }
  return window_reverse(out);
}

BlockGrads attention_block_backward(const BlockCache& cache,
                                    const AttentionParams& params,
                                    const FeatureMap& grad_out) {
  params.validate();
  require(grad_out.height == cache.height && grad_out.width == cache.width &&
              grad_out.channels == params.dim,
          "grad_out shape does not match the cached forward");
  WindowFeatures wg = window_partition(grad_out, params.window);
  require(wg.windows.size() == cache.windows.size(),
          "cache window count does not match grad_out");
  BlockGrads g;
  g.d_x = FeatureMap::zeros(cache.height, cache.width, params.channels);
  g.d_y = FeatureMap::zeros(cache.height, cache.width, params.channels);
  g.d_p_q = Eigen::MatrixXd::Zero(params.channels, params.dim);
  g.d_p_k = Eigen::MatrixXd::Zero(params.channels, params.dim);
  g.d_p_v = Eigen::MatrixXd::Zero(params.channels, params.dim);
  g.d_bias_table = Eigen::VectorXd::Zero(params.bias_table.size());
  WindowFeatures wdx = wg, wdy = wg;
  wdx.channels = params.channels;
  wdy.channels = params.channels;
  for (std::size_t i = 0; i < cache.windows.size(); ++i) {
    WindowGrads wgr = attention_backward(cache.windows[i], params,
                                         wg.windows[i]);
    wdx.windows[i] = wgr.d_x;
    wdy.windows[i] = wgr.d_y;
    g.d_p_q += wgr.d_p_q;
    g.d_p_k += wgr.d_p_k;
    g.d_p_v += wgr.d_p_v;
    g.d_bias_table += wgr.d_bias_table;
  }
  g.d_x = window_reverse(wdx);
  g.d_y = window_reverse(wdy);
  return g;
}

GradCheckReport check_gradients(
    const std::function<double(const Eigen::VectorXd&)>& loss,
    const Eigen::VectorXd& theta, const Eigen::VectorXd& analytic,
    const std::vector<std::pair<std::string, int>>& spans, double h,
    double tol) {
  require(theta.size() == analytic.size(),
          "analytic gradient length does not match theta");
  int total = 0;
  for (const auto& [name, len] : spans) total += len;
  require(total == theta.size(), "spans do not cover theta");
  GradCheckReport report;
  Eigen::VectorXd probe = theta;
  int offset = 0;
  for (const auto& [name, len] : spans) {
    for (int i = 0; i < len; ++i) {
      int at = offset + i;
      double keep = probe[at];
      probe[at] = keep + h;
      double up = loss(probe);
      probe[at] = keep - h;
      double down = loss(probe);
      probe[at] = keep;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[at];
      double rel = std::abs(a - numeric) /
                   std::max({std::abs(a), std::abs(numeric), 1.0});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name + "[" + std::to_string(i) + "]";
      }
      if (rel >= tol) report.failures.push_back({name, i, rel});
    }
    offset += len;
  }
  return report;
}

namespace {

void pack(Eigen::VectorXd& theta, int& off, const double* src,
          Eigen::Index n) {
  std::copy(src, src + n, theta.data() + off);
  off += int(n);
}

void unpack(const Eigen::VectorXd& theta, int& off, double* dst,
            Eigen::Index n) {
  std::copy(theta.data() + off, theta.data() + off + n, dst);
  off += int(n);
}

struct BypassResult {
  FeatureMap out;
  std::vector<Qkv> qkv;
  WindowFeatures wx, wy;
};

BypassResult bypass_forward(const FeatureMap& x, const FeatureMap& y,
                            const AttentionParams& params) {
  BypassResult r;
  r.wx = window_partition(x, params.window);
  r.wy = window_partition(y, params.window);
  WindowFeatures out = r.wx;
  out.channels = params.dim;
  for (std::size_t i = 0; i < r.wx.windows.size(); ++i) {
    Qkv qkv = project_qkv(r.wx.windows[i], r.wy.windows[i], params);
    out.windows[i] = qkv.q + qkv.k + qkv.v;
    r.qkv.push_back(std::move(qkv));
  }
  r.out = window_reverse(out);
  return r;
}

}  // namespace

CaBlockProblem CaBlockProblem::random(int m, int c, int d, std::uint64_t seed,
                                      bool bypass) {
  Rng rng(seed);
  CaBlockProblem p;
  p.params = AttentionParams::init(AttentionMode::ca, m, c, d, rng);
  p.x = FeatureMap::zeros(m, m, c);
  p.y = FeatureMap::zeros(m, m, c);
  p.loss_weights = FeatureMap::zeros(m, m, d);
  p.bypass_attention = bypass;
  for (double& v : p.x.data) v = rng.uniform(-1.0, 1.0);
  for (double& v : p.y.data) v = rng.uniform(-1.0, 1.0);
  for (double& v : p.loss_weights.data) v = rng.uniform(-1.0, 1.0);
  return p;
}

Eigen::VectorXd CaBlockProblem::theta() const {
  int n = int(3 * params.p_q.size() + params.bias_table.size() +
              x.data.size() + y.data.size());
  Eigen::VectorXd th(n);
  int off = 0;
  pack(th, off, params.p_q.data(), params.p_q.size());
  pack(th, off, params.p_k.data(), params.p_k.size());
  pack(th, off, params.p_v.data(), params.p_v.size());
  pack(th, off, params.bias_table.data(), params.bias_table.size());
  pack(th, off, x.data.data(), Eigen::Index(x.data.size()));
  pack(th, off, y.data.data(), Eigen::Index(y.data.size()));
  return th;
}

std::vector<std::pair<std::string, int>> CaBlockProblem::spans() const {
  return {{"p_q", int(params.p_q.size())},
          {"p_k", int(params.p_k.size())},
          {"p_v", int(params.p_v.size())},
          {"bias_table", int(params.bias_table.size())},
          {"x", int(x.data.size())},
          {"y", int(y.data.size())}};
}

double CaBlockProblem::loss(const Eigen::VectorXd& theta) const {
  CaBlockProblem p = *this;
  int off = 0;
  unpack(theta, off, p.params.p_q.data(), p.params.p_q.size());
  unpack(theta, off, p.params.p_k.data(), p.params.p_k.size());
  unpack(theta, off, p.params.p_v.data(), p.params.p_v.size());
  unpack(theta, off, p.params.bias_table.data(), p.params.bias_table.size());
  unpack(theta, off, p.x.data.data(), Eigen::Index(p.x.data.size()));
  unpack(theta, off, p.y.data.data(), Eigen::Index(p.y.data.size()));
  FeatureMap out = p.bypass_attention
                       ? bypass_forward(p.x, p.y, p.params).out
                       : attention_block_forward(p.x, p.y, p.params);
  double sum = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    sum += out.data[i] * p.loss_weights.data[i];
  return sum;
}

Eigen::VectorXd CaBlockProblem::analytic_grad() const {
  Eigen::VectorXd grad(theta().size());
  int off = 0;
  if (!bypass_attention) {
    BlockCache cache;
    attention_block_forward(x, y, params, &cache);
    BlockGrads g = attention_block_backward(cache, params, loss_weights);
    pack(grad, off, g.d_p_q.data(), g.d_p_q.size());
    pack(grad, off, g.d_p_k.data(), g.d_p_k.size());
    pack(grad, off, g.d_p_v.data(), g.d_p_v.size());
    pack(grad, off, g.d_bias_table.data(), g.d_bias_table.size());
    pack(grad, off, g.d_x.data.data(), Eigen::Index(g.d_x.data.size()));
    pack(grad, off, g.d_y.data.data(), Eigen::Index(g.d_y.data.size()));
    return grad;
  }
  BypassResult fw = bypass_forward(x, y, params);
  WindowFeatures wg = window_partition(loss_weights, params.window);
  Eigen::MatrixXd d_p_q = Eigen::MatrixXd::Zero(params.channels, params.dim);
  Eigen::MatrixXd d_p_k = d_p_q, d_p_v = d_p_q;
  WindowFeatures wdx = wg, wdy = wg;
  wdx.channels = params.channels;
  wdy.channels = params.channels;
  for (std::size_t i = 0; i < wg.windows.size(); ++i) {
    const Eigen::MatrixXd& g = wg.windows[i];
    d_p_q += fw.wx.windows[i].transpose() * g;
    d_p_k += fw.wy.windows[i].transpose() * g;
    d_p_v += fw.wx.windows[i].transpose() * g;
    wdx.windows[i] = g * (params.p_q.transpose() + params.p_v.transpose());
    wdy.windows[i] = g * params.p_k.transpose();
  }
  FeatureMap d_x = window_reverse(wdx);
  FeatureMap d_y = window_reverse(wdy);
  Eigen::VectorXd d_bias = Eigen::VectorXd::Zero(params.bias_table.size());
  pack(grad, off, d_p_q.data(), d_p_q.size());
  pack(grad, off, d_p_k.data(), d_p_k.size());
  pack(grad, off, d_p_v.data(), d_p_v.size());
  pack(grad, off, d_bias.data(), d_bias.size());
  pack(grad, off, d_x.data.data(), Eigen::Index(d_x.data.size()));
  pack(grad, off, d_y.data.data(), Eigen::Index(d_y.data.size()));
  return grad;
}

GradCheckReport grad_check_block(const CaBlockProblem& problem, double h,
                                 double tol) {
  return check_gradients(
      [&problem](const Eigen::VectorXd& th) { return problem.loss(th); },
      problem.theta(), problem.analytic_grad(), problem.spans(), h, tol);
}

}  // namespace ptsp
