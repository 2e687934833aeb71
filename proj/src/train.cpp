#include "ptsp/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "ptsp/image.hpp"
#include "ptsp/synthesize.hpp"

namespace ptsp {

namespace {

constexpr char kModelMagic[8] = {'P', 'T', 'S', 'P', 'T', 'O', 'Y', '1'};

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_prime(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
         x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

struct Offsets {
  int embed_w, embed_b, p_q, p_k, p_v, bias, w1, b1, w2, b2, head_w, head_b;
  int total;
};

Offsets layout(int window, int channels, int hidden) {
  Offsets o{};
  int at = 0;
  auto take = [&at](int n) {
    int here = at;
    at += n;
    return here;
  };
  int c = channels, h = hidden;
  int bias_len = (2 * window - 1) * (2 * window - 1);
  o.embed_w = take(c);
  o.embed_b = take(c);
  o.p_q = take(c * c);
  o.p_k = take(c * c);
  o.p_v = take(c * c);
  o.bias = take(bias_len);
  o.w1 = take(c * h);
  o.b1 = take(h);
  o.w2 = take(h * c);
  o.b2 = take(c);
  o.head_w = take(c);
  o.head_b = take(1);
  o.total = at;
  return o;
}

using ConstMat = Eigen::Map<const Eigen::MatrixXd>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;

struct Views {
  ConstVec embed_w, embed_b;
  ConstMat p_q, p_k, p_v;
  ConstVec bias;
  ConstMat w1;
  ConstVec b1;
  ConstMat w2;
  ConstVec b2;
  ConstVec head_w;
  double head_b;
};

Views view(const Eigen::VectorXd& theta, const Offsets& o, int window,
           int channels, int hidden) {
  const double* d = theta.data();
  int bias_len = (2 * window - 1) * (2 * window - 1);
  return Views{ConstVec(d + o.embed_w, channels),
               ConstVec(d + o.embed_b, channels),
               ConstMat(d + o.p_q, channels, channels),
               ConstMat(d + o.p_k, channels, channels),
               ConstMat(d + o.p_v, channels, channels),
               ConstVec(d + o.bias, bias_len),
               ConstMat(d + o.w1, channels, hidden),
               ConstVec(d + o.b1, hidden),
               ConstMat(d + o.w2, hidden, channels),
               ConstVec(d + o.b2, channels),
               ConstVec(d + o.head_w, channels),
               d[o.head_b]};
}

AttentionParams attention_from(const Views& v, int window, int channels) {
  AttentionParams p;
  p.mode = AttentionMode::ca;
  p.window = window;
  p.channels = channels;
  p.dim = channels;
  p.p_q = v.p_q;
  p.p_k = v.p_k;
  p.p_v = v.p_v;
  p.bias_table = v.bias;
  return p;
}

FeatureMap embed_map(const std::vector<double>& pixels, int patch,
                     const Views& v, int channels) {
  FeatureMap f = FeatureMap::zeros(patch, patch, channels);
  for (int i = 0; i < patch * patch; ++i)
    for (int ch = 0; ch < channels; ++ch)
      f.data[std::size_t(i) * channels + ch] =
          pixels[i] * v.embed_w[ch] + v.embed_b[ch];
  return f;
}

Eigen::MatrixXd map_to_rows(const FeatureMap& f) {
  Eigen::MatrixXd m(f.height * f.width, f.channels);
  for (int i = 0; i < f.height * f.width; ++i)
    for (int ch = 0; ch < f.channels; ++ch)
      m(i, ch) = f.data[std::size_t(i) * f.channels + ch];
  return m;
}

FeatureMap rows_to_map(const Eigen::MatrixXd& m, int height, int width) {
  FeatureMap f = FeatureMap::zeros(height, width, int(m.cols()));
  for (int i = 0; i < height * width; ++i)
    for (int ch = 0; ch < m.cols(); ++ch)
      f.data[std::size_t(i) * m.cols() + ch] = m(i, ch);
  return f;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw error("lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw error("betas must lie in [0,1)");
  if (weight_decay < 0.0) throw error("weight decay must be >= 0");
  if (batch < 1) throw error("batch must be >= 1");
  if (steps < 1) throw error("steps must be >= 1");
  if (!(eps_charb > 0.0)) throw error("charbonnier eps must be positive");
  if (gamma <= 0.0) throw error("lr gamma must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw error("milestones must be strictly increasing");
}

std::vector<int> TrainConfig::resolved_milestones() const {
  if (!milestones.empty()) return milestones;
  std::vector<int> out;
  if (steps / 2 >= 1) out.push_back(steps / 2);
  if (3 * steps / 4 > steps / 2) out.push_back(3 * steps / 4);
  return out;
}

double charbonnier(const std::vector<double>& pred,
                   const std::vector<double>& target, double eps) {
  if (pred.size() != target.size() || pred.empty())
    throw error("charbonnier needs equal non-empty shapes");
  if (!(eps > 0.0)) throw error("charbonnier eps must be positive");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - target[i];
    sum += std::sqrt(d * d + eps * eps);
  }
  return sum / double(pred.size());
}

double total_loss(const std::vector<double>& pred,
                  const std::vector<double>& target, const TrainConfig& cfg,
                  const FeatureHook& hook) {
  double lc = charbonnier(pred, target, cfg.eps_charb);
  if (!hook) return lc;
  std::vector<double> fp = hook(pred);
  std::vector<double> ft = hook(target);
  if (fp.size() != ft.size() || fp.empty())
    throw error("perceptual hook produced mismatched feature shapes");
  double mse = 0.0;
  for (std::size_t i = 0; i < fp.size(); ++i) {
    double d = fp[i] - ft[i];
    mse += d * d;
  }
  return lc + cfg.lambda * mse / double(fp.size());
}

AdamState AdamState::zeros(Eigen::Index n) {
  AdamState s;
  s.m = Eigen::VectorXd::Zero(n);
  s.v = Eigen::VectorXd::Zero(n);
  return s;
}

void adamw_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                AdamState& state, const TrainConfig& cfg, double lr,
                int step_index,
                const std::vector<std::pair<std::string, int>>* spans) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw error("adamw_step shape mismatch");
  if (step_index < 1) throw error("adamw step index must be >= 1");
  if (!grads.allFinite()) {
    for (Eigen::Index i = 0; i < grads.size(); ++i) {
      if (std::isfinite(grads[i])) continue;
      std::string name = "theta[" + std::to_string(i) + "]";
      if (spans) {
        int off = 0;
        for (const auto& [n, len] : *spans) {
          if (i < off + len) {
            name = n + "[" + std::to_string(i - off) + "]";
            break;
          }
          off += len;
        }
      }
      throw error("non-finite gradient in " + name);
    }
  }
  double bc1 = 1.0 - std::pow(cfg.beta1, step_index);
  double bc2 = 1.0 - std::pow(cfg.beta2, step_index);
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + 1e-8) +
                       cfg.weight_decay * params[i]);
  }
}

double multistep_lr(double base_lr, const std::vector<int>& milestones,
                    double gamma, int step) {
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw error("milestones must be strictly increasing");
  int hits = 0;
  for (int m : milestones)
    if (m <= step) ++hits;
  return base_lr * std::pow(gamma, hits);
}

ToyDenoiser ToyDenoiser::init(int patch, int window, int channels, int hidden,
                              std::uint64_t seed) {
  ToyDenoiser model;
  model.patch = patch;
  model.window = window;
  model.channels = channels;
  model.hidden = hidden;
  model.validate();
  Offsets o = layout(window, channels, hidden);
  model.theta = Eigen::VectorXd::Zero(o.total);
  Rng rng(seed);
  double* d = model.theta.data();
  for (int i = 0; i < channels; ++i) d[o.embed_w + i] = rng.uniform(-0.5, 0.5);
  for (int i = 0; i < channels; ++i) d[o.embed_b + i] = rng.uniform(-0.1, 0.1);
  AttentionParams ap =
      AttentionParams::init(AttentionMode::ca, window, channels, channels, rng);
  std::copy(ap.p_q.data(), ap.p_q.data() + ap.p_q.size(), d + o.p_q);
  std::copy(ap.p_k.data(), ap.p_k.data() + ap.p_k.size(), d + o.p_k);
  std::copy(ap.p_v.data(), ap.p_v.data() + ap.p_v.size(), d + o.p_v);
  std::copy(ap.bias_table.data(), ap.bias_table.data() + ap.bias_table.size(),
            d + o.bias);
  double s1 = 1.0 / std::sqrt(double(channels));
  double s2 = 1.0 / std::sqrt(double(hidden));
  for (int i = 0; i < channels * hidden; ++i)
    d[o.w1 + i] = rng.uniform(-s1, s1);
  for (int i = 0; i < hidden * channels; ++i)
    d[o.w2 + i] = rng.uniform(-s2, s2);
  for (int i = 0; i < channels; ++i) d[o.head_w + i] = rng.uniform(-s1, s1);
  return model;
}

void ToyDenoiser::validate() const {
  if (patch < 1 || window < 1 || channels < 1 || hidden < 1)
    throw error("model dims must be positive");
  if (patch % window != 0)
    throw error("window " + std::to_string(window) + " must divide patch " +
                std::to_string(patch));
}

int ToyDenoiser::param_count() const {
  return layout(window, channels, hidden).total;
}

std::vector<std::pair<std::string, int>> ToyDenoiser::spans() const {
  int c = channels, h = hidden;
  int bias_len = (2 * window - 1) * (2 * window - 1);
  return {{"embed_w", c}, {"embed_b", c},  {"p_q", c * c}, {"p_k", c * c},
          {"p_v", c * c}, {"bias", bias_len}, {"w1", c * h},  {"b1", h},
          {"w2", h * c},  {"b2", c},       {"head_w", c},  {"head_b", 1}};
}

std::vector<double> ToyDenoiser::forward(const std::vector<double>& ldct,
                                         const std::vector<double>& ncct) const {
  validate();
  std::size_t n = std::size_t(patch) * patch;
  if (ldct.size() != n || ncct.size() != n)
    throw error("forward inputs must be patch*patch long");
  Offsets o = layout(window, channels, hidden);
  if (theta.size() != o.total) throw error("model parameter vector has wrong length");
  Views v = view(theta, o, window, channels, hidden);
  AttentionParams ap = attention_from(v, window, channels);
  FeatureMap x = embed_map(ldct, patch, v, channels);
  FeatureMap y = embed_map(ncct, patch, v, channels);
  Eigen::MatrixXd a = map_to_rows(attention_block_forward(x, y, ap));
  Eigen::MatrixXd z1 = (a * v.w1).rowwise() + v.b1.transpose();
  Eigen::MatrixXd g = z1.unaryExpr([](double t) { return gelu(t); });
  Eigen::MatrixXd z2 = (g * v.w2).rowwise() + v.b2.transpose();
  Eigen::VectorXd pred = z2 * v.head_w;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = pred[Eigen::Index(i)] + v.head_b;
  return out;
}

double ToyDenoiser::loss_and_grad(const std::vector<TripletSample>& samples,
                                  const std::vector<int>& indices,
                                  double eps_charb,
                                  Eigen::VectorXd& grad) const {
  validate();
  if (indices.empty()) throw error("loss_and_grad needs at least one sample");
  Offsets o = layout(window, channels, hidden);
  if (theta.size() != o.total) throw error("model parameter vector has wrong length");
  Views v = view(theta, o, window, channels, hidden);
  AttentionParams ap = attention_from(v, window, channels);
  grad = Eigen::VectorXd::Zero(o.total);
  double* gd = grad.data();
  Eigen::Map<Eigen::VectorXd> g_embed_w(gd + o.embed_w, channels);
  Eigen::Map<Eigen::VectorXd> g_embed_b(gd + o.embed_b, channels);
  Eigen::Map<Eigen::MatrixXd> g_p_q(gd + o.p_q, channels, channels);
  Eigen::Map<Eigen::MatrixXd> g_p_k(gd + o.p_k, channels, channels);
  Eigen::Map<Eigen::MatrixXd> g_p_v(gd + o.p_v, channels, channels);
  Eigen::Map<Eigen::VectorXd> g_bias(gd + o.bias, v.bias.size());
  Eigen::Map<Eigen::MatrixXd> g_w1(gd + o.w1, channels, hidden);
  Eigen::Map<Eigen::VectorXd> g_b1(gd + o.b1, hidden);
  Eigen::Map<Eigen::MatrixXd> g_w2(gd + o.w2, hidden, channels);
  Eigen::Map<Eigen::VectorXd> g_b2(gd + o.b2, channels);
  Eigen::Map<Eigen::VectorXd> g_head_w(gd + o.head_w, channels);

  std::size_t n = std::size_t(patch) * patch;
  double total = 0.0;
  double inv_batch = 1.0 / double(indices.size());
  for (int index : indices) {
    if (index < 0 || index >= int(samples.size()))
      throw error("sample index out of range");
    const TripletSample& s = samples[std::size_t(index)];
    if (s.ldct.size() != n || s.ncct.size() != n || s.ndct.size() != n)
      throw error("sample patch size does not match the model");
    FeatureMap x = embed_map(s.ldct, patch, v, channels);
    FeatureMap y = embed_map(s.ncct, patch, v, channels);
    BlockCache cache;
    Eigen::MatrixXd a =
        map_to_rows(attention_block_forward(x, y, ap, &cache));
    Eigen::MatrixXd z1 = (a * v.w1).rowwise() + v.b1.transpose();
    Eigen::MatrixXd act = z1.unaryExpr([](double t) { return gelu(t); });
    Eigen::MatrixXd z2 = (act * v.w2).rowwise() + v.b2.transpose();
    Eigen::VectorXd pred = z2 * v.head_w;

    Eigen::VectorXd delta = Eigen::VectorXd::Zero(Eigen::Index(n));
    double sample_loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double diff = pred[Eigen::Index(i)] + v.head_b - s.ndct[i];
      double root = std::sqrt(diff * diff + eps_charb * eps_charb);
      sample_loss += root;
      delta[Eigen::Index(i)] = diff / (root * double(n));
    }
    total += sample_loss / double(n);

    double w = inv_batch;
    gd[o.head_b] += w * delta.sum();
    g_head_w += w * (z2.transpose() * delta);
    Eigen::MatrixXd d_z2 = delta * v.head_w.transpose();
    g_b2 += w * d_z2.colwise().sum().transpose();
    g_w2 += w * (act.transpose() * d_z2);
    Eigen::MatrixXd d_act = d_z2 * v.w2.transpose();
    Eigen::MatrixXd d_z1 =
        d_act.cwiseProduct(z1.unaryExpr([](double t) { return gelu_prime(t); }));
    g_b1 += w * d_z1.colwise().sum().transpose();
    g_w1 += w * (a.transpose() * d_z1);
    Eigen::MatrixXd d_a = d_z1 * v.w1.transpose();

    BlockGrads bg =
        attention_block_backward(cache, ap, rows_to_map(d_a, patch, patch));
    g_p_q += w * bg.d_p_q;
    g_p_k += w * bg.d_p_k;
    g_p_v += w * bg.d_p_v;
    g_bias += w * bg.d_bias_table;
    for (std::size_t i = 0; i < n; ++i) {
      for (int ch = 0; ch < channels; ++ch) {
        double dx = bg.d_x.data[i * channels + ch];
        double dy = bg.d_y.data[i * channels + ch];
        g_embed_w[ch] += w * (dx * s.ldct[i] + dy * s.ncct[i]);
        g_embed_b[ch] += w * (dx + dy);
      }
    }
  }
  return total * inv_batch;
}

TrainResult train_toy(const std::vector<TripletSample>& samples,
                      const TrainConfig& cfg, int window, int channels,
                      int hidden) {
  cfg.validate();
  if (samples.empty()) throw error("training set is empty");
  if (int(samples.size()) < cfg.batch)
    throw error("need at least " + std::to_string(cfg.batch) +
                " triplets, got " + std::to_string(samples.size()));
  int patch = samples.front().patch;
  for (const TripletSample& s : samples)
    if (s.patch != patch) throw error("mixed patch sizes in training set");
  TrainResult result;
  result.model =
      ToyDenoiser::init(patch, window, channels, hidden, Rng::mix(cfg.seed, 1));
  Rng sampler(Rng::mix(cfg.seed, 2));
  AdamState state = AdamState::zeros(result.model.theta.size());
  std::vector<int> milestones = cfg.resolved_milestones();
  auto spans = result.model.spans();
  std::vector<int> batch(std::size_t(cfg.batch));
  Eigen::VectorXd grad;
  result.curve.reserve(std::size_t(cfg.steps));
  for (int step = 1; step <= cfg.steps; ++step) {
    double lr = multistep_lr(cfg.lr, milestones, cfg.gamma, step);
    for (int& b : batch)
      b = sampler.uniform_int(0, int(samples.size()) - 1);
    double loss = result.model.loss_and_grad(samples, batch, cfg.eps_charb,
                                             grad);
    adamw_step(result.model.theta, grad, state, cfg, lr, step, &spans);
    result.curve.push_back({step, lr, loss});
  }
  return result;
}

std::vector<TripletSample> synth_triplet_samples(int count, int patch,
                                                 std::uint64_t seed) {
  if (count < 1) throw error("sample count must be positive");
  if (patch <= 5)
    throw error("patch must exceed the maximum shift of 5");
  SynthConfig synth;
  std::vector<TripletSample> out;
  out.reserve(std::size_t(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(Rng::mix(seed, std::uint64_t(i)));
    std::vector<double> field(std::size_t(patch) * patch);
    for (double& v : field) v = double(rng.uniform_int(0, 255));
    field = gaussian_smooth(field, patch, patch, 2.0);
    GrayImage clean{patch, patch, {}};
    clean.data.resize(field.size());
    for (std::size_t j = 0; j < field.size(); ++j)
      clean.data[j] = std::uint8_t(std::clamp<long>(std::lround(field[j]), 0, 255));
    GrayImage ldct = synthesize_ldct(clean, rng, synth).first;
    SynthConfig guide = synth;
    guide.noise_sigma = 20.0;
    GrayImage ncct = add_gaussian_noise(clean, rng, guide);
    TripletSample s;
    s.patch = patch;
    s.ldct.resize(field.size());
    s.ncct.resize(field.size());
    s.ndct.resize(field.size());
    for (std::size_t j = 0; j < field.size(); ++j) {
      s.ldct[j] = ldct.data[j] / 255.0;
      s.ncct[j] = ncct.data[j] / 255.0;
      s.ndct[j] = clean.data[j] / 255.0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_model(const ToyDenoiser& model, const std::filesystem::path& path) {
  model.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot open " + path.string() + " for writing");
  out.write(kModelMagic, sizeof kModelMagic);
  std::int32_t dims[5] = {1, model.patch, model.window, model.channels,
                          model.hidden};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  std::int64_t count = model.theta.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(model.theta.data()),
            std::streamsize(count) * 8);
  if (!out) throw error("failed writing " + path.string());
}

ToyDenoiser load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw error(path.string() + " is not a toy model file");
  std::int32_t dims[5];
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || dims[0] != 1) throw error("unsupported model version");
  ToyDenoiser model;
  model.patch = dims[1];
  model.window = dims[2];
  model.channels = dims[3];
  model.hidden = dims[4];
  model.validate();
  std::int64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || count != model.param_count())
    throw error("model parameter count does not match its dims");
  model.theta.resize(count);
  in.read(reinterpret_cast<char*>(model.theta.data()),
          std::streamsize(count) * 8);
  if (!in) throw error("truncated model file " + path.string());
  return model;
}

void write_curve_csv(const std::vector<CurvePoint>& curve,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot open " + path.string() + " for writing");
  out << "step,lr,loss\n";
  char buf[64];
  for (const CurvePoint& p : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", p.step, p.lr, p.loss);
    out << buf;
  }
  if (!out) throw error("failed writing " + path.string());
}

}  // namespace ptsp
