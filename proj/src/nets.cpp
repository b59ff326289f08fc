#include "abpt/nets.hpp"

#include <algorithm>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace abpt {

using ad::Var;
using nlohmann::json;

namespace {

// Rows (or columns, whichever are fewer) of a Gaussian matrix orthonormalised
// by modified Gram-Schmidt.
Tensor orthogonal(int rows, int cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const bool by_cols = rows >= cols;
  const int count = by_cols ? cols : rows;
  const int len = by_cols ? rows : cols;
  std::vector<std::vector<double>> basis(static_cast<std::size_t>(count), std::vector<double>(static_cast<std::size_t>(len)));
  for (auto& vec : basis) {
    for (;;) {
      for (double& x : vec) x = normal(rng);
      for (const auto& prev : basis) {
        if (&prev == &vec) break;
        double dot = 0.0;
        for (int i = 0; i < len; ++i) dot += vec[static_cast<std::size_t>(i)] * prev[static_cast<std::size_t>(i)];
        for (int i = 0; i < len; ++i) vec[static_cast<std::size_t>(i)] -= dot * prev[static_cast<std::size_t>(i)];
      }
      double norm = 0.0;
      for (double x : vec) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (double& x : vec) x /= norm;
        break;
      }
    }
  }
  Tensor w(rows, cols);
  for (int k = 0; k < count; ++k)
    for (int i = 0; i < len; ++i) {
      const double x = gain * basis[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
      if (by_cols) w(i, k) = x; else w(k, i) = x;
    }
  return w;
}

}  // namespace

Mlp Mlp::create(std::vector<int> sizes, std::mt19937_64& rng, double hidden_gain, bool zero_output) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
  Mlp net;
  net.sizes = std::move(sizes);
  const std::size_t layers = net.sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = net.sizes[l], out = net.sizes[l + 1];
    const bool last = l + 1 == layers;
    net.params.push_back(last && zero_output ? Tensor(in, out) : orthogonal(in, out, last ? 1.0 : hidden_gain, rng));
    net.params.emplace_back(1, out);
  }
  net.validate();
  return net;
}

std::size_t Mlp::num_parameters() const {
  std::size_t n = 0;
  for (const Tensor& t : params) n += t.size();
  return n;
}

void Mlp::validate() const {
  if (sizes.size() < 2 || params.size() != 2 * (sizes.size() - 1))
    throw std::invalid_argument("Mlp: parameter count does not match layer sizes");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const Tensor& w = params[2 * l];
    const Tensor& b = params[2 * l + 1];
    if (w.rows() != sizes[l] || w.cols() != sizes[l + 1] || b.rows() != 1 || b.cols() != sizes[l + 1])
      throw std::invalid_argument("Mlp: layer " + std::to_string(l) + " shapes do not chain");
    if (!w.all_finite() || !b.all_finite()) throw std::invalid_argument("Mlp: non-finite parameter");
  }
}

Var BoundMlp::forward(Var x) const {
  if (x.cols() != sizes.front())
    throw ad::ShapeError("mlp: input has " + std::to_string(x.cols()) + " columns, network expects " +
                         std::to_string(sizes.front()));
  const std::size_t layers = sizes.size() - 1;
  Var h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::affine(h, params[2 * l], params[2 * l + 1]);
    if (l + 1 < layers) h = ad::tanh(h);
  }
  return h;
}

BoundMlp bind(ad::Tape& tape, const Mlp& net, bool requires_grad) {
  BoundMlp b;
  b.sizes = net.sizes;
  for (const Tensor& t : net.params) b.params.push_back(requires_grad ? tape.parameter(t) : tape.constant(t));
  return b;
}

ParamList gradients(const BoundMlp& bound) {
  ParamList out;
  out.reserve(bound.params.size());
  for (const Var& v : bound.params) out.push_back(v.grad());
  return out;
}

ActorOutput actor_forward(const BoundMlp& actor, Var obs, const Tensor& eps) {
  const int out = actor.sizes.back();
  if (out % 2 != 0) throw std::invalid_argument("actor: output size must be 2 x action dim");
  const int act = out / 2;
  if (eps.rows() != obs.rows() || eps.cols() != act)
    throw ad::ShapeError("actor: noise shape " + eps.shape_string() + " does not match " +
                         shape_string(obs.rows(), act));
  Var head = actor.forward(obs);
  ActorOutput o;
  o.mean = ad::slice(head, 0, act);
  Var log_std = ad::clamp(ad::slice(head, act, out), kLogStdMin, kLogStdMax);
  o.std = ad::exp(log_std);
  Var pre = ad::gauss_reparameterize(o.mean, o.std, eps);
  o.action = ad::tanh(pre);

  // log N(pre; mean, std) = -eps^2/2 - log std - log(2 pi)/2, with eps constant.
  Tensor base(eps.rows(), 1);
  for (int r = 0; r < eps.rows(); ++r) {
    double acc = 0.0;
    for (double e : eps.row(r)) acc += -0.5 * e * e - 0.5 * std::log(2.0 * std::numbers::pi);
    base(r, 0) = acc;
  }
  ad::Tape& tape = *obs.tape();
  Var gauss = tape.constant(std::move(base)) - ad::row_sum(log_std);
  Var squash = ad::row_sum(ad::log(1.0 + kTanhEpsilon - ad::square(o.action)));
  o.log_prob = gauss - squash;
  o.entropy = -o.log_prob;
  return o;
}

Tensor actor_mean_action(const Mlp& actor, const Tensor& obs) {
  ad::Tape tape;
  BoundMlp b = bind(tape, actor, false);
  Var head = b.forward(tape.constant(obs));
  return ad::tanh(ad::slice(head, 0, actor.sizes.back() / 2)).value();
}

Var critic_q(const BoundMlp& critic, Var obs, Var action) {
  if (obs.rows() != action.rows())
    throw ad::ShapeError("critic: observation rows " + obs.value().shape_string() + " vs action rows " +
                         action.value().shape_string());
  return critic.forward(ad::concat({obs, action}));
}

Var state_value(const BoundMlp& critic, const BoundMlp& actor, double kappa, Var obs,
                std::span<const Tensor> eps_samples) {
  if (eps_samples.empty()) throw std::invalid_argument("state_value: need at least one noise sample");
  Var total;
  for (const Tensor& eps : eps_samples) {
    ActorOutput a = actor_forward(actor, obs, eps);
    Var v = critic_q(critic, obs, a.action);
    if (kappa != 0.0) v = v + kappa * a.entropy;
    total = total.valid() ? total + v : v;
  }
  return eps_samples.size() == 1 ? total : total * (1.0 / static_cast<double>(eps_samples.size()));
}

void soft_update(ParamList& target, const ParamList& source, double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("soft_update: tau must be in [0, 1]");
  if (target.size() != source.size()) throw std::invalid_argument("soft_update: parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!target[i].same_shape(source[i]))
      throw std::invalid_argument("soft_update: shape mismatch " + target[i].shape_string() + " vs " +
                                  source[i].shape_string());
    for (std::size_t j = 0; j < target[i].size(); ++j)
      target[i][j] = (1.0 - tau) * target[i][j] + tau * source[i][j];
  }
}

double global_norm(const ParamList& grads) {
  double acc = 0.0;
  for (const Tensor& t : grads)
    for (double x : t.data()) acc += x * x;
  return std::sqrt(acc);
}

double clip_global_norm(ParamList& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& t : grads)
      for (double& x : t.data()) x *= s;
  }
  return norm;
}

bool all_finite(const ParamList& list) {
  return std::all_of(list.begin(), list.end(), [](const Tensor& t) { return t.all_finite(); });
}

double l2_distance(const ParamList& a, const ParamList& b) {
  if (a.size() != b.size()) throw std::invalid_argument("l2_distance: parameter count mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].same_shape(b[i])) throw std::invalid_argument("l2_distance: shape mismatch");
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      const double d = a[i][j] - b[i][j];
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

void Adam::step(ParamList& params, const ParamList& grads, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: gradient count mismatch");
  if (m.empty()) {
    for (const Tensor& p : params) {
      m.emplace_back(p.rows(), p.cols());
      v.emplace_back(p.rows(), p.cols());
    }
  }
  ++step_count;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j] + weight_decay * p[j];
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
      p[j] -= lr * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + eps);
    }
  }
}

double EntropyTemp::gradient(double mean_log_prob) const {
  return kappa() * (-mean_log_prob - target_entropy);
}

double EntropyTemp::update(double mean_log_prob) {
  const double g = gradient(mean_log_prob);
  ParamList p{Tensor::scalar(log_kappa)};
  opt.step(p, {Tensor::scalar(g)}, lr);
  log_kappa = p[0].item();
  return g;
}

// ---- checkpoints ----

namespace {

constexpr int kCheckpointVersion = 1;

json tensor_json(const Tensor& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

Tensor tensor_from(const json& j) {
  return Tensor(j.at("rows").get<int>(), j.at("cols").get<int>(), j.at("data").get<std::vector<double>>());
}

json list_json(const ParamList& list) {
  json arr = json::array();
  for (const Tensor& t : list) arr.push_back(tensor_json(t));
  return arr;
}

ParamList list_from(const json& j) {
  ParamList out;
  for (const json& t : j) out.push_back(tensor_from(t));
  return out;
}

json mlp_json(const Mlp& net) { return {{"sizes", net.sizes}, {"params", list_json(net.params)}}; }

Mlp mlp_from(const json& j) {
  Mlp net;
  net.sizes = j.at("sizes").get<std::vector<int>>();
  net.params = list_from(j.at("params"));
  net.validate();
  return net;
}

json adam_json(const Adam& a) {
  return {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay},
          {"step_count", a.step_count}, {"m", list_json(a.m)}, {"v", list_json(a.v)}};
}

Adam adam_from(const json& j) {
  Adam a;
  a.beta1 = j.at("beta1").get<double>();
  a.beta2 = j.at("beta2").get<double>();
  a.eps = j.at("eps").get<double>();
  a.weight_decay = j.at("weight_decay").get<double>();
  a.step_count = j.at("step_count").get<long>();
  a.m = list_from(j.at("m"));
  a.v = list_from(j.at("v"));
  return a;
}

}  // namespace

std::string checkpoint_to_string(const ActorCriticParams& p) {
  json j;
  j["format"] = "abpt-checkpoint";
  j["version"] = kCheckpointVersion;
  j["step"] = p.step;
  j["actor"] = mlp_json(p.actor);
  j["critic"] = p.critic ? mlp_json(*p.critic) : json(nullptr);
  j["target_critic"] = p.target_critic ? mlp_json(*p.target_critic) : json(nullptr);
  j["temperature"] = {{"log_kappa", p.temperature.log_kappa},
                      {"target_entropy", p.temperature.target_entropy},
                      {"lr", p.temperature.lr},
                      {"opt", adam_json(p.temperature.opt)}};
  j["actor_opt"] = adam_json(p.actor_opt);
  j["critic_opt"] = adam_json(p.critic_opt);
  return j.dump();
}

ActorCriticParams checkpoint_from_string(const std::string& text) {
  const json j = json::parse(text);
  if (j.value("format", "") != "abpt-checkpoint") throw std::runtime_error("checkpoint: unrecognised format");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(j.at("version").get<int>()));
  ActorCriticParams p;
  p.step = j.at("step").get<long>();
  p.actor = mlp_from(j.at("actor"));
  if (!j.at("critic").is_null()) p.critic = mlp_from(j.at("critic"));
  if (!j.at("target_critic").is_null()) p.target_critic = mlp_from(j.at("target_critic"));
  const json& t = j.at("temperature");
  p.temperature.log_kappa = t.at("log_kappa").get<double>();
  p.temperature.target_entropy = t.at("target_entropy").get<double>();
  p.temperature.lr = t.at("lr").get<double>();
  p.temperature.opt = adam_from(t.at("opt"));
  p.actor_opt = adam_from(j.at("actor_opt"));
  p.critic_opt = adam_from(j.at("critic_opt"));
  return p;
}

void save_checkpoint(const ActorCriticParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << checkpoint_to_string(params);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

ActorCriticParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace abpt
