#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "abpt/autodiff.hpp"
#include "abpt/tensor.hpp"

namespace abpt {

using ParamList = std::vector<Tensor>;

// Fully connected network, tanh on hidden layers, linear output.
// params = {W0, b0, W1, b1, ...}; W_l is (sizes[l] x sizes[l+1]), b_l (1 x sizes[l+1]).
struct Mlp {
  std::vector<int> sizes;
  ParamList params;

  // Orthogonal hidden weights with the given gain, zero biases; the output
  // layer is all zeros when zero_output is set.
  static Mlp create(std::vector<int> sizes, std::mt19937_64& rng, double hidden_gain = 1.4142135623730951,
                    bool zero_output = true);

  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
  std::size_t num_parameters() const;
  // Throws std::invalid_argument if layer shapes do not chain.
  void validate() const;
};

// Network parameters placed on a tape.
struct BoundMlp {
  std::vector<int> sizes;
  std::vector<ad::Var> params;

  ad::Var forward(ad::Var x) const;
};

// Leaves are trainable parameters when requires_grad, constants otherwise.
BoundMlp bind(ad::Tape& tape, const Mlp& net, bool requires_grad);
ParamList gradients(const BoundMlp& bound);

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kTanhEpsilon = 1e-6;

struct ActorOutput {
  ad::Var mean;      // pre-squash mean
  ad::Var std;       // per-dimension standard deviation
  ad::Var action;    // tanh(mean + std * eps)
  ad::Var log_prob;  // (B x 1)
  ad::Var entropy;   // -log_prob, single-sample estimate
};

// Actor head outputs [mean | log_std] for each action dimension.
ActorOutput actor_forward(const BoundMlp& actor, ad::Var obs, const Tensor& eps);
// Deterministic action tanh(mean), values only.
Tensor actor_mean_action(const Mlp& actor, const Tensor& obs);

ad::Var critic_q(const BoundMlp& critic, ad::Var obs, ad::Var action);

// Q(s, tanh(mean + std eps)) + kappa * H_hat for one noise sample per row,
// averaged over eps_samples.size() samples.
ad::Var state_value(const BoundMlp& critic, const BoundMlp& actor, double kappa, ad::Var obs,
                    std::span<const Tensor> eps_samples);

// target <- (1 - tau) target + tau source
void soft_update(ParamList& target, const ParamList& source, double tau);

double global_norm(const ParamList& grads);
// Scales grads in place so their global norm is at most max_norm; returns the
// norm before clipping.
double clip_global_norm(ParamList& grads, double max_norm);
bool all_finite(const ParamList& list);
double l2_distance(const ParamList& a, const ParamList& b);

// Adam with L2 weight decay added to the gradient.
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  long step_count = 0;
  ParamList m;
  ParamList v;

  // Descends: params -= lr * update(grads).
  void step(ParamList& params, const ParamList& grads, double lr);
};

// Entropy temperature kappa = exp(log_kappa), tuned towards target entropy.
struct EntropyTemp {
  double log_kappa = std::log(0.2);
  double target_entropy = -4.0;
  double lr = 0.005;
  Adam opt = [] {
    Adam a;
    a.weight_decay = 0.0;
    return a;
  }();

  double kappa() const { return std::exp(log_kappa); }
  // d/dlog_kappa of kappa * (-mean_log_prob - target_entropy).
  double gradient(double mean_log_prob) const;
  // One Adam step on log_kappa; returns the gradient used.
  double update(double mean_log_prob);
};

struct ActorCriticParams {
  Mlp actor;
  std::optional<Mlp> critic;
  std::optional<Mlp> target_critic;
  EntropyTemp temperature;
  Adam actor_opt;
  Adam critic_opt;
  long step = 0;
};

// Versioned JSON checkpoint. Doubles are written in shortest round-trip form,
// so save(load(save(x))) is byte-identical to save(x).
std::string checkpoint_to_string(const ActorCriticParams& params);
ActorCriticParams checkpoint_from_string(const std::string& text);
void save_checkpoint(const ActorCriticParams& params, const std::string& path);
ActorCriticParams load_checkpoint(const std::string& path);

}  // namespace abpt
