// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gwm/core/layers.hpp"
#include "gwm/core/ops.hpp"
#include "gwm/env/env.hpp"
#include "gwm/model/rssm.hpp"

namespace gwm::model {

// Actor-critic trained purely in latent imagination. The controller is a
// function of LatentState features only; no operation here reads an
// Observation. Actions live in the squashed [-1,1]^2 space; the environment
// mapping is rotation = a0 * r_max, forward = (a1+1)/2 * f_max.
struct AgentConfig {
  int feature_dim = 0;
  int action_dim = 2;
  int layers = 4;
  int units = 400;
  float gamma = 0.99f;
  float lam = 0.95f;
  float entropy_coef = 1e-4f;
  int slow_critic_interval = 100;
  float min_std = 0.1f;
  float max_std = 1.0f;
  float init_std = 0.5f;
  float r_max = 0.5f;
  float f_max = 0.25f;
};

template <typename T>
struct ImaginedTrajectory {
  std::vector<Tensor<T>> features;  // H+1 x (N,F)
  std::vector<Tensor<T>> actions;   // H x (N,A), squashed
  std::vector<Tensor<T>> rewards;   // H x (N,1), reward model on s_{t+1}
  std::vector<Tensor<T>> conts;     // H x (N,1), continuation probability on s_{t+1}
  std::vector<Tensor<T>> values;    // H+1 x (N,1), slow critic
  Tensor<T> entropy;                // scalar, mean policy entropy over the rollout
};

template <typename T>
class Agent {
 public:
  Agent(ParameterStore<T>& actor_store, ParameterStore<T>& critic_store,
        ParameterStore<T>& slow_critic_store, const AgentConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    Rng actor_rng = rng.split("actor");
    Rng critic_rng = rng.split("critic");
    Rng slow_rng = critic_rng;  // identical layout; values synced below
    actor_ = MLP<T>(actor_store, "actor", cfg.feature_dim,
                    std::vector<int>(static_cast<size_t>(cfg.layers), cfg.units), 2 * cfg.action_dim,
                    actor_rng, Init::small_normal);
    critic_ = MLP<T>(critic_store, "critic", cfg.feature_dim,
                     std::vector<int>(static_cast<size_t>(cfg.layers), cfg.units), 1, critic_rng,
                     Init::normal_002);
    slow_critic_ = MLP<T>(slow_critic_store, "critic", cfg.feature_dim,
                          std::vector<int>(static_cast<size_t>(cfg.layers), cfg.units), 1, slow_rng,
                          Init::normal_002);
    slow_critic_store.copy_values_from(critic_store);
    // offset places the initial std at init_std on the bounded sigmoid scale
    double frac = (cfg.init_std - cfg.min_std) / (cfg.max_std - cfg.min_std);
    std_offset_ = static_cast<T>(std::log(frac / (1.0 - frac)));
  }

  const AgentConfig& config() const { return cfg_; }

  struct Policy {
    Tensor<T> mean;  // (N,A) pre-squash
    Tensor<T> std;   // (N,A)
  };

  // std is bounded to (min_std, max_std) through a sigmoid; an unbounded
  // scale would let an entropy bonus inflate it past the tanh-informative
  // region, where pathwise gradients die.
  Policy policy(const Tensor<T>& features) const {
    Tensor<T> out = actor_.forward(features);
    Policy p;
    p.mean = slice_cols(out, 0, cfg_.action_dim);
    Tensor<T> gate = sigmoid(add_scalar(slice_cols(out, cfg_.action_dim, 2 * cfg_.action_dim),
                                        std_offset_));
    p.std = add_scalar(scale(gate, static_cast<T>(cfg_.max_std - cfg_.min_std)),
                       static_cast<T>(cfg_.min_std));
    return p;
  }

  // Reparameterized squashed sample (differentiable through mean and std).
  Tensor<T> sample_action(const Policy& p, Rng& rng) const {
    Tensor<T> eps = randn<T>(p.mean.shape(), rng);
    return tanh_t(add(p.mean, mul(p.std, eps)));
  }

  Tensor<T> mode_action(const Policy& p) const { return tanh_t(p.mean); }

  // Gaussian entropy of the pre-squash distribution, mean over the batch:
  // sum_d log std_d + 0.5*A*log(2*pi*e).
  Tensor<T> entropy(const Policy& p) const {
    T c = static_cast<T>(0.5 * std::log(2.0 * M_PI * M_E) * cfg_.action_dim);
    return add_scalar(scale(mean(log_t(p.std)), static_cast<T>(cfg_.action_dim)), c);
  }

  // Sample-based entropy of the squashed distribution: Gaussian entropy plus
  // the tanh log-determinant at the sample. The correction diverges as the
  // action saturates, which keeps the squashed policy away from the flat
  // tails where pathwise gradients vanish.
  Tensor<T> entropy_squashed(const Policy& p, const Tensor<T>& action) const {
    Tensor<T> logdet = log_t(add_scalar(scale(mul(action, action), T(-1)), T(1) + T(1e-6)));
    return add(entropy(p), scale(mean(logdet), static_cast<T>(cfg_.action_dim)));
  }

  env::Action to_env_action(const T* squashed) const {
    env::Action a;
    a.rotation = static_cast<float>(squashed[0]) * cfg_.r_max;
    a.forward = (static_cast<float>(squashed[1]) + 1.0f) * 0.5f * cfg_.f_max;
    return a;
  }

  // Stored env action -> normalized model action in [-1,1]^2.
  static void normalize_action(const env::Action& a, float r_max, float f_max, T* out) {
    out[0] = static_cast<T>(a.rotation / r_max);
    out[1] = static_cast<T>(2.0f * a.forward / f_max - 1.0f);
  }

  enum class ActMode { explore, eval };

  env::Action act(const Rssm<T>& rssm, const LatentState<T>& state, ActMode mode, Rng& rng) const {
    NoGradGuard ng;
    Tensor<T> feat = rssm.feature(state);
    Policy p = policy(feat);
    Tensor<T> a = mode == ActMode::explore ? sample_action(p, rng) : mode_action(p);
    return to_env_action(a.data().data());
  }

  // Rolls the prior forward H steps from detached start states, sampling
  // actions from the current policy. Gradients flow through the dynamics into
  // the policy; nothing here reads environment observations.
  ImaginedTrajectory<T> imagine_rollout(const Rssm<T>& rssm, const LatentState<T>& start, int H,
                                        Rng& rng) const {
    check(H >= 1, "imagine_rollout: H must be >= 1");
    ImaginedTrajectory<T> traj;
    LatentState<T> state = start;
    Tensor<T> ent_acc = Tensor<T>::scalar(T(0));
    traj.features.push_back(rssm.feature(state));
    traj.values.push_back(slow_critic_.forward(traj.features.back()));
    for (int t = 0; t < H; ++t) {
      Policy p = policy(traj.features.back());
      Tensor<T> action = sample_action(p, rng);
      ent_acc = add(ent_acc, entropy_squashed(p, action));
      state = rssm.imagine(state, action, rng);
      Tensor<T> feat = rssm.feature(state);
      traj.actions.push_back(action);
      traj.features.push_back(feat);
      traj.rewards.push_back(rssm.reward(feat));
      traj.conts.push_back(sigmoid(rssm.cont_logit(feat)));
      traj.values.push_back(slow_critic_.forward(feat));
    }
    traj.entropy = scale(ent_acc, T(1) / static_cast<T>(H));
    return traj;
  }

  // TD(lambda) return targets computed backward over the imagined rollout:
  //   R_t = r_t + gamma*c_t*((1-lambda) V_{t+1} + lambda R_{t+1}),  R_H = V_H.
  // lambda = 1 is the plain discounted sum with terminal value bootstrap.
  std::vector<Tensor<T>> returns(const ImaginedTrajectory<T>& traj, float gamma, float lam) const {
    check(gamma > 0 && gamma <= 1 && lam >= 0 && lam <= 1, "returns: bad gamma/lambda");
    int H = static_cast<int>(traj.actions.size());
    std::vector<Tensor<T>> out(static_cast<size_t>(H));
    Tensor<T> next = traj.values.back();
    for (int t = H - 1; t >= 0; --t) {
      Tensor<T> blend = add(scale(traj.values[static_cast<size_t>(t + 1)], static_cast<T>(1.0f - lam)),
                            scale(next, static_cast<T>(lam)));
      next = add(traj.rewards[static_cast<size_t>(t)],
                 mul(scale(traj.conts[static_cast<size_t>(t)], static_cast<T>(gamma)), blend));
      out[static_cast<size_t>(t)] = next;
    }
    return out;
  }

  struct UpdateLosses {
    Tensor<T> actor_loss;
    Tensor<T> critic_loss;
    double mean_return = 0;
    double mean_entropy = 0;
  };

  // Detached cumulative discount weights w_t = prod_{u<t} gamma*c_u.
  std::vector<Tensor<T>> rollout_weights(const ImaginedTrajectory<T>& traj) const {
    int H = static_cast<int>(traj.actions.size());
    int N = traj.features[0].dim(0);
    std::vector<Tensor<T>> out;
    Tensor<T> weight = Tensor<T>::full({N, 1}, T(1));
    for (int t = 0; t < H; ++t) {
      out.push_back(weight);
      weight = stopgrad(
          mul(weight, scale(traj.conts[static_cast<size_t>(t)], static_cast<T>(cfg_.gamma))));
    }
    return out;
  }

  // Actor maximizes discount-weighted lambda-returns through the dynamics
  // plus an entropy bonus; critic regresses to stop-gradient targets built
  // from the slow critic. Optimizer steps happen in the caller.
  // weights_override, used by gradient checks, substitutes frozen discount
  // weights so the stop-gradient quantities stay at the linearization point.
  UpdateLosses compute_losses(const ImaginedTrajectory<T>& traj,
                              const std::vector<Tensor<T>>* weights_override = nullptr) const {
    int H = static_cast<int>(traj.actions.size());
    std::vector<Tensor<T>> targets = returns(traj, cfg_.gamma, cfg_.lam);
    std::vector<Tensor<T>> weights = weights_override ? *weights_override : rollout_weights(traj);
    Tensor<T> actor_acc = Tensor<T>::scalar(T(0));
    Tensor<T> critic_acc = Tensor<T>::scalar(T(0));
    double ret_acc = 0;
    for (int t = 0; t < H; ++t) {
      const Tensor<T>& w = weights[static_cast<size_t>(t)];
      actor_acc = add(actor_acc, mean(mul(w, targets[static_cast<size_t>(t)])));
      Tensor<T> v = critic_.forward(stopgrad(traj.features[static_cast<size_t>(t)]));
      Tensor<T> err = sub(v, stopgrad(targets[static_cast<size_t>(t)]));
      critic_acc = add(critic_acc, mean(mul(w, mul(err, err))));
      ret_acc += static_cast<double>(mean(targets[static_cast<size_t>(t)]).item());
    }
    UpdateLosses out;
    Tensor<T> inv_h = Tensor<T>::scalar(T(1) / static_cast<T>(H));
    out.actor_loss = sub(Tensor<T>::scalar(T(0)),
                         add(mul(actor_acc, inv_h), scale(traj.entropy, static_cast<T>(cfg_.entropy_coef))));
    out.critic_loss = mul(critic_acc, inv_h);
    out.mean_return = ret_acc / H;
    out.mean_entropy = static_cast<double>(traj.entropy.item());
    return out;
  }

  // Call after every applied critic optimizer step; hard-copies the critic
  // into the slow critic at the configured interval.
  void after_critic_step(ParameterStore<T>& critic_store, ParameterStore<T>& slow_store) {
    ++critic_updates_;
    if (critic_updates_ % cfg_.slow_critic_interval == 0) slow_store.copy_values_from(critic_store);
  }

  int64_t critic_updates() const { return critic_updates_; }
  Tensor<T> critic_value(const Tensor<T>& features) const { return critic_.forward(features); }
  Tensor<T> slow_value(const Tensor<T>& features) const { return slow_critic_.forward(features); }

 private:
  AgentConfig cfg_;
  MLP<T> actor_, critic_, slow_critic_;
  T std_offset_ = T(0);
  int64_t critic_updates_ = 0;
};

}  // namespace gwm::model
