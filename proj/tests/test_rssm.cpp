// Recurrent state-space model: posterior/prior structure, categorical KL
// oracles, sequence loss and rollout stability.
#include <doctest.h>

#include <cmath>

#include "gwm/model/rssm.hpp"

using namespace gwm;
using namespace gwm::model;

namespace {

RssmConfig mini_cfg() {
  RssmConfig cfg;
  cfg.deter = 16;
  cfg.stoch_dims = 4;
  cfg.stoch_classes = 4;
  cfg.hidden = 16;
  cfg.embed_dim = 8;
  cfg.head_layers = 2;
  cfg.head_units = 16;
  return cfg;
}

}  // namespace

TEST_CASE("paper-scale dimensions: deter 1024, stoch 32x32 flattens to 1024") {
  RssmConfig cfg;  // defaults are paper scale
  CHECK(cfg.deter == 1024);
  CHECK(cfg.stoch_flat() == 1024);
  CHECK(cfg.feature_dim() == 2048);
  ParameterStore<float> store;
  Rng rng(1);
  Rssm<float> rssm(store, "rssm", cfg, rng);
  LatentState<float> s = rssm.initial(2);
  Rng fwd(2);
  Tensor<float> action = Tensor<float>::zeros({2, 2});
  Tensor<float> embed = randn<float>({2, 256}, fwd, 0.5f);
  auto out = rssm.observe(s, action, embed, fwd);
  CHECK(out.posterior.deter.shape() == std::vector<int>{2, 1024});
  CHECK(out.posterior.stoch.shape() == std::vector<int>{2, 1024});
  CHECK(out.prior.logits.shape() == std::vector<int>{2, 1024});
  // every one of the 32 blocks is exactly one-hot
  for (int b = 0; b < 2; ++b)
    for (int k = 0; k < 32; ++k) {
      float sum = 0;
      for (int c = 0; c < 32; ++c)
        sum += out.posterior.stoch.data()[static_cast<size_t>(b) * 1024 + k * 32 + c];
      CHECK(sum == 1.0f);
    }
}

TEST_CASE("posterior reduces to the prior when the embed path is zeroed") {
  RssmConfig cfg = mini_cfg();
  ParameterStore<float> store;
  Rng rng(3);
  Rssm<float> rssm(store, "rssm", cfg, rng);
  // overwrite the posterior MLP so the deter slice mirrors the prior MLP and
  // the embed slice is zero
  Tensor<float> prior_w0 = store.get("rssm/prior/h0/w");
  Tensor<float> post_w0 = store.get("rssm/posterior/h0/w");
  std::fill(post_w0.data().begin(), post_w0.data().end(), 0.0f);
  for (int r = 0; r < cfg.deter; ++r)
    for (int c = 0; c < cfg.hidden; ++c)
      post_w0.data()[static_cast<size_t>(r) * cfg.hidden + c] =
          prior_w0.data()[static_cast<size_t>(r) * cfg.hidden + c];
  store.get("rssm/posterior/h0/b").data() = store.get("rssm/prior/h0/b").data();
  store.get("rssm/posterior/out/w").data() = store.get("rssm/prior/out/w").data();
  store.get("rssm/posterior/out/b").data() = store.get("rssm/prior/out/b").data();

  Rng fwd(5);
  LatentState<float> s = rssm.initial(3);
  Tensor<float> action = randn<float>({3, 2}, fwd, 0.3f);
  Tensor<float> embed = randn<float>({3, cfg.embed_dim}, fwd, 1.0f);
  auto out = rssm.observe(s, action, embed, fwd);
  for (size_t i = 0; i < out.posterior.logits.data().size(); ++i)
    CHECK(out.posterior.logits.data()[i] ==
          doctest::Approx(out.prior.logits.data()[i]).epsilon(1e-6));
}

TEST_CASE("observe and imagine share the prior branch") {
  RssmConfig cfg = mini_cfg();
  ParameterStore<float> store;
  Rng rng(7);
  Rssm<float> rssm(store, "rssm", cfg, rng);
  Rng fwd(11);
  LatentState<float> s = rssm.initial(2);
  Tensor<float> action = randn<float>({2, 2}, fwd, 0.3f);
  Tensor<float> embed = randn<float>({2, cfg.embed_dim}, fwd, 1.0f);
  Rng r1(13), r2(13);
  auto obs = rssm.observe(s, action, embed, r1);
  LatentState<float> prior_only = rssm.imagine(s, action, r2);
  CHECK(obs.prior.logits.data() == prior_only.logits.data());
}

TEST_CASE("chained imagination: H steps produce H states; argmax mode is deterministic") {
  RssmConfig cfg = mini_cfg();
  ParameterStore<float> store;
  Rng rng(17);
  Rssm<float> rssm(store, "rssm", cfg, rng);
  Rng fwd(19);
  LatentState<float> s = rssm.initial(1);
  std::vector<LatentState<float>> states;
  for (int t = 0; t < 15; ++t) {
    Tensor<float> a = randn<float>({1, 2}, fwd, 0.5f);
    s = rssm.imagine(s, a, fwd);
    states.push_back(s);
  }
  CHECK(states.size() == 15);

  LatentState<float> m1 = rssm.imagine_mode(states[3], Tensor<float>::zeros({1, 2}));
  LatentState<float> m2 = rssm.imagine_mode(states[3], Tensor<float>::zeros({1, 2}));
  CHECK(m1.stoch.data() == m2.stoch.data());
}

TEST_CASE("kl_term oracles: zero, ln(K) concentration, non-negativity") {
  RssmConfig cfg;
  cfg.deter = 8;
  cfg.stoch_dims = 32;
  cfg.stoch_classes = 32;
  cfg.hidden = 8;
  cfg.embed_dim = 4;
  cfg.head_layers = 1;
  cfg.head_units = 8;
  ParameterStore<float> store;
  Rng rng(23);
  Rssm<float> rssm(store, "rssm", cfg, rng);

  SUBCASE("identical logits give zero within 1e-9") {
    Rng fwd(29);
    Tensor<float> logits = randn<float>({2, cfg.stoch_flat()}, fwd, 2.0f);
    LatentState<float> p, q;
    p.logits = logits;
    q.logits = logits;
    CHECK(std::abs(rssm.kl_term(p, q).item()) < 1e-9);
  }

  SUBCASE("one-hot-concentrated posterior vs uniform prior: ln 32 per categorical") {
    Tensor<float> post = Tensor<float>::zeros({1, cfg.stoch_flat()});
    for (int k = 0; k < 32; ++k) post.data()[static_cast<size_t>(k) * 32] = 40.0f;
    Tensor<float> prior = Tensor<float>::zeros({1, cfg.stoch_flat()});
    LatentState<float> p, q;
    p.logits = post;
    q.logits = prior;
    double per_cat = rssm.kl_term(p, q).item() / 32.0;
    CHECK(std::abs(per_cat - std::log(32.0)) < 1e-4);
  }

  SUBCASE("KL >= 0 over 10^4 random pairs") {
    Rng fwd(31);
    for (int i = 0; i < 100; ++i) {
      Tensor<float> a = randn<float>({100, 32}, fwd, 3.0f);
      Tensor<float> b = randn<float>({100, 32}, fwd, 3.0f);
      Tensor<float> rows = kl_categorical(a, b);
      for (float v : rows.data()) CHECK(v >= -1e-6f);
    }
  }
}

TEST_CASE("wm_loss: beta scaling is exactly linear and components add up") {
  RssmConfig cfg = mini_cfg();
  ParameterStore<float> store;
  Rng rng(37);
  Rssm<float> rssm(store, "rssm", cfg, rng);
  Rng fwd(41);
  LatentState<float> s = rssm.initial(4);
  std::vector<LatentState<float>> posts, priors;
  std::vector<Tensor<float>> rewards, conts;
  for (int t = 0; t < 3; ++t) {
    Tensor<float> a = randn<float>({4, 2}, fwd, 0.3f);
    Tensor<float> e = randn<float>({4, cfg.embed_dim}, fwd, 1.0f);
    auto out = rssm.observe(s, a, e, fwd);
    s = out.posterior;
    posts.push_back(out.posterior);
    priors.push_back(out.prior);
    rewards.push_back(randn<float>({4, 1}, fwd, 1.0f));
    conts.push_back(Tensor<float>::full({4, 1}, 1.0f));
  }
  std::vector<Tensor<float>> embed_targets;
  for (int t = 0; t < 3; ++t) embed_targets.push_back(randn<float>({4, cfg.embed_dim}, fwd, 0.5f));
  auto l0 = rssm.wm_loss(posts, priors, rewards, conts, 0.0f, &embed_targets);
  auto l1 = rssm.wm_loss(posts, priors, rewards, conts, 1.0f, &embed_targets);
  auto l2 = rssm.wm_loss(posts, priors, rewards, conts, 2.0f, &embed_targets);
  double kl1 = l1.total.item() - l0.total.item();
  double kl2 = l2.total.item() - l0.total.item();
  CHECK(kl2 == doctest::Approx(2.0 * kl1).epsilon(1e-4));
  CHECK(l0.total.item() == doctest::Approx(l0.reward_mse + l0.cont_bce + l0.embed_mse).epsilon(1e-5));
  CHECK(l1.total.item() ==
        doctest::Approx(l1.reward_mse + l1.cont_bce + l1.embed_mse + l1.kl).epsilon(1e-5));
}

TEST_CASE("50-step rollouts keep logits finite (stability smoke)") {
  RssmConfig cfg = mini_cfg();
  ParameterStore<float> store;
  Rng rng(43);
  Rssm<float> rssm(store, "rssm", cfg, rng);
  Rng fwd(47);
  for (int trial = 0; trial < 100; ++trial) {
    LatentState<float> s = rssm.initial(1);
    for (int t = 0; t < 50; ++t) {
      Tensor<float> a = randn<float>({1, 2}, fwd, 1.0f);
      if (t % 2 == 0) {
        Tensor<float> e = randn<float>({1, cfg.embed_dim}, fwd, 2.0f);
        s = rssm.observe(s, a, e, fwd).posterior;
      } else {
        s = rssm.imagine(s, a, fwd);
      }
      CHECK(all_finite(s.logits));
      CHECK(all_finite(s.deter));
    }
  }
}
