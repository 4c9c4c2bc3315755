// Adam with global-norm clipping: hand-computed first step, clipping
// arithmetic, the no-op and non-finite paths, checkpoint round trips.
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "gwm/core/checkpoint.hpp"
#include "gwm/core/params.hpp"

using namespace gwm;

TEST_CASE("adam first step on a scalar parameter is ~ -lr") {
  ParameterStore<float> store;
  Rng rng(1);
  Tensor<float> p = store.param("w", {1}, Init::zeros, rng);
  TVec<float> g = {1.0f};
  AdamOpts opts;
  opts.lr = 1e-4;
  opts.eps = 1e-5;
  opts.clip = 100.0;
  CHECK(adam_step<float>(store, {{"w", &g}}, opts) == AdamStatus::ok);
  // bias-corrected m_hat = v_hat = 1 => step = lr / (1 + eps)
  CHECK(p.data()[0] == doctest::Approx(-1e-4).epsilon(1e-3));
  CHECK(store.step_counter() == 1);
}

TEST_CASE("global norm clipping scales gradients to clip/norm") {
  ParameterStore<float> store;
  Rng rng(1);
  store.param("a", {3}, Init::zeros, rng);
  store.param("b", {4}, Init::zeros, rng);
  // global norm = sqrt(9*150^2/...) -- construct norm 250: 7 entries
  // with values v so that sqrt(7 v^2)=250 -> v = 250/sqrt(7)
  float v = 250.0f / std::sqrt(7.0f);
  TVec<float> ga(3, v), gb(4, v);
  AdamOpts opts;
  opts.clip = 100.0;
  opts.beta1 = 0.0;  // makes m == g, so the clip factor is directly visible
  opts.beta2 = 0.0;
  opts.lr = 1.0;
  opts.eps = 0.0;
  CHECK(adam_step<float>(store, {{"a", &ga}, {"b", &gb}}, opts) == AdamStatus::ok);
  // with beta1=beta2=0: step = lr * g_clipped / |g_clipped| = sign; instead
  // verify via the stored first moment which equals the clipped gradient
  float expect = v * 0.4f;  // 100/250
  CHECK(store.opt_state()["a"].m[0] == doctest::Approx(expect).epsilon(1e-5));
  CHECK(store.opt_state()["b"].m[3] == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("empty grads map leaves the store untouched") {
  ParameterStore<float> store;
  Rng rng(1);
  Tensor<float> p = store.param("w", {2}, Init::ones, rng);
  AdamOpts opts;
  CHECK(adam_step<float>(store, {}, opts) == AdamStatus::ok);
  CHECK(p.data()[0] == 1.0f);
  CHECK(store.step_counter() == 0);
}

TEST_CASE("non-finite gradient aborts the update") {
  ParameterStore<float> store;
  Rng rng(1);
  Tensor<float> p = store.param("w", {2}, Init::ones, rng);
  TVec<float> g = {1.0f, std::numeric_limits<float>::quiet_NaN()};
  AdamOpts opts;
  CHECK(adam_step<float>(store, {{"w", &g}}, opts) == AdamStatus::non_finite_gradient);
  CHECK(p.data()[0] == 1.0f);
  CHECK(p.data()[1] == 1.0f);
  CHECK(store.step_counter() == 0);
}

TEST_CASE("adam converges on a quadratic") {
  ParameterStore<float> store;
  Rng rng(5);
  Tensor<float> p = store.param("w", {4}, Init::he, rng);
  AdamOpts opts;
  opts.lr = 0.05;
  for (int i = 0; i < 400; ++i) {
    TVec<float> g(4);
    for (int j = 0; j < 4; ++j) g[j] = 2.0f * (p.data()[j] - 3.0f);
    adam_step<float>(store, {{"w", &g}}, opts);
  }
  for (int j = 0; j < 4; ++j) CHECK(p.data()[j] == doctest::Approx(3.0f).epsilon(1e-2));
}

TEST_CASE("checkpoint round trip preserves params, moments and counters") {
  std::string path = "/tmp/gwm_test_ckpt.bin";
  Checkpoint out;
  out.fingerprint = 0xdeadbeefcafe1234ULL;
  out.meta["mask_fill_r"] = 0.43;
  {
    ParameterStore<float>& s = out.groups["mae"];
    Rng rng(3);
    s.param("enc/w", {3, 4}, Init::he, rng);
    s.param("enc/b", {4}, Init::normal_002, rng);
    s.step_counter() = 77;
    auto& st = s.opt_state()["enc/w"];
    st.m.assign(12, 0.5f);
    st.v.assign(12, 0.25f);
  }
  out.save(path);

  Checkpoint in = Checkpoint::load(path);
  CHECK(in.fingerprint == out.fingerprint);
  CHECK(in.meta.at("mask_fill_r") == doctest::Approx(0.43));
  ParameterStore<float> dst;
  Rng rng(3);
  dst.param("enc/w", {3, 4}, Init::he, rng);
  dst.param("enc/b", {4}, Init::normal_002, rng);
  // perturb, then restore
  dst.get("enc/w").data()[0] = 42.0f;
  in.restore_group("mae", dst);
  CHECK(dst.get("enc/w").data()[0] == out.groups["mae"].get("enc/w").data()[0]);
  CHECK(dst.step_counter() == 77);
  CHECK(dst.opt_state()["enc/w"].v[5] == 0.25f);
  std::remove(path.c_str());
}

TEST_CASE("restore_group rejects checkpoints with mismatched shapes") {
  Checkpoint out;
  {
    ParameterStore<float>& s = out.groups["g"];
    Rng rng(3);
    s.param("w", {2, 2}, Init::he, rng);
  }
  ParameterStore<float> dst;
  Rng rng(3);
  dst.param("w", {3, 2}, Init::he, rng);
  CHECK_THROWS(out.restore_group("g", dst));
}
