// Core autodiff: op-by-op gradient checks against central differences plus
// the layer-level invariants (softmax normalization, layer-norm statistics,
// forward determinism).
#include <doctest.h>

#include <cmath>

#include "gwm/core/gradcheck.hpp"
#include "gwm/core/layers.hpp"
#include "gwm/core/ops.hpp"

using namespace gwm;

namespace {

Tensor<double> rand_t(std::vector<int> shape, Rng& rng) { return randn<double>(std::move(shape), rng, 1.0); }

}  // namespace

TEST_CASE("grad_check on sum of squares matches the exact derivative") {
  Tensor<double> x = Tensor<double>::from_vector({3}, {1.0, 2.0, 3.0});
  double err = grad_check([](const Tensor<double>& t) { return sum(mul(t, t)); }, x, 1e-5);
  CHECK(err < 1e-6);
  // analytic gradient is [2,4,6]
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<double> y = sum(mul(x, x));
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("grad_check on a linear function is exact") {
  Rng rng(7);
  Tensor<double> x = rand_t({4, 3}, rng);
  // power-of-two step keeps the central difference exact for a linear f
  double err = grad_check([](const Tensor<double>& t) { return sum(t); }, x, 0.125);
  CHECK(err < 1e-12);
}

TEST_CASE("grad_check rejects non-finite function values") {
  Tensor<double> x = Tensor<double>::from_vector({1}, {-1.0});
  CHECK_THROWS_WITH_AS(grad_check([](const Tensor<double>& t) { return log_t(t); }, x, 1e-5),
                       "non-finite function value", std::runtime_error);
}

TEST_CASE("elementwise and activation ops pass grad_check") {
  Rng rng(11);
  auto check_op = [&](const char* name, std::function<Tensor<double>(const Tensor<double>&)> f,
                      Tensor<double> x, double tol = 1e-6) {
    INFO(name);
    CHECK(grad_check(f, x, 1e-5) < tol);
  };
  Tensor<double> a = rand_t({5, 4}, rng);
  Tensor<double> other = rand_t({5, 4}, rng);
  Tensor<double> bias = rand_t({4}, rng);
  check_op("add", [&](const Tensor<double>& t) { return sum(mul(add(t, other), other)); }, a);
  check_op("sub", [&](const Tensor<double>& t) { return sum(mul(sub(other, t), other)); }, a);
  check_op("mul", [&](const Tensor<double>& t) { return sum(mul(t, other)); }, a);
  check_op("scale", [&](const Tensor<double>& t) { return sum(scale(t, 2.5)); }, a);
  check_op("add_bias(x)", [&](const Tensor<double>& t) { return sum(mul(add_bias(t, bias), other)); }, a);
  check_op("add_bias(b)", [&](const Tensor<double>& t) { return sum(mul(add_bias(other, t), other)); }, bias);
  check_op("elu", [&](const Tensor<double>& t) { return sum(mul(elu(t), other)); }, a);
  check_op("gelu", [&](const Tensor<double>& t) { return sum(mul(gelu(t), other)); }, a, 1e-5);
  check_op("tanh", [&](const Tensor<double>& t) { return sum(mul(tanh_t(t), other)); }, a);
  check_op("sigmoid", [&](const Tensor<double>& t) { return sum(mul(sigmoid(t), other)); }, a);
  check_op("softplus", [&](const Tensor<double>& t) { return sum(mul(softplus(t), other)); }, a);
  check_op("exp", [&](const Tensor<double>& t) { return sum(mul(exp_t(t), other)); }, a);
  check_op("mean", [&](const Tensor<double>& t) { return mean(mul(t, other)); }, a);
  check_op("mse", [&](const Tensor<double>& t) { return mse(t, other); }, a);
  check_op("softmax", [&](const Tensor<double>& t) { return sum(mul(softmax(t), other)); }, a, 1e-5);
  check_op("reshape", [&](const Tensor<double>& t) { return sum(mul(reshape(t, {4, 5}), reshape(other, {4, 5}))); }, a);
}

TEST_CASE("matmul passes grad_check in all transpose modes") {
  Rng rng(13);
  Tensor<double> a = rand_t({3, 4}, rng);
  Tensor<double> b = rand_t({4, 5}, rng);
  Tensor<double> w = rand_t({3, 5}, rng);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(matmul(t, b), w)); }, a, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(matmul(a, t), w)); }, b, 1e-5) < 1e-6);
  // transposed storage variants
  Tensor<double> at = rand_t({4, 3}, rng);
  Tensor<double> bt = rand_t({5, 4}, rng);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(matmul(t, b, true, false), w)); }, at, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(matmul(a, t, false, true), w)); }, bt, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(matmul(t, bt, true, true), w)); }, at, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(matmul(at, t, true, true), w)); }, bt, 1e-5) < 1e-6);
}

TEST_CASE("bmm passes grad_check") {
  Rng rng(17);
  Tensor<double> a = rand_t({2, 3, 4}, rng);
  Tensor<double> b = rand_t({2, 4, 3}, rng);
  Tensor<double> w = rand_t({2, 3, 3}, rng);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(bmm(t, b), w)); }, a, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(bmm(a, t), w)); }, b, 1e-5) < 1e-6);
  Tensor<double> bt = rand_t({2, 3, 4}, rng);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(bmm(a, t, true), w)); }, bt, 1e-5) < 1e-6);
}

TEST_CASE("token ops pass grad_check") {
  Rng rng(19);
  Tensor<double> x = rand_t({2, 5, 4}, rng);
  Tensor<double> w5 = rand_t({2, 5, 4}, rng);
  std::vector<std::vector<int>> idx = {{0, 2, 4}, {1, 2, 3}};
  Tensor<double> w3 = rand_t({2, 3, 4}, rng);
  Tensor<double> vis = rand_t({2, 3, 4}, rng);
  Tensor<double> tok = rand_t({4}, rng);
  Tensor<double> pooled_w = rand_t({2, 4}, rng);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(gather_tokens(t, idx), w3)); }, x, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(scatter_tokens(t, idx, x), w5)); }, vis, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(scatter_tokens(vis, idx, t), w5)); }, x, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(tile_token(t, 2, 5), w5)); }, tok, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(mean_tokens(t), pooled_w)); }, x, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(tile_pooled(mean_tokens(t), 5), w5)); }, x, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(concat_tokens<double>({t, x}), concat_tokens<double>({w5, w5}))); }, x, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(slice_tokens(t, 1, 4), w3)); }, x, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(split_heads(t, 2), split_heads(w5, 2))); }, x, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(merge_heads(split_heads(t, 2), 2), w5)); }, x, 1e-5) < 1e-6);
  Tensor<double> pe = rand_t({5, 4}, rng);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(add_pos(x, t), w5)); }, pe, 1e-5) < 1e-6);
}

TEST_CASE("layernorm passes grad_check and normalizes per token") {
  Rng rng(23);
  Tensor<double> x = rand_t({3, 8}, rng);
  Tensor<double> gamma = rand_t({8}, rng);
  Tensor<double> beta = rand_t({8}, rng);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(layernorm(t, gamma, beta, 1e-6), x)); }, x, 1e-5) < 1e-5);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(layernorm(x, t, beta, 1e-6), x)); }, gamma, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(layernorm(x, gamma, t, 1e-6)); }, beta, 1e-5) < 1e-6);

  // pre-scale/shift statistics: mean ~ 0, variance ~ 1 per row
  Tensor<float> xf = randn<float>({16, 64}, rng, 3.0f);
  Tensor<float> ones = Tensor<float>::full({64}, 1.0f);
  Tensor<float> zeros = Tensor<float>::zeros({64});
  Tensor<float> norm = layernorm(xf, ones, zeros, 1e-6f);
  for (int r = 0; r < 16; ++r) {
    double mu = 0, var = 0;
    for (int c = 0; c < 64; ++c) mu += norm.data()[r * 64 + c];
    mu /= 64;
    for (int c = 0; c < 64; ++c) {
      double d = norm.data()[r * 64 + c] - mu;
      var += d * d;
    }
    var /= 64;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("softmax rows sum to one within 1e-6") {
  Rng rng(29);
  for (int k : {32, 102, 256}) {
    Tensor<float> x = randn<float>({8, k}, rng, 5.0f);
    Tensor<float> p = softmax(x);
    for (int r = 0; r < 8; ++r) {
      double s = 0;
      for (int c = 0; c < k; ++c) s += p.data()[r * k + c];
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("conv2d passes grad_check and computes known shapes") {
  Rng rng(31);
  ConvSpec spec{3, 3, 2, 1};
  Tensor<double> x = rand_t({2, 6, 8, 3}, rng);
  Tensor<double> w = rand_t({3, 3, 3, 4}, rng);
  Tensor<double> b = rand_t({4}, rng);
  Tensor<double> y = conv2d(x, w, b, spec);
  CHECK(y.shape() == std::vector<int>{2, 3, 4, 4});
  Tensor<double> wy = rand_t({2, 3, 4, 4}, rng);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(conv2d(t, w, b, spec), wy)); }, x, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(conv2d(x, t, b, spec), wy)); }, w, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(conv2d(x, w, t, spec), wy)); }, b, 1e-5) < 1e-6);
}

TEST_CASE("conv2d against a direct naive convolution") {
  Rng rng(37);
  ConvSpec spec{4, 4, 2, 1};
  int B = 1, H = 8, W = 10, C = 2, OC = 3;
  Tensor<float> x = randn<float>({B, H, W, C}, rng);
  Tensor<float> w = randn<float>({4, 4, C, OC}, rng);
  Tensor<float> b = randn<float>({OC}, rng);
  Tensor<float> y = conv2d(x, w, b, spec);
  int OH = conv_out_extent(H, 4, 2, 1), OW = conv_out_extent(W, 4, 2, 1);
  REQUIRE(y.shape() == std::vector<int>{B, OH, OW, OC});
  for (int oy = 0; oy < OH; ++oy)
    for (int ox = 0; ox < OW; ++ox)
      for (int oc = 0; oc < OC; ++oc) {
        double acc = b.data()[oc];
        for (int ky = 0; ky < 4; ++ky)
          for (int kx = 0; kx < 4; ++kx) {
            int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
            for (int c = 0; c < C; ++c)
              acc += x.data()[(iy * W + ix) * C + c] * w.data()[((ky * 4 + kx) * C + c) * OC + oc];
          }
        CHECK(y.data()[(oy * OW + ox) * OC + oc] == doctest::Approx(acc).epsilon(1e-4));
      }
}

TEST_CASE("attention block passes grad_check (2-layer, 4 tokens, dim 8)") {
  Rng rng(41);
  ParameterStore<double> store;
  Rng init = rng.split("init");
  TransformerBlock<double> b0(store, "b0", 8, 2, 2, 1e-6, 0.0, init);
  TransformerBlock<double> b1(store, "b1", 8, 2, 2, 1e-6, 0.0, init);
  Tensor<double> x = rand_t({1, 4, 8}, rng);
  Tensor<double> w = rand_t({1, 4, 8}, rng);
  Rng fwd(0);
  auto f = [&](const Tensor<double>& t) {
    Rng r = fwd;
    return sum(mul(b1.forward(b0.forward(t, r, false), r, false), w));
  };
  CHECK(grad_check(f, x, 1e-5) < 1e-4);

  // through a parameter: pass the live parameter tensor itself, so the graph
  // and the perturbations touch the same node
  Tensor<double> wqkv = store.get("b0/attn/wqkv");
  auto f_param = [&](const Tensor<double>&) {
    Rng r = fwd;
    return sum(mul(b1.forward(b0.forward(x, r, false), r, false), w));
  };
  CHECK(grad_check(f_param, wqkv, 1e-4) < 1e-4);
}

TEST_CASE("GRU cell passes grad_check") {
  Rng rng(43);
  ParameterStore<double> store;
  Rng init = rng.split("init");
  GRUCell<double> cell(store, "gru", 6, 5, init);
  Tensor<double> x = rand_t({3, 6}, rng);
  Tensor<double> h = rand_t({3, 5}, rng);
  Tensor<double> w = rand_t({3, 5}, rng);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(cell.forward(t, h), w)); }, x, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return sum(mul(cell.forward(x, t), w)); }, h, 1e-5) < 1e-6);
}

TEST_CASE("categorical straight-through: forward one-hot, backward softmax") {
  Rng rng(47);
  // near-deterministic distribution
  Tensor<float> logits = Tensor<float>::from_vector({1, 2}, {10.0f, -10.0f});
  int hits = 0;
  for (int i = 0; i < 2000; ++i) {
    Rng r = rng.split(i);
    Tensor<float> s = categorical_sample_st(logits, r);
    CHECK((s.data()[0] == 1.0f || s.data()[1] == 1.0f));
    CHECK(s.data()[0] + s.data()[1] == 1.0f);
    if (s.data()[0] == 1.0f) ++hits;
  }
  CHECK(hits == 2000);  // P(first) > 0.9999

  // empirical frequencies for uniform logits within 3 sigma
  int K = 10, N = 100000;
  Tensor<float> uni = Tensor<float>::zeros({1, K});
  std::vector<int> counts(K, 0);
  Rng r2(12345);
  for (int i = 0; i < N; ++i) {
    Tensor<float> s = categorical_sample_st(uni, r2);
    for (int k = 0; k < K; ++k)
      if (s.data()[k] == 1.0f) ++counts[k];
  }
  double p = 1.0 / K, sigma = std::sqrt(p * (1 - p) * N);
  for (int k = 0; k < K; ++k) CHECK(std::abs(counts[k] - N * p) <= 3 * sigma);

  // straight-through gradient equals the softmax path's gradient
  Rng r3(7);
  Tensor<double> lg = randn<double>({4, 6}, r3);
  Tensor<double> wv = randn<double>({4, 6}, r3);
  lg.set_requires_grad(true);
  lg.zero_grad();
  Rng rs(99);
  sum(mul(categorical_sample_st(lg, rs), wv)).backward();
  auto g_st = lg.grad();
  lg.zero_grad();
  sum(mul(softmax(lg), wv)).backward();
  for (size_t i = 0; i < g_st.size(); ++i) CHECK(std::abs(g_st[i] - lg.grad()[i]) < 1e-6);
}

TEST_CASE("kl_categorical gradient check") {
  Rng rng(53);
  Tensor<double> lp = rand_t({3, 5}, rng);
  Tensor<double> lq = rand_t({3, 5}, rng);
  CHECK(grad_check([&](const Tensor<double>& t) { return mean(kl_categorical(t, lq)); }, lp, 1e-5) < 1e-6);
  CHECK(grad_check([&](const Tensor<double>& t) { return mean(kl_categorical(lp, t)); }, lq, 1e-5) < 1e-6);
}

TEST_CASE("dropout: inverted scaling, disabled in eval mode") {
  Rng rng(59);
  Tensor<float> x = Tensor<float>::full({1000}, 1.0f);
  Rng r = rng.split("drop");
  Tensor<float> y = dropout(x, 0.5, r, true);
  int zeros = 0;
  for (float v : y.data()) {
    CHECK((v == 0.0f || v == 2.0f));
    if (v == 0.0f) ++zeros;
  }
  CHECK(zeros > 400);
  CHECK(zeros < 600);
  Rng r2 = rng.split("drop2");
  Tensor<float> ye = dropout(x, 0.5, r2, false);
  for (size_t i = 0; i < x.data().size(); ++i) CHECK(ye.data()[i] == x.data()[i]);
}

TEST_CASE("forward passes are bit-identical given identical seeds") {
  auto run = [] {
    Rng rng(1234);
    ParameterStore<float> store;
    Rng init = rng.split("init");
    TransformerBlock<float> blk(store, "b", 16, 4, 4, 1e-6f, 0.1, init);
    Tensor<float> x = randn<float>({2, 6, 16}, rng);
    Rng fw = rng.split("fwd");
    return blk.forward(x, fw, true).data();
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("no-grad scope builds no graph") {
  Tensor<float> x = Tensor<float>::from_vector({2}, {1.0f, 2.0f}, true);
  NoGradGuard ng;
  Tensor<float> y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}
