#include <doctest.h>

#include <random>

#include "fmnet/auxnet.hpp"
#include "fmnet/mainnet.hpp"
#include "fmnet/tape.hpp"
#include "helpers.hpp"

using namespace fmnet;
using fmtest::max_grad_rel_err;
using fmtest::rand_tensor;

namespace {

constexpr double kGradTol = 1e-4;

// Brute-force conv3d with explicit six nested loops, independent of the
// tape implementation.
Tensor<double> conv3d_naive(const Tensor<double>& x, const Tensor<double>& k, std::size_t stride,
                            std::size_t pad) {
  const std::size_t tt = x.shape[0], h = x.shape[1], w = x.shape[2], ci = x.shape[3];
  const std::size_t kt = k.shape[0], kh = k.shape[1], kw = k.shape[2], co = k.shape[4];
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  const long tpad = static_cast<long>((kt - 1) / 2);
  Tensor<double> out({tt, ho, wo, co});
  for (std::size_t ot = 0; ot < tt; ++ot)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = 0;
          for (std::size_t dt = 0; dt < kt; ++dt)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx)
                for (std::size_t c = 0; c < ci; ++c) {
                  const long it = static_cast<long>(ot + dt) - tpad;
                  const long iy = static_cast<long>(oy * stride + dy) - static_cast<long>(pad);
                  const long ix = static_cast<long>(ox * stride + dx) - static_cast<long>(pad);
                  if (it < 0 || it >= static_cast<long>(tt) || iy < 0 ||
                      iy >= static_cast<long>(h) || ix < 0 || ix >= static_cast<long>(w))
                    continue;
                  acc += x[((static_cast<std::size_t>(it) * h + iy) * w + ix) * ci + c] *
                         k[(((dt * kh + dy) * kw + dx) * ci + c) * co + o];
                }
          out[((ot * ho + oy) * wo + ox) * co + o] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches a 2D slice of the naive conv3d oracle") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t h = 5 + rep, w = 6, ci = 2, co = 3;
    auto x = rand_tensor({h, w, ci}, rng);
    auto k = rand_tensor({3, 3, ci, co}, rng);
    for (std::size_t stride : {std::size_t(1), std::size_t(2)}) {
      Tape<double> tape;
      auto out = tape.val(tape.conv2d(tape.constant(x), tape.constant(k), stride, 1));
      Tensor<double> x4({1, h, w, ci}, x.data);
      Tensor<double> k5({1, 3, 3, ci, co}, k.data);
      auto ref = conv3d_naive(x4, k5, stride, 1);
      REQUIRE(out.numel() == ref.numel());
      for (std::size_t i = 0; i < out.numel(); ++i)
        CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv3d matches the naive six-loop oracle") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 5; ++rep) {
    auto x = rand_tensor({4, 5, 5, 2}, rng);
    auto k = rand_tensor({3, 3, 3, 2, 3}, rng);
    Tape<double> tape;
    auto out = tape.val(tape.conv3d(tape.constant(x), tape.constant(k), 1, 1));
    auto ref = conv3d_naive(x, k, 1, 1);
    REQUIRE(out.shape == ref.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
      CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv3d temporal axis: stride 1 and (kt-1)/2 zero padding preserve length") {
  std::mt19937_64 rng(13);
  auto x = rand_tensor({7, 4, 4, 2}, rng);
  auto k = rand_tensor({5, 3, 3, 2, 2}, rng);
  Tape<double> tape;
  const auto& out = tape.val(tape.conv3d(tape.constant(x), tape.constant(k), 1, 1));
  CHECK(out.shape[0] == 7);
  Tape<double> t2;
  auto keven = rand_tensor({2, 3, 3, 2, 2}, rng);
  CHECK_THROWS_AS(t2.conv3d(t2.constant(x), t2.constant(keven), 1, 1), ConfigError);
}

TEST_CASE("gradient check: conv2d and conv3d") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    ParamStore<double> ps;
    ps.add("x", rand_tensor({5, 5, 2}, rng));
    ps.add("k", rand_tensor({3, 3, 2, 2}, rng));
    const std::size_t stride = rep % 2 + 1;
    CHECK(max_grad_rel_err(ps, [stride](Tape<double>& t, const fmtest::RefMap& r) {
            return t.sum(t.mul(t.conv2d(r.at("x"), r.at("k"), stride, 1),
                               t.conv2d(r.at("x"), r.at("k"), stride, 1)));
          }) < kGradTol);
  }
  for (int rep = 0; rep < 5; ++rep) {
    ParamStore<double> ps;
    ps.add("x", rand_tensor({3, 4, 4, 2}, rng));
    ps.add("k", rand_tensor({3, 3, 3, 2, 2}, rng));
    CHECK(max_grad_rel_err(ps, [](Tape<double>& t, const fmtest::RefMap& r) {
            auto y = t.conv3d(r.at("x"), r.at("k"), 2, 1);
            return t.sum(t.mul(y, y));
          }) < kGradTol);
  }
}

TEST_CASE("gradient check: dense, nonlinearities, elementwise ops") {
  std::mt19937_64 rng(22);
  for (int rep = 0; rep < 5; ++rep) {
    ParamStore<double> ps;
    ps.add("x", rand_tensor({6}, rng));
    ps.add("w", rand_tensor({6, 4}, rng));
    ps.add("b", rand_tensor({4}, rng));
    ps.add("y", rand_tensor({4}, rng));
    CHECK(max_grad_rel_err(ps, [](Tape<double>& t, const fmtest::RefMap& r) {
            auto h = t.tanh_(t.dense(r.at("x"), r.at("w"), r.at("b")));
            auto s = t.sigmoid(t.mul(h, r.at("y")));
            auto rl = t.relu(t.add(s, r.at("y")));
            return t.sum(t.scale(rl, 0.7));
          }) < kGradTol);
  }
}

TEST_CASE("gradient check: pooling, resample, reductions, concat/row/flatten") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 5; ++rep) {
    ParamStore<double> ps;
    ps.add("x", rand_tensor({2, 4, 4, 4}, rng));
    CHECK(max_grad_rel_err(ps, [](Tape<double>& t, const fmtest::RefMap& r) {
            auto p = t.spatial_avg_pool(r.at("x"), 2);
            auto m = t.time_mean(p);
            auto cp = t.avg_pool_channels(m, 2);
            auto rs = t.resample(cp, 3, 5, ResampleMode::Bilinear);
            auto g = t.global_spatial_mean(r.at("x"));
            auto row0 = t.row(g, 0);
            auto v = t.concat(t.flatten(rs), row0);
            return t.mse(v, t.constant(Tensor<double>({t.val(v).numel()})));
          }) < kGradTol);
  }
}

TEST_CASE("gradient check: mse and sum") {
  std::mt19937_64 rng(24);
  for (int rep = 0; rep < 5; ++rep) {
    ParamStore<double> ps;
    ps.add("a", rand_tensor({7}, rng));
    ps.add("b", rand_tensor({7}, rng));
    CHECK(max_grad_rel_err(ps, [](Tape<double>& t, const fmtest::RefMap& r) {
            return t.add(t.mse(r.at("a"), r.at("b")), t.scale(t.sum(r.at("a")), 0.1));
          }) < kGradTol);
  }
}

TEST_CASE("gradient check: LSTM step") {
  std::mt19937_64 rng(25);
  for (int rep = 0; rep < 5; ++rep) {
    ParamStore<double> ps;
    const std::size_t in = 5, hid = 3;
    for (const char* g : {"i", "f", "g", "o"}) {
      ps.add(std::string("lstm.wx") + g, rand_tensor({in, hid}, rng));
      ps.add(std::string("lstm.wh") + g, rand_tensor({hid, hid}, rng));
      ps.add(std::string("lstm.b") + g, rand_tensor({hid}, rng));
    }
    ps.add("x", rand_tensor({in}, rng));
    ps.add("h", rand_tensor({hid}, rng));
    ps.add("c", rand_tensor({hid}, rng));
    CHECK(max_grad_rel_err(ps, [](Tape<double>& t, const fmtest::RefMap& r) {
            auto [h2, c2] = MainNet<double>::lstm_step(t, r, r.at("x"), r.at("h"), r.at("c"));
            return t.sum(t.mul(h2, c2));
          }) < kGradTol);
  }
}

TEST_CASE("LSTM step matches a scalar reference implementation") {
  // hid = 1, in = 1: everything is scalar arithmetic.
  std::mt19937_64 rng(26);
  std::uniform_real_distribution<double> d(-1, 1);
  for (int rep = 0; rep < 5; ++rep) {
    ParamStore<double> ps;
    std::map<std::string, double> sc;
    for (const char* g : {"i", "f", "g", "o"}) {
      for (const char* part : {"wx", "wh", "b"}) {
        const double v = d(rng);
        sc[std::string(part) + g] = v;
        Shape shape = std::string(part) == "b" ? Shape{1} : Shape{1, 1};
        ps.add(std::string("lstm.") + part + g, Tensor<double>(shape, std::vector<double>{v}));
      }
    }
    const double x = d(rng), h = d(rng), c = d(rng);
    ps.add("x", Tensor<double>({1}, std::vector<double>{x}));
    ps.add("h", Tensor<double>({1}, std::vector<double>{h}));
    ps.add("c", Tensor<double>({1}, std::vector<double>{c}));
    Tape<double> t;
    fmtest::RefMap r;
    for (const auto& [name, tt] : ps.params) r.emplace(name, t.param(name, tt));
    auto [h2, c2] = MainNet<double>::lstm_step(t, r, r.at("x"), r.at("h"), r.at("c"));
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    auto gate = [&](const char* g) { return sc["wx" + std::string(g)] * x + sc["wh" + std::string(g)] * h + sc["b" + std::string(g)]; };
    const double ig = sig(gate("i")), fg = sig(gate("f")), gg = std::tanh(gate("g")),
                 og = sig(gate("o"));
    const double c_ref = fg * c + ig * gg;
    const double h_ref = og * std::tanh(c_ref);
    CHECK(t.scalar(c2) == doctest::Approx(c_ref).epsilon(1e-12));
    CHECK(t.scalar(h2) == doctest::Approx(h_ref).epsilon(1e-12));
  }
}

TEST_CASE("resample identity and mean preservation") {
  std::mt19937_64 rng(27);
  auto x = rand_tensor({6, 7, 3}, rng);
  Tape<double> t;
  const auto& same = t.val(t.resample(t.constant(x), 6, 7, ResampleMode::Bilinear));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same[i] == x[i]);  // bit-exact identity

  // channel-group pooling preserves the per-group mean
  auto y = rand_tensor({4, 4, 6}, rng);
  Tape<double> t2;
  const auto& pooled = t2.val(t2.avg_pool_channels(t2.constant(y), 3));
  CHECK(pooled.shape == Shape{4, 4, 2});
  double mean_in = 0, mean_out = 0;
  for (double v : y.data) mean_in += v;
  for (double v : pooled.data) mean_out += v;
  CHECK(mean_out * 3 == doctest::Approx(mean_in).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar loss and zeroes stale gradients") {
  Tape<double> t;
  auto p = t.param("p", Tensor<double>({3}, std::vector<double>{1, 2, 3}));
  CHECK_THROWS_AS(t.backward(p), UsageError);
  auto loss = t.mse(p, t.constant(Tensor<double>({3})));
  auto g1 = t.backward(loss);
  auto g2 = t.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g1.at("p")[i] == g2.at("p")[i]);
}

TEST_CASE("duplicate parameter registration on one tape throws") {
  Tape<double> t;
  t.param("p", Tensor<double>({1}));
  CHECK_THROWS_AS(t.param("p", Tensor<double>({1})), ConfigError);
}
