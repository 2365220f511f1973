#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "saccade/ops.hpp"
#include "saccade/optim.hpp"
#include "saccade/params.hpp"

using namespace saccade;

namespace {

Tensor t2(int r, int c, std::vector<float> v) { return Tensor(Shape{r, c}, v); }

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and data length agree, grad mirrors shape") {
    auto t = Tensor::zeros({2, 3, 4}, true);
    CHECK(t.numel() == 24);
    CHECK(shape_numel(t.shape()) == t.numel());
    CHECK_FALSE(t.has_grad());
    sum(t).backward();
    REQUIRE(t.has_grad());
    CHECK(t.grad().size() == t.numel());
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  }

  TEST_CASE("storage is 64-byte aligned") {
    for (int n : {1, 3, 17, 1000}) {
      auto t = Tensor::zeros({n});
      CHECK(reinterpret_cast<std::uintptr_t>(t.data().data()) % 64 == 0);
    }
  }

  TEST_CASE("backward of sum gives ones for any shape") {
    for (Shape s : {Shape{1}, Shape{5}, Shape{2, 3}, Shape{2, 2, 3}}) {
      auto x = Tensor::full(s, 0.5f, true);
      sum(x).backward();
      for (float g : x.grad()) CHECK(g == 1.0f);
    }
  }

  TEST_CASE("backward rejects non-scalars") {
    auto x = Tensor::zeros({3}, true);
    CHECK_THROWS_AS(scale(x, 2.0f).backward(), ShapeError);
  }

  TEST_CASE("two backward calls double the leaf gradients") {
    Rng rng(3);
    auto a = oracle::random64({3, 4}, rng);
    auto b = oracle::random64({4, 2}, rng);
    auto loss = sum(matmul(a, b));
    loss.backward();
    std::vector<double> once(a.grad().begin(), a.grad().end());
    loss.backward();
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(a.grad()[i] == 2.0 * once[i]);
  }

  TEST_CASE("every tracked ancestor receives a gradient") {
    Rng rng(4);
    auto a = oracle::random64({2, 3}, rng);
    auto b = oracle::random64({3, 3}, rng);
    auto c = oracle::random64({3, 1}, rng);
    sum(matmul(matmul(a, b), c)).backward();
    CHECK(a.has_grad());
    CHECK(b.has_grad());
    CHECK(c.has_grad());
  }

  TEST_CASE("NoGradGuard stops recording") {
    auto x = Tensor::full({2}, 1.0f, true);
    Tensor y;
    {
      NoGradGuard guard;
      y = scale(x, 3.0f);
    }
    CHECK(grad_enabled());
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_SUITE("rng") {
  TEST_CASE("same seed, same stream") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 1000; ++i) {
      auto x = a.next_u64();
      CHECK(x == b.next_u64());
      differs = differs || x != c.next_u64();
    }
    CHECK(differs);
  }

  TEST_CASE("uniform_int covers its range evenly") {
    Rng rng(1);
    std::vector<int> hist(7, 0);
    for (int i = 0; i < 70000; ++i) ++hist[rng.uniform_int(0, 6)];
    for (int h : hist) CHECK(std::abs(h - 10000) < 500);
  }

  TEST_CASE("normal has unit variance") {
    Rng rng(2);
    double s = 0, s2 = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      double v = rng.normal();
      s += v;
      s2 += v * v;
    }
    CHECK(std::abs(s / n) < 0.02);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
  }
}

TEST_SUITE("matmul") {
  TEST_CASE("identity and closed-form products") {
    auto id = t2(2, 2, {1, 0, 0, 1});
    auto b = t2(2, 2, {5, 6, 7, 8});
    auto r = matmul(id, b);
    CHECK(std::vector<float>(r.data().begin(), r.data().end()) == std::vector<float>{5, 6, 7, 8});
    auto r2 = matmul(t2(2, 2, {1, 2, 3, 4}), b);
    CHECK(std::vector<float>(r2.data().begin(), r2.data().end()) == std::vector<float>{19, 22, 43, 50});
  }

  TEST_CASE("inner-dimension mismatch is rejected with shapes in the message") {
    try {
      matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
    }
  }

  TEST_CASE("forward matches the naive loop product") {
    Rng rng(5);
    auto a = oracle::random32({7, 5}, rng);
    auto b = oracle::random32({5, 3}, rng);
    auto ref = oracle::matmul(to_double(a.data()), to_double(b.data()), 7, 5, 3);
    auto out = matmul(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
  }

  TEST_CASE("gradients match finite differences over ten seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      double err = oracle::gradient_check({oracle::random64({4, 3}, rng), oracle::random64({3, 2}, rng)},
                                          [](std::vector<Tensor64>& in) { return sum(matmul(in[0], in[1])); });
      CHECK(err < 1e-4);
    }
  }

  TEST_CASE("three-matrix chain gradient") {
    Rng rng(6);
    double err = oracle::gradient_check(
        {oracle::random64({3, 4}, rng), oracle::random64({4, 5}, rng), oracle::random64({5, 2}, rng)},
        [](std::vector<Tensor64>& in) { return sum(matmul(matmul(in[0], in[1]), in[2])); });
    CHECK(err < 1e-4);
  }

  TEST_CASE("bmm gradients for every transpose combination") {
    Rng rng(7);
    for (int ta = 0; ta < 2; ++ta) {
      for (int tb = 0; tb < 2; ++tb) {
        auto a = oracle::random64(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, rng);
        auto b = oracle::random64(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, rng);
        auto w = oracle::random64({2, 3, 5}, rng, -1, 1, false);
        double err = oracle::gradient_check({a, b}, [&](std::vector<Tensor64>& in) {
          return sum(mul(bmm(in[0], in[1], ta != 0, tb != 0), w));
        });
        CHECK(err < 1e-4);
      }
    }
  }

  TEST_CASE("linear equals matmul plus broadcast bias") {
    Rng rng(8);
    auto x = oracle::random64({2, 3, 4}, rng);
    auto w = oracle::random64({4, 5}, rng);
    auto b = oracle::random64({5}, rng);
    auto y = linear(x, w, b);
    auto ref = add(reshape(matmul(reshape(x, Shape{6, 4}), w), Shape{2, 3, 5}), b);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
    double err = oracle::gradient_check({x, w, b}, [](std::vector<Tensor64>& in) {
      return sum(mul(linear(in[0], in[1], in[2]), linear(in[0], in[1], in[2])));
    });
    CHECK(err < 1e-4);
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("symmetric and saturated rows") {
    auto s = softmax(Tensor(Shape{2}, std::vector<float>{0, 0}));
    CHECK(s.data()[0] == doctest::Approx(0.5));
    auto big = softmax(Tensor(Shape{2}, std::vector<float>{1000, 0}));
    CHECK(big.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(big.data()[1] < 1e-6);
    CHECK(std::isfinite(big.data()[0]));
  }

  TEST_CASE("matches a long-double exp/sum reference") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      auto x = oracle::random32({3}, rng, -5, 5);
      auto s = softmax(x);
      long double z = 0;
      for (float v : x.data()) z += std::exp(static_cast<long double>(v));
      for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(s.data()[i] - static_cast<double>(std::exp(static_cast<long double>(x.data()[i])) / z)) < 1e-6);
      }
    }
  }

  TEST_CASE("rows sum to one for magnitudes up to 1e4") {
    Rng rng(10);
    auto x = oracle::random32({50, 17}, rng, -1e4, 1e4);
    auto s = softmax(x);
    for (int r = 0; r < 50; ++r) {
      double total = 0;
      for (int c = 0; c < 17; ++c) {
        CHECK(s.data()[r * 17 + c] >= 0.0f);
        total += s.data()[r * 17 + c];
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }

  TEST_CASE("gradient over ten seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(100 + seed);
      auto w = oracle::random64({3, 6}, rng, -1, 1, false);
      double err = oracle::gradient_check({oracle::random64({3, 6}, rng, -3, 3)},
                                          [&](std::vector<Tensor64>& in) { return sum(mul(softmax(in[0]), w)); });
      CHECK(err < 1e-4);
    }
  }
}

TEST_SUITE("layer_norm") {
  TEST_CASE("constant row maps to zeros, [1,-1] to unit pair") {
    auto g = Tensor::full({4}, 1.0f), b = Tensor::zeros({4});
    auto y = layer_norm(Tensor::full({1, 4}, 3.0f), g, b);
    for (float v : y.data()) CHECK(v == 0.0f);
    auto y2 = layer_norm(Tensor(Shape{1, 2}, std::vector<float>{1, -1}), Tensor::full({2}, 1.0f), Tensor::zeros({2}));
    CHECK(y2.data()[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y2.data()[1] == doctest::Approx(-1.0).epsilon(1e-4));
  }

  TEST_CASE("per-row statistics with epsilon inside the root") {
    Rng rng(11);
    auto x = oracle::random64({3, 5}, rng, -2, 2, false);
    auto y = layer_norm(x, Tensor64::full({5}, 1.0), Tensor64::zeros({5}));
    for (int r = 0; r < 3; ++r) {
      double m = 0, v = 0;
      for (int c = 0; c < 5; ++c) m += x.data()[r * 5 + c];
      m /= 5;
      for (int c = 0; c < 5; ++c) v += (x.data()[r * 5 + c] - m) * (x.data()[r * 5 + c] - m);
      v /= 5;
      for (int c = 0; c < 5; ++c) {
        CHECK(y.data()[r * 5 + c] == doctest::Approx((x.data()[r * 5 + c] - m) / std::sqrt(v + 1e-5)).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("gradient over ten seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(200 + seed);
      auto w = oracle::random64({2, 6}, rng, -1, 1, false);
      double err = oracle::gradient_check(
          {oracle::random64({2, 6}, rng, -2, 2), oracle::random64({6}, rng), oracle::random64({6}, rng)},
          [&](std::vector<Tensor64>& in) { return sum(mul(layer_norm(in[0], in[1], in[2]), w)); });
      CHECK(err < 1e-4);
    }
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("ones through a scalar kernel") {
    auto y = conv2d(Tensor::full({1, 3, 3}, 1.0f), Tensor::full({1, 1, 1, 1}, 2.0f), Tensor{});
    CHECK(y.shape() == Shape{1, 3, 3});
    for (float v : y.data()) CHECK(v == 2.0f);
  }

  TEST_CASE("identity-center kernel with padding reproduces the input") {
    Rng rng(12);
    auto x = oracle::random32({1, 5, 5}, rng);
    std::vector<float> k(9, 0.0f);
    k[4] = 1.0f;
    auto y = conv2d(x, Tensor(Shape{1, 1, 3, 3}, k), Tensor{}, {1, 1});
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
  }

  TEST_CASE("non-integral output size is rejected") {
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 5, 5}), Tensor::zeros({1, 1, 2, 2}), Tensor{}, {2, 0}), ShapeError);
  }

  TEST_CASE("forward and gradients match the six-loop reference") {
    Rng rng(13);
    for (auto [stride, pad] : {std::pair{1, 0}, std::pair{1, 1}, std::pair{2, 1}}) {
      auto x = oracle::random64({2, 5, 5}, rng);
      auto w = oracle::random64({3, 2, 3, 3}, rng);
      auto b = oracle::random64({3}, rng);
      int oh = 0, ow = 0;
      auto ref = oracle::conv2d({x.data().begin(), x.data().end()}, 2, 5, 5, {w.data().begin(), w.data().end()}, 3, 3,
                                3, {b.data().begin(), b.data().end()}, stride, pad, oh, ow);
      auto y = conv2d(x, w, b, {stride, pad});
      REQUIRE(y.shape() == Shape{3, oh, ow});
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.data()[i] - ref[i]) < 1e-5);

      // Gradient oracle: for loss = sum(y * g), dL/dw[o,c,dy,dx] is a plain
      // correlation of g with x, computed here by loops.
      auto g = oracle::random64({3, oh, ow}, rng, -1, 1, false);
      sum(mul(conv2d(x, w, b, {stride, pad}), g)).backward();
      for (int o = 0; o < 3; ++o)
        for (int c = 0; c < 2; ++c)
          for (int dy = 0; dy < 3; ++dy)
            for (int dx = 0; dx < 3; ++dx) {
              double s = 0;
              for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx) {
                  int iy = yy * stride - pad + dy, ix = xx * stride - pad + dx;
                  if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                  s += g.data()[(o * oh + yy) * ow + xx] * x.data()[(c * 5 + iy) * 5 + ix];
                }
              CHECK(std::abs(w.grad()[((o * 2 + c) * 3 + dy) * 3 + dx] - s) < 1e-5);
            }
      std::vector<double> gx(x.numel(), 0.0);
      for (int o = 0; o < 3; ++o)
        for (int yy = 0; yy < oh; ++yy)
          for (int xx = 0; xx < ow; ++xx)
            for (int c = 0; c < 2; ++c)
              for (int dy = 0; dy < 3; ++dy)
                for (int dx = 0; dx < 3; ++dx) {
                  int iy = yy * stride - pad + dy, ix = xx * stride - pad + dx;
                  if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                  gx[(c * 5 + iy) * 5 + ix] +=
                      g.data()[(o * oh + yy) * ow + xx] * w.data()[((o * 2 + c) * 3 + dy) * 3 + dx];
                }
      for (std::size_t i = 0; i < gx.size(); ++i) CHECK(std::abs(x.grad()[i] - gx[i]) < 1e-5);
    }
  }

  TEST_CASE("batched gradient matches finite differences") {
    Rng rng(14);
    auto gw = oracle::random64({2, 3, 3, 3}, rng, -1, 1, false);
    double err = oracle::gradient_check(
        {oracle::random64({2, 2, 5, 5}, rng), oracle::random64({3, 2, 3, 3}, rng), oracle::random64({3}, rng)},
        [&](std::vector<Tensor64>& in) { return sum(mul(conv2d(in[0], in[1], in[2], {2, 1}), gw)); });
    CHECK(err < 1e-4);
  }

  TEST_CASE("global average pooling gradient") {
    Rng rng(15);
    double err = oracle::gradient_check({oracle::random64({2, 3, 4, 4}, rng)}, [](std::vector<Tensor64>& in) {
      auto p = global_avg_pool(in[0]);
      return sum(mul(p, p));
    });
    CHECK(err < 1e-4);
  }
}

TEST_SUITE("losses") {
  TEST_CASE("bce closed forms") {
    auto one = Tensor(Shape{1}, std::vector<float>{1});
    CHECK(bce_with_logits(Tensor(Shape{1}, std::vector<float>{0}), one).item() ==
          doctest::Approx(0.693147).epsilon(1e-6));
    auto sat = bce_with_logits(Tensor(Shape{1}, std::vector<float>{50}), one).item();
    CHECK(sat >= 0.0f);
    CHECK(sat < 1e-12);
    CHECK(std::isfinite(bce_with_logits(Tensor(Shape{1}, std::vector<float>{-1000}), one).item()));
  }

  TEST_CASE("bce matches the 64-bit direct formula, gradient matches FD") {
    Rng rng(16);
    auto z = oracle::random64({8}, rng, -4, 4);
    std::vector<double> y(8);
    for (auto& v : y) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    auto yt = Tensor64(Shape{8}, y);
    double direct = 0;
    for (int i = 0; i < 8; ++i) {
      double s = 1.0 / (1.0 + std::exp(-z.data()[i]));
      direct -= y[i] * std::log(s) + (1 - y[i]) * std::log(1 - s);
    }
    direct /= 8;
    CHECK(std::abs(bce_with_logits(z, yt).item() - direct) < 1e-6);
    auto z32 = saccade::cast<float>(z);
    CHECK(std::abs(bce_with_logits(z32, saccade::cast<float>(yt)).item() - direct) < 1e-6);
    CHECK(oracle::gradient_check({z}, [&](std::vector<Tensor64>& in) { return bce_with_logits(in[0], yt); }) < 1e-4);
    CHECK(oracle::gradient_check({z}, [&](std::vector<Tensor64>& in) { return bce_with_logits(in[0], yt, 3.0); }) <
          1e-4);
  }

  TEST_CASE("cross entropy closed forms and range check") {
    std::vector<int> label{7};
    CHECK(cross_entropy(Tensor::zeros({100}), std::span<const int>(label)).item() ==
          doctest::Approx(std::log(100.0)).epsilon(1e-6));
    std::vector<float> fav(10, 0.0f);
    fav[7] = 50.0f;
    CHECK(cross_entropy(Tensor(Shape{10}, fav), std::span<const int>(label)).item() < 1e-12);
    std::vector<int> bad{10};
    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({10}), std::span<const int>(bad)), std::out_of_range);
  }

  TEST_CASE("cross entropy gradient is softmax minus one-hot") {
    Rng rng(17);
    auto z = oracle::random64({6}, rng, -3, 3);
    std::vector<int> label{2};
    cross_entropy(z, std::span<const int>(label)).backward();
    double zmax = *std::max_element(z.data().begin(), z.data().end()), total = 0;
    for (double v : z.data()) total += std::exp(v - zmax);
    for (int i = 0; i < 6; ++i) {
      double expected = std::exp(z.data()[i] - zmax) / total - (i == 2 ? 1.0 : 0.0);
      CHECK(std::abs(z.grad()[i] - expected) < 1e-6);
    }
    std::vector<int> labels{0, 3, 1};
    CHECK(oracle::gradient_check({oracle::random64({3, 4}, rng, -2, 2)}, [&](std::vector<Tensor64>& in) {
            return cross_entropy(in[0], std::span<const int>(labels));
          }) < 1e-4);
  }
}

TEST_SUITE("elementwise and layout") {
  TEST_CASE("gelu, relu, add broadcast, permute, reshape gradients") {
    Rng rng(18);
    CHECK(oracle::gradient_check({oracle::random64({3, 4}, rng, -3, 3)}, [](std::vector<Tensor64>& in) {
            return sum(mul(gelu(in[0]), in[0]));
          }) < 1e-4);
    CHECK(oracle::gradient_check({oracle::random64({3, 4}, rng, 0.1, 2)}, [](std::vector<Tensor64>& in) {
            return sum(mul(relu(in[0]), in[0]));
          }) < 1e-4);
    CHECK(oracle::gradient_check({oracle::random64({2, 3, 4}, rng), oracle::random64({3, 4}, rng)},
                                 [](std::vector<Tensor64>& in) {
                                   auto s = add(in[0], in[1]);
                                   return sum(mul(s, s));
                                 }) < 1e-4);
    auto w = oracle::random64({4, 2, 3}, rng, -1, 1, false);
    CHECK(oracle::gradient_check({oracle::random64({2, 3, 4}, rng)}, [&](std::vector<Tensor64>& in) {
            return sum(mul(permute(in[0], {2, 0, 1}), w));
          }) < 1e-4);
  }

  TEST_CASE("gelu uses the tanh approximation") {
    const float x = 0.7f;
    const double ref = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
    CHECK(gelu(Tensor(Shape{1}, std::vector<float>{x})).item() == doctest::Approx(ref).epsilon(1e-6));
  }

  TEST_CASE("permute moves elements to the transposed slots") {
    auto x = Tensor(Shape{2, 3}, std::vector<float>{0, 1, 2, 3, 4, 5});
    auto y = permute(x, {1, 0});
    CHECK(y.shape() == Shape{3, 2});
    CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{0, 3, 1, 4, 2, 5});
  }

  TEST_CASE("dropout with p = 0 is the identity and is seed-deterministic otherwise") {
    Rng rng(19), a(5), b(5), z(0);
    auto x = oracle::random32({100}, rng);
    auto same = dropout(x, 0.0, z);
    for (std::size_t i = 0; i < 100; ++i) CHECK(same.data()[i] == x.data()[i]);
    auto d1 = dropout(x, 0.3, a), d2 = dropout(x, 0.3, b);
    for (std::size_t i = 0; i < 100; ++i) CHECK(d1.data()[i] == d2.data()[i]);
  }
}

TEST_SUITE("sequence ops") {
  TEST_CASE("patchify orders patches row-major over the grid") {
    std::vector<float> img(3 * 4 * 4);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) img[(c * 4 + y) * 4 + x] = static_cast<float>(100 * c + 10 * y + x);
    auto p = patchify(Tensor(Shape{3, 4, 4}, img), 2);
    REQUIRE(p.shape() == Shape{4, 12});
    // patch 1 covers grid cell (0, 1): rows 0-1, cols 2-3.
    CHECK(p.data()[1 * 12 + 0] == 2.0f);
    CHECK(p.data()[1 * 12 + 1] == 3.0f);
    CHECK(p.data()[1 * 12 + 2] == 12.0f);
    CHECK(p.data()[1 * 12 + 4] == 102.0f);
    // patch 2 covers (1, 0).
    CHECK(p.data()[2 * 12 + 0] == 20.0f);
    CHECK_THROWS_AS(patchify(Tensor::zeros({3, 5, 5}), 2), ShapeError);
  }

  TEST_CASE("constant image gives identical patch vectors") {
    auto p = patchify(Tensor::full({3, 8, 8}, 0.25f), 4);
    for (int i = 1; i < 4; ++i)
      for (int j = 0; j < 48; ++j) CHECK(p.data()[i * 48 + j] == p.data()[j]);
  }

  TEST_CASE("gather_rows: identity, scatter law, rejection") {
    Rng rng(20);
    auto x = oracle::random64({5, 3}, rng);
    std::vector<int> all{0, 1, 2, 3, 4};
    auto same = gather_rows(x, std::span<const int>(all));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same.data()[i] == x.data()[i]);

    std::vector<int> one{3};
    x.zero_grad();
    sum(gather_rows(x, std::span<const int>(one))).backward();
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c) CHECK(x.grad()[r * 3 + c] == (r == 3 ? 1.0 : 0.0));

    std::vector<int> dup{1, 1}, out{0, 5};
    CHECK_THROWS_AS(gather_rows(x, std::span<const int>(dup)), std::invalid_argument);
    CHECK_THROWS_AS(gather_rows(x, std::span<const int>(out)), std::out_of_range);
  }

  TEST_CASE("gather_rows gradient matches FD, unselected rows get exactly zero") {
    Rng rng(21);
    auto x = oracle::random64({2, 6, 4}, rng);
    std::vector<std::vector<int>> idx{{0, 2, 5}, {1, 3, 4}};
    auto w = oracle::random64({2, 3, 4}, rng, -1, 1, false);
    CHECK(oracle::gradient_check({x}, [&](std::vector<Tensor64>& in) {
            auto g = gather_rows(in[0], idx);
            return sum(mul(mul(g, g), w));
          }) < 1e-4);
    x.zero_grad();
    sum(gather_rows(x, idx)).backward();
    for (int b = 0; b < 2; ++b)
      for (int r = 0; r < 6; ++r) {
        bool chosen = std::find(idx[b].begin(), idx[b].end(), r) != idx[b].end();
        for (int c = 0; c < 4; ++c) CHECK(x.grad()[(b * 6 + r) * 4 + c] == (chosen ? 1.0 : 0.0));
      }
  }

  TEST_CASE("prepend_token and select_token gradients") {
    Rng rng(22);
    auto w = oracle::random64({2, 4, 3}, rng, -1, 1, false);
    CHECK(oracle::gradient_check({oracle::random64({2, 3, 3}, rng), oracle::random64({3}, rng)},
                                 [&](std::vector<Tensor64>& in) {
                                   auto s = prepend_token(in[0], in[1]);
                                   return add(sum(mul(s, w)), sum(mul(select_token(s, 0), select_token(s, 2))));
                                 }) < 1e-4);
  }
}

TEST_SUITE("adam") {
  TEST_CASE("zero gradient leaves parameters unchanged") {
    auto p = Tensor::full({3}, 0.5f, true);
    p.mutable_grad();
    std::vector<Tensor> ps{p};
    AdamState<float> st;
    adam_step(std::span<Tensor>(ps), st);
    for (float v : p.data()) CHECK(v == 0.5f);
    CHECK(st.step == 1);
  }

  TEST_CASE("first step moves each parameter by about lr against the gradient sign") {
    auto p = Tensor(Shape{3}, std::vector<float>{1, 1, 1}, true);
    auto g = p.mutable_grad();
    g[0] = 0.3f;
    g[1] = -2.0f;
    g[2] = 1e-3f;
    std::vector<Tensor> ps{p};
    AdamState<float> st;
    st.lr = 0.01;
    adam_step(std::span<Tensor>(ps), st);
    CHECK(p.data()[0] == doctest::Approx(0.99).epsilon(1e-4));
    CHECK(p.data()[1] == doctest::Approx(1.01).epsilon(1e-4));
    CHECK(p.data()[2] == doctest::Approx(0.99).epsilon(1e-4));
  }

  TEST_CASE("x^2 descent: |x| strictly decreases for five steps") {
    auto x = Tensor(Shape{1}, std::vector<float>{1}, true);
    std::vector<Tensor> ps{x};
    AdamState<float> st;
    st.lr = 0.1;
    float prev = 1.0f;
    for (int i = 0; i < 5; ++i) {
      x.zero_grad();
      sum(mul(x, x)).backward();
      adam_step(std::span<Tensor>(ps), st);
      CHECK(std::abs(x.item()) < prev);
      prev = std::abs(x.item());
    }
  }

  TEST_CASE("shape mismatch against the moment buffers is rejected") {
    auto a = Tensor::full({3}, 1.0f, true);
    a.mutable_grad();
    std::vector<Tensor> ps{a};
    AdamState<float> st;
    adam_step(std::span<Tensor>(ps), st);
    std::vector<Tensor> other{Tensor::full({4}, 1.0f, true)};
    CHECK_THROWS_AS(adam_step(std::span<Tensor>(other), st), ShapeError);
  }
}

TEST_SUITE("determinism") {
  TEST_CASE("identical seed and op sequence give identical data and grads") {
    auto run = [] {
      Rng rng(77);
      auto a = oracle::random32({8, 16}, rng, -1, 1, true);
      auto w = oracle::random32({2, 8, 3, 3}, rng, -1, 1, true);
      auto x = oracle::random32({3, 8, 9, 9}, rng);
      auto y = conv2d(x, w, Tensor{}, {2, 1});
      auto loss = add(sum(mul(y, y)), sum(softmax(matmul(a, reshape(a, Shape{16, 8})))));
      loss.backward();
      std::vector<float> out(y.data().begin(), y.data().end());
      out.insert(out.end(), w.grad().begin(), w.grad().end());
      out.insert(out.end(), a.grad().begin(), a.grad().end());
      return out;
    };
    CHECK(run() == run());
  }
}
