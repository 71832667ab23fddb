#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "exdiff/error.hpp"
#include "exdiff/scorenet.hpp"
#include "gradcheck.hpp"

using namespace exdiff;
using namespace exdiff::nnet;
using exdiff::testing::random_tensor;

namespace {

ScoreNetSpec small_spec(FusionVariant v, std::uint64_t seed = 1) {
  ScoreNetSpec s;
  s.n_levels = 2;
  s.base_channels = 8;
  s.channel_multipliers = {1, 2};
  s.attn_dim = 16;
  s.time_embed_dim = 16;
  s.latent_dim = 12;
  s.fusion = v;
  s.init_seed = seed;
  return s;
}

Tensor<double> random_latent(std::size_t B, std::size_t n, std::size_t H, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor({B, n, H}, rng);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (auto v : all_fusion_variants()) CHECK(fusion_variant_from_string(to_string(v)) == v);
  CHECK(all_fusion_variants().size() == 4);
  CHECK_THROWS_AS(fusion_variant_from_string("bottleneck"), InvalidArgument);
  CHECK(latent_token_mode_from_string("pooled") == LatentTokenMode::Pooled);
}

TEST_CASE("forward produces (B, 2, F, T) for every variant") {
  Rng rng(3);
  for (auto v : all_fusion_variants()) {
    const std::string variant = to_string(v);
    CAPTURE(variant);
    ScoreNet<double> net(small_spec(v), OuveSchedule{});
    const auto out = net.forward(constant(random_tensor({2, 4, 8, 12}, rng)), {0.3, 0.9},
                                 constant(random_latent(2, 5, 12, 4)));
    CHECK(out.shape() == Shape{2, 2, 8, 12});
    for (auto x : out.value().values()) CHECK(std::isfinite(x));
  }
}

TEST_CASE("indivisible grids and wrong latent widths are rejected") {
  ScoreNet<double> net(small_spec(FusionVariant::BottleneckCrossAttn), OuveSchedule{});
  Rng rng(4);
  CHECK_THROWS_AS(net.forward(constant(random_tensor({1, 4, 7, 8}, rng)), {0.5}, constant(random_latent(1, 2, 12, 1))),
                  ShapeError);
  CHECK_THROWS_AS(net.forward(constant(random_tensor({1, 4, 8, 8}, rng)), {0.5}, constant(random_latent(1, 2, 11, 1))),
                  ShapeError);
  CHECK_THROWS_AS(small_spec(FusionVariant::BottleneckCrossAttn).validate_grid(10, 7), ShapeError);
}

TEST_CASE("distinct latents change the output of every variant") {
  Rng rng(5);
  const auto x = random_tensor({1, 4, 8, 8}, rng);
  for (auto v : all_fusion_variants()) {
    const std::string variant = to_string(v);
    CAPTURE(variant);
    ScoreNet<double> net(small_spec(v), OuveSchedule{});
    const auto a = net.forward(constant(x), {0.5}, constant(random_latent(1, 3, 12, 1))).value();
    const auto b = net.forward(constant(x), {0.5}, constant(random_latent(1, 3, 12, 2))).value();
    CHECK(max_abs_diff(a, b) > 1e-8);
  }
}

TEST_CASE("token permutation leaves bottleneck attention unchanged without positional encoding") {
  auto spec = small_spec(FusionVariant::BottleneckCrossAttn);
  spec.positional_encoding = false;
  ScoreNet<double> net(spec, OuveSchedule{});
  Rng rng(6);
  const auto h = random_tensor({1, 16, 4, 4}, rng);
  const auto lat = random_latent(1, 5, 12, 9);
  Tensor<double> perm({1, 5, 12});
  const std::size_t order[5] = {3, 0, 4, 1, 2};
  for (std::size_t r = 0; r < 5; ++r) std::copy_n(lat.data() + order[r] * 12, 12, perm.data() + r * 12);
  const auto a = net.fuse_bottleneck(constant(h), net.project_latent(constant(lat))).value();
  const auto b = net.fuse_bottleneck(constant(h), net.project_latent(constant(perm))).value();
  CHECK(max_abs_diff(a, b) < 1e-12);
  // With positional encoding the order matters.
  auto spec_pe = spec;
  spec_pe.positional_encoding = true;
  ScoreNet<double> pe_net(spec_pe, OuveSchedule{});
  const auto c = pe_net.fuse_bottleneck(constant(h), pe_net.project_latent(constant(lat))).value();
  const auto d = pe_net.fuse_bottleneck(constant(h), pe_net.project_latent(constant(perm))).value();
  CHECK(max_abs_diff(c, d) > 1e-8);
}

TEST_CASE("a single latent token adds the same residual at every position") {
  ScoreNet<double> net(small_spec(FusionVariant::BottleneckCrossAttn), OuveSchedule{});
  Rng rng(7);
  const auto h = random_tensor({1, 16, 4, 4}, rng);
  const auto out = net.fuse_bottleneck(constant(h), net.project_latent(constant(random_latent(1, 1, 12, 3)))).value();
  for (std::size_t c = 0; c < 16; ++c) {
    const double r0 = out[c * 16] - h[c * 16];
    for (std::size_t i = 1; i < 16; ++i) CHECK(std::abs((out[c * 16 + i] - h[c * 16 + i]) - r0) < 1e-12);
  }
}

TEST_CASE("zeroed fusion output projections give the latent-free network exactly") {
  Rng rng(8);
  const auto x = random_tensor({2, 4, 8, 8}, rng);
  for (auto v : {FusionVariant::BottleneckCrossAttn, FusionVariant::TripleCrossAttn,
                 FusionVariant::TransformerLikeBlock}) {
    const std::string variant = to_string(v);
    CAPTURE(variant);
    ScoreNet<float> net(small_spec(v), OuveSchedule{});
    net.zero_fusion_output_projections();
    Tensor<float> xf(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) xf[i] = static_cast<float>(x[i]);
    Rng lr(1);
    const auto lat = random_tensor({2, 3, 12}, lr);
    Tensor<float> latf(lat.shape());
    for (std::size_t i = 0; i < lat.numel(); ++i) latf[i] = static_cast<float>(lat[i]);
    const auto a = net.forward(constant(xf), {0.2, 0.7}, constant(latf)).value();
    const auto b = net.forward(constant(xf), {0.2, 0.7}, Var<float>{}, ForwardOptions{true}).value();
    REQUIRE(a.numel() == b.numel());
    CHECK(std::equal(a.data(), a.data() + a.numel(), b.data()));
  }
}

TEST_CASE("latent projections receive gradient after one backward pass") {
  Rng rng(9);
  for (auto v : all_fusion_variants()) {
    const std::string variant = to_string(v);
    CAPTURE(variant);
    ScoreNet<double> net(small_spec(v), OuveSchedule{});
    net.store().zero_grad();
    backward(mean_square(
        net.forward(constant(random_tensor({2, 4, 8, 8}, rng)), {0.3, 0.6}, constant(random_latent(2, 3, 12, 5)))));
    for (const auto& name : net.latent_projection_names()) {
      CAPTURE(name);
      const auto* p = net.store().find(name);
      REQUIRE(p != nullptr);
      double g = 0.0;
      for (auto x : p->grad.values()) g += std::abs(x);
      CHECK(g > 0.0);
    }
  }
}

TEST_CASE("two-level net gradients match finite differences at 64-bit") {
  Rng rng(10);
  const auto x = random_tensor({2, 4, 4, 4}, rng);
  const auto lat = random_latent(2, 2, 12, 6);
  for (auto v : all_fusion_variants()) {
    const std::string variant = to_string(v);
    CAPTURE(variant);
    auto spec = small_spec(v);
    spec.output_init_scale = 1.0;
    ScoreNet<double> net(spec, OuveSchedule{});
    const auto loss = [&] { return testing::probe(net.forward(constant(x), {0.25, 0.8}, constant(lat))); };
    const auto r = testing::check_gradients(net.parameters(), loss, 1, rng);
    CAPTURE(r.worst);
    CHECK(r.checked == net.parameters().size());
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("float and double networks built from one seed agree") {
  Rng rng(11);
  const auto x = random_tensor({1, 4, 8, 8}, rng);
  const auto lat = random_latent(1, 2, 12, 7);
  ScoreNet<double> d(small_spec(FusionVariant::TripleCrossAttn), OuveSchedule{});
  ScoreNet<float> f(small_spec(FusionVariant::TripleCrossAttn), OuveSchedule{});
  Tensor<float> xf(x.shape()), lf(lat.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) xf[i] = static_cast<float>(x[i]);
  for (std::size_t i = 0; i < lat.numel(); ++i) lf[i] = static_cast<float>(lat[i]);
  const auto a = d.forward(constant(x), {0.5}, constant(lat)).value();
  const auto b = f.forward(constant(xf), {0.5}, constant(lf)).value();
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) scale = std::max(scale, std::abs(a[i])), err = std::max(err, std::abs(a[i] - b[i]));
  CHECK(err <= 1e-4 * scale);
}

TEST_CASE("positional encoding table follows the sinusoidal formula") {
  const auto pe = positional_encoding(5, 8);
  for (std::size_t p = 0; p < 5; ++p) {
    for (std::size_t i = 0; i < 4; ++i) {
      const double a = static_cast<double>(p) / std::pow(10000.0, 2.0 * i / 8.0);
      CHECK(pe[p * 8 + 2 * i] == doctest::Approx(std::sin(a)));
      CHECK(pe[p * 8 + 2 * i + 1] == doctest::Approx(std::cos(a)));
    }
  }
  const auto enc = positional_encode(std::vector<double>(10, 1.0), 5, 2);
  CHECK(enc[0] == doctest::Approx(1.0));
  CHECK(enc[1] == doctest::Approx(2.0));
}

TEST_CASE("time embedding pairs lie on the unit circle") {
  const auto e = time_embed(0.37, 16, 5);
  REQUIRE(e.size() == 16);
  for (std::size_t j = 0; j < 8; ++j) CHECK(e[j] * e[j] + e[8 + j] * e[8 + j] == doctest::Approx(1.0));
  CHECK(time_embed(0.37, 16, 5) == e);
  CHECK(time_embed(0.0, 4, 1) == std::vector<double>{0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("pack_input and unpack_output use real and imaginary planes") {
  ComplexGrid x(2, 2), y(2, 2);
  for (std::size_t i = 0; i < 4; ++i) x.data[i] = Complex(i, -1.0 * i), y.data[i] = Complex(10.0 + i, 5.0);
  std::vector<double> buf(16);
  pack_input(x, y, buf.data());
  CHECK(buf[1] == 1.0);
  CHECK(buf[4 + 2] == -2.0);
  CHECK(buf[8 + 3] == 13.0);
  CHECK(buf[12] == 5.0);
  const auto g = unpack_output(buf.data(), 2, 2);
  CHECK(g.data == x.data);
}
