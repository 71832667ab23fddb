#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "exdiff/error.hpp"
#include "exdiff/train.hpp"
#include "gradcheck.hpp"

using namespace exdiff;
using namespace exdiff::nnet;

namespace {

ScoreNetSpec tiny_spec() {
  ScoreNetSpec s;
  s.n_levels = 2;
  s.base_channels = 8;
  s.channel_multipliers = {1, 2};
  s.attn_dim = 8;
  s.time_embed_dim = 8;
  s.latent_dim = 8;
  return s;
}

PairDataset tiny_dataset(std::size_t pairs = 2) {
  SynthConfig sc;
  sc.min_seconds = sc.max_seconds = 0.5;
  return PairDataset(synth_corpus(pairs, 4, sc), StftParams::desk(), Compression{}, 16,
                     std::make_shared<ToyLatentProvider>(8, 1));
}

std::vector<ComplexGrid> normals(std::size_t n, std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::vector<ComplexGrid> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, i);
    out.push_back(complex_normal_grid(rows, cols, rng));
  }
  return out;
}

}  // namespace

TEST_CASE("DSM objective: perfect model gives zero, zero model gives |z|^2 / sigma^2") {
  const OuveSchedule s;
  const auto z = normals(2, 3, 4, 1);
  const std::vector<double> sigma{kernel_std(0.2, s), kernel_std(0.9, s)};
  std::vector<ComplexGrid> perfect, zero;
  double expect = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    ComplexGrid p = z[b];
    for (auto& v : p.data) v = -v / sigma[b];
    perfect.push_back(p);
    zero.emplace_back(3, 4);
    expect += squared_norm(z[b]) / (sigma[b] * sigma[b]);
  }
  CHECK(dsm_loss_value(perfect, z, sigma) == doctest::Approx(0.0));
  CHECK(dsm_loss_value(zero, z, sigma) == doctest::Approx(expect / 24.0));
}

TEST_CASE("dsm_loss equals the objective evaluated on the network output") {
  ScoreNet<double> net(tiny_spec(), OuveSchedule{});
  const auto data = tiny_dataset();
  const auto e0 = data.example(0, 0), e1 = data.example(1, 5);
  const std::vector<const TrainExample*> batch{&e0, &e1};
  const std::vector<double> t{0.1, 0.7};
  const auto z = normals(2, e0.x0.rows, e0.x0.cols, 3);
  const double loss = dsm_loss(net, batch, t, z).value()[0];
  std::vector<ComplexGrid> scores;
  std::vector<double> sigma;
  for (std::size_t b = 0; b < 2; ++b) {
    const auto xt = sample_xt(batch[b]->x0, batch[b]->y, t[b], z[b], net.schedule());
    scores.push_back(score_batch(net, {&xt}, {&batch[b]->y}, {t[b]}, {&batch[b]->latent}).front());
    sigma.push_back(kernel_std(t[b], net.schedule()));
  }
  CHECK(loss == doctest::Approx(dsm_loss_value(scores, z, sigma)).epsilon(1e-10));
  CHECK(loss >= 0.0);
  CHECK_THROWS_AS(dsm_loss(net, batch, {0.01, 0.5}, z), InvalidArgument);
}

TEST_CASE("dsm_loss gradients match finite differences on a two-level net") {
  auto spec = tiny_spec();
  spec.output_init_scale = 1.0;
  ScoreNet<double> net(spec, OuveSchedule{});
  const auto data = tiny_dataset();
  const auto e0 = data.example(0, 2);
  const std::vector<const TrainExample*> batch{&e0};
  const auto z = normals(1, e0.x0.rows, e0.x0.cols, 4);
  Rng rng(5);
  const auto r = testing::check_gradients(net.parameters(), [&] { return dsm_loss(net, batch, {0.4}, z); }, 1, rng);
  CHECK(r.checked >= 10);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("dataset chunks are aligned and latents come from the noisy chunk") {
  const auto data = tiny_dataset(3);
  CHECK(data.size() == 3);
  Rng rng(1);
  const auto ex = data.draw(rng);
  CHECK(ex.x0.rows == 64);
  CHECK(ex.x0.cols == 16);
  CHECK(ex.y.cols == 16);
  CHECK(ex.latent.width == 8);
  CHECK_THROWS_AS(PairDataset({}, StftParams::desk(), Compression{}, 16, std::make_shared<ToyLatentProvider>(8, 1)),
                  InvalidArgument);
}

TEST_CASE("training is deterministic and max_steps = 0 returns the initialisation") {
  const auto data = tiny_dataset();
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 3;
  cfg.lr = 1e-3;
  cfg.seed = 7;
  ScoreNet<float> a(tiny_spec(), OuveSchedule{}), b(tiny_spec(), OuveSchedule{});
  const auto ra = train_loop(a, data, cfg, {}), rb = train_loop(b, data, cfg, {});
  REQUIRE(ra.log.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(ra.log[i].loss == rb.log[i].loss);
  CHECK(ra.checkpoint.params[4].values == rb.checkpoint.params[4].values);

  cfg.max_steps = 0;
  ScoreNet<float> c(tiny_spec(), OuveSchedule{});
  const auto rc = train_loop(c, data, cfg, {});
  CHECK(rc.log.empty());
  const auto params = c.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::vector<float> init(params[i]->value.data(), params[i]->value.data() + params[i]->value.numel());
    CHECK(rc.checkpoint.params[i].values == init);
    CHECK(rc.checkpoint.ema[i].values == init);
  }
}

TEST_CASE("checkpoint files reproduce the forward pass bit for bit") {
  const auto dir = std::filesystem::temp_directory_path() / "exdiff_train_test";
  std::filesystem::remove_all(dir);
  const auto data = tiny_dataset();
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.max_steps = 2;
  cfg.checkpoint_every = 1;
  cfg.lr = 1e-3;
  ScoreNet<float> net(tiny_spec(), OuveSchedule{});
  train_loop(net, data, cfg, TrainOutput{dir, R"({"note": "test"})", {}});
  CHECK(std::filesystem::exists(dir / "loss.csv"));
  CHECK(std::filesystem::exists(dir / "ckpt_1.exdf"));
  const auto ckpt = read_checkpoint(dir / "final.exdf");
  CHECK(ckpt.header_json == R"({"note": "test"})");

  load_weights(net, ckpt, false);
  ScoreNet<float> fresh(tiny_spec(), OuveSchedule{});
  load_weights(fresh, ckpt, false);
  const auto ex = data.example(1, 3);
  const auto xt = ex.y;
  const auto a = score_batch(net, {&xt}, {&ex.y}, {0.5}, {&ex.latent}).front();
  const auto b = score_batch(fresh, {&xt}, {&ex.y}, {0.5}, {&ex.latent}).front();
  CHECK(a.data == b.data);

  auto other = tiny_spec();
  other.base_channels = 16;
  ScoreNet<float> wrong(other, OuveSchedule{});
  CHECK_THROWS_AS(load_weights(wrong, ckpt, true), ShapeError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("non-finite losses are skipped and 50 in a row abort") {
  const auto data = tiny_dataset();
  ScoreNet<float> net(tiny_spec(), OuveSchedule{});
  net.parameters().back()->value[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.max_steps = 5;
  const auto r = train_loop(net, data, cfg, {});
  CHECK(r.skipped_steps == 5);
  cfg.max_steps = 60;
  CHECK_THROWS_AS(train_loop(net, data, cfg, {}), NumericError);
}

TEST_CASE("training configuration is validated") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.ema_decay = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.precision = 16;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
