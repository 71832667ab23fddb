#include <doctest.h>

#include <cmath>

#include "exdiff/error.hpp"
#include "exdiff/framing.hpp"
#include "exdiff/sampler.hpp"

using namespace exdiff;

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

}  // namespace

TEST_CASE("chunk starts cover the clip at half overlap with the last chunk end-aligned") {
  CHECK(chunk_starts(10, 64) == std::vector<std::size_t>{0});
  CHECK(chunk_starts(64, 64) == std::vector<std::size_t>{0});
  CHECK(chunk_starts(100, 64) == std::vector<std::size_t>{0, 32, 36});
  CHECK(chunk_starts(128, 64) == std::vector<std::size_t>{0, 32, 64});
  CHECK_THROWS_AS(chunk_starts(10, 0), InvalidArgument);
}

TEST_CASE("raised-cosine weights are positive and overlap-add to a constant") {
  const std::size_t n = 64;
  for (std::size_t j = 0; j < n; ++j) CHECK(crossfade_weight(j, n) > 0.0);
  for (std::size_t j = 0; j < n / 2; ++j) {
    CHECK(crossfade_weight(j, n) + crossfade_weight(j + n / 2, n) == doctest::Approx(1.0));
  }
}

TEST_CASE("clips are normalised by the noisy peak and padded by whole frames") {
  std::vector<double> s(1000, 0.0);
  s[10] = -2.0;
  const auto clip = frame_clip(Waveform(s, 16000), StftParams::desk(), Compression{});
  CHECK(clip.norm == 2.0);
  CHECK(clip.pad == 126);
  CHECK((clip.padded.size() - 126) % 42 == 0);
  CHECK(clip.padded.size() >= 1000 + 2 * 126);
  CHECK(frame_clip(Waveform(std::vector<double>(500, 0.0), 16000), StftParams::desk(), Compression{}).norm == 1.0);
  const auto seg = chunk_waveform(clip, 2, 4);
  CHECK(seg.size() == StftParams::desk().samples_for_frames(4));
  CHECK(seg.samples[126 + 10 - 84] == -1.0);
}

TEST_CASE("enhance returns a finite waveform of the input length") {
  ScoreNet<float> net(tiny_spec(), OuveSchedule{});
  const ToyLatentProvider latents(8, 1);
  EnhanceOptions opt;
  opt.sampler.n_steps = 3;
  opt.chunk_frames = 16;
  opt.max_batch = 2;
  Rng rng(1);
  std::vector<double> s(2000);
  for (auto& v : s) v = 0.1 * rng.normal();
  const auto out = enhance(Waveform(s, 16000), net, StftParams::desk(), Compression{}, latents, opt);
  CHECK(out.size() == 2000);
  CHECK(out.sample_rate == 16000);
  for (double v : out.samples) CHECK(std::isfinite(v));
  const auto again = enhance(Waveform(s, 16000), net, StftParams::desk(), Compression{}, latents, opt);
  CHECK(again.samples == out.samples);

  // 8 kHz input is processed at 16 kHz; duration is kept within one hop.
  std::vector<double> low(1000, 0.0);
  for (std::size_t i = 0; i < low.size(); ++i) low[i] = 0.2 * std::sin(0.3 * static_cast<double>(i));
  const auto up = enhance(Waveform(low, 8000), net, StftParams::desk(), Compression{}, latents, opt);
  CHECK(std::abs(up.duration_seconds() - 1000.0 / 8000.0) <= 42.0 / 16000.0);

  CHECK_THROWS_AS(enhance(Waveform(std::vector<double>(50, 0.1), 16000), net, StftParams::desk(), Compression{},
                          latents, opt),
                  InvalidArgument);
  const ToyLatentProvider wrong(16, 1);
  CHECK_THROWS_AS(enhance(Waveform(s, 16000), net, StftParams::desk(), Compression{}, wrong, opt), ShapeError);
}
