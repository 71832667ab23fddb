#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "exdiff/grid.hpp"
#include "exdiff/latents.hpp"
#include "exdiff/nnet/layers.hpp"
#include "exdiff/sde.hpp"

namespace exdiff {

enum class FusionVariant { BottleneckCrossAttn, TripleCrossAttn, TransformerLikeBlock, InputConcat };

const char* to_string(FusionVariant v);
FusionVariant fusion_variant_from_string(const std::string& s);
std::vector<FusionVariant> all_fusion_variants();
bool uses_attention(FusionVariant v);

/// Frame-wise tokens (one per latent frame) or the single pooled vector.
enum class LatentTokenMode { Frames, Pooled };

const char* to_string(LatentTokenMode m);
LatentTokenMode latent_token_mode_from_string(const std::string& s);

struct ScoreNetSpec {
  std::size_t n_levels = 3;
  std::size_t base_channels = 16;
  std::vector<std::size_t> channel_multipliers{1, 2, 2};
  std::size_t attn_dim = 64;
  FusionVariant fusion = FusionVariant::BottleneckCrossAttn;
  std::size_t time_embed_dim = 64;  // Fourier features (sin and cos halves)
  bool use_progressive_input = true;
  std::size_t latent_dim = 2048;  // H
  LatentTokenMode latent_tokens = LatentTokenMode::Frames;
  bool positional_encoding = true;
  std::size_t concat_planes = 8;  // InputConcat only
  double fourier_scale = 16.0;
  double output_init_scale = 0.1;
  bool scale_by_sigma = true;
  std::uint64_t init_seed = 0;

  void validate() const;
  /// Throws ShapeError unless both grid dimensions divide by 2^(n_levels - 1).
  void validate_grid(std::size_t rows, std::size_t cols) const;
  std::size_t channels(std::size_t level) const { return base_channels * channel_multipliers.at(level); }
  std::size_t input_channels() const;
};

/// Sinusoidal encoding table (n_positions x dim): sin on even columns, cos on odd.
std::vector<double> positional_encoding(std::size_t n_positions, std::size_t dim);
/// rows (n x dim, row-major) plus the encoding of their positions.
std::vector<double> positional_encode(const std::vector<double>& rows, std::size_t n, std::size_t dim);

/// Gaussian Fourier features [sin(2 pi W t), cos(2 pi W t)] with W_j ~ N(0, scale^2)
/// drawn from `seed`.
std::vector<double> time_embed(double t, std::size_t dim, std::uint64_t seed, double scale = 16.0);

/// (4, rows, cols) real channels: Re x, Im x, Re y, Im y.
template <typename Real>
void pack_input(const ComplexGrid& x, const ComplexGrid& y, Real* out);

/// (2, rows, cols) real/imag channels back to a grid.
template <typename Real>
ComplexGrid unpack_output(const Real* data, std::size_t rows, std::size_t cols);

/// Tokens (n_tokens x H) for one latent under the token mode.
std::vector<double> latent_token_rows(const LatentRepresentation& l, LatentTokenMode mode, std::size_t* n_tokens);

struct ForwardOptions {
  /// Bypass every latent fusion block: the latent-free network.
  bool skip_fusion = false;
};

namespace detail {
template <typename Real> struct ScoreNetImpl;
}

/// NCSN++-style U-Net s(x_t, y, t, l) on (real, imag) spectrogram channels.
template <typename Real>
class ScoreNet {
 public:
  ScoreNet(const ScoreNetSpec& spec, const OuveSchedule& schedule);
  ~ScoreNet();
  ScoreNet(ScoreNet&&) noexcept;
  ScoreNet& operator=(ScoreNet&&) noexcept;

  const ScoreNetSpec& spec() const;
  const OuveSchedule& schedule() const;
  nnet::ParameterStore<Real>& store();
  std::vector<nnet::Parameter<Real>*> parameters();

  /// input (B, 4, F, T); t one value per item; latent (B, n_tokens, H).
  /// Returns (B, 2, F, T).
  nnet::Var<Real> forward(const nnet::Var<Real>& input, const std::vector<double>& t,
                          const nnet::Var<Real>& latent, const ForwardOptions& opt = {});

  /// Latent tokens through the input projection and (if enabled) positional encoding: (B, n, attn_dim).
  nnet::Var<Real> project_latent(const nnet::Var<Real>& latent);

  /// Residual cross-attention of the bottleneck block on h (B, C, Hs, Ws).
  nnet::Var<Real> fuse_bottleneck(const nnet::Var<Real>& h, const nnet::Var<Real>& tokens);

  /// Zeroes the out-projection of every fusion branch (and the feed-forward
  /// output layer), turning attention fusion into an identity.
  void zero_fusion_output_projections();

  /// Names of the parameters that map the latent into attention space.
  std::vector<std::string> latent_projection_names() const;

 private:
  std::unique_ptr<detail::ScoreNetImpl<Real>> impl_;
};

/// Stacks per-item tensors along a new leading axis.
template <typename Real>
nnet::Tensor<Real> stack(const std::vector<nnet::Tensor<Real>>& items);

/// Latent tokens for a batch (all items must give the same token count).
template <typename Real>
nnet::Tensor<Real> latent_batch(const std::vector<const LatentRepresentation*>& latents, LatentTokenMode mode);

/// Score estimates for a batch of (x, y, t, latent) with gradients disabled.
template <typename Real>
std::vector<ComplexGrid> score_batch(ScoreNet<Real>& net, const std::vector<const ComplexGrid*>& x,
                                     const std::vector<const ComplexGrid*>& y, const std::vector<double>& t,
                                     const std::vector<const LatentRepresentation*>& latents);

}  // namespace exdiff
