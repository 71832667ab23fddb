#include "exdiff/scorenet.hpp"

#include <cmath>
#include <numbers>

#include "exdiff/error.hpp"

namespace exdiff {

using nnet::Conv2d;
using nnet::GroupNorm;
using nnet::LayerNorm;
using nnet::Linear;
using nnet::ParameterStore;
using nnet::Shape;
using nnet::Tensor;
using nnet::Var;

const char* to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::BottleneckCrossAttn: return "bottleneck_cross_attn";
    case FusionVariant::TripleCrossAttn: return "triple_cross_attn";
    case FusionVariant::TransformerLikeBlock: return "transformer_like_block";
    case FusionVariant::InputConcat: return "input_concat";
  }
  return "?";
}

FusionVariant fusion_variant_from_string(const std::string& s) {
  for (auto v : all_fusion_variants()) {
    if (s == to_string(v)) return v;
  }
  throw InvalidArgument("unknown fusion variant: " + s);
}

std::vector<FusionVariant> all_fusion_variants() {
  return {FusionVariant::BottleneckCrossAttn, FusionVariant::TripleCrossAttn, FusionVariant::TransformerLikeBlock,
          FusionVariant::InputConcat};
}

bool uses_attention(FusionVariant v) { return v != FusionVariant::InputConcat; }

const char* to_string(LatentTokenMode m) { return m == LatentTokenMode::Frames ? "frames" : "pooled"; }

LatentTokenMode latent_token_mode_from_string(const std::string& s) {
  if (s == "frames") return LatentTokenMode::Frames;
  if (s == "pooled") return LatentTokenMode::Pooled;
  throw InvalidArgument("unknown latent token mode: " + s);
}

void ScoreNetSpec::validate() const {
  if (n_levels < 2) throw InvalidArgument("net.n_levels must be at least 2");
  if (channel_multipliers.size() != n_levels) {
    throw InvalidArgument("net.channel_multipliers must have n_levels entries");
  }
  if (base_channels == 0) throw InvalidArgument("net.base_channels must be positive");
  for (auto m : channel_multipliers) {
    if (m == 0) throw InvalidArgument("net.channel_multipliers entries must be positive");
  }
  if (attn_dim == 0) throw InvalidArgument("net.attn_dim must be positive");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) throw InvalidArgument("net.time_embed_dim must be even and >= 2");
  if (latent_dim == 0) throw InvalidArgument("net.latent_dim must be positive");
  if (fusion == FusionVariant::InputConcat && concat_planes == 0) {
    throw InvalidArgument("net.concat_planes must be positive for input concatenation");
  }
  if (!(fourier_scale > 0.0)) throw InvalidArgument("net.fourier_scale must be positive");
  if (!(output_init_scale >= 0.0)) throw InvalidArgument("net.output_init_scale must be non-negative");
}

void ScoreNetSpec::validate_grid(std::size_t rows, std::size_t cols) const {
  const std::size_t factor = std::size_t{1} << (n_levels - 1);
  if (rows == 0 || cols == 0 || rows % factor != 0 || cols % factor != 0) {
    throw ShapeError("grid " + std::to_string(rows) + "x" + std::to_string(cols) + " is not divisible by " +
                     std::to_string(factor));
  }
}

std::size_t ScoreNetSpec::input_channels() const {
  return 4 + (fusion == FusionVariant::InputConcat ? concat_planes : 0);
}

std::vector<double> positional_encoding(std::size_t n_positions, std::size_t dim) {
  std::vector<double> pe(n_positions * dim);
  for (std::size_t p = 0; p < n_positions; ++p) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(dim));
      const double a = static_cast<double>(p) * freq;
      pe[p * dim + j] = (j % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  }
  return pe;
}

std::vector<double> positional_encode(const std::vector<double>& rows, std::size_t n, std::size_t dim) {
  if (rows.size() != n * dim) throw ShapeError("positional_encode: matrix size mismatch");
  auto out = positional_encoding(n, dim);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rows[i];
  return out;
}

std::vector<double> time_embed(double t, std::size_t dim, std::uint64_t seed, double scale) {
  if (dim < 2 || dim % 2 != 0) throw InvalidArgument("time_embed: dim must be even");
  Rng rng(seed, 0x54454d42);
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t j = 0; j < half; ++j) {
    const double a = 2.0 * std::numbers::pi * scale * rng.normal() * t;
    out[j] = std::sin(a);
    out[half + j] = std::cos(a);
  }
  return out;
}

template <typename Real>
void pack_input(const ComplexGrid& x, const ComplexGrid& y, Real* out) {
  require_same_shape(x, y, "pack_input");
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<Real>(x.data[i].real());
    out[n + i] = static_cast<Real>(x.data[i].imag());
    out[2 * n + i] = static_cast<Real>(y.data[i].real());
    out[3 * n + i] = static_cast<Real>(y.data[i].imag());
  }
}

template <typename Real>
ComplexGrid unpack_output(const Real* data, std::size_t rows, std::size_t cols) {
  ComplexGrid g(rows, cols);
  const std::size_t n = rows * cols;
  for (std::size_t i = 0; i < n; ++i) g.data[i] = Complex(data[i], data[n + i]);
  return g;
}

std::vector<double> latent_token_rows(const LatentRepresentation& l, LatentTokenMode mode, std::size_t* n_tokens) {
  if (mode == LatentTokenMode::Pooled) {
    *n_tokens = 1;
    return {l.pooled.begin(), l.pooled.end()};
  }
  *n_tokens = l.n_frames;
  return {l.frames.begin(), l.frames.end()};
}

namespace detail {

template <typename Real>
Var<Real> constant_like(const std::vector<double>& values, Shape shape) {
  return nnet::constant(Tensor<Real>(std::move(shape), std::vector<Real>(values.begin(), values.end())));
}

enum class Resample { None, Down, Up };

template <typename Real>
struct ResBlock {
  GroupNorm<Real> norm0, norm1;
  Conv2d<Real> conv0, conv1, skip;
  Linear<Real> temb;
  Resample mode = Resample::None;
  bool has_skip = false;

  ResBlock() = default;
  ResBlock(ParameterStore<Real>& s, const std::string& name, std::size_t in, std::size_t out,
           std::size_t temb_dim, Resample m, Rng& rng)
      : mode(m), has_skip(in != out || m != Resample::None) {
    norm0 = GroupNorm<Real>(s, name + ".norm0", in);
    conv0 = Conv2d<Real>(s, name + ".conv0", in, out, 3, rng);
    temb = Linear<Real>(s, name + ".temb", temb_dim, out, rng);
    norm1 = GroupNorm<Real>(s, name + ".norm1", out);
    conv1 = Conv2d<Real>(s, name + ".conv1", out, out, 3, rng);
    if (has_skip) skip = Conv2d<Real>(s, name + ".skip", in, out, 1, rng);
  }

  Var<Real> operator()(const Var<Real>& x, const Var<Real>& temb_act) const {
    Var<Real> h = nnet::silu(norm0(x));
    Var<Real> shortcut = x;
    if (mode == Resample::Down) {
      h = nnet::downsample2x(h);
      shortcut = nnet::downsample2x(x);
    } else if (mode == Resample::Up) {
      h = nnet::upsample2x(h);
      shortcut = nnet::upsample2x(x);
    }
    h = conv0(h);
    h = nnet::add_channel_bias(h, temb(temb_act));
    h = conv1(nnet::silu(norm1(h)));
    if (has_skip) shortcut = skip(shortcut);
    return nnet::scale(nnet::add(shortcut, h), 1.0 / std::numbers::sqrt2);
  }
};

/// Cross-attention from feature-map queries to latent tokens, either as a
/// residual block on the GroupNorm'd map or as a pre-LayerNorm transformer
/// layer with a feed-forward sublayer.
template <typename Real>
struct FusionBlock {
  bool transformer = false;
  GroupNorm<Real> norm;
  LayerNorm<Real> ln_attn, ln_ff;
  Linear<Real> q, k, v, out, ff1, ff2;

  FusionBlock() = default;
  FusionBlock(ParameterStore<Real>& s, const std::string& name, std::size_t channels, std::size_t d,
              bool as_transformer, Rng& rng)
      : transformer(as_transformer) {
    if (transformer) {
      ln_attn = LayerNorm<Real>(s, name + ".ln_attn", channels);
    } else {
      norm = GroupNorm<Real>(s, name + ".norm", channels);
    }
    q = Linear<Real>(s, name + ".q", channels, d, rng);
    // A key bias shifts every score of a query equally, so softmax ignores it.
    k = Linear<Real>(s, name + ".k", d, d, rng, 1.0, false);
    v = Linear<Real>(s, name + ".v", d, d, rng);
    out = Linear<Real>(s, name + ".out", d, channels, rng);
    if (transformer) {
      ln_ff = LayerNorm<Real>(s, name + ".ln_ff", channels);
      ff1 = Linear<Real>(s, name + ".ff1", channels, 4 * channels, rng);
      ff2 = Linear<Real>(s, name + ".ff2", 4 * channels, channels, rng);
    }
  }

  Var<Real> operator()(const Var<Real>& h, const Var<Real>& tokens) const {
    const std::size_t hs = h.dim(2), ws = h.dim(3);
    const Var<Real> kk = k(tokens);
    const Var<Real> vv = v(tokens);
    if (!transformer) {
      const Var<Real> x = nnet::to_tokens(norm(h));
      const Var<Real> a = nnet::attention(q(x), kk, vv);
      return nnet::add(h, nnet::from_tokens(out(a), hs, ws));
    }
    Var<Real> x = nnet::to_tokens(h);
    x = nnet::add(x, out(nnet::attention(q(ln_attn(x)), kk, vv)));
    x = nnet::add(x, ff2(nnet::silu(ff1(ln_ff(x)))));
    return nnet::from_tokens(x, hs, ws);
  }

  void zero_output() {
    out.zero();
    if (transformer) ff2.zero();
  }
};

template <typename Real>
struct ScoreNetImpl {
  ScoreNetSpec spec;
  OuveSchedule schedule;
  ParameterStore<Real> store;
  std::vector<double> fourier_w;
  std::size_t temb_hidden = 0;

  Linear<Real> temb0, temb1;
  Conv2d<Real> conv_in;
  std::vector<ResBlock<Real>> enc, down, dec, up;
  std::vector<Conv2d<Real>> prog;
  ResBlock<Real> mid0, mid1;
  GroupNorm<Real> out_norm;
  Conv2d<Real> out_conv;
  Linear<Real> latent_proj, concat_proj;
  std::unique_ptr<FusionBlock<Real>> fuse_enc, fuse_mid, fuse_dec;

  ScoreNetImpl(const ScoreNetSpec& sp, const OuveSchedule& sc) : spec(sp), schedule(sc) {
    spec.validate();
    schedule.validate();
    Rng rng(spec.init_seed, 0);
    const std::size_t L = spec.n_levels;
    const std::size_t cin = spec.input_channels();
    temb_hidden = 4 * spec.base_channels;

    Rng frng(spec.init_seed, 0x54454d42);
    fourier_w.resize(spec.time_embed_dim / 2);
    for (auto& w : fourier_w) w = spec.fourier_scale * frng.normal();

    temb0 = Linear<Real>(store, "temb0", spec.time_embed_dim, temb_hidden, rng);
    temb1 = Linear<Real>(store, "temb1", temb_hidden, temb_hidden, rng);
    if (spec.fusion == FusionVariant::InputConcat) {
      concat_proj = Linear<Real>(store, "latent_concat", spec.latent_dim, spec.concat_planes, rng);
    } else {
      latent_proj = Linear<Real>(store, "latent_proj", spec.latent_dim, spec.attn_dim, rng);
    }
    conv_in = Conv2d<Real>(store, "conv_in", cin, spec.channels(0), 3, rng);

    std::size_t cur = spec.channels(0);
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t c = spec.channels(i);
      const std::string lvl = std::to_string(i);
      enc.emplace_back(store, "enc" + lvl, cur, c, temb_hidden, Resample::None, rng);
      cur = c;
      if (i + 1 < L) {
        down.emplace_back(store, "down" + lvl, c, c, temb_hidden, Resample::Down, rng);
        if (spec.use_progressive_input) prog.emplace_back(store, "prog" + std::to_string(i + 1), cin, c, 1, rng);
      }
    }
    const std::size_t deep = spec.channels(L - 1);
    mid0 = ResBlock<Real>(store, "mid0", deep, deep, temb_hidden, Resample::None, rng);
    mid1 = ResBlock<Real>(store, "mid1", deep, deep, temb_hidden, Resample::None, rng);

    dec.resize(L);
    up.resize(L - 1);
    for (std::size_t r = 0; r < L; ++r) {
      const std::size_t i = L - 1 - r;
      const std::size_t c = spec.channels(i);
      const std::string lvl = std::to_string(i);
      dec[i] = ResBlock<Real>(store, "dec" + lvl, cur + c, c, temb_hidden, Resample::None, rng);
      cur = c;
      if (i > 0) {
        const std::size_t next = spec.channels(i - 1);
        up[i - 1] = ResBlock<Real>(store, "up" + lvl, c, next, temb_hidden, Resample::Up, rng);
        cur = next;
      }
    }
    out_norm = GroupNorm<Real>(store, "out_norm", cur);
    out_conv = Conv2d<Real>(store, "out_conv", cur, 2, 3, rng, spec.output_init_scale);

    const bool tf = spec.fusion == FusionVariant::TransformerLikeBlock;
    if (uses_attention(spec.fusion)) {
      fuse_mid = std::make_unique<FusionBlock<Real>>(store, "fuse_mid", deep, spec.attn_dim, tf, rng);
    }
    if (spec.fusion == FusionVariant::TripleCrossAttn) {
      fuse_enc = std::make_unique<FusionBlock<Real>>(store, "fuse_enc", deep, spec.attn_dim, false, rng);
      fuse_dec = std::make_unique<FusionBlock<Real>>(store, "fuse_dec", deep, spec.attn_dim, false, rng);
    }
  }

  Var<Real> time_features(const std::vector<double>& t) const {
    const std::size_t half = fourier_w.size();
    std::vector<double> f(t.size() * 2 * half);
    for (std::size_t b = 0; b < t.size(); ++b) {
      for (std::size_t j = 0; j < half; ++j) {
        const double a = 2.0 * std::numbers::pi * fourier_w[j] * t[b];
        f[b * 2 * half + j] = std::sin(a);
        f[b * 2 * half + half + j] = std::cos(a);
      }
    }
    return constant_like<Real>(f, {t.size(), 2 * half});
  }

  Var<Real> project_latent(const Var<Real>& latent) const {
    if (!uses_attention(spec.fusion)) throw InvalidArgument("project_latent: variant has no attention fusion");
    if (latent.shape().size() != 3 || latent.dim(2) != spec.latent_dim) {
      throw ShapeError("latent width mismatch: expected (B, n, " + std::to_string(spec.latent_dim) + "), got " +
                       nnet::shape_string(latent.shape()));
    }
    Var<Real> tokens = latent_proj(latent);
    if (!spec.positional_encoding) return tokens;
    const std::size_t B = latent.dim(0), n = latent.dim(1), d = spec.attn_dim;
    const auto pe = positional_encoding(n, d);
    std::vector<double> tiled(B * n * d);
    for (std::size_t b = 0; b < B; ++b) std::copy(pe.begin(), pe.end(), tiled.begin() + b * n * d);
    return nnet::add(tokens, constant_like<Real>(tiled, {B, n, d}));
  }

  Var<Real> concat_planes(const Var<Real>& latent, std::size_t F, std::size_t T, bool zero) const {
    if (latent.shape().size() != 3 || latent.dim(2) != spec.latent_dim) {
      throw ShapeError("latent width mismatch: expected (B, n, " + std::to_string(spec.latent_dim) + "), got " +
                       nnet::shape_string(latent.shape()));
    }
    const std::size_t B = latent.dim(0), n = latent.dim(1), H = spec.latent_dim;
    if (zero) return nnet::constant(Tensor<Real>({B, spec.concat_planes, F, T}));
    std::vector<double> pooled(B * H, 0.0);
    const auto& lv = latent.value();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < H; ++k) pooled[b * H + k] += lv[(b * n + i) * H + k];
      }
    }
    for (auto& p : pooled) p /= static_cast<double>(n);
    return nnet::broadcast_spatial(concat_proj(constant_like<Real>(pooled, {B, H})), F, T);
  }

  Var<Real> forward(const Var<Real>& input, const std::vector<double>& t, const Var<Real>& latent,
                    const ForwardOptions& opt) const {
    if (input.shape().size() != 4 || input.dim(1) != 4) {
      throw ShapeError("score net input must be (B, 4, F, T), got " + nnet::shape_string(input.shape()));
    }
    const std::size_t B = input.dim(0), F = input.dim(2), T = input.dim(3);
    spec.validate_grid(F, T);
    if (t.size() != B) throw ShapeError("score net: one time value per batch item required");
    if (latent.defined() && latent.dim(0) != B) throw ShapeError("score net: latent batch size mismatch");
    const bool fuse = !opt.skip_fusion;
    if (fuse && !latent.defined()) throw InvalidArgument("score net: latent required unless fusion is skipped");

    Var<Real> x = input;
    if (spec.fusion == FusionVariant::InputConcat) {
      x = nnet::concat_channels(x, concat_planes(latent, F, T, !fuse));
    }
    const Var<Real> temb = nnet::silu(temb1(nnet::silu(temb0(time_features(t)))));
    Var<Real> tokens;
    if (fuse && uses_attention(spec.fusion)) tokens = project_latent(latent);

    const std::size_t L = spec.n_levels;
    Var<Real> h = conv_in(x);
    Var<Real> pyramid = x;
    std::vector<Var<Real>> skips;
    for (std::size_t i = 0; i < L; ++i) {
      h = enc[i](h, temb);
      if (fuse && fuse_enc && i + 1 == L) h = (*fuse_enc)(h, tokens);
      skips.push_back(h);
      if (i + 1 < L) {
        h = down[i](h, temb);
        if (spec.use_progressive_input) {
          pyramid = nnet::downsample2x(pyramid);
          h = nnet::add(h, prog[i](pyramid));
        }
      }
    }
    h = mid0(h, temb);
    if (fuse && fuse_mid) h = (*fuse_mid)(h, tokens);
    h = mid1(h, temb);
    for (std::size_t r = 0; r < L; ++r) {
      const std::size_t i = L - 1 - r;
      h = dec[i](nnet::concat_channels(h, skips[i]), temb);
      if (fuse && fuse_dec && i + 1 == L) h = (*fuse_dec)(h, tokens);
      if (i > 0) h = up[i - 1](h, temb);
    }
    Var<Real> out = out_conv(nnet::silu(out_norm(h)));
    if (spec.scale_by_sigma) {
      std::vector<double> inv(B);
      for (std::size_t b = 0; b < B; ++b) {
        const double s = kernel_std(t[b], schedule);
        if (!(s > 0.0)) throw InvalidArgument("score net: sigma(t) vanishes at t = " + std::to_string(t[b]));
        inv[b] = 1.0 / s;
      }
      out = nnet::scale_per_item(out, inv);
    }
    return out;
  }
};

}  // namespace detail

template <typename Real>
ScoreNet<Real>::ScoreNet(const ScoreNetSpec& spec, const OuveSchedule& schedule)
    : impl_(std::make_unique<detail::ScoreNetImpl<Real>>(spec, schedule)) {}

template <typename Real>
ScoreNet<Real>::~ScoreNet() = default;
template <typename Real>
ScoreNet<Real>::ScoreNet(ScoreNet&&) noexcept = default;
template <typename Real>
ScoreNet<Real>& ScoreNet<Real>::operator=(ScoreNet&&) noexcept = default;

template <typename Real>
const ScoreNetSpec& ScoreNet<Real>::spec() const {
  return impl_->spec;
}

template <typename Real>
const OuveSchedule& ScoreNet<Real>::schedule() const {
  return impl_->schedule;
}

template <typename Real>
nnet::ParameterStore<Real>& ScoreNet<Real>::store() {
  return impl_->store;
}

template <typename Real>
std::vector<nnet::Parameter<Real>*> ScoreNet<Real>::parameters() {
  return impl_->store.parameters();
}

template <typename Real>
Var<Real> ScoreNet<Real>::forward(const Var<Real>& input, const std::vector<double>& t, const Var<Real>& latent,
                                  const ForwardOptions& opt) {
  return impl_->forward(input, t, latent, opt);
}

template <typename Real>
Var<Real> ScoreNet<Real>::project_latent(const Var<Real>& latent) {
  return impl_->project_latent(latent);
}

template <typename Real>
Var<Real> ScoreNet<Real>::fuse_bottleneck(const Var<Real>& h, const Var<Real>& tokens) {
  if (!impl_->fuse_mid) throw InvalidArgument("fuse_bottleneck: variant has no bottleneck attention");
  if (h.shape().size() != 4 || h.dim(1) != impl_->spec.channels(impl_->spec.n_levels - 1)) {
    throw ShapeError("fuse_bottleneck: feature map channel mismatch");
  }
  if (tokens.shape().size() != 3 || tokens.dim(2) != impl_->spec.attn_dim) {
    throw ShapeError("fuse_bottleneck: tokens must be (B, n, attn_dim)");
  }
  return (*impl_->fuse_mid)(h, tokens);
}

template <typename Real>
void ScoreNet<Real>::zero_fusion_output_projections() {
  for (auto* f : {impl_->fuse_enc.get(), impl_->fuse_mid.get(), impl_->fuse_dec.get()}) {
    if (f) f->zero_output();
  }
}

template <typename Real>
std::vector<std::string> ScoreNet<Real>::latent_projection_names() const {
  if (!uses_attention(impl_->spec.fusion)) return {"latent_concat.weight", "latent_concat.bias"};
  std::vector<std::string> names{"latent_proj.weight", "latent_proj.bias"};
  for (const char* f : {"fuse_enc", "fuse_mid", "fuse_dec"}) {
    if (impl_->store.find(std::string(f) + ".k.weight")) {
      names.push_back(std::string(f) + ".k.weight");
      names.push_back(std::string(f) + ".v.weight");
    }
  }
  return names;
}

template <typename Real>
Tensor<Real> stack(const std::vector<Tensor<Real>>& items) {
  if (items.empty()) throw InvalidArgument("stack: no items");
  Shape shape{items.size()};
  for (auto d : items.front().shape()) shape.push_back(d);
  Tensor<Real> out(shape);
  const std::size_t n = items.front().numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items.front().shape()) throw ShapeError("stack: item shapes differ");
    std::copy(items[i].data(), items[i].data() + n, out.data() + i * n);
  }
  return out;
}

template <typename Real>
Tensor<Real> latent_batch(const std::vector<const LatentRepresentation*>& latents, LatentTokenMode mode) {
  std::vector<Tensor<Real>> items;
  for (const auto* l : latents) {
    std::size_t n = 0;
    const auto rows = latent_token_rows(*l, mode, &n);
    items.emplace_back(Shape{n, l->width}, std::vector<Real>(rows.begin(), rows.end()));
  }
  return stack(items);
}

template <typename Real>
std::vector<ComplexGrid> score_batch(ScoreNet<Real>& net, const std::vector<const ComplexGrid*>& x,
                                     const std::vector<const ComplexGrid*>& y, const std::vector<double>& t,
                                     const std::vector<const LatentRepresentation*>& latents) {
  const std::size_t B = x.size();
  if (B == 0 || y.size() != B || t.size() != B || latents.size() != B) {
    throw ShapeError("score_batch: inconsistent batch sizes");
  }
  const std::size_t rows = x[0]->rows, cols = x[0]->cols;
  Tensor<Real> input({B, 4, rows, cols});
  for (std::size_t b = 0; b < B; ++b) {
    if (x[b]->rows != rows || x[b]->cols != cols) throw ShapeError("score_batch: grid shapes differ");
    pack_input(*x[b], *y[b], input.data() + b * 4 * rows * cols);
  }
  nnet::NoGradGuard guard;
  const auto out = net.forward(nnet::constant(std::move(input)), t,
                               nnet::constant(latent_batch<Real>(latents, net.spec().latent_tokens)));
  std::vector<ComplexGrid> grids;
  for (std::size_t b = 0; b < B; ++b) {
    grids.push_back(unpack_output(out.value().data() + b * 2 * rows * cols, rows, cols));
  }
  return grids;
}

#define EXDIFF_INSTANTIATE(R)                                                                                 \
  template class ScoreNet<R>;                                                                                 \
  template void pack_input<R>(const ComplexGrid&, const ComplexGrid&, R*);                                    \
  template ComplexGrid unpack_output<R>(const R*, std::size_t, std::size_t);                                  \
  template Tensor<R> stack<R>(const std::vector<Tensor<R>>&);                                                 \
  template Tensor<R> latent_batch<R>(const std::vector<const LatentRepresentation*>&, LatentTokenMode);       \
  template std::vector<ComplexGrid> score_batch<R>(ScoreNet<R>&, const std::vector<const ComplexGrid*>&,      \
                                                   const std::vector<const ComplexGrid*>&,                    \
                                                   const std::vector<double>&,                                \
                                                   const std::vector<const LatentRepresentation*>&);

EXDIFF_INSTANTIATE(float)
EXDIFF_INSTANTIATE(double)

}  // namespace exdiff
