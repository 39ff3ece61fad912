#pragma once

// Frozen featurizer: 4x4 patches -> fixed random affine map -> tanh.
// Stands in for a pretrained vision backbone; nothing here is trainable.

#include <array>
#include <cmath>
#include <cstdint>

#include "lpaf/nncore.hpp"
#include "lpaf/worldgen.hpp"

namespace lpaf {

inline constexpr std::size_t kPatch = 4;
inline constexpr std::size_t kGrid = 8;
inline constexpr std::size_t kTokens = kGrid * kGrid;
inline constexpr std::size_t kTokenDim = 32;
inline constexpr std::size_t kPatchDim = kPatch * kPatch * Image::kChannels; // 48
inline constexpr std::size_t kLatentDim = kTokens * kTokenDim;                // 2048
inline constexpr std::uint64_t kEncoderSeed = 0xE0C0DE;

/// Token-major latent: token t = row * 8 + col occupies [t*32, (t+1)*32).
struct LatentVec {
  Tensor values = Tensor({kLatentDim});

  std::span<const double> token(std::size_t t) const { return values.span().subspan(t * kTokenDim, kTokenDim); }

  friend bool operator==(const LatentVec&, const LatentVec&) = default;
};

class EncoderSpec {
public:
  explicit EncoderSpec(std::uint64_t seed = kEncoderSeed) : seed_(seed) {
    Rng rng(seed);
    const double limit = std::sqrt(6.0 / static_cast<double>(kPatchDim + kTokenDim));
    for (auto& w : projection_.data) w = uniform(rng, -limit, limit);
    // Bias cancels the projection of a plain background patch, so empty
    // regions encode to exactly zero and tokens carry only scene content.
    for (std::size_t k = 0; k < kTokenDim; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < kPatchDim; ++i) acc += projection_[k * kPatchDim + i];
      bias_[k] = -static_cast<double>(world::kBackground) * acc;
    }
  }

  /// Shared default instance.
  static const EncoderSpec& standard() {
    static const EncoderSpec spec;
    return spec;
  }

  std::uint64_t seed() const { return seed_; }
  const Tensor& projection() const { return projection_; } // [32 x 48]
  const Tensor& bias() const { return bias_; }             // [32]

  /// Patch (pr, pc) flattened row-major over (y, x, channel).
  static std::array<double, kPatchDim> patch(const Image& img, std::size_t pr, std::size_t pc) {
    std::array<double, kPatchDim> out{};
    std::size_t k = 0;
    for (std::size_t y = 0; y < kPatch; ++y)
      for (std::size_t x = 0; x < kPatch; ++x)
        for (int ch = 0; ch < Image::kChannels; ++ch)
          out[k++] = img.at(static_cast<int>(pr * kPatch + y), static_cast<int>(pc * kPatch + x), ch);
    return out;
  }

  /// Writes the latent into `out` (length 2048).
  void encode_into(const Image& img, std::span<double> out) const {
    require(img.data.size() == Image::kSize, ErrorKind::Dimension, "dimension error: image must be 32x32x3");
    require(out.size() == kLatentDim, ErrorKind::Dimension, "dimension error: latent buffer must hold 2048 values");
    const auto w = projection_.matrix();
    for (std::size_t pr = 0; pr < kGrid; ++pr)
      for (std::size_t pc = 0; pc < kGrid; ++pc) {
        const auto p = patch(img, pr, pc);
        const ConstVectorMap pv(p.data(), kPatchDim);
        const std::size_t t = pr * kGrid + pc;
        VectorMap tok(out.data() + t * kTokenDim, kTokenDim);
        tok = w * pv + ConstVectorMap(bias_.data.data(), kTokenDim);
        for (auto& v : out.subspan(t * kTokenDim, kTokenDim)) v = std::tanh(v);
      }
  }

  LatentVec encode(const Image& img) const {
    LatentVec z;
    encode_into(img, z.values.span());
    return z;
  }

private:
  std::uint64_t seed_;
  Tensor projection_ = Tensor({kTokenDim, kPatchDim});
  Tensor bias_ = Tensor({kTokenDim});
};

inline LatentVec encode(const EncoderSpec& spec, const Image& img) { return spec.encode(img); }

using TokenGrid = std::array<std::array<std::array<double, kTokenDim>, kGrid>, kGrid>;

inline TokenGrid token_view(const LatentVec& z) {
  require(z.values.size() == kLatentDim, ErrorKind::Dimension, "dimension error: latent must hold 2048 values");
  TokenGrid g{};
  for (std::size_t r = 0; r < kGrid; ++r)
    for (std::size_t c = 0; c < kGrid; ++c)
      for (std::size_t k = 0; k < kTokenDim; ++k) g[r][c][k] = z.values[(r * kGrid + c) * kTokenDim + k];
  return g;
}

inline LatentVec flatten(const TokenGrid& g) {
  LatentVec z;
  for (std::size_t r = 0; r < kGrid; ++r)
    for (std::size_t c = 0; c < kGrid; ++c)
      for (std::size_t k = 0; k < kTokenDim; ++k) z.values[(r * kGrid + c) * kTokenDim + k] = g[r][c][k];
  return z;
}

/// Encodes a batch of images into rows of an [N x 2048] tensor.
template <class ImageRange>
Tensor encode_batch(const EncoderSpec& spec, const ImageRange& images) {
  const std::size_t n = std::size(images);
  require(n > 0, ErrorKind::EmptyBatch, "empty batch");
  Tensor out({n, kLatentDim});
  std::size_t i = 0;
  for (const Image& img : images) spec.encode_into(img, out.span().subspan(i++ * kLatentDim, kLatentDim));
  return out;
}

} // namespace lpaf
