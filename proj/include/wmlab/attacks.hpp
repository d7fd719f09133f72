#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "wmlab/image.hpp"
#include "wmlab/rng.hpp"

namespace wmlab {

enum class AttackMethod { identity, gaussian, speckle, saltpepper, meanfilter, jpeg };

std::string to_string(AttackMethod m);
AttackMethod parse_attack_method(const std::string& tag);

/// A classical attack and its single parameter: noise variance, corrupted
/// fraction, window size, or JPEG quality factor.
struct AttackSpec {
  AttackMethod method = AttackMethod::identity;
  double param = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

using QuantTable = std::array<int, 64>;

/// Standard luminance table scaled by the IJG quality rule.
QuantTable jpeg_quant_table(int quality);
const QuantTable& jpeg_base_table();

/// Applies the attack; the output is clamped to [0, 1].
ImageBuffer apply_attack(const ImageBuffer& img, const AttackSpec& spec, SeededRng& rng);

/// Convenience overload seeding the generator from spec.seed.
ImageBuffer apply_attack(const ImageBuffer& img, const AttackSpec& spec);

}  // namespace wmlab
