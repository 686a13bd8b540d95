#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "latentguard/archive.hpp"
#include "latentguard/mat.hpp"

namespace lg {

// Token-level text features plus a validity mask. Padded rows are exactly
// zero and the mask always has at least one true entry.
struct EncodedText {
  Mat<double> features;             // p_max x d_text
  std::vector<std::uint8_t> mask;   // 1 = valid token row

  std::int64_t valid_count() const;
  Mat<double> compact() const;      // valid rows only, original order
  std::vector<double> mean_pooled() const;  // mean over valid rows
};

void validate_encoded(const EncodedText& z);

struct EncoderConfig {
  std::uint64_t seed = 0;  // embedding table seed
  int d_text = 64;
  int vocab_size = 4096;
  int p_max = 32;
};

// Deterministic stand-in for a text encoder. Tokens are hash bucketed words;
// each token id owns a fixed pseudo-random Gaussian embedding, so a word
// contributes the same feature rows wherever it appears. Rows additionally
// carry a sinusoidal position code.
class ToyEncoder {
 public:
  static constexpr int kPadToken = 0;

  explicit ToyEncoder(EncoderConfig cfg = {});

  const EncoderConfig& config() const { return cfg_; }

  // Lowercases, splits on anything non-alphanumeric, hash buckets into
  // [1, vocab_size), truncates to p_max. Empty text -> [pad token].
  std::vector<int> tokenize(std::string_view text) const;

  EncodedText encode(std::string_view text) const;
  EncodedText encode_tokens(const std::vector<int>& ids) const;

  // Embedding table row (no position code).
  const double* embedding(int token_id) const;
  const double* position_code(int position) const;

 private:
  EncoderConfig cfg_;
  std::vector<double> table_;   // vocab_size x d_text
  std::vector<double> posenc_;  // p_max x d_text
};

// Feature-archive import: entries "<name>/features" (tokens x d_text, f32 or
// f64) and optional "<name>/mask" (tokens x 1, nonzero = valid). Rows beyond
// p_max are rejected; missing mask means all rows valid. Features are consumed
// as stored, no normalization is applied.
EncodedText import_encoded(const Archive& a, const std::string& name, int d_text, int p_max);

}  // namespace lg
