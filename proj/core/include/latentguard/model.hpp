#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latentguard/encoder.hpp"
#include "latentguard/tensor.hpp"

namespace lg {

struct EmbeddingMapConfig {
  int heads = 16;      // attention heads (I)
  int head_dim = 128;  // per-head width (d)
  int d_text = 64;     // encoder feature width
  int d_out = 0;       // joint embedding width; 0 means "same as head_dim"
  std::uint64_t seed = 0;

  int out_dim() const { return d_out > 0 ? d_out : head_dim; }
  void validate() const;
};

struct HeadParams {
  Tensor w_k, w_q, w_v;  // d_text x d
  Tensor b_k, b_q, b_v;  // d
};

struct EmbeddingMapParams {
  EmbeddingMapConfig cfg;
  std::vector<HeadParams> heads;
  Tensor w_p;  // (heads * d) x d_out, head-concat aggregator
  Tensor b_p;  // d_out
  Tensor w_c;  // d_text x d_out, concept projector
  Tensor b_c;  // d_out

  // Fixed enumeration order: per head K,Q,V weights then biases, then
  // aggregator, then concept projector. The optimizer and checkpoints rely on
  // this order being stable.
  std::vector<Tensor> all() const;
  std::int64_t parameter_count() const;
};

// Glorot-uniform weights, zero biases, deterministic in cfg.seed.
EmbeddingMapParams init_params(const EmbeddingMapConfig& cfg);

struct GuardEmbeddings {
  Tensor h_c;  // unit vector, d_out
  Tensor h_p;  // unit vector, d_out
  std::vector<Mat<double>> attention;  // per head, concept tokens x prompt tokens
};

// Maps a (concept, prompt) encoding pair into the joint space. Only the valid
// rows of each encoding participate; padding gets exactly zero attention.
GuardEmbeddings forward_pair(const EmbeddingMapParams& params, const EncodedText& z_c,
                             const EncodedText& z_p, bool with_attention = false);

void save_checkpoint(const std::string& path, const EmbeddingMapParams& params);
EmbeddingMapParams load_checkpoint(const std::string& path);

}  // namespace lg
