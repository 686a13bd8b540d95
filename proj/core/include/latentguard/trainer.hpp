#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "latentguard/dataset.hpp"
#include "latentguard/model.hpp"
#include "latentguard/optim.hpp"
#include "latentguard/rng.hpp"

namespace lg {

struct TrainConfig {
  int batch_size = 64;
  int iterations = 1000;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double temperature = 0.1;
  // When false, each anchor keeps only the other concepts' unsafe embeddings
  // as negatives (the "unsafe-only negatives" ablation).
  bool safe_negatives = true;
  std::uint64_t seed = 0;
};

struct TrainBatch {
  // parallel arrays, one entry per sampled concept
  std::vector<std::string> concept_ids;
  std::vector<std::string> concepts;
  std::vector<std::string> unsafe_prompts;
  std::vector<std::string> safe_prompts;
};

// Samples batch_size distinct concepts (without replacement) and one
// (unsafe, safe) prompt pair per concept, uniformly over its train records.
TrainBatch sample_batch(const std::vector<PromptRecord>& train_records, int batch_size, Rng& rng);

// Sum over anchors b of -log( exp(<hc_b, hu_b>/tau) / sum over candidates ),
// where the candidates are the positive plus the negatives: other anchors'
// unsafe embeddings, plus (when safe_negatives) the anchor's own and the other
// anchors' safe embeddings. All inputs are expected to be unit vectors.
Tensor supcon_loss(std::span<const Tensor> h_c, std::span<const Tensor> h_u,
                   std::span<const Tensor> h_s, double tau, bool safe_negatives = true);

struct TrainResult {
  EmbeddingMapParams params;
  std::vector<double> loss_trace;  // one entry per iteration
};

// Trains on the ID train records (OOD concepts stay fully unseen).
// Deterministic in the seeds.
TrainResult train(const EmbeddingMapConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::vector<PromptRecord>& records, const ToyEncoder& encoder,
                  std::ostream* log = nullptr);

void write_loss_csv(const std::string& path, const std::vector<double>& trace);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t checked_params = 0;
};

// Compares analytic gradients of the full forward + loss against central
// finite differences (h = 1e-5) on a random tiny batch. The error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1).
GradCheckResult grad_check(const EmbeddingMapConfig& cfg, double tau, std::uint64_t seed);

}  // namespace lg
