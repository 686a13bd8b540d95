#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "latentguard/dataset.hpp"
#include "latentguard/encoder.hpp"

namespace lg {

struct GcgConfig {
  int n_adv_tokens = 5;
  int iterations = 50;
  int candidate_batch = 32;
  int top_k = 16;             // gradient-ranked substitutions kept per position
  int synonym_filter_size = 50;
  bool use_filter = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GcgResult {
  std::vector<int> token_ids;      // n_adv_tokens entries
  std::vector<std::string> words;  // same order, realizable as text
  double final_loss = 0.0;
  std::vector<double> loss_trace;  // initial loss, then accepted loss per iteration
};

// Candidate substitution pool. Words must be single alphanumeric tokens so a
// chosen word round-trips through the tokenizer to its listed id.
struct AttackVocab {
  std::vector<std::string> words;
  std::vector<int> token_ids;  // parallel to words

  std::size_t size() const { return words.size(); }
};

// Unique words appearing in the records' prompts (lowercased). First word wins
// when two distinct words collide on a token id.
AttackVocab vocab_from_records(const std::vector<PromptRecord>& records,
                               const ToyEncoder& encoder);

// One minted word per reachable token id (pad excluded), so the attacker
// searches the encoder's whole vocabulary rather than just corpus words.
// Minting stops when every id is covered or the try budget runs out.
AttackVocab token_space_vocab(const ToyEncoder& encoder, std::uint64_t seed);

// Token ids to bar from substitution: the `size` vocab tokens whose embeddings
// have the highest cosine to the concept token's embedding, plus the concept
// token itself. Sorted ascending.
std::vector<int> synonym_filter(int concept_token_id, const AttackVocab& vocab,
                                const ToyEncoder& encoder, int size);

// Greedy coordinate gradient search over the <ADV> slot of template_text.
// Loss is the squared distance between the mean-pooled encodings of the
// candidate prompt and the target. Each iteration ranks per-position
// substitutions by the loss gradient through the embedding table, samples
// candidate_batch single-token swaps from the top_k pool, evaluates each
// exactly, and accepts the best swap unless it increases the loss.
GcgResult gcg_attack(std::string_view template_text, const EncodedText& target,
                     const ToyEncoder& encoder, const AttackVocab& vocab, const GcgConfig& cfg,
                     const std::vector<int>& excluded_tokens = {});

struct AdversarialBuild {
  std::vector<PromptRecord> records;
  std::vector<std::string> failures;  // per-record messages, batch never aborts
};

// One adversarial record per explicit test record: the concept occurrence in
// the unsafe prompt is replaced by gcg-optimized words, final loss lands in
// gcg_loss. Per-record seeds derive from cfg.seed so attacks are independent.
AdversarialBuild make_adversarial_variant(const std::vector<PromptRecord>& records,
                                          const ToyEncoder& encoder, const AttackVocab& vocab,
                                          const GcgConfig& cfg);

}  // namespace lg
