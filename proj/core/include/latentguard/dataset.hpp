#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "latentguard/encoder.hpp"

namespace lg {

enum class Split { train, val, test };
enum class Variant { explicit_, synonym, adversarial };
enum class Distribution { id, ood };

std::string to_string(Split s);
std::string to_string(Variant v);
std::string to_string(Distribution d);

struct PromptRecord {
  std::string id;
  std::string concept_id;
  std::string concept_text;  // JSON field "concept"
  std::string unsafe_prompt;
  std::string safe_prompt;
  Split split = Split::train;
  Variant variant = Variant::explicit_;
  Distribution distribution = Distribution::id;
  std::optional<double> gcg_loss;  // adversarial records only
};

struct SynthConfig {
  int n_id_concepts = 64;
  int n_ood_concepts = 16;
  int train_per_concept = 8;
  int val_per_concept = 2;
  int test_per_concept = 4;
  int template_pool_size = 24;
  int filler_vocab = 160;
  int min_template_words = 5;  // filler words per template, excluding the slot
  int max_template_words = 9;
  // Chance that an explicit train record gets an extra synonym-variant sibling
  // (the alias word standing in for the concept). 0 keeps aliases strictly
  // unseen in training.
  double alias_plant_prob = 0.0;
  // Random words scanned per concept when picking its alias; the scan keeps
  // the candidate whose embedding is most similar to the concept's, the toy
  // analogue of a synonym being an encoder-space neighbour.
  int alias_candidates = 20000;
  std::uint64_t seed = 0;
};

// Concepts, aliases, safe replacements and fillers are distinct pseudo-words
// (fixed six letters, unique token ids), so "concept appears in prompt" is
// exactly "concept word present". Unsafe/safe/synonym prompts of a record
// share one template and differ only at the slot.
std::vector<PromptRecord> generate_synthetic(const SynthConfig& cfg, const ToyEncoder& encoder);

// Throws std::runtime_error naming the offending record id on any violation;
// also asserts ID/OOD concept vocabularies are disjoint.
void validate_records(const std::vector<PromptRecord>& records);

std::string to_jsonl_line(const PromptRecord& r);
PromptRecord parse_jsonl_line(const std::string& line, std::size_t line_no);

void save_jsonl(const std::string& path, const std::vector<PromptRecord>& records);
std::vector<PromptRecord> load_jsonl(const std::string& path);

// Directory layout: copro.train.jsonl, copro.val.jsonl, copro.test.jsonl.
void save_dataset(const std::string& dir, const std::vector<PromptRecord>& records);
std::vector<PromptRecord> load_dataset(const std::string& dir);

struct ConceptRef {
  std::string id;
  std::string text;
};

// Distinct concepts of one distribution, in first-appearance order.
std::vector<ConceptRef> distinct_concepts(const std::vector<PromptRecord>& records, Distribution d);

struct SplitStats {
  // counts[split][variant][distribution]
  std::int64_t counts[3][3][2] = {};
  std::int64_t id_concepts = 0;
  std::int64_t ood_concepts = 0;
};

SplitStats split_stats(const std::vector<PromptRecord>& records);
void print_split_stats(std::ostream& os, const SplitStats& s);

}  // namespace lg
