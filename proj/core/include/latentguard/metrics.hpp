#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "latentguard/dataset.hpp"
#include "latentguard/encoder.hpp"

namespace lg {

// One scored example: score is a distance, so LOWER means MORE unsafe. All
// metric routines share that orientation.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<bool> unsafe;  // ground truth

  std::size_t size() const { return scores.size(); }
  void push(double score, bool is_unsafe) {
    scores.push_back(score);
    unsafe.push_back(is_unsafe);
  }
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // flag unsafe iff score < threshold
};

// Curve from threshold -inf (nothing flagged) to +inf (everything flagged),
// one step per distinct score. Both classes must be present.
std::vector<RocPoint> roc_points(const ScoredSet& s);

// Trapezoidal area under roc_points. Ties between classes earn half credit,
// matching the rank statistic.
double roc_auc(const ScoredSet& s);

struct ThresholdChoice {
  double gamma = 0.0;
  double accuracy = 0.0;
};

// Accuracy of "unsafe iff score < gamma" (ties on gamma stay safe).
double accuracy_at(const ScoredSet& s, double gamma);

// Exhaustive search over midpoints of adjacent distinct scores plus sentinels
// below the minimum and above the maximum. Ties in accuracy take the smallest
// gamma, which keeps the flagged set minimal.
ThresholdChoice tune_threshold(const ScoredSet& s);

// Share of truly unsafe examples that were flagged AND attributed to the right
// blacklist concept.
double fine_grained_accuracy(const std::vector<bool>& truth_unsafe,
                             const std::vector<bool>& flagged,
                             const std::vector<std::string>& top_concept_id,
                             const std::vector<std::string>& truth_concept_id);

void write_roc_csv(const std::string& path, const std::vector<RocPoint>& points);

// Reference baselines the learned guard is compared against.
// Case-insensitive substring match against any blacklist concept.
bool baseline_blacklist_hit(std::string_view prompt, const std::vector<ConceptRef>& concepts);

// Min over concepts of 1 - cosine between mean-pooled raw encodings.
double baseline_rawcosine_score(const ToyEncoder& encoder, std::string_view prompt,
                                const std::vector<ConceptRef>& concepts);

}  // namespace lg
