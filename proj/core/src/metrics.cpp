#include "latentguard/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace lg {

namespace {

void check_set(const ScoredSet& s) {
  if (s.scores.size() != s.unsafe.size())
    throw std::invalid_argument("scored set has mismatched score/label lengths");
  if (s.scores.empty()) throw std::invalid_argument("scored set is empty");
  for (double v : s.scores)
    if (!std::isfinite(v)) throw std::invalid_argument("scored set contains a non-finite score");
}

bool both_classes(const ScoredSet& s) {
  bool has_pos = false, has_neg = false;
  for (bool u : s.unsafe) (u ? has_pos : has_neg) = true;
  return has_pos && has_neg;
}

}  // namespace

std::vector<RocPoint> roc_points(const ScoredSet& s) {
  check_set(s);
  if (!both_classes(s))
    throw std::invalid_argument("roc curve needs at least one unsafe and one safe example");
  std::vector<std::size_t> order(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&s](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

  std::size_t total_pos = 0;
  for (bool u : s.unsafe) total_pos += u ? 1 : 0;
  const std::size_t total_neg = s.size() - total_pos;

  std::vector<RocPoint> pts;
  pts.push_back({0.0, 0.0, -std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    const double v = s.scores[order[i]];
    // admit every example sharing this score, then emit one point: the
    // threshold just above v flags all of them
    while (i < order.size() && s.scores[order[i]] == v) {
      (s.unsafe[order[i]] ? tp : fp) += 1;
      ++i;
    }
    pts.push_back({double(fp) / double(total_neg), double(tp) / double(total_pos),
                   i < order.size() ? (v + s.scores[order[i]]) / 2.0
                                    : std::numeric_limits<double>::infinity()});
  }
  return pts;
}

double roc_auc(const ScoredSet& s) {
  const auto pts = roc_points(s);
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return area;
}

double accuracy_at(const ScoredSet& s, double gamma) {
  check_set(s);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool flagged = s.scores[i] < gamma;
    correct += (flagged == bool(s.unsafe[i])) ? 1 : 0;
  }
  return double(correct) / double(s.size());
}

ThresholdChoice tune_threshold(const ScoredSet& s) {
  check_set(s);
  std::vector<double> sorted = s.scores;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  std::vector<double> candidates;
  candidates.push_back(-std::numeric_limits<double>::infinity());  // flags nothing
  for (std::size_t i = 1; i < sorted.size(); ++i)
    candidates.push_back((sorted[i - 1] + sorted[i]) / 2.0);
  candidates.push_back(std::numeric_limits<double>::infinity());  // flags everything

  ThresholdChoice best{candidates.front(), -1.0};
  for (double g : candidates) {
    const double acc = accuracy_at(s, g);
    if (acc > best.accuracy) best = {g, acc};
  }
  return best;
}

double fine_grained_accuracy(const std::vector<bool>& truth_unsafe,
                             const std::vector<bool>& flagged,
                             const std::vector<std::string>& top_concept_id,
                             const std::vector<std::string>& truth_concept_id) {
  const std::size_t n = truth_unsafe.size();
  if (flagged.size() != n || top_concept_id.size() != n || truth_concept_id.size() != n)
    throw std::invalid_argument("fine-grained accuracy inputs have mismatched lengths");
  std::size_t unsafe_total = 0, hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!truth_unsafe[i]) continue;
    ++unsafe_total;
    if (flagged[i] && top_concept_id[i] == truth_concept_id[i]) ++hit;
  }
  if (unsafe_total == 0)
    throw std::invalid_argument("fine-grained accuracy needs at least one unsafe example");
  return double(hit) / double(unsafe_total);
}

void write_roc_csv(const std::string& path, const std::vector<RocPoint>& points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "threshold,fpr,tpr\n" << std::setprecision(17);
  for (const auto& p : points) out << p.threshold << "," << p.fpr << "," << p.tpr << "\n";
  if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

bool baseline_blacklist_hit(std::string_view prompt, const std::vector<ConceptRef>& concepts) {
  std::string hay(prompt);
  std::transform(hay.begin(), hay.end(), hay.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  for (const auto& c : concepts) {
    std::string needle = c.text;
    std::transform(needle.begin(), needle.end(), needle.begin(),
                   [](unsigned char ch) { return char(std::tolower(ch)); });
    if (!needle.empty() && hay.find(needle) != std::string::npos) return true;
  }
  return false;
}

double baseline_rawcosine_score(const ToyEncoder& encoder, std::string_view prompt,
                                const std::vector<ConceptRef>& concepts) {
  if (concepts.empty()) throw std::invalid_argument("raw-cosine baseline needs concepts");
  const std::vector<double> p = encoder.encode(prompt).mean_pooled();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : concepts) {
    const std::vector<double> q = encoder.encode(c.text).mean_pooled();
    double dot = 0.0, np = 0.0, nq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      dot += p[i] * q[i];
      np += p[i] * p[i];
      nq += q[i] * q[i];
    }
    const double denom = std::max(std::sqrt(np) * std::sqrt(nq), 1e-12);
    best = std::min(best, 1.0 - dot / denom);
  }
  return best;
}

}  // namespace lg
