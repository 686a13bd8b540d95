#include "latentguard/gcg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "latentguard/rng.hpp"

namespace lg {

namespace {

constexpr std::string_view kSlot = "<ADV>";

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return out;
}

double mean_pool_loss(const std::vector<double>& m, const std::vector<double>& target) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double d = m[i] - target[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

void GcgConfig::validate() const {
  if (n_adv_tokens <= 0 || iterations <= 0 || candidate_batch <= 0 || top_k <= 0 ||
      synonym_filter_size <= 0)
    throw std::invalid_argument("gcg config fields must all be positive");
}

AttackVocab vocab_from_records(const std::vector<PromptRecord>& records,
                               const ToyEncoder& encoder) {
  AttackVocab v;
  std::unordered_set<std::string> seen_words;
  std::unordered_set<int> seen_ids;
  auto add_words = [&](const std::string& text) {
    std::string word;
    auto flush = [&]() {
      if (word.empty()) return;
      if (seen_words.insert(word).second) {
        const int id = encoder.tokenize(word)[0];
        if (seen_ids.insert(id).second) {
          v.words.push_back(word);
          v.token_ids.push_back(id);
        }
      }
      word.clear();
    };
    for (unsigned char c : text) {
      if (std::isalnum(c))
        word.push_back(char(std::tolower(c)));
      else
        flush();
    }
    flush();
  };
  for (const auto& r : records) {
    add_words(r.unsafe_prompt);
    add_words(r.safe_prompt);
    add_words(r.concept_text);
  }
  return v;
}

AttackVocab token_space_vocab(const ToyEncoder& encoder, std::uint64_t seed) {
  static constexpr char kCons[] = "bcdfghjklmnpqrstvwz";
  static constexpr char kVowels[] = "aeiou";
  const int n_ids = encoder.config().vocab_size;
  AttackVocab v;
  std::vector<char> have(std::size_t(n_ids), 0);
  Rng rng(seed);
  int covered = 0;
  // coupon collector: ~n ln n mints cover the ids; 64n is ample headroom
  const std::int64_t budget = std::int64_t(n_ids) * 64;
  for (std::int64_t t = 0; t < budget && covered + 1 < n_ids; ++t) {
    std::string w;
    for (int i = 0; i < 3; ++i) {
      w.push_back(kCons[rng.below(sizeof(kCons) - 1)]);
      w.push_back(kVowels[rng.below(sizeof(kVowels) - 1)]);
    }
    const int id = encoder.tokenize(w)[0];
    if (id <= 0 || id >= n_ids || have[std::size_t(id)]) continue;
    have[std::size_t(id)] = 1;
    ++covered;
    v.words.push_back(std::move(w));
    v.token_ids.push_back(id);
  }
  return v;
}

std::vector<int> synonym_filter(int concept_token_id, const AttackVocab& vocab,
                                const ToyEncoder& encoder, int size) {
  if (size <= 0) throw std::invalid_argument("synonym filter size must be positive");
  if (std::size_t(size) >= vocab.size())
    throw std::invalid_argument("synonym filter size must be below the vocabulary size");
  const int d = encoder.config().d_text;
  const double* c = encoder.embedding(concept_token_id);
  double cn = 0.0;
  for (int j = 0; j < d; ++j) cn += c[j] * c[j];
  cn = std::max(std::sqrt(cn), 1e-12);

  std::vector<std::pair<double, std::size_t>> ranked;  // (cosine, vocab index)
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const double* e = encoder.embedding(vocab.token_ids[i]);
    double dot = 0.0, en = 0.0;
    for (int j = 0; j < d; ++j) {
      dot += c[j] * e[j];
      en += e[j] * e[j];
    }
    ranked.push_back({dot / (cn * std::max(std::sqrt(en), 1e-12)), i});
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  std::set<int> excluded{concept_token_id};
  for (int i = 0; i < size; ++i) excluded.insert(vocab.token_ids[ranked[std::size_t(i)].second]);
  return {excluded.begin(), excluded.end()};
}

GcgResult gcg_attack(std::string_view template_text, const EncodedText& target,
                     const ToyEncoder& encoder, const AttackVocab& vocab, const GcgConfig& cfg,
                     const std::vector<int>& excluded_tokens) {
  cfg.validate();
  validate_encoded(target);
  const auto first = template_text.find(kSlot);
  if (first == std::string_view::npos)
    throw std::invalid_argument("gcg template has no <ADV> slot");
  if (template_text.find(kSlot, first + kSlot.size()) != std::string_view::npos)
    throw std::invalid_argument("gcg template has more than one <ADV> slot");

  const std::unordered_set<int> excluded(excluded_tokens.begin(), excluded_tokens.end());
  std::vector<std::size_t> allowed;  // indices into vocab
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (!excluded.count(vocab.token_ids[i])) allowed.push_back(i);
  if (allowed.empty()) throw std::invalid_argument("gcg vocabulary is empty after filtering");

  // tokenize() maps wordless text to [pad]; skip such fragments entirely
  auto words_of = [&encoder](std::string_view s) {
    for (unsigned char c : s)
      if (std::isalnum(c)) return encoder.tokenize(s);
    return std::vector<int>{};
  };
  const std::vector<int> prefix = words_of(template_text.substr(0, first));
  const std::vector<int> suffix = words_of(template_text.substr(first + kSlot.size()));

  const std::vector<double> target_mean = target.mean_pooled();
  const int d = encoder.config().d_text;
  const int p_max = encoder.config().p_max;
  const std::size_t adv_at = prefix.size();

  Rng rng(derive_seed(cfg.seed, 97));
  std::vector<std::size_t> slot(std::size_t(cfg.n_adv_tokens));  // vocab indices
  for (auto& s : slot) s = allowed[std::size_t(rng.below(allowed.size()))];

  auto assemble = [&](const std::vector<std::size_t>& sl) {
    std::vector<int> ids = prefix;
    for (std::size_t s : sl) ids.push_back(vocab.token_ids[s]);
    ids.insert(ids.end(), suffix.begin(), suffix.end());
    if (std::int64_t(ids.size()) > p_max) ids.resize(std::size_t(p_max));
    return ids;
  };
  auto loss_of = [&](const std::vector<std::size_t>& sl) {
    return mean_pool_loss(encoder.encode_tokens(assemble(sl)).mean_pooled(), target_mean);
  };

  GcgResult res;
  double cur = loss_of(slot);
  res.loss_trace.push_back(cur);

  // positions of the slot that survive truncation; if none, nothing can move
  std::vector<std::size_t> live_positions;
  for (int t = 0; t < cfg.n_adv_tokens; ++t)
    if (std::int64_t(adv_at) + t < p_max) live_positions.push_back(std::size_t(t));

  std::vector<std::pair<double, std::size_t>> scored(allowed.size());
  for (int it = 0; it < cfg.iterations && cur > 0.0 && !live_positions.empty(); ++it) {
    // d loss / d (selected embedding row) is shared across positions because
    // pooling is a plain mean: r = 2 (m - target) / P
    const std::vector<int> ids = assemble(slot);
    const std::vector<double> m = encoder.encode_tokens(ids).mean_pooled();
    std::vector<double> r(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) r[std::size_t(j)] = 2.0 * (m[std::size_t(j)] - target_mean[std::size_t(j)]) / double(ids.size());

    for (std::size_t i = 0; i < allowed.size(); ++i) {
      const double* e = encoder.embedding(vocab.token_ids[allowed[i]]);
      double g = 0.0;
      for (int j = 0; j < d; ++j) g += r[std::size_t(j)] * e[j];
      scored[i] = {g, i};
    }
    const std::size_t keep = std::min(std::size_t(cfg.top_k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + std::ptrdiff_t(keep), scored.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first < b.first;
                        return a.second < b.second;
                      });

    double best_loss = cur;
    std::size_t best_pos = 0, best_vocab = 0;
    bool found = false;
    for (int b = 0; b < cfg.candidate_batch; ++b) {
      const std::size_t pos = live_positions[std::size_t(rng.below(live_positions.size()))];
      const std::size_t cand = allowed[scored[std::size_t(rng.below(keep))].second];
      if (cand == slot[pos]) continue;
      std::vector<std::size_t> trial = slot;
      trial[pos] = cand;
      const double l = loss_of(trial);
      if (l < best_loss || (!found && l <= best_loss)) {
        best_loss = l;
        best_pos = pos;
        best_vocab = cand;
        found = true;
      }
    }
    if (found && best_loss <= cur) {
      slot[best_pos] = best_vocab;
      cur = best_loss;
    }
    res.loss_trace.push_back(cur);
  }

  res.final_loss = cur;
  for (std::size_t s : slot) {
    res.token_ids.push_back(vocab.token_ids[s]);
    res.words.push_back(vocab.words[s]);
  }
  return res;
}

AdversarialBuild make_adversarial_variant(const std::vector<PromptRecord>& records,
                                          const ToyEncoder& encoder, const AttackVocab& vocab,
                                          const GcgConfig& cfg) {
  cfg.validate();
  AdversarialBuild out;
  std::unordered_set<int> concept_ids;
  for (const auto& r : records)
    for (int t : encoder.tokenize(r.concept_text)) concept_ids.insert(t);

  // tokens usable on the safe side: far from every corpus concept, so the
  // control cannot smuggle in a near-synonym by luck
  constexpr double kControlNeighborCos = 0.35;
  std::vector<char> control_ok(vocab.size(), 1);
  {
    const int d = encoder.config().d_text;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      const double* e = encoder.embedding(vocab.token_ids[i]);
      double en = 0.0;
      for (int j = 0; j < d; ++j) en += e[j] * e[j];
      en = std::max(std::sqrt(en), 1e-12);
      for (int cid : concept_ids) {
        const double* c = encoder.embedding(cid);
        double dot = 0.0, cn = 0.0;
        for (int j = 0; j < d; ++j) {
          dot += e[j] * c[j];
          cn += c[j] * c[j];
        }
        if (dot / (en * std::max(std::sqrt(cn), 1e-12)) > kControlNeighborCos) {
          control_ok[i] = 0;
          break;
        }
      }
    }
  }
  std::uint64_t attack_index = 0;
  for (const auto& rec : records) {
    if (rec.variant != Variant::explicit_ || rec.split != Split::test) continue;
    const std::uint64_t my_index = attack_index++;
    try {
      const std::string hay = lower(rec.unsafe_prompt);
      const std::string needle = lower(rec.concept_text);
      const auto at = hay.find(needle);
      if (needle.empty() || at == std::string::npos)
        throw std::runtime_error("concept text not present in unsafe prompt");

      std::string templ = rec.unsafe_prompt;
      templ.replace(at, needle.size(), kSlot);

      std::vector<int> excluded;
      if (cfg.use_filter) {
        std::set<int> merged;
        for (int tok : encoder.tokenize(rec.concept_text)) {
          for (int e : synonym_filter(tok, vocab, encoder, cfg.synonym_filter_size))
            merged.insert(e);
        }
        excluded.assign(merged.begin(), merged.end());
      }

      GcgConfig per = cfg;
      per.seed = derive_seed(cfg.seed, my_index);
      const GcgResult attack =
          gcg_attack(templ, encoder.encode(rec.unsafe_prompt), encoder, vocab, per, excluded);

      std::string filled;
      for (std::size_t i = 0; i < attack.words.size(); ++i) {
        if (i) filled.push_back(' ');
        filled += attack.words[i];
      }

      // length-matched control: the safe side gets the same slot filled with
      // random tokens from the attack's own candidate pool, so unsafe vs safe
      // differ only in whether the filling was optimized
      const std::unordered_set<int> banned(excluded.begin(), excluded.end());
      Rng control_rng(derive_seed(per.seed, 7127));
      std::string control;
      for (int t = 0; t < cfg.n_adv_tokens; ++t) {
        std::size_t pick = 0;
        int tries = 0;
        do {
          pick = std::size_t(control_rng.below(vocab.size()));
          if (++tries > 10000) throw std::runtime_error("control pool exhausted");
        } while (!control_ok[pick] || banned.count(vocab.token_ids[pick]));
        if (t) control.push_back(' ');
        control += vocab.words[pick];
      }
      std::string safe_templ = rec.unsafe_prompt;
      safe_templ.replace(at, needle.size(), control);

      PromptRecord adv = rec;
      adv.id = rec.id + "-adv";
      adv.variant = Variant::adversarial;
      adv.unsafe_prompt = templ;
      adv.unsafe_prompt.replace(adv.unsafe_prompt.find(kSlot), kSlot.size(), filled);
      adv.safe_prompt = safe_templ;
      adv.gcg_loss = attack.final_loss;
      out.records.push_back(std::move(adv));
    } catch (const std::exception& e) {
      out.failures.push_back(rec.id + ": " + e.what());
    }
  }
  return out;
}

}  // namespace lg
