#include "latentguard/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "latentguard/rng.hpp"

namespace lg {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool contains_ci(std::string_view haystack, std::string_view needle) {
  return lower(haystack).find(lower(needle)) != std::string::npos;
}

[[noreturn]] void record_fail(const std::string& id, const std::string& what) {
  throw std::runtime_error("invalid record \"" + id + "\": " + what);
}

struct Template {
  std::vector<std::string> words;  // fillers
  std::size_t slot;                // insertion point in [0, words.size()]

  std::string realize(const std::string& fill) const {
    std::string out;
    for (std::size_t i = 0; i <= words.size(); ++i) {
      if (i == slot) {
        if (!out.empty()) out.push_back(' ');
        out += fill;
      }
      if (i < words.size()) {
        if (!out.empty()) out.push_back(' ');
        out += words[i];
      }
    }
    return out;
  }
};

// Fixed-length pronounceable pseudo-words with unique strings AND unique token
// ids, so hash-bucket collisions cannot alias two different roles.
class WordMint {
 public:
  WordMint(Rng& rng, const ToyEncoder& encoder) : rng_(rng), encoder_(encoder) {}

  std::string next() {
    for (int attempt = 0; attempt < 100000; ++attempt) {
      const std::string w = draw();
      if (seen_words_.count(w)) continue;
      const auto ids = encoder_.tokenize(w);
      if (ids.size() != 1 || seen_ids_.count(ids[0])) continue;
      seen_words_.insert(w);
      seen_ids_.insert(ids[0]);
      return w;
    }
    throw std::runtime_error("pseudo-word generator exhausted (vocabulary too small?)");
  }

  // Scans `candidates` random words and keeps the one whose embedding is most
  // similar to `anchor`'s: a synonym here is an encoder-space neighbour, the
  // same relation real synonyms have inside a semantic encoder. Never returns
  // the anchor's own token id, so synonym detection is not a string match.
  std::string next_like(const std::string& anchor, int candidates) {
    const auto anchor_ids = encoder_.tokenize(anchor);
    if (anchor_ids.size() != 1) throw std::logic_error("anchor must be a single token");
    const int d = encoder_.config().d_text;
    const double* ea = encoder_.embedding(anchor_ids[0]);
    double ea_norm = 0.0;
    for (int j = 0; j < d; ++j) ea_norm += ea[j] * ea[j];
    ea_norm = std::sqrt(ea_norm);

    std::string best_word;
    int best_id = -1;
    double best_cos = -2.0;
    for (int k = 0; k < candidates; ++k) {
      const std::string w = draw();
      if (seen_words_.count(w)) continue;
      const auto ids = encoder_.tokenize(w);
      if (ids.size() != 1 || ids[0] == anchor_ids[0] || seen_ids_.count(ids[0])) continue;
      const double* ew = encoder_.embedding(ids[0]);
      double dot = 0.0, n2 = 0.0;
      for (int j = 0; j < d; ++j) {
        dot += ea[j] * ew[j];
        n2 += ew[j] * ew[j];
      }
      const double cos = dot / (ea_norm * std::sqrt(n2));
      if (cos > best_cos) {
        best_cos = cos;
        best_word = w;
        best_id = ids[0];
      }
    }
    if (best_id < 0) throw std::runtime_error("no usable alias candidate found");
    seen_words_.insert(best_word);
    seen_ids_.insert(best_id);
    return best_word;
  }

 private:
  std::string draw() {
    static constexpr char kCons[] = "bcdfghjklmnpqrstvwz";
    static constexpr char kVowels[] = "aeiou";
    std::string w;
    for (int s = 0; s < 3; ++s) {
      w.push_back(kCons[rng_.below(sizeof(kCons) - 1)]);
      w.push_back(kVowels[rng_.below(sizeof(kVowels) - 1)]);
    }
    return w;
  }

  Rng& rng_;
  const ToyEncoder& encoder_;
  std::unordered_set<std::string> seen_words_;
  std::unordered_set<int> seen_ids_;
};

struct ConceptSpec {
  std::string id;
  std::string word;
  std::string alias;
  std::string safe_word;
};

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw std::logic_error("bad split");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::explicit_: return "explicit";
    case Variant::synonym: return "synonym";
    case Variant::adversarial: return "adversarial";
  }
  throw std::logic_error("bad variant");
}

std::string to_string(Distribution d) {
  return d == Distribution::id ? "ID" : "OOD";
}

namespace {

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::runtime_error("unknown split \"" + s + "\"");
}

Variant parse_variant(const std::string& s) {
  if (s == "explicit") return Variant::explicit_;
  if (s == "synonym") return Variant::synonym;
  if (s == "adversarial") return Variant::adversarial;
  throw std::runtime_error("unknown variant \"" + s + "\"");
}

Distribution parse_distribution(const std::string& s) {
  if (s == "ID") return Distribution::id;
  if (s == "OOD") return Distribution::ood;
  throw std::runtime_error("unknown distribution \"" + s + "\"");
}

}  // namespace

std::vector<PromptRecord> generate_synthetic(const SynthConfig& cfg, const ToyEncoder& encoder) {
  if (cfg.n_id_concepts <= 0 || cfg.n_ood_concepts < 0)
    throw std::invalid_argument("generator needs at least one ID concept");
  if (cfg.train_per_concept <= 0 || cfg.val_per_concept <= 0 || cfg.test_per_concept <= 0)
    throw std::invalid_argument("prompts per concept must be positive");
  if (cfg.template_pool_size <= 0 || cfg.filler_vocab < cfg.max_template_words)
    throw std::invalid_argument("template pool needs a filler vocabulary >= max_template_words");
  if (cfg.min_template_words < 1 || cfg.max_template_words < cfg.min_template_words)
    throw std::invalid_argument("template word range is invalid");
  if (cfg.max_template_words + 1 > encoder.config().p_max)
    throw std::invalid_argument("templates would exceed the encoder p_max");
  if (cfg.alias_plant_prob < 0.0 || cfg.alias_plant_prob > 1.0)
    throw std::invalid_argument("alias_plant_prob must lie in [0, 1]");
  if (cfg.alias_candidates < 1) throw std::invalid_argument("alias_candidates must be positive");

  Rng word_rng(derive_seed(cfg.seed, 1));
  Rng template_rng(derive_seed(cfg.seed, 2));
  Rng pick_rng(derive_seed(cfg.seed, 3));
  Rng plant_rng(derive_seed(cfg.seed, 4));

  WordMint mint(word_rng, encoder);

  std::vector<std::string> fillers;
  for (int i = 0; i < cfg.filler_vocab; ++i) fillers.push_back(mint.next());

  std::vector<Template> pool;
  for (int t = 0; t < cfg.template_pool_size; ++t) {
    const int len = cfg.min_template_words +
                    int(template_rng.below(std::uint64_t(cfg.max_template_words - cfg.min_template_words + 1)));
    Template tpl;
    // draw distinct fillers for one template
    std::vector<std::size_t> idx(fillers.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int w = 0; w < len; ++w) {
      const std::size_t j = w + std::size_t(template_rng.below(idx.size() - std::size_t(w)));
      std::swap(idx[std::size_t(w)], idx[j]);
      tpl.words.push_back(fillers[idx[std::size_t(w)]]);
    }
    tpl.slot = std::size_t(template_rng.below(std::uint64_t(len + 1)));
    pool.push_back(std::move(tpl));
  }

  auto make_concepts = [&](int n, Distribution dist) {
    std::vector<ConceptSpec> out;
    for (int i = 0; i < n; ++i) {
      ConceptSpec c;
      std::ostringstream id;
      id << "c-" << (dist == Distribution::id ? "id" : "ood") << "-" << i;
      c.id = id.str();
      c.word = mint.next();
      c.alias = mint.next_like(c.word, cfg.alias_candidates);
      c.safe_word = mint.next();
      out.push_back(std::move(c));
    }
    return out;
  };
  const auto id_concepts = make_concepts(cfg.n_id_concepts, Distribution::id);
  const auto ood_concepts = make_concepts(cfg.n_ood_concepts, Distribution::ood);

  std::vector<PromptRecord> records;
  auto emit = [&](const ConceptSpec& c, Distribution dist, Split split, Variant variant, int j,
                  const Template& tpl) {
    PromptRecord r;
    std::ostringstream id;
    id << to_string(dist) << "-" << c.id.substr(c.id.rfind('-') + 1) << "-" << to_string(split) << "-"
       << to_string(variant) << "-" << j;
    r.id = lower(id.str());
    r.concept_id = c.id;
    r.concept_text = c.word;
    r.unsafe_prompt = tpl.realize(variant == Variant::synonym ? c.alias : c.word);
    r.safe_prompt = tpl.realize(c.safe_word);
    r.split = split;
    r.variant = variant;
    r.distribution = dist;
    records.push_back(std::move(r));
  };

  auto emit_concept = [&](const ConceptSpec& c, Distribution dist) {
    struct SplitPlan {
      Split split;
      int count;
    };
    const SplitPlan plans[] = {{Split::train, dist == Distribution::id ? cfg.train_per_concept : 0},
                               {Split::val, cfg.val_per_concept},
                               {Split::test, cfg.test_per_concept}};
    for (const auto& plan : plans) {
      for (int j = 0; j < plan.count; ++j) {
        const Template& tpl = pool[pick_rng.below(pool.size())];
        emit(c, dist, plan.split, Variant::explicit_, j, tpl);
        if (plan.split == Split::train) {
          // occasional alias exposure, the toy analogue of synonyms turning up
          // organically in scraped training text
          if (plant_rng.uniform() < cfg.alias_plant_prob) emit(c, dist, plan.split, Variant::synonym, j, tpl);
        } else {
          emit(c, dist, plan.split, Variant::synonym, j, tpl);
        }
      }
    }
  };

  for (const auto& c : id_concepts) emit_concept(c, Distribution::id);
  for (const auto& c : ood_concepts) emit_concept(c, Distribution::ood);

  validate_records(records);
  return records;
}

void validate_records(const std::vector<PromptRecord>& records) {
  std::unordered_map<std::string, std::string> concept_by_id;
  std::set<std::string> id_vocab, ood_vocab;
  for (const auto& r : records) {
    if (r.id.empty()) throw std::runtime_error("invalid record \"\": empty id");
    if (r.concept_id.empty() || r.concept_text.empty()) record_fail(r.id, "empty concept");
    if (r.unsafe_prompt.empty() || r.safe_prompt.empty()) record_fail(r.id, "empty prompt");
    const auto [it, fresh] = concept_by_id.emplace(r.concept_id, r.concept_text);
    if (!fresh && it->second != r.concept_text)
      record_fail(r.id, "concept_id \"" + r.concept_id + "\" maps to two different concepts");
    if (contains_ci(r.safe_prompt, r.concept_text))
      record_fail(r.id, "concept appears in safe_prompt");
    switch (r.variant) {
      case Variant::explicit_:
        if (!contains_ci(r.unsafe_prompt, r.concept_text))
          record_fail(r.id, "explicit variant but concept not in unsafe_prompt");
        break;
      case Variant::synonym:
      case Variant::adversarial:
        if (contains_ci(r.unsafe_prompt, r.concept_text))
          record_fail(r.id, to_string(r.variant) + " variant but concept appears in unsafe_prompt");
        break;
    }
    if (r.gcg_loss && r.variant != Variant::adversarial)
      record_fail(r.id, "gcg_loss on a non-adversarial record");
    (r.distribution == Distribution::id ? id_vocab : ood_vocab).insert(lower(r.concept_text));
  }
  for (const auto& w : id_vocab)
    if (ood_vocab.count(w))
      throw std::runtime_error("ID and OOD concept vocabularies overlap on \"" + w + "\"");
}

std::string to_jsonl_line(const PromptRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["concept_id"] = r.concept_id;
  j["concept"] = r.concept_text;
  j["unsafe_prompt"] = r.unsafe_prompt;
  j["safe_prompt"] = r.safe_prompt;
  j["split"] = to_string(r.split);
  j["variant"] = to_string(r.variant);
  j["distribution"] = to_string(r.distribution);
  if (r.gcg_loss) j["gcg_loss"] = *r.gcg_loss;
  return j.dump();
}

PromptRecord parse_jsonl_line(const std::string& line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(where + ": not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error(where + ": record must be a JSON object");
  static const std::set<std::string> kKnown = {"id",          "concept_id", "concept",
                                               "unsafe_prompt", "safe_prompt", "split",
                                               "variant",     "distribution", "gcg_loss"};
  for (const auto& [key, _] : j.items())
    if (!kKnown.count(key)) throw std::runtime_error(where + ": unknown field \"" + key + "\"");
  PromptRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.concept_id = j.at("concept_id").get<std::string>();
    r.concept_text = j.at("concept").get<std::string>();
    r.unsafe_prompt = j.at("unsafe_prompt").get<std::string>();
    r.safe_prompt = j.at("safe_prompt").get<std::string>();
    r.split = parse_split(j.at("split").get<std::string>());
    r.variant = parse_variant(j.at("variant").get<std::string>());
    r.distribution = parse_distribution(j.at("distribution").get<std::string>());
    if (j.contains("gcg_loss")) r.gcg_loss = j.at("gcg_loss").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(where + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(where + ": " + e.what());
  }
  return r;
}

void save_jsonl(const std::string& path, const std::vector<PromptRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open \"" + path + "\" for writing");
  for (const auto& r : records) f << to_jsonl_line(r) << '\n';
  if (!f) throw std::runtime_error("write failed for \"" + path + "\"");
}

std::vector<PromptRecord> load_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open \"" + path + "\" for reading");
  std::vector<PromptRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_jsonl_line(line, line_no));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(path + ": " + e.what());
    }
  }
  try {
    validate_records(out);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return out;
}

namespace {
const char* split_file(Split s) {
  switch (s) {
    case Split::train: return "copro.train.jsonl";
    case Split::val: return "copro.val.jsonl";
    case Split::test: return "copro.test.jsonl";
  }
  throw std::logic_error("bad split");
}
}  // namespace

void save_dataset(const std::string& dir, const std::vector<PromptRecord>& records) {
  std::filesystem::create_directories(dir);
  for (Split s : {Split::train, Split::val, Split::test}) {
    std::vector<PromptRecord> part;
    for (const auto& r : records)
      if (r.split == s) part.push_back(r);
    save_jsonl((std::filesystem::path(dir) / split_file(s)).string(), part);
  }
}

std::vector<PromptRecord> load_dataset(const std::string& dir) {
  std::vector<PromptRecord> out;
  for (Split s : {Split::train, Split::val, Split::test}) {
    auto part = load_jsonl((std::filesystem::path(dir) / split_file(s)).string());
    for (auto& r : part) {
      if (r.split != s)
        throw std::runtime_error(std::string(split_file(s)) + ": record \"" + r.id +
                                 "\" has split " + to_string(r.split));
      out.push_back(std::move(r));
    }
  }
  validate_records(out);
  return out;
}

std::vector<ConceptRef> distinct_concepts(const std::vector<PromptRecord>& records, Distribution d) {
  std::vector<ConceptRef> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (r.distribution != d) continue;
    if (seen.insert(r.concept_id).second) out.push_back({r.concept_id, r.concept_text});
  }
  return out;
}

SplitStats split_stats(const std::vector<PromptRecord>& records) {
  SplitStats s;
  std::unordered_set<std::string> idc, oodc;
  for (const auto& r : records) {
    s.counts[int(r.split)][int(r.variant)][int(r.distribution)]++;
    (r.distribution == Distribution::id ? idc : oodc).insert(r.concept_id);
  }
  s.id_concepts = std::int64_t(idc.size());
  s.ood_concepts = std::int64_t(oodc.size());
  return s;
}

void print_split_stats(std::ostream& os, const SplitStats& s) {
  os << "concepts: " << s.id_concepts << " ID, " << s.ood_concepts << " OOD\n";
  os << "split      variant      ID     OOD\n";
  for (int sp = 0; sp < 3; ++sp)
    for (int v = 0; v < 3; ++v) {
      const auto id_n = s.counts[sp][v][0], ood_n = s.counts[sp][v][1];
      if (id_n == 0 && ood_n == 0) continue;
      char buf[80];
      std::snprintf(buf, sizeof(buf), "%-10s %-11s %5lld %7lld\n", to_string(Split(sp)).c_str(),
                    to_string(Variant(v)).c_str(), static_cast<long long>(id_n),
                    static_cast<long long>(ood_n));
      os << buf;
    }
}

}  // namespace lg
