#include "latentguard/trainer.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

namespace lg {

TrainBatch sample_batch(const std::vector<PromptRecord>& train_records, int batch_size, Rng& rng) {
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  // group train prompts by concept, in first-appearance order
  std::vector<std::string> concept_order;
  std::unordered_map<std::string, std::vector<const PromptRecord*>> by_concept;
  for (const auto& r : train_records) {
    if (r.split != Split::train) continue;
    auto& bucket = by_concept[r.concept_id];
    if (bucket.empty()) concept_order.push_back(r.concept_id);
    bucket.push_back(&r);
  }
  if (std::int64_t(concept_order.size()) < batch_size)
    throw std::invalid_argument("batch_size " + std::to_string(batch_size) + " exceeds the " +
                                std::to_string(concept_order.size()) + " distinct train concepts");

  // partial Fisher-Yates: first batch_size entries are a uniform draw
  for (int i = 0; i < batch_size; ++i) {
    const std::size_t j = std::size_t(i) + std::size_t(rng.below(concept_order.size() - std::size_t(i)));
    std::swap(concept_order[std::size_t(i)], concept_order[j]);
  }

  TrainBatch batch;
  for (int i = 0; i < batch_size; ++i) {
    const auto& bucket = by_concept[concept_order[std::size_t(i)]];
    const PromptRecord* rec = bucket[rng.below(bucket.size())];
    batch.concept_ids.push_back(rec->concept_id);
    batch.concepts.push_back(rec->concept_text);
    batch.unsafe_prompts.push_back(rec->unsafe_prompt);
    batch.safe_prompts.push_back(rec->safe_prompt);
  }
  return batch;
}

Tensor supcon_loss(std::span<const Tensor> h_c, std::span<const Tensor> h_u,
                   std::span<const Tensor> h_s, double tau, bool safe_negatives) {
  const std::size_t b = h_c.size();
  if (b == 0) throw std::invalid_argument("supcon_loss needs at least one anchor");
  if (h_u.size() != b || h_s.size() != b)
    throw std::invalid_argument("supcon_loss input spans must have equal size");
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  const double inv_tau = 1.0 / tau;

  Tensor total;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<Tensor> cands;
    const Tensor pos = scale(dot(h_c[i], h_u[i]), inv_tau);
    cands.push_back(pos);
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) cands.push_back(scale(dot(h_c[i], h_u[j]), inv_tau));
    if (safe_negatives) {
      cands.push_back(scale(dot(h_c[i], h_s[i]), inv_tau));
      for (std::size_t j = 0; j < b; ++j)
        if (j != i) cands.push_back(scale(dot(h_c[i], h_s[j]), inv_tau));
    }
    const Tensor term = sub(logsumexp(concat_scalars(cands)), pos);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

namespace {

// Per-run cache so each distinct text is encoded exactly once.
class EncodeCache {
 public:
  EncodeCache(const ToyEncoder& encoder) : encoder_(encoder) {}

  const EncodedText& get(const std::string& text) {
    auto it = cache_.find(text);
    if (it == cache_.end()) it = cache_.emplace(text, encoder_.encode(text)).first;
    return it->second;
  }

 private:
  const ToyEncoder& encoder_;
  std::unordered_map<std::string, EncodedText> cache_;
};

}  // namespace

TrainResult train(const EmbeddingMapConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::vector<PromptRecord>& records, const ToyEncoder& encoder,
                  std::ostream* log) {
  if (train_cfg.iterations <= 0) throw std::invalid_argument("iterations must be positive");

  TrainResult result;
  result.params = init_params(model_cfg);

  AdamWConfig opt_cfg;
  opt_cfg.lr = train_cfg.lr;
  opt_cfg.weight_decay = train_cfg.weight_decay;
  AdamW opt(opt_cfg, result.params.all());

  Rng rng(derive_seed(train_cfg.seed, 7));
  EncodeCache cache(encoder);

  // the trainer never sees OOD concepts or any val/test prompt
  std::vector<PromptRecord> train_records;
  for (const auto& r : records)
    if (r.split == Split::train && r.distribution == Distribution::id) train_records.push_back(r);

  for (int it = 0; it < train_cfg.iterations; ++it) {
    const TrainBatch batch = sample_batch(train_records, train_cfg.batch_size, rng);
    std::vector<Tensor> h_c, h_u, h_s;
    for (std::size_t i = 0; i < batch.concepts.size(); ++i) {
      const EncodedText& zc = cache.get(batch.concepts[i]);
      const GuardEmbeddings eu = forward_pair(result.params, zc, cache.get(batch.unsafe_prompts[i]));
      h_c.push_back(eu.h_c);
      h_u.push_back(eu.h_p);
      if (train_cfg.safe_negatives) {
        const GuardEmbeddings es = forward_pair(result.params, zc, cache.get(batch.safe_prompts[i]));
        h_s.push_back(es.h_p);
      } else {
        h_s.push_back(eu.h_p);  // placeholder, unused by the loss in this mode
      }
    }
    Tensor loss = supcon_loss(h_c, h_u, h_s, train_cfg.temperature, train_cfg.safe_negatives);
    const double loss_value = loss.scalar();
    if (!std::isfinite(loss_value))
      throw std::runtime_error("training aborted: non-finite loss at iteration " + std::to_string(it));
    backward(loss);
    opt.step();
    result.loss_trace.push_back(loss_value);
    if (log && (it % 100 == 0 || it + 1 == train_cfg.iterations))
      *log << "iter " << it << " loss " << loss_value << "\n";
  }
  return result;
}

void write_loss_csv(const std::string& path, const std::vector<double>& trace) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open \"" + path + "\" for writing");
  f << "iteration,loss\n";
  f.precision(17);
  for (std::size_t i = 0; i < trace.size(); ++i) f << i << "," << trace[i] << "\n";
  if (!f) throw std::runtime_error("write failed for \"" + path + "\"");
}

namespace {

// random encodings with realistic magnitudes for gradient probing
EncodedText random_encoded(Rng& rng, int p_max, int d_text, int valid) {
  EncodedText z;
  z.features = Mat<double>(p_max, d_text);
  z.mask.assign(std::size_t(p_max), 0);
  for (int i = 0; i < valid; ++i) {
    z.mask[std::size_t(i)] = 1;
    for (int j = 0; j < d_text; ++j) z.features.at(i, j) = rng.gaussian() / std::sqrt(double(d_text));
  }
  return z;
}

}  // namespace

GradCheckResult grad_check(const EmbeddingMapConfig& cfg, double tau, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 11));
  const int b = 2 + int(rng.below(2));  // 2..3 anchors
  const int p_max = 4;

  EmbeddingMapConfig probe_cfg = cfg;
  probe_cfg.seed = derive_seed(seed, 12);
  EmbeddingMapParams params = init_params(probe_cfg);

  std::vector<EncodedText> zc, zu, zs;
  for (int i = 0; i < b; ++i) {
    zc.push_back(random_encoded(rng, p_max, cfg.d_text, 1 + int(rng.below(2))));
    zu.push_back(random_encoded(rng, p_max, cfg.d_text, 2 + int(rng.below(std::uint64_t(p_max - 1)))));
    zs.push_back(random_encoded(rng, p_max, cfg.d_text, 2 + int(rng.below(std::uint64_t(p_max - 1)))));
  }

  auto eval_loss = [&]() {
    std::vector<Tensor> h_c, h_u, h_s;
    for (int i = 0; i < b; ++i) {
      const GuardEmbeddings eu = forward_pair(params, zc[std::size_t(i)], zu[std::size_t(i)]);
      const GuardEmbeddings es = forward_pair(params, zc[std::size_t(i)], zs[std::size_t(i)]);
      h_c.push_back(eu.h_c);
      h_u.push_back(eu.h_p);
      h_s.push_back(es.h_p);
    }
    return supcon_loss(h_c, h_u, h_s, tau);
  };

  Tensor loss = eval_loss();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  auto tensors = params.all();
  for (auto& t : tensors) analytic.push_back(t.grad());

  constexpr double kStep = 1e-5;
  GradCheckResult res;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto& values = tensors[k].leaf_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + kStep;
      const double hi = eval_loss().scalar();
      values[i] = saved - kStep;
      const double lo = eval_loss().scalar();
      values[i] = saved;
      const double numeric = (hi - lo) / (2.0 * kStep);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      res.max_rel_err = std::max(res.max_rel_err, err);
      ++res.checked_params;
    }
  }
  return res;
}

}  // namespace lg
