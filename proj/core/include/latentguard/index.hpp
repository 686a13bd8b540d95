#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentguard/dataset.hpp"
#include "latentguard/encoder.hpp"
#include "latentguard/model.hpp"

namespace lg {

struct ScoreStats {
  std::uint64_t prompt_flops = 0;   // K/V/U projections, independent of blacklist size
  std::uint64_t concept_flops = 0;  // per-concept attention work
};

struct GuardVerdict {
  bool unsafe = false;
  double min_distance = 0.0;
  std::string top_concept_id;   // argmin concept
  std::string top_concept;
};

struct BatchItem {
  GuardVerdict verdict;
  std::optional<std::string> error;  // set when this item failed; batch continues
};

// Frozen blacklist index. Concept-side embeddings (h_c) and per-head queries
// are precomputed at build time; scoring a prompt projects it once per head
// and reuses those projections across every concept. The default instantiation
// is float for serving; the double one exists to cross-check against the
// training-path forward.
template <typename T>
struct ConceptIndexT {
  EmbeddingMapConfig cfg;
  EncoderConfig encoder_cfg;
  double gamma = 0.0;
  std::vector<std::string> concept_ids;
  std::vector<std::string> concept_texts;
  Mat<T> h_c;  // n_concepts x d_out, unit rows
  // Concept query rows for all concepts, concatenated concept-major and stored
  // transposed (d x total_rows) so the scoring loop streams each head's block
  // once with contiguous accesses. Concept j owns columns
  // [row_offset[j], row_offset[j] + concept_rows[j]).
  std::vector<Mat<T>> q_cat;  // per head, d x total_rows
  std::vector<std::int32_t> concept_rows;
  std::vector<std::int64_t> row_offset;
  // prompt-side projections
  std::vector<Mat<T>> w_k, w_v;  // per head, d_text x d
  std::vector<std::vector<T>> b_k, b_v;
  Mat<T> w_p;  // (heads*d) x d_out
  std::vector<T> b_p;

  std::int64_t size() const { return std::int64_t(concept_ids.size()); }
  std::int64_t memory_bytes() const;
  std::int64_t analytic_bytes() const;  // raw element bytes of the cached tensors
};

using ConceptIndex = ConceptIndexT<float>;

template <typename T>
ConceptIndexT<T> build_index(const EmbeddingMapParams& params,
                             const std::vector<ConceptRef>& concepts, const ToyEncoder& encoder,
                             double gamma);

// Distances (1 - cosine) between the prompt's conditional embedding and every
// concept's h_c, in index order. Matches per-concept forward_pair up to
// floating point reassociation.
template <typename T>
std::vector<double> score_prompt(const ConceptIndexT<T>& index, const EncodedText& z_p,
                                 ScoreStats* stats = nullptr);

// Unsafe iff some concept distance is strictly below gamma (ties are safe).
template <typename T>
GuardVerdict classify(const ConceptIndexT<T>& index, const ToyEncoder& encoder,
                      std::string_view prompt);

template <typename T>
std::vector<BatchItem> batch_classify(const ConceptIndexT<T>& index, const ToyEncoder& encoder,
                                      const std::vector<std::string>& prompts);

void save_index(const std::string& path, const ConceptIndex& index);
ConceptIndex load_index(const std::string& path);

// ---- implementation --------------------------------------------------------

namespace detail_index {

template <typename T>
Mat<T> cast_mat(const Tensor& t) {
  Mat<T> m(t.rows(), t.cols());
  const auto& v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) m.a[i] = T(v[i]);
  return m;
}

template <typename T>
std::vector<T> cast_vec(const Tensor& t) {
  std::vector<T> out(t.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(t.values()[i]);
  return out;
}

// rows x cols = a (rows x inner) * w (inner x cols) + b
template <typename T>
Mat<T> affine(const Mat<T>& a, const Mat<T>& w, const std::vector<T>& b) {
  Mat<T> out(a.rows, w.cols);
  for (std::int64_t i = 0; i < a.rows; ++i) {
    T* orow = out.row(i);
    for (std::int64_t j = 0; j < w.cols; ++j) orow[j] = b[std::size_t(j)];
    const T* arow = a.row(i);
    for (std::int64_t p = 0; p < a.cols; ++p) {
      const T ap = arow[p];
      const T* wrow = w.row(p);
      for (std::int64_t j = 0; j < w.cols; ++j) orow[j] += ap * wrow[j];
    }
  }
  return out;
}

}  // namespace detail_index

template <typename T>
std::int64_t ConceptIndexT<T>::memory_bytes() const {
  auto mat_bytes = [](const Mat<T>& m) { return std::int64_t(m.a.capacity() * sizeof(T)); };
  std::int64_t total = std::int64_t(sizeof(*this));
  total += mat_bytes(h_c) + mat_bytes(w_p);
  total += std::int64_t(b_p.capacity() * sizeof(T));
  for (const auto& q : q_cat) total += mat_bytes(q);
  total += std::int64_t(concept_rows.capacity() * sizeof(std::int32_t));
  total += std::int64_t(row_offset.capacity() * sizeof(std::int64_t));
  for (const auto& m : w_k) total += mat_bytes(m);
  for (const auto& m : w_v) total += mat_bytes(m);
  for (const auto& v : b_k) total += std::int64_t(v.capacity() * sizeof(T));
  for (const auto& v : b_v) total += std::int64_t(v.capacity() * sizeof(T));
  for (const auto& s : concept_ids) total += std::int64_t(s.capacity());
  for (const auto& s : concept_texts) total += std::int64_t(s.capacity());
  return total;
}

template <typename T>
std::int64_t ConceptIndexT<T>::analytic_bytes() const {
  std::int64_t elems = h_c.numel() + w_p.numel() + std::int64_t(b_p.size());
  for (const auto& q : q_cat) elems += q.numel();
  for (const auto& m : w_k) elems += m.numel();
  for (const auto& m : w_v) elems += m.numel();
  for (const auto& v : b_k) elems += std::int64_t(v.size());
  for (const auto& v : b_v) elems += std::int64_t(v.size());
  return elems * std::int64_t(sizeof(T));
}

template <typename T>
ConceptIndexT<T> build_index(const EmbeddingMapParams& params,
                             const std::vector<ConceptRef>& concepts, const ToyEncoder& encoder,
                             double gamma) {
  if (concepts.empty()) throw std::invalid_argument("cannot build an index over an empty blacklist");
  if (!(gamma > 0.0 && gamma < 2.0))
    throw std::invalid_argument("gamma must lie in (0, 2), got " + std::to_string(gamma));
  if (encoder.config().d_text != params.cfg.d_text)
    throw std::invalid_argument("encoder width does not match model d_text");

  ConceptIndexT<T> idx;
  idx.cfg = params.cfg;
  idx.encoder_cfg = encoder.config();
  idx.gamma = gamma;
  for (const auto& h : params.heads) {
    idx.w_k.push_back(detail_index::cast_mat<T>(h.w_k));
    idx.w_v.push_back(detail_index::cast_mat<T>(h.w_v));
    idx.b_k.push_back(detail_index::cast_vec<T>(h.b_k));
    idx.b_v.push_back(detail_index::cast_vec<T>(h.b_v));
  }
  idx.w_p = detail_index::cast_mat<T>(params.w_p);
  idx.b_p = detail_index::cast_vec<T>(params.b_p);

  const Mat<T> w_c = detail_index::cast_mat<T>(params.w_c);
  const std::vector<T> b_c = detail_index::cast_vec<T>(params.b_c);

  const int d_out = params.cfg.out_dim();
  const std::int64_t d = params.cfg.head_dim;
  idx.h_c = Mat<T>(std::int64_t(concepts.size()), d_out);

  std::vector<Mat<T>> compacted;
  std::int64_t total_rows = 0;
  for (std::size_t j = 0; j < concepts.size(); ++j) {
    if (concepts[j].text.empty()) throw std::invalid_argument("blacklist concept with empty text");
    idx.concept_ids.push_back(concepts[j].id);
    idx.concept_texts.push_back(concepts[j].text);
    const EncodedText zc = encoder.encode(concepts[j].text);
    compacted.push_back(zc.compact().template cast<T>());
    idx.concept_rows.push_back(std::int32_t(compacted.back().rows));
    idx.row_offset.push_back(total_rows);
    total_rows += compacted.back().rows;
  }

  for (std::size_t i = 0; i < params.heads.size(); ++i) idx.q_cat.emplace_back(d, total_rows);
  for (std::size_t j = 0; j < concepts.size(); ++j) {
    const Mat<T>& c_rows = compacted[j];
    const std::int64_t off = idx.row_offset[j];
    for (std::size_t i = 0; i < params.heads.size(); ++i) {
      const Mat<T> q = detail_index::affine(c_rows, detail_index::cast_mat<T>(params.heads[i].w_q),
                                            detail_index::cast_vec<T>(params.heads[i].b_q));
      for (std::int64_t r = 0; r < q.rows; ++r)
        for (std::int64_t c = 0; c < d; ++c) idx.q_cat[i].at(c, off + r) = q.at(r, c);
    }

    // h_c = normalize(mean over concept rows of (zc * w_c + b_c))
    const Mat<T> proj = detail_index::affine(c_rows, w_c, b_c);
    T* hrow = idx.h_c.row(std::int64_t(j));
    for (std::int64_t col = 0; col < d_out; ++col) {
      T acc = T(0);
      for (std::int64_t r = 0; r < proj.rows; ++r) acc += proj.at(r, col);
      hrow[col] = acc / T(proj.rows);
    }
    T sq = T(0);
    for (std::int64_t col = 0; col < d_out; ++col) sq += hrow[col] * hrow[col];
    const T norm = std::max(std::sqrt(sq), T(1e-12));
    for (std::int64_t col = 0; col < d_out; ++col) hrow[col] /= norm;
  }
  return idx;
}

template <typename T>
std::vector<double> score_prompt(const ConceptIndexT<T>& index, const EncodedText& z_p,
                                 ScoreStats* stats) {
  validate_encoded(z_p);
  if (z_p.features.cols != index.cfg.d_text)
    throw std::invalid_argument("prompt encoding width " + std::to_string(z_p.features.cols) +
                                " does not match index d_text " + std::to_string(index.cfg.d_text));
  const int heads = index.cfg.heads;
  const std::int64_t d = index.cfg.head_dim;
  const std::int64_t d_out = index.cfg.out_dim();
  const Mat<T> zp = z_p.compact().template cast<T>();
  const std::int64_t p = zp.rows;
  const std::int64_t n = std::int64_t(index.concept_ids.size());
  const std::int64_t total_rows = index.q_cat.empty() ? 0 : index.q_cat[0].cols;
  const T inv_sqrt_d = T(1.0 / std::sqrt(double(d)));

  // One-time prompt work: K^T per head plus U = V * (head block of w_p), so
  // the per-concept loop multiplies a P-row attention row mean straight into
  // the aggregated output space.
  std::vector<Mat<T>> kt_cache, u_cache;
  for (int i = 0; i < heads; ++i) {
    const Mat<T> k =
        detail_index::affine(zp, index.w_k[std::size_t(i)], index.b_k[std::size_t(i)]);
    Mat<T> kt(d, p);
    for (std::int64_t t = 0; t < p; ++t)
      for (std::int64_t c = 0; c < d; ++c) kt.at(c, t) = k.at(t, c);
    kt_cache.push_back(std::move(kt));
    const Mat<T> v =
        detail_index::affine(zp, index.w_v[std::size_t(i)], index.b_v[std::size_t(i)]);
    Mat<T> u(p, d_out);
    for (std::int64_t r = 0; r < p; ++r) {
      T* urow = u.row(r);
      const T* vrow = v.row(r);
      for (std::int64_t c = 0; c < d; ++c) {
        const T vc = vrow[c];
        const T* wrow = index.w_p.row(std::int64_t(i) * d + c);
        for (std::int64_t o = 0; o < d_out; ++o) urow[o] += vc * wrow[o];
      }
    }
    u_cache.push_back(std::move(u));
  }
  if (stats) {
    stats->prompt_flops += std::uint64_t(heads) * std::uint64_t(p) *
                           (2 * std::uint64_t(index.cfg.d_text) * std::uint64_t(d) +
                            std::uint64_t(d) * std::uint64_t(d_out));
  }

  // acc row j collects b_p + sum over heads of abar_j * U; the attention means
  // abar come from one streamed pass over each head's concatenated queries.
  Mat<T> acc(n, d_out);
  for (std::int64_t j = 0; j < n; ++j) {
    T* arow = acc.row(j);
    for (std::int64_t o = 0; o < d_out; ++o) arow[o] = index.b_p[std::size_t(o)];
  }

  Mat<T> logits(total_rows, p);
  std::vector<T> abar(static_cast<std::size_t>(p));
  // row tile sized so the logit block under accumulation stays cache-resident
  const std::int64_t row_tile = std::max<std::int64_t>(1, 4096 / std::max<std::int64_t>(p, 1));
  for (int i = 0; i < heads; ++i) {
    const Mat<T>& qt = index.q_cat[std::size_t(i)];  // d x total_rows
    const Mat<T>& kt = kt_cache[std::size_t(i)];     // d x p
    std::fill(logits.a.begin(), logits.a.end(), T(0));
    for (std::int64_t r0 = 0; r0 < total_rows; r0 += row_tile) {
      const std::int64_t r1 = std::min<std::int64_t>(total_rows, r0 + row_tile);
      for (std::int64_t c = 0; c < d; ++c) {
        const T* qc = qt.row(c);
        const T* kc = kt.row(c);
        for (std::int64_t r = r0; r < r1; ++r) {
          T* lrow = logits.row(r);
          const T qv = qc[r];
          for (std::int64_t t = 0; t < p; ++t) lrow[t] += qv * kc[t];
        }
      }
    }

    const Mat<T>& u = u_cache[std::size_t(i)];
    for (std::int64_t j = 0; j < n; ++j) {
      const std::int64_t off = index.row_offset[std::size_t(j)];
      const std::int64_t c_rows = index.concept_rows[std::size_t(j)];
      // softmax each concept row (scaled by 1/sqrt(d)), then average the rows
      std::fill(abar.begin(), abar.end(), T(0));
      for (std::int64_t r = off; r < off + c_rows; ++r) {
        T* row = logits.row(r);
        T mx = row[0];
        for (std::int64_t t = 1; t < p; ++t) mx = std::max(mx, row[t]);
        T sum = T(0);
        for (std::int64_t t = 0; t < p; ++t) {
          row[t] = std::exp((row[t] - mx) * inv_sqrt_d);
          sum += row[t];
        }
        for (std::int64_t t = 0; t < p; ++t) abar[std::size_t(t)] += row[t] / sum;
      }
      for (std::int64_t t = 0; t < p; ++t) abar[std::size_t(t)] /= T(c_rows);
      // chunked so each output slice is read and written once per concept
      T* arow = acc.row(j);
      constexpr std::int64_t kChunk = 32;
      T tmp[kChunk];
      for (std::int64_t o0 = 0; o0 < d_out; o0 += kChunk) {
        const std::int64_t w = std::min<std::int64_t>(kChunk, d_out - o0);
        for (std::int64_t o = 0; o < w; ++o) tmp[o] = arow[o0 + o];
        for (std::int64_t t = 0; t < p; ++t) {
          const T wt = abar[std::size_t(t)];
          const T* urow = u.row(t) + o0;
          for (std::int64_t o = 0; o < w; ++o) tmp[o] += wt * urow[o];
        }
        for (std::int64_t o = 0; o < w; ++o) arow[o0 + o] = tmp[o];
      }
    }
    if (stats)
      stats->concept_flops += std::uint64_t(total_rows) * std::uint64_t(p) * std::uint64_t(d) +
                              std::uint64_t(n) * std::uint64_t(p) * std::uint64_t(d_out);
  }

  std::vector<double> distances(static_cast<std::size_t>(n));
  for (std::int64_t j = 0; j < n; ++j) {
    const T* arow = acc.row(j);
    T sq = T(0);
    for (std::int64_t o = 0; o < d_out; ++o) sq += arow[o] * arow[o];
    const T norm = std::max(std::sqrt(sq), T(1e-12));
    T cos = T(0);
    const T* hrow = index.h_c.row(j);
    for (std::int64_t o = 0; o < d_out; ++o) cos += (arow[o] / norm) * hrow[o];
    distances[std::size_t(j)] = 1.0 - double(cos);
  }
  return distances;
}

template <typename T>
GuardVerdict classify(const ConceptIndexT<T>& index, const ToyEncoder& encoder,
                      std::string_view prompt) {
  const auto distances = score_prompt(index, encoder.encode(prompt));
  GuardVerdict v;
  std::size_t best = 0;
  for (std::size_t j = 1; j < distances.size(); ++j)
    if (distances[j] < distances[best]) best = j;
  v.min_distance = distances[best];
  v.unsafe = v.min_distance < index.gamma;
  v.top_concept_id = index.concept_ids[best];
  v.top_concept = index.concept_texts[best];
  return v;
}

template <typename T>
std::vector<BatchItem> batch_classify(const ConceptIndexT<T>& index, const ToyEncoder& encoder,
                                      const std::vector<std::string>& prompts) {
  std::vector<BatchItem> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts) {
    BatchItem item;
    try {
      item.verdict = classify(index, encoder, p);
    } catch (const std::exception& e) {
      item.error = e.what();
    }
    out.push_back(std::move(item));
  }
  return out;
}

// compiled once in the core library; keeps the hot scoring loops at the
// library's optimization level regardless of the including target's flags
extern template struct ConceptIndexT<float>;
extern template struct ConceptIndexT<double>;
extern template ConceptIndexT<float> build_index<float>(const EmbeddingMapParams&,
                                                        const std::vector<ConceptRef>&,
                                                        const ToyEncoder&, double);
extern template ConceptIndexT<double> build_index<double>(const EmbeddingMapParams&,
                                                          const std::vector<ConceptRef>&,
                                                          const ToyEncoder&, double);
extern template std::vector<double> score_prompt<float>(const ConceptIndexT<float>&,
                                                        const EncodedText&, ScoreStats*);
extern template std::vector<double> score_prompt<double>(const ConceptIndexT<double>&,
                                                         const EncodedText&, ScoreStats*);
extern template GuardVerdict classify<float>(const ConceptIndexT<float>&, const ToyEncoder&,
                                             std::string_view);
extern template GuardVerdict classify<double>(const ConceptIndexT<double>&, const ToyEncoder&,
                                              std::string_view);
extern template std::vector<BatchItem> batch_classify<float>(const ConceptIndexT<float>&,
                                                             const ToyEncoder&,
                                                             const std::vector<std::string>&);
extern template std::vector<BatchItem> batch_classify<double>(const ConceptIndexT<double>&,
                                                              const ToyEncoder&,
                                                              const std::vector<std::string>&);

}  // namespace lg
