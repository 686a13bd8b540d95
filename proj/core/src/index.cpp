#include "latentguard/index.hpp"

#include <nlohmann/json.hpp>

#include "latentguard/archive.hpp"

namespace lg {

namespace {

using nlohmann::json;

ArchiveEntry f32_entry(const Mat<float>& m) {
  ArchiveEntry e;
  e.dtype = Dtype::f32;
  e.dims = {std::uint32_t(m.rows), std::uint32_t(m.cols)};
  e.f32 = m.a;
  return e;
}

ArchiveEntry f32_entry(const std::vector<float>& v) {
  ArchiveEntry e;
  e.dtype = Dtype::f32;
  e.dims = {std::uint32_t(v.size())};
  e.f32 = v;
  return e;
}

Mat<float> mat_from(const Archive& ar, const std::string& key) {
  auto it = ar.find(key);
  if (it == ar.end()) throw std::runtime_error("index archive missing key '" + key + "'");
  const ArchiveEntry& e = it->second;
  if (e.dtype != Dtype::f32 || e.dims.size() != 2)
    throw std::runtime_error("index key '" + key + "' must be a 2-d f32 entry");
  Mat<float> m(e.dims[0], e.dims[1]);
  m.a = e.f32;
  return m;
}

std::vector<float> vec_from(const Archive& ar, const std::string& key) {
  auto it = ar.find(key);
  if (it == ar.end()) throw std::runtime_error("index archive missing key '" + key + "'");
  const ArchiveEntry& e = it->second;
  if (e.dtype != Dtype::f32 || e.dims.size() != 1)
    throw std::runtime_error("index key '" + key + "' must be a 1-d f32 entry");
  return e.f32;
}

}  // namespace

void save_index(const std::string& path, const ConceptIndex& index) {
  Archive ar;
  json cfg;
  cfg["heads"] = index.cfg.heads;
  cfg["head_dim"] = index.cfg.head_dim;
  cfg["d_text"] = index.cfg.d_text;
  cfg["d_out"] = index.cfg.d_out;
  cfg["seed"] = index.cfg.seed;
  cfg["encoder"] = {{"seed", index.encoder_cfg.seed},
                    {"d_text", index.encoder_cfg.d_text},
                    {"vocab_size", index.encoder_cfg.vocab_size},
                    {"p_max", index.encoder_cfg.p_max}};
  cfg["n_concepts"] = index.size();
  ar["idx/cfg"] = text_entry(cfg.dump());
  ar["idx/ids"] = text_entry(json(index.concept_ids).dump());
  ar["idx/texts"] = text_entry(json(index.concept_texts).dump());

  ArchiveEntry gamma;
  gamma.dtype = Dtype::f64;
  gamma.dims = {1};
  gamma.f64 = {index.gamma};
  ar["idx/gamma"] = gamma;

  ar["idx/hc"] = f32_entry(index.h_c);
  for (int i = 0; i < index.cfg.heads; ++i)
    ar["idx/q/" + std::to_string(i)] = f32_entry(index.q_cat[std::size_t(i)]);
  {
    ArchiveEntry rows;
    rows.dtype = Dtype::f32;
    rows.dims = {std::uint32_t(index.concept_rows.size())};
    for (auto r : index.concept_rows) rows.f32.push_back(float(r));
    ar["idx/qrows"] = rows;
  }
  for (int i = 0; i < index.cfg.heads; ++i) {
    const auto s = std::to_string(i);
    ar["idx/w/k/" + s] = f32_entry(index.w_k[std::size_t(i)]);
    ar["idx/w/v/" + s] = f32_entry(index.w_v[std::size_t(i)]);
    ar["idx/b/k/" + s] = f32_entry(index.b_k[std::size_t(i)]);
    ar["idx/b/v/" + s] = f32_entry(index.b_v[std::size_t(i)]);
  }
  ar["idx/w/p"] = f32_entry(index.w_p);
  ar["idx/b/p"] = f32_entry(index.b_p);
  write_archive(path, ar);
}

ConceptIndex load_index(const std::string& path) {
  const Archive ar = read_archive(path);
  auto cfg_it = ar.find("idx/cfg");
  if (cfg_it == ar.end()) throw std::runtime_error("index archive missing key 'idx/cfg'");
  json cfg;
  try {
    cfg = json::parse(entry_text(cfg_it->second));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("index config is not valid JSON: ") + e.what());
  }

  ConceptIndex idx;
  idx.cfg.heads = cfg.at("heads").get<int>();
  idx.cfg.head_dim = cfg.at("head_dim").get<int>();
  idx.cfg.d_text = cfg.at("d_text").get<int>();
  idx.cfg.d_out = cfg.at("d_out").get<int>();
  idx.cfg.seed = cfg.at("seed").get<std::uint64_t>();
  idx.cfg.validate();
  const json& enc = cfg.at("encoder");
  idx.encoder_cfg.seed = enc.at("seed").get<std::uint64_t>();
  idx.encoder_cfg.d_text = enc.at("d_text").get<int>();
  idx.encoder_cfg.vocab_size = enc.at("vocab_size").get<int>();
  idx.encoder_cfg.p_max = enc.at("p_max").get<int>();
  const std::int64_t n = cfg.at("n_concepts").get<std::int64_t>();
  if (n <= 0) throw std::runtime_error("index archive declares an empty blacklist");

  auto names = [&ar](const std::string& key) {
    auto it = ar.find(key);
    if (it == ar.end()) throw std::runtime_error("index archive missing key '" + key + "'");
    return json::parse(entry_text(it->second)).get<std::vector<std::string>>();
  };
  idx.concept_ids = names("idx/ids");
  idx.concept_texts = names("idx/texts");
  if (std::int64_t(idx.concept_ids.size()) != n || std::int64_t(idx.concept_texts.size()) != n)
    throw std::runtime_error("index concept name lists disagree with declared count");

  auto gamma_it = ar.find("idx/gamma");
  if (gamma_it == ar.end()) throw std::runtime_error("index archive missing key 'idx/gamma'");
  if (gamma_it->second.dtype != Dtype::f64 || gamma_it->second.numel() != 1)
    throw std::runtime_error("index key 'idx/gamma' must be a single f64 value");
  idx.gamma = gamma_it->second.f64[0];

  const int d_out = idx.cfg.out_dim();
  idx.h_c = mat_from(ar, "idx/hc");
  if (idx.h_c.rows != n || idx.h_c.cols != d_out)
    throw std::runtime_error("index key 'idx/hc' has the wrong shape");
  const std::vector<float> qrows = vec_from(ar, "idx/qrows");
  if (std::int64_t(qrows.size()) != n)
    throw std::runtime_error("index key 'idx/qrows' length disagrees with the concept count");
  std::int64_t total_rows = 0;
  for (float r : qrows) {
    const auto rows = std::int32_t(r);
    if (rows <= 0 || float(rows) != r)
      throw std::runtime_error("index key 'idx/qrows' holds a non-positive row count");
    idx.concept_rows.push_back(rows);
    idx.row_offset.push_back(total_rows);
    total_rows += rows;
  }
  for (int i = 0; i < idx.cfg.heads; ++i) {
    Mat<float> q = mat_from(ar, "idx/q/" + std::to_string(i));
    if (q.rows != idx.cfg.head_dim || q.cols != total_rows)
      throw std::runtime_error("index query cache entry has the wrong shape");
    idx.q_cat.push_back(std::move(q));
  }
  for (int i = 0; i < idx.cfg.heads; ++i) {
    const auto s = std::to_string(i);
    Mat<float> wk = mat_from(ar, "idx/w/k/" + s);
    Mat<float> wv = mat_from(ar, "idx/w/v/" + s);
    if (wk.rows != idx.cfg.d_text || wk.cols != idx.cfg.head_dim || wv.rows != idx.cfg.d_text ||
        wv.cols != idx.cfg.head_dim)
      throw std::runtime_error("index projection weights have the wrong shape");
    idx.w_k.push_back(std::move(wk));
    idx.w_v.push_back(std::move(wv));
    idx.b_k.push_back(vec_from(ar, "idx/b/k/" + s));
    idx.b_v.push_back(vec_from(ar, "idx/b/v/" + s));
    if (std::int64_t(idx.b_k.back().size()) != idx.cfg.head_dim ||
        std::int64_t(idx.b_v.back().size()) != idx.cfg.head_dim)
      throw std::runtime_error("index projection biases have the wrong length");
  }
  idx.w_p = mat_from(ar, "idx/w/p");
  if (idx.w_p.rows != std::int64_t(idx.cfg.heads) * idx.cfg.head_dim || idx.w_p.cols != d_out)
    throw std::runtime_error("index key 'idx/w/p' has the wrong shape");
  idx.b_p = vec_from(ar, "idx/b/p");
  if (std::int64_t(idx.b_p.size()) != d_out)
    throw std::runtime_error("index key 'idx/b/p' has the wrong length");
  return idx;
}

// anchor the template instantiations used across the library
template struct ConceptIndexT<float>;
template struct ConceptIndexT<double>;
template ConceptIndexT<float> build_index<float>(const EmbeddingMapParams&,
                                                 const std::vector<ConceptRef>&, const ToyEncoder&,
                                                 double);
template ConceptIndexT<double> build_index<double>(const EmbeddingMapParams&,
                                                   const std::vector<ConceptRef>&,
                                                   const ToyEncoder&, double);
template std::vector<double> score_prompt<float>(const ConceptIndexT<float>&, const EncodedText&,
                                                 ScoreStats*);
template std::vector<double> score_prompt<double>(const ConceptIndexT<double>&, const EncodedText&,
                                                  ScoreStats*);
template GuardVerdict classify<float>(const ConceptIndexT<float>&, const ToyEncoder&,
                                      std::string_view);
template GuardVerdict classify<double>(const ConceptIndexT<double>&, const ToyEncoder&,
                                       std::string_view);
template std::vector<BatchItem> batch_classify<float>(const ConceptIndexT<float>&,
                                                      const ToyEncoder&,
                                                      const std::vector<std::string>&);
template std::vector<BatchItem> batch_classify<double>(const ConceptIndexT<double>&,
                                                       const ToyEncoder&,
                                                       const std::vector<std::string>&);

}  // namespace lg
