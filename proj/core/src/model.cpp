#include "latentguard/model.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "latentguard/rng.hpp"

namespace lg {

namespace {

Tensor glorot(std::int64_t fan_in, std::int64_t fan_out, std::uint64_t seed) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  Rng rng(seed);
  std::vector<double> data(std::size_t(fan_in * fan_out));
  for (auto& x : data) x = rng.uniform(-limit, limit);
  return Tensor::from_data({fan_in, fan_out}, std::move(data), true);
}

}  // namespace

void EmbeddingMapConfig::validate() const {
  if (heads <= 0 || head_dim <= 0 || d_text <= 0 || d_out < 0)
    throw std::invalid_argument("model config extents must be positive");
}

std::vector<Tensor> EmbeddingMapParams::all() const {
  std::vector<Tensor> out;
  for (const auto& h : heads) {
    out.push_back(h.w_k);
    out.push_back(h.w_q);
    out.push_back(h.w_v);
    out.push_back(h.b_k);
    out.push_back(h.b_q);
    out.push_back(h.b_v);
  }
  out.push_back(w_p);
  out.push_back(b_p);
  out.push_back(w_c);
  out.push_back(b_c);
  return out;
}

std::int64_t EmbeddingMapParams::parameter_count() const {
  const std::int64_t I = cfg.heads, d = cfg.head_dim, dt = cfg.d_text, dout = cfg.out_dim();
  return I * (3 * dt * d + 3 * d) + I * d * dout + dout + dt * dout + dout;
}

EmbeddingMapParams init_params(const EmbeddingMapConfig& cfg) {
  cfg.validate();
  EmbeddingMapParams p;
  p.cfg = cfg;
  const std::int64_t d = cfg.head_dim, dt = cfg.d_text, dout = cfg.out_dim();
  p.cfg.d_out = int(dout);  // resolve the "same as head_dim" sentinel once
  std::uint64_t stream = 0;
  auto next = [&] { return derive_seed(cfg.seed, stream++); };
  for (int i = 0; i < cfg.heads; ++i) {
    HeadParams h;
    h.w_k = glorot(dt, d, next());
    h.w_q = glorot(dt, d, next());
    h.w_v = glorot(dt, d, next());
    h.b_k = Tensor::zeros({d}, true);
    h.b_q = Tensor::zeros({d}, true);
    h.b_v = Tensor::zeros({d}, true);
    p.heads.push_back(std::move(h));
  }
  p.w_p = glorot(std::int64_t(cfg.heads) * d, dout, next());
  p.b_p = Tensor::zeros({dout}, true);
  p.w_c = glorot(dt, dout, next());
  p.b_c = Tensor::zeros({dout}, true);
  return p;
}

GuardEmbeddings forward_pair(const EmbeddingMapParams& params, const EncodedText& z_c,
                             const EncodedText& z_p, bool with_attention) {
  validate_encoded(z_c);
  validate_encoded(z_p);
  const auto& cfg = params.cfg;
  if (z_c.features.cols != cfg.d_text || z_p.features.cols != cfg.d_text)
    throw std::invalid_argument("encoded width " + std::to_string(z_c.features.cols) + "/" +
                                std::to_string(z_p.features.cols) + " does not match model d_text " +
                                std::to_string(cfg.d_text));

  // Only valid rows take part; excluded padding is exactly zero attention.
  const Tensor zc = Tensor::from_mat(z_c.compact());
  const Tensor zp = Tensor::from_mat(z_p.compact());
  const double inv_sqrt_d = 1.0 / std::sqrt(double(cfg.head_dim));

  GuardEmbeddings out;
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(params.heads.size());
  for (const auto& h : params.heads) {
    const Tensor k = add_rowvec(matmul(zp, h.w_k), h.b_k);  // P x d
    const Tensor q = add_rowvec(matmul(zc, h.w_q), h.b_q);  // C x d
    const Tensor v = add_rowvec(matmul(zp, h.w_v), h.b_v);  // P x d
    const Tensor logits = scale(matmul_nt(q, k), inv_sqrt_d);
    const Tensor a = softmax_rows(logits);  // C x P
    head_outputs.push_back(matmul(a, v));   // C x d
    if (with_attention) {
      Mat<double> am(a.rows(), a.cols());
      am.a = a.values();
      out.attention.push_back(std::move(am));
    }
  }
  const Tensor joined = concat_cols(head_outputs);                       // C x (I*d)
  const Tensor hp_rows = add_rowvec(matmul(joined, params.w_p), params.b_p);  // C x d_out
  out.h_p = l2_normalize(mean_rows(hp_rows));

  const Tensor hc_rows = add_rowvec(matmul(zc, params.w_c), params.b_c);
  out.h_c = l2_normalize(mean_rows(hc_rows));
  return out;
}

void save_checkpoint(const std::string& path, const EmbeddingMapParams& params) {
  Archive a;
  nlohmann::ordered_json cfg;
  cfg["heads"] = params.cfg.heads;
  cfg["head_dim"] = params.cfg.head_dim;
  cfg["d_text"] = params.cfg.d_text;
  cfg["d_out"] = params.cfg.d_out;
  cfg["seed"] = params.cfg.seed;
  a.emplace("cfg/json", text_entry(cfg.dump()));

  auto put = [&a](const std::string& key, const Tensor& t) {
    std::vector<std::uint32_t> dims;
    for (auto d : t.shape()) dims.push_back(std::uint32_t(d));
    a.emplace(key, ArchiveEntry::from_f64(std::move(dims), t.values()));
  };
  for (std::size_t i = 0; i < params.heads.size(); ++i) {
    const auto& h = params.heads[i];
    const std::string n = std::to_string(i);
    put("w/k/" + n, h.w_k);
    put("w/q/" + n, h.w_q);
    put("w/v/" + n, h.w_v);
    put("b/k/" + n, h.b_k);
    put("b/q/" + n, h.b_q);
    put("b/v/" + n, h.b_v);
  }
  put("w/p", params.w_p);
  put("b/p", params.b_p);
  put("w/c", params.w_c);
  put("b/c", params.b_c);
  write_archive(path, a);
}

EmbeddingMapParams load_checkpoint(const std::string& path) {
  const Archive a = read_archive(path);
  const auto cfg_it = a.find("cfg/json");
  if (cfg_it == a.end()) throw std::runtime_error("checkpoint missing key \"cfg/json\"");
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(entry_text(cfg_it->second));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint key \"cfg/json\" is not valid JSON: ") + e.what());
  }
  EmbeddingMapConfig cfg;
  cfg.heads = cfg_json.at("heads").get<int>();
  cfg.head_dim = cfg_json.at("head_dim").get<int>();
  cfg.d_text = cfg_json.at("d_text").get<int>();
  cfg.d_out = cfg_json.at("d_out").get<int>();
  cfg.seed = cfg_json.at("seed").get<std::uint64_t>();
  cfg.validate();

  auto take = [&a](const std::string& key, Shape expect) {
    const auto it = a.find(key);
    if (it == a.end()) throw std::runtime_error("checkpoint missing key \"" + key + "\"");
    const auto& e = it->second;
    Shape got;
    for (auto d : e.dims) got.push_back(std::int64_t(d));
    if (got != expect)
      throw std::runtime_error("checkpoint key \"" + key + "\" has shape " + shape_str(got) +
                               ", expected " + shape_str(expect));
    return Tensor::from_data(std::move(got), e.as_f64(), true);
  };

  EmbeddingMapParams p;
  p.cfg = cfg;
  const std::int64_t d = cfg.head_dim, dt = cfg.d_text, dout = cfg.out_dim();
  p.cfg.d_out = int(dout);
  for (int i = 0; i < cfg.heads; ++i) {
    const std::string n = std::to_string(i);
    HeadParams h;
    h.w_k = take("w/k/" + n, {dt, d});
    h.w_q = take("w/q/" + n, {dt, d});
    h.w_v = take("w/v/" + n, {dt, d});
    h.b_k = take("b/k/" + n, {d});
    h.b_q = take("b/q/" + n, {d});
    h.b_v = take("b/v/" + n, {d});
    p.heads.push_back(std::move(h));
  }
  p.w_p = take("w/p", {std::int64_t(cfg.heads) * d, dout});
  p.b_p = take("b/p", {dout});
  p.w_c = take("w/c", {dt, dout});
  p.b_c = take("b/c", {dout});
  return p;
}

}  // namespace lg
