#include "latentguard/encoder.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

#include "latentguard/rng.hpp"

namespace lg {

std::int64_t EncodedText::valid_count() const {
  std::int64_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

Mat<double> EncodedText::compact() const {
  Mat<double> out(valid_count(), features.cols);
  std::int64_t r = 0;
  for (std::int64_t i = 0; i < features.rows; ++i) {
    if (!mask[std::size_t(i)]) continue;
    std::copy(features.row(i), features.row(i) + features.cols, out.row(r));
    ++r;
  }
  return out;
}

std::vector<double> EncodedText::mean_pooled() const {
  const std::int64_t n = valid_count();
  std::vector<double> out(std::size_t(features.cols), 0.0);
  for (std::int64_t i = 0; i < features.rows; ++i) {
    if (!mask[std::size_t(i)]) continue;
    const double* row = features.row(i);
    for (std::int64_t j = 0; j < features.cols; ++j) out[std::size_t(j)] += row[j];
  }
  for (auto& x : out) x /= double(n);
  return out;
}

void validate_encoded(const EncodedText& z) {
  if (std::int64_t(z.mask.size()) != z.features.rows)
    throw std::invalid_argument("encoded text mask length does not match feature rows");
  if (z.valid_count() == 0) throw std::invalid_argument("encoded text has no valid token rows");
  for (std::int64_t i = 0; i < z.features.rows; ++i) {
    if (z.mask[std::size_t(i)]) continue;
    for (std::int64_t j = 0; j < z.features.cols; ++j)
      if (z.features.at(i, j) != 0.0)
        throw std::invalid_argument("encoded text padded row " + std::to_string(i) + " is not zero");
  }
  for (double v : z.features.a)
    if (!std::isfinite(v)) throw std::invalid_argument("encoded text has non-finite features");
}

namespace {

constexpr std::uint64_t kHashSeed = 0x1a7e9c0ffee5eedull;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

ToyEncoder::ToyEncoder(EncoderConfig cfg) : cfg_(cfg) {
  if (cfg_.d_text <= 0 || cfg_.vocab_size <= 1 || cfg_.p_max <= 0)
    throw std::invalid_argument("encoder config extents must be positive (vocab_size > 1)");
  const int d = cfg_.d_text;
  const double sd = 1.0 / std::sqrt(double(d));
  table_.resize(std::size_t(cfg_.vocab_size) * d);
  for (int t = 0; t < cfg_.vocab_size; ++t) {
    Rng rng(derive_seed(cfg_.seed, std::uint64_t(t)));
    double* row = table_.data() + std::size_t(t) * d;
    for (int j = 0; j < d; ++j) row[j] = sd * rng.gaussian();
  }
  posenc_.resize(std::size_t(cfg_.p_max) * d);
  // scaled so the position code has norm ~0.25 against unit-norm embeddings;
  // token identity must stay the dominant signal for attention to match on it
  const double amp = 0.25 / std::sqrt(double(d) / 2.0);
  for (int i = 0; i < cfg_.p_max; ++i) {
    double* row = posenc_.data() + std::size_t(i) * d;
    for (int j = 0; j < d; ++j) {
      const double rate = std::pow(10000.0, -double(2 * (j / 2)) / double(d));
      row[j] = amp * ((j % 2 == 0) ? std::sin(i * rate) : std::cos(i * rate));
    }
  }
}

std::vector<int> ToyEncoder::tokenize(std::string_view text) const {
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (int(ids.size()) < cfg_.p_max) {
      // bucket into [1, vocab_size); 0 stays reserved for padding
      const std::uint64_t h = mix64(fnv1a(word) ^ kHashSeed);
      ids.push_back(1 + int(h % std::uint64_t(cfg_.vocab_size - 1)));
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
  if (ids.empty()) ids.push_back(kPadToken);
  return ids;
}

EncodedText ToyEncoder::encode(std::string_view text) const { return encode_tokens(tokenize(text)); }

EncodedText ToyEncoder::encode_tokens(const std::vector<int>& ids) const {
  if (ids.empty()) throw std::invalid_argument("encode_tokens needs at least one token");
  if (std::int64_t(ids.size()) > cfg_.p_max)
    throw std::invalid_argument("token sequence longer than p_max (" + std::to_string(ids.size()) + " > " +
                                std::to_string(cfg_.p_max) + ")");
  const int d = cfg_.d_text;
  EncodedText z;
  z.features = Mat<double>(cfg_.p_max, d);
  z.mask.assign(std::size_t(cfg_.p_max), 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int t = ids[i];
    if (t < 0 || t >= cfg_.vocab_size)
      throw std::invalid_argument("token id " + std::to_string(t) + " outside [0, " +
                                  std::to_string(cfg_.vocab_size) + ")");
    const double* emb = embedding(t);
    const double* pos = position_code(int(i));
    double* row = z.features.row(std::int64_t(i));
    for (int j = 0; j < d; ++j) row[j] = emb[j] + pos[j];
    z.mask[i] = 1;
  }
  return z;
}

const double* ToyEncoder::embedding(int token_id) const {
  if (token_id < 0 || token_id >= cfg_.vocab_size)
    throw std::invalid_argument("token id " + std::to_string(token_id) + " outside vocabulary");
  return table_.data() + std::size_t(token_id) * cfg_.d_text;
}

const double* ToyEncoder::position_code(int position) const {
  if (position < 0 || position >= cfg_.p_max)
    throw std::invalid_argument("position " + std::to_string(position) + " outside [0, p_max)");
  return posenc_.data() + std::size_t(position) * cfg_.d_text;
}

EncodedText import_encoded(const Archive& a, const std::string& name, int d_text, int p_max) {
  const auto it = a.find(name + "/features");
  if (it == a.end()) throw std::runtime_error("archive is missing entry \"" + name + "/features\"");
  const ArchiveEntry& fe = it->second;
  if (fe.dims.size() != 2)
    throw std::runtime_error("entry \"" + name + "/features\" must be rank 2");
  const std::int64_t rows = fe.dims[0], cols = fe.dims[1];
  if (cols != d_text)
    throw std::runtime_error("entry \"" + name + "/features\" has width " + std::to_string(cols) +
                             ", expected " + std::to_string(d_text));
  if (rows > p_max)
    throw std::runtime_error("entry \"" + name + "/features\" has " + std::to_string(rows) +
                             " rows, exceeding p_max " + std::to_string(p_max));
  EncodedText z;
  z.features = Mat<double>(p_max, d_text);
  z.mask.assign(std::size_t(p_max), 0);
  const auto data = fe.as_f64();
  std::vector<std::uint8_t> valid(std::size_t(rows), 1);
  const auto mit = a.find(name + "/mask");
  if (mit != a.end()) {
    const auto mdata = mit->second.as_f64();
    if (std::int64_t(mdata.size()) != rows)
      throw std::runtime_error("entry \"" + name + "/mask\" length does not match feature rows");
    for (std::int64_t i = 0; i < rows; ++i) valid[std::size_t(i)] = mdata[std::size_t(i)] != 0.0 ? 1 : 0;
  }
  for (std::int64_t i = 0; i < rows; ++i) {
    if (!valid[std::size_t(i)]) continue;
    z.mask[std::size_t(i)] = 1;
    for (std::int64_t j = 0; j < d_text; ++j) z.features.at(i, j) = data[std::size_t(i * d_text + j)];
  }
  validate_encoded(z);
  return z;
}

}  // namespace lg
