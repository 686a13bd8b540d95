#include <benchmark/benchmark.h>

#include <vector>

#include "latentguard/encoder.hpp"
#include "latentguard/index.hpp"
#include "latentguard/model.hpp"
#include "latentguard/rng.hpp"
#include "latentguard/tensor.hpp"

namespace {

lg::Tensor random_tensor(std::int64_t rows, std::int64_t cols, std::uint64_t seed) {
  lg::Rng rng(seed);
  std::vector<double> v(std::size_t(rows * cols));
  for (auto& x : v) x = rng.gaussian();
  return lg::Tensor::from_data({rows, cols}, v);
}

void bm_matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const lg::Tensor a = random_tensor(n, n, 1);
  const lg::Tensor b = random_tensor(n, n, 2);
  for (auto _ : state) {
    lg::Tensor c = lg::matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(bm_matmul)->Arg(32)->Arg(64)->Arg(128);

struct ForwardFixture {
  lg::EmbeddingMapConfig cfg;
  lg::EmbeddingMapParams params;
  lg::ToyEncoder encoder;
  lg::EncodedText zc, zp;

  ForwardFixture()
      : cfg{4, 16, 64, 0, 7},
        params(lg::init_params(cfg)),
        encoder(lg::EncoderConfig{11, 64, 4096, 32}),
        zc(encoder.encode("buvado")),
        zp(encoder.encode("the quick vekodu palemi over ridaho tokens")) {}
};

void bm_forward_pair(benchmark::State& state) {
  static ForwardFixture fx;
  for (auto _ : state) {
    auto out = lg::forward_pair(fx.params, fx.zc, fx.zp);
    benchmark::DoNotOptimize(out.h_p.values().data());
  }
}
BENCHMARK(bm_forward_pair);

void bm_score_prompt(benchmark::State& state) {
  const int n_check = int(state.range(0));
  lg::EmbeddingMapConfig cfg{16, 128, 64, 0, 7};
  const lg::EmbeddingMapParams params = lg::init_params(cfg);
  const lg::ToyEncoder encoder(lg::EncoderConfig{11, 64, 4096, 32});
  lg::Rng rng(3);
  const char* cons = "bcdfghjklmnpqrstvwz";
  const char* vow = "aeiou";
  auto word = [&] {
    std::string w;
    for (int i = 0; i < 3; ++i) {
      w.push_back(cons[rng.below(19)]);
      w.push_back(vow[rng.below(5)]);
    }
    return w;
  };
  std::vector<lg::ConceptRef> concepts;
  for (int i = 0; i < n_check; ++i) concepts.push_back({"c" + std::to_string(i), word()});
  const auto index = lg::build_index<float>(params, concepts, encoder, 0.5);
  std::string prompt;
  for (int i = 0; i < 10; ++i) prompt += word() + " ";
  const lg::EncodedText zp = encoder.encode(prompt);
  for (auto _ : state) {
    auto d = lg::score_prompt(index, zp);
    benchmark::DoNotOptimize(d.data());
  }
  state.SetItemsProcessed(state.iterations() * n_check);
}
BENCHMARK(bm_score_prompt)->Arg(64)->Arg(578);

}  // namespace

BENCHMARK_MAIN();
