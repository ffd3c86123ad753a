#include "support.hpp"
#include "zerolight/semantic_guidance.hpp"
#include "zerolight/stub_encoder.hpp"

#include <doctest.h>

#include <atomic>
#include <thread>

using namespace zerolight;
using namespace zerolight::testing;

namespace {

/// Stub encoder that counts text encodings.
class CountingEncoder final : public Encoder<double> {
 public:
  std::string variant() const override { return inner_.variant(); }
  int embedding_dim() const override { return inner_.embedding_dim(); }
  int token_width() const override { return inner_.token_width(); }
  int max_prompt_tokens() const override { return inner_.max_prompt_tokens(); }
  int input_resolution() const override { return inner_.input_resolution(); }
  ImageEncoding<double> encode_image(const Imaged& image) const override { return inner_.encode_image(image); }
  Vector<double> encode_text(std::string_view text) const override {
    ++text_calls;
    return inner_.encode_text(text);
  }
  PromptEncoding<double> encode_prompt(const TokenMatrix<double>& p) const override { return inner_.encode_prompt(p); }
  std::uint64_t weights_checksum() const override { return inner_.weights_checksum(); }

  mutable std::atomic<int> text_calls{0};

 private:
  StubEncoder<double> inner_;
};

}  // namespace

TEST_CASE("antonym prompts") {
  const auto car = build_antonym_pair(ClassLabel("car"));
  CHECK(car.positive == "a photo of a car");
  CHECK(car.negative == "not a photo of a car");
  CHECK(build_antonym_pair(ClassLabel("  Dog ")) == build_antonym_pair(ClassLabel("dog")));
  CHECK(ClassLabel("Traffic \t  LIGHT").name() == "traffic light");
  CHECK(build_antonym_pair(ClassLabel("apple")).positive == "a photo of a apple");
  CHECK_THROWS_AS(ClassLabel("   "), std::invalid_argument);
  CHECK_THROWS_AS(ClassLabel(""), std::invalid_argument);
}

TEST_CASE("semantic loss values") {
  const ConstantEncoder<double> flat;
  TextEmbeddingCache<double> cache;
  CHECK(std::abs(semantic_loss(random_image<double>(8, 8, 1), ClassLabel("car"), flat, cache) - std::log(2.0)) <
        1e-12);

  Vector<double> img(2), pos(2), neg(2);
  img << 1, 0;
  pos << 1, 0;
  neg << -1, 0;
  CHECK(std::abs(semantic_loss_on_embedding<double>(img, {pos, neg}).value -
                 -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)))) < 1e-12);

  double prev = 1e9;
  for (int k = 0; k <= 10; ++k) {
    const double a = 3.14159 * (1 - k / 10.0);
    Vector<double> p(2);
    p << std::cos(a), std::sin(a);
    const double l = semantic_loss_on_embedding<double>(img, {p, neg}).value;
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("text embedding cache") {
  CountingEncoder enc;
  TextEmbeddingCache<double> cache;
  std::vector<LabelledPatch<double>> batch{{random_image<double>(16, 16, 1), ClassLabel("car")},
                                           {random_image<double>(16, 16, 2), ClassLabel("person")},
                                           {random_image<double>(16, 16, 3), ClassLabel("Car")}};
  (void)batch_semantic_loss<double>(batch, enc, cache);
  CHECK(enc.text_calls == 4);
  CHECK(cache.size() == 4);
  (void)batch_semantic_loss<double>(batch, enc, cache);
  CHECK(enc.text_calls == 4);

  const auto cached = cache.get(enc, "a photo of a car");
  const auto fresh = enc.encode_text("a photo of a car");
  CHECK((cached.array() == fresh.array()).all());

  TextEmbeddingCache<double> cold;
  const auto& patch = batch[0].first;
  CHECK(semantic_loss(patch, ClassLabel("car"), enc, cache) == semantic_loss(patch, ClassLabel("car"), enc, cold));
}

TEST_CASE("text embedding cache under concurrent readers") {
  const StubEncoder<float> enc;
  TextEmbeddingCache<float> cache;
  const std::vector<std::string> labels{"car", "bus", "dog", "cat", "person", "bicycle"};
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int r = 0; r < 50; ++r) {
        const auto pair = build_antonym_pair(ClassLabel(labels[(t + r) % labels.size()]));
        if (!(cache.get(enc, pair.positive).array() == enc.encode_text(pair.positive).array()).all()) ++mismatches;
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(mismatches == 0);
  CHECK(cache.size() == labels.size());
}

TEST_CASE("batch semantic loss") {
  const StubEncoder<double> enc;
  TextEmbeddingCache<double> cache;
  const Imaged a = random_image<double>(20, 20, 4), b = random_image<double>(24, 18, 5);
  const double single = semantic_loss(a, ClassLabel("bus"), enc, cache);
  std::vector<LabelledPatch<double>> same{{a, ClassLabel("bus")}, {a, ClassLabel("bus")}, {a, ClassLabel("bus")}};
  CHECK(batch_semantic_loss<double>(same, enc, cache) == doctest::Approx(single).epsilon(1e-14));

  std::vector<LabelledPatch<double>> mixed{{a, ClassLabel("bus")}, {b, ClassLabel("dog")}};
  std::vector<LabelledPatch<double>> reversed{{b, ClassLabel("dog")}, {a, ClassLabel("bus")}};
  CHECK(batch_semantic_loss<double>(mixed, enc, cache) ==
        doctest::Approx(batch_semantic_loss<double>(reversed, enc, cache)).epsilon(1e-14));

  CHECK_THROWS_AS(batch_semantic_loss<double>({}, enc, cache), std::invalid_argument);
}

TEST_CASE("semantic loss gradient matches finite differences") {
  const StubEncoder<double> enc;
  TextEmbeddingCache<double> cache;
  Imaged x = random_image<double>(40, 36, 6);
  const ClassLabel label("car");
  const auto g = semantic_loss_grad(x, label, enc, cache);
  auto f = [&] { return semantic_loss(x, label, enc, cache); };
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<Eigen::Index> pick(0, x.planes().size() - 1);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index i = pick(rng);
    CHECK(relative_error(g.grad.planes().data()[i], central_difference(x.planes().data()[i], f), 1e-6) < 1e-2);
  }
}
