#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "gradcheck.hpp"
#include "slu/dsp.hpp"
#include "slu/train.hpp"

using namespace slu;
using namespace slu::nn;
using testing::random_tensor;

namespace {

// Two tone classes with jittered pitch, onset and length.
template <typename T>
Dataset<Tensor<T>> tone_task(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.01);
  dsp::LogMelExtractor ex(dsp::DspConfig{});
  Dataset<Tensor<T>> d;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    const double hz = (label ? 2000.0 : 600.0) * (1.0 + 0.05 * (u(rng) - 0.5));
    const std::size_t len = 4800 + static_cast<std::size_t>(u(rng) * 3200);
    const std::size_t onset = static_cast<std::size_t>(u(rng) * 1600);
    std::vector<double> x(len);
    for (std::size_t k = 0; k < len; ++k) {
      x[k] = noise(rng);
      if (k >= onset && k < onset + 2400) x[k] += 0.4 * std::sin(2.0 * std::numbers::pi * hz * k / 16000.0);
    }
    d.items.push_back(ex(x, 16000).frames.cast<T>());
    d.labels.push_back(label);
    d.seconds.push_back(len / 16000.0);
  }
  return d;
}

// Always answers class 0.
struct ConstantModel {
  std::size_t k;
  std::size_t n_classes() const { return k; }
  Tensor<double> posterior(const Tensor<double>&) const {
    Tensor<double> p({1, k});
    p[0] = 1.0;
    return p;
  }
};

}  // namespace

TEST_CASE("adam") {
  std::mt19937_64 rng(1);
  AdamConfig cfg;
  SUBCASE("zero gradient leaves parameters alone") {
    ParamSet<double> ps;
    ps.add("w", random_tensor({3, 4}, rng));
    const auto before = ps.at("w");
    AdamState<double> st(ps);
    std::vector<Tensor<double>> g = {Tensor<double>({3, 4})};
    adam_step(ps, std::span<const Tensor<double>>(g), st, cfg);
    CHECK(ps.at("w") == before);
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves each element by about the learning rate") {
    ParamSet<double> ps;
    ps.add("w", random_tensor({50}, rng));
    const auto before = ps.at("w");
    AdamState<double> st(ps);
    std::vector<Tensor<double>> g = {random_tensor({50}, rng)};
    for (auto& v : g[0].values()) v = (v < 0 ? -1.0 : 1.0) * (1e-4 + std::abs(v));
    adam_step(ps, std::span<const Tensor<double>>(g), st, cfg);
    for (std::size_t i = 0; i < 50; ++i) {
      const double d = std::abs(ps.at("w")[i] - before[i]);
      CHECK(d >= 0.99 * cfg.lr);
      CHECK(d <= cfg.lr);
    }
  }
  SUBCASE("matches a scalar reference over 100 steps") {
    ParamSet<double> ps;
    ps.add("w", Tensor<double>::scalar(0.3));
    AdamState<double> st(ps);
    double theta = 0.3, m = 0.0, v = 0.0;
    std::normal_distribution<double> gd(0.0, 2.0);
    for (int t = 1; t <= 100; ++t) {
      const double g = gd(rng);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
      theta -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
      std::vector<Tensor<double>> grad = {Tensor<double>::scalar(g)};
      adam_step(ps, std::span<const Tensor<double>>(grad), st, cfg);
      CHECK(std::abs(ps.at("w")[0] - theta) < 1e-12);
    }
  }
  SUBCASE("tensor order does not matter") {
    auto a = random_tensor({4}, rng), b = random_tensor({2, 3}, rng);
    auto ga = random_tensor({4}, rng), gb = random_tensor({2, 3}, rng);
    ParamSet<double> p1, p2;
    p1.add("a", a);
    p1.add("b", b);
    p2.add("b", b);
    p2.add("a", a);
    AdamState<double> s1(p1), s2(p2);
    std::vector<Tensor<double>> g1 = {ga, gb}, g2 = {gb, ga};
    for (int i = 0; i < 5; ++i) {
      adam_step(p1, std::span<const Tensor<double>>(g1), s1, cfg);
      adam_step(p2, std::span<const Tensor<double>>(g2), s2, cfg);
    }
    CHECK(p1.at("a") == p2.at("a"));
    CHECK(p1.at("b") == p2.at("b"));
  }
  SUBCASE("errors name the tensor") {
    ParamSet<double> ps;
    ps.add("enc.l0.fwd.W", Tensor<double>({2}));
    AdamState<double> st(ps);
    std::vector<Tensor<double>> bad = {Tensor<double>({2}, std::vector<double>{1.0, NAN})};
    try {
      adam_step(ps, std::span<const Tensor<double>>(bad), st, cfg);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("enc.l0.fwd.W") != std::string::npos);
    }
    std::vector<Tensor<double>> wrong = {Tensor<double>({3})};
    CHECK_THROWS_AS(adam_step(ps, std::span<const Tensor<double>>(wrong), st, cfg), DimensionError);
  }
}

TEST_CASE("batches") {
  std::mt19937_64 rng(2);
  std::vector<std::size_t> lengths = {5, 1, 9, 3, 7, 2, 8, 4, 6};
  auto b = make_batches(lengths, 4, false, rng);
  REQUIRE(b.size() == 2);  // 4 + 5: the lone trailing item joins the previous batch
  CHECK(b[0].size() == 4);
  CHECK(b[1].size() == 5);
  std::vector<int> seen(9, 0);
  for (const auto& batch : b)
    for (auto i : batch) ++seen[i];
  for (int s : seen) CHECK(s == 1);

  auto bucketed = make_batches(lengths, 3, true, rng);
  for (const auto& batch : bucketed) {
    auto lo = lengths[batch[0]], hi = lengths[batch[0]];
    for (auto i : batch) {
      lo = std::min(lo, lengths[i]);
      hi = std::max(hi, lengths[i]);
    }
    CHECK(hi - lo <= 2);
  }
}

TEST_CASE("padding") {
  std::mt19937_64 rng(3);
  auto a = random_tensor({7, 3}, rng).cast<float>();
  auto b = random_tensor({4, 3}, rng).cast<float>();
  SUBCASE("single item keeps its length") {
    const Tensor<float>* items[] = {&a};
    auto p = pad_and_batch<float>(items);
    CHECK(p.data.shape() == nd::Shape{1, 7, 3});
    CHECK(p.lengths == std::vector<std::size_t>{7});
    CHECK(unpad(p, 0) == a);
  }
  SUBCASE("shorter items are zero-padded") {
    const Tensor<float>* items[] = {&a, &b};
    auto p = pad_and_batch<float>(items);
    CHECK(p.data.shape() == nd::Shape{2, 7, 3});
    for (std::size_t i = 4 * 3; i < 7 * 3; ++i) CHECK(p.data[7 * 3 + i] == 0.0f);
    CHECK(unpad(p, 1) == b);
  }
  SUBCASE("dimension mismatch") {
    auto c = random_tensor({4, 2}, rng).cast<float>();
    const Tensor<float>* items[] = {&a, &c};
    CHECK_THROWS_AS(pad_and_batch<float>(items), DimensionError);
  }
  SUBCASE("posteriors inside a batch equal solo posteriors") {
    SpeechModel<float> model(EncoderConfig{3, 2, 4, 2}, DecoderConfig{6, 3, true, Pooling::max}, 4);
    std::vector<Tensor<float>> xs;
    for (std::size_t t : {3u, 11u, 6u, 11u, 1u}) xs.push_back(random_tensor({t, 3}, rng).cast<float>());
    std::vector<const Tensor<float>*> ptrs;
    for (const auto& x : xs) ptrs.push_back(&x);
    {
      nd::Tape<float> tape;
      BoundParams<float> bp(tape, model.params());
      model.logits(tape, bp, std::span<const Tensor<float>* const>(ptrs), Mode::train);
    }
    auto batch = pad_and_batch<float>(ptrs);
    nd::Tape<float> tape;
    BoundParams<float> bp(tape, model.params(), false);
    auto probs = nd::softmax_rows(padded_logits(model, tape, bp, batch, Mode::infer, false).value());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      auto solo = model.posterior(xs[i]);
      for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(probs(i, k) - solo[k]) < 1e-6);
    }
  }
}

TEST_CASE("evaluation report") {
  Dataset<Tensor<double>> d;
  for (std::size_t i = 0; i < 50; ++i) {
    d.items.emplace_back(nd::Shape{2, 2});
    d.labels.push_back(i % 5);
    d.seconds.push_back(1.5);
  }
  ConstantModel m{5};
  auto r = evaluate(m, d);
  CHECK(r.accuracy == 0.2);
  CHECK(r.n_utterances == 50);
  std::size_t total = 0;
  for (std::size_t t = 0; t < 5; ++t) {
    std::size_t row = 0;
    for (auto c : r.confusion[t]) row += c;
    CHECK(row == 10);
    total += row;
  }
  CHECK(total == 50);
  CHECK(r.audio_seconds == 75.0);
  CHECK(std::abs(r.rtf - r.inference_seconds / r.audio_seconds) < 1e-9);

  const auto prefix = std::filesystem::temp_directory_path() / "slu_test_eval";
  write_eval_report(prefix, r);
  std::ifstream is(prefix.string() + ".txt");
  std::stringstream ss;
  ss << is.rdbuf();
  CHECK(ss.str() == format_eval_report(r));
  CHECK(ss.str().rfind("accuracy=0.2\n", 0) == 0);
  std::ifstream cs(prefix.string() + ".confusion.csv");
  std::string line;
  std::getline(cs, line);
  CHECK(line == "10,0,0,0,0");

  d.labels[3] = 7;
  CHECK_THROWS_AS(evaluate(m, d), ConfigError);
}

TEST_CASE("training on a separable toy task") {
  auto train = tone_task<double>(40, 5);
  auto valid = tone_task<double>(20, 6);
  EncoderConfig enc{40, 2, 8, 2};
  DecoderConfig dec{16, 2, true, Pooling::max};
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 30;
  cfg.seed = 7;
  cfg.adam.lr = 3e-3;

  SpeechModel<double> model(enc, dec, 8);
  const double untrained = dataset_loss(model, train, cfg.batch_size);
  SpeechModel<double> one_epoch = model;
  auto one = cfg;
  one.max_epochs = 1;
  auto r1 = train_model(one_epoch, train, valid, one);
  CHECK(r1.initial_loss == untrained);
  CHECK(dataset_loss(one_epoch, train, cfg.batch_size) < untrained);

  std::vector<std::string> lines;
  auto result = train_model(model, train, valid, cfg, [&](const EpochLog& e) { lines.push_back(format_epoch_log(e)); });
  CHECK(result.best_valid_accuracy == 1.0);
  CHECK(result.log.size() <= 30);
  CHECK(lines.size() == result.log.size());
  double best = 0.0;
  for (const auto& e : result.log) best = std::max(best, e.valid_accuracy);
  CHECK(best == result.best_valid_accuracy);
  CHECK(accuracy(model, valid) == result.best_valid_accuracy);
  CHECK(std::count(lines[0].begin(), lines[0].end(), '\t') == 3);

  SpeechModel<double> again(enc, dec, 8);
  auto result2 = train_model(again, train, valid, cfg);
  REQUIRE(result2.log.size() == result.log.size());
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    CHECK(result2.log[i].train_loss == result.log[i].train_loss);
    CHECK(result2.log[i].valid_accuracy == result.log[i].valid_accuracy);
  }
  for (std::size_t i = 0; i < model.params().size(); ++i) CHECK(again.params()[i].second == model.params()[i].second);
}

TEST_CASE("training input errors") {
  SpeechModel<double> model(EncoderConfig{40, 1, 2, 2}, DecoderConfig{4, 2, true, Pooling::max}, 1);
  Dataset<Tensor<double>> empty;
  auto valid = tone_task<double>(4, 1);
  CHECK_THROWS_AS(train_model(model, empty, valid, TrainConfig{}), DegenerateInputError);
  auto bad = tone_task<double>(4, 2);
  bad.labels[0] = 2;
  CHECK_THROWS_AS(train_model(model, bad, valid, TrainConfig{}), ConfigError);
  TrainConfig cfg;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(true), ConfigError);
  CHECK_NOTHROW(cfg.validate(false));
}
