#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <vector>

#include "gradcheck.hpp"
#include "slu/checkpoint.hpp"
#include "slu/model.hpp"

using namespace slu;
using namespace slu::nn;
using namespace slu::testing;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain scalar evaluation of one GRU step.
std::vector<double> scalar_gru(const Tensor<double>& W, const Tensor<double>& U, const Tensor<double>& b,
                               const std::vector<double>& x, const std::vector<double>& hp) {
  const std::size_t H = hp.size(), I = x.size();
  std::vector<double> z(H), r(H), c(H), out(H);
  for (std::size_t j = 0; j < H; ++j) {
    double az = b[j], ar = b[H + j];
    for (std::size_t i = 0; i < I; ++i) {
      az += W(j, i) * x[i];
      ar += W(H + j, i) * x[i];
    }
    for (std::size_t k = 0; k < H; ++k) {
      az += U(j, k) * hp[k];
      ar += U(H + j, k) * hp[k];
    }
    z[j] = sig(az);
    r[j] = sig(ar);
  }
  for (std::size_t j = 0; j < H; ++j) {
    double ac = b[2 * H + j];
    for (std::size_t i = 0; i < I; ++i) ac += W(2 * H + j, i) * x[i];
    for (std::size_t k = 0; k < H; ++k) ac += U(2 * H + j, k) * r[k] * hp[k];
    c[j] = std::tanh(ac);
    out[j] = (1.0 - z[j]) * hp[j] + z[j] * c[j];
  }
  return out;
}

struct Direction {
  Tensor<double> W, U, b;
};

Direction random_direction(std::size_t I, std::size_t H, std::mt19937_64& rng) {
  return {random_tensor({3 * H, I}, rng, 0.5), random_tensor({3 * H, H}, rng, 0.5), random_tensor({3 * H}, rng, 0.3)};
}

Tensor<double> reverse_rows(const Tensor<double>& x) {
  Tensor<double> y(x.shape());
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t c = 0; c < x.cols(); ++c) y(x.rows() - 1 - t, c) = x(t, c);
  return y;
}

EncoderConfig toy_encoder(std::size_t F = 5) { return {F, 2, 3, 2}; }
DecoderConfig toy_decoder() { return {4, 3, true, Pooling::max}; }

}  // namespace

TEST_CASE("gru cell step") {
  Tape<double> tape;
  const std::size_t H = 4, I = 3;
  SUBCASE("zero parameters") {
    GruDirectionVars<double> p{tape.constant(Tensor<double>({3 * H, I})), tape.constant(Tensor<double>({3 * H, H})),
                               tape.constant(Tensor<double>({3 * H}))};
    auto x = tape.constant(Tensor<double>({1, I}, 0.7));
    auto h0 = gru_cell_step(x, tape.constant(Tensor<double>({1, H})), p);
    for (double v : h0.value().values()) CHECK(v == 0.0);
    auto v = Tensor<double>::matrix(1, H, {1.0, -2.0, 0.5, 4.0});
    auto h1 = gru_cell_step(x, tape.constant(v), p);
    for (std::size_t k = 0; k < H; ++k) CHECK(h1.value()[k] == doctest::Approx(0.5 * v[k]).epsilon(1e-15));
  }
  SUBCASE("random parameters match the scalar reference") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      auto d = random_direction(I, H, rng);
      auto x = random_tensor({1, I}, rng);
      auto hp = random_tensor({1, H}, rng);
      GruDirectionVars<double> p{tape.constant(d.W), tape.constant(d.U), tape.constant(d.b)};
      auto h = gru_cell_step(tape.constant(x), tape.constant(hp), p);
      auto ref = scalar_gru(d.W, d.U, d.b, {x.values().begin(), x.values().end()},
                            {hp.values().begin(), hp.values().end()});
      for (std::size_t k = 0; k < H; ++k) CHECK(std::abs(h.value()[k] - ref[k]) < 1e-12);
    }
  }
  SUBCASE("shape mismatch") {
    GruDirectionVars<double> p{tape.constant(Tensor<double>({3 * H, I})), tape.constant(Tensor<double>({3 * H, H})),
                               tape.constant(Tensor<double>({3 * H}))};
    CHECK_THROWS_AS(gru_cell_step(tape.constant(Tensor<double>({1, I + 1})), tape.constant(Tensor<double>({1, H})), p),
                    DimensionError);
  }
}

TEST_CASE("fused recurrence equals stepping the cell") {
  std::mt19937_64 rng(2);
  const std::size_t I = 3, H = 4, T = 9;
  auto d = random_direction(I, H, rng);
  auto x = random_tensor({T, I}, rng);
  for (bool reverse : {false, true}) {
    Tape<double> tape;
    GruDirectionVars<double> p{tape.constant(d.W), tape.constant(d.U), tape.constant(d.b)};
    auto fused = gru_scan(tape.constant(x), p, reverse).value();
    auto h = tape.constant(Tensor<double>({1, H}));
    for (std::size_t s = 0; s < T; ++s) {
      const std::size_t t = reverse ? T - 1 - s : s;
      h = gru_cell_step(nd::slice_rows(tape.constant(x), t, t + 1), h, p);
      for (std::size_t k = 0; k < H; ++k) CHECK(std::abs(fused(t, k) - h.value()[k]) < 1e-12);
    }
  }
}

TEST_CASE("recurrence gradients") {
  std::mt19937_64 rng(3);
  const std::size_t I = 3, H = 4, T = 7;
  auto d = random_direction(I, H, rng);
  for (bool reverse : {false, true}) {
    auto r = gradcheck({random_tensor({T, I}, rng), d.W, d.U, d.b},
                       [&](Tape<double>&, const std::vector<Var<double>>& v) {
                         auto hs = gru_scan(v[0], GruDirectionVars<double>{v[1], v[2], v[3]}, reverse);
                         return nd::sum(nd::mul(hs, nd::tanh(hs)));
                       });
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("subsampling length law") {
  for (std::size_t T = 1; T <= 1000; ++T) {
    CHECK(subsampled_length(T, 2) == (T + 1) / 2);
    EncoderConfig cfg;
    std::size_t expect = T;
    for (int l = 0; l < 4; ++l) expect = static_cast<std::size_t>(std::ceil(expect / 2.0));
    CHECK(cfg.output_length(T) == expect);
  }
  EncoderConfig cfg;
  CHECK(cfg.output_length(1000) == 63);
  CHECK(cfg.output_length(100) == 7);
  CHECK(cfg.output_length(1) == 1);
}

TEST_CASE("bidirectional layer") {
  std::mt19937_64 rng(4);
  const std::size_t I = 3, H = 2;
  auto f = random_direction(I, H, rng), b = random_direction(I, H, rng);
  Tape<double> tape;
  GruDirectionVars<double> fv{tape.constant(f.W), tape.constant(f.U), tape.constant(f.b)};
  GruDirectionVars<double> bv{tape.constant(b.W), tape.constant(b.U), tape.constant(b.b)};

  SUBCASE("stride 2 equals every second frame of stride 1") {
    for (std::size_t T : {1u, 2u, 7u, 10u}) {
      auto x = tape.constant(random_tensor({T, I}, rng));
      auto full = bidir_layer_forward(x, fv, bv, 1).output.value();
      auto sub = bidir_layer_forward(x, fv, bv, 2).output.value();
      REQUIRE(sub.rows() == (T + 1) / 2);
      CHECK(sub.cols() == 2 * H);
      for (std::size_t t = 0; t < sub.rows(); ++t)
        for (std::size_t c = 0; c < 2 * H; ++c) CHECK(sub(t, c) == full(2 * t, c));
    }
  }
  SUBCASE("time reversal with swapped directions") {
    auto x = random_tensor({8, I}, rng);
    auto a = bidir_layer_forward(tape.constant(x), fv, bv, 1);
    auto r = bidir_layer_forward(tape.constant(reverse_rows(x)), bv, fv, 1);
    auto fwd_rev = reverse_rows(a.fwd_states.value());
    auto bwd_rev = reverse_rows(a.bwd_states.value());
    for (std::size_t i = 0; i < fwd_rev.size(); ++i) {
      CHECK(std::abs(r.bwd_states.value()[i] - fwd_rev[i]) < 1e-14);
      CHECK(std::abs(r.fwd_states.value()[i] - bwd_rev[i]) < 1e-14);
    }
  }
  SUBCASE("last-step readout reads the exposed states") {
    auto x = tape.constant(random_tensor({6, I}, rng));
    auto out = bidir_layer_forward(x, fv, bv, 2);
    auto ro = last_step_readout(out.fwd_last, out.bwd_first).value();
    REQUIRE(ro.size() == 2 * H);
    for (std::size_t k = 0; k < H; ++k) {
      CHECK(ro[k] == out.fwd_states.value()(5, k));
      CHECK(ro[H + k] == out.bwd_states.value()(0, k));
    }
  }
  SUBCASE("single frame: last step equals max pool") {
    auto x = tape.constant(random_tensor({1, I}, rng));
    auto out = bidir_layer_forward(x, fv, bv, 2);
    CHECK(last_step_readout(out.fwd_last, out.bwd_first).value().values().size() == 2 * H);
    auto ro = last_step_readout(out.fwd_last, out.bwd_first).value();
    auto mp = max_pool_time(out.output).value();
    for (std::size_t k = 0; k < 2 * H; ++k) CHECK(ro[k] == mp[k]);
  }
}

TEST_CASE("max pool over time") {
  std::mt19937_64 rng(5);
  Tape<double> tape;
  auto x = random_tensor({9, 6}, rng);
  auto p = max_pool_time(tape.constant(x)).value();
  for (std::size_t c = 0; c < 6; ++c) {
    double m = x(0, c);
    for (std::size_t t = 1; t < 9; ++t) m = std::max(m, x(t, c));
    CHECK(p[c] == m);
  }
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    auto q = max_pool_time(nd::gather_rows(tape.constant(x), perm)).value();
    CHECK(q == p);
  }
  auto inc = Tensor<double>::matrix(3, 2, {1, -5, 2, -4, 3, -3});
  auto last = max_pool_time(tape.constant(inc)).value();
  CHECK(last[0] == 3.0);
  CHECK(last[1] == -3.0);
  auto one = random_tensor({1, 4}, rng);
  CHECK(max_pool_time(tape.constant(one)).value().values()[2] == one[2]);
}

TEST_CASE("batch norm") {
  std::mt19937_64 rng(6);
  Tape<double> tape;
  const std::size_t B = 16, D = 5;
  auto ones = tape.constant(Tensor<double>({D}, 1.0));
  auto zeros = tape.constant(Tensor<double>({D}));
  SUBCASE("constant column maps to zero") {
    Tensor<double> x = random_tensor({B, D}, rng);
    for (std::size_t i = 0; i < B; ++i) x(i, 2) = 3.5;
    auto y = nd::batch_norm_train(tape.constant(x), ones, zeros, 1e-5).y.value();
    for (std::size_t i = 0; i < B; ++i) CHECK(y(i, 2) == 0.0);
  }
  SUBCASE("standardizes columns") {
    auto x = random_tensor({B, D}, rng, 3.0);
    auto y = nd::batch_norm_train(tape.constant(x), ones, zeros, 1e-5).y.value();
    for (std::size_t c = 0; c < D; ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < B; ++i) mean += y(i, c);
      mean /= B;
      for (std::size_t i = 0; i < B; ++i) var += (y(i, c) - mean) * (y(i, c) - mean);
      var /= B;
      CHECK(std::abs(mean) < 1e-9);
      CHECK(var >= 1.0 - 1e-4);
      CHECK(var <= 1.0);
    }
  }
  SUBCASE("affine on standardized input") {
    Tensor<double> x({4, 1}, std::vector<double>{-1.0, -1.0, 1.0, 1.0});
    auto g = tape.constant(Tensor<double>({1}, 2.0));
    auto b = tape.constant(Tensor<double>({1}, 3.0));
    auto y = nd::batch_norm_train(tape.constant(x), g, b, 0.0).y.value();
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(2.0 * x[i] + 3.0).epsilon(1e-14));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(nd::batch_norm_train(tape.constant(Tensor<double>({1, D})), ones, zeros, 1e-5), DimensionError);
    BatchNormState<double> st(D, {});
    CHECK_THROWS_AS(st.forward(tape.constant(Tensor<double>({1, D})), ones, zeros, Mode::infer, false), Error);
  }
  SUBCASE("running statistics") {
    BatchNormState<double> st(D, {});
    auto x = random_tensor({B, D}, rng);
    auto out = nd::batch_norm_train(tape.constant(x), ones, zeros, 1e-5);
    st.forward(tape.constant(x), ones, zeros, Mode::train, true);
    CHECK(st.updates == 1);
    for (std::size_t j = 0; j < D; ++j) {
      CHECK(st.running_mean[j] == doctest::Approx(0.1 * out.mean[j]));
      CHECK(st.running_var[j] == doctest::Approx(0.9 + 0.1 * out.var[j]));
      CHECK(st.running_var[j] >= 0.0);
    }
    st.forward(tape.constant(x), ones, zeros, Mode::train, false);
    CHECK(st.updates == 1);
    auto inf = st.forward(tape.constant(Tensor<double>({1, D})), ones, zeros, Mode::infer, false).value();
    for (std::size_t j = 0; j < D; ++j) {
      CHECK(inf[j] == doctest::Approx(-st.running_mean[j] / std::sqrt(st.running_var[j] + 1e-5)));
    }
  }
  SUBCASE("gradients") {
    auto r = gradcheck({random_tensor({6, 4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)},
                       [](Tape<double>&, const std::vector<Var<double>>& v) {
                         auto y = nd::batch_norm_train(v[0], v[1], v[2], 1e-5).y;
                         return nd::sum(nd::mul(nd::tanh(y), nd::sigmoid(y)));
                       });
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("parameter counts") {
  CHECK(gru_direction_param_count(40, 16) == 2736);
  std::mt19937_64 rng(7);
  ParamSet<double> one;
  add_gru_direction(one, "d", 40, 16, rng);
  CHECK(one.scalar_count() == 2736);
  add_gru_direction(one, "e", 40, 16, rng);
  CHECK(one.scalar_count() == 2 * 2736);

  ParamSet<double> dec;
  add_decoder_params(dec, 32, DecoderConfig{64, 5, true, Pooling::max}, rng);
  CHECK(dec.scalar_count() == 2565);

  SpeechModel<double> m(EncoderConfig{40, 2, 16, 2}, DecoderConfig{64, 5, true, Pooling::max}, 1);
  const std::size_t expect = 2 * gru_direction_param_count(40, 16) + 2 * gru_direction_param_count(32, 16) + 2565;
  CHECK(m.count_params() == expect);
}

TEST_CASE("model forward") {
  SpeechModel<double> model(toy_encoder(), toy_decoder(), 3);
  std::mt19937_64 rng(8);
  SUBCASE("errors") {
    CHECK_THROWS_AS(model.posterior(random_tensor({10, 5}, rng)), Error);  // no running statistics yet
    Tape<double> tape;
    BoundParams<double> bp(tape, model.params());
    auto wrong = random_tensor({10, 6}, rng);
    const Tensor<double>* items[] = {&wrong, &wrong};
    CHECK_THROWS_AS(model.logits(tape, bp, std::span<const Tensor<double>* const>(items), Mode::train),
                    DimensionError);
    CHECK_THROWS_AS(EncoderConfig({5, 0, 3, 2}).validate(), ConfigError);
    CHECK_THROWS_AS(DecoderConfig({4, 1, true, Pooling::max}).validate(), ConfigError);
  }
  SUBCASE("posterior is a probability vector") {
    {
      Tape<double> tape;
      BoundParams<double> bp(tape, model.params());
      auto a = random_tensor({12, 5}, rng), b = random_tensor({7, 5}, rng);
      const Tensor<double>* items[] = {&a, &b};
      model.logits(tape, bp, std::span<const Tensor<double>* const>(items), Mode::train);
    }
    std::uniform_int_distribution<std::size_t> len(1, 40);
    for (int trial = 0; trial < 200; ++trial) {
      auto p = model.posterior(random_tensor({len(rng), 5}, rng, 5.0));
      double s = 0.0;
      for (double v : p.values()) {
        CHECK(v > 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
  SUBCASE("zero weights give a uniform posterior") {
    for (auto& [name, t] : model.params())
      if (name != "dec.bn.gamma") t.fill(0.0);
    model.batch_norm_state().updates = 1;
    auto p = model.posterior(random_tensor({15, 5}, rng));
    for (double v : p.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
}

TEST_CASE("full model gradients") {
  std::mt19937_64 rng(9);
  const std::vector<std::size_t> labels = {0, 2, 1};
  for (auto pooling : {Pooling::max, Pooling::last}) {
    CAPTURE(to_string(pooling));
    auto dec = toy_decoder();
    dec.pooling = pooling;
    SpeechModel<double> model(toy_encoder(), dec, 10);
    auto r = param_gradcheck(model.params(),
                             {random_tensor({12, 5}, rng), random_tensor({12, 5}, rng), random_tensor({9, 5}, rng)},
                             [&](Tape<double>& tape, const BoundParams<double>& bp, const std::vector<Var<double>>& x) {
                               auto z = model.logits(tape, bp, std::span<const Var<double>>(x), Mode::train, false);
                               return nd::softmax_xent(z, std::span<const std::size_t>(labels)).loss;
                             });
    for (const auto& [name, err] : r.per_tensor) {
      CAPTURE(name);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("gradients on a 30-frame input") {
  std::mt19937_64 rng(10);
  auto dec = toy_decoder();
  dec.batch_norm = false;
  SpeechModel<double> model(EncoderConfig{4, 2, 3, 2}, dec, 11);
  const std::size_t label[] = {1};
  auto r = param_gradcheck(model.params(), {random_tensor({30, 4}, rng)},
                           [&](Tape<double>& tape, const BoundParams<double>& bp, const std::vector<Var<double>>& x) {
                             auto z = model.logits(tape, bp, std::span<const Var<double>>(x), Mode::train, false);
                             return nd::softmax_xent(z, std::span<const std::size_t>(label)).loss;
                           });
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("decoder gradients") {
  std::mt19937_64 rng(12);
  ParamSet<double> params;
  DecoderConfig cfg{6, 4, true, Pooling::max};
  add_decoder_params(params, 5, cfg, rng);
  BatchNormState<double> bn(6, {});
  const std::vector<std::size_t> labels = {3, 0, 1};
  auto r = param_gradcheck(params, {random_tensor({3, 5}, rng)},
                           [&](Tape<double>&, const BoundParams<double>& bp, const std::vector<Var<double>>& x) {
                             auto z = decoder_logits(x[0], cfg, bp, bn, Mode::train, false);
                             return nd::softmax_xent(z, std::span<const std::size_t>(labels)).loss;
                           });
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(13);
  SpeechModel<float> model(EncoderConfig{5, 2, 4, 2}, DecoderConfig{6, 3, true, Pooling::last}, 14);
  {
    Tape<float> tape;
    BoundParams<float> bp(tape, model.params());
    auto a = random_tensor({10, 5}, rng).cast<float>(), b = random_tensor({8, 5}, rng).cast<float>();
    const Tensor<float>* items[] = {&a, &b};
    model.logits(tape, bp, std::span<const Tensor<float>* const>(items), Mode::train);
  }
  const auto path = std::filesystem::temp_directory_path() / "slu_test_model.ckpt";
  save_checkpoint(path, to_checkpoint(model));
  auto ckpt = load_checkpoint(path);
  CHECK(ckpt.scalar_count("enc.") + ckpt.scalar_count("dec.") - ckpt.scalar_count("dec.bn.running") ==
        model.count_params());
  auto back = speech_model_from_checkpoint<float>(ckpt);
  CHECK(back.decoder_config().pooling == Pooling::last);
  CHECK(back.encoder_config().hidden == 4);
  CHECK(back.batch_norm_state().updates == 1);
  for (std::size_t i = 0; i < model.params().size(); ++i) CHECK(back.params()[i].second == model.params()[i].second);
  auto x = random_tensor({11, 5}, rng).cast<float>();
  CHECK(back.posterior(x) == model.posterior(x));

  auto wide = speech_model_from_checkpoint<double>(ckpt);
  CHECK(wide.count_params() == model.count_params());

  std::filesystem::resize_file(path, 40);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  ckpt.meta["kind"] = "text";
  CHECK_THROWS_AS(speech_model_from_checkpoint<float>(ckpt), FormatError);
  std::filesystem::remove(path);
}
