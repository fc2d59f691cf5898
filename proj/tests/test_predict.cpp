#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "helpers.hpp"
#include "strforge/gradcheck.hpp"
#include "strforge/predict.hpp"

using namespace strforge;
using strforge::testing::max_abs_diff;
using strforge::testing::random_tensor;
using strforge::testing::values;

namespace {

Tensor uniform_log_probs(std::size_t t, std::size_t k) { return Tensor::full({t, k}, -std::log(static_cast<double>(k))); }

Tensor random_log_probs(std::mt19937_64& rng, std::size_t t, std::size_t k) {
  return log_softmax(random_tensor({t, k}, rng, -2, 2, false), 1);
}

// All strings over symbols {0..k-2} (blank = k-1) of length <= n.
void all_labels(std::size_t symbols, std::size_t n, Label& cur, const std::function<void(const Label&)>& fn) {
  fn(cur);
  if (cur.size() == n) return;
  for (std::size_t s = 0; s < symbols; ++s) {
    cur.push_back(s);
    all_labels(symbols, n, cur, fn);
    cur.pop_back();
  }
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t cols = t.dim(1);
  auto d = t.data();
  return {d.begin() + r * cols, d.begin() + (r + 1) * cols};
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("codec and collapse") {
  CHECK(LabelCodec::kClasses == 37);
  CHECK(LabelCodec::encode("a0z") == Label{10, 0, 35});
  CHECK(LabelCodec::decode(LabelCodec::encode("hello42")) == "hello42");
  CHECK(LabelCodec::decode(LabelCodec::encode(LabelCodec::kAlphabet)) == LabelCodec::kAlphabet);
  CHECK_THROWS_AS(LabelCodec::encode("Hi"), CodecError);
  CHECK_THROWS_AS(LabelCodec::decode({37}), CodecError);

  CHECK(collapse("aaa--b-b-c-ccc-c--") == "abbccc");
  CHECK(collapse("") == "");
  CHECK(collapse("-a-") == "a");
  CHECK(collapse(Label{1, 1, 0, 1, 2, 2}, 0) == Label{1, 1, 2});
}

TEST_CASE("CTC probability examples") {
  CHECK(std::exp(ctc_log_prob(uniform_log_probs(1, 2), {1}, 0)) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(std::exp(ctc_log_prob(uniform_log_probs(2, 3), {1}, 0)) == doctest::Approx(3.0 / 9.0).epsilon(1e-14));
  CHECK(ctc_log_prob(uniform_log_probs(2, 3), {1, 1}, 0) == kNegInf);
  CHECK(std::exp(ctc_log_prob(uniform_log_probs(3, 3), {1, 1}, 0)) == doctest::Approx(1.0 / 27.0).epsilon(1e-14));
  CHECK_THROWS_AS(ctc_log_prob(uniform_log_probs(2, 3), {3}, 0), CodecError);
  CHECK_THROWS_AS(ctc_log_prob(uniform_log_probs(2, 3), {0}, 0), CodecError);
  CHECK_THROWS_AS(ctc_brute_force(uniform_log_probs(9, 3), {1}, 0), ConfigError);
}

TEST_CASE("property: probabilities over all labels sum to one") {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (std::size_t t = 1; t <= 5; ++t) {
    for (std::size_t k : {2u, 3u}) {
      Tensor lp = random_log_probs(rng, t, k);
      double total = 0.0;
      Label cur;
      all_labels(k - 1, t, cur, [&](const Label& y) {
        Label mapped;
        for (auto s : y) mapped.push_back(s + 1);  // blank is 0
        total += std::exp(ctc_log_prob(lp, mapped, 0));
      });
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("property: forward recursion matches brute-force enumeration") {
  std::mt19937_64 rng(12);
  double worst = 0.0;
  std::size_t infeasible = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t t = 1 + rng() % 6, k = 2 + rng() % 3, blank = rng() % k;
    Tensor lp = random_log_probs(rng, t, k);
    Label y;
    const std::size_t len = rng() % (t + 1);
    while (y.size() < len) {
      const std::size_t s = rng() % k;
      if (s != blank) y.push_back(s);
    }
    const double ref = ctc_brute_force(lp, y, blank);
    const double got = ctc_log_prob(lp, y, blank);
    if (ref == 0.0) {
      CHECK(got == kNegInf);
      ++infeasible;
      continue;
    }
    worst = std::max(worst, std::abs(std::exp(got) - ref) / ref);
  }
  MESSAGE("ctc brute force worst rel error " << worst << ", infeasible " << infeasible);
  CHECK(worst < 1e-9);
}

TEST_CASE("greedy decoding") {
  auto peaked = [](const std::vector<std::size_t>& idx, std::size_t k) {
    std::vector<double> v(idx.size() * k, 0.0);
    for (std::size_t t = 0; t < idx.size(); ++t) v[t * k + idx[t]] = 5.0;
    return Tensor::from({idx.size(), k}, v);
  };
  CHECK(ctc_greedy_decode(peaked({1, 1, 0, 2}, 3), 0) == Label{1, 2});
  CHECK(ctc_greedy_decode(peaked({0, 0, 0}, 3), 0).empty());
  // First index wins ties.
  CHECK(ctc_greedy_decode(Tensor::from({1, 3}, {0.0, 1.0, 1.0}), 0) == Label{1});

  std::mt19937_64 rng(13);
  for (int inst = 0; inst < 50; ++inst) {
    Tensor z = random_tensor({5, 4}, rng, -1, 1, false);
    Label path;
    for (std::size_t t = 0; t < 5; ++t) {
      auto r = row(z, t);
      path.push_back(static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()));
    }
    Label expect;
    for (std::size_t t = 0; t < 5; ++t)
      if ((t == 0 || path[t] != path[t - 1]) && path[t] != 3) expect.push_back(path[t]);
    CHECK(ctc_greedy_decode(z, 3) == expect);
    CHECK(ctc_greedy_decode(add_scalar(z, 7.5), 3) == expect);
    CHECK(ctc_greedy_decode(log_softmax(z, 1), 3) == expect);
  }
}

TEST_CASE("CTC loss value and gradient") {
  std::mt19937_64 rng(14);
  Tensor logits = random_tensor({3, 5, 4}, rng, -1, 1);
  std::vector<Label> labels{{1, 2}, {}, {3, 3}};
  Tensor loss = ctc_loss(logits, labels, 0);
  double expect = 0.0;
  for (std::size_t n = 0; n < 3; ++n) expect -= ctc_log_prob(log_softmax(select(logits, 0, n), 1), labels[n], 0);
  CHECK(loss.item() == doctest::Approx(expect / 3.0).epsilon(1e-12));

  auto r = grad_check([&](const std::vector<Tensor>& a) { return ctc_loss(a[0], labels, 0); }, {logits});
  MESSAGE("ctc grad max rel error " << r.max_rel_error);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-4);

  // Blank not at zero, single-sample [T, K] form.
  Tensor one = random_tensor({4, 3}, rng);
  CHECK(ctc_loss(one, {{0, 1}}, 2).item() ==
        doctest::Approx(-ctc_log_prob(log_softmax(one, 1), {0, 1}, 2)).epsilon(1e-12));
  CHECK(grad_check([&](const std::vector<Tensor>& a) { return ctc_loss(a[0], {{0, 1}}, 2); }, {one}).passed);

  Tensor shortt = random_tensor({1, 2, 3}, rng);
  CHECK(std::isinf(ctc_loss(shortt, {{1, 1}}, 0).item()));
  CHECK_THROWS_AS(ctc_loss(logits, {{1}}, 0), ShapeError);
}

TEST_CASE("CTC head shapes and decode") {
  std::mt19937_64 rng(15);
  ParamStore store;
  CtcPredictor head(6, store, "pred");
  CHECK(store.count() == 6 * 37 + 37);
  he_init(store, 1);
  Tensor H = random_tensor({2, 7, 6}, rng);
  CHECK(head.logits(H).shape() == Shape{2, 7, 37});
  auto out = head.decode(H);
  CHECK(out.size() == 2);
  CHECK(out[0] == ctc_greedy_decode(select(head.logits(H), 0, 0), 36));
  CHECK_THROWS_AS(head.logits(random_tensor({2, 7, 5}, rng)), ShapeError);
}

TEST_CASE("attention parameter budget") {
  AttentionConfig cfg;
  cfg.input = 512;
  ParamStore store;
  AttentionPredictor attn(cfg, store, "attn");
  CHECK(store.count() == attention_param_count(cfg));
  CHECK(std::abs(static_cast<double>(store.count()) - 0.9e6) <= 0.20 * 0.9e6);
}

TEST_CASE("attention step oracles") {
  std::mt19937_64 rng(16);
  AttentionConfig cfg{4, 3, 5, 6, 5};
  ParamStore store;
  AttentionPredictor attn(cfg, store, "a");
  he_init(store, 4);
  for (auto& p : store.params())
    for (auto& v : p.value.mutable_data()) v = std::uniform_real_distribution<double>(-0.6, 0.6)(rng);
  auto P = [&](const std::string& n) { return values(store.get("a." + n).value); };

  Tensor onehot = Tensor::from({1, 6}, {0, 0, 1, 0, 0, 0});
  Tensor h0 = random_tensor({1, 3}, rng, -1, 1, false), c0 = random_tensor({1, 3}, rng, -1, 1, false);

  SUBCASE("singleton source") {
    Tensor H = random_tensor({1, 1, 4}, rng);
    auto st = attn.step(onehot, h0, c0, H, attn.project(H));
    CHECK(st.alpha.item() == 1.0);
  }

  SUBCASE("hand-composed step") {
    const std::size_t I = 3, D = 4, A = 5, Hd = 3, K = 6;
    Tensor H = random_tensor({1, I, D}, rng);
    auto st = attn.step(onehot, h0, c0, H, attn.project(H));
    const auto h = values(H), hp = values(h0), cp = values(c0);
    const auto ws = P("attn.w_s"), wh = P("attn.w_h"), bh = P("attn.bias"), v = P("attn.v");
    std::vector<double> e(I);
    for (std::size_t i = 0; i < I; ++i) {
      for (std::size_t a = 0; a < A; ++a) {
        double z = bh[a];
        for (std::size_t j = 0; j < Hd; ++j) z += ws[a * Hd + j] * hp[j];
        for (std::size_t d = 0; d < D; ++d) z += wh[a * D + d] * h[i * D + d];
        e[i] += v[a] * std::tanh(z);
      }
    }
    double zsum = 0.0;
    std::vector<double> alpha(I);
    for (std::size_t i = 0; i < I; ++i) zsum += alpha[i] = std::exp(e[i]);
    for (auto& a : alpha) a /= zsum;
    std::vector<double> ctx(D, 0.0);
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t d = 0; d < D; ++d) ctx[d] += alpha[i] * h[i * D + d];
    std::vector<double> x(K, 0.0);
    x[2] = 1.0;
    x.insert(x.end(), ctx.begin(), ctx.end());
    const auto wih = P("lstm.w_ih"), whh = P("lstm.w_hh"), bl = P("lstm.bias");
    std::vector<double> g(4 * Hd);
    for (std::size_t r = 0; r < 4 * Hd; ++r) {
      g[r] = bl[r];
      for (std::size_t j = 0; j < x.size(); ++j) g[r] += wih[r * x.size() + j] * x[j];
      for (std::size_t j = 0; j < Hd; ++j) g[r] += whh[r * Hd + j] * hp[j];
    }
    std::vector<double> hn(Hd), cn(Hd);
    for (std::size_t j = 0; j < Hd; ++j) {
      cn[j] = sigm(g[Hd + j]) * cp[j] + sigm(g[j]) * std::tanh(g[2 * Hd + j]);
      hn[j] = sigm(g[3 * Hd + j]) * std::tanh(cn[j]);
    }
    const auto wo = P("out.weight"), bo = P("out.bias");
    std::vector<double> logits(K);
    for (std::size_t k = 0; k < K; ++k) {
      logits[k] = bo[k];
      for (std::size_t j = 0; j < Hd; ++j) logits[k] += wo[k * Hd + j] * hn[j];
    }
    CHECK(max_abs_diff(st.alpha.data(), alpha) < 1e-14);
    CHECK(max_abs_diff(st.c.data(), cn) < 1e-14);
    CHECK(max_abs_diff(st.h.data(), hn) < 1e-14);
    CHECK(max_abs_diff(st.logits.data(), logits) < 1e-14);
  }

  SUBCASE("zero scoring vector gives uniform weights") {
    for (auto& p : store.params())
      if (p.name == "a.attn.v") std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), 0.0);
    Tensor H = random_tensor({2, 4, 4}, rng);
    auto st = attn.step(concat({onehot, onehot}, 0), concat({h0, h0}, 0), concat({c0, c0}, 0), H, attn.project(H));
    for (double a : values(st.alpha)) CHECK(a == doctest::Approx(0.25).epsilon(1e-15));
  }
}

TEST_CASE("property: attention weights are distributions") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(200 + seed);
    AttentionConfig cfg{3, 4, 3, 5, 4};
    ParamStore store;
    AttentionPredictor attn(cfg, store, "a");
    he_init(store, seed);
    const std::size_t len = 1 + seed % 6;
    Tensor H = random_tensor({2, len, 3}, rng, -3, 3);
    Tensor h = random_tensor({2, 4}, rng, -2, 2), c = Tensor::zeros({2, 4});
    auto st = attn.step(Tensor::from({2, 5}, {1, 0, 0, 0, 0, 0, 0, 0, 0, 1}), h, c, H, attn.project(H));
    for (std::size_t n = 0; n < 2; ++n) {
      double s = 0.0;
      for (double a : row(st.alpha, n)) {
        CHECK(a >= 0.0);
        s += a;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("attention loss is teacher-forced cross-entropy") {
  std::mt19937_64 rng(17);
  AttentionConfig cfg{3, 4, 3, 5, 4};
  ParamStore store;
  AttentionPredictor attn(cfg, store, "a");
  he_init(store, 5);
  Tensor H = random_tensor({2, 3, 3}, rng);
  std::vector<Label> labels{{1, 2}, {3}};
  Tensor loss = attn.loss(H, labels);

  // Oracle: sample-by-sample unrolled steps.
  double expect = 0.0;
  for (std::size_t n = 0; n < 2; ++n) {
    Tensor Hn = slice(H, 0, n, n + 1);
    Tensor proj = attn.project(Hn);
    Tensor h = Tensor::zeros({1, 4}), c = Tensor::zeros({1, 4});
    std::size_t prev = 4;
    Label targets = labels[n];
    targets.push_back(4);
    for (auto y : targets) {
      std::vector<double> oh(5, 0.0);
      oh[prev] = 1.0;
      auto st = attn.step(Tensor::from({1, 5}, oh), h, c, Hn, proj);
      expect -= log_softmax(st.logits, 1).data()[y];
      h = st.h;
      c = st.c;
      prev = y;
    }
  }
  CHECK(loss.item() == doctest::Approx(expect / 2.0).epsilon(1e-12));

  std::vector<Tensor> inputs{H, store.get("a.attn.w_s").value, store.get("a.attn.v").value,
                             store.get("a.lstm.w_ih").value, store.get("a.out.bias").value};
  auto r = grad_check([&](const std::vector<Tensor>&) { return attn.loss(H, labels); }, inputs);
  MESSAGE("attention grad max rel error " << r.max_rel_error);
  CHECK(r.passed);
  CHECK_THROWS_AS(attn.loss(H, {{4}, {1}}), CodecError);
}

TEST_CASE("attention decoding") {
  std::mt19937_64 rng(18);
  AttentionConfig cfg{3, 4, 3, 5, 4};
  ParamStore store;
  AttentionPredictor attn(cfg, store, "a");
  he_init(store, 6);
  Tensor H = random_tensor({2, 3, 3}, rng, -1, 1, false);
  CHECK(attn.decode(H, 0) == std::vector<Label>{{}, {}});

  SUBCASE("EOS-biased head emits nothing") {
    for (auto& p : store.params())
      if (p.name == "a.out.bias") p.value.mutable_data()[4] = 100.0;
    CHECK(attn.decode(H) == std::vector<Label>{{}, {}});
  }

  SUBCASE("trained toy model matches a manual argmax trace") {
    const Label target{1, 2, 1};
    auto& params = store.params();
    for (int it = 0; it < 300; ++it) {
      store.zero_grad();
      attn.loss(slice(H, 0, 0, 1), {target}).backward();
      for (auto& p : params) {
        auto v = p.value.mutable_data();
        auto g = p.value.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 0.3 * g[i];
      }
    }
    Tensor Hn = slice(H, 0, 0, 1);
    Label trace;
    Tensor h = Tensor::zeros({1, 4}), c = Tensor::zeros({1, 4});
    std::size_t prev = 4;
    for (int t = 0; t < 25; ++t) {
      std::vector<double> oh(5, 0.0);
      oh[prev] = 1.0;
      auto st = attn.step(Tensor::from({1, 5}, oh), h, c, Hn, attn.project(Hn));
      auto z = row(st.logits, 0);
      prev = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      if (prev == 4) break;
      trace.push_back(prev);
      h = st.h;
      c = st.c;
    }
    CHECK(trace == target);
    CHECK(attn.decode(Hn).front() == trace);
    CHECK(attn.decode(Hn, 2).front() == Label{1, 2});
  }
}
