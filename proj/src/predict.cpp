#include "strforge/predict.hpp"

#include <algorithm>
#include <cmath>

namespace strforge {

namespace {

double lse(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_label(const Label& label, std::size_t classes, std::size_t blank) {
  for (auto s : label) {
    if (s >= classes) throw CodecError("label symbol " + std::to_string(s) + " outside " + std::to_string(classes) + " classes");
    if (s == blank) throw CodecError("label contains the blank symbol");
  }
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

}  // namespace

Label LabelCodec::encode(std::string_view text) {
  Label out;
  out.reserve(text.size());
  for (char ch : text) {
    const auto pos = kAlphabet.find(ch);
    if (pos == std::string_view::npos) throw CodecError("character '" + std::string(1, ch) + "' is not in the alphabet");
    out.push_back(pos);
  }
  return out;
}

std::string LabelCodec::decode(const Label& label) {
  std::string out;
  for (auto s : label) {
    if (s == kSpecial) continue;
    if (s >= kClasses) throw CodecError("class index " + std::to_string(s) + " out of range");
    out.push_back(kAlphabet[s]);
  }
  return out;
}

Label collapse(const Label& frames, std::size_t blank) {
  Label out;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (t > 0 && frames[t] == frames[t - 1]) continue;
    if (frames[t] != blank) out.push_back(frames[t]);
  }
  return out;
}

std::string collapse(std::string_view frames, char blank) {
  std::string out;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (t > 0 && frames[t] == frames[t - 1]) continue;
    if (frames[t] != blank) out.push_back(frames[t]);
  }
  return out;
}

double ctc_log_prob(const Tensor& log_probs, const Label& label, std::size_t blank) {
  if (log_probs.rank() != 2) throw ShapeError("frame posterior must be [T, K], got " + shape_str(log_probs.shape()));
  const std::size_t T = log_probs.dim(0), K = log_probs.dim(1);
  if (blank >= K) throw CodecError("blank index outside the class range");
  check_label(label, K, blank);
  const auto lp = log_probs.data();
  const std::size_t S = 2 * label.size() + 1;
  auto sym = [&](std::size_t s) { return s % 2 == 0 ? blank : label[s / 2]; };
  if (T == 0) return label.empty() ? 0.0 : kNegInf;

  std::vector<double> alpha(S, kNegInf), next(S);
  alpha[0] = lp[sym(0)];
  if (S > 1) alpha[1] = lp[sym(1)];
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[s];
      if (s >= 1) a = lse(a, alpha[s - 1]);
      if (s >= 2 && sym(s) != blank && sym(s) != sym(s - 2)) a = lse(a, alpha[s - 2]);
      next[s] = a == kNegInf ? kNegInf : a + lp[t * K + sym(s)];
    }
    alpha.swap(next);
  }
  return S > 1 ? lse(alpha[S - 1], alpha[S - 2]) : alpha[0];
}

double ctc_brute_force(const Tensor& log_probs, const Label& label, std::size_t blank) {
  if (log_probs.rank() != 2) throw ShapeError("frame posterior must be [T, K], got " + shape_str(log_probs.shape()));
  const std::size_t T = log_probs.dim(0), K = log_probs.dim(1);
  if (T > 8 || K > 4) throw ConfigError("brute-force CTC is limited to T <= 8 and K <= 4");
  check_label(label, K, blank);
  const auto lp = log_probs.data();
  std::size_t total = 1;
  for (std::size_t t = 0; t < T; ++t) total *= K;
  double p = 0.0;
  Label path(T);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    double logp = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      path[t] = c % K;
      c /= K;
      logp += lp[t * K + path[t]];
    }
    if (collapse(path, blank) == label) p += std::exp(logp);
  }
  return p;
}

Label ctc_greedy_decode(const Tensor& frames, std::size_t blank) {
  if (frames.rank() != 2) throw ShapeError("frame scores must be [T, K], got " + shape_str(frames.shape()));
  const std::size_t T = frames.dim(0), K = frames.dim(1);
  const auto d = frames.data();
  Label path(T);
  for (std::size_t t = 0; t < T; ++t) path[t] = argmax_row(d.subspan(t * K, K));
  return collapse(path, blank);
}

Tensor ctc_loss(const Tensor& logits_in, const std::vector<Label>& labels, std::size_t blank) {
  Tensor logits = logits_in.rank() == 2 ? reshape(logits_in, {1, logits_in.dim(0), logits_in.dim(1)}) : logits_in;
  if (logits.rank() != 3) throw ShapeError("CTC logits must be [N, T, K], got " + shape_str(logits_in.shape()));
  const std::size_t N = logits.dim(0), T = logits.dim(1), K = logits.dim(2);
  if (labels.size() != N) throw ShapeError("CTC batch of " + std::to_string(N) + " with " + std::to_string(labels.size()) + " labels");
  if (T == 0) throw ShapeError("CTC needs at least one frame");
  std::size_t S = 1;
  for (const auto& l : labels) {
    check_label(l, K, blank);
    S = std::max(S, 2 * l.size() + 1);
  }

  // Extended labels padded to S; padding is masked out with -inf.
  std::vector<std::size_t> index(N * S, blank);
  std::vector<double> pad(N * S, 0.0), init(N * S, kNegInf), skip(N * S, kNegInf), end_mask(N * 2, 0.0);
  std::vector<std::size_t> end_index(N * 2);
  for (std::size_t n = 0; n < N; ++n) {
    const auto& l = labels[n];
    const std::size_t sn = 2 * l.size() + 1;
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t k = n * S + s;
      if (s >= sn) {
        pad[k] = kNegInf;
        continue;
      }
      index[k] = s % 2 == 0 ? blank : l[s / 2];
      if (s < 2) init[k] = 0.0;
      if (s >= 2 && s % 2 == 1 && l[s / 2] != l[s / 2 - 1]) skip[k] = 0.0;
    }
    end_index[n * 2] = sn - 1;
    end_index[n * 2 + 1] = sn >= 2 ? sn - 2 : 0;
    if (sn < 2) end_mask[n * 2 + 1] = kNegInf;
  }
  const Tensor pad_t = Tensor::from({N, S}, pad), init_t = Tensor::from({N, S}, init), skip_t = Tensor::from({N, S}, skip);

  const Tensor lp = log_softmax(logits, 2);
  auto emit = [&](std::size_t t) { return add(gather_cols(select(lp, 1, t), index, S), pad_t); };
  Tensor alpha = add(emit(0), init_t);
  for (std::size_t t = 1; t < T; ++t) {
    Tensor stay_or_step = log_add_exp(alpha, shift_cols(alpha, 1, kNegInf));
    Tensor skip_term = add(shift_cols(alpha, 2, kNegInf), skip_t);
    alpha = add(emit(t), log_add_exp(stay_or_step, skip_term));
  }
  Tensor ends = add(gather_cols(alpha, end_index, 2), Tensor::from({N, 2}, end_mask));
  Tensor ll = log_add_exp(select(ends, 1, 0), select(ends, 1, 1));
  return neg(mean(ll));
}

// ---- heads -----------------------------------------------------------------

CtcPredictor::CtcPredictor(std::size_t input, ParamStore& store, const std::string& prefix, std::size_t classes)
    : w_(store.add(prefix + ".fc.weight", {classes, input}, InitKind::He, input)),
      b_(store.add(prefix + ".fc.bias", {classes}, InitKind::Zero)),
      classes_(classes) {}

Tensor CtcPredictor::logits(const Tensor& H) const {
  if (H.rank() != 3 || H.dim(2) != w_.dim(1)) {
    throw ShapeError("CTC head expects [N, I, " + std::to_string(w_.dim(1)) + "], got " + shape_str(H.shape()));
  }
  const std::size_t n = H.dim(0), len = H.dim(1);
  return reshape(linear(reshape(H, {n * len, H.dim(2)}), w_, b_), {n, len, classes_});
}

Tensor CtcPredictor::loss(const Tensor& H, const std::vector<Label>& labels) const {
  return ctc_loss(logits(H), labels, LabelCodec::kSpecial);
}

std::vector<Label> CtcPredictor::decode(const Tensor& H) const {
  NoGradGuard guard;
  Tensor z = logits(H);
  std::vector<Label> out;
  for (std::size_t n = 0; n < z.dim(0); ++n) out.push_back(ctc_greedy_decode(select(z, 0, n), LabelCodec::kSpecial));
  return out;
}

AttentionPredictor::AttentionPredictor(const AttentionConfig& cfg, ParamStore& store, const std::string& prefix)
    : cfg_(cfg) {
  const std::size_t a = cfg.attention, h = cfg.hidden, in = cfg.input, k = cfg.classes;
  w_s_ = store.add(prefix + ".attn.w_s", {a, h}, InitKind::He, h);
  w_h_ = store.add(prefix + ".attn.w_h", {a, in}, InitKind::He, in);
  b_h_ = store.add(prefix + ".attn.bias", {a}, InitKind::Zero);
  v_ = store.add(prefix + ".attn.v", {1, a}, InitKind::He, a);
  cell_ = {store.add(prefix + ".lstm.w_ih", {4 * h, k + in}, InitKind::He, k + in),
           store.add(prefix + ".lstm.w_hh", {4 * h, h}, InitKind::He, h),
           store.add(prefix + ".lstm.bias", {4 * h}, InitKind::LstmBias)};
  w_o_ = store.add(prefix + ".out.weight", {k, h}, InitKind::He, h);
  b_o_ = store.add(prefix + ".out.bias", {k}, InitKind::Zero);
}

Tensor AttentionPredictor::one_hot(const std::vector<std::size_t>& symbols) const {
  std::vector<double> v(symbols.size() * cfg_.classes, 0.0);
  for (std::size_t n = 0; n < symbols.size(); ++n) v[n * cfg_.classes + symbols[n]] = 1.0;
  return Tensor::from({symbols.size(), cfg_.classes}, std::move(v));
}

Tensor AttentionPredictor::project(const Tensor& H) const {
  if (H.rank() != 3 || H.dim(2) != cfg_.input) {
    throw ShapeError("attention expects [N, I, " + std::to_string(cfg_.input) + "], got " + shape_str(H.shape()));
  }
  if (H.dim(1) == 0) throw ShapeError("attention over an empty sequence");
  const std::size_t n = H.dim(0), len = H.dim(1);
  return reshape(linear(reshape(H, {n * len, cfg_.input}), w_h_, b_h_), {n, len, cfg_.attention});
}

AttentionStep AttentionPredictor::step(const Tensor& y_prev_onehot, const Tensor& h_prev, const Tensor& c_prev,
                                       const Tensor& H, const Tensor& H_proj) const {
  const std::size_t n = H.dim(0), len = H.dim(1);
  Tensor ws = reshape(linear(h_prev, w_s_, Tensor()), {n, 1, cfg_.attention});
  Tensor e = reshape(linear(reshape(tanh(add(H_proj, ws)), {n * len, cfg_.attention}), v_, Tensor()), {n, len});
  Tensor alpha = softmax(e, 1);
  Tensor context = reshape(bmm(reshape(alpha, {n, 1, len}), H), {n, cfg_.input});
  auto [h, c] = lstm_cell(concat({y_prev_onehot, context}, 1), h_prev, c_prev, cell_);
  return {linear(h, w_o_, b_o_), h, c, alpha};
}

Tensor AttentionPredictor::loss(const Tensor& H, const std::vector<Label>& labels) const {
  const std::size_t n = H.dim(0);
  if (labels.size() != n) throw ShapeError("attention batch of " + std::to_string(n) + " with " + std::to_string(labels.size()) + " labels");
  std::size_t steps = 0;
  for (const auto& l : labels) {
    check_label(l, cfg_.classes, cfg_.eos);
    steps = std::max(steps, l.size() + 1);
  }
  Tensor proj = project(H);
  Tensor h = Tensor::zeros({n, cfg_.hidden}), c = Tensor::zeros({n, cfg_.hidden});
  std::vector<std::size_t> prev(n, cfg_.eos);
  Tensor total;
  for (std::size_t t = 0; t < steps; ++t) {
    AttentionStep st = step(one_hot(prev), h, c, H, proj);
    std::vector<std::size_t> target(n, cfg_.eos);
    std::vector<double> weight(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (t < labels[i].size()) target[i] = labels[i][t];
      if (t <= labels[i].size()) weight[i] = 1.0;
    }
    Tensor picked = gather_cols(log_softmax(st.logits, 1), target, 1);
    Tensor term = sum(mul(picked, Tensor::from({n, 1}, weight)));
    total = total.defined() ? add(total, term) : term;
    h = st.h;
    c = st.c;
    prev = target;
  }
  return scale(total, -1.0 / static_cast<double>(n));
}

std::vector<Label> AttentionPredictor::decode(const Tensor& H, std::size_t max_len) const {
  NoGradGuard guard;
  const std::size_t n = H.dim(0);
  std::vector<Label> out(n);
  if (max_len == 0) return out;
  Tensor proj = project(H);
  Tensor h = Tensor::zeros({n, cfg_.hidden}), c = Tensor::zeros({n, cfg_.hidden});
  std::vector<std::size_t> prev(n, cfg_.eos);
  std::vector<bool> done(n, false);
  for (std::size_t t = 0; t < max_len; ++t) {
    AttentionStep st = step(one_hot(prev), h, c, H, proj);
    const auto z = st.logits.data();
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      prev[i] = argmax_row(z.subspan(i * cfg_.classes, cfg_.classes));
      if (done[i]) continue;
      if (prev[i] == cfg_.eos) {
        done[i] = true;
        continue;
      }
      out[i].push_back(prev[i]);
      any = true;
    }
    if (!any && std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
    h = st.h;
    c = st.c;
  }
  return out;
}

std::size_t attention_param_count(const AttentionConfig& cfg) {
  const std::size_t a = cfg.attention, h = cfg.hidden, in = cfg.input, k = cfg.classes;
  return a * h + a * in + a + a + 4 * h * (k + in) + 4 * h * h + 4 * h + k * h + k;
}

}  // namespace strforge
