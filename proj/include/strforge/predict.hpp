#pragma once

#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "strforge/params.hpp"

namespace strforge {

using Label = std::vector<std::size_t>;

/// "0-9a-z" plus one special index (36): blank for CTC, EOS for attention.
class LabelCodec {
 public:
  static constexpr std::string_view kAlphabet = "0123456789abcdefghijklmnopqrstuvwxyz";
  static constexpr std::size_t kSpecial = 36;
  static constexpr std::size_t kClasses = 37;

  /// Throws CodecError on characters outside the alphabet.
  static Label encode(std::string_view text);
  /// Skips the special index; throws CodecError on indices >= 37.
  static std::string decode(const Label& label);
};

/// Merges adjacent repeats, then drops blanks.
Label collapse(const Label& frames, std::size_t blank);
/// Character form, '-' being the blank: "aaa--b-b-c-ccc-c--" -> "abbccc".
std::string collapse(std::string_view frames, char blank = '-');

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log p(label | frames) by the log-space forward recursion. `log_probs` is
/// [T, K] per-frame log-probabilities. Infeasible labels give -inf. Throws
/// CodecError for label entries >= K or equal to the blank.
double ctc_log_prob(const Tensor& log_probs, const Label& label, std::size_t blank);

/// Exact sum over all K^T alignments (T <= 8, K <= 4).
double ctc_brute_force(const Tensor& log_probs, const Label& label, std::size_t blank);

/// Per-frame argmax (first index on ties), then collapse. [T, K] input.
Label ctc_greedy_decode(const Tensor& frames, std::size_t blank);

/// Mean over the batch of -log p(label_n | logits_n). `logits` is [N, T, K]
/// (or [T, K] for one sample); log-softmax is applied internally and the
/// alpha recursion is recorded for backward.
Tensor ctc_loss(const Tensor& logits, const std::vector<Label>& labels, std::size_t blank);

/// CTC prediction head: one FC layer from the feature width to the classes.
class CtcPredictor {
 public:
  CtcPredictor(std::size_t input, ParamStore& store, const std::string& prefix,
               std::size_t classes = LabelCodec::kClasses);
  /// H [N, I, D] -> logits [N, I, K].
  Tensor logits(const Tensor& H) const;
  Tensor loss(const Tensor& H, const std::vector<Label>& labels) const;
  std::vector<Label> decode(const Tensor& H) const;

 private:
  Tensor w_, b_;
  std::size_t classes_;
};

struct AttentionConfig {
  std::size_t input = 256;    // width of h_i
  std::size_t hidden = 256;   // decoder LSTM state
  std::size_t attention = 256;
  std::size_t classes = LabelCodec::kClasses;
  std::size_t eos = LabelCodec::kSpecial;
};

struct AttentionStep {
  Tensor logits;  // [N, K]; y_t = softmax(logits)
  Tensor h, c;    // new decoder state s_t and cell
  Tensor alpha;   // [N, I]
};

/// One-layer LSTM decoder with additive attention. The previous symbol is fed
/// as a one-hot vector concatenated with the context; decoding starts from EOS.
class AttentionPredictor {
 public:
  AttentionPredictor(const AttentionConfig& cfg, ParamStore& store, const std::string& prefix);

  /// V h_i + b for every i: [N, I, A]. Computed once per sequence.
  Tensor project(const Tensor& H) const;
  AttentionStep step(const Tensor& y_prev_onehot, const Tensor& h_prev, const Tensor& c_prev, const Tensor& H,
                     const Tensor& H_proj) const;
  /// Teacher-forced mean over the batch of the summed per-step cross-entropy
  /// of label followed by EOS.
  Tensor loss(const Tensor& H, const std::vector<Label>& labels) const;
  std::vector<Label> decode(const Tensor& H, std::size_t max_len = 25) const;
  const AttentionConfig& config() const { return cfg_; }

 private:
  Tensor one_hot(const std::vector<std::size_t>& symbols) const;

  AttentionConfig cfg_;
  Tensor w_s_;          // [A, hidden]
  Tensor w_h_, b_h_;    // [A, input], [A]
  Tensor v_;            // [1, A]
  LstmWeights cell_;    // input = classes + input
  Tensor w_o_, b_o_;    // [K, hidden], [K]
};

std::size_t attention_param_count(const AttentionConfig& cfg);

}  // namespace strforge
