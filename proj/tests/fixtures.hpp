#pragma once

// Synthetic manifests built to the published subset sizes and duplicate
// counts. Labels are generated, never real benchmark content.

#include <random>
#include <string>

#include "strforge/evalkit.hpp"

namespace strforge::testing {

inline std::string random_word(std::mt19937_64& rng, std::size_t len, const std::string& alphabet) {
  std::uniform_int_distribution<std::size_t> d(0, alphabet.size() - 1);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[d(rng)]);
  return s;
}

inline ManifestEntry entry(const std::string& dataset, std::size_t i, std::string label) {
  return {dataset + "/" + std::to_string(i) + ".png", std::move(label), dataset, dataset + "_scene" + std::to_string(i / 4),
          std::nullopt};
}

struct BenchmarkFixture {
  Manifest manifest;
  Manifest exclusion;
};

// 1,110 words: 867 alphanumeric of length >= 3, 150 shorter, 93 with
// punctuation. The exclusion list names 7 of the valid words.
inline BenchmarkFixture ic03_fixture() {
  std::mt19937_64 rng(303);
  const std::string an = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  BenchmarkFixture f;
  std::size_t i = 0;
  for (; i < 867; ++i) f.manifest.push_back(entry("IC03", i, random_word(rng, 3 + i % 6, an)));
  for (; i < 1017; ++i) f.manifest.push_back(entry("IC03", i, random_word(rng, 1 + i % 2, an)));
  for (; i < 1110; ++i) f.manifest.push_back(entry("IC03", i, random_word(rng, 2, an) + "'" + random_word(rng, 2, an)));
  for (std::size_t k = 0; k < 7; ++k) f.exclusion.push_back(f.manifest[k * 100 + 5]);
  return f;
}

// 1,095 words: 80 with punctuation, 158 short alphanumeric, 857 long.
inline BenchmarkFixture ic13_fixture() {
  std::mt19937_64 rng(313);
  const std::string an = "abcdefghijklmnopqrstuvwxyz0123456789";
  BenchmarkFixture f;
  std::size_t i = 0;
  for (; i < 857; ++i) f.manifest.push_back(entry("IC13", i, random_word(rng, 3 + i % 5, an)));
  for (; i < 1015; ++i) f.manifest.push_back(entry("IC13", i, random_word(rng, 1 + i % 2, an)));
  for (; i < 1095; ++i) f.manifest.push_back(entry("IC13", i, random_word(rng, 3, an) + "!"));
  std::shuffle(f.manifest.begin(), f.manifest.end(), rng);
  return f;
}

// 2,077 words, 266 of them named by the exclusion list.
inline BenchmarkFixture ic15_fixture() {
  std::mt19937_64 rng(315);
  const std::string mixed = "abcdefghijklmnopqrstuvwxyz0123456789-.";
  BenchmarkFixture f;
  for (std::size_t i = 0; i < 2077; ++i) f.manifest.push_back(entry("IC15", i, random_word(rng, 1 + i % 8, mixed)));
  for (std::size_t i = 0; i < 266; ++i) f.exclusion.push_back(f.manifest[i * 7 + 3]);
  return f;
}

struct DedupeFixture {
  Manifest train, eval;
};

// 34 scene images shared between an IC03-style train set and the
// evaluation set, carrying 215 word boxes (11 scenes with 7, 23 with 6),
// plus unrelated scenes on both sides.
inline DedupeFixture dedupe_fixture() {
  DedupeFixture f;
  std::size_t boxes = 0;
  for (std::size_t s = 0; s < 34; ++s) {
    const std::size_t n = s < 11 ? 7 : 6;
    for (std::size_t b = 0; b < n; ++b, ++boxes) {
      const std::string digest = "shared" + std::to_string(boxes);
      const std::string label = "w" + std::to_string(boxes);
      f.train.push_back({"train/s" + std::to_string(s) + "_" + std::to_string(b) + ".png", label, "custom",
                         "scene" + std::to_string(s), digest});
      f.eval.push_back({"eval/s" + std::to_string(s) + "_" + std::to_string(b) + ".png", label, "IC13",
                        "scene" + std::to_string(s), digest});
    }
  }
  for (std::size_t i = 0; i < 300; ++i) {
    f.train.push_back({"train/x" + std::to_string(i) + ".png", "t" + std::to_string(i), "custom",
                       "train_only" + std::to_string(i / 5), "t" + std::to_string(i)});
    f.eval.push_back({"eval/y" + std::to_string(i) + ".png", "e" + std::to_string(i), "IC13",
                      "eval_only" + std::to_string(i / 5), "e" + std::to_string(i)});
  }
  return f;
}

}  // namespace strforge::testing
