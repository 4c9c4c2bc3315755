// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <string>
#include <vector>

#include "gwm/core/ops.hpp"
#include "gwm/core/rng.hpp"
#include "gwm/core/tensor.hpp"

namespace gwm::lang {

constexpr int kContentTokens = 20;
constexpr int kTotalTokens = 21;  // 20 content + 1 pooled

// Frozen deterministic text embedder: hash tokenizer into a fixed vocabulary,
// a seeded embedding table, mean pooling, and a seeded linear projection to
// the model width. Regenerable from (seed, vocab, dims); never trained, so
// only the seed and a fingerprint travel in checkpoints.
template <typename T = float>
class LangEmbedder {
 public:
  LangEmbedder(int vocab, int embed_dim, int model_dim, uint64_t seed)
      : vocab_(vocab), embed_dim_(embed_dim), model_dim_(model_dim), seed_(seed) {
    check(vocab_ >= 2, "LangEmbedder: vocab too small");
    Rng rng(seed ^ 0x5b1ce7a3d90f42ULL);
    Rng table_rng = rng.split("table");
    Rng proj_rng = rng.split("proj");
    T table_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(embed_dim_)));
    table_.resize(static_cast<size_t>(vocab_) * embed_dim_);
    for (auto& v : table_) v = static_cast<T>(table_rng.next_normal()) * table_std;
    T proj_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(embed_dim_)));
    proj_.resize(static_cast<size_t>(embed_dim_) * model_dim_);
    for (auto& v : proj_) v = static_cast<T>(proj_rng.next_normal()) * proj_std;
    empty_ = embed("");
  }

  int model_dim() const { return model_dim_; }
  int vocab() const { return vocab_; }
  uint64_t seed() const { return seed_; }

  uint64_t fingerprint() const {
    uint64_t h = Rng::hash64("langembed");
    h ^= seed_ + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= static_cast<uint64_t>(vocab_) + (h << 6) + (h >> 2);
    h ^= static_cast<uint64_t>(embed_dim_) + (h << 6) + (h >> 2);
    h ^= static_cast<uint64_t>(model_dim_) + (h << 6) + (h >> 2);
    return h;
  }

  // Lowercase, split on anything non-alphanumeric, hash each word into
  // [1, vocab); id 0 is PAD.
  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> ids;
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      uint64_t h = Rng::hash64(word);
      ids.push_back(1 + static_cast<int>(h % static_cast<uint64_t>(vocab_ - 1)));
      word.clear();
    };
    for (char ch : text) {
      unsigned char c = static_cast<unsigned char>(ch);
      if (std::isalnum(c))
        word.push_back(static_cast<char>(std::tolower(c)));
      else
        flush();
    }
    flush();
    return ids;
  }

  // (21, model_dim) constant tensor: 20 padded/truncated content rows plus
  // one pooled row equal to the mean of the content rows.
  Tensor<T> embed(const std::string& text) const {
    std::vector<int> ids = tokenize(text);
    ids.resize(kContentTokens, 0);  // right-pad with PAD (id 0) / truncate
    TVec<T> rows(static_cast<size_t>(kTotalTokens) * embed_dim_, T(0));
    for (int i = 0; i < kContentTokens; ++i) {
      const T* src = table_.data() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * embed_dim_;
      std::copy_n(src, embed_dim_, rows.data() + static_cast<size_t>(i) * embed_dim_);
    }
    T* pooled = rows.data() + static_cast<size_t>(kContentTokens) * embed_dim_;
    for (int d = 0; d < embed_dim_; ++d) {
      double acc = 0;
      for (int i = 0; i < kContentTokens; ++i)
        acc += static_cast<double>(rows[static_cast<size_t>(i) * embed_dim_ + d]);
      pooled[d] = static_cast<T>(acc / kContentTokens);
    }
    // frozen projection to model_dim
    Tensor<T> out = Tensor<T>::zeros({kTotalTokens, model_dim_});
    CMap<T> R(rows.data(), kTotalTokens, embed_dim_);
    CMap<T> P(proj_.data(), embed_dim_, model_dim_);
    Map<T> O(out.data().data(), kTotalTokens, model_dim_);
    O.noalias() = R * P;
    return out;
  }

  const Tensor<T>& empty_embedding() const { return empty_; }

 private:
  int vocab_, embed_dim_, model_dim_;
  uint64_t seed_;
  TVec<T> table_, proj_;
  Tensor<T> empty_;
};

}  // namespace gwm::lang
