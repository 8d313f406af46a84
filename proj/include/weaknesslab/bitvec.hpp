#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace weaknesslab {

// Packed bit vector whose width is fixed at construction. Backs both program
// membership sets over the state universe and layer activation patterns.
// Padding bits above the width are kept zero so equality and hashing can work
// word-by-word.
class BitVec {
 public:
  BitVec() = default;

  explicit BitVec(std::size_t nbits, bool value = false)
      : nbits_(nbits), words_((nbits + 63) / 64, value ? ~0ull : 0ull) {
    clear_padding();
  }

  static BitVec full(std::size_t nbits) { return BitVec(nbits, true); }

  std::size_t size() const { return nbits_; }

  bool test(std::size_t i) const {
    return (words_[i >> 6] >> (i & 63)) & 1ull;
  }

  void set(std::size_t i, bool value = true) {
    if (value)
      words_[i >> 6] |= 1ull << (i & 63);
    else
      words_[i >> 6] &= ~(1ull << (i & 63));
  }

  void and_assign(const BitVec& other) {
    for (std::size_t w = 0; w < words_.size(); ++w) words_[w] &= other.words_[w];
  }

  std::size_t count() const {
    std::size_t c = 0;
    for (std::uint64_t w : words_) c += static_cast<std::size_t>(__builtin_popcountll(w));
    return c;
  }

  bool any() const {
    for (std::uint64_t w : words_)
      if (w) return true;
    return false;
  }

  bool none() const { return !any(); }

  bool operator==(const BitVec& other) const {
    return nbits_ == other.nbits_ && words_ == other.words_;
  }

  std::size_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull ^ nbits_;
    for (std::uint64_t w : words_) {
      h ^= w;
      h *= 0x100000001b3ull;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }

 private:
  void clear_padding() {
    std::size_t tail = nbits_ & 63;
    if (tail != 0 && !words_.empty()) words_.back() &= (~0ull >> (64 - tail));
  }

  std::size_t nbits_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace weaknesslab

template <>
struct std::hash<weaknesslab::BitVec> {
  std::size_t operator()(const weaknesslab::BitVec& b) const { return b.hash(); }
};
