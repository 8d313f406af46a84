#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "weaknesslab/bitvec.hpp"
#include "weaknesslab/errors.hpp"
#include "weaknesslab/rng.hpp"

// Finite Stack Theory engine: vocabularies of programs over a bitset state
// universe, the embodied language they induce, extensions and weakness,
// tasks and correct policies, the uniform extension-model oracle, and the
// KL-weakness identity. Everything here is an exhaustive oracle meant for
// tiny instances; guards keep worst-case desk runtime bounded.

namespace weaknesslab {

struct StateUniverse {
  std::size_t size = 0;

  explicit StateUniverse(std::size_t n) : size(n) {
    if (n == 0) throw ArgumentError("StateUniverse: size must be >= 1");
  }
};

// A program is a subset of the state universe.
struct Program {
  BitVec members;
};

class Vocabulary {
 public:
  Vocabulary(StateUniverse universe, std::vector<Program> programs)
      : universe_(universe), programs_(std::move(programs)) {
    std::unordered_set<BitVec> seen;
    for (const Program& p : programs_) {
      if (p.members.size() != universe_.size)
        throw ArgumentError("Vocabulary: program width != universe size");
      if (!seen.insert(p.members).second)
        throw ArgumentError("Vocabulary: duplicate program");
    }
  }

  const StateUniverse& universe() const { return universe_; }
  const std::vector<Program>& programs() const { return programs_; }
  std::size_t size() const { return programs_.size(); }

 private:
  StateUniverse universe_;
  std::vector<Program> programs_;
};

// A statement is a set of program indices, kept sorted and unique.
// Consistency (a nonempty truth set) is deliberately not an invariant of the
// type; is_statement checks it against a vocabulary.
struct Statement {
  std::vector<std::uint32_t> program_indices;

  static Statement of(std::vector<std::uint32_t> indices) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    return Statement{std::move(indices)};
  }

  std::size_t size() const { return program_indices.size(); }
  bool empty() const { return program_indices.empty(); }

  bool subset_of(const Statement& other) const {
    return std::includes(other.program_indices.begin(), other.program_indices.end(),
                         program_indices.begin(), program_indices.end());
  }

  bool operator==(const Statement&) const = default;
  auto operator<=>(const Statement&) const = default;
};

// An embodied language: the consistent subsets of a vocabulary, stored as a
// sorted list of index sets so membership is O(log |L|).
class Language {
 public:
  explicit Language(std::vector<Statement> statements)
      : statements_(std::move(statements)) {
    std::sort(statements_.begin(), statements_.end());
  }

  const std::vector<Statement>& statements() const { return statements_; }
  std::size_t size() const { return statements_.size(); }

  bool contains(const Statement& s) const { return index_of(s) >= 0; }

  std::ptrdiff_t index_of(const Statement& s) const {
    auto it = std::lower_bound(statements_.begin(), statements_.end(), s);
    if (it != statements_.end() && *it == s) return it - statements_.begin();
    return -1;
  }

 private:
  std::vector<Statement> statements_;
};

inline void check_statement_indices(const Statement& s, const Vocabulary& v) {
  for (std::uint32_t i : s.program_indices)
    if (i >= v.size())
      throw ArgumentError("Statement: program index " + std::to_string(i) +
                          " out of range");
}

// Truth set T(s) = intersection of the member programs. The empty statement
// intersects the empty family and returns the full universe.
inline BitVec truth_set(const Statement& s, const Vocabulary& v) {
  check_statement_indices(s, v);
  BitVec t = BitVec::full(v.universe().size);
  for (std::uint32_t i : s.program_indices) t.and_assign(v.programs()[i].members);
  return t;
}

inline bool is_statement(const Statement& s, const Vocabulary& v) {
  return truth_set(s, v).any();
}

namespace detail {
// DFS over sorted program indices. A superset of an inconsistent set is
// inconsistent, so pruning on an empty intersection visits only consistent
// prefixes; the work is output-sensitive, about |L| * |v| intersections.
inline void enumerate_rec(const Vocabulary& v, std::size_t next, const BitVec& truth,
                          std::vector<std::uint32_t>& current,
                          std::vector<Statement>& out, std::size_t node_cap) {
  if (out.size() > node_cap)
    throw CapacityError("enumerate_language: language exceeds node cap");
  out.push_back(Statement{current});
  for (std::size_t i = next; i < v.size(); ++i) {
    BitVec t = truth;
    t.and_assign(v.programs()[i].members);
    if (t.none()) continue;
    current.push_back(static_cast<std::uint32_t>(i));
    enumerate_rec(v, i + 1, t, current, out, node_cap);
    current.pop_back();
  }
}
}  // namespace detail

// Enumerates the embodied language, including the empty statement. Hard
// guard at |v| <= 32 plus a node cap of 2^22 statements; structured
// vocabularies (mutually exclusive program groups) stay far below both.
inline Language enumerate_language(const Vocabulary& v) {
  if (v.size() > 32)
    throw CapacityError("enumerate_language: |v| = " + std::to_string(v.size()) +
                        " exceeds the enumeration guard (32)");
  std::vector<Statement> out;
  std::vector<std::uint32_t> current;
  detail::enumerate_rec(v, 0, BitVec::full(v.universe().size), current, out,
                        std::size_t(1) << 22);
  return Language(std::move(out));
}

// Ext(x) = { y in L : x subseteq y }.
inline std::vector<Statement> extension(const Statement& x, const Language& lang) {
  if (!lang.contains(x)) throw ArgumentError("extension: statement not in language");
  std::vector<Statement> out;
  for (const Statement& y : lang.statements())
    if (x.subset_of(y)) out.push_back(y);
  return out;
}

inline std::size_t weakness(const Statement& x, const Language& lang) {
  if (!lang.contains(x)) throw ArgumentError("weakness: statement not in language");
  std::size_t w = 0;
  for (const Statement& y : lang.statements())
    if (x.subset_of(y)) ++w;
  return w;
}

struct Task {
  std::vector<Statement> inputs;   // I
  std::vector<Statement> outputs;  // O, subset of Ext(I)
};

namespace detail {
// Boolean mask over language indices marking Ext(X) = union of Ext(x).
inline std::vector<char> extension_mask(const std::vector<Statement>& xs,
                                        const Language& lang) {
  std::vector<char> mask(lang.size(), 0);
  for (std::size_t i = 0; i < lang.size(); ++i) {
    const Statement& y = lang.statements()[i];
    for (const Statement& x : xs) {
      if (x.subset_of(y)) {
        mask[i] = 1;
        break;
      }
    }
  }
  return mask;
}
}  // namespace detail

inline Task make_task(std::vector<Statement> inputs, std::vector<Statement> outputs,
                      const Language& lang) {
  if (inputs.empty()) throw ArgumentError("make_task: inputs must be nonempty");
  for (const Statement& s : inputs)
    if (!lang.contains(s)) throw ArgumentError("make_task: input not in language");
  std::vector<char> ext_inputs = detail::extension_mask(inputs, lang);
  for (const Statement& s : outputs) {
    std::ptrdiff_t idx = lang.index_of(s);
    if (idx < 0 || !ext_inputs[static_cast<std::size_t>(idx)])
      throw ArgumentError("make_task: output not in Ext(inputs)");
  }
  return Task{std::move(inputs), std::move(outputs)};
}

// Policies pi with Ext(I) intersect Ext(pi) == O, found by exhaustive scan.
inline std::vector<Statement> correct_policies(const Task& t, const Language& lang) {
  std::vector<char> ext_inputs = detail::extension_mask(t.inputs, lang);
  std::vector<char> out_mask(lang.size(), 0);
  for (const Statement& s : t.outputs) {
    std::ptrdiff_t idx = lang.index_of(s);
    if (idx < 0) throw ArgumentError("correct_policies: output not in language");
    out_mask[static_cast<std::size_t>(idx)] = 1;
  }
  std::vector<Statement> result;
  for (const Statement& pi : lang.statements()) {
    bool ok = true;
    for (std::size_t i = 0; i < lang.size() && ok; ++i) {
      bool in_both = ext_inputs[i] && pi.subset_of(lang.statements()[i]);
      if (in_both != static_cast<bool>(out_mask[i])) ok = false;
    }
    if (ok) result.push_back(pi);
  }
  return result;
}

// Closed form of the uniform extension model: a policy with buffer B inside
// unseen region U survives a uniform draw S from 2^U with probability
// 2^|B| / 2^|U|.
inline double survival_probability(unsigned buffer_size, unsigned unseen_size) {
  if (unseen_size > 62)
    throw ArgumentError("survival_probability: unseen_size > 62");
  if (buffer_size > unseen_size)
    throw ArgumentError("survival_probability: buffer larger than unseen set");
  return std::exp2(static_cast<double>(buffer_size) -
                   static_cast<double>(unseen_size));
}

// Monte-Carlo estimate of the same survival probability: draw S uniformly
// from the subsets of U (each element independently with probability 1/2)
// and count the draws contained in B.
inline double survival_mc(std::span<const std::uint64_t> buffer,
                          std::span<const std::uint64_t> unseen,
                          std::size_t n_samples, std::uint64_t seed) {
  if (unseen.size() > 62) throw ArgumentError("survival_mc: |U| > 62");
  if (n_samples == 0) throw ArgumentError("survival_mc: n_samples must be >= 1");
  std::unordered_set<std::uint64_t> in_buffer(buffer.begin(), buffer.end());
  for (std::uint64_t b : buffer)
    if (std::find(unseen.begin(), unseen.end(), b) == unseen.end())
      throw ArgumentError("survival_mc: buffer element not in unseen set");
  std::uint64_t outside_mask = 0;
  for (std::size_t i = 0; i < unseen.size(); ++i)
    if (!in_buffer.count(unseen[i])) outside_mask |= (1ull << i);
  std::uint64_t draw_mask =
      unseen.empty() ? 0 : (~0ull >> (64 - unseen.size()));
  SplitMix64 rng(seed);
  std::size_t hits = 0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::uint64_t draw = rng.next_u64() & draw_mask;
    if ((draw & outside_mask) == 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n_samples);
}

// KL(Q || P0) = ln(mu(L) / mu(B)) for the uniform posterior on the buffer
// against the normalised prior; counting measure in the finite case.
// Strictly decreasing in the buffer measure.
inline double kl_uniform(double total_measure, double buffer_measure) {
  if (!(buffer_measure > 0.0))
    throw ArgumentError("kl_uniform: buffer measure must be > 0");
  if (!(buffer_measure <= total_measure))
    throw ArgumentError("kl_uniform: buffer measure exceeds total");
  return std::log(total_measure) - std::log(buffer_measure);
}

// Region-class vocabulary: states are total classification functions
// g : regions -> classes (K^R of them, base-K encoded), and program p_{r,c}
// holds the states with g(r) = c. R*K programs ordered by (r, c).
inline Vocabulary region_class_vocab(unsigned n_regions, unsigned n_classes) {
  if (n_regions == 0) throw ArgumentError("region_class_vocab: R must be >= 1");
  // K = 1 collapses every program to the full universe, which the
  // no-duplicate-programs invariant rejects.
  if (n_classes < 2) throw ArgumentError("region_class_vocab: K must be >= 2");
  std::uint64_t n_states = 1;
  for (unsigned r = 0; r < n_regions; ++r) {
    n_states *= n_classes;
    if (n_states > (1ull << 24))
      throw CapacityError("region_class_vocab: K^R exceeds 2^24 states");
  }
  std::vector<Program> programs;
  programs.reserve(static_cast<std::size_t>(n_regions) * n_classes);
  std::uint64_t stride = 1;
  for (unsigned r = 0; r < n_regions; ++r) {
    for (unsigned c = 0; c < n_classes; ++c) {
      BitVec members(static_cast<std::size_t>(n_states));
      for (std::uint64_t s = 0; s < n_states; ++s)
        if ((s / stride) % n_classes == c) members.set(static_cast<std::size_t>(s));
      programs.push_back(Program{std::move(members)});
    }
    stride *= n_classes;
  }
  return Vocabulary(StateUniverse(static_cast<std::size_t>(n_states)),
                    std::move(programs));
}

// Region index of a region-class program, given the (r, c) ordering above.
inline unsigned region_of_program(std::uint32_t program_index, unsigned n_classes) {
  return program_index / n_classes;
}

}  // namespace weaknesslab
