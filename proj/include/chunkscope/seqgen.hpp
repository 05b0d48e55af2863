#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace chunkscope::seqgen {

/// Ordered set of single-character symbols with one designated background symbol.
struct Alphabet {
  std::string symbols;
  char null_symbol = 'E';

  /// Throws InvalidSpec on empty/duplicate symbols or a null symbol outside the set.
  void validate() const;
  bool contains(char c) const { return symbols.find(c) != std::string::npos; }
  std::size_t size() const { return symbols.size(); }
  /// Symbols other than the null symbol, in order.
  std::string words() const;
};

/// Sorted union of the symbols occurring in any of the given strings.
Alphabet alphabet_of(const std::vector<std::string_view>& texts, char null_symbol);

struct Vocabulary {
  std::vector<std::string> words;
  std::vector<double> probabilities;  // per word; together with null_probability sums to 1
  char null_symbol = 'E';
  double null_probability = 0.8;

  void validate() const;
};

/// Splits the non-null mass (1 - null_probability) evenly over `words`.
Vocabulary uniform_vocabulary(std::vector<std::string> words, char null_symbol = 'E',
                              double null_probability = 0.8);

struct TokenSequence {
  std::string tokens;
  std::string provenance;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  char operator[](std::size_t i) const { return tokens[i]; }
};

TokenSequence generate_periodic(std::string_view word, std::size_t n);

/// Repeated categorical draws: the null symbol with `null_probability`, otherwise a whole
/// word. A word that no longer fits is replaced by null padding; when the null probability
/// is zero the final word is truncated instead.
TokenSequence generate_sparse(const Vocabulary& vocab, std::size_t n, std::uint64_t seed);

/// Geometric-length runs of uniform noise symbols (continue probability
/// `noise_probability`) separated by whole occurrences of `word`.
TokenSequence generate_noise_background(std::string_view word, std::string_view noise_symbols,
                                        std::size_t n, std::uint64_t seed,
                                        double noise_probability = 0.8);

/// Vocabulary grown from the alphabet's non-null symbols by concatenating two uniformly
/// chosen existing words per iteration. Word probabilities are an ascending-sorted flat
/// Dirichlet draw scaled by 0.2; the null symbol keeps 0.8.
Vocabulary generate_hierarchical_vocab(const Alphabet& alphabet, std::size_t iterations,
                                       std::uint64_t seed);

struct TransferPairConfig {
  std::size_t train_length = 20000;
  std::size_t transfer_length = 5000;
  double null_probability = 0.8;
};

inline const std::vector<std::string> kTransferTrainingWords = {"ABCD", "GHI", "JKLMN"};
inline constexpr std::string_view kTransferWord = "ABCDLMN";

/// (training sequence over {ABCD, GHI, JKLMN}, transfer sequence over {ABCDLMN}), both
/// embedded in E.
std::pair<TokenSequence, TokenSequence> generate_transfer_pair(std::uint64_t seed,
                                                               const TransferPairConfig& config = {});

void write_sequence(const TokenSequence& seq, const std::filesystem::path& path);
TokenSequence read_sequence(const std::filesystem::path& path);

}  // namespace chunkscope::seqgen
