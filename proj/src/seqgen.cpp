#include "chunkscope/seqgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "chunkscope/error.hpp"
#include "chunkscope/rng.hpp"

namespace chunkscope::seqgen {

namespace {

constexpr double kMassTolerance = 1e-9;

std::string describe(std::string_view mode, std::size_t n, std::uint64_t seed) {
  std::ostringstream os;
  os << mode << " n=" << n << " seed=" << seed;
  return os.str();
}

}  // namespace

void Alphabet::validate() const {
  if (symbols.empty()) throw Error(ErrorKind::InvalidSpec, "alphabet is empty");
  std::set<char> seen;
  for (char c : symbols) {
    if (!seen.insert(c).second)
      throw Error(ErrorKind::InvalidSpec, std::string("duplicate alphabet symbol '") + c + "'");
  }
  if (!contains(null_symbol))
    throw Error(ErrorKind::InvalidSpec,
                std::string("null symbol '") + null_symbol + "' is not in the alphabet");
}

std::string Alphabet::words() const {
  std::string out;
  for (char c : symbols)
    if (c != null_symbol) out.push_back(c);
  return out;
}

Alphabet alphabet_of(const std::vector<std::string_view>& texts, char null_symbol) {
  std::set<char> seen{null_symbol};
  for (auto t : texts) seen.insert(t.begin(), t.end());
  return Alphabet{std::string(seen.begin(), seen.end()), null_symbol};
}

void Vocabulary::validate() const {
  if (words.size() != probabilities.size())
    throw Error(ErrorKind::InvalidSpec, "vocabulary has " + std::to_string(words.size()) +
                                            " words but " + std::to_string(probabilities.size()) +
                                            " probabilities");
  double mass = null_probability;
  if (null_probability < 0.0) throw Error(ErrorKind::InvalidSpec, "negative null probability");
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i].empty()) throw Error(ErrorKind::InvalidSpec, "empty vocabulary word");
    if (probabilities[i] < 0.0)
      throw Error(ErrorKind::InvalidSpec, "negative probability for word " + words[i]);
    mass += probabilities[i];
  }
  if (std::abs(mass - 1.0) > kMassTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << "probability mass sums to " << mass << ", expected 1";
    throw Error(ErrorKind::InvalidSpec, os.str());
  }
}

Vocabulary uniform_vocabulary(std::vector<std::string> words, char null_symbol,
                              double null_probability) {
  Vocabulary v;
  v.null_symbol = null_symbol;
  v.null_probability = words.empty() ? 1.0 : null_probability;
  const double each = words.empty() ? 0.0 : (1.0 - null_probability) / words.size();
  v.probabilities.assign(words.size(), each);
  v.words = std::move(words);
  return v;
}

TokenSequence generate_periodic(std::string_view word, std::size_t n) {
  if (word.empty()) throw Error(ErrorKind::InvalidSpec, "periodic word is empty");
  TokenSequence seq;
  seq.tokens.reserve(n);
  for (std::size_t i = 0; i < n; ++i) seq.tokens.push_back(word[i % word.size()]);
  seq.provenance = "periodic word=" + std::string(word) + " n=" + std::to_string(n);
  return seq;
}

TokenSequence generate_sparse(const Vocabulary& vocab, std::size_t n, std::uint64_t seed) {
  vocab.validate();
  Rng rng(seed);
  TokenSequence seq;
  seq.tokens.reserve(n);
  while (seq.tokens.size() < n) {
    const double u = rng.uniform();
    if (u < vocab.null_probability || vocab.words.empty()) {
      seq.tokens.push_back(vocab.null_symbol);
      continue;
    }
    // Categorical choice among words from the same uniform draw.
    double acc = vocab.null_probability;
    std::size_t chosen = vocab.words.size() - 1;
    for (std::size_t w = 0; w < vocab.words.size(); ++w) {
      acc += vocab.probabilities[w];
      if (u < acc) {
        chosen = w;
        break;
      }
    }
    const std::string& word = vocab.words[chosen];
    const std::size_t room = n - seq.tokens.size();
    if (word.size() <= room) {
      seq.tokens += word;
    } else if (vocab.null_probability > 0.0) {
      seq.tokens.append(room, vocab.null_symbol);
    } else {
      seq.tokens += word.substr(0, room);
    }
  }
  seq.provenance = describe("sparse", n, seed);
  return seq;
}

TokenSequence generate_noise_background(std::string_view word, std::string_view noise_symbols,
                                        std::size_t n, std::uint64_t seed,
                                        double noise_probability) {
  if (word.empty()) throw Error(ErrorKind::InvalidSpec, "noise-background word is empty");
  if (noise_probability < 0.0 || noise_probability >= 1.0)
    throw Error(ErrorKind::InvalidSpec, "noise probability must lie in [0, 1)");
  if (noise_symbols.empty() && noise_probability > 0.0)
    throw Error(ErrorKind::InvalidSpec, "noise gaps requested but the noise symbol set is empty");
  Rng rng(seed);
  TokenSequence seq;
  seq.tokens.reserve(n);
  while (seq.tokens.size() < n) {
    if (rng.uniform() < noise_probability) {
      const auto pick = noise_symbols.size() == 1 ? 0 : rng.below(noise_symbols.size());
      seq.tokens.push_back(noise_symbols[pick]);
      continue;
    }
    const std::size_t room = n - seq.tokens.size();
    if (word.size() <= room) {
      seq.tokens += word;
    } else if (!noise_symbols.empty()) {
      for (std::size_t i = 0; i < room; ++i) {
        const auto pick = noise_symbols.size() == 1 ? 0 : rng.below(noise_symbols.size());
        seq.tokens.push_back(noise_symbols[pick]);
      }
    } else {
      seq.tokens += word.substr(0, room);
    }
  }
  seq.provenance = describe("noise", n, seed);
  return seq;
}

Vocabulary generate_hierarchical_vocab(const Alphabet& alphabet, std::size_t iterations,
                                       std::uint64_t seed) {
  alphabet.validate();
  Rng rng(seed);
  std::vector<std::string> words;
  for (char c : alphabet.words()) words.emplace_back(1, c);
  if (words.empty()) throw Error(ErrorKind::InvalidSpec, "alphabet has no non-null symbols");
  std::set<std::string> present(words.begin(), words.end());
  for (std::size_t it = 0; it < iterations; ++it) {
    std::string fresh;
    for (int attempt = 0; attempt < 64 && fresh.empty(); ++attempt) {
      std::string candidate = words[rng.below(words.size())] + words[rng.below(words.size())];
      if (!present.count(candidate)) fresh = std::move(candidate);
    }
    if (fresh.empty()) {
      // Longest word doubled is always new.
      const auto& longest = *std::max_element(
          words.begin(), words.end(), [](auto& a, auto& b) { return a.size() < b.size(); });
      fresh = longest + longest;
    }
    present.insert(fresh);
    words.push_back(std::move(fresh));
  }

  std::vector<double> draw(words.size());
  for (auto& x : draw) x = rng.exponential();
  const double total = std::accumulate(draw.begin(), draw.end(), 0.0);
  for (auto& x : draw) x /= total;
  std::sort(draw.begin(), draw.end());

  Vocabulary v;
  v.null_symbol = alphabet.null_symbol;
  v.null_probability = 0.8;
  v.words = std::move(words);
  v.probabilities.resize(draw.size());
  for (std::size_t i = 0; i < draw.size(); ++i) v.probabilities[i] = 0.2 * draw[i];
  // Absorb rounding so the total mass is exactly representable as 1 within tolerance.
  const double word_mass = std::accumulate(v.probabilities.begin(), v.probabilities.end(), 0.0);
  v.probabilities.back() += 0.2 - word_mass;
  return v;
}

std::pair<TokenSequence, TokenSequence> generate_transfer_pair(std::uint64_t seed,
                                                               const TransferPairConfig& config) {
  auto train_vocab = uniform_vocabulary(kTransferTrainingWords, 'E', config.null_probability);
  auto transfer_vocab =
      uniform_vocabulary({std::string(kTransferWord)}, 'E', config.null_probability);
  auto train = generate_sparse(train_vocab, config.train_length, Rng::derive(seed, 0));
  auto transfer = generate_sparse(transfer_vocab, config.transfer_length, Rng::derive(seed, 1));
  train.provenance = "transfer-train " + train.provenance + " base_seed=" + std::to_string(seed);
  transfer.provenance =
      "transfer-target " + transfer.provenance + " base_seed=" + std::to_string(seed);
  return {std::move(train), std::move(transfer)};
}

void write_sequence(const TokenSequence& seq, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << seq.tokens << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

TokenSequence read_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  TokenSequence seq;
  for (char c : buf.str())
    if (!std::isspace(static_cast<unsigned char>(c))) seq.tokens.push_back(c);
  seq.provenance = "file " + path.string();
  return seq;
}

}  // namespace chunkscope::seqgen
