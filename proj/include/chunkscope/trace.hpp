#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chunkscope {

/// Recorded hidden activations: layers x positions x dim, aligned 1:1 with tokens.
struct HiddenTrace {
  std::size_t layers = 0;
  std::size_t positions = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // [layer][position][dim], row-major

  std::vector<std::string> tokens;    // one per position
  std::vector<std::string> pos_tags;  // empty, or one per position
  std::map<std::string, std::string> producer;
  std::string convention = "single-pass";

  static HiddenTrace zeros(std::size_t layers, std::size_t positions, std::size_t dim);

  std::span<const double> at(std::size_t layer, std::size_t position) const {
    return {values.data() + (layer * positions + position) * dim, dim};
  }
  std::span<double> at(std::size_t layer, std::size_t position) {
    return {values.data() + (layer * positions + position) * dim, dim};
  }
  std::span<const double> layer_span(std::size_t layer) const {
    return {values.data() + layer * positions * dim, positions * dim};
  }

  /// Throws ContractViolation when shapes, tokens or tags disagree.
  void validate() const;

  /// Positions [begin, end) of every layer, with matching tokens and tags.
  HiddenTrace slice(std::size_t begin, std::size_t end) const;
};

namespace trace {

inline constexpr std::string_view kManifestName = "manifest.json";
inline constexpr std::string_view kAlignmentRule = "one hidden vector per processed token per layer";

std::string payload_name(std::size_t layer);

/// Writes `<dir>/manifest.json` and one `<dir>/layer_NNN.f32` per layer
/// (little-endian binary32, row-major positions x dim).
void write_trace(const HiddenTrace& trace, const std::filesystem::path& dir);

struct ReadOptions {
  // Fraction of non-finite payload values tolerated before rejecting the trace.
  double max_nonfinite_fraction = 0.0;
};

struct ReadReport {
  std::size_t nonfinite = 0;
  std::size_t total_values = 0;
};

/// Accepts the trace directory or the manifest path itself.
HiddenTrace read_trace(const std::filesystem::path& path, const ReadOptions& options = {},
                       ReadReport* report = nullptr);

struct SignalIndex {
  std::string label;
  std::vector<std::size_t> positions;  // strictly increasing
};

struct MatchOptions {
  bool case_insensitive = true;
};

/// Detokenizes `tokens` (GPT-2 'Ġ' and SentencePiece '▁' markers read as spaces) and
/// returns the token position holding the final character of every whole-word match.
/// Word boundaries are any non-alphanumeric character or the text ends.
SignalIndex find_occurrences(const std::vector<std::string>& tokens, std::string_view word,
                             const MatchOptions& options = {});

/// Concatenated token text after marker normalization.
std::string detokenize(const std::vector<std::string>& tokens);

void write_signal_index(const SignalIndex& index, const std::filesystem::path& path);
SignalIndex read_signal_index(const std::filesystem::path& path);

}  // namespace trace
}  // namespace chunkscope
