#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chunkscope/trace.hpp"

namespace chunkscope::dsc {

/// Per-neuron 1-D centroids, sorted ascending so digit 0 is the lowest activation band.
struct NeuronClustering {
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> reduced;  // neurons that had fewer distinct values than k

  std::size_t neurons() const { return centroids.size(); }
};

struct ClusterOptions {
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;
  std::size_t layer = 0;
};

/// Independent k-means++ seeded 1-D k-means per neuron. Neuron i uses the stream
/// Rng::derive(seed, i), so results do not depend on evaluation order.
NeuronClustering fit_clusters(const HiddenTrace& trace, std::size_t k, std::uint64_t seed,
                              const ClusterOptions& options = {});

/// Sum of squared distances to the nearest centroid.
double within_cluster_sse(const std::vector<double>& values, const std::vector<double>& centroids);

/// Index of the nearest centroid; ties resolve to the lower index.
std::size_t nearest_centroid(double value, const std::vector<double>& centroids);

using SymbolizedState = std::string;

/// One digit per neuron (0-9 then a-z) per position.
std::vector<SymbolizedState> symbolize(const HiddenTrace& trace, const NeuronClustering& clustering,
                                       std::size_t layer = 0);

struct Chunk {
  std::vector<std::size_t> states;  // ids into ChunkVocab::states
  std::string key;                  // concatenated digits
  std::size_t frequency = 0;        // occurrences in the latest parse
};

struct MergeRecord {
  std::size_t iteration = 0;
  std::string left;
  std::string right;
  std::size_t count = 0;  // adjacent pair count at merge time
};

struct ChunkVocab {
  std::size_t state_width = 0;
  std::vector<std::string> states;  // distinct symbolized states, first-seen order
  std::vector<Chunk> chunks;
  std::optional<std::size_t> null_state;  // unique most frequent state, if one dominates
  std::vector<MergeRecord> merges;

  std::size_t size() const { return chunks.size(); }
  /// Chunks spanning more than one state.
  std::size_t learned_count() const;
  std::optional<std::size_t> find(const std::string& key) const;
};

struct ChunkingConfig {
  std::size_t candidates = 20;      // K pairs considered per iteration
  std::size_t freq_threshold = 5;
  std::size_t iterations = 10;
  double prefix_dominance = 10.0;   // prune a prefix chunk dominated by this factor
};

struct ChunkingResult {
  std::vector<std::size_t> parse;  // chunk ids
  ChunkVocab vocab;
  std::vector<std::size_t> vocab_sizes;  // after each iteration that ran
};

/// Iterative adjacent-pair merging over the symbolized state sequence, with greedy
/// longest-match re-parsing after every round. Pairs touching the null state never merge.
ChunkingResult learn_chunks(const std::vector<SymbolizedState>& states,
                            const ChunkingConfig& config = {});

/// Greedy longest-match left-to-right parse of `states` (as ids) using `vocab`.
std::vector<std::size_t> greedy_parse(const std::vector<std::size_t>& state_ids,
                                      const ChunkVocab& vocab);

struct LookupEntry {
  char symbol = '\0';
  std::size_t count = 0;  // co-occurrences with `symbol`
  std::size_t total = 0;  // all observations of the state
  std::vector<std::pair<char, std::size_t>> observed;  // first-seen order

  bool ambiguous() const { return observed.size() > 1; }
};

struct LookupTable {
  std::map<SymbolizedState, LookupEntry> entries;

  std::optional<char> decode(const SymbolizedState& state) const;
  std::size_t ambiguous_count() const;
};

/// Majority co-occurring input per state; ties go to the symbol seen first with that state.
LookupTable build_lookup(const std::vector<SymbolizedState>& states,
                         const std::vector<std::string>& tokens);

/// Fraction of positions whose state decodes to the token at that position.
double decode_accuracy(const LookupTable& table, const std::vector<SymbolizedState>& states,
                       const std::vector<std::string>& tokens);

struct ParseStats {
  std::size_t parse_length = 0;
  std::size_t unique_states = 0;
  std::size_t vocab_size = 0;
  std::size_t filtered_vocab_size = 0;
};

ParseStats parse_stats(const std::vector<std::size_t>& parse, const ChunkVocab& vocab,
                       std::size_t threshold = 5);

/// Text formats: `#` header lines, then tab-separated records.
void write_vocab(const ChunkVocab& vocab, const std::filesystem::path& path);
void write_lookup(const LookupTable& table, const std::filesystem::path& path);
LookupTable read_lookup(const std::filesystem::path& path);

/// Per-neuron centroids as JSON, so a held-out trace can be symbolized with the same codebook.
void write_clustering(const NeuronClustering& clustering, const std::filesystem::path& path);
NeuronClustering read_clustering(const std::filesystem::path& path);

}  // namespace chunkscope::dsc
