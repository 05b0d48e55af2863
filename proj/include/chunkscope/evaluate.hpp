#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "chunkscope/dsc.hpp"
#include "chunkscope/rnn.hpp"
#include "chunkscope/seqgen.hpp"
#include "chunkscope/trace.hpp"

namespace chunkscope::evaluate {

/// Mean activation window over the occurrences of a word, stored d x w row-major.
struct DeviationTemplate {
  std::string word;
  std::size_t dim = 0;
  std::size_t layer = 0;
  std::vector<double> values;
  std::size_t occurrences = 0;

  std::size_t width() const { return word.size(); }
  double at(std::size_t neuron, std::size_t offset) const { return values[neuron * width() + offset]; }
};

/// Start positions of non-overlapping occurrences of `word`, scanning left to right.
std::vector<std::size_t> word_starts(const std::string& tokens, const std::string& word);

/// Throws EmptyOccurrence when the word never occurs.
DeviationTemplate build_template(const HiddenTrace& trace, const std::string& tokens,
                                 const std::string& word, std::size_t layer = 0);

/// dev[i] = ||H[:, i:i+w] - T||^2 / (d*w) for every start i with i + w <= positions.
std::vector<double> deviation_series(const HiddenTrace& trace, const DeviationTemplate& tmpl);

struct ThresholdFit {
  double threshold = 0.0;     // midpoint of the gap when separable
  double max_positive = 0.0;  // largest dev at a true start
  double min_negative = 0.0;  // smallest dev elsewhere
  std::size_t errors = 0;     // misclassified positions at `threshold`
  bool separable = false;
};

/// Single threshold "dev <= threshold means word start".
ThresholdFit separating_threshold(const std::vector<double>& dev,
                                  const std::vector<std::size_t>& starts);

/// Named scalar metrics plus the seeds that produced them.
struct ExperimentSummary {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, double> metrics;

  double get(const std::string& key) const;
  void set(const std::string& key, double value);
};

/// Greedy longest-match parse of a token string into ground-truth words; symbols not
/// starting any word count as single-symbol parts.
std::size_t ground_truth_parse_length(const std::string& tokens,
                                      const std::vector<std::string>& words);

/// Ground-truth word occurrences against the neural parse of the same sequence.
ExperimentSummary count_chunks_vs_words(const std::vector<std::size_t>& parse,
                                        const dsc::ChunkVocab& vocab, const std::string& tokens,
                                        const std::vector<std::string>& ground_truth_vocab);

struct PipelineConfig {
  rnn::TrainConfig train;
  std::size_t sequence_length = 20000;
  std::size_t clusters = 5;
  dsc::ChunkingConfig chunking;
  std::size_t filter_threshold = 5;
};

/// One seed of generate -> train -> record -> symbolize -> chunk.
struct PipelineRun {
  seqgen::TokenSequence sequence;
  rnn::RnnParams params;
  rnn::TrainReport report;
  HiddenTrace trace;
  std::vector<dsc::SymbolizedState> states;
  dsc::ChunkingResult chunks;
  dsc::ParseStats stats;
};

/// Symbolize and chunk an existing trace.
void analyze_trace(PipelineRun& run, const PipelineConfig& config, std::uint64_t seed);

/// Trains on `sequence`; with `trained == false` the net keeps its seeded initialization.
PipelineRun run_pipeline(const seqgen::TokenSequence& sequence, const std::string& alphabet,
                         const PipelineConfig& config, std::uint64_t seed, bool trained = true);

struct TrainedUntrained {
  std::vector<ExperimentSummary> trained;    // one per seed
  std::vector<ExperimentSummary> untrained;  // paired by seed
  ExperimentSummary aggregate;               // means and standard errors
};

inline const std::vector<std::string> kOverlapWords = {"CDAB", "AB", "ABCD"};

/// Per seed: one sparse sequence over `words`, a trained and an untrained net on it.
TrainedUntrained compare_trained_untrained(const std::vector<std::string>& words,
                                           const std::vector<std::uint64_t>& seeds,
                                           const PipelineConfig& config);

struct HierarchyLevel {
  std::size_t depth = 0;
  std::vector<ExperimentSummary> runs;  // one per seed
  ExperimentSummary aggregate;
};

/// Depths 0..max_iterations over alphabet ABCD with null E.
std::vector<HierarchyLevel> hierarchy_scaling(std::size_t max_iterations,
                                              const std::vector<std::uint64_t>& seeds,
                                              const PipelineConfig& config);

double mean(const std::vector<double>& xs);
/// Standard error of the mean (sample standard deviation / sqrt(n)); 0 for n < 2.
double standard_error(const std::vector<double>& xs);

/// Adds "<metric>_mean" and "<metric>_sem" for every metric shared by `runs`.
ExperimentSummary aggregate(const std::string& name, const std::vector<ExperimentSummary>& runs);

/// Long-format CSV: experiment,seeds,metric,value (seeds joined with ";").
void write_summaries_csv(const std::vector<ExperimentSummary>& summaries,
                         const std::filesystem::path& path);
/// JSON manifest with seeds and metrics per summary.
void write_summaries_json(const std::vector<ExperimentSummary>& summaries,
                          const std::filesystem::path& path);

}  // namespace chunkscope::evaluate
