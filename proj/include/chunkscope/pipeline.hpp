#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chunkscope/dsc.hpp"
#include "chunkscope/rnn.hpp"
#include "chunkscope/seqgen.hpp"

namespace chunkscope::pipeline {

/// Declarative sequence recipe shared by `generate` and `run`.
struct SequenceSpec {
  std::string mode = "sparse";  // periodic | sparse | noise | hierarchical
  std::vector<std::string> words;
  std::vector<double> probabilities;  // empty: uniform split of 1 - null_probability
  char null_symbol = 'E';
  double null_probability = 0.8;
  std::string noise_symbols = "EFG";
  std::size_t length = 0;
  std::size_t iterations = 0;  // hierarchical depth
  std::optional<std::uint64_t> seed;

  /// Sorted symbols the sequence can contain (null symbol included).
  std::string alphabet() const;
};

seqgen::TokenSequence generate(const SequenceSpec& spec);

struct ExperimentConfig {
  std::string name;
  std::string output;  // relative paths resolve against default_output_root()
  SequenceSpec sequence;
  std::size_t holdout = 0;  // trailing positions kept out of training and fitting

  rnn::TrainConfig train;
  std::uint64_t train_seed = 0;
  std::string alphabet;  // empty: derived from the sequence spec

  bool dsc_enabled = false;
  std::size_t clusters = 5;
  std::uint64_t dsc_seed = 0;
  dsc::ChunkingConfig chunking;

  bool popavg_enabled = false;
  std::string signal;
  long shift = 0;

  bool unsup_enabled = false;
  std::size_t unsup_chunks = 8;
  std::size_t unsup_steps = 200;
  double unsup_learning_rate = 0.1;
  std::size_t unsup_batch = 0;
  std::uint64_t unsup_seed = 0;
};

/// Parses and validates a JSON config. Every problem is reported with its field path
/// (e.g. "train.seed: required") in one InvalidSpec error, before any work starts.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct Artifact {
  std::string path;  // relative to the run directory
  std::uintmax_t bytes = 0;
  std::string fnv1a;  // 64-bit FNV-1a of the contents, hex
};

struct RunResult {
  std::filesystem::path directory;
  std::vector<Artifact> artifacts;
  std::map<std::string, double> metrics;
};

/// Executes sequence -> train -> record -> dsc -> popavg -> unsup and writes
/// `provenance.json` listing the config, seeds, metrics and artifact hashes.
RunResult run(const ExperimentConfig& config, const std::filesystem::path& directory);

/// $CHUNKSCOPE_OUT if set, else "chunkscope-out".
std::filesystem::path default_output_root();
std::filesystem::path resolve_output(const std::string& requested, const std::string& fallback);

std::string fnv1a_file(const std::filesystem::path& path);

/// Positions of the last symbol of every non-overlapping occurrence of `signal`.
std::vector<std::size_t> signal_positions(const std::string& tokens, const std::string& signal);

}  // namespace chunkscope::pipeline
