#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "chunkscope/trace.hpp"

namespace chunkscope::unsup {

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

/// All positions of one trace layer as an M x d matrix.
Matrix layer_matrix(const HiddenTrace& trace, std::size_t layer);

/// Cosine similarity. Throws ContractViolation on a zero-norm argument.
double sim(std::span<const double> a, std::span<const double> b);

/// -(1/M) * sum over samples of the best cosine similarity to any dictionary row.
double max_cosine_loss(const Matrix& x, const Matrix& dict);

/// Subgradient of max_cosine_loss with respect to the dictionary: each sample
/// contributes only to its argmax row (lowest id on ties).
Matrix max_cosine_gradient(const Matrix& x, const Matrix& dict);

enum class DictionaryInit {
  DataSpread,  // k-means++-style picks of data rows under cosine distance
  RandomUnit,  // isotropic random unit vectors
};

struct FitConfig {
  std::size_t chunks = 2000;  // K
  std::size_t steps = 200;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;  // 0 = full batch
  DictionaryInit init = DictionaryInit::DataSpread;
  std::size_t layer = 0;  // recorded in the dictionary metadata
};

struct ChunkDictionary {
  Matrix entries;  // K x d, unit rows
  std::size_t layer = 0;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::vector<double> losses;       // per step, before the update
  std::vector<double> best_losses;  // running minimum of `losses`
  std::vector<std::size_t> dead_chunks;  // never an argmax on the full data after fitting

  std::size_t size() const { return entries.rows; }
  std::size_t dim() const { return entries.cols; }
};

/// Gradient descent on max_cosine_loss with row renormalization after every step.
ChunkDictionary fit_dictionary(const Matrix& x, const FitConfig& config);

struct ChunkAssignment {
  std::size_t chunk = 0;
  double similarity = 0.0;
};

std::vector<ChunkAssignment> assign(const Matrix& x, const Matrix& dict);

struct PosCorrelation {
  std::size_t layer = 0;
  std::string tag;
  double r = 0.0;          // max Pearson correlation over chunks
  std::size_t chunk = 0;   // argmax chunk, lowest id on ties
};

/// Pearson correlation between two indicator series given their counts; 0 when either
/// series is constant.
double indicator_correlation(std::size_t n, std::size_t n_x, std::size_t n_y, std::size_t n_xy);

/// For every layer and tag: max over chunks 0..K-1 of the correlation between
/// "chunk k assigned" and "tag present". Tags in `tag_universe` absent from the data get r = 0.
std::vector<PosCorrelation> pos_correlate(
    const std::vector<std::vector<ChunkAssignment>>& per_layer,
    const std::vector<std::string>& pos_tags, std::size_t chunk_count,
    const std::vector<std::string>& tag_universe = {});

/// The 36 Penn Treebank part-of-speech tags plus its punctuation tags.
const std::vector<std::string>& penn_treebank_tags();

/// `<stem>.json` manifest (K, d, layer, seed, steps) plus `<stem>.f32` row-major entries.
void save_dictionary(const ChunkDictionary& dict, const std::filesystem::path& stem);
ChunkDictionary load_dictionary(const std::filesystem::path& stem);

void write_assignments_csv(const std::vector<ChunkAssignment>& assignments,
                           const std::vector<std::string>& tokens,
                           const std::filesystem::path& path);
void write_pos_csv(const std::vector<PosCorrelation>& rows, const std::filesystem::path& path);

}  // namespace chunkscope::unsup
