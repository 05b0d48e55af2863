#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "chunkscope/rnn.hpp"
#include "chunkscope/trace.hpp"

namespace chunkscope::popavg {

/// Occurrence positions of a signal and the step shift applied to them. The analysed
/// index set is { t + shift : t in positions }, out-of-range indices dropped.
struct SignalOccurrences {
  std::string label;
  std::vector<std::size_t> positions;
  long shift = 0;

  std::vector<std::size_t> shifted(std::size_t position_count) const;
};

inline constexpr double kDeltaFloor = 1e-9;
inline constexpr std::size_t kToleranceCount = 40;

/// tol_i = 2 * 0.8^i, i = 0..39.
std::array<double, kToleranceCount> tolerance_schedule();

/// Signal-conditioned subpopulation chunk.
struct PopChunk {
  std::string signal;
  std::size_t layer = 0;
  long shift = 0;
  double tolerance = 0.0;
  std::size_t dim = 0;                // full embedding width d
  std::vector<std::size_t> indices;   // C(s), ascending
  std::vector<double> mean;           // mean over C(s), aligned with indices
  double delta = 0.0;                 // max training deviation
  std::size_t occurrences = 0;

  /// Radius actually used for classification.
  double radius() const { return delta > kDeltaFloor ? delta : kDeltaFloor; }
  bool degenerate() const { return occurrences <= 1 || delta <= kDeltaFloor; }
};

/// Squared L2 distance between h restricted to C(s) and the chunk mean, divided by d.
double deviation(std::span<const double> h, const PopChunk& chunk);

std::vector<double> mean_response(const HiddenTrace& trace, const SignalOccurrences& occ,
                                  std::size_t layer);

std::vector<std::size_t> select_subpopulation(const HiddenTrace& trace,
                                              const SignalOccurrences& occ, std::size_t layer,
                                              double tol);

double compute_delta(const HiddenTrace& trace, const SignalOccurrences& occ, std::size_t layer,
                     const std::vector<std::size_t>& subpopulation);

/// Builds (C, mean, delta) for one tolerance. C may be empty.
PopChunk fit_chunk(const HiddenTrace& trace, const SignalOccurrences& occ, std::size_t layer,
                   double tol);

/// Closed-ball membership: deviation(h) <= radius().
bool classify(std::span<const double> h, const PopChunk& chunk);

struct DetectionReport {
  std::size_t layer = 0;
  double tpr = 0.0;
  double fpr = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t tolerance_index = 0;
};

struct SweepRow {
  std::size_t index = 0;
  double tolerance = 0.0;
  std::size_t subpopulation_size = 0;  // 0 for skipped rows
  double delta = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  bool skipped = false;  // empty subpopulation
};

struct SweepResult {
  PopChunk chunk;
  DetectionReport report;
  std::vector<SweepRow> rows;
};

/// Fits a chunk at every scheduled tolerance and keeps the one maximizing TPR - FPR on
/// the training trace; ties go to the smaller tolerance.
SweepResult sweep_tolerance(const HiddenTrace& train, const SignalOccurrences& occ,
                            std::size_t layer);

/// TPR/FPR of `chunk` on a trace; positives are the shifted occurrence positions.
DetectionReport evaluate(const HiddenTrace& trace, const SignalOccurrences& occ,
                         const PopChunk& chunk);

/// Zeroes the chunk's subpopulation coordinates.
rnn::Intervention freeze_mask(const PopChunk& chunk);
/// Sets the chunk's subpopulation to its mean, leaving other units untouched.
rnn::Intervention graft_mask(const PopChunk& chunk);

/// Graft that writes the chunk mean onto its subpopulation, keeping other coordinates of `h`.
std::vector<double> graft_onto(std::span<const double> h, const PopChunk& chunk);

/// `<stem>.json` manifest with the index list plus `<stem>.f32` mean vector.
void save_chunk(const PopChunk& chunk, const std::filesystem::path& stem);
PopChunk load_chunk(const std::filesystem::path& stem);

/// CSV with header `layer,tpr,fpr,tp,fp,positives,negatives,tolerance_index`.
void write_report_csv(const std::vector<DetectionReport>& reports,
                      const std::filesystem::path& path);

}  // namespace chunkscope::popavg
