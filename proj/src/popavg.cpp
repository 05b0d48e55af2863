#include "chunkscope/popavg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "chunkscope/error.hpp"
#include "chunkscope/f32io.hpp"
#include "json.hpp"

namespace chunkscope::popavg {

namespace {

void check_layer(const HiddenTrace& trace, std::size_t layer) {
  if (layer >= trace.layers)
    throw Error(ErrorKind::ContractViolation, "layer " + std::to_string(layer) +
                                                  " out of range for a trace with " +
                                                  std::to_string(trace.layers) + " layers");
}

std::vector<std::size_t> usable(const HiddenTrace& trace, const SignalOccurrences& occ) {
  auto idx = occ.shifted(trace.positions);
  if (idx.empty())
    throw Error(ErrorKind::EmptyOccurrence,
                "signal '" + occ.label + "' has no occurrences within the trace at shift " +
                    std::to_string(occ.shift));
  return idx;
}

std::vector<double> mean_over(const HiddenTrace& trace, const std::vector<std::size_t>& idx,
                              std::size_t layer) {
  std::vector<double> mean(trace.dim, 0.0);
  for (auto t : idx) {
    auto h = trace.at(layer, t);
    for (std::size_t i = 0; i < trace.dim; ++i) mean[i] += h[i];
  }
  for (double& m : mean) m /= static_cast<double>(idx.size());
  return mean;
}

}  // namespace

std::vector<std::size_t> SignalOccurrences::shifted(std::size_t position_count) const {
  std::vector<std::size_t> out;
  out.reserve(positions.size());
  for (auto p : positions) {
    const long t = static_cast<long>(p) + shift;
    if (t >= 0 && static_cast<std::size_t>(t) < position_count)
      out.push_back(static_cast<std::size_t>(t));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::array<double, kToleranceCount> tolerance_schedule() {
  std::array<double, kToleranceCount> tol{};
  for (std::size_t i = 0; i < kToleranceCount; ++i)
    tol[i] = 2.0 * std::pow(0.8, static_cast<double>(i));
  return tol;
}

double deviation(std::span<const double> h, const PopChunk& chunk) {
  double sq = 0.0;
  for (std::size_t j = 0; j < chunk.indices.size(); ++j) {
    const double diff = h[chunk.indices[j]] - chunk.mean[j];
    sq += diff * diff;
  }
  return sq / static_cast<double>(chunk.dim);
}

std::vector<double> mean_response(const HiddenTrace& trace, const SignalOccurrences& occ,
                                  std::size_t layer) {
  check_layer(trace, layer);
  return mean_over(trace, usable(trace, occ), layer);
}

std::vector<std::size_t> select_subpopulation(const HiddenTrace& trace,
                                              const SignalOccurrences& occ, std::size_t layer,
                                              double tol) {
  check_layer(trace, layer);
  if (!(tol >= 0.0)) throw Error(ErrorKind::InvalidSpec, "tolerance must be non-negative");
  const auto idx = usable(trace, occ);
  const auto mean = mean_over(trace, idx, layer);
  std::vector<double> worst(trace.dim, 0.0);
  for (auto t : idx) {
    auto h = trace.at(layer, t);
    for (std::size_t i = 0; i < trace.dim; ++i)
      worst[i] = std::max(worst[i], std::abs(h[i] - mean[i]));
  }
  std::vector<std::size_t> c;
  for (std::size_t i = 0; i < trace.dim; ++i)
    if (worst[i] <= tol) c.push_back(i);
  return c;
}

double compute_delta(const HiddenTrace& trace, const SignalOccurrences& occ, std::size_t layer,
                     const std::vector<std::size_t>& subpopulation) {
  check_layer(trace, layer);
  if (subpopulation.empty())
    throw Error(ErrorKind::ContractViolation, "deviation radius needs a non-empty subpopulation");
  const auto idx = usable(trace, occ);
  const auto mean = mean_over(trace, idx, layer);
  PopChunk probe;
  probe.dim = trace.dim;
  probe.indices = subpopulation;
  for (auto i : subpopulation) probe.mean.push_back(mean.at(i));
  double delta = 0.0;
  for (auto t : idx) delta = std::max(delta, deviation(trace.at(layer, t), probe));
  return delta;
}

PopChunk fit_chunk(const HiddenTrace& trace, const SignalOccurrences& occ, std::size_t layer,
                   double tol) {
  PopChunk chunk;
  chunk.signal = occ.label;
  chunk.layer = layer;
  chunk.shift = occ.shift;
  chunk.tolerance = tol;
  chunk.dim = trace.dim;
  chunk.indices = select_subpopulation(trace, occ, layer, tol);
  const auto idx = usable(trace, occ);
  chunk.occurrences = idx.size();
  const auto mean = mean_over(trace, idx, layer);
  for (auto i : chunk.indices) chunk.mean.push_back(mean[i]);
  if (!chunk.indices.empty())
    for (auto t : idx) chunk.delta = std::max(chunk.delta, deviation(trace.at(layer, t), chunk));
  return chunk;
}

bool classify(std::span<const double> h, const PopChunk& chunk) {
  if (chunk.indices.size() != chunk.mean.size())
    throw Error(ErrorKind::ContractViolation, "chunk mean and subpopulation sizes differ");
  if (h.size() != chunk.dim)
    throw Error(ErrorKind::ContractViolation, "vector width does not match chunk dimension");
  return deviation(h, chunk) <= chunk.radius();
}

DetectionReport evaluate(const HiddenTrace& trace, const SignalOccurrences& occ,
                         const PopChunk& chunk) {
  check_layer(trace, chunk.layer);
  const auto idx = occ.shifted(trace.positions);
  std::vector<char> positive(trace.positions, 0);
  for (auto t : idx) positive[t] = 1;
  DetectionReport r;
  r.layer = chunk.layer;
  r.positives = idx.size();
  r.negatives = trace.positions - idx.size();
  for (std::size_t t = 0; t < trace.positions; ++t) {
    if (!classify(trace.at(chunk.layer, t), chunk)) continue;
    if (positive[t])
      ++r.true_positives;
    else
      ++r.false_positives;
  }
  r.tpr = r.positives ? static_cast<double>(r.true_positives) / static_cast<double>(r.positives) : 0.0;
  r.fpr = r.negatives ? static_cast<double>(r.false_positives) / static_cast<double>(r.negatives) : 0.0;
  return r;
}

SweepResult sweep_tolerance(const HiddenTrace& train, const SignalOccurrences& occ,
                            std::size_t layer) {
  check_layer(train, layer);
  const auto idx = usable(train, occ);
  if (idx.size() == train.positions)
    throw Error(ErrorKind::InvalidSpec, "signal '" + occ.label +
                                            "' occupies every position; FPR is undefined");
  const auto schedule = tolerance_schedule();
  SweepResult best;
  double best_j = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t i = 0; i < kToleranceCount; ++i) {
    SweepRow row;
    row.index = i;
    row.tolerance = schedule[i];
    PopChunk chunk = fit_chunk(train, occ, layer, schedule[i]);
    if (chunk.indices.empty()) {
      row.skipped = true;
      best.rows.push_back(row);
      continue;
    }
    auto report = evaluate(train, occ, chunk);
    report.tolerance_index = i;
    row.subpopulation_size = chunk.indices.size();
    row.delta = chunk.delta;
    row.tpr = report.tpr;
    row.fpr = report.fpr;
    best.rows.push_back(row);
    const double j = report.tpr - report.fpr;
    if (j >= best_j) {  // later rows are more stringent; >= prefers them on ties
      best_j = j;
      best.chunk = std::move(chunk);
      best.report = report;
      found = true;
    }
  }
  if (!found)
    throw Error(ErrorKind::EmptyOccurrence,
                "every tolerance produced an empty subpopulation for '" + occ.label + "'");
  return best;
}

rnn::Intervention freeze_mask(const PopChunk& chunk) { return rnn::Intervention::zero(chunk.indices); }

rnn::Intervention graft_mask(const PopChunk& chunk) {
  return rnn::Intervention::set(chunk.indices, chunk.mean);
}

std::vector<double> graft_onto(std::span<const double> h, const PopChunk& chunk) {
  if (h.size() != chunk.dim)
    throw Error(ErrorKind::ContractViolation, "vector width does not match chunk dimension");
  std::vector<double> out(h.begin(), h.end());
  for (std::size_t j = 0; j < chunk.indices.size(); ++j) out[chunk.indices[j]] = chunk.mean[j];
  return out;
}

void save_chunk(const PopChunk& chunk, const std::filesystem::path& stem) {
  auto mpath = stem;
  mpath += ".json";
  auto fpath = stem;
  fpath += ".f32";
  nlohmann::json m;
  m["format"] = "chunkscope-popchunk";
  m["version"] = 1;
  m["signal"] = chunk.signal;
  m["layer"] = chunk.layer;
  m["shift"] = chunk.shift;
  m["tolerance"] = chunk.tolerance;
  m["delta"] = chunk.delta;
  m["dim"] = chunk.dim;
  m["occurrences"] = chunk.occurrences;
  m["indices"] = chunk.indices;
  m["mean_file"] = fpath.filename().string();
  write_f32(fpath, chunk.mean);
  std::ofstream out(mpath);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + mpath.string() + " for writing");
  out << m.dump(2) << '\n';
}

PopChunk load_chunk(const std::filesystem::path& stem) {
  auto mpath = stem;
  if (mpath.extension() != ".json") mpath += ".json";
  std::ifstream in(mpath);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + mpath.string());
  PopChunk c;
  try {
    const auto m = nlohmann::json::parse(in);
    c.signal = m.at("signal").get<std::string>();
    c.layer = m.at("layer").get<std::size_t>();
    c.shift = m.at("shift").get<long>();
    c.tolerance = m.at("tolerance").get<double>();
    c.delta = m.at("delta").get<double>();
    c.dim = m.at("dim").get<std::size_t>();
    c.occurrences = m.value("occurrences", std::size_t{0});
    c.indices = m.at("indices").get<std::vector<std::size_t>>();
    c.mean = read_f32(mpath.parent_path() / m.at("mean_file").get<std::string>(),
                              c.indices.size());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Corruption, mpath.string() + ": " + e.what());
  }
  return c;
}

void write_report_csv(const std::vector<DetectionReport>& reports,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << "layer,tpr,fpr,tp,fp,positives,negatives,tolerance_index\n";
  out.precision(10);
  for (const auto& r : reports)
    out << r.layer << ',' << r.tpr << ',' << r.fpr << ',' << r.true_positives << ','
        << r.false_positives << ',' << r.positives << ',' << r.negatives << ','
        << r.tolerance_index << '\n';
}

}  // namespace chunkscope::popavg
