#include "chunkscope/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "chunkscope/error.hpp"
#include "json.hpp"

namespace chunkscope::evaluate {

std::vector<std::size_t> word_starts(const std::string& tokens, const std::string& word) {
  std::vector<std::size_t> out;
  if (word.empty()) return out;
  for (std::size_t pos = tokens.find(word); pos != std::string::npos;
       pos = tokens.find(word, pos + word.size()))
    out.push_back(pos);
  return out;
}

DeviationTemplate build_template(const HiddenTrace& trace, const std::string& tokens,
                                 const std::string& word, std::size_t layer) {
  if (tokens.size() != trace.positions)
    throw Error(ErrorKind::ContractViolation, "token count does not match trace positions");
  if (layer >= trace.layers) throw Error(ErrorKind::ContractViolation, "layer out of range");
  const auto starts = word_starts(tokens, word);
  if (starts.empty())
    throw Error(ErrorKind::EmptyOccurrence, "word \"" + word + "\" never occurs");
  DeviationTemplate t;
  t.word = word;
  t.dim = trace.dim;
  t.layer = layer;
  t.occurrences = starts.size();
  const std::size_t w = word.size();
  t.values.assign(t.dim * w, 0.0);
  for (auto s : starts)
    for (std::size_t j = 0; j < w; ++j) {
      auto h = trace.at(layer, s + j);
      for (std::size_t i = 0; i < t.dim; ++i) t.values[i * w + j] += h[i];
    }
  for (double& v : t.values) v /= static_cast<double>(starts.size());
  return t;
}

std::vector<double> deviation_series(const HiddenTrace& trace, const DeviationTemplate& tmpl) {
  if (trace.dim != tmpl.dim)
    throw Error(ErrorKind::ContractViolation, "template width does not match trace dimension");
  const std::size_t w = tmpl.width();
  std::vector<double> dev;
  if (w == 0 || trace.positions < w) return dev;
  const double size = static_cast<double>(tmpl.dim * w);
  dev.resize(trace.positions - w + 1);
  for (std::size_t s = 0; s < dev.size(); ++s) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      auto h = trace.at(tmpl.layer, s + j);
      for (std::size_t i = 0; i < tmpl.dim; ++i) {
        const double diff = h[i] - tmpl.values[i * w + j];
        acc += diff * diff;
      }
    }
    dev[s] = acc / size;
  }
  return dev;
}

ThresholdFit separating_threshold(const std::vector<double>& dev,
                                  const std::vector<std::size_t>& starts) {
  std::vector<char> is_start(dev.size(), 0);
  for (auto s : starts)
    if (s < dev.size()) is_start[s] = 1;
  ThresholdFit fit;
  fit.max_positive = -std::numeric_limits<double>::infinity();
  fit.min_negative = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dev.size(); ++i) {
    if (is_start[i])
      fit.max_positive = std::max(fit.max_positive, dev[i]);
    else
      fit.min_negative = std::min(fit.min_negative, dev[i]);
  }
  const bool have_pos = std::isfinite(fit.max_positive), have_neg = std::isfinite(fit.min_negative);
  if (have_pos && have_neg)
    fit.threshold = 0.5 * (fit.max_positive + fit.min_negative);
  else if (have_pos)
    fit.threshold = fit.max_positive;
  else if (have_neg)
    fit.threshold = fit.min_negative / 2.0;
  fit.separable = !(have_pos && have_neg) || fit.max_positive < fit.min_negative;
  for (std::size_t i = 0; i < dev.size(); ++i)
    if ((dev[i] <= fit.threshold) != static_cast<bool>(is_start[i])) ++fit.errors;
  return fit;
}

double ExperimentSummary::get(const std::string& key) const {
  auto it = metrics.find(key);
  if (it == metrics.end())
    throw Error(ErrorKind::ContractViolation, "summary " + name + " has no metric " + key);
  return it->second;
}

void ExperimentSummary::set(const std::string& key, double value) {
  if (!std::isfinite(value))
    throw Error(ErrorKind::Numerical, "metric " + key + " of " + name + " is not finite");
  metrics[key] = value;
}

std::size_t ground_truth_parse_length(const std::string& tokens,
                                      const std::vector<std::string>& words) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < tokens.size(); ++n) {
    std::size_t best = 1;
    for (const auto& w : words)
      if (w.size() > best && tokens.compare(i, w.size(), w) == 0) best = w.size();
    i += best;
  }
  return n;
}

ExperimentSummary count_chunks_vs_words(const std::vector<std::size_t>& parse,
                                        const dsc::ChunkVocab& vocab, const std::string& tokens,
                                        const std::vector<std::string>& ground_truth_vocab) {
  ExperimentSummary s;
  s.name = "chunks_vs_words";
  std::size_t word_count = 0;
  for (std::size_t i = 0; i < tokens.size();) {
    std::size_t best = 0;
    for (const auto& w : ground_truth_vocab)
      if (w.size() > best && tokens.compare(i, w.size(), w) == 0) best = w.size();
    if (best) {
      ++word_count;
      i += best;
    } else {
      ++i;
    }
  }
  const auto stats = dsc::parse_stats(parse, vocab);
  s.set("word_occurrences", static_cast<double>(word_count));
  s.set("ground_truth_parse_length",
        static_cast<double>(ground_truth_parse_length(tokens, ground_truth_vocab)));
  s.set("neural_parse_length", static_cast<double>(stats.parse_length));
  s.set("unique_states", static_cast<double>(stats.unique_states));
  s.set("vocab_size", static_cast<double>(stats.vocab_size));
  s.set("filtered_vocab_size", static_cast<double>(stats.filtered_vocab_size));
  s.set("learned_chunks", static_cast<double>(vocab.learned_count()));
  s.set("chunks_per_word", word_count ? static_cast<double>(stats.parse_length) /
                                            static_cast<double>(word_count)
                                      : 0.0);
  return s;
}

void analyze_trace(PipelineRun& run, const PipelineConfig& config, std::uint64_t seed) {
  if (run.trace.positions == 0) {
    run.states.clear();
    run.chunks = {};
    run.stats = {};
    return;
  }
  const auto clustering = dsc::fit_clusters(run.trace, config.clusters, seed);
  run.states = dsc::symbolize(run.trace, clustering);
  run.chunks = dsc::learn_chunks(run.states, config.chunking);
  run.stats = dsc::parse_stats(run.chunks.parse, run.chunks.vocab, config.filter_threshold);
}

PipelineRun run_pipeline(const seqgen::TokenSequence& sequence, const std::string& alphabet,
                         const PipelineConfig& config, std::uint64_t seed, bool trained) {
  PipelineRun run;
  run.sequence = sequence;
  rnn::TrainConfig tc = config.train;
  if (!trained) tc.steps = 0;
  std::tie(run.params, run.report) = rnn::train(sequence, tc, seed, alphabet);
  run.trace = rnn::record_trace(run.params, sequence);
  analyze_trace(run, config, seed);
  return run;
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double standard_error(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double n = static_cast<double>(xs.size());
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

ExperimentSummary aggregate(const std::string& name, const std::vector<ExperimentSummary>& runs) {
  ExperimentSummary out;
  out.name = name;
  if (runs.empty()) return out;
  for (const auto& r : runs) out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
  for (const auto& [key, _] : runs.front().metrics) {
    std::vector<double> xs;
    bool shared = true;
    for (const auto& r : runs) {
      auto it = r.metrics.find(key);
      if (it == r.metrics.end()) {
        shared = false;
        break;
      }
      xs.push_back(it->second);
    }
    if (!shared) continue;
    out.set(key + "_mean", mean(xs));
    out.set(key + "_sem", standard_error(xs));
  }
  return out;
}

namespace {

std::string join_alphabet(const std::vector<std::string>& words, char null_symbol) {
  std::set<char> symbols{null_symbol};
  for (const auto& w : words) symbols.insert(w.begin(), w.end());
  return {symbols.begin(), symbols.end()};
}

ExperimentSummary summarize(const PipelineRun& run, const std::vector<std::string>& words,
                            const std::string& name, std::uint64_t seed) {
  auto s = count_chunks_vs_words(run.chunks.parse, run.chunks.vocab, run.sequence.tokens, words);
  s.name = name;
  s.seeds = {seed};
  s.set("filtered_vocab_size", static_cast<double>(run.stats.filtered_vocab_size));
  if (!run.report.losses.empty()) s.set("final_loss", run.report.losses.back());
  return s;
}

}  // namespace

TrainedUntrained compare_trained_untrained(const std::vector<std::string>& words,
                                           const std::vector<std::uint64_t>& seeds,
                                           const PipelineConfig& config) {
  TrainedUntrained out;
  const auto vocab = seqgen::uniform_vocabulary(words);
  const auto alphabet = join_alphabet(words, vocab.null_symbol);
  for (auto seed : seeds) {
    const auto seq = seqgen::generate_sparse(vocab, config.sequence_length, seed);
    out.trained.push_back(
        summarize(run_pipeline(seq, alphabet, config, seed, true), words, "trained", seed));
    out.untrained.push_back(
        summarize(run_pipeline(seq, alphabet, config, seed, false), words, "untrained", seed));
  }
  auto t = aggregate("trained", out.trained);
  auto u = aggregate("untrained", out.untrained);
  out.aggregate.name = "trained_vs_untrained";
  out.aggregate.seeds = t.seeds;
  for (const auto& [k, v] : t.metrics) out.aggregate.set("trained_" + k, v);
  for (const auto& [k, v] : u.metrics) out.aggregate.set("untrained_" + k, v);
  std::size_t more_states = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i)
    if (out.trained[i].get("unique_states") > out.untrained[i].get("unique_states")) ++more_states;
  out.aggregate.set("pairs_trained_more_unique_states", static_cast<double>(more_states));
  return out;
}

std::vector<HierarchyLevel> hierarchy_scaling(std::size_t max_iterations,
                                              const std::vector<std::uint64_t>& seeds,
                                              const PipelineConfig& config) {
  if (max_iterations < 1)
    throw Error(ErrorKind::InvalidSpec, "hierarchy scaling needs max_iterations >= 1");
  const seqgen::Alphabet alphabet{"ABCDE", 'E'};
  std::vector<HierarchyLevel> levels;
  for (std::size_t depth = 0; depth <= max_iterations; ++depth) {
    HierarchyLevel level;
    level.depth = depth;
    for (auto seed : seeds) {
      const auto vocab = seqgen::generate_hierarchical_vocab(alphabet, depth, seed);
      const auto seq = seqgen::generate_sparse(vocab, config.sequence_length, seed);
      const auto run = run_pipeline(seq, alphabet.symbols, config, seed);
      auto s = summarize(run, vocab.words, "depth_" + std::to_string(depth), seed);
      s.set("depth", static_cast<double>(depth));
      s.set("ground_truth_vocab_size", static_cast<double>(vocab.words.size()));
      level.runs.push_back(std::move(s));
    }
    level.aggregate = aggregate("depth_" + std::to_string(depth), level.runs);
    levels.push_back(std::move(level));
  }
  return levels;
}

void write_summaries_csv(const std::vector<ExperimentSummary>& summaries,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << "experiment,seeds,metric,value\n";
  out.precision(10);
  for (const auto& s : summaries) {
    std::string seeds;
    for (std::size_t i = 0; i < s.seeds.size(); ++i)
      seeds += (i ? ";" : "") + std::to_string(s.seeds[i]);
    for (const auto& [k, v] : s.metrics) out << s.name << ',' << seeds << ',' << k << ',' << v << '\n';
  }
}

void write_summaries_json(const std::vector<ExperimentSummary>& summaries,
                          const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : summaries)
    j.push_back({{"name", s.name}, {"seeds", s.seeds}, {"metrics", s.metrics}});
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << nlohmann::json{{"format", "chunkscope-summary"}, {"version", 1}, {"summaries", j}}.dump(2)
      << '\n';
}

}  // namespace chunkscope::evaluate
