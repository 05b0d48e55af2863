// chunkscope command-line front end.
#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "chunkscope/dsc.hpp"
#include "chunkscope/error.hpp"
#include "chunkscope/evaluate.hpp"
#include "chunkscope/f32io.hpp"
#include "chunkscope/intervene.hpp"
#include "chunkscope/pipeline.hpp"
#include "chunkscope/popavg.hpp"
#include "chunkscope/rnn.hpp"
#include "chunkscope/seqgen.hpp"
#include "chunkscope/trace.hpp"
#include "chunkscope/unsup.hpp"

namespace fs = std::filesystem;
using namespace chunkscope;

namespace {

seqgen::TokenSequence load_sequence(const std::string& path) {
  if (path != "-") return seqgen::read_sequence(path);
  seqgen::TokenSequence seq;
  std::istreambuf_iterator<char> it(std::cin), end;
  for (; it != end; ++it)
    if (!std::isspace(static_cast<unsigned char>(*it))) seq.tokens.push_back(*it);
  seq.provenance = "stdin";
  return seq;
}

bool single_symbol_tokens(const HiddenTrace& t) {
  return std::all_of(t.tokens.begin(), t.tokens.end(),
                     [](const std::string& s) { return s.size() == 1; });
}

std::string joined_tokens(const HiddenTrace& t) {
  std::string s;
  for (const auto& tok : t.tokens) s += tok;
  return s;
}

// "all", "3", "0-4" or "1,3,5".
std::vector<std::size_t> parse_layers(const std::string& spec, std::size_t layer_count) {
  std::vector<std::size_t> out;
  if (spec.empty() || spec == "all") {
    for (std::size_t l = 0; l < layer_count; ++l) out.push_back(l);
    return out;
  }
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto dash = part.find('-');
    std::size_t lo, hi;
    try {
      lo = std::stoul(part.substr(0, dash));
      hi = dash == std::string::npos ? lo : std::stoul(part.substr(dash + 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidSpec, "bad layer range \"" + part + "\"");
    }
    if (hi < lo || hi >= layer_count)
      throw Error(ErrorKind::InvalidSpec, "layer range \"" + part + "\" outside 0.." +
                                              std::to_string(layer_count - 1));
    for (std::size_t l = lo; l <= hi; ++l) out.push_back(l);
  }
  return out;
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out.empty() ? "signal" : out;
}

std::string layer_stem(std::size_t layer) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "layer_%03zu", layer);
  return buf;
}

// Occurrences of `signal` in a trace: symbol traces use the last symbol of each match,
// token traces the whole-word final-token rule.
std::vector<std::size_t> occurrences_in(const HiddenTrace& t, const std::string& signal,
                                        const std::string& index_file) {
  if (!index_file.empty()) return trace::read_signal_index(index_file).positions;
  if (single_symbol_tokens(t)) return pipeline::signal_positions(joined_tokens(t), signal);
  return trace::find_occurrences(t.tokens, signal).positions;
}

std::vector<double> next_token_logp(const rnn::ForwardResult& r, const rnn::RnnParams& p,
                                    const seqgen::TokenSequence& seq) {
  std::vector<double> out;
  for (std::size_t t = 0; t + 1 < seq.size(); ++t)
    out.push_back(r.log_probs[t][p.symbol_index(seq[t + 1])]);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << text;
}

struct GenerateOpts {
  pipeline::SequenceSpec spec;
  std::uint64_t seed = 0;
  std::string out = "-";
};

int cmd_generate(GenerateOpts& o, CLI::App& sub) {
  if (sub.count("--seed")) o.spec.seed = o.seed;
  if (o.spec.mode == "transfer") {
    if (!o.spec.seed) throw Error(ErrorKind::InvalidSpec, "transfer mode needs --seed");
    if (o.out == "-") throw Error(ErrorKind::InvalidSpec, "transfer mode needs --out <prefix>");
    seqgen::TransferPairConfig tc;
    tc.null_probability = o.spec.null_probability;
    if (o.spec.length) tc.train_length = o.spec.length;
    auto [train, transfer] = seqgen::generate_transfer_pair(*o.spec.seed, tc);
    seqgen::write_sequence(train, o.out + ".train.txt");
    seqgen::write_sequence(transfer, o.out + ".transfer.txt");
    return 0;
  }
  const auto seq = pipeline::generate(o.spec);
  if (o.out == "-")
    std::cout << seq.tokens << '\n';
  else
    seqgen::write_sequence(seq, o.out);
  return 0;
}

struct TrainOpts {
  std::string sequence = "-";
  rnn::TrainConfig config;
  std::string activation = "linear";
  std::string alphabet;
  std::uint64_t seed = 0;
  std::string out;
  std::string trace_out;
};

int cmd_train(TrainOpts& o) {
  o.config.activation = rnn::activation_from_string(o.activation);
  const auto seq = load_sequence(o.sequence);
  auto [params, report] = rnn::train(seq, o.config, o.seed, o.alphabet);
  const auto dir = pipeline::resolve_output(o.out, "rnn");
  rnn::save_params(params, &report, dir);
  std::ofstream loss(dir / "loss.csv");
  loss.precision(10);
  loss << "step,loss\n";
  for (std::size_t i = 0; i < report.losses.size(); ++i) loss << i << ',' << report.losses[i] << '\n';
  if (!o.trace_out.empty()) trace::write_trace(rnn::record_trace(params, seq), o.trace_out);
  if (!report.losses.empty())
    std::cout << "final loss " << report.losses.back() << " nats; checkpoint " << dir.string()
              << '\n';
  return 0;
}

struct RecordOpts {
  std::string params, sequence = "-", out;
};

int cmd_record(const RecordOpts& o) {
  const auto p = rnn::load_params(o.params);
  const auto seq = load_sequence(o.sequence);
  auto t = rnn::record_trace(p, seq);
  t.producer["name"] = "chunkscope record";
  trace::write_trace(t, pipeline::resolve_output(o.out, "trace"));
  return 0;
}

struct DscOpts {
  std::string trace, out, clusters_from;
  std::size_t clusters = 5, layer = 0;
  std::uint64_t seed = 0;
  dsc::ChunkingConfig chunking;
};

int cmd_extract_dsc(const DscOpts& o) {
  const auto t = trace::read_trace(o.trace);
  const auto dir = pipeline::resolve_output(o.out, "dsc");
  fs::create_directories(dir);
  dsc::ClusterOptions co;
  co.layer = o.layer;
  const auto clustering = o.clusters_from.empty() ? dsc::fit_clusters(t, o.clusters, o.seed, co)
                                                  : dsc::read_clustering(o.clusters_from);
  const auto states = dsc::symbolize(t, clustering, o.layer);
  const auto chunks = dsc::learn_chunks(states, o.chunking);
  const auto stats = dsc::parse_stats(chunks.parse, chunks.vocab, o.chunking.freq_threshold);
  dsc::write_clustering(clustering, dir / "clusters.json");
  dsc::write_vocab(chunks.vocab, dir / "vocab.txt");
  {
    std::ofstream out(dir / "states.txt");
    for (std::size_t i = 0; i < states.size(); ++i)
      out << i << '\t' << t.tokens[i] << '\t' << states[i] << '\n';
  }
  std::ostringstream rep;
  rep << "{\n  \"parse_length\": " << stats.parse_length
      << ",\n  \"unique_states\": " << stats.unique_states
      << ",\n  \"vocab_size\": " << stats.vocab_size
      << ",\n  \"filtered_vocab_size\": " << stats.filtered_vocab_size
      << ",\n  \"learned_chunks\": " << chunks.vocab.learned_count();
  if (single_symbol_tokens(t)) {
    const auto lookup = dsc::build_lookup(states, t.tokens);
    dsc::write_lookup(lookup, dir / "lookup.txt");
    rep << ",\n  \"decode_accuracy\": " << dsc::decode_accuracy(lookup, states, t.tokens)
        << ",\n  \"ambiguous_states\": " << lookup.ambiguous_count();
  }
  rep << "\n}\n";
  write_text(dir / "report.json", rep.str());
  std::cout << rep.str();
  return 0;
}

struct PopavgOpts {
  std::string trace, signal, layers = "all", signal_index, out;
  long shift = 0;
};

int cmd_extract_popavg(const PopavgOpts& o) {
  const auto t = trace::read_trace(o.trace);
  const auto dir = pipeline::resolve_output(o.out, "popavg");
  fs::create_directories(dir);
  popavg::SignalOccurrences occ{o.signal, occurrences_in(t, o.signal, o.signal_index), o.shift};
  std::vector<popavg::DetectionReport> reports;
  const std::string stem =
      file_safe(o.signal) + (o.shift ? "_shift" + std::to_string(o.shift) : std::string());
  for (auto layer : parse_layers(o.layers, t.layers)) {
    const auto sweep = popavg::sweep_tolerance(t, occ, layer);
    popavg::save_chunk(sweep.chunk, dir / (stem + "_" + layer_stem(layer)));
    reports.push_back(sweep.report);
    std::cout << "layer " << layer << ": |C| = " << sweep.chunk.indices.size()
              << ", tolerance " << sweep.chunk.tolerance << ", TPR " << sweep.report.tpr
              << ", FPR " << sweep.report.fpr << '\n';
  }
  popavg::write_report_csv(reports, dir / (stem + "_train_report.csv"));
  return 0;
}

struct UnsupOpts {
  std::string trace, layers = "all", init = "data", out;
  unsup::FitConfig fit;
};

int cmd_extract_unsup(UnsupOpts& o) {
  const auto t = trace::read_trace(o.trace);
  const auto dir = pipeline::resolve_output(o.out, "unsup");
  fs::create_directories(dir);
  if (o.init == "data")
    o.fit.init = unsup::DictionaryInit::DataSpread;
  else if (o.init == "random")
    o.fit.init = unsup::DictionaryInit::RandomUnit;
  else
    throw Error(ErrorKind::InvalidSpec, "--init must be data or random");
  for (auto layer : parse_layers(o.layers, t.layers)) {
    auto fc = o.fit;
    fc.layer = layer;
    const auto x = unsup::layer_matrix(t, layer);
    const auto dict = unsup::fit_dictionary(x, fc);
    unsup::save_dictionary(dict, dir / layer_stem(layer));
    unsup::write_assignments_csv(unsup::assign(x, dict.entries), t.tokens,
                                 dir / ("assignments_" + layer_stem(layer) + ".csv"));
    std::cout << "layer " << layer << ": loss " << dict.losses.front() << " -> "
              << dict.best_losses.back() << ", dead chunks " << dict.dead_chunks.size() << '\n';
  }
  return 0;
}

struct InterveneOpts {
  std::string params, sequence = "-", chunk, centroid, reference, state_file, out;
  std::vector<std::size_t> positions;
  bool at_signal = false;
};

void write_predictions(const fs::path& path, const seqgen::TokenSequence& seq,
                       const rnn::RnnParams& p, const rnn::ForwardResult& base,
                       const rnn::ForwardResult& mod,
                       const std::map<std::size_t, rnn::Intervention>& iv) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.precision(8);
  out << "position,token,intervened,baseline_prediction,prediction,baseline_logp_next,logp_next\n";
  for (std::size_t t = 0; t < seq.size(); ++t) {
    out << t << ',' << seq[t] << ',' << iv.count(t) << ',' << base.predictions[t] << ','
        << mod.predictions[t] << ',';
    if (t + 1 < seq.size()) {
      const auto k = p.symbol_index(seq[t + 1]);
      out << base.log_probs[t][k] << ',' << mod.log_probs[t][k];
    } else {
      out << ',';
    }
    out << '\n';
  }
}

int cmd_graft(const InterveneOpts& o) {
  const auto p = rnn::load_params(o.params);
  const auto seq = load_sequence(o.sequence);
  const int sources = !o.chunk.empty() + !o.centroid.empty() + !o.state_file.empty();
  if (sources != 1)
    throw Error(ErrorKind::InvalidSpec, "give exactly one of --chunk, --centroid, --state");
  if (o.positions.empty()) throw Error(ErrorKind::InvalidSpec, "--position is required");
  rnn::Intervention graft;
  if (!o.chunk.empty()) {
    graft = popavg::graft_mask(popavg::load_chunk(o.chunk));
  } else if (!o.centroid.empty()) {
    if (o.centroid.size() != 1) throw Error(ErrorKind::InvalidSpec, "--centroid takes one symbol");
    const auto ref = o.reference.empty() ? seq : load_sequence(o.reference);
    graft = rnn::Intervention::replace(
        intervene::state_centroid(rnn::record_trace(p, ref), ref.tokens, o.centroid[0]));
  } else {
    graft = rnn::Intervention::replace(read_f32(o.state_file, p.hidden));
  }
  std::map<std::size_t, rnn::Intervention> iv;
  for (auto t : o.positions) {
    if (t >= seq.size())
      throw Error(ErrorKind::ContractViolation, "graft position " + std::to_string(t) +
                                                    " beyond sequence length " +
                                                    std::to_string(seq.size()));
    iv.emplace(t, graft);
  }
  const auto base = rnn::forward_with_interventions(p, seq, {});
  const auto mod = rnn::forward_with_interventions(p, seq, iv);
  for (auto t : o.positions)
    std::cout << "position " << t << " input " << seq[t] << ": prediction "
              << base.predictions[t] << " -> " << mod.predictions[t] << '\n';
  if (!o.out.empty()) write_predictions(o.out, seq, p, base, mod, iv);
  return 0;
}

int cmd_freeze(const InterveneOpts& o) {
  const auto p = rnn::load_params(o.params);
  const auto seq = load_sequence(o.sequence);
  if (o.chunk.empty()) throw Error(ErrorKind::InvalidSpec, "--chunk is required");
  const auto chunk = popavg::load_chunk(o.chunk);
  std::vector<std::size_t> positions = o.positions;
  if (o.at_signal) {
    popavg::SignalOccurrences occ{chunk.signal, pipeline::signal_positions(seq.tokens, chunk.signal),
                                  chunk.shift};
    positions = occ.shifted(seq.size());
  }
  if (positions.empty())
    throw Error(ErrorKind::InvalidSpec, "no positions to freeze (use --position or --at-signal)");
  std::map<std::size_t, rnn::Intervention> iv;
  for (auto t : positions) {
    if (t >= seq.size()) throw Error(ErrorKind::ContractViolation, "freeze position out of range");
    iv.emplace(t, popavg::freeze_mask(chunk));
  }
  const auto base = rnn::forward_with_interventions(p, seq, {});
  const auto mod = rnn::forward_with_interventions(p, seq, iv);
  const auto lb = next_token_logp(base, p, seq), lm = next_token_logp(mod, p, seq);
  double sb = 0, sm = 0;
  std::size_t n = 0, acc_b = 0, acc_m = 0;
  for (auto t : positions)
    if (t + 1 < seq.size()) {
      sb += lb[t];
      sm += lm[t];
      acc_b += base.predictions[t] == seq[t + 1];
      acc_m += mod.predictions[t] == seq[t + 1];
      ++n;
    }
  if (n)
    std::cout << "frozen positions " << n << ": mean next-token log p " << sb / n << " -> "
              << sm / n << ", accuracy " << double(acc_b) / n << " -> " << double(acc_m) / n
              << '\n';
  if (!o.out.empty()) write_predictions(o.out, seq, p, base, mod, iv);
  return 0;
}

struct EvaluateOpts {
  std::string trace, signal_index, lookup, clusters, out;
  std::vector<std::string> chunks;
};

int cmd_evaluate(const EvaluateOpts& o) {
  const auto t = trace::read_trace(o.trace);
  if (o.chunks.empty() == o.lookup.empty())
    throw Error(ErrorKind::InvalidSpec, "give --chunk (population averaging) or --lookup (dsc)");
  if (!o.lookup.empty()) {
    if (o.clusters.empty()) throw Error(ErrorKind::InvalidSpec, "--lookup needs --clusters");
    const auto lookup = dsc::read_lookup(o.lookup);
    const auto states = dsc::symbolize(t, dsc::read_clustering(o.clusters));
    const double acc = dsc::decode_accuracy(lookup, states, t.tokens);
    std::cout << "decode accuracy " << acc << '\n';
    if (!o.out.empty()) write_text(o.out, "metric,value\ndecode_accuracy," + std::to_string(acc) + "\n");
    return 0;
  }
  std::vector<popavg::DetectionReport> reports;
  for (const auto& stem : o.chunks) {
    const auto chunk = popavg::load_chunk(stem);
    popavg::SignalOccurrences occ{chunk.signal, occurrences_in(t, chunk.signal, o.signal_index),
                                  chunk.shift};
    reports.push_back(popavg::evaluate(t, occ, chunk));
    std::cout << "layer " << chunk.layer << ": TPR " << reports.back().tpr << ", FPR "
              << reports.back().fpr << '\n';
  }
  if (!o.out.empty()) popavg::write_report_csv(reports, o.out);
  return 0;
}

struct PosOpts {
  std::string trace, dictionaries, universe = "data", out;
};

int cmd_pos_correlate(const PosOpts& o) {
  const auto t = trace::read_trace(o.trace);
  if (t.pos_tags.empty()) throw Error(ErrorKind::InvalidSpec, "trace carries no POS tags");
  std::vector<std::vector<unsup::ChunkAssignment>> per_layer;
  std::size_t k = 0;
  for (std::size_t layer = 0; layer < t.layers; ++layer) {
    const auto stem = fs::path(o.dictionaries) / layer_stem(layer);
    auto manifest = stem;
    manifest += ".json";
    if (!fs::exists(manifest))
      throw Error(ErrorKind::Io, "missing dictionary " + manifest.string());
    const auto dict = unsup::load_dictionary(stem);
    k = std::max(k, dict.size());
    per_layer.push_back(unsup::assign(unsup::layer_matrix(t, layer), dict.entries));
  }
  std::vector<std::string> universe;
  if (o.universe == "penn")
    universe = unsup::penn_treebank_tags();
  else if (o.universe != "data")
    throw Error(ErrorKind::InvalidSpec, "--universe must be data or penn");
  const auto rows = unsup::pos_correlate(per_layer, t.pos_tags, k, universe);
  unsup::write_pos_csv(rows, pipeline::resolve_output(o.out, "pos_correlation.csv"));
  return 0;
}

struct ExportOpts {
  std::string trace, layers = "all", out;
};

int cmd_export(const ExportOpts& o) {
  const auto t = trace::read_trace(o.trace);
  const auto path = pipeline::resolve_output(o.out, "trace.csv");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.precision(9);
  out << "layer,position,token,pos";
  for (std::size_t i = 0; i < t.dim; ++i) out << ",h" << i;
  out << '\n';
  for (auto layer : parse_layers(o.layers, t.layers))
    for (std::size_t p = 0; p < t.positions; ++p) {
      std::string tok = "\"";
      for (char c : t.tokens[p]) tok += c == '"' ? std::string("\"\"") : std::string(1, c);
      out << layer << ',' << p << ',' << tok << "\"," << (t.pos_tags.empty() ? "" : t.pos_tags[p]);
      for (double v : t.at(layer, p)) out << ',' << v;
      out << '\n';
    }
  return 0;
}

struct ExperimentOpts {
  std::size_t seeds = 0, first_seed = 1, steps = 3000, length = 20000, depth = 4;
  std::string out;
};

std::vector<std::uint64_t> seed_list(const ExperimentOpts& o, std::size_t fallback) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < (o.seeds ? o.seeds : fallback); ++i) s.push_back(o.first_seed + i);
  return s;
}

evaluate::PipelineConfig pipeline_config(const ExperimentOpts& o) {
  evaluate::PipelineConfig pc;
  pc.train.steps = o.steps;
  pc.sequence_length = o.length;
  return pc;
}

void export_summaries(const fs::path& dir, const std::vector<evaluate::ExperimentSummary>& s) {
  fs::create_directories(dir);
  evaluate::write_summaries_csv(s, dir / "summary.csv");
  evaluate::write_summaries_json(s, dir / "summary.json");
  std::cout << "wrote " << (dir / "summary.csv").string() << '\n';
}

int cmd_experiment(const std::string& name, const ExperimentOpts& o) {
  const auto dir = pipeline::resolve_output(o.out, "experiment-" + name);
  const auto pc = pipeline_config(o);
  if (name == "fig4-left" || name == "appendixE") {
    const auto r = evaluate::compare_trained_untrained(evaluate::kOverlapWords,
                                                       seed_list(o, 10), pc);
    std::vector<evaluate::ExperimentSummary> all;
    if (name == "fig4-left") {
      all = r.trained;
      all.insert(all.end(), r.untrained.begin(), r.untrained.end());
    }
    all.push_back(r.aggregate);
    export_summaries(dir, all);
    for (const char* m : {"neural_parse_length", "unique_states", "vocab_size", "filtered_vocab_size"})
      std::cout << m << ": trained " << r.aggregate.get(std::string("trained_") + m + "_mean")
                << " untrained " << r.aggregate.get(std::string("untrained_") + m + "_mean") << '\n';
    return 0;
  }
  if (name == "fig4-right") {
    const auto levels = evaluate::hierarchy_scaling(o.depth, seed_list(o, 5), pc);
    std::vector<evaluate::ExperimentSummary> all;
    for (const auto& l : levels) {
      all.insert(all.end(), l.runs.begin(), l.runs.end());
      all.push_back(l.aggregate);
      std::cout << "depth " << l.depth << ": learned chunks "
                << l.aggregate.get("learned_chunks_mean") << " +- "
                << l.aggregate.get("learned_chunks_sem") << '\n';
    }
    export_summaries(dir, all);
    return 0;
  }
  if (name == "appendixB") {
    std::vector<evaluate::ExperimentSummary> all;
    fs::create_directories(dir);
    for (auto seed : seed_list(o, 1)) {
      const auto seq = seqgen::generate_noise_background("ABCD", "EFG", o.length, seed);
      rnn::TrainConfig tc = pc.train;
      auto [p, r] = rnn::train(seq, tc, seed, "ABCDEFG");
      const auto t = rnn::record_trace(p, seq);
      const auto tmpl = evaluate::build_template(t, seq.tokens, "ABCD");
      const auto dev = evaluate::deviation_series(t, tmpl);
      const auto starts = evaluate::word_starts(seq.tokens, "ABCD");
      const auto fit = evaluate::separating_threshold(dev, starts);
      std::ofstream out(dir / ("deviation_seed" + std::to_string(seed) + ".csv"));
      out.precision(10);
      out << "position,token,word_start,dev\n";
      std::vector<char> is_start(dev.size(), 0);
      for (auto s : starts)
        if (s < dev.size()) is_start[s] = 1;
      for (std::size_t i = 0; i < dev.size(); ++i)
        out << i << ',' << seq[i] << ',' << int(is_start[i]) << ',' << dev[i] << '\n';
      evaluate::ExperimentSummary s;
      s.name = "appendixB";
      s.seeds = {seed};
      s.set("threshold", fit.threshold);
      s.set("max_dev_at_word_start", fit.max_positive);
      s.set("min_dev_elsewhere", fit.min_negative);
      s.set("training_errors", static_cast<double>(fit.errors));
      s.set("separable", fit.separable ? 1.0 : 0.0);
      s.set("occurrences", static_cast<double>(tmpl.occurrences));
      all.push_back(s);
      std::cout << "seed " << seed << ": threshold " << fit.threshold << ", errors " << fit.errors
                << '\n';
    }
    export_summaries(dir, all);
    return 0;
  }
  throw Error(ErrorKind::InvalidSpec, "unknown experiment " + name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chunkscope: chunk extraction from recurrent and transformer hidden states"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "chunkscope 0.1.0");

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate", "Generate a synthetic symbol sequence");
  g->add_option("--mode", gen.spec.mode, "periodic | sparse | noise | hierarchical | transfer")
      ->check(CLI::IsMember({"periodic", "sparse", "noise", "hierarchical", "transfer"}));
  g->add_option("--words", gen.spec.words, "Vocabulary words (comma separated)")->delimiter(',');
  g->add_option("--probabilities", gen.spec.probabilities, "Per-word probabilities")->delimiter(',');
  g->add_option("--null-probability", gen.spec.null_probability, "Null/noise probability");
  g->add_option("--noise", gen.spec.noise_symbols, "Noise symbols for --mode noise");
  g->add_option("--length", gen.spec.length, "Sequence length")->required();
  g->add_option("--iterations", gen.spec.iterations, "Hierarchy depth for --mode hierarchical");
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("-o,--out", gen.out, "Output file, '-' for stdout (transfer: file prefix)");

  TrainOpts tr;
  auto* t = app.add_subcommand("train-rnn", "Train the linear RNN on a sequence");
  t->add_option("--sequence", tr.sequence, "Sequence file, '-' for stdin");
  t->add_option("--steps", tr.config.steps, "Adam updates");
  t->add_option("--hidden", tr.config.hidden, "Hidden units");
  t->add_option("--lr", tr.config.learning_rate, "Adam learning rate");
  t->add_option("--subsequence-length", tr.config.subsequence_length, "Training window");
  t->add_option("--activation", tr.activation, "linear | tanh")
      ->check(CLI::IsMember({"linear", "tanh"}));
  t->add_option("--alphabet", tr.alphabet, "Symbol order (default: sorted symbols plus E)");
  t->add_option("--seed", tr.seed, "Random seed")->required();
  t->add_option("-o,--out", tr.out, "Checkpoint directory");
  t->add_option("--trace", tr.trace_out, "Also record the training sequence to this trace dir");

  RecordOpts rec;
  auto* r = app.add_subcommand("record", "Record hidden states of a checkpoint on a sequence");
  r->add_option("--params", rec.params, "Checkpoint directory")->required();
  r->add_option("--sequence", rec.sequence, "Sequence file, '-' for stdin");
  r->add_option("-o,--out", rec.out, "Trace directory");

  auto* ex = app.add_subcommand("extract", "Extract chunks from a trace");
  ex->require_subcommand(1);
  DscOpts dso;
  auto* xd = ex->add_subcommand("dsc", "Discrete sequence chunking");
  xd->add_option("--trace", dso.trace, "Trace directory or manifest")->required();
  xd->add_option("--clusters", dso.clusters, "k-means clusters per neuron");
  xd->add_option("--clusters-from", dso.clusters_from, "Reuse a clusters.json codebook");
  xd->add_option("--seed", dso.seed, "Clustering seed");
  xd->add_option("--layer", dso.layer, "Trace layer");
  xd->add_option("--candidates", dso.chunking.candidates, "Pairs considered per iteration");
  xd->add_option("--freq-threshold", dso.chunking.freq_threshold, "Minimum pair count");
  xd->add_option("--iterations", dso.chunking.iterations, "Merge iterations");
  xd->add_option("-o,--out", dso.out, "Output directory");
  PopavgOpts pao;
  auto* xp = ex->add_subcommand("popavg", "Population-averaging chunk for a signal");
  xp->add_option("--trace", pao.trace, "Trace directory or manifest")->required();
  xp->add_option("--signal", pao.signal, "Signal word")->required();
  xp->add_option("--shift", pao.shift, "Offset from the signal (-1: predictive)");
  xp->add_option("--layers", pao.layers, "all | N | A-B | list");
  xp->add_option("--signal-index", pao.signal_index, "Signal index file overriding word matching");
  xp->add_option("-o,--out", pao.out, "Output directory");
  UnsupOpts uno;
  auto* xu = ex->add_subcommand("unsup", "Max-cosine chunk dictionary per layer");
  xu->add_option("--trace", uno.trace, "Trace directory or manifest")->required();
  xu->add_option("--chunks,-K", uno.fit.chunks, "Dictionary size");
  xu->add_option("--steps", uno.fit.steps, "Gradient steps");
  xu->add_option("--lr", uno.fit.learning_rate, "Learning rate");
  xu->add_option("--batch-size", uno.fit.batch_size, "Mini-batch size (0: full batch)");
  xu->add_option("--seed", uno.fit.seed, "Random seed")->required();
  xu->add_option("--init", uno.init, "data | random");
  xu->add_option("--layers", uno.layers, "all | N | A-B | list");
  xu->add_option("-o,--out", uno.out, "Output directory");

  InterveneOpts gro, fro;
  auto* gr = app.add_subcommand("graft", "Overwrite hidden states during a forward pass");
  gr->add_option("--params", gro.params, "Checkpoint directory")->required();
  gr->add_option("--sequence", gro.sequence, "Sequence file, '-' for stdin");
  gr->add_option("--position", gro.positions, "Position(s) to graft")->delimiter(',');
  gr->add_option("--chunk", gro.chunk, "Population chunk stem (sets its subpopulation)");
  gr->add_option("--centroid", gro.centroid, "Mean state after reading this symbol");
  gr->add_option("--reference", gro.reference, "Sequence the --centroid is taken from");
  gr->add_option("--state", gro.state_file, "Raw float32 hidden vector");
  gr->add_option("-o,--out", gro.out, "Per-position predictions CSV");
  auto* fr = app.add_subcommand("freeze", "Zero a chunk's subpopulation during a forward pass");
  fr->add_option("--params", fro.params, "Checkpoint directory")->required();
  fr->add_option("--sequence", fro.sequence, "Sequence file, '-' for stdin");
  fr->add_option("--chunk", fro.chunk, "Population chunk stem")->required();
  fr->add_option("--position", fro.positions, "Position(s) to freeze")->delimiter(',');
  fr->add_flag("--at-signal", fro.at_signal, "Freeze wherever the chunk's signal occurs");
  fr->add_option("-o,--out", fro.out, "Per-position predictions CSV");

  EvaluateOpts evo;
  auto* ev = app.add_subcommand("evaluate", "Evaluate chunks on a (held-out) trace");
  ev->add_option("--trace", evo.trace, "Trace directory or manifest")->required();
  ev->add_option("--chunk", evo.chunks, "Population chunk stem(s)");
  ev->add_option("--signal-index", evo.signal_index, "Signal index file");
  ev->add_option("--lookup", evo.lookup, "dsc lookup table");
  ev->add_option("--clusters", evo.clusters, "dsc clusters.json for --lookup");
  ev->add_option("-o,--out", evo.out, "Report CSV");

  PosOpts poo;
  auto* po = app.add_subcommand("pos-correlate", "Correlate dictionary chunks with POS tags");
  po->add_option("--trace", poo.trace, "Trace with POS tags")->required();
  po->add_option("--dictionaries", poo.dictionaries, "Directory of layer_NNN dictionaries")
      ->required();
  po->add_option("--universe", poo.universe, "data | penn");
  po->add_option("-o,--out", poo.out, "Correlation CSV");

  ExportOpts exo;
  auto* xo = app.add_subcommand("export", "Export trace activations as CSV");
  xo->add_option("--trace", exo.trace, "Trace directory or manifest")->required();
  xo->add_option("--layers", exo.layers, "all | N | A-B | list");
  xo->add_option("-o,--out", exo.out, "CSV path");

  ExperimentOpts exp;
  std::string exp_name;
  auto* xe = app.add_subcommand("experiment", "Run a bundled multi-seed experiment");
  xe->add_option("name", exp_name, "fig4-left | fig4-right | appendixB | appendixE")
      ->required()
      ->check(CLI::IsMember({"fig4-left", "fig4-right", "appendixB", "appendixE"}));
  xe->add_option("--seeds", exp.seeds, "Number of seeds");
  xe->add_option("--first-seed", exp.first_seed, "First seed");
  xe->add_option("--steps", exp.steps, "Training updates per run");
  xe->add_option("--length", exp.length, "Sequence length");
  xe->add_option("--depth", exp.depth, "Maximum hierarchy depth (fig4-right)");
  xe->add_option("-o,--out", exp.out, "Output directory");

  std::string config_path, run_out;
  auto* rn = app.add_subcommand("run", "Run a JSON experiment config end to end");
  rn->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  rn->add_option("-o,--out", run_out, "Output directory (default: config output)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) return cmd_generate(gen, *g);
    if (*t) return cmd_train(tr);
    if (*r) return cmd_record(rec);
    if (*xd) return cmd_extract_dsc(dso);
    if (*xp) return cmd_extract_popavg(pao);
    if (*xu) return cmd_extract_unsup(uno);
    if (*gr) return cmd_graft(gro);
    if (*fr) return cmd_freeze(fro);
    if (*ev) return cmd_evaluate(evo);
    if (*po) return cmd_pos_correlate(poo);
    if (*xo) return cmd_export(exo);
    if (*xe) return cmd_experiment(exp_name, exp);
    if (*rn) {
      const auto cfg = pipeline::load_config(config_path);
      const auto dir = run_out.empty() ? pipeline::resolve_output(cfg.output, cfg.name)
                                       : fs::path(run_out);
      const auto res = pipeline::run(cfg, dir);
      for (const auto& [k, v] : res.metrics) std::cout << k << ' ' << v << '\n';
      std::cout << "artifacts in " << dir.string() << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "chunkscope: " << e.what() << '\n';
    return e.kind() == ErrorKind::InvalidSpec ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "chunkscope: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
