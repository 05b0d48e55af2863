#include "chunkscope/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "chunkscope/error.hpp"
#include "chunkscope/evaluate.hpp"
#include "chunkscope/popavg.hpp"
#include "chunkscope/unsup.hpp"
#include "json.hpp"

namespace chunkscope::pipeline {

using nlohmann::json;

std::string SequenceSpec::alphabet() const {
  std::set<char> s{null_symbol};
  if (mode == "hierarchical") s.insert({'A', 'B', 'C', 'D'});
  if (mode == "noise") s.insert(noise_symbols.begin(), noise_symbols.end());
  if (mode == "periodic") s.clear();
  for (const auto& w : words) s.insert(w.begin(), w.end());
  return {s.begin(), s.end()};
}

seqgen::TokenSequence generate(const SequenceSpec& spec) {
  const std::uint64_t seed = spec.seed.value_or(0);
  if (spec.mode == "periodic") {
    if (spec.words.size() != 1)
      throw Error(ErrorKind::InvalidSpec, "periodic mode takes exactly one word");
    return seqgen::generate_periodic(spec.words.front(), spec.length);
  }
  if (!spec.seed) throw Error(ErrorKind::InvalidSpec, "mode " + spec.mode + " needs a seed");
  if (spec.mode == "sparse") {
    seqgen::Vocabulary v;
    if (spec.probabilities.empty()) {
      v = seqgen::uniform_vocabulary(spec.words, spec.null_symbol, spec.null_probability);
    } else {
      v.words = spec.words;
      v.probabilities = spec.probabilities;
      v.null_symbol = spec.null_symbol;
      v.null_probability = spec.null_probability;
    }
    return seqgen::generate_sparse(v, spec.length, seed);
  }
  if (spec.mode == "noise") {
    if (spec.words.size() != 1)
      throw Error(ErrorKind::InvalidSpec, "noise mode takes exactly one word");
    return seqgen::generate_noise_background(spec.words.front(), spec.noise_symbols, spec.length,
                                             seed, spec.null_probability);
  }
  if (spec.mode == "hierarchical") {
    const seqgen::Alphabet alphabet{"ABCD" + std::string(1, spec.null_symbol), spec.null_symbol};
    const auto v = seqgen::generate_hierarchical_vocab(alphabet, spec.iterations, seed);
    return seqgen::generate_sparse(v, spec.length, seed);
  }
  throw Error(ErrorKind::InvalidSpec, "unknown sequence mode \"" + spec.mode + "\"");
}

namespace {

// Collects field-path issues instead of failing on the first one.
class Checker {
 public:
  explicit Checker(const json& root) : root_(root) {}

  const json* object(const json& parent, const std::string& path, const char* key, bool required,
                     const std::set<std::string>& allowed) {
    if (!parent.contains(key)) {
      if (required) issue(path + key, "required");
      return nullptr;
    }
    const json& v = parent.at(key);
    if (!v.is_object()) {
      issue(path + key, "must be an object");
      return nullptr;
    }
    for (const auto& [k, _] : v.items())
      if (!allowed.count(k)) issue(path + key + "." + k, "unknown field");
    return &v;
  }

  template <class T>
  std::optional<T> get(const json* parent, const std::string& path, const char* key,
                       bool required) {
    if (!parent) return std::nullopt;
    if (!parent->contains(key)) {
      if (required) issue(path + key, "required");
      return std::nullopt;
    }
    const json& v = parent->at(key);
    try {
      if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw std::invalid_argument("x");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("x");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("x");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      issue(path + key, std::string("must be ") + kind<T>());
      return std::nullopt;
    }
  }

  void issue(const std::string& path, const std::string& message) {
    issues_.push_back(path + ": " + message);
  }
  const std::vector<std::string>& issues() const { return issues_; }
  const json& root() const { return root_; }

 private:
  template <class T>
  static const char* kind() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_unsigned_v<T>) return "a non-negative integer";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "a list";
  }

  const json& root_;
  std::vector<std::string> issues_;
};

char single_char(Checker& c, const std::optional<std::string>& s, const std::string& path,
                 char fallback) {
  if (!s) return fallback;
  if (s->size() != 1) {
    c.issue(path, "must be a single symbol");
    return fallback;
  }
  return (*s)[0];
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::InvalidSpec, std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw Error(ErrorKind::InvalidSpec, "config must be a JSON object");
  Checker c(root);
  ExperimentConfig cfg;
  const std::set<std::string> top = {"name", "output", "sequence", "holdout", "train",
                                     "dsc",  "popavg", "unsup"};
  for (const auto& [k, _] : root.items())
    if (!top.count(k)) c.issue(k, "unknown field");
  cfg.name = c.get<std::string>(&root, "", "name", true).value_or("");
  cfg.output = c.get<std::string>(&root, "", "output", false).value_or(cfg.name);
  cfg.holdout = c.get<std::size_t>(&root, "", "holdout", false).value_or(0);

  const json* seq = c.object(root, "", "sequence", true,
                             {"mode", "words", "probabilities", "null_symbol", "null_probability",
                              "noise_symbols", "length", "iterations", "seed"});
  auto& s = cfg.sequence;
  s.mode = c.get<std::string>(seq, "sequence.", "mode", true).value_or("sparse");
  s.words = c.get<std::vector<std::string>>(seq, "sequence.", "words", false).value_or(
      std::vector<std::string>{});
  s.probabilities = c.get<std::vector<double>>(seq, "sequence.", "probabilities", false)
                        .value_or(std::vector<double>{});
  s.null_symbol = single_char(c, c.get<std::string>(seq, "sequence.", "null_symbol", false),
                              "sequence.null_symbol", 'E');
  s.null_probability = c.get<double>(seq, "sequence.", "null_probability", false).value_or(0.8);
  s.noise_symbols = c.get<std::string>(seq, "sequence.", "noise_symbols", false).value_or("EFG");
  s.length = c.get<std::size_t>(seq, "sequence.", "length", true).value_or(0);
  s.iterations = c.get<std::size_t>(seq, "sequence.", "iterations", false).value_or(0);
  if (seq) {
    const std::set<std::string> modes = {"periodic", "sparse", "noise", "hierarchical"};
    if (!modes.count(s.mode))
      c.issue("sequence.mode", "must be one of periodic, sparse, noise, hierarchical");
    s.seed = c.get<std::uint64_t>(seq, "sequence.", "seed", s.mode != "periodic");
    if (s.mode != "hierarchical" && s.words.empty())
      c.issue("sequence.words", "required for mode " + s.mode);
    if (!s.probabilities.empty() && s.probabilities.size() != s.words.size())
      c.issue("sequence.probabilities", "must have one entry per word");
  }
  if (seq && s.length > 0 && cfg.holdout >= s.length)
    c.issue("holdout", "must be smaller than sequence.length");

  const json* tr = c.object(root, "", "train", true,
                            {"steps", "hidden", "learning_rate", "subsequence_length",
                             "activation", "seed", "alphabet"});
  cfg.train.steps = c.get<std::size_t>(tr, "train.", "steps", false).value_or(cfg.train.steps);
  cfg.train.hidden = c.get<std::size_t>(tr, "train.", "hidden", false).value_or(cfg.train.hidden);
  cfg.train.learning_rate =
      c.get<double>(tr, "train.", "learning_rate", false).value_or(cfg.train.learning_rate);
  cfg.train.subsequence_length = c.get<std::size_t>(tr, "train.", "subsequence_length", false)
                                     .value_or(cfg.train.subsequence_length);
  if (auto a = c.get<std::string>(tr, "train.", "activation", false)) {
    try {
      cfg.train.activation = rnn::activation_from_string(*a);
    } catch (const Error&) {
      c.issue("train.activation", "must be linear or tanh");
    }
  }
  cfg.train_seed = c.get<std::uint64_t>(tr, "train.", "seed", true).value_or(0);
  cfg.alphabet = c.get<std::string>(tr, "train.", "alphabet", false).value_or("");
  if (tr && cfg.train.hidden == 0) c.issue("train.hidden", "must be positive");
  if (seq && tr && s.length > 0 && s.length - std::min(s.length, cfg.holdout) <
                                       cfg.train.subsequence_length + 1)
    c.issue("sequence.length", "training part must exceed train.subsequence_length");

  if (const json* d = c.object(root, "", "dsc", false,
                               {"clusters", "seed", "candidates", "freq_threshold",
                                "iterations"})) {
    cfg.dsc_enabled = true;
    cfg.clusters = c.get<std::size_t>(d, "dsc.", "clusters", false).value_or(5);
    cfg.dsc_seed = c.get<std::uint64_t>(d, "dsc.", "seed", true).value_or(0);
    cfg.chunking.candidates = c.get<std::size_t>(d, "dsc.", "candidates", false)
                                  .value_or(cfg.chunking.candidates);
    cfg.chunking.freq_threshold = c.get<std::size_t>(d, "dsc.", "freq_threshold", false)
                                      .value_or(cfg.chunking.freq_threshold);
    cfg.chunking.iterations = c.get<std::size_t>(d, "dsc.", "iterations", false)
                                  .value_or(cfg.chunking.iterations);
    if (cfg.clusters == 0 || cfg.clusters > 36) c.issue("dsc.clusters", "must be in 1..36");
  }
  if (const json* p = c.object(root, "", "popavg", false, {"signal", "shift"})) {
    cfg.popavg_enabled = true;
    cfg.signal = c.get<std::string>(p, "popavg.", "signal", true).value_or("");
    cfg.shift = c.get<long>(p, "popavg.", "shift", false).value_or(0);
    if (p->contains("signal") && cfg.signal.empty()) c.issue("popavg.signal", "must be non-empty");
    if (cfg.holdout == 0) c.issue("holdout", "popavg evaluation needs a held-out segment");
  }
  if (const json* u = c.object(root, "", "unsup", false,
                               {"chunks", "steps", "learning_rate", "batch_size", "seed"})) {
    cfg.unsup_enabled = true;
    cfg.unsup_chunks = c.get<std::size_t>(u, "unsup.", "chunks", false).value_or(8);
    cfg.unsup_steps = c.get<std::size_t>(u, "unsup.", "steps", false).value_or(200);
    cfg.unsup_learning_rate = c.get<double>(u, "unsup.", "learning_rate", false).value_or(0.1);
    cfg.unsup_batch = c.get<std::size_t>(u, "unsup.", "batch_size", false).value_or(0);
    cfg.unsup_seed = c.get<std::uint64_t>(u, "unsup.", "seed", true).value_or(0);
    if (cfg.unsup_chunks == 0) c.issue("unsup.chunks", "must be positive");
  }

  if (!c.issues().empty()) {
    std::string msg = "invalid config:";
    for (const auto& i : c.issues()) msg += "\n  " + i;
    throw Error(ErrorKind::InvalidSpec, msg);
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::filesystem::path default_output_root() {
  const char* env = std::getenv("CHUNKSCOPE_OUT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("chunkscope-out");
}

std::filesystem::path resolve_output(const std::string& requested, const std::string& fallback) {
  std::filesystem::path p = requested.empty() ? std::filesystem::path(fallback) : std::filesystem::path(requested);
  return p.is_absolute() ? p : default_output_root() / p;
}

std::string fnv1a_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[8192];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

std::vector<std::size_t> signal_positions(const std::string& tokens, const std::string& signal) {
  auto starts = evaluate::word_starts(tokens, signal);
  for (auto& s : starts) s += signal.size() - 1;
  return starts;
}

namespace {

std::vector<std::string> split_symbols(const std::string& s) {
  std::vector<std::string> out;
  out.reserve(s.size());
  for (char c : s) out.emplace_back(1, c);
  return out;
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["holdout"] = c.holdout;
  const auto& s = c.sequence;
  j["sequence"] = {{"mode", s.mode},
                   {"words", s.words},
                   {"probabilities", s.probabilities},
                   {"null_symbol", std::string(1, s.null_symbol)},
                   {"null_probability", s.null_probability},
                   {"noise_symbols", s.noise_symbols},
                   {"length", s.length},
                   {"iterations", s.iterations}};
  if (s.seed) j["sequence"]["seed"] = *s.seed;
  j["train"] = {{"steps", c.train.steps},
                {"hidden", c.train.hidden},
                {"learning_rate", c.train.learning_rate},
                {"subsequence_length", c.train.subsequence_length},
                {"activation", rnn::to_string(c.train.activation)},
                {"seed", c.train_seed},
                {"alphabet", c.alphabet}};
  if (c.dsc_enabled)
    j["dsc"] = {{"clusters", c.clusters},
                {"seed", c.dsc_seed},
                {"candidates", c.chunking.candidates},
                {"freq_threshold", c.chunking.freq_threshold},
                {"iterations", c.chunking.iterations}};
  if (c.popavg_enabled) j["popavg"] = {{"signal", c.signal}, {"shift", c.shift}};
  if (c.unsup_enabled)
    j["unsup"] = {{"chunks", c.unsup_chunks},
                  {"steps", c.unsup_steps},
                  {"learning_rate", c.unsup_learning_rate},
                  {"batch_size", c.unsup_batch},
                  {"seed", c.unsup_seed}};
  return j;
}

}  // namespace

RunResult run(const ExperimentConfig& config, const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  RunResult result;
  result.directory = directory;
  fs::create_directories(directory);
  std::vector<std::string> produced;
  auto& metrics = result.metrics;

  const auto sequence = generate(config.sequence);
  seqgen::write_sequence(sequence, directory / "sequence.txt");
  produced.push_back("sequence.txt");

  const std::size_t n = sequence.size();
  const std::size_t n_train = n - config.holdout;
  seqgen::TokenSequence train_part{sequence.tokens.substr(0, n_train), sequence.provenance};
  const std::string alphabet =
      config.alphabet.empty() ? config.sequence.alphabet() : config.alphabet;
  auto [params, report] = rnn::train(train_part, config.train, config.train_seed, alphabet);
  rnn::save_params(params, &report, directory / "params");
  for (const char* f : {"params.json", "w_ch.f32", "b_h.f32", "w_co.f32", "b_o.f32"})
    produced.push_back(std::string("params/") + f);
  {
    std::ofstream out(directory / "loss.csv");
    out.precision(10);
    out << "step,loss\n";
    for (std::size_t i = 0; i < report.losses.size(); ++i) out << i << ',' << report.losses[i] << '\n';
    produced.push_back("loss.csv");
  }
  if (!report.losses.empty()) metrics["final_loss"] = report.losses.back();

  auto full = rnn::record_trace(params, sequence);
  full.producer["name"] = "chunkscope run";
  full.producer["config"] = config.name;
  trace::write_trace(full, directory / "trace");
  produced.push_back("trace/manifest.json");
  produced.push_back("trace/" + trace::payload_name(0));
  const auto train_trace = full.slice(0, n_train);
  const auto test_trace = full.slice(n_train, n);

  if (config.dsc_enabled) {
    fs::create_directories(directory / "dsc");
    const auto clustering = dsc::fit_clusters(train_trace, config.clusters, config.dsc_seed);
    const auto states = dsc::symbolize(full, clustering);
    const std::vector<std::string> train_states(states.begin(), states.begin() + n_train);
    const std::vector<std::string> test_states(states.begin() + n_train, states.end());
    const auto tokens = split_symbols(sequence.tokens);
    const std::vector<std::string> train_tokens(tokens.begin(), tokens.begin() + n_train);
    const std::vector<std::string> test_tokens(tokens.begin() + n_train, tokens.end());
    const auto lookup = dsc::build_lookup(train_states, train_tokens);
    const auto chunks = dsc::learn_chunks(train_states, config.chunking);
    const auto stats = dsc::parse_stats(chunks.parse, chunks.vocab, config.chunking.freq_threshold);
    dsc::write_clustering(clustering, directory / "dsc" / "clusters.json");
    dsc::write_vocab(chunks.vocab, directory / "dsc" / "vocab.txt");
    dsc::write_lookup(lookup, directory / "dsc" / "lookup.txt");
    {
      std::ofstream out(directory / "dsc" / "states.txt");
      for (std::size_t t = 0; t < states.size(); ++t)
        out << t << '\t' << sequence[t] << '\t' << states[t] << '\n';
    }
    metrics["decode_accuracy_train"] = dsc::decode_accuracy(lookup, train_states, train_tokens);
    if (!test_states.empty())
      metrics["decode_accuracy_holdout"] = dsc::decode_accuracy(lookup, test_states, test_tokens);
    metrics["ambiguous_states"] = static_cast<double>(lookup.ambiguous_count());
    metrics["vocab_size"] = static_cast<double>(stats.vocab_size);
    metrics["learned_chunks"] = static_cast<double>(chunks.vocab.learned_count());
    metrics["parse_length"] = static_cast<double>(stats.parse_length);
    metrics["unique_states"] = static_cast<double>(stats.unique_states);
    json rep;
    for (const auto& [k, v] : metrics)
      if (k.rfind("decode", 0) == 0 || k == "ambiguous_states" || k == "vocab_size" ||
          k == "learned_chunks" || k == "parse_length" || k == "unique_states")
        rep[k] = v;
    write_json(rep, directory / "dsc" / "report.json");
    for (const char* f : {"clusters.json", "vocab.txt", "lookup.txt", "states.txt", "report.json"})
      produced.push_back(std::string("dsc/") + f);
  }

  if (config.popavg_enabled) {
    fs::create_directories(directory / "popavg");
    popavg::SignalOccurrences occ_train{config.signal,
                                        signal_positions(train_part.tokens, config.signal),
                                        config.shift};
    popavg::SignalOccurrences occ_test{
        config.signal, signal_positions(sequence.tokens.substr(n_train), config.signal),
        config.shift};
    const auto sweep = popavg::sweep_tolerance(train_trace, occ_train, 0);
    const auto held = popavg::evaluate(test_trace, occ_test, sweep.chunk);
    popavg::save_chunk(sweep.chunk, directory / "popavg" / "chunk");
    popavg::write_report_csv({sweep.report}, directory / "popavg" / "train_report.csv");
    popavg::write_report_csv({held}, directory / "popavg" / "holdout_report.csv");
    metrics["popavg_train_tpr"] = sweep.report.tpr;
    metrics["popavg_train_fpr"] = sweep.report.fpr;
    metrics["popavg_holdout_tpr"] = held.tpr;
    metrics["popavg_holdout_fpr"] = held.fpr;
    for (const char* f : {"chunk.json", "chunk.f32", "train_report.csv", "holdout_report.csv"})
      produced.push_back(std::string("popavg/") + f);
  }

  if (config.unsup_enabled) {
    fs::create_directories(directory / "unsup");
    unsup::FitConfig fc;
    fc.chunks = config.unsup_chunks;
    fc.steps = config.unsup_steps;
    fc.learning_rate = config.unsup_learning_rate;
    fc.batch_size = config.unsup_batch;
    fc.seed = config.unsup_seed;
    const auto dict = unsup::fit_dictionary(unsup::layer_matrix(train_trace, 0), fc);
    unsup::save_dictionary(dict, directory / "unsup" / "layer_000");
    unsup::write_assignments_csv(unsup::assign(unsup::layer_matrix(full, 0), dict.entries),
                                 full.tokens, directory / "unsup" / "assignments.csv");
    if (!dict.losses.empty()) metrics["unsup_final_loss"] = dict.losses.back();
    metrics["unsup_dead_chunks"] = static_cast<double>(dict.dead_chunks.size());
    for (const char* f : {"layer_000.json", "layer_000.f32", "assignments.csv"})
      produced.push_back(std::string("unsup/") + f);
  }

  for (const auto& rel : produced)
    result.artifacts.push_back({rel, fs::file_size(directory / rel), fnv1a_file(directory / rel)});
  json prov;
  prov["format"] = "chunkscope-run";
  prov["version"] = 1;
  prov["config"] = config_json(config);
  prov["metrics"] = metrics;
  json arts = json::array();
  for (const auto& a : result.artifacts)
    arts.push_back({{"path", a.path}, {"bytes", a.bytes}, {"fnv1a", a.fnv1a}});
  prov["artifacts"] = arts;
  write_json(prov, directory / "provenance.json");
  return result;
}

}  // namespace chunkscope::pipeline
