#include "chunkscope/dsc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "chunkscope/error.hpp"
#include "chunkscope/rng.hpp"
#include "json.hpp"

namespace chunkscope::dsc {

namespace {

constexpr const char* kDigits = "0123456789abcdefghijklmnopqrstuvwxyz";
constexpr std::size_t kMaxClusters = 36;

std::vector<double> kmeans_1d(const std::vector<double>& values, std::size_t k, Rng& rng,
                              const ClusterOptions& opt) {
  const std::size_t n = values.size();
  std::vector<double> centroids;
  centroids.reserve(k);
  centroids.push_back(values[rng.below(n)]);
  std::vector<double> dist(n);
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centroids) best = std::min(best, (values[i] - c) * (values[i] - c));
      dist[i] = best;
      total += best;
    }
    if (total <= 0.0) break;  // every value already coincides with a centroid
    double target = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= dist[i];
      if (target < 0.0 && dist[i] > 0.0) {
        pick = i;
        break;
      }
    }
    centroids.push_back(values[pick]);
  }

  std::vector<double> sum(centroids.size());
  std::vector<std::size_t> count(centroids.size());
  for (std::size_t iter = 0; iter < opt.max_iterations; ++iter) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (double v : values) {
      const auto c = nearest_centroid(v, centroids);
      sum[c] += v;
      ++count[c];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (count[c] == 0) continue;  // empty cluster keeps its position
      const double updated = sum[c] / static_cast<double>(count[c]);
      shift = std::max(shift, std::abs(updated - centroids[c]));
      centroids[c] = updated;
    }
    if (shift <= opt.tolerance) break;
  }
  std::sort(centroids.begin(), centroids.end());
  return centroids;
}

std::string join_key(const std::vector<std::size_t>& ids, const std::vector<std::string>& states) {
  std::string key;
  for (auto id : ids) key += states[id];
  return key;
}

// Prefix trie over state ids for longest-match lookup.
class Trie {
 public:
  explicit Trie(const ChunkVocab& vocab) : nodes_(1) {
    for (std::size_t c = 0; c < vocab.chunks.size(); ++c) {
      std::size_t node = 0;
      for (auto s : vocab.chunks[c].states) {
        auto [it, inserted] = nodes_[node].next.try_emplace(s, nodes_.size());
        if (inserted) nodes_.emplace_back();
        node = it->second;
      }
      nodes_[node].chunk = static_cast<long>(c);
    }
  }

  // Longest chunk matching at `pos`: (chunk id, length). Length 0 when nothing matches.
  std::pair<std::size_t, std::size_t> longest(const std::vector<std::size_t>& ids,
                                              std::size_t pos) const {
    std::size_t node = 0, best_len = 0, best = 0;
    for (std::size_t i = pos; i < ids.size(); ++i) {
      auto it = nodes_[node].next.find(ids[i]);
      if (it == nodes_[node].next.end()) break;
      node = it->second;
      if (nodes_[node].chunk >= 0) {
        best = static_cast<std::size_t>(nodes_[node].chunk);
        best_len = i - pos + 1;
      }
    }
    return {best, best_len};
  }

 private:
  struct Node {
    std::unordered_map<std::size_t, std::size_t> next;
    long chunk = -1;
  };
  std::vector<Node> nodes_;
};

void refresh_frequencies(ChunkVocab& vocab, const std::vector<std::size_t>& parse) {
  for (auto& c : vocab.chunks) c.frequency = 0;
  for (auto id : parse) ++vocab.chunks[id].frequency;
}

bool is_strict_prefix(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  return a.size() < b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

std::size_t nearest_centroid(double value, const std::vector<double>& centroids) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = std::abs(value - centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

double within_cluster_sse(const std::vector<double>& values, const std::vector<double>& centroids) {
  double sse = 0.0;
  for (double v : values) {
    const double c = centroids[nearest_centroid(v, centroids)];
    sse += (v - c) * (v - c);
  }
  return sse;
}

NeuronClustering fit_clusters(const HiddenTrace& trace, std::size_t k, std::uint64_t seed,
                              const ClusterOptions& options) {
  trace.validate();
  if (trace.positions == 0) throw Error(ErrorKind::InvalidSpec, "cannot cluster an empty trace");
  if (k == 0 || k > kMaxClusters)
    throw Error(ErrorKind::InvalidSpec, "clusters per neuron must lie in [1, 36]");
  if (options.layer >= trace.layers)
    throw Error(ErrorKind::ContractViolation, "layer out of range");
  NeuronClustering out;
  out.centroids.resize(trace.dim);
  std::vector<double> values(trace.positions);
  for (std::size_t i = 0; i < trace.dim; ++i) {
    for (std::size_t t = 0; t < trace.positions; ++t) values[t] = trace.at(options.layer, t)[i];
    const std::set<double> distinct(values.begin(), values.end());
    std::size_t k_eff = k;
    if (distinct.size() < k) {
      k_eff = distinct.size();
      out.reduced.push_back(i);
    }
    Rng rng(Rng::derive(seed, i));
    out.centroids[i] = kmeans_1d(values, k_eff, rng, options);
  }
  return out;
}

std::vector<SymbolizedState> symbolize(const HiddenTrace& trace, const NeuronClustering& clustering,
                                       std::size_t layer) {
  if (clustering.neurons() != trace.dim)
    throw Error(ErrorKind::ContractViolation,
                "clustering covers " + std::to_string(clustering.neurons()) + " neurons, trace has " +
                    std::to_string(trace.dim));
  std::vector<SymbolizedState> out(trace.positions, std::string(trace.dim, '0'));
  for (std::size_t t = 0; t < trace.positions; ++t) {
    auto h = trace.at(layer, t);
    for (std::size_t i = 0; i < trace.dim; ++i)
      out[t][i] = kDigits[nearest_centroid(h[i], clustering.centroids[i])];
  }
  return out;
}

std::size_t ChunkVocab::learned_count() const {
  return static_cast<std::size_t>(std::count_if(
      chunks.begin(), chunks.end(), [](const Chunk& c) { return c.states.size() > 1; }));
}

std::optional<std::size_t> ChunkVocab::find(const std::string& key) const {
  for (std::size_t c = 0; c < chunks.size(); ++c)
    if (chunks[c].key == key) return c;
  return std::nullopt;
}

std::vector<std::size_t> greedy_parse(const std::vector<std::size_t>& state_ids,
                                      const ChunkVocab& vocab) {
  const Trie trie(vocab);
  std::vector<std::size_t> parse;
  for (std::size_t pos = 0; pos < state_ids.size();) {
    auto [chunk, len] = trie.longest(state_ids, pos);
    if (len == 0)
      throw Error(ErrorKind::ContractViolation,
                  "state at position " + std::to_string(pos) + " is not in the vocabulary");
    parse.push_back(chunk);
    pos += len;
  }
  return parse;
}

ChunkingResult learn_chunks(const std::vector<SymbolizedState>& states,
                            const ChunkingConfig& config) {
  ChunkingResult result;
  ChunkVocab& vocab = result.vocab;
  if (states.empty()) return result;
  vocab.state_width = states.front().size();

  std::unordered_map<std::string, std::size_t> intern;
  std::vector<std::size_t> ids;
  ids.reserve(states.size());
  for (const auto& s : states) {
    if (s.size() != vocab.state_width)
      throw Error(ErrorKind::ContractViolation, "symbolized states differ in width");
    auto [it, inserted] = intern.try_emplace(s, vocab.states.size());
    if (inserted) vocab.states.push_back(s);
    ids.push_back(it->second);
  }
  std::vector<std::size_t> counts(vocab.states.size());
  for (auto id : ids) ++counts[id];
  for (std::size_t s = 0; s < vocab.states.size(); ++s)
    vocab.chunks.push_back(Chunk{{s}, vocab.states[s], counts[s]});

  const auto top = std::max_element(counts.begin(), counts.end());
  if (std::count(counts.begin(), counts.end(), *top) == 1)
    vocab.null_state = static_cast<std::size_t>(top - counts.begin());

  std::vector<std::size_t> parse(ids);
  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    // Adjacent pair counts; first occurrence breaks count ties.
    std::map<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i + 1 < parse.size(); ++i) {
      auto [it, inserted] = pairs.try_emplace({parse[i], parse[i + 1]}, 0, i);
      ++it->second.first;
    }
    std::vector<std::pair<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>>>
        ranked(pairs.begin(), pairs.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second.first != b.second.first) return a.second.first > b.second.first;
      return a.second.second < b.second.second;
    });
    if (ranked.size() > config.candidates) ranked.resize(config.candidates);

    auto is_null = [&](std::size_t chunk) {
      return vocab.null_state && vocab.chunks[chunk].states.size() == 1 &&
             vocab.chunks[chunk].states[0] == *vocab.null_state;
    };
    std::size_t added = 0;
    for (const auto& [pair, stat] : ranked) {
      const auto [left, right] = pair;
      if (stat.first < config.freq_threshold || is_null(left) || is_null(right)) continue;
      Chunk merged;
      merged.states = vocab.chunks[left].states;
      merged.states.insert(merged.states.end(), vocab.chunks[right].states.begin(),
                           vocab.chunks[right].states.end());
      merged.key = join_key(merged.states, vocab.states);
      if (vocab.find(merged.key)) continue;
      merged.frequency = stat.first;
      vocab.merges.push_back({iter, vocab.chunks[left].key, vocab.chunks[right].key, stat.first});
      vocab.chunks.push_back(std::move(merged));
      ++added;
    }
    if (added == 0) break;

    // Prune multi-state chunks that are strict prefixes of a far more frequent chunk. At most
    // `added` go per round, most dominated first, so the vocabulary never shrinks.
    std::vector<std::pair<double, std::size_t>> dominated;  // (extender / prefix frequency, id)
    for (std::size_t a = 0; a < vocab.chunks.size(); ++a) {
      if (vocab.chunks[a].states.size() < 2) continue;  // single states keep the parse total
      double ratio = 0.0;
      for (std::size_t b = 0; b < vocab.chunks.size(); ++b) {
        if (a == b || !is_strict_prefix(vocab.chunks[a].states, vocab.chunks[b].states)) continue;
        const double fa = static_cast<double>(vocab.chunks[a].frequency);
        const double fb = static_cast<double>(vocab.chunks[b].frequency);
        if (fb >= config.prefix_dominance * fa)
          ratio = std::max(ratio, fa > 0.0 ? fb / fa : std::numeric_limits<double>::infinity());
      }
      if (ratio > 0.0) dominated.emplace_back(ratio, a);
    }
    std::stable_sort(dominated.begin(), dominated.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    if (dominated.size() > added) dominated.resize(added);
    std::vector<char> drop(vocab.chunks.size(), 0);
    for (const auto& [ratio, a] : dominated) drop[a] = 1;
    std::vector<Chunk> kept;
    for (std::size_t c = 0; c < vocab.chunks.size(); ++c)
      if (!drop[c]) kept.push_back(std::move(vocab.chunks[c]));
    vocab.chunks = std::move(kept);

    parse = greedy_parse(ids, vocab);
    refresh_frequencies(vocab, parse);
    result.vocab_sizes.push_back(vocab.chunks.size());
  }
  result.parse = std::move(parse);
  return result;
}

std::optional<char> LookupTable::decode(const SymbolizedState& state) const {
  auto it = entries.find(state);
  if (it == entries.end()) return std::nullopt;
  return it->second.symbol;
}

std::size_t LookupTable::ambiguous_count() const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [](const auto& e) { return e.second.ambiguous(); }));
}

LookupTable build_lookup(const std::vector<SymbolizedState>& states,
                         const std::vector<std::string>& tokens) {
  if (states.size() != tokens.size())
    throw Error(ErrorKind::ContractViolation, "lookup needs one token per state");
  LookupTable table;
  for (std::size_t t = 0; t < states.size(); ++t) {
    if (tokens[t].size() != 1)
      throw Error(ErrorKind::ContractViolation, "lookup tokens must be single symbols");
    auto& e = table.entries[states[t]];
    ++e.total;
    const char sym = tokens[t][0];
    auto it = std::find_if(e.observed.begin(), e.observed.end(),
                           [&](const auto& p) { return p.first == sym; });
    if (it == e.observed.end())
      e.observed.emplace_back(sym, 1);
    else
      ++it->second;
  }
  for (auto& [state, e] : table.entries) {
    for (const auto& [sym, n] : e.observed) {
      if (n > e.count) {  // strict: earlier-seen symbol wins ties
        e.count = n;
        e.symbol = sym;
      }
    }
  }
  return table;
}

double decode_accuracy(const LookupTable& table, const std::vector<SymbolizedState>& states,
                       const std::vector<std::string>& tokens) {
  if (states.size() != tokens.size())
    throw Error(ErrorKind::ContractViolation, "decode needs one token per state");
  if (states.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t t = 0; t < states.size(); ++t) {
    auto sym = table.decode(states[t]);
    if (sym && tokens[t].size() == 1 && *sym == tokens[t][0]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(states.size());
}

ParseStats parse_stats(const std::vector<std::size_t>& parse, const ChunkVocab& vocab,
                       std::size_t threshold) {
  ParseStats s;
  if (parse.empty()) return s;
  s.parse_length = parse.size();
  std::set<std::size_t> unique;
  for (auto id : parse)
    for (auto st : vocab.chunks.at(id).states) unique.insert(st);
  s.unique_states = unique.size();
  s.vocab_size = vocab.chunks.size();
  s.filtered_vocab_size = static_cast<std::size_t>(
      std::count_if(vocab.chunks.begin(), vocab.chunks.end(),
                    [&](const Chunk& c) { return c.frequency >= threshold; }));
  return s;
}

void write_vocab(const ChunkVocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << "# chunkscope chunk vocabulary\n";
  out << "# state_width: " << vocab.state_width << '\n';
  out << "# null_state: " << (vocab.null_state ? vocab.states[*vocab.null_state] : "none") << '\n';
  out << "# chunks: " << vocab.chunks.size() << '\n';
  for (const auto& c : vocab.chunks) out << c.key << '\t' << c.frequency << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

void write_lookup(const LookupTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << "# chunkscope lookup table\n# state\tsymbol\tcount\ttotal\n";
  for (const auto& [state, e] : table.entries)
    out << state << '\t' << e.symbol << '\t' << e.count << '\t' << e.total << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

LookupTable read_lookup(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  LookupTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string state, sym;
    LookupEntry e;
    if (!(is >> state >> sym >> e.count >> e.total) || sym.size() != 1)
      throw Error(ErrorKind::Corruption, path.string() + ":" + std::to_string(lineno) +
                                             ": expected state, symbol, count, total");
    e.symbol = sym[0];
    e.observed.emplace_back(e.symbol, e.count);
    table.entries.emplace(state, std::move(e));
  }
  return table;
}

void write_clustering(const NeuronClustering& clustering, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "chunkscope-clustering";
  j["version"] = 1;
  j["centroids"] = clustering.centroids;
  j["reduced"] = clustering.reduced;
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

NeuronClustering read_clustering(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  NeuronClustering c;
  try {
    const auto j = nlohmann::json::parse(in);
    j.at("centroids").get_to(c.centroids);
    if (j.contains("reduced")) j.at("reduced").get_to(c.reduced);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Corruption, path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < c.centroids.size(); ++i)
    if (c.centroids[i].empty())
      throw Error(ErrorKind::Corruption, path.string() + ": neuron " + std::to_string(i) +
                                             " has no centroids");
  return c;
}

}  // namespace chunkscope::dsc
