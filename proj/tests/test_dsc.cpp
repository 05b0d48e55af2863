#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "chunkscope/dsc.hpp"
#include "chunkscope/rng.hpp"
#include "chunkscope/rnn.hpp"
#include "chunkscope/seqgen.hpp"
#include "support.hpp"

using namespace chunkscope;
using namespace chunkscope::dsc;

namespace {

HiddenTrace column_trace(const std::vector<std::vector<double>>& neurons) {
  const std::size_t n = neurons.front().size();
  auto t = HiddenTrace::zeros(1, n, neurons.size());
  for (std::size_t i = 0; i < neurons.size(); ++i)
    for (std::size_t p = 0; p < n; ++p) t.at(0, p)[i] = neurons[i][p];
  t.tokens.assign(n, "x");
  return t;
}

// Lloyd iterations from k distinct data points drawn uniformly.
double random_restart_sse(const std::vector<double>& values, std::size_t k, Rng& rng) {
  std::vector<double> c;
  while (c.size() < k) {
    const double v = values[rng.below(values.size())];
    if (std::find(c.begin(), c.end(), v) == c.end()) c.push_back(v);
  }
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<double> sum(k, 0.0);
    std::vector<int> cnt(k, 0);
    for (double v : values) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (std::abs(v - c[j]) < std::abs(v - c[best])) best = j;
      sum[best] += v;
      ++cnt[best];
    }
    for (std::size_t j = 0; j < k; ++j)
      if (cnt[j]) c[j] = sum[j] / cnt[j];
  }
  double sse = 0.0;
  for (double v : values) {
    double best = 1e300;
    for (double x : c) best = std::min(best, (v - x) * (v - x));
    sse += best;
  }
  return sse;
}

std::vector<SymbolizedState> states_of(const std::string& pattern) {
  std::vector<SymbolizedState> out;
  for (char c : pattern) out.emplace_back(1, c);
  return out;
}

std::string concat_parse(const ChunkingResult& r) {
  std::string s;
  for (auto id : r.parse) s += r.vocab.chunks[id].key;
  return s;
}

std::string concat_states(const std::vector<SymbolizedState>& states) {
  std::string s;
  for (const auto& x : states) s += x;
  return s;
}

void check_chunking_invariants(const std::vector<SymbolizedState>& states, const ChunkingConfig& cfg) {
  const auto r = learn_chunks(states, cfg);
  CHECK(concat_parse(r) == concat_states(states));
  for (const auto& m : r.vocab.merges) CHECK(m.count >= cfg.freq_threshold);
  for (std::size_t i = 1; i < r.vocab_sizes.size(); ++i)
    CHECK(r.vocab_sizes[i] >= r.vocab_sizes[i - 1]);
  std::set<std::string> keys;
  for (const auto& c : r.vocab.chunks) {
    CHECK(c.key.size() % r.vocab.state_width == 0);
    CHECK(c.key.size() == c.states.size() * r.vocab.state_width);
    keys.insert(c.key);
  }
  CHECK(keys.size() == r.vocab.chunks.size());

  // Greedy longest match: no vocabulary chunk longer than the chosen one matches here.
  const std::string flat = concat_states(states);
  std::size_t pos = 0;
  for (auto id : r.parse) {
    const auto& chosen = r.vocab.chunks[id].key;
    for (const auto& c : r.vocab.chunks)
      if (c.key.size() > chosen.size()) CHECK(flat.compare(pos, c.key.size(), c.key) != 0);
    pos += chosen.size();
  }
}

}  // namespace

TEST_CASE("k-means examples") {
  const auto constant = fit_clusters(column_trace({{3.5, 3.5, 3.5, 3.5}}), 1, 1);
  CHECK(constant.centroids[0] == std::vector<double>{3.5});
  CHECK(constant.reduced.empty());

  const auto split = fit_clusters(column_trace({{0, 0, 10, 10}}), 2, 1);
  CHECK(split.centroids[0] == std::vector<double>{0.0, 10.0});

  const auto reduced = fit_clusters(column_trace({{1, 1, 2, 2, 2}, {1, 2, 3, 4, 5}}), 5, 1);
  CHECK(reduced.centroids[0].size() == 2);
  CHECK(reduced.centroids[1].size() == 5);
  CHECK(reduced.reduced == std::vector<std::size_t>{0});
}

TEST_CASE("k-means beats the worst of 20 random restarts") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    std::vector<double> values(400);
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = rng.normal() + 4.0 * static_cast<double>(rng.below(4));
    const auto fit = fit_clusters(column_trace({values}), 5, seed);
    const double ours = within_cluster_sse(values, fit.centroids[0]);
    double worst = 0.0;
    for (int r = 0; r < 20; ++r) worst = std::max(worst, random_restart_sse(values, 5, rng));
    CHECK(ours <= worst + 1e-9);
    CHECK(std::is_sorted(fit.centroids[0].begin(), fit.centroids[0].end()));
  }
}

TEST_CASE("k-means is deterministic per seed and per neuron") {
  Rng rng(4);
  std::vector<std::vector<double>> cols(3, std::vector<double>(200));
  for (auto& c : cols)
    for (double& v : c) v = rng.normal();
  const auto a = fit_clusters(column_trace(cols), 5, 9);
  const auto b = fit_clusters(column_trace(cols), 5, 9);
  CHECK(a.centroids == b.centroids);
  // Neuron i only depends on its own values and stream.
  const auto alone = fit_clusters(column_trace({cols[0]}), 5, 9);
  CHECK(alone.centroids[0] == a.centroids[0]);
}

TEST_CASE("k-means input errors") {
  CHECK_ERROR_KIND(fit_clusters(column_trace({{1.0}}), 0, 1), ErrorKind::InvalidSpec);
  auto empty = HiddenTrace::zeros(1, 0, 3);
  CHECK_ERROR_KIND(fit_clusters(empty, 5, 1), ErrorKind::InvalidSpec);
}

TEST_CASE("nearest centroid ties go to the lower index") {
  CHECK(nearest_centroid(5.0, {0.0, 10.0}) == 0);
  CHECK(nearest_centroid(5.0001, {0.0, 10.0}) == 1);
  CHECK(nearest_centroid(-3.0, {0.0, 10.0}) == 0);
}

TEST_CASE("symbolize") {
  NeuronClustering c;
  c.centroids = {{0.0, 1.0, 2.0}, {-1.0, 5.0}, {7.0}};
  const auto t = column_trace({{0.0, 2.0, 0.5}, {-1.0, 5.0, 2.0}, {7.0, 100.0, -3.0}});
  const auto s = symbolize(t, c);
  REQUIRE(s.size() == 3);
  CHECK(s[0] == "000");
  CHECK(s[1] == "210");
  CHECK(s[2] == "000");  // both halfway ties resolve low
  CHECK(symbolize(t, c) == s);

  NeuronClustering narrow;
  narrow.centroids = {{0.0}};
  CHECK_ERROR_KIND(symbolize(t, narrow), ErrorKind::ContractViolation);
}

TEST_CASE("chunking with no iterations keeps the states") {
  const auto states = states_of("abcabd");
  ChunkingConfig cfg;
  cfg.iterations = 0;
  const auto r = learn_chunks(states, cfg);
  CHECK(r.parse == std::vector<std::size_t>{0, 1, 2, 0, 1, 3});
  CHECK(r.vocab.size() == 4);
  CHECK(r.vocab.states == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK_FALSE(r.vocab.null_state.has_value());  // 'a' and 'b' tie for most frequent
  CHECK(learn_chunks(states_of("abcaad"), cfg).vocab.null_state == 0);
}

TEST_CASE("alternating states merge into one chunk and halve the parse") {
  const auto states = states_of("abababababab");
  // Brute-force pair counts on the raw string.
  std::map<std::string, int> counts;
  for (std::size_t i = 0; i + 1 < states.size(); ++i) ++counts[states[i] + states[i + 1]];
  CHECK(counts["ab"] == 6);
  CHECK(counts["ba"] == 5);

  ChunkingConfig cfg;
  cfg.freq_threshold = 2;
  cfg.iterations = 1;
  const auto r = learn_chunks(states, cfg);
  REQUIRE(r.vocab.find("ab").has_value());
  CHECK(r.vocab.find("ba").has_value());
  CHECK(r.parse.size() == states.size() / 2);
  for (auto id : r.parse) CHECK(r.vocab.chunks[id].key == "ab");
  CHECK(r.vocab.merges.front().count == 6);
}

TEST_CASE("a single repeated state never merges") {
  const auto states = states_of(std::string(50, 'z'));
  ChunkingConfig cfg;
  cfg.freq_threshold = 1;
  const auto r = learn_chunks(states, cfg);
  CHECK(r.vocab.null_state == 0);
  CHECK(r.vocab.size() == 1);
  CHECK(r.parse.size() == 50);
  CHECK(r.vocab.merges.empty());
}

TEST_CASE("pairs touching the null state are excluded") {
  // 'e' dominates; "de" and "ea" are frequent but must not merge.
  const auto states = states_of("abcdeeeeabcdeeeeeeabcdeeeabcdeeeeeabcdee");
  ChunkingConfig cfg;
  cfg.freq_threshold = 3;
  const auto r = learn_chunks(states, cfg);
  REQUIRE(r.vocab.null_state.has_value());
  CHECK(r.vocab.states[*r.vocab.null_state] == "e");
  for (const auto& c : r.vocab.chunks)
    if (c.states.size() > 1) CHECK(c.key.find('e') == std::string::npos);
  CHECK(r.vocab.find("abcd").has_value());
}

TEST_CASE("first merge round matches the brute-force top-K selection") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng(seed);
    std::string pattern;
    for (int i = 0; i < 300; ++i) pattern += static_cast<char>('a' + rng.below(4 + seed % 3));
    const auto states = states_of(pattern);
    ChunkingConfig cfg;
    cfg.candidates = 1 + seed % 5;
    cfg.freq_threshold = 8;
    cfg.iterations = 1;
    const auto r = learn_chunks(states, cfg);

    std::map<char, int> freq;
    for (char c : pattern) ++freq[c];
    int top = 0, tops = 0;
    char null_char = 0;
    for (auto [c, n] : freq) {
      if (n > top) top = n, tops = 1, null_char = c;
      else if (n == top) ++tops;
    }
    if (tops > 1) null_char = 0;

    std::map<std::string, std::pair<std::size_t, std::size_t>> pairs;  // count, first index
    for (std::size_t i = 0; i + 1 < pattern.size(); ++i) {
      auto& e = pairs.try_emplace(pattern.substr(i, 2), 0, i).first->second;
      ++e.first;
    }
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(pairs.begin(),
                                                                                 pairs.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second.first != b.second.first ? a.second.first > b.second.first
                                              : a.second.second < b.second.second;
    });
    ranked.resize(std::min(ranked.size(), cfg.candidates));
    std::set<std::string> expected;
    for (const auto& [key, stat] : ranked)
      if (stat.first >= cfg.freq_threshold && key[0] != null_char && key[1] != null_char)
        expected.insert(key);
    std::set<std::string> merged;
    for (const auto& m : r.vocab.merges) merged.insert(m.left + m.right);
    CHECK(merged == expected);
  }
}

TEST_CASE("chunking invariants on random and structured state streams") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    Rng rng(seed);
    std::string pattern;
    const std::vector<std::string> words = {"abcd", "ab", "cdab", "fgh", "e", "e", "e"};
    while (pattern.size() < 2000) {
      if (seed % 2) pattern += static_cast<char>('a' + rng.below(6));
      else pattern += words[rng.below(words.size())];
    }
    ChunkingConfig cfg;
    cfg.candidates = 1 + seed % 20;
    cfg.freq_threshold = 2 + seed % 6;
    cfg.iterations = 1 + seed % 10;
    check_chunking_invariants(states_of(pattern), cfg);
  }
}

TEST_CASE("multi-digit states and an empty stream") {
  std::vector<SymbolizedState> states;
  for (int i = 0; i < 40; ++i)
    for (const char* s : {"0123", "4401", "0123", "2222"}) states.emplace_back(s);
  ChunkingConfig cfg;
  cfg.freq_threshold = 5;
  check_chunking_invariants(states, cfg);

  const auto empty = learn_chunks({}, cfg);
  CHECK(empty.parse.empty());
  CHECK(empty.vocab.size() == 0);

  std::vector<SymbolizedState> ragged{"01", "012"};
  CHECK_ERROR_KIND(learn_chunks(ragged, cfg), ErrorKind::ContractViolation);
}

TEST_CASE("greedy_parse refuses unknown states") {
  const auto r = learn_chunks(states_of("abab"), {});
  CHECK_ERROR_KIND(greedy_parse({0, 1, 7}, r.vocab), ErrorKind::ContractViolation);
}

TEST_CASE("lookup table") {
  const std::vector<SymbolizedState> states{"00", "01", "00", "01", "02", "01"};
  const std::vector<std::string> tokens{"A", "B", "A", "C", "E", "C"};
  const auto t = build_lookup(states, tokens);
  CHECK(t.entries.size() == 3);
  CHECK(t.decode("00") == 'A');
  CHECK(t.decode("01") == 'C');  // majority 2 of 3
  CHECK(t.entries.at("01").count == 2);
  CHECK(t.entries.at("01").total == 3);
  CHECK(t.entries.at("01").ambiguous());
  CHECK_FALSE(t.decode("99").has_value());
  CHECK(t.ambiguous_count() == 1);
  CHECK(decode_accuracy(t, states, tokens) == doctest::Approx(5.0 / 6.0));

  // Ties go to the symbol seen first with the state.
  const auto tie = build_lookup({"7", "7", "7", "7"}, {"B", "A", "A", "B"});
  CHECK(tie.decode("7") == 'B');

  const auto single = build_lookup({"3"}, {"E"});
  CHECK(single.entries.size() == 1);

  CHECK_ERROR_KIND(build_lookup({"0"}, {}), ErrorKind::ContractViolation);
}

TEST_CASE("parse statistics") {
  ChunkVocab empty_vocab;
  const auto zero = parse_stats({}, empty_vocab);
  CHECK(zero.parse_length == 0);
  CHECK(zero.unique_states == 0);
  CHECK(zero.vocab_size == 0);
  CHECK(zero.filtered_vocab_size == 0);

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    std::string pattern;
    while (pattern.size() < 1000) pattern += rng.below(2) ? "abc" : std::string(1, 'a' + rng.below(5));
    const auto r = learn_chunks(states_of(pattern), {});
    const auto s = parse_stats(r.parse, r.vocab, 5);
    CHECK(s.parse_length == r.parse.size());
    CHECK(s.unique_states == std::set<char>(pattern.begin(), pattern.end()).size());
    CHECK(s.vocab_size == r.vocab.size());
    CHECK(s.filtered_vocab_size <= s.vocab_size);
    CHECK(parse_stats(r.parse, r.vocab, 1000000).filtered_vocab_size == 0);
  }
}

TEST_CASE("text formats round-trip") {
  testing::TempDir dir("dsc");
  const auto r = learn_chunks(states_of("abababababxab"), {ChunkingConfig{20, 2, 10, 10.0}});
  write_vocab(r.vocab, dir / "vocab.txt");
  std::ifstream in(dir / "vocab.txt");
  std::string line;
  std::size_t records = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    CHECK(r.vocab.find(line.substr(0, tab)).has_value());
    ++records;
  }
  CHECK(records == r.vocab.size());

  const auto t = build_lookup({"00", "01", "00"}, {"A", "B", "A"});
  write_lookup(t, dir / "lookup.txt");
  const auto back = read_lookup(dir / "lookup.txt");
  CHECK(back.entries.size() == 2);
  CHECK(back.decode("00") == 'A');
  CHECK(back.entries.at("00").count == 2);

  std::ofstream(dir / "bad.txt") << "00\tA\n";
  CHECK_ERROR_KIND(read_lookup(dir / "bad.txt"), ErrorKind::Corruption);
  CHECK_ERROR_KIND(read_lookup(dir / "missing.txt"), ErrorKind::Io);

  NeuronClustering c;
  c.centroids = {{-1.5, 0.25}, {3.0}};
  c.reduced = {1};
  write_clustering(c, dir / "clusters.json");
  const auto cb = read_clustering(dir / "clusters.json");
  CHECK(cb.centroids == c.centroids);
  CHECK(cb.reduced == c.reduced);
  std::ofstream(dir / "broken.json") << "{\"centroids\": [[]]}";
  CHECK_ERROR_KIND(read_clustering(dir / "broken.json"), ErrorKind::Corruption);
}

TEST_CASE("trained ABCD-in-E network yields a lookup table with dedicated states") {
  const auto seq = seqgen::generate_sparse(seqgen::uniform_vocabulary({"ABCD"}), 20000, 1);
  rnn::TrainConfig cfg;
  cfg.steps = 3000;
  const auto params = rnn::train(seq, cfg, 1, "ABCDE").first;
  const auto trace = rnn::record_trace(params, seq);
  const auto clustering = fit_clusters(trace, 5, 1);
  const auto states = symbolize(trace, clustering);
  for (const auto& s : states) {
    CHECK(s.size() == 12);
    CHECK(std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '4'; }));
  }
  const auto table = build_lookup(states, trace.tokens);
  std::map<char, int> per_symbol;
  for (const auto& [state, e] : table.entries) ++per_symbol[e.symbol];
  for (char c : std::string("ABCD")) CHECK(per_symbol[c] >= 1);
  CHECK(per_symbol['E'] > 1);
  CHECK(decode_accuracy(table, states, trace.tokens) == 1.0);
}
