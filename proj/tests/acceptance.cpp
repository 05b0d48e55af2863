// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "chunkscope/dsc.hpp"
#include "chunkscope/evaluate.hpp"
#include "chunkscope/intervene.hpp"
#include "chunkscope/popavg.hpp"
#include "chunkscope/rng.hpp"
#include "chunkscope/rnn.hpp"
#include "chunkscope/seqgen.hpp"
#include "chunkscope/trace.hpp"
#include "chunkscope/unsup.hpp"
#include "support.hpp"

using namespace chunkscope;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

constexpr std::uint64_t kCiSeed = 1;
constexpr std::size_t kPretrainSteps = 3000;

seqgen::TokenSequence prefix(const seqgen::TokenSequence& s, std::size_t n) {
  return {s.tokens.substr(0, n), s.provenance};
}

std::vector<std::size_t> positions_of(const HiddenTrace& t, const std::string& sym) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < t.positions; ++i)
    if (t.tokens[i] == sym) out.push_back(i);
  return out;
}

// ABCD embedded in E: trained on the first 20000 symbols, recorded over all 25000.
struct SparseModel {
  seqgen::TokenSequence seq;
  rnn::RnnParams params;
  HiddenTrace train, test;
};

SparseModel sparse_model(std::uint64_t seed) {
  SparseModel m;
  m.seq = seqgen::generate_sparse(seqgen::uniform_vocabulary({"ABCD"}), 25000, seed);
  rnn::TrainConfig cfg;
  cfg.steps = kPretrainSteps;
  m.params = rnn::train(prefix(m.seq, 20000), cfg, seed, "ABCDE").first;
  const auto full = rnn::record_trace(m.params, m.seq);
  m.train = full.slice(0, 20000);
  m.test = full.slice(20000, 25000);
  return m;
}

Outcome criterion1() {
  const auto start = std::chrono::steady_clock::now();
  const auto seq = seqgen::generate_periodic("ABCD", 4000);
  rnn::TrainConfig cfg;
  cfg.steps = 5000;
  const auto params = rnn::train(seq, cfg, kCiSeed, "ABCDE").first;
  const double nll = rnn::sequence_nll(params, seqgen::generate_periodic("ABCD", 1000));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream d;
  d << "NLL " << nll << " nats after 5000 updates in " << secs << " s";
  return {nll < 0.01 && secs < 60.0, d.str()};
}

Outcome criterion2() {
  std::ostringstream d;
  bool pass = true;
  double worst = 1.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto m = sparse_model(seed);
    const auto clustering = dsc::fit_clusters(m.train, 5, seed);
    const auto table = dsc::build_lookup(dsc::symbolize(m.train, clustering), m.train.tokens);
    const double acc = dsc::decode_accuracy(table, dsc::symbolize(m.test, clustering), m.test.tokens);
    worst = std::min(worst, acc);
    if (seed == kCiSeed) {
      d << "CI seed " << acc;
      pass = pass && acc == 1.0;
    }
    pass = pass && acc >= 0.98;
  }
  d << ", worst of 10 seeds " << worst;
  return {pass, d.str()};
}

Outcome criterion3() {
  const auto m = sparse_model(kCiSeed);
  const std::string train_tokens = m.seq.tokens.substr(0, 20000);
  const auto post_a = intervene::state_centroid(m.train, train_tokens, 'A');
  const auto post_c = intervene::state_centroid(m.train, train_tokens, 'C');
  auto predict = [&](const std::string& s, std::map<std::size_t, std::vector<double>> grafts) {
    return rnn::forward_with_graft(m.params, {s, ""}, grafts).predictions;
  };
  // Memory set to the post-A state, then input B: the next symbol is C.
  const char b_to_c = predict("EEEEEB", {{4, post_a}})[5];
  // Input E with the state grafted to post-A: prediction leaves E for B.
  const char e_base = predict("EEEEE", {})[4];
  const char e_graft = predict("EEEEE", {{4, post_a}})[4];
  // After A, memory swapped for post-C, then input D: prediction moves to E.
  const char d_base = predict("EEEEAD", {})[5];
  const char d_graft = predict("EEEEAD", {{4, post_c}})[5];
  std::ostringstream d;
  d << "post-A+B -> " << b_to_c << "; E: " << e_base << " -> " << e_graft << "; A,D with post-C: "
    << d_base << " -> " << d_graft;
  return {b_to_c == 'C' && e_base == 'E' && e_graft == 'B' && d_base != 'E' && d_graft == 'E',
          d.str()};
}

Outcome criterion4() {
  std::size_t wins = 0;
  double control_sum = 0.0, grafted_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto [train_seq, transfer_seq] = seqgen::generate_transfer_pair(seed);
    rnn::TrainConfig cfg;
    cfg.steps = kPretrainSteps;
    const auto params = rnn::train(train_seq, cfg, seed, "ABCDEGHIJKLMN").first;
    const auto trace = rnn::record_trace(params, train_seq);
    const auto clustering = dsc::fit_clusters(trace, 5, seed);
    const auto lookup = dsc::build_lookup(dsc::symbolize(trace, clustering), trace.tokens);
    const auto graft =
        intervene::resolve_graft_policy(intervene::GraftPolicy{}, params, train_seq, clustering, lookup);
    rnn::TrainConfig transfer_cfg;
    transfer_cfg.steps = 500;
    const auto [control, grafted] = rnn::train_with_graft_policy(
        params, transfer_seq, graft.rule, transfer_cfg, seed);
    const double c = evaluate::mean(control.losses), g = evaluate::mean(grafted.losses);
    control_sum += c;
    grafted_sum += g;
    wins += g < c;
  }
  std::ostringstream d;
  d << wins << "/10 seed pairs grafted < control (mean " << grafted_sum / 10 << " vs "
    << control_sum / 10 << ")";
  return {wins >= 8, d.str()};
}

Outcome criterion5() {
  evaluate::PipelineConfig cfg;
  cfg.train.steps = kPretrainSteps;
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 1; s <= 10; ++s) seeds.push_back(s);
  const auto r = evaluate::compare_trained_untrained(evaluate::kOverlapWords, seeds, cfg);
  const double pairs = r.aggregate.get("pairs_trained_more_unique_states");
  std::ostringstream d;
  d << pairs << "/10 pairs with more unique states when trained (mean "
    << r.aggregate.get("trained_unique_states_mean") << " vs "
    << r.aggregate.get("untrained_unique_states_mean") << ")";
  return {pairs >= 9, d.str()};
}

Outcome criterion6() {
  evaluate::PipelineConfig cfg;
  cfg.train.steps = kPretrainSteps;
  const auto levels = evaluate::hierarchy_scaling(4, {1, 2, 3, 4, 5}, cfg);
  std::ostringstream d;
  d << "learned chunks by depth:";
  bool pass = levels.size() == 5;
  double prev = -1.0;
  for (const auto& l : levels) {
    const double m = l.aggregate.get("learned_chunks_mean");
    d << ' ' << m;
    pass = pass && m >= prev;
    prev = m;
  }
  return {pass, d.str()};
}

Outcome criterion7() {
  Rng rng(2024);
  std::size_t mismatches = 0, members = 0, decisions = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t d = 2 + rng.below(10), n = 40 + rng.below(60);
    auto t = HiddenTrace::zeros(1, n, d);
    for (double& v : t.values) v = rng.normal();
    t.tokens.assign(n, "x");
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < n; ++i)
      if (rng.uniform() < 0.15) pos.push_back(i);
    if (pos.size() < 2) pos = {0, n / 2};
    const popavg::SignalOccurrences occ{"s", pos, 0};
    const auto chunk = popavg::fit_chunk(t, occ, 0, rng.uniform(0.5, 4.0));
    if (chunk.indices.empty()) continue;
    // Direct evaluation: C, mean over occurrences, max deviation, closed ball.
    std::vector<double> mean(chunk.indices.size(), 0.0);
    for (auto p : pos)
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += t.at(0, p)[chunk.indices[j]];
    for (double& v : mean) v /= static_cast<double>(pos.size());
    auto dev = [&](std::span<const double> h) {
      double s = 0.0;
      for (std::size_t j = 0; j < mean.size(); ++j) s += std::pow(h[chunk.indices[j]] - mean[j], 2);
      return s / static_cast<double>(d);
    };
    double delta = 0.0;
    for (auto p : pos) delta = std::max(delta, dev(t.at(0, p)));
    for (std::size_t p = 0; p < n; ++p) {
      Rng probe(inst * 1000 + p);
      std::vector<double> h(t.at(0, p).begin(), t.at(0, p).end());
      if (p % 3 == 0)
        for (double& v : h) v += 0.3 * probe.normal();
      const bool want = dev(h) <= std::max(delta, 1e-9);
      mismatches += popavg::classify(h, chunk) != want;
      members += want;
      ++decisions;
    }
  }
  const auto sched = popavg::tolerance_schedule();
  const bool ends = std::fabs(sched[0] - 2.0) <= 1e-12 &&
                    std::fabs(sched[39] - 2.0 * std::pow(0.8, 39)) <= 1e-12;
  std::ostringstream d;
  d << mismatches << " mismatches over " << decisions << " decisions (" << members
    << " inside); tol_0 " << sched[0] << ", tol_39 " << sched[39];
  return {mismatches == 0 && decisions > 0 && members > 0 && ends, d.str()};
}

Outcome criterion8() {
  const auto m = sparse_model(kCiSeed);
  const popavg::SignalOccurrences occ{"A", positions_of(m.train, "A"), 0};
  const auto sweep = popavg::sweep_tolerance(m.train, occ, 0);
  const popavg::SignalOccurrences test_occ{"A", positions_of(m.test, "A"), 0};
  const auto r = popavg::evaluate(m.test, test_occ, sweep.chunk);
  std::ostringstream d;
  d << "held-out TPR " << r.tpr << ", FPR " << r.fpr << " at tol_" << sweep.report.tolerance_index
    << " with |C| = " << sweep.chunk.indices.size();
  return {r.tpr >= 0.99 && r.fpr <= 0.01, d.str()};
}

Outcome criterion9() {
  const auto seq = seqgen::generate_noise_background("ABCD", "EFG", 20000, kCiSeed);
  rnn::TrainConfig cfg;
  cfg.steps = kPretrainSteps;
  const auto params = rnn::train(seq, cfg, kCiSeed, "ABCDEFG").first;
  const auto trace = rnn::record_trace(params, seq);
  const auto tmpl = evaluate::build_template(trace, seq.tokens, "ABCD");
  const auto dev = evaluate::deviation_series(trace, tmpl);
  const auto fit = evaluate::separating_threshold(dev, evaluate::word_starts(seq.tokens, "ABCD"));
  std::ostringstream d;
  d << "max dev at starts " << fit.max_positive << ", min elsewhere " << fit.min_negative
    << ", threshold " << fit.threshold << ", errors " << fit.errors;
  return {fit.separable && fit.errors == 0, d.str()};
}

double naive_loss(const unsup::Matrix& x, const unsup::Matrix& dict) {
  double total = 0.0;
  for (std::size_t m = 0; m < x.rows; ++m) {
    double best = -2.0;
    for (std::size_t k = 0; k < dict.rows; ++k) {
      double dot = 0.0, nx = 0.0, nd = 0.0;
      for (std::size_t j = 0; j < x.cols; ++j) {
        dot += x.row(m)[j] * dict.row(k)[j];
        nx += x.row(m)[j] * x.row(m)[j];
        nd += dict.row(k)[j] * dict.row(k)[j];
      }
      best = std::max(best, dot / std::sqrt(nx * nd));
    }
    total += best;
  }
  return -total / static_cast<double>(x.rows);
}

Outcome criterion10() {
  Rng rng(10);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    unsup::Matrix x(4, 3), dict(2, 3);
    for (double& v : x.data) v = rng.normal();
    for (double& v : dict.data) v = rng.normal();
    const auto g = unsup::max_cosine_gradient(x, dict);
    for (std::size_t i = 0; i < dict.data.size(); ++i) {
      auto plus = dict, minus = dict;
      plus.data[i] += 1e-6;
      minus.data[i] -= 1e-6;
      const double fd = (naive_loss(x, plus) - naive_loss(x, minus)) / 2e-6;
      worst_rel = std::max(worst_rel, std::fabs(fd - g.data[i]) /
                                          std::max({std::fabs(fd), std::fabs(g.data[i]), 1e-4}));
    }
  }

  // Three planted unit prototypes, samples within cosine 0.99 of one of them.
  unsup::Matrix protos(3, 8), x(300, 8);
  for (double& v : protos.data) v = rng.normal();
  for (std::size_t k = 0; k < 3; ++k) {
    double n = 0.0;
    for (double v : protos.row(k)) n += v * v;
    for (double& v : protos.row(k)) v /= std::sqrt(n);
  }
  for (std::size_t m = 0; m < 300; ++m) {
    const auto p = protos.row(m % 3);
    double cos = 0.0;
    do {
      double dot = 0.0, n = 0.0;
      for (std::size_t j = 0; j < 8; ++j) {
        x.row(m)[j] = p[j] + 0.03 * rng.normal();
        dot += x.row(m)[j] * p[j];
        n += x.row(m)[j] * x.row(m)[j];
      }
      cos = dot / std::sqrt(n);
    } while (cos < 0.99);
  }
  unsup::FitConfig cfg;
  cfg.chunks = 3;
  cfg.steps = 300;
  cfg.seed = kCiSeed;
  const auto dict = unsup::fit_dictionary(x, cfg);
  double worst_cos = 1.0;
  for (std::size_t k = 0; k < 3; ++k) {
    double best = -1.0;
    for (std::size_t r = 0; r < 3; ++r) best = std::max(best, unsup::sim(dict.entries.row(r), protos.row(k)));
    worst_cos = std::min(worst_cos, best);
  }
  bool monotone = true;
  for (std::size_t i = 1; i < dict.best_losses.size(); ++i)
    monotone = monotone && dict.best_losses[i] <= dict.best_losses[i - 1];
  std::ostringstream d;
  d << "max gradient rel err " << worst_rel << "; worst prototype cosine " << worst_cos
    << "; best-so-far loss " << (monotone ? "non-increasing" : "INCREASES");
  return {worst_rel < 1e-4 && worst_cos >= 0.95 && monotone, d.str()};
}

Outcome criterion11() {
  Rng rng(11);
  const std::size_t n = 5000;
  const std::vector<std::string> tagset{"NN", "VB", "DT", "IN", "JJ", "RB"};
  std::vector<std::string> tags(n);
  std::vector<unsup::ChunkAssignment> matched(n), independent(n);
  for (std::size_t i = 0; i < n; ++i) {
    tags[i] = tagset[rng.below(tagset.size())];
    matched[i].chunk = tags[i] == "NN" ? 3 : rng.below(3);
    independent[i].chunk = rng.below(4);
  }
  const auto rows = unsup::pos_correlate({matched, independent}, tags, 4);
  double nn_r = 0.0, worst_independent = 0.0;
  for (const auto& r : rows) {
    if (r.layer == 0 && r.tag == "NN") nn_r = r.r;
    if (r.layer == 1) worst_independent = std::max(worst_independent, std::fabs(r.r));
  }
  std::ostringstream d;
  d << "matched tag r = " << nn_r << "; independent max |r| = " << worst_independent;
  return {std::fabs(nn_r - 1.0) < 1e-12 && worst_independent < 0.1, d.str()};
}

Outcome criterion12() {
  testing::TempDir dir("acceptance-trace");
  Rng rng(12);
  auto t = HiddenTrace::zeros(3, 50, 7);
  for (double& v : t.values) v = static_cast<double>(static_cast<float>(rng.normal() * 10.0));
  for (std::size_t i = 0; i < 50; ++i) t.tokens[i] = "tok" + std::to_string(i);
  trace::write_trace(t, dir.path());
  const auto back = trace::read_trace(dir.path());
  const bool lossless = back.values == t.values && back.tokens == t.tokens;

  std::size_t rejected = 0, trials = 0;
  for (std::size_t layer = 0; layer < 3; ++layer) {
    const auto payload = dir / trace::payload_name(layer);
    const auto full = std::filesystem::file_size(payload);
    for (int k = 0; k < 40; ++k) {
      const auto cut = static_cast<std::uintmax_t>(rng.below(full));
      std::filesystem::copy_file(dir / trace::payload_name(layer), dir / "saved.f32",
                                 std::filesystem::copy_options::overwrite_existing);
      std::filesystem::resize_file(payload, cut);
      ++trials;
      try {
        trace::read_trace(dir.path());
      } catch (const Error& e) {
        rejected += e.kind() == ErrorKind::Corruption;
      }
      std::filesystem::copy_file(dir / "saved.f32", payload,
                                 std::filesystem::copy_options::overwrite_existing);
    }
  }
  std::ostringstream d;
  d << "round trip " << (lossless ? "bit-exact" : "LOSSY") << "; " << rejected << "/" << trials
    << " truncations rejected";
  return {lossless && rejected == trials, d.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"RNN convergence on periodic ABCD", criterion1},
      {"lookup decoding on held-out ABCD-in-E", criterion2},
      {"grafting causality", criterion3},
      {"transfer with graft policy", criterion4},
      {"trained vs untrained unique states", criterion5},
      {"hierarchy scaling of learned chunks", criterion6},
      {"population averaging exactness", criterion7},
      {"population averaging detection", criterion8},
      {"template deviation separability", criterion9},
      {"max-cosine dictionary correctness", criterion10},
      {"POS correlation sanity", criterion11},
      {"trace format round trip and truncation", criterion12},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
