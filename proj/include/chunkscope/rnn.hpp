#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chunkscope/seqgen.hpp"
#include "chunkscope/trace.hpp"

namespace chunkscope::rnn {

enum class HiddenActivation { Linear, Tanh };

const char* to_string(HiddenActivation a);
HiddenActivation activation_from_string(const std::string& s);

/// Parameters of the two-linear-layer recurrent net
///   h_n = W_ch [x_n; h_{n-1}] + b_h
///   o_n = W_co [x_n; h_n] + b_o,   y_n = log softmax(o_n)
/// Matrices are row-major; the concatenated input puts the one-hot symbol first.
struct RnnParams {
  std::string alphabet;  // symbol order defines the one-hot slots
  std::size_t hidden = 0;
  std::vector<double> w_ch;  // hidden x (omega + hidden)
  std::vector<double> b_h;   // hidden
  std::vector<double> w_co;  // omega x (omega + hidden)
  std::vector<double> b_o;   // omega
  HiddenActivation activation = HiddenActivation::Linear;

  std::size_t omega() const { return alphabet.size(); }
  std::size_t input_width() const { return omega() + hidden; }
  /// Throws ContractViolation for symbols outside the alphabet.
  std::size_t symbol_index(char symbol) const;
  void validate() const;

  static RnnParams zeros(std::string alphabet, std::size_t hidden);
};

struct TrainConfig {
  std::size_t hidden = 12;
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t subsequence_length = 200;
  std::size_t steps = 2000;
  HiddenActivation activation = HiddenActivation::Linear;
};

struct TrainReport {
  std::vector<double> losses;  // mean NLL per update, nats
  std::uint64_t seed = 0;
  TrainConfig config;
  double init_bound = 0.0;  // uniform(-b, b) initialization bound
};

struct StepOutput {
  std::vector<double> h;
  std::vector<double> log_probs;
};

/// One recurrence step with an arbitrary input vector (normally one-hot).
StepOutput forward_step(const RnnParams& params, std::span<const double> x,
                        std::span<const double> h_prev);

struct Gradients {
  std::vector<double> w_ch, b_h, w_co, b_o;
};

/// Mean next-token NLL over `window` (symbol t predicts t+1) from h_{-1} = 0, with the
/// BPTT gradient of every parameter tensor. This is exactly what one training update sees.
double loss_and_gradients(const RnnParams& params, std::string_view window, Gradients& grads);

/// Uniform(-1/sqrt(d+|alphabet|), +1/sqrt(d+|alphabet|)) on every weight and bias.
RnnParams initialize(const std::string& alphabet, const TrainConfig& config, std::uint64_t seed);

/// Replaces the hidden state at a position, after it is computed and before it feeds the
/// output and the next step.
struct Intervention {
  enum class Kind { Replace, ZeroCoordinates, SetCoordinates };
  Kind kind = Kind::Replace;
  std::vector<double> values;        // Replace: full hidden vector; SetCoordinates: per index
  std::vector<std::size_t> indices;  // coordinates touched by Zero/SetCoordinates

  static Intervention replace(std::vector<double> state);
  static Intervention zero(std::vector<std::size_t> coordinates);
  static Intervention set(std::vector<std::size_t> coordinates, std::vector<double> values);
  void apply(std::span<double> h) const;
};

/// Hidden state override used while training: whenever the input symbol equals
/// `trigger`, h is replaced by `state`.
struct GraftRule {
  char trigger = '\0';
  std::vector<double> state;
};

/// Next-token training on random subsequences, h_0 = 0 per subsequence, Adam.
/// The alphabet defaults to the sorted symbols of the sequence (plus 'E').
std::pair<RnnParams, TrainReport> train(const seqgen::TokenSequence& sequence,
                                        const TrainConfig& config, std::uint64_t seed,
                                        const std::string& alphabet = {});

/// Continues training existing parameters; an optional graft rule is applied in every
/// forward pass (gradients do not flow through replaced states).
TrainReport train_from(RnnParams& params, const seqgen::TokenSequence& sequence,
                       const TrainConfig& config, std::uint64_t seed,
                       const GraftRule* graft = nullptr);

/// Full-sequence forward pass from h_0 = 0 capturing every h_n (one layer).
HiddenTrace record_trace(const RnnParams& params, const seqgen::TokenSequence& sequence);

struct ForwardResult {
  HiddenTrace trace;
  std::vector<std::vector<double>> log_probs;  // per position
  std::string predictions;                     // argmax symbol per position
};

ForwardResult forward_with_interventions(const RnnParams& params,
                                         const seqgen::TokenSequence& sequence,
                                         const std::map<std::size_t, Intervention>& interventions);

ForwardResult forward_with_graft(const RnnParams& params, const seqgen::TokenSequence& sequence,
                                 const std::map<std::size_t, std::vector<double>>& grafts);

/// Trains a control copy and a grafted copy of `start` on `transfer` with the same seed.
/// Returns (control, grafted).
std::pair<TrainReport, TrainReport> train_with_graft_policy(const RnnParams& start,
                                                            const seqgen::TokenSequence& transfer,
                                                            const GraftRule& rule,
                                                            const TrainConfig& config,
                                                            std::uint64_t seed);

/// Mean NLL of the next token over a sequence (positions 0..n-2 predict 1..n-1).
double sequence_nll(const RnnParams& params, const seqgen::TokenSequence& sequence);

/// Checkpoint: `<dir>/params.json` manifest plus little-endian float32 arrays.
void save_params(const RnnParams& params, const TrainReport* report,
                 const std::filesystem::path& dir);
RnnParams load_params(const std::filesystem::path& dir);

}  // namespace chunkscope::rnn
