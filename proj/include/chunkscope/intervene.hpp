#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "chunkscope/dsc.hpp"
#include "chunkscope/rnn.hpp"
#include "chunkscope/seqgen.hpp"

namespace chunkscope::intervene {

/// "Whenever the input is `trigger`, graft the state seen when the previous input was
/// context[0] and the current input is context[1]."
struct GraftPolicy {
  char trigger = 'D';
  std::string context = "JK";
};

struct ResolvedGraft {
  rnn::GraftRule rule;
  std::size_t support = 0;               // positions averaged into the centroid
  std::vector<std::string> source_states;  // distinct symbolized states at those positions
};

/// Averages the hidden states of `params` on `training` at every position matching the
/// policy context. Each contributing symbolized state must be in `lookup` and decode to
/// context[1]; otherwise throws PolicyResolution.
ResolvedGraft resolve_graft_policy(const GraftPolicy& policy, const rnn::RnnParams& params,
                                   const seqgen::TokenSequence& training,
                                   const dsc::NeuronClustering& clustering,
                                   const dsc::LookupTable& lookup);

/// Mean hidden state at the positions holding `symbol` (state after reading it).
std::vector<double> state_centroid(const HiddenTrace& trace, const std::string& tokens,
                                   char symbol);

}  // namespace chunkscope::intervene
