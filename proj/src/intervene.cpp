#include "chunkscope/intervene.hpp"

#include <algorithm>

#include "chunkscope/error.hpp"

namespace chunkscope::intervene {

ResolvedGraft resolve_graft_policy(const GraftPolicy& policy, const rnn::RnnParams& params,
                                   const seqgen::TokenSequence& training,
                                   const dsc::NeuronClustering& clustering,
                                   const dsc::LookupTable& lookup) {
  if (policy.context.size() != 2)
    throw Error(ErrorKind::InvalidSpec, "graft policy context must be two symbols, got \"" +
                                            policy.context + "\"");
  const char prev = policy.context[0], cur = policy.context[1];
  const auto trace = rnn::record_trace(params, training);
  const auto states = dsc::symbolize(trace, clustering);

  ResolvedGraft out;
  out.rule.trigger = policy.trigger;
  out.rule.state.assign(trace.dim, 0.0);
  for (std::size_t t = 1; t < training.size(); ++t) {
    if (training[t - 1] != prev || training[t] != cur) continue;
    const auto& s = states[t];
    const auto decoded = lookup.decode(s);
    if (!decoded)
      throw Error(ErrorKind::PolicyResolution,
                  "state " + s + " at position " + std::to_string(t) + " is not in the lookup table");
    if (*decoded != cur)
      throw Error(ErrorKind::PolicyResolution, "state " + s + " at position " +
                                                   std::to_string(t) + " decodes to '" +
                                                   std::string(1, *decoded) + "', expected '" +
                                                   std::string(1, cur) + "'");
    if (std::find(out.source_states.begin(), out.source_states.end(), s) ==
        out.source_states.end())
      out.source_states.push_back(s);
    auto h = trace.at(0, t);
    for (std::size_t i = 0; i < trace.dim; ++i) out.rule.state[i] += h[i];
    ++out.support;
  }
  if (out.support == 0)
    throw Error(ErrorKind::PolicyResolution,
                "context \"" + policy.context + "\" never occurs in the training sequence");
  for (double& v : out.rule.state) v /= static_cast<double>(out.support);
  return out;
}

std::vector<double> state_centroid(const HiddenTrace& trace, const std::string& tokens,
                                   char symbol) {
  if (tokens.size() != trace.positions)
    throw Error(ErrorKind::ContractViolation, "token count does not match trace positions");
  std::vector<double> mean(trace.dim, 0.0);
  std::size_t n = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] != symbol) continue;
    auto h = trace.at(0, t);
    for (std::size_t i = 0; i < trace.dim; ++i) mean[i] += h[i];
    ++n;
  }
  if (n == 0)
    throw Error(ErrorKind::EmptyOccurrence, std::string("symbol '") + symbol + "' never occurs");
  for (double& v : mean) v /= static_cast<double>(n);
  return mean;
}

}  // namespace chunkscope::intervene
