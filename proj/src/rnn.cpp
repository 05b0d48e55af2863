#include "chunkscope/rnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "chunkscope/error.hpp"
#include "chunkscope/rng.hpp"
#include "chunkscope/f32io.hpp"
#include "json.hpp"

namespace chunkscope::rnn {

using seqgen::TokenSequence;

const char* to_string(HiddenActivation a) {
  return a == HiddenActivation::Tanh ? "tanh" : "linear";
}

HiddenActivation activation_from_string(const std::string& s) {
  if (s == "linear") return HiddenActivation::Linear;
  if (s == "tanh") return HiddenActivation::Tanh;
  throw Error(ErrorKind::InvalidSpec, "unknown hidden activation '" + s + "'");
}

std::size_t RnnParams::symbol_index(char symbol) const {
  const auto pos = alphabet.find(symbol);
  if (pos == std::string::npos)
    throw Error(ErrorKind::ContractViolation,
                std::string("symbol '") + symbol + "' is not in the model alphabet " + alphabet);
  return pos;
}

void RnnParams::validate() const {
  const std::size_t w = input_width();
  if (w_ch.size() != hidden * w || b_h.size() != hidden || w_co.size() != omega() * w ||
      b_o.size() != omega())
    throw Error(ErrorKind::ContractViolation, "parameter shapes inconsistent with hidden=" +
                                                  std::to_string(hidden) +
                                                  " omega=" + std::to_string(omega()));
  for (const auto* v : {&w_ch, &b_h, &w_co, &b_o})
    for (double x : *v)
      if (!std::isfinite(x)) throw Error(ErrorKind::Numerical, "non-finite parameter");
}

RnnParams RnnParams::zeros(std::string alphabet, std::size_t hidden) {
  RnnParams p;
  p.alphabet = std::move(alphabet);
  p.hidden = hidden;
  p.w_ch.assign(hidden * p.input_width(), 0.0);
  p.b_h.assign(hidden, 0.0);
  p.w_co.assign(p.omega() * p.input_width(), 0.0);
  p.b_o.assign(p.omega(), 0.0);
  return p;
}

namespace {

void log_softmax_inplace(std::span<double> o) {
  const double m = *std::max_element(o.begin(), o.end());
  double s = 0.0;
  for (double v : o) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (double& v : o) v -= lse;
}

// h = act(W_ch[:, sym] + W_ch[:, omega:] h_prev + b_h) for a one-hot symbol.
void hidden_update(const RnnParams& p, std::size_t sym, const double* h_prev, double* h) {
  const std::size_t w = p.input_width(), om = p.omega();
  for (std::size_t i = 0; i < p.hidden; ++i) {
    const double* row = p.w_ch.data() + i * w;
    double acc = p.b_h[i] + row[sym];
    for (std::size_t j = 0; j < p.hidden; ++j) acc += row[om + j] * h_prev[j];
    h[i] = p.activation == HiddenActivation::Tanh ? std::tanh(acc) : acc;
  }
}

void output_logits(const RnnParams& p, std::size_t sym, const double* h, double* o) {
  const std::size_t w = p.input_width(), om = p.omega();
  for (std::size_t k = 0; k < om; ++k) {
    const double* row = p.w_co.data() + k * w;
    double acc = p.b_o[k] + row[sym];
    for (std::size_t j = 0; j < p.hidden; ++j) acc += row[om + j] * h[j];
    o[k] = acc;
  }
}

struct Grads : Gradients {
  explicit Grads(const RnnParams& p) {
    w_ch.resize(p.w_ch.size());
    b_h.resize(p.b_h.size());
    w_co.resize(p.w_co.size());
    b_o.resize(p.b_o.size());
  }
  void clear() {
    for (auto* v : {&w_ch, &b_h, &w_co, &b_o}) std::fill(v->begin(), v->end(), 0.0);
  }
};

// Mean NLL over the window plus gradients. inputs/targets are symbol indices.
double forward_backward(const RnnParams& p, const std::vector<std::size_t>& inputs,
                        const std::vector<std::size_t>& targets, const GraftRule* graft,
                        std::size_t graft_symbol, Grads& g) {
  const std::size_t n = inputs.size(), d = p.hidden, om = p.omega(), w = p.input_width();
  std::vector<double> hs((n + 1) * d, 0.0);  // hs[t+1] = h_t; hs[0] = h_{-1} = 0
  std::vector<double> lp(n * om);
  std::vector<char> grafted(n, 0);
  double loss = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    double* h = hs.data() + (t + 1) * d;
    hidden_update(p, inputs[t], hs.data() + t * d, h);
    if (graft && inputs[t] == graft_symbol) {
      std::copy(graft->state.begin(), graft->state.end(), h);
      grafted[t] = 1;
    }
    double* o = lp.data() + t * om;
    output_logits(p, inputs[t], h, o);
    log_softmax_inplace({o, om});
    loss -= o[targets[t]];
  }
  const double scale = 1.0 / static_cast<double>(n);
  loss *= scale;

  std::vector<double> dh_next(d, 0.0), dh(d), dlogit(om);
  for (std::size_t t = n; t-- > 0;) {
    const double* h = hs.data() + (t + 1) * d;
    const double* h_prev = hs.data() + t * d;
    const double* o = lp.data() + t * om;
    for (std::size_t k = 0; k < om; ++k)
      dlogit[k] = (std::exp(o[k]) - (k == targets[t] ? 1.0 : 0.0)) * scale;
    dh = dh_next;
    for (std::size_t k = 0; k < om; ++k) {
      double* grow = g.w_co.data() + k * w;
      const double* prow = p.w_co.data() + k * w;
      grow[inputs[t]] += dlogit[k];
      for (std::size_t j = 0; j < d; ++j) {
        grow[om + j] += dlogit[k] * h[j];
        dh[j] += prow[om + j] * dlogit[k];
      }
      g.b_o[k] += dlogit[k];
    }
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    if (grafted[t]) continue;  // replaced state is a constant
    for (std::size_t i = 0; i < d; ++i) {
      const double da = p.activation == HiddenActivation::Tanh ? dh[i] * (1.0 - h[i] * h[i]) : dh[i];
      double* grow = g.w_ch.data() + i * w;
      const double* prow = p.w_ch.data() + i * w;
      grow[inputs[t]] += da;
      for (std::size_t j = 0; j < d; ++j) {
        grow[om + j] += da * h_prev[j];
        dh_next[j] += prow[om + j] * da;
      }
      g.b_h[i] += da;
    }
  }
  return loss;
}

struct Adam {
  std::vector<double> m, v;
  void step(std::vector<double>& param, const std::vector<double>& grad, const TrainConfig& c,
            double bc1, double bc2) {
    if (m.empty()) {
      m.assign(param.size(), 0.0);
      v.assign(param.size(), 0.0);
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      param[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
};

std::string default_alphabet(const TokenSequence& seq) {
  std::set<char> s(seq.tokens.begin(), seq.tokens.end());
  s.insert('E');
  return {s.begin(), s.end()};
}

}  // namespace

StepOutput forward_step(const RnnParams& params, std::span<const double> x,
                        std::span<const double> h_prev) {
  const std::size_t d = params.hidden, om = params.omega(), w = params.input_width();
  if (x.size() != om || h_prev.size() != d)
    throw Error(ErrorKind::ContractViolation, "forward_step expects x of size " +
                                                  std::to_string(om) + " and h of size " +
                                                  std::to_string(d));
  StepOutput out{std::vector<double>(d), std::vector<double>(om)};
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = params.w_ch.data() + i * w;
    double acc = params.b_h[i];
    for (std::size_t j = 0; j < om; ++j) acc += row[j] * x[j];
    for (std::size_t j = 0; j < d; ++j) acc += row[om + j] * h_prev[j];
    out.h[i] = params.activation == HiddenActivation::Tanh ? std::tanh(acc) : acc;
  }
  for (std::size_t k = 0; k < om; ++k) {
    const double* row = params.w_co.data() + k * w;
    double acc = params.b_o[k];
    for (std::size_t j = 0; j < om; ++j) acc += row[j] * x[j];
    for (std::size_t j = 0; j < d; ++j) acc += row[om + j] * out.h[j];
    out.log_probs[k] = acc;
  }
  log_softmax_inplace(out.log_probs);
  return out;
}

RnnParams initialize(const std::string& alphabet, const TrainConfig& config, std::uint64_t seed) {
  if (alphabet.empty()) throw Error(ErrorKind::InvalidSpec, "empty model alphabet");
  if (config.hidden == 0) throw Error(ErrorKind::InvalidSpec, "hidden width must be positive");
  RnnParams p = RnnParams::zeros(alphabet, config.hidden);
  p.activation = config.activation;
  const double bound = 1.0 / std::sqrt(static_cast<double>(p.input_width()));
  Rng rng(seed);
  for (auto* v : {&p.w_ch, &p.b_h, &p.w_co, &p.b_o})
    for (double& x : *v) x = rng.uniform(-bound, bound);
  return p;
}

std::pair<RnnParams, TrainReport> train(const TokenSequence& sequence, const TrainConfig& config,
                                        std::uint64_t seed, const std::string& alphabet) {
  const std::string alpha = alphabet.empty() ? default_alphabet(sequence) : alphabet;
  RnnParams params = initialize(alpha, config, Rng::derive(seed, 0));
  TrainReport report = train_from(params, sequence, config, Rng::derive(seed, 1));
  report.seed = seed;
  return {std::move(params), std::move(report)};
}

double loss_and_gradients(const RnnParams& params, std::string_view window, Gradients& grads) {
  params.validate();
  if (window.size() < 2)
    throw Error(ErrorKind::InvalidSpec, "gradient window needs at least two symbols");
  std::vector<std::size_t> inputs(window.size() - 1), targets(window.size() - 1);
  for (std::size_t t = 0; t + 1 < window.size(); ++t) {
    inputs[t] = params.symbol_index(window[t]);
    targets[t] = params.symbol_index(window[t + 1]);
  }
  Grads g(params);
  const double loss = forward_backward(params, inputs, targets, nullptr, params.omega(), g);
  grads = std::move(g);
  return loss;
}

TrainReport train_from(RnnParams& params, const TokenSequence& sequence, const TrainConfig& config,
                       std::uint64_t seed, const GraftRule* graft) {
  params.validate();
  const std::size_t len = config.subsequence_length;
  if (len == 0) throw Error(ErrorKind::InvalidSpec, "subsequence length must be positive");
  if (sequence.size() < len + 1)
    throw Error(ErrorKind::InvalidSpec, "training sequence of length " +
                                            std::to_string(sequence.size()) + " needs at least " +
                                            std::to_string(len + 1) + " symbols");
  std::size_t graft_symbol = params.omega();
  if (graft) {
    graft_symbol = params.symbol_index(graft->trigger);
    if (graft->state.size() != params.hidden)
      throw Error(ErrorKind::ContractViolation, "graft state has wrong width");
  }
  std::vector<std::size_t> symbols(sequence.size());
  for (std::size_t i = 0; i < sequence.size(); ++i) symbols[i] = params.symbol_index(sequence[i]);

  TrainReport report;
  report.seed = seed;
  report.config = config;
  report.init_bound = 1.0 / std::sqrt(static_cast<double>(params.input_width()));
  report.losses.reserve(config.steps);

  Rng rng(seed);
  Grads g(params);
  Adam a_wch, a_bh, a_wco, a_bo;
  std::vector<std::size_t> inputs(len), targets(len);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::size_t start = rng.below(sequence.size() - len);
    for (std::size_t t = 0; t < len; ++t) {
      inputs[t] = symbols[start + t];
      targets[t] = symbols[start + t + 1];
    }
    g.clear();
    const double loss = forward_backward(params, inputs, targets, graft, graft_symbol, g);
    if (!std::isfinite(loss))
      throw Error(ErrorKind::Numerical, "training loss became non-finite at step " +
                                            std::to_string(step));
    report.losses.push_back(loss);
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step + 1));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step + 1));
    a_wch.step(params.w_ch, g.w_ch, config, bc1, bc2);
    a_bh.step(params.b_h, g.b_h, config, bc1, bc2);
    a_wco.step(params.w_co, g.w_co, config, bc1, bc2);
    a_bo.step(params.b_o, g.b_o, config, bc1, bc2);
  }
  return report;
}

Intervention Intervention::replace(std::vector<double> state) {
  Intervention i;
  i.kind = Kind::Replace;
  i.values = std::move(state);
  return i;
}

Intervention Intervention::zero(std::vector<std::size_t> coordinates) {
  Intervention i;
  i.kind = Kind::ZeroCoordinates;
  i.indices = std::move(coordinates);
  return i;
}

Intervention Intervention::set(std::vector<std::size_t> coordinates, std::vector<double> values) {
  if (coordinates.size() != values.size())
    throw Error(ErrorKind::ContractViolation, "one value per grafted coordinate required");
  Intervention i;
  i.kind = Kind::SetCoordinates;
  i.indices = std::move(coordinates);
  i.values = std::move(values);
  return i;
}

void Intervention::apply(std::span<double> h) const {
  if (kind == Kind::Replace) {
    if (values.size() != h.size())
      throw Error(ErrorKind::ContractViolation, "graft vector has length " +
                                                    std::to_string(values.size()) + ", expected " +
                                                    std::to_string(h.size()));
    std::copy(values.begin(), values.end(), h.begin());
    return;
  }
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const auto i = indices[j];
    if (i >= h.size()) throw Error(ErrorKind::ContractViolation, "coordinate out of range");
    h[i] = kind == Kind::SetCoordinates ? values[j] : 0.0;
  }
}

ForwardResult forward_with_interventions(const RnnParams& params, const TokenSequence& sequence,
                                         const std::map<std::size_t, Intervention>& interventions) {
  params.validate();
  const std::size_t n = sequence.size(), d = params.hidden, om = params.omega();
  if (!interventions.empty() && interventions.rbegin()->first >= n)
    throw Error(ErrorKind::ContractViolation,
                "intervention at position " + std::to_string(interventions.rbegin()->first) +
                    " outside a sequence of length " + std::to_string(n));
  ForwardResult r;
  r.trace = HiddenTrace::zeros(1, n, d);
  r.trace.producer = {{"producer", "chunkscope rnn"}, {"hidden", std::to_string(d)}};
  r.log_probs.assign(n, std::vector<double>(om));
  r.predictions.resize(n);
  std::vector<double> h_prev(d, 0.0), h(d);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t sym = params.symbol_index(sequence[t]);
    r.trace.tokens[t] = std::string(1, sequence[t]);
    hidden_update(params, sym, h_prev.data(), h.data());
    if (auto it = interventions.find(t); it != interventions.end()) it->second.apply(h);
    auto out = r.trace.at(0, t);
    std::copy(h.begin(), h.end(), out.begin());
    auto& lp = r.log_probs[t];
    output_logits(params, sym, h.data(), lp.data());
    log_softmax_inplace(lp);
    r.predictions[t] = params.alphabet[static_cast<std::size_t>(
        std::max_element(lp.begin(), lp.end()) - lp.begin())];
    std::swap(h, h_prev);
  }
  return r;
}

ForwardResult forward_with_graft(const RnnParams& params, const TokenSequence& sequence,
                                 const std::map<std::size_t, std::vector<double>>& grafts) {
  std::map<std::size_t, Intervention> iv;
  for (const auto& [pos, state] : grafts) iv.emplace(pos, Intervention::replace(state));
  return forward_with_interventions(params, sequence, iv);
}

HiddenTrace record_trace(const RnnParams& params, const TokenSequence& sequence) {
  return forward_with_interventions(params, sequence, {}).trace;
}

std::pair<TrainReport, TrainReport> train_with_graft_policy(const RnnParams& start,
                                                            const TokenSequence& transfer,
                                                            const GraftRule& rule,
                                                            const TrainConfig& config,
                                                            std::uint64_t seed) {
  RnnParams control = start;
  RnnParams grafted = start;
  TrainReport a = train_from(control, transfer, config, seed);
  TrainReport b = train_from(grafted, transfer, config, seed, &rule);
  return {std::move(a), std::move(b)};
}

double sequence_nll(const RnnParams& params, const TokenSequence& sequence) {
  if (sequence.size() < 2) return 0.0;
  const auto r = forward_with_interventions(params, sequence, {});
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < sequence.size(); ++t)
    total -= r.log_probs[t][params.symbol_index(sequence[t + 1])];
  return total / static_cast<double>(sequence.size() - 1);
}

void save_params(const RnnParams& params, const TrainReport* report,
                 const std::filesystem::path& dir) {
  params.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string());
  nlohmann::json m;
  m["format"] = "chunkscope-rnn";
  m["version"] = 1;
  m["alphabet"] = params.alphabet;
  m["hidden"] = params.hidden;
  m["omega"] = params.omega();
  m["activation"] = to_string(params.activation);
  m["dtype"] = "float32";
  m["endianness"] = "little";
  m["arrays"] = {
      {{"name", "w_ch"}, {"file", "w_ch.f32"}, {"shape", {params.hidden, params.input_width()}}},
      {{"name", "b_h"}, {"file", "b_h.f32"}, {"shape", {params.hidden}}},
      {{"name", "w_co"}, {"file", "w_co.f32"}, {"shape", {params.omega(), params.input_width()}}},
      {{"name", "b_o"}, {"file", "b_o.f32"}, {"shape", {params.omega()}}},
  };
  if (report) {
    const auto& c = report->config;
    m["seed"] = report->seed;
    m["init_bound"] = report->init_bound;
    m["hyperparameters"] = {{"learning_rate", c.learning_rate},
                            {"beta1", c.beta1},
                            {"beta2", c.beta2},
                            {"epsilon", c.epsilon},
                            {"subsequence_length", c.subsequence_length},
                            {"steps", c.steps}};
    if (!report->losses.empty()) m["final_loss"] = report->losses.back();
  }
  write_f32(dir / "w_ch.f32", params.w_ch);
  write_f32(dir / "b_h.f32", params.b_h);
  write_f32(dir / "w_co.f32", params.w_co);
  write_f32(dir / "b_o.f32", params.b_o);
  std::ofstream out(dir / "params.json");
  out << m.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + (dir / "params.json").string());
}

RnnParams load_params(const std::filesystem::path& dir) {
  const auto mpath = std::filesystem::is_directory(dir) ? dir / "params.json" : dir;
  std::ifstream in(mpath);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + mpath.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Corruption, mpath.string() + ": " + e.what());
  }
  RnnParams p = RnnParams::zeros(m.at("alphabet").get<std::string>(),
                                 m.at("hidden").get<std::size_t>());
  p.activation = activation_from_string(m.value("activation", "linear"));
  const auto base = mpath.parent_path();
  p.w_ch = read_f32(base / "w_ch.f32", p.w_ch.size());
  p.b_h = read_f32(base / "b_h.f32", p.b_h.size());
  p.w_co = read_f32(base / "w_co.f32", p.w_co.size());
  p.b_o = read_f32(base / "b_o.f32", p.b_o.size());
  p.validate();
  return p;
}

}  // namespace chunkscope::rnn
