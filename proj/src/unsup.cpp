#include "chunkscope/unsup.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "chunkscope/error.hpp"
#include "chunkscope/rng.hpp"
#include "chunkscope/f32io.hpp"
#include "json.hpp"

namespace chunkscope::unsup {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize_rows(Matrix& m) {
  for (std::size_t k = 0; k < m.rows; ++k) {
    auto r = m.row(k);
    const double n = norm(r);
    if (!(n > 0.0) || !std::isfinite(n))
      throw Error(ErrorKind::Numerical, "dictionary row " + std::to_string(k) + " has norm " +
                                            std::to_string(n));
    for (double& v : r) v /= n;
  }
}

void check_rows(const Matrix& x, const char* what) {
  for (std::size_t m = 0; m < x.rows; ++m)
    if (!(norm(x.row(m)) > 0.0))
      throw Error(ErrorKind::ContractViolation,
                  std::string(what) + " row " + std::to_string(m) + " has zero norm");
}

// Best row per sample; sample norms are precomputed by the caller.
ChunkAssignment best_match(std::span<const double> xrow, double xnorm, const Matrix& dict,
                           const std::vector<double>& dnorm) {
  ChunkAssignment a{0, -std::numeric_limits<double>::infinity()};
  for (std::size_t k = 0; k < dict.rows; ++k) {
    const double s = dot(dict.row(k), xrow) / (dnorm[k] * xnorm);
    if (s > a.similarity) a = {k, s};
  }
  return a;
}

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> n(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) n[i] = norm(m.row(i));
  return n;
}

Matrix subset(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), x.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = x.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix init_dictionary(const Matrix& x, const FitConfig& c, Rng& rng) {
  Matrix d(c.chunks, x.cols);
  if (c.init == DictionaryInit::RandomUnit) {
    for (double& v : d.data) v = rng.normal();
    normalize_rows(d);
    return d;
  }
  const auto xn = row_norms(x);
  std::vector<double> best(x.rows, -1.0);  // best cosine to any chosen row
  std::size_t pick = rng.below(x.rows);
  for (std::size_t k = 0; k < c.chunks; ++k) {
    auto src = x.row(pick);
    std::copy(src.begin(), src.end(), d.row(k).begin());
    const double pn = xn[pick];
    double total = 0.0;
    std::vector<double> weight(x.rows);
    for (std::size_t m = 0; m < x.rows; ++m) {
      best[m] = std::max(best[m], dot(x.row(m), src) / (xn[m] * pn));
      const double dist = std::max(0.0, 1.0 - best[m]);
      weight[m] = dist * dist;
      total += weight[m];
    }
    if (total <= 0.0) {
      pick = rng.below(x.rows);
      continue;
    }
    double target = rng.uniform() * total;
    pick = x.rows - 1;
    for (std::size_t m = 0; m < x.rows; ++m) {
      target -= weight[m];
      if (target < 0.0 && weight[m] > 0.0) {
        pick = m;
        break;
      }
    }
  }
  normalize_rows(d);
  return d;
}

}  // namespace

Matrix layer_matrix(const HiddenTrace& trace, std::size_t layer) {
  if (layer >= trace.layers) throw Error(ErrorKind::ContractViolation, "layer out of range");
  Matrix x(trace.positions, trace.dim);
  auto src = trace.layer_span(layer);
  std::copy(src.begin(), src.end(), x.data.begin());
  return x;
}

double sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ContractViolation, "dimension mismatch");
  const double na = norm(a), nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0))
    throw Error(ErrorKind::ContractViolation, "cosine similarity of a zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double max_cosine_loss(const Matrix& x, const Matrix& dict) {
  if (x.cols != dict.cols) throw Error(ErrorKind::ContractViolation, "dimension mismatch");
  const auto dn = row_norms(dict);
  double total = 0.0;
  for (std::size_t m = 0; m < x.rows; ++m)
    total += best_match(x.row(m), norm(x.row(m)), dict, dn).similarity;
  return -total / static_cast<double>(x.rows);
}

Matrix max_cosine_gradient(const Matrix& x, const Matrix& dict) {
  if (x.cols != dict.cols) throw Error(ErrorKind::ContractViolation, "dimension mismatch");
  const auto dn = row_norms(dict);
  Matrix g(dict.rows, dict.cols);
  const double scale = -1.0 / static_cast<double>(x.rows);
  for (std::size_t m = 0; m < x.rows; ++m) {
    auto xr = x.row(m);
    const double xnorm = norm(xr);
    const auto a = best_match(xr, xnorm, dict, dn);
    auto dr = dict.row(a.chunk);
    const double dnk = dn[a.chunk];
    const double proj = dot(dr, xr) / (dnk * dnk * dnk * xnorm);
    auto gr = g.row(a.chunk);
    for (std::size_t i = 0; i < x.cols; ++i)
      gr[i] += scale * (xr[i] / (dnk * xnorm) - proj * dr[i]);
  }
  return g;
}

ChunkDictionary fit_dictionary(const Matrix& x, const FitConfig& config) {
  if (x.rows == 0 || x.cols == 0)
    throw Error(ErrorKind::InvalidSpec, "dictionary fit needs at least one sample");
  if (config.chunks == 0) throw Error(ErrorKind::InvalidSpec, "dictionary size K must be positive");
  check_rows(x, "embedding");
  Rng rng(config.seed);
  ChunkDictionary out;
  out.layer = config.layer;
  out.seed = config.seed;
  out.steps = config.steps;
  out.entries = init_dictionary(x, config, rng);

  const bool full = config.batch_size == 0 || config.batch_size >= x.rows;
  std::vector<std::size_t> order(x.rows);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = x.rows;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t step = 0; step < config.steps; ++step) {
    Matrix batch;
    if (!full) {
      std::vector<std::size_t> rows;
      while (rows.size() < config.batch_size) {
        if (cursor == x.rows) {
          for (std::size_t i = x.rows; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
          cursor = 0;
        }
        rows.push_back(order[cursor++]);
      }
      batch = subset(x, rows);
    }
    const Matrix& data = full ? x : batch;
    const double loss = max_cosine_loss(data, out.entries);
    if (!std::isfinite(loss))
      throw Error(ErrorKind::Numerical, "dictionary loss diverged at step " +
                                            std::to_string(step) + " (learning rate " +
                                            std::to_string(config.learning_rate) + ")");
    out.losses.push_back(loss);
    best = std::min(best, loss);
    out.best_losses.push_back(best);
    const Matrix g = max_cosine_gradient(data, out.entries);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      out.entries.data[i] -= config.learning_rate * g.data[i];
    normalize_rows(out.entries);
  }

  std::vector<char> used(out.entries.rows, 0);
  for (const auto& a : assign(x, out.entries)) used[a.chunk] = 1;
  for (std::size_t k = 0; k < used.size(); ++k)
    if (!used[k]) out.dead_chunks.push_back(k);
  return out;
}

std::vector<ChunkAssignment> assign(const Matrix& x, const Matrix& dict) {
  if (x.cols != dict.cols) throw Error(ErrorKind::ContractViolation, "dimension mismatch");
  if (dict.rows == 0) throw Error(ErrorKind::ContractViolation, "empty dictionary");
  check_rows(x, "embedding");
  check_rows(dict, "dictionary");
  const auto dn = row_norms(dict);
  std::vector<ChunkAssignment> out(x.rows);
  for (std::size_t m = 0; m < x.rows; ++m) {
    out[m] = best_match(x.row(m), norm(x.row(m)), dict, dn);
    out[m].similarity = std::clamp(out[m].similarity, -1.0, 1.0);
  }
  return out;
}

double indicator_correlation(std::size_t n, std::size_t n_x, std::size_t n_y, std::size_t n_xy) {
  if (n == 0 || n_x == 0 || n_x == n || n_y == 0 || n_y == n) return 0.0;
  const double dn = static_cast<double>(n), dx = static_cast<double>(n_x),
               dy = static_cast<double>(n_y), dxy = static_cast<double>(n_xy);
  const double num = dn * dxy - dx * dy;
  const double den = std::sqrt(dx * (dn - dx) * dy * (dn - dy));
  return std::clamp(num / den, -1.0, 1.0);
}

std::vector<PosCorrelation> pos_correlate(
    const std::vector<std::vector<ChunkAssignment>>& per_layer,
    const std::vector<std::string>& pos_tags, std::size_t chunk_count,
    const std::vector<std::string>& tag_universe) {
  std::set<std::string> tags(tag_universe.begin(), tag_universe.end());
  tags.insert(pos_tags.begin(), pos_tags.end());
  const std::size_t n = pos_tags.size();
  std::map<std::string, std::size_t> tag_count;
  for (const auto& t : pos_tags) ++tag_count[t];

  std::vector<PosCorrelation> out;
  for (std::size_t layer = 0; layer < per_layer.size(); ++layer) {
    const auto& assigned = per_layer[layer];
    if (assigned.size() != n)
      throw Error(ErrorKind::ContractViolation,
                  "layer " + std::to_string(layer) + " has " + std::to_string(assigned.size()) +
                      " assignments for " + std::to_string(n) + " tags");
    std::vector<std::size_t> chunk_n(chunk_count, 0);
    std::map<std::string, std::vector<std::size_t>> joint;
    for (std::size_t t = 0; t < n; ++t) {
      const auto k = assigned[t].chunk;
      if (k >= chunk_count) throw Error(ErrorKind::ContractViolation, "chunk id out of range");
      ++chunk_n[k];
      auto& row = joint[pos_tags[t]];
      if (row.empty()) row.assign(chunk_count, 0);
      ++row[k];
    }
    for (const auto& tag : tags) {
      PosCorrelation pc{layer, tag, 0.0, 0};
      const auto ny = tag_count.count(tag) ? tag_count[tag] : 0;
      const auto jt = joint.find(tag);
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < chunk_count; ++k) {
        const std::size_t nxy = jt == joint.end() ? 0 : jt->second[k];
        const double r = indicator_correlation(n, chunk_n[k], ny, nxy);
        if (r > best) {
          best = r;
          pc.chunk = k;
        }
      }
      pc.r = chunk_count ? best : 0.0;
      out.push_back(pc);
    }
  }
  return out;
}

const std::vector<std::string>& penn_treebank_tags() {
  static const std::vector<std::string> tags = {
      "CC",  "CD",  "DT",  "EX",  "FW",  "IN",  "JJ",  "JJR", "JJS", "LS",  "MD",   "NN",
      "NNS", "NNP", "NNPS", "PDT", "POS", "PRP", "PRP$", "RB",  "RBR", "RBS", "RP",  "SYM",
      "TO",  "UH",  "VB",  "VBD", "VBG", "VBN", "VBP", "VBZ", "WDT", "WP",  "WP$", "WRB",
      "#",   "$",   "''",  "``",  "(",   ")",   ",",   ".",   ":"};
  return tags;
}

void save_dictionary(const ChunkDictionary& dict, const std::filesystem::path& stem) {
  auto mpath = stem;
  mpath += ".json";
  auto fpath = stem;
  fpath += ".f32";
  nlohmann::json m;
  m["format"] = "chunkscope-dictionary";
  m["version"] = 1;
  m["K"] = dict.entries.rows;
  m["d"] = dict.entries.cols;
  m["layer"] = dict.layer;
  m["seed"] = dict.seed;
  m["steps"] = dict.steps;
  m["dead_chunks"] = dict.dead_chunks;
  if (!dict.losses.empty()) m["final_loss"] = dict.losses.back();
  m["entries_file"] = fpath.filename().string();
  write_f32(fpath, dict.entries.data);
  std::ofstream out(mpath);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + mpath.string() + " for writing");
  out << m.dump(2) << '\n';
}

ChunkDictionary load_dictionary(const std::filesystem::path& stem) {
  auto mpath = stem;
  if (mpath.extension() != ".json") mpath += ".json";
  std::ifstream in(mpath);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + mpath.string());
  ChunkDictionary d;
  try {
    const auto m = nlohmann::json::parse(in);
    d.entries = Matrix(m.at("K").get<std::size_t>(), m.at("d").get<std::size_t>());
    d.layer = m.value("layer", std::size_t{0});
    d.seed = m.value("seed", std::uint64_t{0});
    d.steps = m.value("steps", std::size_t{0});
    d.entries.data = read_f32(mpath.parent_path() / m.at("entries_file").get<std::string>(),
                                      d.entries.rows * d.entries.cols);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Corruption, mpath.string() + ": " + e.what());
  }
  return d;
}

void write_assignments_csv(const std::vector<ChunkAssignment>& assignments,
                           const std::vector<std::string>& tokens,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << "position,token,chunk,similarity\n";
  out.precision(8);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    std::string tok = i < tokens.size() ? tokens[i] : "";
    std::string quoted = "\"";
    for (char c : tok) quoted += (c == '"') ? std::string("\"\"") : std::string(1, c);
    quoted += '"';
    out << i << ',' << quoted << ',' << assignments[i].chunk << ',' << assignments[i].similarity
        << '\n';
  }
}

void write_pos_csv(const std::vector<PosCorrelation>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << "layer,tag,max_r,chunk\n";
  out.precision(8);
  for (const auto& r : rows) {
    std::string tag = r.tag;
    const bool quote = tag.find_first_of(",\"") != std::string::npos;
    if (quote) {
      std::string q = "\"";
      for (char c : tag) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
      tag = q + '"';
    }
    out << r.layer << ',' << tag << ',' << r.r << ',' << r.chunk << '\n';
  }
}

}  // namespace chunkscope::unsup
