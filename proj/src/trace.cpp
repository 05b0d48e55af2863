#include "chunkscope/trace.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "chunkscope/error.hpp"

namespace chunkscope {

using nlohmann::json;

HiddenTrace HiddenTrace::zeros(std::size_t layers, std::size_t positions, std::size_t dim) {
  HiddenTrace t;
  t.layers = layers;
  t.positions = positions;
  t.dim = dim;
  t.values.assign(layers * positions * dim, 0.0);
  t.tokens.assign(positions, std::string());
  return t;
}

HiddenTrace HiddenTrace::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > positions)
    throw Error(ErrorKind::ContractViolation, "slice [" + std::to_string(begin) + ", " +
                                                  std::to_string(end) + ") out of range");
  HiddenTrace out = zeros(layers, end - begin, dim);
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t p = begin; p < end; ++p) {
      auto src = at(l, p);
      std::copy(src.begin(), src.end(), out.at(l, p - begin).begin());
    }
  if (!tokens.empty()) out.tokens.assign(tokens.begin() + begin, tokens.begin() + end);
  if (!pos_tags.empty()) out.pos_tags.assign(pos_tags.begin() + begin, pos_tags.begin() + end);
  out.producer = producer;
  out.convention = convention;
  return out;
}

void HiddenTrace::validate() const {
  if (values.size() != layers * positions * dim)
    throw Error(ErrorKind::ContractViolation,
                "trace holds " + std::to_string(values.size()) + " values, shape implies " +
                    std::to_string(layers * positions * dim));
  if (tokens.size() != positions)
    throw Error(ErrorKind::ContractViolation, "trace has " + std::to_string(tokens.size()) +
                                                  " tokens for " + std::to_string(positions) +
                                                  " positions");
  if (!pos_tags.empty() && pos_tags.size() != positions)
    throw Error(ErrorKind::ContractViolation, "pos tag count does not match positions");
}

namespace trace {

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

std::filesystem::path manifest_path(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return path / kManifestName;
  return path;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

std::string payload_name(std::size_t layer) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "layer_%03zu.f32", layer);
  return buf;
}

void write_trace(const HiddenTrace& trace, const std::filesystem::path& dir) {
  trace.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = "chunkscope-trace";
  manifest["version"] = 1;
  manifest["layer_count"] = trace.layers;
  manifest["position_count"] = trace.positions;
  manifest["dim"] = trace.dim;
  manifest["dtype"] = "float32";
  manifest["endianness"] = "little";
  manifest["layout"] = "row-major positions x dim";
  manifest["alignment"] = kAlignmentRule;
  manifest["convention"] = trace.convention;
  manifest["tokens"] = trace.tokens;
  if (!trace.pos_tags.empty()) manifest["pos_tags"] = trace.pos_tags;
  manifest["producer"] = trace.producer;
  json payloads = json::array();

  const std::size_t per_layer = trace.positions * trace.dim;
  std::vector<std::uint32_t> buffer(per_layer);
  for (std::size_t l = 0; l < trace.layers; ++l) {
    auto values = trace.layer_span(l);
    for (std::size_t i = 0; i < per_layer; ++i)
      buffer[i] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
    const auto name = payload_name(l);
    const auto path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(std::uint32_t)));
    if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
    payloads.push_back({{"file", name}, {"bytes", per_layer * 4}});
  }
  manifest["payloads"] = payloads;

  const auto mpath = dir / kManifestName;
  std::ofstream out(mpath);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + mpath.string() + " for writing");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + mpath.string());
}

HiddenTrace read_trace(const std::filesystem::path& path, const ReadOptions& options,
                       ReadReport* report) {
  const auto mpath = manifest_path(path);
  std::ifstream in(mpath);
  if (!in) throw Error(ErrorKind::Io, "cannot open trace manifest " + mpath.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Corruption, mpath.string() + ": unparseable manifest: " + e.what());
  }

  HiddenTrace t;
  try {
    if (manifest.value("dtype", "") != "float32")
      throw Error(ErrorKind::Corruption, mpath.string() + ": dtype must be float32");
    if (manifest.value("endianness", "") != "little")
      throw Error(ErrorKind::Corruption, mpath.string() + ": endianness must be little");
    t.layers = manifest.at("layer_count").get<std::size_t>();
    t.positions = manifest.at("position_count").get<std::size_t>();
    t.dim = manifest.at("dim").get<std::size_t>();
    t.tokens = manifest.at("tokens").get<std::vector<std::string>>();
    if (manifest.contains("pos_tags"))
      t.pos_tags = manifest["pos_tags"].get<std::vector<std::string>>();
    if (manifest.contains("producer"))
      for (auto& [k, v] : manifest["producer"].items())
        t.producer[k] = v.is_string() ? v.get<std::string>() : v.dump();
    t.convention = manifest.value("convention", "single-pass");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Corruption, mpath.string() + ": " + e.what());
  }
  if (t.tokens.size() != t.positions)
    throw Error(ErrorKind::Corruption, mpath.string() + ": declares " +
                                           std::to_string(t.positions) + " positions but " +
                                           std::to_string(t.tokens.size()) + " tokens");
  if (!t.pos_tags.empty() && t.pos_tags.size() != t.positions)
    throw Error(ErrorKind::Corruption, mpath.string() + ": pos tag count mismatch");

  const std::size_t per_layer = t.positions * t.dim;
  const std::size_t expected_bytes = per_layer * 4;
  t.values.resize(t.layers * per_layer);
  std::vector<std::uint32_t> buffer(per_layer);
  std::size_t nonfinite = 0;
  const auto dir = mpath.parent_path();
  for (std::size_t l = 0; l < t.layers; ++l) {
    std::string name = payload_name(l);
    if (manifest.contains("payloads") && l < manifest["payloads"].size())
      name = manifest["payloads"][l].value("file", name);
    const auto ppath = dir / name;
    std::error_code ec;
    const auto actual = std::filesystem::file_size(ppath, ec);
    if (ec) throw Error(ErrorKind::Corruption, ppath.string() + ": missing payload");
    if (actual != expected_bytes)
      throw Error(ErrorKind::Corruption, ppath.string() + ": declared " +
                                             std::to_string(expected_bytes) + " bytes, actual " +
                                             std::to_string(actual));
    std::ifstream pin(ppath, std::ios::binary);
    pin.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(expected_bytes));
    if (!pin) throw Error(ErrorKind::Io, "failed reading " + ppath.string());
    double* dst = t.values.data() + l * per_layer;
    for (std::size_t i = 0; i < per_layer; ++i) {
      const float f = std::bit_cast<float>(to_little(buffer[i]));
      if (!std::isfinite(f)) ++nonfinite;
      dst[i] = f;
    }
  }
  const std::size_t total = t.values.size();
  if (report) *report = ReadReport{nonfinite, total};
  if (nonfinite > 0 &&
      static_cast<double>(nonfinite) > options.max_nonfinite_fraction * static_cast<double>(total))
    throw Error(ErrorKind::Numerical, mpath.string() + ": " + std::to_string(nonfinite) + " of " +
                                          std::to_string(total) + " values are non-finite");
  return t;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string text;
  for (const auto& tok : tokens) {
    for (std::size_t i = 0; i < tok.size();) {
      if (tok.compare(i, 2, "\xC4\xA0") == 0) {  // Ġ
        text.push_back(' ');
        i += 2;
      } else if (tok.compare(i, 3, "\xE2\x96\x81") == 0) {  // ▁
        text.push_back(' ');
        i += 3;
      } else {
        text.push_back(tok[i++]);
      }
    }
  }
  return text;
}

SignalIndex find_occurrences(const std::vector<std::string>& tokens, std::string_view word,
                             const MatchOptions& options) {
  SignalIndex index;
  index.label = std::string(word);
  if (word.empty()) return index;

  // Character -> owning token position, built alongside the normalized text.
  std::string text;
  std::vector<std::size_t> owner;
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    const std::string piece = detokenize({tokens[p]});
    text += piece;
    owner.insert(owner.end(), piece.size(), p);
  }
  auto fold = [&](unsigned char c) {
    return options.case_insensitive ? static_cast<char>(std::tolower(c)) : static_cast<char>(c);
  };
  for (std::size_t start = 0; start + word.size() <= text.size(); ++start) {
    if (start > 0 && is_word_char(static_cast<unsigned char>(text[start - 1]))) continue;
    const std::size_t end = start + word.size();
    if (end < text.size() && is_word_char(static_cast<unsigned char>(text[end]))) continue;
    bool match = true;
    for (std::size_t i = 0; i < word.size() && match; ++i)
      match = fold(static_cast<unsigned char>(text[start + i])) ==
              fold(static_cast<unsigned char>(word[i]));
    if (!match) continue;
    const std::size_t pos = owner[end - 1];
    if (index.positions.empty() || index.positions.back() < pos) index.positions.push_back(pos);
  }
  return index;
}

void write_signal_index(const SignalIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << "# signal: " << index.label << '\n';
  out << "# count: " << index.positions.size() << '\n';
  for (auto p : index.positions) out << p << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

SignalIndex read_signal_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  SignalIndex index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      constexpr std::string_view key = "# signal: ";
      if (line.rfind(key, 0) == 0) index.label = line.substr(key.size());
      continue;
    }
    std::size_t consumed = 0;
    unsigned long long value = 0;
    try {
      value = std::stoull(line, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed == 0)
      throw Error(ErrorKind::Corruption,
                  path.string() + ":" + std::to_string(lineno) + ": expected a position");
    if (!index.positions.empty() && value <= index.positions.back())
      throw Error(ErrorKind::Corruption, path.string() + ":" + std::to_string(lineno) +
                                             ": positions must be strictly increasing");
    index.positions.push_back(static_cast<std::size_t>(value));
  }
  return index;
}

}  // namespace trace
}  // namespace chunkscope
