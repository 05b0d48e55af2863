#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "chunkscope/rng.hpp"
#include "chunkscope/trace.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace chunkscope;
namespace fs = std::filesystem;

namespace {

HiddenTrace random_trace(std::size_t layers, std::size_t positions, std::size_t dim,
                         std::uint64_t seed) {
  Rng rng(seed);
  auto t = HiddenTrace::zeros(layers, positions, dim);
  for (double& v : t.values) v = rng.normal() * 3.0;
  for (std::size_t p = 0; p < positions; ++p) t.tokens[p] = std::string(1, char('A' + p % 5));
  return t;
}

float as_f32(double v) { return static_cast<float>(v); }

void truncate_file(const fs::path& p, std::uintmax_t size) { fs::resize_file(p, size); }

}  // namespace

TEST_CASE("payload files hold exactly positions x dim binary32 values") {
  testing::TempDir dir("trace");
  const auto t = random_trace(2, 3, 4, 1);
  trace::write_trace(t, dir.path());
  CHECK(fs::file_size(dir / "layer_000.f32") == 48);
  CHECK(fs::file_size(dir / "layer_001.f32") == 48);
  CHECK(fs::exists(dir / "manifest.json"));
}

TEST_CASE("payload bytes are little-endian IEEE binary32 in row-major order") {
  testing::TempDir dir("trace");
  auto t = HiddenTrace::zeros(1, 2, 2);
  t.values = {1.0, -2.5, 0.15625, 65504.0};
  trace::write_trace(t, dir.path());
  std::ifstream in(dir / "layer_000.f32", std::ios::binary);
  unsigned char bytes[16];
  in.read(reinterpret_cast<char*>(bytes), 16);
  REQUIRE(in.gcount() == 16);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::uint32_t u = bytes[4 * i] | (bytes[4 * i + 1] << 8) | (bytes[4 * i + 2] << 16) |
                            (std::uint32_t(bytes[4 * i + 3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    CHECK(f == as_f32(t.values[i]));
  }
  // 1.0f is 0x3f800000.
  CHECK(bytes[0] == 0x00);
  CHECK(bytes[3] == 0x3f);
}

TEST_CASE("write/read round-trip is lossless at float32") {
  testing::TempDir dir("trace");
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto t = random_trace(3, 17, 5, seed);
    t.pos_tags.assign(17, "NN");
    t.producer["name"] = "unit test";
    t.convention = "prefix-run";
    const auto sub = dir / ("t" + std::to_string(seed));
    trace::write_trace(t, sub);
    trace::ReadReport report;
    const auto back = trace::read_trace(sub, {}, &report);
    CHECK(back.layers == 3);
    CHECK(back.positions == 17);
    CHECK(back.dim == 5);
    CHECK(back.tokens == t.tokens);
    CHECK(back.pos_tags == t.pos_tags);
    CHECK(back.convention == "prefix-run");
    CHECK(back.producer.at("name") == "unit test");
    CHECK(report.total_values == t.values.size());
    CHECK(report.nonfinite == 0);
    for (std::size_t i = 0; i < t.values.size(); ++i) CHECK(back.values[i] == as_f32(t.values[i]));
    // Reading through the manifest path works too, and a second round-trip is exact.
    const auto again = trace::read_trace(sub / "manifest.json");
    CHECK(again.values == back.values);
  }
}

TEST_CASE("size mismatch names declared and actual bytes") {
  testing::TempDir dir("trace");
  trace::write_trace(random_trace(1, 10, 4, 2), dir.path());
  truncate_file(dir / "layer_000.f32", 100);
  try {
    trace::read_trace(dir.path());
    FAIL("truncated payload accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Corruption);
    const std::string msg = e.what();
    CHECK(msg.find("160") != std::string::npos);
    CHECK(msg.find("100") != std::string::npos);
  }
}

TEST_CASE("fuzzed truncations are always rejected") {
  testing::TempDir dir("trace");
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t layers = 1 + rng.below(3), positions = 1 + rng.below(20),
                      dim = 1 + rng.below(8);
    const auto sub = dir / ("f" + std::to_string(trial));
    trace::write_trace(random_trace(layers, positions, dim, trial), sub);
    const auto victim = sub / trace::payload_name(rng.below(layers));
    const auto full = fs::file_size(victim);
    truncate_file(victim, rng.below(full));  // strictly shorter, possibly empty
    CHECK_ERROR_KIND(trace::read_trace(sub), ErrorKind::Corruption);
  }
}

TEST_CASE("manifest problems are rejected") {
  testing::TempDir dir("trace");
  trace::write_trace(random_trace(2, 4, 3, 3), dir.path());
  const auto mpath = dir / "manifest.json";
  nlohmann::json m;
  {
    std::ifstream in(mpath);
    m = nlohmann::json::parse(in);
  }
  auto rewrite = [&](const nlohmann::json& j) {
    std::ofstream out(mpath);
    out << j.dump();
  };

  auto wrong_dtype = m;
  wrong_dtype["dtype"] = "float64";
  rewrite(wrong_dtype);
  CHECK_ERROR_KIND(trace::read_trace(dir.path()), ErrorKind::Corruption);

  auto big_endian = m;
  big_endian["endianness"] = "big";
  rewrite(big_endian);
  CHECK_ERROR_KIND(trace::read_trace(dir.path()), ErrorKind::Corruption);

  auto few_tokens = m;
  few_tokens["tokens"] = {"A", "B"};
  rewrite(few_tokens);
  CHECK_ERROR_KIND(trace::read_trace(dir.path()), ErrorKind::Corruption);

  auto wider = m;
  wider["dim"] = 4;  // payload now too short for the declared shape
  rewrite(wider);
  CHECK_ERROR_KIND(trace::read_trace(dir.path()), ErrorKind::Corruption);

  {
    std::ofstream out(mpath);
    out << "{ not json";
  }
  CHECK_ERROR_KIND(trace::read_trace(dir.path()), ErrorKind::Corruption);

  rewrite(m);
  fs::remove(dir / "layer_001.f32");
  CHECK_ERROR_KIND(trace::read_trace(dir.path()), ErrorKind::Corruption);

  CHECK_ERROR_KIND(trace::read_trace(dir / "nowhere"), ErrorKind::Io);
}

TEST_CASE("non-finite values are counted and rejected beyond the threshold") {
  testing::TempDir dir("trace");
  auto t = random_trace(1, 10, 2, 4);
  t.values[3] = std::numeric_limits<double>::quiet_NaN();
  t.values[7] = std::numeric_limits<double>::infinity();
  // The writer refuses nothing here: it is a raw container.
  trace::write_trace(t, dir.path());
  CHECK_ERROR_KIND(trace::read_trace(dir.path()), ErrorKind::Numerical);
  trace::ReadReport report;
  const auto back = trace::read_trace(dir.path(), {0.2}, &report);
  CHECK(report.nonfinite == 2);
  CHECK(report.total_values == 20);
  CHECK(std::isnan(back.values[3]));
}

TEST_CASE("numpy-written fixture parses and aligns tokens 1:1") {
  const auto dir = testing::fixture_dir();
  nlohmann::json expected;
  {
    std::ifstream in(dir / "expected.json");
    REQUIRE(in);
    expected = nlohmann::json::parse(in);
  }
  const auto t = trace::read_trace(dir / "tiny_lm");
  CHECK(t.layers == expected["layers"].get<std::size_t>());
  CHECK(t.positions == expected["positions"].get<std::size_t>());
  CHECK(t.dim == expected["dim"].get<std::size_t>());
  CHECK(t.tokens.size() == t.positions);
  CHECK(t.pos_tags.size() == t.positions);
  for (const auto& s : expected["samples"]) {
    const double v = t.at(s["layer"].get<std::size_t>(), s["position"].get<std::size_t>())
                         [s["dim"].get<std::size_t>()];
    CHECK(v == s["value"].get<double>());
  }
  CHECK(trace::detokenize(t.tokens) == expected["text"].get<std::string>());
  for (const auto& [word, positions] : expected["occurrences"].items()) {
    const auto idx = trace::find_occurrences(t.tokens, word);
    CHECK_MESSAGE(idx.positions == positions.get<std::vector<std::size_t>>(), word);
  }
}

TEST_CASE("multi-token words occur at their final token") {
  const std::vector<std::string> toks = {"I", "Ġlike", "Ġchee", "se"};
  CHECK(trace::find_occurrences(toks, "cheese").positions == std::vector<std::size_t>{3});
  CHECK(trace::find_occurrences({"chee", "se"}, "cheese").positions ==
        std::vector<std::size_t>{1});
  CHECK(trace::find_occurrences(toks, "cake").positions.empty());
  CHECK(trace::find_occurrences(toks, "chee").positions.empty());  // not a whole word
}

TEST_CASE("hand-tokenized text with three known matches") {
  // "Cake, cakes and cake. A cheesecake? cake!"
  const std::vector<std::string> toks = {"C", "ake", ",", "Ġcakes", "Ġand", "Ġca", "ke",
                                         ".", "ĠA", "Ġcheese", "cake", "?", "▁cake", "!"};
  const auto idx = trace::find_occurrences(toks, "cake");
  CHECK(idx.positions == std::vector<std::size_t>{1, 6, 12});
  CHECK(idx.label == "cake");

  trace::MatchOptions exact;
  exact.case_insensitive = false;
  CHECK(trace::find_occurrences(toks, "cake", exact).positions == std::vector<std::size_t>{6, 12});
}

TEST_CASE("occurrence positions are strictly increasing and in bounds") {
  Rng rng(5);
  const std::vector<std::string> pieces = {"a", "b", "ab", "Ġa", "Ġab", "ba", ".", "Ġb"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> toks(1 + rng.below(30));
    for (auto& tok : toks) tok = pieces[rng.below(pieces.size())];
    for (const char* w : {"a", "ab", "b", "aba"}) {
      const auto idx = trace::find_occurrences(toks, w);
      for (std::size_t i = 0; i < idx.positions.size(); ++i) {
        CHECK(idx.positions[i] < toks.size());
        if (i) CHECK(idx.positions[i - 1] < idx.positions[i]);
      }
    }
  }
}

TEST_CASE("signal index files") {
  testing::TempDir dir("trace");
  trace::SignalIndex idx{"cheese", {3, 8, 21}};
  trace::write_signal_index(idx, dir / "cheese.idx");
  {
    std::ifstream in(dir / "cheese.idx");
    std::string first;
    std::getline(in, first);
    CHECK(first.rfind("#", 0) == 0);
  }
  const auto back = trace::read_signal_index(dir / "cheese.idx");
  CHECK(back.label == "cheese");
  CHECK(back.positions == idx.positions);

  {
    std::ofstream out(dir / "bad.idx");
    out << "# signal: x\n5\n3\n";
  }
  CHECK_ERROR_KIND(trace::read_signal_index(dir / "bad.idx"), ErrorKind::Corruption);
}

TEST_CASE("slices keep tokens and values aligned") {
  auto t = random_trace(2, 10, 3, 6);
  t.pos_tags.assign(10, "DT");
  const auto s = t.slice(4, 9);
  CHECK(s.positions == 5);
  CHECK(s.tokens.front() == t.tokens[4]);
  CHECK(s.pos_tags.size() == 5);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t p = 0; p < 5; ++p)
      for (std::size_t i = 0; i < 3; ++i) CHECK(s.at(l, p)[i] == t.at(l, p + 4)[i]);
  CHECK_ERROR_KIND(t.slice(6, 11), ErrorKind::ContractViolation);
}
