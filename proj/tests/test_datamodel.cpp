#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "cope/errors.hpp"
#include "cope/manifest.hpp"
#include "cope/rng.hpp"
#include "cope/synthetic.hpp"
#include "json.hpp"

using namespace cope;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "cope_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<float> random_frame(std::uint32_t h, std::uint32_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> f(std::size_t{h} * w * 3);
  for (float& v : f) v = float(rng.uniform());
  return f;
}

}  // namespace

TEST_CASE("domain strings round-trip and reject unknown tags") {
  for (Domain d : kAllDomains) CHECK(parse_domain(to_string(d)) == d);
  try {
    parse_domain("X");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("P") != std::string::npos);
    CHECK(msg.find("L") != std::string::npos);
  }
}

TEST_CASE("patchify shapes and ordering") {
  const auto f = random_frame(32, 32, 1);
  const Matrix p = patchify(f, 32, 32, 16);
  CHECK(p.rows() == 4);
  CHECK(p.cols() == 768);
  // patch 1 is the top-right block; its first entry is pixel (0, 16), channel 0
  CHECK(p(1, 0) == double(f[(0 * 32 + 16) * 3]));
  // patch 2 starts at row 16, column 0
  CHECK(p(2, 0) == double(f[(16 * 32 + 0) * 3]));
}

TEST_CASE("patchify of a constant frame gives identical constant patches") {
  std::vector<float> f(32 * 32 * 3, 0.25f);
  const Matrix p = patchify(f, 32, 32, 8);
  CHECK(p.rows() == 16);
  CHECK((p.array() == 0.25).all());
}

TEST_CASE("unpatchify inverts patchify exactly") {
  const auto f = random_frame(32, 32, 2);
  CHECK(unpatchify(patchify(f, 32, 32, 8), 32, 32, 8) == f);
  const auto g = random_frame(16, 24, 3);
  CHECK(unpatchify(patchify(g, 16, 24, 4), 16, 24, 4) == g);
}

TEST_CASE("patchify rejects non-divisible sizes") {
  const auto f = random_frame(30, 32, 4);
  CHECK_THROWS_AS(patchify(f, 30, 32, 8), ShapeError);
}

TEST_CASE("synthetic corpus counts and completeness") {
  SyntheticConfig cfg;
  cfg.n_products = 4;
  cfg.per_domain_counts = {2, 2, 2};
  cfg.frames_video = 4;
  cfg.frames_live = 4;
  const Corpus c = generate_synthetic_corpus(cfg);
  CHECK(c.samples().size() == 24);
  CHECK(c.complete_triples());
  CHECK(c.products().size() == 4);
  for (const Sample& s : c.samples()) {
    CHECK(s.frames.frames == (s.domain == Domain::P ? 1u : 4u));
    CHECK(s.text_tokens.has_value() == (s.domain == Domain::P));
    for (float v : s.frames.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("synthetic corpus is a pure function of its config") {
  SyntheticConfig cfg;
  cfg.n_products = 5;
  cfg.seed = 99;
  const Corpus a = generate_synthetic_corpus(cfg);
  const Corpus b = generate_synthetic_corpus(cfg);
  CHECK(a == b);
  save_manifest(a, scratch("det_a.jsonl"));
  save_manifest(b, scratch("det_b.jsonl"));
  CHECK(slurp(scratch("det_a.jsonl")) == slurp(scratch("det_b.jsonl")));
  cfg.seed = 100;
  CHECK_FALSE(generate_synthetic_corpus(cfg) == a);
}

TEST_CASE("noise-free samples are more similar within a product than across products") {
  SyntheticConfig cfg;
  cfg.n_products = 6;
  cfg.per_domain_counts = {2, 2, 2};
  cfg.frames_video = 2;
  cfg.frames_live = 2;
  cfg.noise_level = 0;
  cfg.distractor_fraction = 0;
  cfg.seed = 5;
  const Corpus c = generate_synthetic_corpus(cfg);
  const auto& s = c.samples();
  auto cosine = [](const Sample& a, const Sample& b) {
    // first frame of each sample, flattened
    const auto fa = a.frames.frame(0);
    const auto fb = b.frames.frame(0);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < fa.size(); ++i) {
      dot += double(fa[i]) * fb[i];
      na += double(fa[i]) * fa[i];
      nb += double(fb[i]) * fb[i];
    }
    return dot / std::sqrt(na * nb);
  };
  for (const auto& [pid, entry] : c.products()) {
    double within = 0, across = 0;
    int nw = 0, na = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i].product_id != pid) continue;
      for (std::size_t j = 0; j < s.size(); ++j) {
        if (i == j) continue;
        const double v = cosine(s[i], s[j]);
        if (s[j].product_id == pid) {
          within += v;
          ++nw;
        } else {
          across += v;
          ++na;
        }
      }
    }
    CHECK(within / nw > across / na);
  }
}

TEST_CASE("synthetic config validation names the field") {
  SyntheticConfig cfg;
  cfg.n_products = 0;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("n_products") != std::string::npos);
  }
  cfg = {};
  cfg.noise_level = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.per_domain_counts = {1, 0, 1};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("manifest round-trips and is ordered by sample_id") {
  SyntheticConfig cfg;
  cfg.n_products = 3;
  cfg.seed = 8;
  const Corpus c = generate_synthetic_corpus(cfg);
  const auto path = scratch("roundtrip.jsonl");
  save_manifest(c, path);
  CHECK(load_manifest(path) == c);
  std::ifstream in(path);
  std::string line, prev;
  while (std::getline(in, line)) {
    const std::string id = nlohmann::json::parse(line)["sample_id"];
    CHECK(prev < id);
    prev = id;
  }
}

TEST_CASE("manifest errors") {
  SyntheticConfig cfg;
  cfg.n_products = 2;
  const Corpus c = generate_synthetic_corpus(cfg);
  const std::string first = manifest_line(c.samples()[0]);
  const std::string second = manifest_line(c.samples()[1]);

  SUBCASE("duplicate sample_id") {
    const auto p = scratch("dup.jsonl");
    std::ofstream(p) << first << '\n' << first << '\n';
    CHECK_THROWS_AS(load_manifest(p), IntegrityError);
  }
  SUBCASE("unknown domain names the allowed values") {
    std::string bad = second;
    const auto at = bad.find("\"domain\":\"");
    REQUIRE(at != std::string::npos);
    bad[at + 10] = 'X';
    const auto p = scratch("domain.jsonl");
    std::ofstream(p) << first << '\n' << bad << '\n';
    try {
      load_manifest(p);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("line 2") != std::string::npos);
      CHECK(msg.find("\"V\"") != std::string::npos);
    }
  }
  SUBCASE("malformed json carries the line number") {
    const auto p = scratch("broken.jsonl");
    std::ofstream(p) << first << '\n' << "{not json" << '\n';
    try {
      load_manifest(p);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("unknown fields are rejected") {
    std::string extra = first;
    extra.insert(1, "\"colour\":1,");
    const auto p = scratch("extra.jsonl");
    std::ofstream(p) << extra << '\n';
    CHECK_THROWS_AS(load_manifest(p), ParseError);
  }
  SUBCASE("missing file is an I/O error") {
    CHECK_THROWS_AS(load_manifest(scratch("does_not_exist.jsonl")), IoError);
  }
}

TEST_CASE("raw tensor files round-trip and external manifests load them") {
  Frames f;
  f.frames = 2;
  f.height = 8;
  f.width = 8;
  f.data = random_frame(8, 16, 9);
  const auto dir = scratch("external");
  fs::create_directories(dir);
  write_raw_tensor(f, dir / "clip.cptf");
  CHECK(read_raw_tensor(dir / "clip.cptf") == f);

  Frames page;
  page.frames = 1;
  page.height = 8;
  page.width = 8;
  page.data = random_frame(8, 8, 10);
  write_raw_tensor(page, dir / "page.cptf");
  std::ofstream(dir / "m.jsonl")
      << R"({"sample_id":"a","product_id":"p","category_id":0,"domain":"P","frames_ref":"page.cptf","text_tokens":[3,4]})"
      << '\n'
      << R"({"sample_id":"b","product_id":"p","category_id":0,"domain":"V","frames_ref":"clip.cptf"})" << '\n';
  const Corpus c = load_manifest(dir / "m.jsonl");
  REQUIRE(c.samples().size() == 2);
  CHECK(c.samples()[1].frames == f);
  CHECK_FALSE(c.complete_triples());
  CHECK(c.incomplete_products() == std::vector<std::string>{"p"});
}

TEST_CASE("corpus invariants") {
  SyntheticConfig cfg;
  cfg.n_products = 2;
  const Corpus c = generate_synthetic_corpus(cfg);
  auto samples = c.samples();
  SUBCASE("product pages have exactly one frame") {
    for (auto& s : samples) {
      if (s.domain == Domain::P) {
        s.frames = c.samples()[c.products().begin()->second.by_domain[1].front()].frames;
        break;
      }
    }
    CHECK_THROWS_AS(Corpus{samples}, IntegrityError);
  }
  SUBCASE("text only on product pages") {
    samples[c.products().begin()->second.by_domain[2].front()].text_tokens = std::vector<std::int32_t>{1, 2};
    CHECK_THROWS_AS(Corpus{samples}, IntegrityError);
  }
  SUBCASE("duplicate ids") {
    samples.push_back(samples.front());
    CHECK_THROWS_AS(Corpus{samples}, IntegrityError);
  }
}

TEST_CASE("holdout split keeps the first samples of each domain for training") {
  SyntheticConfig cfg;
  cfg.n_products = 3;
  cfg.per_domain_counts = {3, 3, 3};
  cfg.frames_video = 2;
  cfg.frames_live = 2;
  const Corpus c = generate_synthetic_corpus(cfg);
  const auto [train, test] = split_holdout(c, 2);
  CHECK(train.samples().size() == 18);
  CHECK(test.samples().size() == 9);
  CHECK(train.complete_triples());
  CHECK(test.complete_triples());
  for (const Sample& s : test.samples()) CHECK(train.find(s.sample_id) == nullptr);
}
