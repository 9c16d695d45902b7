#include "cope/manifest.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

#include "cope/binary_io.hpp"
#include "cope/errors.hpp"
#include "cope/synthetic.hpp"

namespace cope {

using nlohmann::json;

std::string manifest_line(const Sample& s) {
  json j = json::object();
  j["sample_id"] = s.sample_id;
  j["product_id"] = s.product_id;
  j["category_id"] = s.category_id;
  j["domain"] = std::string(to_string(s.domain));
  j["frames_ref"] = s.frames_ref;
  if (s.text_tokens) j["text_tokens"] = *s.text_tokens;
  if (s.gen_seed) j["gen_seed"] = *s.gen_seed;
  return j.dump();
}

void save_manifest(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open manifest for writing: " + path.string());
  for (const Sample& s : corpus.samples()) out << manifest_line(s) << '\n';
  if (!out) throw IoError("failed writing manifest: " + path.string());
}

namespace {

const std::set<std::string, std::less<>> kKnownFields{"sample_id", "product_id", "category_id", "domain",
                                                      "frames_ref", "text_tokens", "gen_seed"};

Sample parse_line(const std::string& line, std::size_t line_no, const std::filesystem::path& base) {
  const std::string where = "manifest line " + std::to_string(line_no) + ": ";
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(where + "invalid JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw ParseError(where + "expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kKnownFields.contains(key)) throw ParseError(where + "unknown field \"" + key + "\"");
  }
  auto required = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw ParseError(where + "missing field \"" + key + "\"");
    return j.at(key);
  };
  Sample s;
  try {
    s.sample_id = required("sample_id").get<std::string>();
    s.product_id = required("product_id").get<std::string>();
    const json& cat = required("category_id");
    if (!cat.is_number_unsigned() && !(cat.is_number_integer() && cat.get<std::int64_t>() >= 0)) {
      throw ParseError(where + "category_id must be a non-negative integer");
    }
    s.category_id = cat.get<std::uint32_t>();
    s.frames_ref = required("frames_ref").get<std::string>();
    if (j.contains("text_tokens")) s.text_tokens = j.at("text_tokens").get<std::vector<std::int32_t>>();
    if (j.contains("gen_seed")) s.gen_seed = j.at("gen_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(where + "field has the wrong type (" + e.what() + ")");
  }
  const json& dom = required("domain");
  if (!dom.is_string()) throw ParseError(where + "domain must be a string");
  try {
    s.domain = parse_domain(dom.get<std::string>());
  } catch (const ParseError& e) {
    throw ParseError(where + e.what());
  }

  if (SynthDescriptor::is_ref(s.frames_ref)) {
    try {
      s.frames = render_synthetic(SynthDescriptor::parse(s.frames_ref), s.domain);
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    }
  } else {
    s.frames = read_raw_tensor(base / s.frames_ref);
    if (s.frames.channels != 3) throw ParseError(where + "frames must have 3 channels");
  }
  return s;
}

}  // namespace

Corpus load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  const std::filesystem::path base = path.parent_path();
  std::vector<Sample> samples;
  std::set<std::string, std::less<>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Sample s = parse_line(line, line_no, base);
    if (!seen.insert(s.sample_id).second) {
      throw IntegrityError("manifest line " + std::to_string(line_no) + ": duplicate sample_id " + s.sample_id);
    }
    samples.push_back(std::move(s));
  }
  return Corpus(std::move(samples));
}

void write_raw_tensor(const Frames& frames, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open tensor file for writing: " + path.string());
  binary::write_magic(out, "CPTF");
  binary::write_le<std::uint16_t>(out, 1);
  binary::write_le<std::uint16_t>(out, 0);
  binary::write_le<std::uint32_t>(out, frames.frames);
  binary::write_le<std::uint32_t>(out, frames.height);
  binary::write_le<std::uint32_t>(out, frames.width);
  binary::write_le<std::uint32_t>(out, frames.channels);
  for (float v : frames.data) binary::write_le<float>(out, v);
  if (!out) throw IoError("failed writing tensor file: " + path.string());
}

Frames read_raw_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file: " + path.string());
  binary::expect_magic(in, "CPTF", path.string().c_str());
  if (binary::read_le<std::uint16_t>(in) != 1) throw ParseError(path.string() + ": unsupported tensor version");
  binary::read_le<std::uint16_t>(in);
  Frames f;
  f.frames = binary::read_le<std::uint32_t>(in);
  f.height = binary::read_le<std::uint32_t>(in);
  f.width = binary::read_le<std::uint32_t>(in);
  f.channels = binary::read_le<std::uint32_t>(in);
  f.data.resize(std::size_t{f.frames} * f.frame_size());
  for (float& v : f.data) v = binary::read_le<float>(in);
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path.string() + ": trailing bytes after tensor data");
  return f;
}

}  // namespace cope
