#include "cope/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "cope/binary_io.hpp"
#include "cope/errors.hpp"

namespace cope {

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["image_size"] = cfg.visual.image_size;
  j["patch_size"] = cfg.visual.patch_size;
  j["embed_dim"] = cfg.visual.embed_dim;
  j["cct_blocks"] = cfg.visual.cct_blocks;
  j["heads"] = cfg.visual.heads;
  j["mlp_ratio"] = cfg.visual.mlp_ratio;
  j["max_frames"] = cfg.visual.max_frames;
  j["temporal_exchange"] = cfg.visual.temporal_exchange;
  j["vocab_size"] = cfg.text.vocab_size;
  j["text_layers"] = cfg.text.layers;
  j["text_heads"] = cfg.text.heads;
  j["text_mlp_ratio"] = cfg.text.mlp_ratio;
  j["max_text_len"] = cfg.text.max_len;
  j["num_classes"] = cfg.num_classes;
  j["classifier_hidden"] = cfg.classifier_hidden;
  j["init_seed"] = cfg.init_seed;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.visual.image_size = j.at("image_size").get<std::uint32_t>();
    cfg.visual.patch_size = j.at("patch_size").get<std::uint32_t>();
    cfg.visual.embed_dim = j.at("embed_dim").get<int>();
    cfg.visual.cct_blocks = j.at("cct_blocks").get<int>();
    cfg.visual.heads = j.at("heads").get<int>();
    cfg.visual.mlp_ratio = j.at("mlp_ratio").get<int>();
    cfg.visual.max_frames = j.at("max_frames").get<std::uint32_t>();
    cfg.visual.temporal_exchange = j.at("temporal_exchange").get<bool>();
    cfg.text.vocab_size = j.at("vocab_size").get<std::uint32_t>();
    cfg.text.embed_dim = cfg.visual.embed_dim;
    cfg.text.layers = j.at("text_layers").get<int>();
    cfg.text.heads = j.at("text_heads").get<int>();
    cfg.text.mlp_ratio = j.at("text_mlp_ratio").get<int>();
    cfg.text.max_len = j.at("max_text_len").get<std::uint32_t>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.classifier_hidden = j.at("classifier_hidden").get<int>();
    cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what());
  }
  return cfg;
}

void save_checkpoint(const CopeModel& model, const std::filesystem::path& path) {
  const nn::ParameterSet& params = model.parameters();
  nlohmann::ordered_json index;
  index["config"] = model_config_to_json(model.config());
  nlohmann::ordered_json tensors = nlohmann::ordered_json::object();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& v = params.value(i);
    tensors[params.name(i)] = {{"offset", offset}, {"shape", {v.rows(), v.cols()}}, {"dtype", "f32-le"}};
    offset += static_cast<std::uint64_t>(v.size()) * 4;
  }
  index["tensors"] = tensors;
  const std::string header = index.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  binary::write_magic(out, "CPCK");
  binary::write_le<std::uint16_t>(out, 1);
  binary::write_le<std::uint16_t>(out, 0);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& v = params.value(i);
    for (Eigen::Index k = 0; k < v.size(); ++k) binary::write_le<float>(out, static_cast<float>(v.data()[k]));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

CopeModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  binary::expect_magic(in, "CPCK", path.string().c_str());
  if (binary::read_le<std::uint16_t>(in) != 1) throw ParseError(path.string() + ": unsupported checkpoint version");
  binary::read_le<std::uint16_t>(in);
  const auto header_len = binary::read_le<std::uint32_t>(in);
  std::string header(header_len, '\0');
  if (!in.read(header.data(), header_len)) throw IoError(path.string() + ": truncated checkpoint index");
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": invalid checkpoint index (" + e.what() + ")");
  }
  CopeModel model(model_config_from_json(index.at("config")));
  const std::streamoff payload = in.tellg();
  nn::ParameterSet& params = model.parameters();
  const auto& tensors = index.at("tensors");
  if (tensors.size() != params.size()) throw CompatibilityError(path.string() + ": tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& v = params.value(i);
    if (!tensors.contains(params.name(i))) throw CompatibilityError(path.string() + ": missing tensor " + params.name(i));
    const auto& t = tensors.at(params.name(i));
    const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != v.rows() || shape[1] != v.cols()) {
      throw CompatibilityError(path.string() + ": shape mismatch for " + params.name(i));
    }
    if (t.at("dtype").get<std::string>() != "f32-le") throw ParseError(path.string() + ": unsupported dtype");
    in.seekg(payload + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = binary::read_le<float>(in);
  }
  return model;
}

}  // namespace cope
