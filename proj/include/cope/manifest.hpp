#pragma once

#include <filesystem>

#include "cope/datamodel.hpp"

namespace cope {

// JSONL, one object per sample in ascending sample_id order:
//   {sample_id, product_id, category_id, domain, frames_ref, text_tokens?, gen_seed?}
// Unknown fields are rejected.
void save_manifest(const Corpus& corpus, const std::filesystem::path& path);

// Synthetic frames_ref entries are re-rendered; anything else is a raw tensor
// path relative to the manifest's directory.
Corpus load_manifest(const std::filesystem::path& path);

std::string manifest_line(const Sample& s);

// Raw tensor file: "CPTF", u16 version=1, u16 reserved=0, u32 T, H, W, C,
// then T*H*W*C little-endian float32.
void write_raw_tensor(const Frames& frames, const std::filesystem::path& path);
Frames read_raw_tensor(const std::filesystem::path& path);

}  // namespace cope
