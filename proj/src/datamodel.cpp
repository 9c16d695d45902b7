#include "cope/datamodel.hpp"

#include <algorithm>
#include <set>

#include "cope/errors.hpp"

namespace cope {

std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::P:
      return "P";
    case Domain::V:
      return "V";
    case Domain::L:
      return "L";
  }
  return "?";
}

Domain parse_domain(std::string_view s) {
  if (s == "P") return Domain::P;
  if (s == "V") return Domain::V;
  if (s == "L") return Domain::L;
  throw ParseError("domain must be one of \"P\", \"V\", \"L\"; got \"" + std::string(s) + "\"");
}

Corpus::Corpus(std::vector<Sample> samples) : samples_(std::move(samples)) {
  std::sort(samples_.begin(), samples_.end(),
            [](const Sample& a, const Sample& b) { return a.sample_id < b.sample_id; });
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (i > 0 && samples_[i - 1].sample_id == s.sample_id) {
      throw IntegrityError("duplicate sample_id: " + s.sample_id);
    }
    if (s.frames.frames < 1) throw IntegrityError(s.sample_id + ": needs at least one frame");
    if (s.domain == Domain::P && s.frames.frames != 1) {
      throw IntegrityError(s.sample_id + ": product page samples have exactly one frame");
    }
    if (s.text_tokens.has_value() != (s.domain == Domain::P)) {
      throw IntegrityError(s.sample_id + ": text tokens are present iff domain is P");
    }
    if (s.frames.data.size() != std::size_t{s.frames.frames} * s.frames.frame_size()) {
      throw IntegrityError(s.sample_id + ": frame buffer size does not match its shape");
    }
    auto [it, inserted] = products_.try_emplace(s.product_id);
    if (inserted) {
      it->second.category_id = s.category_id;
      categories_[s.category_id].push_back(s.product_id);
    } else if (it->second.category_id != s.category_id) {
      throw IntegrityError(s.sample_id + ": product " + s.product_id + " has conflicting categories");
    }
    it->second.by_domain[domain_index(s.domain)].push_back(i);
  }
  for (auto& [cat, ids] : categories_) std::sort(ids.begin(), ids.end());
}

bool Corpus::complete_triples() const { return !products_.empty() && incomplete_products().empty(); }

std::vector<std::string> Corpus::incomplete_products() const {
  std::vector<std::string> out;
  for (const auto& [id, entry] : products_) {
    if (std::any_of(entry.by_domain.begin(), entry.by_domain.end(),
                    [](const auto& v) { return v.empty(); })) {
      out.push_back(id);
    }
  }
  return out;
}

const Sample* Corpus::find(std::string_view sample_id) const {
  auto it = std::lower_bound(samples_.begin(), samples_.end(), sample_id,
                             [](const Sample& s, std::string_view id) { return s.sample_id < id; });
  if (it == samples_.end() || it->sample_id != sample_id) return nullptr;
  return &*it;
}

namespace {

void check_patch_shape(std::uint32_t height, std::uint32_t width, std::uint32_t patch_size) {
  if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
    throw ShapeError("frame " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  }
}

}  // namespace

Matrix patchify(std::span<const float> frame, std::uint32_t height, std::uint32_t width,
                std::uint32_t patch_size) {
  check_patch_shape(height, width, patch_size);
  if (frame.size() != std::size_t{height} * width * 3) {
    throw ShapeError("frame buffer does not hold H*W*3 values");
  }
  const std::uint32_t rows = height / patch_size;
  const std::uint32_t cols = width / patch_size;
  const Eigen::Index len = Eigen::Index{patch_size} * patch_size * 3;
  Matrix out(Eigen::Index{rows} * cols, len);
  for (std::uint32_t pr = 0; pr < rows; ++pr) {
    for (std::uint32_t pc = 0; pc < cols; ++pc) {
      double* dst = out.row(Eigen::Index{pr} * cols + pc).data();
      for (std::uint32_t dy = 0; dy < patch_size; ++dy) {
        const float* src = frame.data() + ((std::size_t{pr} * patch_size + dy) * width + pc * patch_size) * 3;
        for (std::uint32_t k = 0; k < patch_size * 3; ++k) *dst++ = src[k];
      }
    }
  }
  return out;
}

std::vector<float> unpatchify(const Matrix& patches, std::uint32_t height, std::uint32_t width,
                              std::uint32_t patch_size) {
  check_patch_shape(height, width, patch_size);
  const std::uint32_t rows = height / patch_size;
  const std::uint32_t cols = width / patch_size;
  if (patches.rows() != Eigen::Index{rows} * cols || patches.cols() != Eigen::Index{patch_size} * patch_size * 3) {
    throw ShapeError("patch matrix shape does not match the frame geometry");
  }
  std::vector<float> frame(std::size_t{height} * width * 3);
  for (std::uint32_t pr = 0; pr < rows; ++pr) {
    for (std::uint32_t pc = 0; pc < cols; ++pc) {
      const double* src = patches.row(Eigen::Index{pr} * cols + pc).data();
      for (std::uint32_t dy = 0; dy < patch_size; ++dy) {
        float* dst = frame.data() + ((std::size_t{pr} * patch_size + dy) * width + pc * patch_size) * 3;
        for (std::uint32_t k = 0; k < patch_size * 3; ++k) dst[k] = static_cast<float>(*src++);
      }
    }
  }
  return frame;
}

}  // namespace cope
