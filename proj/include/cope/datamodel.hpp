#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cope {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Domain : std::uint8_t { P = 0, V = 1, L = 2 };

inline constexpr std::array<Domain, 3> kAllDomains{Domain::P, Domain::V, Domain::L};

std::string_view to_string(Domain d);
// Throws ParseError for anything but "P", "V" or "L".
Domain parse_domain(std::string_view s);

inline std::size_t domain_index(Domain d) { return static_cast<std::size_t>(d); }

// T x H x W x C frames, row-major, values in [0, 1]. C is always 3 for corpus
// samples; the raw tensor format carries it explicitly.
struct Frames {
  std::uint32_t frames = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 3;
  std::vector<float> data;

  std::size_t frame_size() const { return std::size_t{height} * width * channels; }
  std::span<const float> frame(std::size_t t) const {
    return std::span<const float>(data).subspan(t * frame_size(), frame_size());
  }
  std::span<float> frame(std::size_t t) {
    return std::span<float>(data).subspan(t * frame_size(), frame_size());
  }

  friend bool operator==(const Frames&, const Frames&) = default;
};

struct Sample {
  std::string sample_id;
  std::string product_id;
  std::uint32_t category_id = 0;
  Domain domain = Domain::P;
  // Either "synth:..." (regenerated from a descriptor) or a path relative to
  // the manifest directory pointing at a raw tensor file.
  std::string frames_ref;
  Frames frames;
  std::optional<std::vector<std::int32_t>> text_tokens;
  std::optional<std::uint64_t> gen_seed;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct ProductEntry {
  std::uint32_t category_id = 0;
  // Indices into Corpus::samples(), per domain, in sample_id order.
  std::array<std::vector<std::size_t>, 3> by_domain;
};

// Samples kept in ascending sample_id order; indices are rebuilt on mutation.
class Corpus {
 public:
  Corpus() = default;
  // Validates invariants (unique ids, frame counts, text presence) and
  // builds the product and category indices.
  explicit Corpus(std::vector<Sample> samples);

  const std::vector<Sample>& samples() const { return samples_; }
  const std::map<std::string, ProductEntry>& products() const { return products_; }
  const std::map<std::uint32_t, std::vector<std::string>>& categories() const { return categories_; }

  // Every product has at least one sample in each of P, V and L.
  bool complete_triples() const;
  // Products lacking at least one domain.
  std::vector<std::string> incomplete_products() const;

  const Sample* find(std::string_view sample_id) const;

  friend bool operator==(const Corpus& a, const Corpus& b) { return a.samples_ == b.samples_; }

 private:
  std::vector<Sample> samples_;
  std::map<std::string, ProductEntry> products_;
  std::map<std::uint32_t, std::vector<std::string>> categories_;
};

// Splits an H x W x 3 frame into row-major non-overlapping patches. Row m of
// the result is patch m flattened as (dy, dx, channel).
Matrix patchify(std::span<const float> frame, std::uint32_t height, std::uint32_t width,
                std::uint32_t patch_size);

// Exact inverse of patchify.
std::vector<float> unpatchify(const Matrix& patches, std::uint32_t height, std::uint32_t width,
                              std::uint32_t patch_size);

}  // namespace cope
