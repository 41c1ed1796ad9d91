#pragma once

/// @file embedding_store.hpp
/// @brief Immutable embedding bundles and their little-endian binary format.
///
/// A bundle holds unit-norm float32 rows. Image bundles carry one class label
/// per row; text bundles carry per-row metadata plus the fingerprint of the
/// encode manifest that produced them (stored in a JSON sidecar next to the
/// binary file).
///
/// Binary layout (little-endian):
///
///     "PAPO" | u16 version=1 | u8 kind | u8 reserved=0 | u32 dim
///     | u64 n_rows | u32 n_classes | n_rows*dim f32 | [n_rows u32 labels]
///
/// Labels are present only for kind 0 (image).

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "proapo/error.hpp"

namespace proapo {

using TextId = std::uint32_t;
using ClassId = std::uint32_t;

enum class BundleKind : std::uint8_t { Image = 0, Text = 1 };

enum class TextKind { TemplateInstance, Description, SynonymInstance };

inline std::string_view to_string(TextKind kind) noexcept {
  switch (kind) {
    case TextKind::TemplateInstance: return "template_instance";
    case TextKind::Description: return "description";
    case TextKind::SynonymInstance: return "synonym_instance";
  }
  return "template_instance";
}

inline TextKind parse_text_kind(std::string_view s) {
  if (s == "template_instance") return TextKind::TemplateInstance;
  if (s == "description") return TextKind::Description;
  if (s == "synonym_instance") return TextKind::SynonymInstance;
  throw Error(ErrorCode::ParseError, "unknown text kind '" + std::string(s) + "'");
}

struct TextMeta {
  TextKind kind = TextKind::TemplateInstance;
  ClassId class_id = 0;
  std::optional<std::uint32_t> template_id;
  std::string source_text;

  friend bool operator==(const TextMeta&, const TextMeta&) = default;
};

inline constexpr std::uint16_t kBundleVersion = 1;
inline constexpr std::size_t kBundleHeaderBytes = 24;

/// Expected on-disk size of a bundle, or nullopt when it overflows 64 bits.
constexpr std::optional<std::uint64_t> bundle_file_size(BundleKind kind, std::uint64_t n_rows,
                                                        std::uint64_t dim) noexcept {
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  if (dim != 0 && n_rows > kMax / dim) return std::nullopt;
  const std::uint64_t cells = n_rows * dim;
  if (cells > (kMax - kBundleHeaderBytes) / 4) return std::nullopt;
  std::uint64_t size = kBundleHeaderBytes + cells * 4;
  if (kind == BundleKind::Image) {
    if (n_rows > (kMax - size) / 4) return std::nullopt;
    size += n_rows * 4;
  }
  return size;
}

/// Immutable matrix of unit-norm rows. All similarity math reads from here.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;

  static EmbeddingStore images(std::uint32_t dim, std::uint32_t n_classes, std::vector<float> rows,
                               std::vector<ClassId> labels) {
    EmbeddingStore s(BundleKind::Image, dim, n_classes, std::move(rows));
    if (labels.size() != s.n_rows_) {
      throw Error(ErrorCode::CountMismatch, "label count differs from row count");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= n_classes) {
        throw Error(ErrorCode::LabelOutOfRange, "label of row " + std::to_string(i) + " is " +
                                                    std::to_string(labels[i]));
      }
    }
    s.labels_ = std::move(labels);
    return s;
  }

  static EmbeddingStore texts(std::uint32_t dim, std::uint32_t n_classes, std::vector<float> rows,
                              std::vector<TextMeta> meta, std::string fingerprint) {
    EmbeddingStore s(BundleKind::Text, dim, n_classes, std::move(rows));
    if (meta.size() != s.n_rows_) {
      throw Error(ErrorCode::CountMismatch, "metadata count differs from row count");
    }
    for (std::size_t i = 0; i < meta.size(); ++i) {
      if (meta[i].class_id >= n_classes) {
        throw Error(ErrorCode::LabelOutOfRange, "text " + std::to_string(i) + " names class " +
                                                    std::to_string(meta[i].class_id));
      }
      if (meta[i].kind == TextKind::TemplateInstance && !meta[i].template_id) {
        throw Error(ErrorCode::ParseError,
                    "template instance " + std::to_string(i) + " has no template id");
      }
    }
    s.meta_ = std::move(meta);
    s.fingerprint_ = std::move(fingerprint);
    return s;
  }

  [[nodiscard]] BundleKind kind() const noexcept { return kind_; }
  [[nodiscard]] std::uint32_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t n_rows() const noexcept { return n_rows_; }
  [[nodiscard]] std::uint32_t n_classes() const noexcept { return n_classes_; }

  [[nodiscard]] std::span<const float> row(std::size_t i) const noexcept {
    return {data_.data() + i * dim_, dim_};
  }
  [[nodiscard]] std::span<const float> data() const noexcept { return data_; }
  [[nodiscard]] std::span<const ClassId> labels() const noexcept { return labels_; }
  [[nodiscard]] std::span<const TextMeta> meta() const noexcept { return meta_; }
  [[nodiscard]] const std::string& fingerprint() const noexcept { return fingerprint_; }

  /// Float64 dot product of two rows from (possibly) different stores.
  static double dot(std::span<const float> a, std::span<const float> b) noexcept {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
    }
    return acc;
  }

  friend bool operator==(const EmbeddingStore&, const EmbeddingStore&) = default;

 private:
  EmbeddingStore(BundleKind kind, std::uint32_t dim, std::uint32_t n_classes,
                 std::vector<float> rows)
      : kind_(kind), dim_(dim), n_classes_(n_classes), data_(std::move(rows)) {
    if (dim_ == 0) throw Error(ErrorCode::DimZero, "embedding dimension is zero");
    if (n_classes_ == 0) throw Error(ErrorCode::ParseError, "class count is zero");
    if (data_.size() % dim_ != 0) {
      throw Error(ErrorCode::CountMismatch, "row data is not a multiple of the dimension");
    }
    n_rows_ = data_.size() / dim_;
    normalize_rows();
  }

  // Rows already within 1e-6 of unit norm are kept bit-for-bit.
  void normalize_rows() {
    for (std::size_t i = 0; i < n_rows_; ++i) {
      std::span<float> r{data_.data() + i * dim_, dim_};
      double sq = 0.0;
      for (float v : r) sq += static_cast<double>(v) * v;
      const double norm = std::sqrt(sq);
      if (!(norm >= 1e-12) || !std::isfinite(norm)) {
        throw Error(ErrorCode::ZeroNormRow, "row " + std::to_string(i) + " cannot be normalized");
      }
      if (std::abs(norm - 1.0) <= 1e-6) continue;
      for (float& v : r) v = static_cast<float>(static_cast<double>(v) / norm);
    }
  }

  BundleKind kind_ = BundleKind::Image;
  std::uint32_t dim_ = 0;
  std::uint32_t n_classes_ = 0;
  std::size_t n_rows_ = 0;
  std::vector<float> data_;
  std::vector<ClassId> labels_;
  std::vector<TextMeta> meta_;
  std::string fingerprint_;
};

/// Row-wise concatenation of two text stores. The fingerprint of the result
/// is the two fingerprints joined by '+'; binding checks the parts separately.
inline EmbeddingStore concat_texts(const EmbeddingStore& a, const EmbeddingStore& b) {
  if (a.kind() != BundleKind::Text || b.kind() != BundleKind::Text) {
    throw Error(ErrorCode::ParseError, "only text stores can be concatenated");
  }
  if (a.dim() != b.dim() || a.n_classes() != b.n_classes()) {
    throw Error(ErrorCode::CountMismatch, "text stores disagree on dimension or class count");
  }
  std::vector<float> rows(a.data().begin(), a.data().end());
  rows.insert(rows.end(), b.data().begin(), b.data().end());
  std::vector<TextMeta> meta(a.meta().begin(), a.meta().end());
  meta.insert(meta.end(), b.meta().begin(), b.meta().end());
  return EmbeddingStore::texts(a.dim(), a.n_classes(), std::move(rows), std::move(meta),
                               a.fingerprint() + "+" + b.fingerprint());
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& bundle) {
  return std::filesystem::path(bundle.string() + ".meta.json");
}

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(u & 0xFF));
    u = static_cast<U>(u >> 8);
  }
}

template <typename T>
T get_le(const char* p) {
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) {
    u = static_cast<std::make_unsigned_t<T>>((u << 8) | static_cast<unsigned char>(p[i]));
  }
  return static_cast<T>(u);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingInput, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, "write to " + path.string() + " failed");
}

}  // namespace detail

inline nlohmann::json sidecar_json(const EmbeddingStore& store) {
  nlohmann::json texts = nlohmann::json::array();
  for (std::size_t i = 0; i < store.meta().size(); ++i) {
    const auto& m = store.meta()[i];
    texts.push_back({{"text_id", i},
                     {"kind", to_string(m.kind)},
                     {"class_id", m.class_id},
                     {"template_id", m.template_id ? nlohmann::json(*m.template_id) : nullptr},
                     {"source_text", m.source_text}});
  }
  return {{"fingerprint", store.fingerprint()}, {"texts", std::move(texts)}};
}

/// Parses a sidecar. Accepts the object form {fingerprint, texts} and a bare
/// array of text records (fingerprint then empty).
inline std::pair<std::vector<TextMeta>, std::string> parse_sidecar(const nlohmann::json& j) try {
  const nlohmann::json* texts = &j;
  std::string fingerprint;
  if (j.is_object()) {
    fingerprint = j.value("fingerprint", "");
    texts = &j.at("texts");
  }
  if (!texts->is_array()) throw Error(ErrorCode::ParseError, "sidecar texts must be an array");
  std::vector<TextMeta> meta(texts->size());
  for (const auto& t : *texts) {
    const auto id = t.at("text_id").get<std::size_t>();
    if (id >= meta.size()) throw Error(ErrorCode::ParseError, "sidecar text_id out of range");
    TextMeta m;
    m.kind = parse_text_kind(t.at("kind").get<std::string>());
    m.class_id = t.at("class_id").get<ClassId>();
    if (t.contains("template_id") && !t.at("template_id").is_null()) {
      m.template_id = t.at("template_id").get<std::uint32_t>();
    }
    m.source_text = t.at("source_text").get<std::string>();
    meta[id] = std::move(m);
  }
  return {std::move(meta), std::move(fingerprint)};
} catch (const nlohmann::json::exception& e) {
  throw Error(ErrorCode::ParseError, std::string("sidecar: ") + e.what());
}

inline std::string encode_bundle(const EmbeddingStore& store) {
  std::string out;
  const auto size = bundle_file_size(store.kind(), store.n_rows(), store.dim());
  out.reserve(static_cast<std::size_t>(size.value_or(0)));
  out.append("PAPO");
  detail::put_le<std::uint16_t>(out, kBundleVersion);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(store.kind()));
  detail::put_le<std::uint8_t>(out, 0);
  detail::put_le<std::uint32_t>(out, store.dim());
  detail::put_le<std::uint64_t>(out, store.n_rows());
  detail::put_le<std::uint32_t>(out, store.n_classes());
  for (float v : store.data()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  if (store.kind() == BundleKind::Image) {
    for (ClassId label : store.labels()) detail::put_le<std::uint32_t>(out, label);
  }
  return out;
}

/// Writes the binary bundle; text stores also get `<path>.meta.json`.
inline void save_bundle(const EmbeddingStore& store, const std::filesystem::path& path) {
  detail::write_file(path, encode_bundle(store));
  if (store.kind() == BundleKind::Text) {
    detail::write_file(sidecar_path(path), sidecar_json(store).dump(1));
  }
}

/// Decodes a bundle image. Text metadata must be supplied separately.
inline EmbeddingStore decode_bundle(std::string_view bytes, std::vector<TextMeta> meta = {},
                                    std::string fingerprint = {}) {
  if (bytes.size() < kBundleHeaderBytes || bytes.substr(0, 4) != "PAPO") {
    throw Error(ErrorCode::BadMagic, "not an embedding bundle");
  }
  const char* p = bytes.data();
  const auto version = detail::get_le<std::uint16_t>(p + 4);
  if (version != kBundleVersion) {
    throw Error(ErrorCode::VersionMismatch, "bundle version " + std::to_string(version));
  }
  const auto kind_byte = detail::get_le<std::uint8_t>(p + 6);
  if (kind_byte > 1) throw Error(ErrorCode::BadMagic, "unknown bundle kind");
  const auto kind = static_cast<BundleKind>(kind_byte);
  const auto dim = detail::get_le<std::uint32_t>(p + 8);
  const auto n_rows = detail::get_le<std::uint64_t>(p + 12);
  const auto n_classes = detail::get_le<std::uint32_t>(p + 20);
  if (dim == 0) throw Error(ErrorCode::DimZero, "bundle dimension is zero");
  const auto expected = bundle_file_size(kind, n_rows, dim);
  if (!expected || *expected != bytes.size()) {
    throw Error(ErrorCode::RowCountOverflow,
                "row count " + std::to_string(n_rows) + " does not match file size");
  }
  const std::size_t cells = static_cast<std::size_t>(n_rows) * dim;
  std::vector<float> rows(cells);
  const char* body = p + kBundleHeaderBytes;
  for (std::size_t i = 0; i < cells; ++i) {
    rows[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(body + 4 * i));
  }
  if (kind == BundleKind::Image) {
    std::vector<ClassId> labels(static_cast<std::size_t>(n_rows));
    const char* lp = body + 4 * cells;
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = detail::get_le<std::uint32_t>(lp + 4 * i);
    return EmbeddingStore::images(dim, n_classes, std::move(rows), std::move(labels));
  }
  return EmbeddingStore::texts(dim, n_classes, std::move(rows), std::move(meta),
                               std::move(fingerprint));
}

inline EmbeddingStore load_bundle(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() >= 7 && bytes.substr(0, 4) == "PAPO" && bytes[6] == 1) {
    const auto side = sidecar_path(path);
    if (!std::filesystem::exists(side)) {
      throw Error(ErrorCode::MissingInput, "text bundle sidecar " + side.string() + " not found");
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(detail::read_file(side));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, side.string() + ": " + e.what());
    }
    auto [meta, fingerprint] = parse_sidecar(j);
    return decode_bundle(bytes, std::move(meta), std::move(fingerprint));
  }
  return decode_bundle(bytes);
}

}  // namespace proapo
