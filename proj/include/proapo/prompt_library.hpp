#pragma once

/// @file prompt_library.hpp
/// @brief Template / description / synonym libraries, domain augmentation,
/// encode manifests and binding of encoded rows back to library elements.
///
/// Encoding is a two-step protocol: the library emits an EncodeManifest, an
/// external encoder turns every manifest entry into one embedding row (in
/// manifest order) and records the manifest fingerprint in the text bundle's
/// sidecar, and bind_embeddings() attaches the rows to the library.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "proapo/detail/digest.hpp"
#include "proapo/embedding_store.hpp"
#include "proapo/error.hpp"

namespace proapo {

inline constexpr std::string_view kPlaceholder = "{}";
inline constexpr TextId kUnbound = std::numeric_limits<TextId>::max();

struct ClassEntry {
  std::string name;
  std::vector<std::string> synonyms;
};

namespace detail {

inline std::size_t count_placeholders(std::string_view s) {
  std::size_t n = 0;
  for (auto pos = s.find(kPlaceholder); pos != std::string_view::npos;
       pos = s.find(kPlaceholder, pos + kPlaceholder.size())) {
    ++n;
  }
  return n;
}

inline bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

// Replaces whole-word occurrences of `word`; returns nullopt when none exist.
inline std::optional<std::string> replace_word(std::string_view s, std::string_view word,
                                               std::string_view with) {
  std::string out;
  bool hit = false;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto pos = s.find(word, i);
    if (pos == std::string_view::npos) break;
    const bool left = pos == 0 || !is_word_char(s[pos - 1]);
    const auto end = pos + word.size();
    const bool right = end == s.size() || !is_word_char(s[end]);
    out.append(s.substr(i, pos - i));
    if (left && right) {
      out.append(with);
      hit = true;
    } else {
      out.append(word);
    }
    i = end;
  }
  if (!hit) return std::nullopt;
  out.append(s.substr(i));
  return out;
}

inline std::string_view rstrip_period(std::string_view s) {
  while (!s.empty() && (s.back() == '.' || std::isspace(static_cast<unsigned char>(s.back())))) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::string fill(std::string_view tmpl, std::string_view name) {
  std::string out(tmpl);
  const auto pos = out.find(kPlaceholder);
  out.replace(pos, kPlaceholder.size(), name);
  return out;
}

}  // namespace detail

/// Adds the dataset domain to every template in four ways: a ", a type of
/// {domain}" suffix, a "{domain}: " prefix on the class slot, and replacing
/// the word "photo" with "{domain}" or "{domain} photo". Templates already
/// mentioning any of the domains are kept but not rewritten, so the
/// operation is idempotent on its own output.
inline std::vector<std::string> augment_templates(const std::vector<std::string>& templates,
                                                  const std::vector<std::string>& domains) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto emit = [&](std::string s) {
    if (seen.insert(s).second) out.push_back(std::move(s));
  };
  for (const auto& t : templates) {
    if (detail::count_placeholders(t) != 1) {
      throw Error(ErrorCode::NoPlaceholder, "template '" + t + "' must contain exactly one {}");
    }
    emit(t);
  }
  for (const auto& t : templates) {
    const bool mentions_domain = std::any_of(domains.begin(), domains.end(), [&](const std::string& d) {
      return !d.empty() && t.find(d) != std::string::npos;
    });
    if (mentions_domain) continue;
    for (const auto& domain : domains) {
      if (domain.empty()) continue;
      const auto stem = detail::rstrip_period(t);
      const bool had_period = stem.size() != t.size() && t.back() == '.';
      emit(std::string(stem) + ", a type of " + domain + (had_period ? "." : ""));
      emit(detail::fill(t, domain + ": {}"));
      if (auto r = detail::replace_word(t, "photo", domain)) emit(std::move(*r));
      if (auto r = detail::replace_word(t, "photo", domain + " photo")) emit(std::move(*r));
    }
  }
  return out;
}

/// Integration slot for descriptions: a template id ("{template}. {description}.")
/// or nullopt for the description text on its own.
using IntegrationSlot = std::optional<std::uint32_t>;

struct ManifestEntry {
  std::uint32_t manifest_id = 0;
  TextKind kind = TextKind::TemplateInstance;
  ClassId class_id = 0;
  std::optional<std::uint32_t> template_id;
  // Description index for descriptions; synonym index for synonym instances.
  std::optional<std::uint32_t> description_id;
  std::string full_text;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct EncodeManifest {
  std::vector<ManifestEntry> entries;
  std::string fingerprint;

  [[nodiscard]] std::size_t size() const noexcept { return entries.size(); }
  friend bool operator==(const EncodeManifest&, const EncodeManifest&) = default;
};

/// Hex SHA-256 of the newline-joined full texts.
inline std::string manifest_fingerprint(const std::vector<ManifestEntry>& entries) {
  detail::Sha256 h;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i != 0) h.update("\n");
    h.update(entries[i].full_text);
  }
  return h.hex();
}

class PromptLibrary {
 public:
  PromptLibrary() = default;

  /// Builds a library; `templates` are augmented with `domains`.
  PromptLibrary(std::vector<std::string> templates, std::vector<std::string> domains,
                std::vector<ClassEntry> classes, std::vector<std::vector<std::string>> descriptions)
      : domains_(std::move(domains)), classes_(std::move(classes)), descriptions_(std::move(descriptions)) {
    templates_ = augment_templates(templates, domains_);
    if (descriptions_.size() < classes_.size()) descriptions_.resize(classes_.size());
    if (descriptions_.size() > classes_.size()) {
      throw Error(ErrorCode::ParseError, "descriptions reference unknown classes");
    }
    reset_binding();
  }

  [[nodiscard]] const std::vector<std::string>& templates() const noexcept { return templates_; }
  [[nodiscard]] const std::vector<std::string>& domains() const noexcept { return domains_; }
  [[nodiscard]] const std::vector<ClassEntry>& classes() const noexcept { return classes_; }
  [[nodiscard]] const std::vector<std::vector<std::string>>& descriptions() const noexcept {
    return descriptions_;
  }
  [[nodiscard]] std::size_t n_templates() const noexcept { return templates_.size(); }
  [[nodiscard]] std::size_t n_classes() const noexcept { return classes_.size(); }

  /// Index of the base template "a photo of a {}." or 0 when absent.
  [[nodiscard]] std::uint32_t base_template() const noexcept {
    const auto it = std::find(templates_.begin(), templates_.end(), "a photo of a {}.");
    return it == templates_.end() ? 0 : static_cast<std::uint32_t>(it - templates_.begin());
  }

  [[nodiscard]] TextId template_text(std::uint32_t t, ClassId c) const {
    const TextId id = t < templates_.size() && c < classes_.size() ? name_ids_[t * classes_.size() + c]
                                                                    : kUnbound;
    if (id == kUnbound) {
      throw Error(ErrorCode::UnboundId, "template " + std::to_string(t) + " for class " +
                                            std::to_string(c) + " is not bound");
    }
    return id;
  }

  [[nodiscard]] const std::vector<TextId>& synonym_texts(std::uint32_t t, ClassId c) const {
    const auto& ids = synonym_ids_.at(t * classes_.size() + c);
    for (TextId id : ids) {
      if (id == kUnbound) {
        throw Error(ErrorCode::UnboundId, "synonym instance of template " + std::to_string(t) +
                                              " for class " + std::to_string(c) + " is not bound");
      }
    }
    return ids;
  }

  /// Every bound description text of class `c`, ascending.
  [[nodiscard]] std::vector<TextId> description_texts(ClassId c) const {
    std::vector<TextId> out;
    for (const auto& b : desc_bindings_.at(c)) out.push_back(b.text_id);
    std::sort(out.begin(), out.end());
    return out;
  }

  [[nodiscard]] bool templates_bound() const noexcept {
    return std::none_of(name_ids_.begin(), name_ids_.end(), [](TextId id) { return id == kUnbound; });
  }

  /// True when every class that has descriptions has at least one bound text.
  [[nodiscard]] bool descriptions_bound() const noexcept {
    for (std::size_t c = 0; c < classes_.size(); ++c) {
      if (!descriptions_[c].empty() && desc_bindings_[c].empty()) return false;
    }
    return true;
  }

  /// Instantiated text of one manifest element.
  [[nodiscard]] std::string template_full_text(std::uint32_t t, ClassId c, std::size_t variant) const {
    const auto& cls = classes_.at(c);
    return detail::fill(templates_.at(t), variant == 0 ? cls.name : cls.synonyms.at(variant - 1));
  }

  [[nodiscard]] std::string description_full_text(IntegrationSlot slot, ClassId c,
                                                  std::uint32_t d) const {
    const auto& desc = descriptions_.at(c).at(d);
    if (!slot) return desc;
    const std::string head = template_full_text(*slot, c, 0);
    return std::string(detail::rstrip_period(head)) + ". " +
           std::string(detail::rstrip_period(desc)) + ".";
  }

 private:
  struct DescBinding {
    std::uint32_t description_id;
    IntegrationSlot slot;
    TextId text_id;
  };

  void reset_binding() {
    const std::size_t cells = templates_.size() * classes_.size();
    name_ids_.assign(cells, kUnbound);
    synonym_ids_.assign(cells, {});
    for (std::size_t t = 0; t < templates_.size(); ++t) {
      for (std::size_t c = 0; c < classes_.size(); ++c) {
        synonym_ids_[t * classes_.size() + c].assign(classes_[c].synonyms.size(), kUnbound);
      }
    }
    desc_bindings_.assign(classes_.size(), {});
  }

  friend PromptLibrary bind_embeddings(const PromptLibrary&, const EncodeManifest&,
                                       const EmbeddingStore&, TextId);

  std::vector<std::string> templates_;
  std::vector<std::string> domains_;
  std::vector<ClassEntry> classes_;
  std::vector<std::vector<std::string>> descriptions_;

  std::vector<TextId> name_ids_;
  std::vector<std::vector<TextId>> synonym_ids_;
  std::vector<std::vector<DescBinding>> desc_bindings_;
};

/// Entries for every template instance: templates major, classes minor, then
/// the class name followed by its synonyms.
inline std::vector<ManifestEntry> template_entries(const PromptLibrary& lib) {
  std::vector<ManifestEntry> out;
  for (std::uint32_t t = 0; t < lib.n_templates(); ++t) {
    for (ClassId c = 0; c < lib.n_classes(); ++c) {
      const auto& cls = lib.classes()[c];
      for (std::size_t v = 0; v <= cls.synonyms.size(); ++v) {
        ManifestEntry e;
        e.kind = v == 0 ? TextKind::TemplateInstance : TextKind::SynonymInstance;
        e.class_id = c;
        e.template_id = t;
        if (v != 0) e.description_id = static_cast<std::uint32_t>(v - 1);
        e.full_text = lib.template_full_text(t, c, v);
        out.push_back(std::move(e));
      }
    }
  }
  return out;
}

inline std::vector<ManifestEntry> description_entries(const PromptLibrary& lib,
                                                      const std::vector<IntegrationSlot>& integration) {
  std::vector<ManifestEntry> out;
  for (const auto& slot : integration) {
    if (slot && *slot >= lib.n_templates()) {
      throw Error(ErrorCode::ConfigInvalid, "integration template " + std::to_string(*slot) +
                                                " out of range");
    }
    for (ClassId c = 0; c < lib.n_classes(); ++c) {
      for (std::uint32_t d = 0; d < lib.descriptions()[c].size(); ++d) {
        ManifestEntry e;
        e.kind = TextKind::Description;
        e.class_id = c;
        e.template_id = slot;
        e.description_id = d;
        e.full_text = lib.description_full_text(slot, c, d);
        out.push_back(std::move(e));
      }
    }
  }
  return out;
}

inline EncodeManifest finish_manifest(std::vector<ManifestEntry> entries) {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    entries[i].manifest_id = static_cast<std::uint32_t>(i);
    if (entries[i].full_text.empty()) {
      throw Error(ErrorCode::EmptyLibrary, "manifest entry " + std::to_string(i) + " has no text");
    }
  }
  EncodeManifest m;
  m.fingerprint = manifest_fingerprint(entries);
  m.entries = std::move(entries);
  return m;
}

/// Template instances followed by descriptions integrated with each slot in
/// `integration`.
inline EncodeManifest instantiate_manifest(const PromptLibrary& lib,
                                           const std::vector<IntegrationSlot>& integration) {
  if (lib.n_templates() == 0 || lib.n_classes() == 0) {
    throw Error(ErrorCode::EmptyLibrary, "library has no templates or no classes");
  }
  auto entries = template_entries(lib);
  auto descs = description_entries(lib, integration);
  entries.insert(entries.end(), std::make_move_iterator(descs.begin()),
                 std::make_move_iterator(descs.end()));
  return finish_manifest(std::move(entries));
}

/// Descriptions only; the second request of the two-phase protocol.
inline EncodeManifest description_manifest(const PromptLibrary& lib,
                                           const std::vector<IntegrationSlot>& integration) {
  auto entries = description_entries(lib, integration);
  if (entries.empty()) throw Error(ErrorCode::EmptyLibrary, "library has no descriptions");
  return finish_manifest(std::move(entries));
}

/// Binds manifest entry i to text id `id_offset + i`. `encoded` is the store
/// the encoder produced for exactly this manifest.
inline PromptLibrary bind_embeddings(const PromptLibrary& lib, const EncodeManifest& manifest,
                                     const EmbeddingStore& encoded, TextId id_offset = 0) {
  if (encoded.kind() != BundleKind::Text) {
    throw Error(ErrorCode::CountMismatch, "binding requires a text bundle");
  }
  if (encoded.n_rows() != manifest.size()) {
    throw Error(ErrorCode::CountMismatch, "text bundle has " + std::to_string(encoded.n_rows()) +
                                              " rows, manifest has " +
                                              std::to_string(manifest.size()));
  }
  if (encoded.fingerprint() != manifest.fingerprint) {
    throw Error(ErrorCode::FingerprintMismatch, "text bundle was encoded from a different manifest");
  }
  PromptLibrary out = lib;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = manifest.entries[i];
    const auto& m = encoded.meta()[i];
    if (m.source_text != e.full_text || m.class_id != e.class_id || m.kind != e.kind) {
      throw Error(ErrorCode::FingerprintMismatch,
                  "text " + std::to_string(i) + " does not match its manifest entry");
    }
    if (e.class_id >= lib.n_classes()) {
      throw Error(ErrorCode::CountMismatch, "manifest names unknown class");
    }
    if (e.template_id && *e.template_id >= lib.n_templates()) {
      throw Error(ErrorCode::CountMismatch, "manifest names unknown template");
    }
    const TextId id = id_offset + static_cast<TextId>(i);
    const std::size_t cell = static_cast<std::size_t>(e.template_id.value_or(0)) * lib.n_classes() + e.class_id;
    switch (e.kind) {
      case TextKind::TemplateInstance:
        out.name_ids_.at(cell) = id;
        break;
      case TextKind::SynonymInstance:
        out.synonym_ids_.at(cell).at(e.description_id.value()) = id;
        break;
      case TextKind::Description:
        out.desc_bindings_[e.class_id].push_back({e.description_id.value(), e.template_id, id});
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json manifest_to_json(const EncodeManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  auto opt = [](const std::optional<std::uint32_t>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto& e : m.entries) {
    entries.push_back({{"manifest_id", e.manifest_id},
                       {"kind", to_string(e.kind)},
                       {"class_id", e.class_id},
                       {"template_id", opt(e.template_id)},
                       {"description_id", opt(e.description_id)},
                       {"full_text", e.full_text}});
  }
  return {{"fingerprint", m.fingerprint}, {"entries", std::move(entries)}};
}

inline EncodeManifest manifest_from_json(const nlohmann::json& j) {
  try {
    EncodeManifest m;
    m.fingerprint = j.at("fingerprint").get<std::string>();
    auto opt = [](const nlohmann::json& v) -> std::optional<std::uint32_t> {
      if (v.is_null()) return std::nullopt;
      return v.get<std::uint32_t>();
    };
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.manifest_id = e.at("manifest_id").get<std::uint32_t>();
      me.kind = parse_text_kind(e.at("kind").get<std::string>());
      me.class_id = e.at("class_id").get<ClassId>();
      me.template_id = opt(e.at("template_id"));
      me.description_id = opt(e.at("description_id"));
      me.full_text = e.at("full_text").get<std::string>();
      m.entries.push_back(std::move(me));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("manifest: ") + e.what());
  }
}

/// Library from already-parsed JSON documents in the input-file formats:
/// templates and domains are string arrays, classes is an array of
/// {class_id, name, synonyms[]}, descriptions an array of {class_id, text}.
inline PromptLibrary library_from_json(const nlohmann::json& templates, const nlohmann::json& domains,
                                       const nlohmann::json& classes, const nlohmann::json& descriptions) {
  try {
    auto tmpl = templates.get<std::vector<std::string>>();
    auto doms = domains.is_null() ? std::vector<std::string>{} : domains.get<std::vector<std::string>>();
    std::vector<ClassEntry> cls(classes.size());
    std::vector<bool> seen(classes.size(), false);
    for (const auto& c : classes) {
      const auto id = c.at("class_id").get<std::size_t>();
      if (id >= cls.size() || seen[id]) {
        throw Error(ErrorCode::ParseError, "class ids must be dense and unique");
      }
      seen[id] = true;
      cls[id].name = c.at("name").get<std::string>();
      if (c.contains("synonyms")) cls[id].synonyms = c.at("synonyms").get<std::vector<std::string>>();
    }
    std::vector<std::vector<std::string>> desc(cls.size());
    if (!descriptions.is_null()) {
      for (const auto& d : descriptions) {
        const auto id = d.at("class_id").get<std::size_t>();
        if (id >= cls.size()) throw Error(ErrorCode::ParseError, "description names unknown class");
        desc[id].push_back(d.at("text").get<std::string>());
      }
    }
    return PromptLibrary(std::move(tmpl), std::move(doms), std::move(cls), std::move(desc));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("library: ") + e.what());
  }
}

/// Combined single-file form: {templates, domains, classes, descriptions}.
/// Templates are written before augmentation would apply; callers that
/// round-trip a library should pass empty domains.
inline nlohmann::json library_files_json(const std::vector<std::string>& templates,
                                         const std::vector<std::string>& domains,
                                         const std::vector<ClassEntry>& classes,
                                         const std::vector<std::vector<std::string>>& descriptions) {
  nlohmann::json cls = nlohmann::json::array();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    cls.push_back({{"class_id", c}, {"name", classes[c].name}, {"synonyms", classes[c].synonyms}});
  }
  nlohmann::json desc = nlohmann::json::array();
  for (std::size_t c = 0; c < descriptions.size(); ++c) {
    for (const auto& t : descriptions[c]) desc.push_back({{"class_id", c}, {"text", t}});
  }
  return {{"templates", templates}, {"domains", domains}, {"classes", std::move(cls)},
          {"descriptions", std::move(desc)}};
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

inline PromptLibrary load_library(const std::filesystem::path& combined) {
  const auto j = read_json(combined);
  if (!j.is_object() || !j.contains("templates") || !j.contains("classes")) {
    throw Error(ErrorCode::ParseError, combined.string() + ": library needs 'templates' and 'classes'");
  }
  return library_from_json(j.at("templates"), j.value("domains", nlohmann::json()),
                           j.at("classes"), j.value("descriptions", nlohmann::json()));
}

inline PromptLibrary load_library(const std::filesystem::path& templates,
                                  const std::optional<std::filesystem::path>& domains,
                                  const std::filesystem::path& classes,
                                  const std::optional<std::filesystem::path>& descriptions) {
  return library_from_json(read_json(templates), domains ? read_json(*domains) : nlohmann::json(),
                           read_json(classes),
                           descriptions ? read_json(*descriptions) : nlohmann::json());
}

}  // namespace proapo
