#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "proapo/detail/digest.hpp"
#include "proapo/embedding_store.hpp"

namespace proapo {

/// One point of the search space: a template set shared by all classes plus
/// a description subset per class. Equality ignores generation_tag.
struct CandidatePrompt {
  std::set<std::uint32_t> template_ids;
  std::vector<std::set<TextId>> desc_ids;  // indexed by class id
  std::uint64_t generation_tag = 0;

  CandidatePrompt() = default;
  CandidatePrompt(std::set<std::uint32_t> templates, std::size_t n_classes)
      : template_ids(std::move(templates)), desc_ids(n_classes) {}

  [[nodiscard]] std::size_t n_classes() const noexcept { return desc_ids.size(); }

  [[nodiscard]] std::size_t total_descriptions() const noexcept {
    std::size_t n = 0;
    for (const auto& s : desc_ids) n += s.size();
    return n;
  }

  friend bool operator==(const CandidatePrompt& a, const CandidatePrompt& b) {
    return a.template_ids == b.template_ids && a.desc_ids == b.desc_ids;
  }
};

/// Strict weak order on candidate values (tag ignored).
struct CandidateValueLess {
  bool operator()(const CandidatePrompt& a, const CandidatePrompt& b) const {
    if (a.template_ids != b.template_ids) return a.template_ids < b.template_ids;
    return a.desc_ids < b.desc_ids;
  }
};

inline std::string canonical_string(const CandidatePrompt& p) {
  std::string s = "t:";
  for (auto t : p.template_ids) s += std::to_string(t) + ",";
  for (std::size_t c = 0; c < p.desc_ids.size(); ++c) {
    s += "|" + std::to_string(c) + ":";
    for (auto d : p.desc_ids[c]) s += std::to_string(d) + ",";
  }
  return s;
}

inline std::string digest(const CandidatePrompt& p) { return detail::sha256_hex(canonical_string(p)); }

inline nlohmann::json to_json(const CandidatePrompt& p) {
  return {{"template_ids", p.template_ids}, {"desc_ids", p.desc_ids}, {"digest", digest(p)}};
}

inline CandidatePrompt candidate_from_json(const nlohmann::json& j) {
  CandidatePrompt p;
  p.template_ids = j.at("template_ids").get<std::set<std::uint32_t>>();
  p.desc_ids = j.at("desc_ids").get<std::vector<std::set<TextId>>>();
  return p;
}

}  // namespace proapo
