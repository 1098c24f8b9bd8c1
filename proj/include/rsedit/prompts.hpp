// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rsedit/embedder.hpp"
#include "rsedit/error.hpp"

namespace rsedit {

/// System instruction sent to a chat model to obtain paraphrased prompts; the
/// user's prompt follows as the user message.
inline constexpr std::string_view kVariantInstruction =
    "I need you act as a text prompt generator. I will give you a text prompt that you need to use common sense "
    "to translate into a total of five prompts with different descriptions but similar meanings. Each prompt "
    "given meets the same syntax format as the original text prompt and is concise and easy to understand. Here "
    "is an example: Given \"A ship is on fire\", you need to take into account the actual scenario of the ship on "
    "fire and generate the approximate description \"A ship is burning\". You only need to provide the generated "
    "text prompt, you do not need to explain why.";

/// Source of paraphrases for a prompt.
class VariantSource {
 public:
  virtual ~VariantSource() = default;
  /// Up to `count` candidate paraphrases (may contain duplicates or the original).
  virtual std::vector<std::string> paraphrase(const std::string& text, int count) = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string collapse_spaces(const std::string& s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

/// Key used for de-duplication: case, whitespace and trailing punctuation ignored.
inline std::string dedup_key(const std::string& s) {
  std::string k = lower(collapse_spaces(trim(s)));
  while (!k.empty() && (k.back() == '.' || k.back() == '!')) k.pop_back();
  return k;
}

inline std::string regex_escape(std::string_view s) {
  static const std::string special = R"(\^$.|?*+()[]{})";
  std::string out;
  for (char c : s) {
    if (special.find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace detail

/// Offline paraphrase bank. One rule per line:
///
///   <pattern> => <template>
///
/// `{X}` in the pattern captures a span of the prompt and is substituted into
/// the template; the pattern `{T}` matches any prompt with the whole prompt
/// captured. Matching is case-insensitive. Lines starting with '#' are comments.
class TemplateBank final : public VariantSource {
 public:
  struct Rule {
    std::string pattern;
    std::string replacement;
  };

  TemplateBank() = default;
  explicit TemplateBank(std::vector<Rule> rules) : rules_(std::move(rules)) {}

  static TemplateBank parse(std::istream& in) {
    std::vector<Rule> rules;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string trimmed = detail::trim(line);
      if (trimmed.empty() || trimmed.front() == '#') continue;
      const auto arrow = trimmed.find("=>");
      if (arrow == std::string::npos) {
        throw ParseError("template bank line " + std::to_string(line_no) + ": expected '<pattern> => <template>'");
      }
      Rule rule{detail::trim(trimmed.substr(0, arrow)), detail::trim(trimmed.substr(arrow + 2))};
      const bool has_slot = rule.pattern.find("{X}") != std::string::npos || rule.pattern == "{T}";
      if (!has_slot || rule.replacement.empty()) {
        throw ParseError("template bank line " + std::to_string(line_no) + ": pattern needs a {X} or {T} slot");
      }
      rules.push_back(std::move(rule));
    }
    return TemplateBank(std::move(rules));
  }

  static TemplateBank load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open template bank " + path.string());
    return parse(in);
  }

  /// Bank shipped in data/prompt_templates.txt.
  static TemplateBank builtin() {
#ifdef RSEDIT_DATA_DIR
    const std::filesystem::path path = std::filesystem::path(RSEDIT_DATA_DIR) / "prompt_templates.txt";
    if (std::filesystem::exists(path)) return load(path);
#endif
    throw IoError("built-in template bank not found; pass an explicit template file");
  }

  std::vector<std::string> paraphrase(const std::string& text, int count) override {
    std::vector<std::string> out;
    const std::string prompt = detail::collapse_spaces(detail::trim(text));
    for (const Rule& rule : rules_) {
      if (static_cast<int>(out.size()) >= count) break;
      if (rule.pattern == "{T}") {
        out.push_back(fill(rule.replacement, "{T}", prompt));
        continue;
      }
      const std::regex re = compile(rule.pattern);
      std::smatch match;
      if (std::regex_match(prompt, match, re)) out.push_back(fill(rule.replacement, "{X}", match[1].str()));
    }
    return out;
  }

  const std::vector<Rule>& rules() const { return rules_; }

 private:
  static std::regex compile(const std::string& pattern) {
    const auto slot = pattern.find("{X}");
    std::string re = detail::regex_escape(pattern.substr(0, slot)) + "(.+?)" +
                     detail::regex_escape(pattern.substr(slot + 3));
    // Trailing punctuation in the prompt does not block a match.
    re = "^" + re + "[.!]?$";
    return std::regex(re, std::regex::icase);
  }

  static bool starts_with_acronym(const std::string& value) {
    std::size_t n = 0;
    while (n < value.size() && std::isalpha(static_cast<unsigned char>(value[n]))) ++n;
    if (n < 2) return false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isupper(static_cast<unsigned char>(value[i]))) return false;
    }
    return true;
  }

  // Inserts `value`. A capture landing mid-sentence is lower-cased unless it
  // opens with an acronym; the result always starts with a capital.
  static std::string fill(const std::string& tmpl, const std::string& slot, std::string value) {
    std::string out = tmpl;
    const auto at = out.find(slot);
    if (at == std::string::npos) return out;
    if (at > 0 && !value.empty() && !starts_with_acronym(value)) {
      value[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(value[0])));
    }
    out.replace(at, slot.size(), value);
    if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out;
  }

  std::vector<Rule> rules_;
};

/// Parses a chat model's reply into one prompt per line, dropping list
/// numbering, bullets and surrounding quotes.
inline std::vector<std::string> parse_variant_reply(const std::string& reply) {
  static const std::regex prefix(R"(^\s*(?:[-*]|•|\d+[.)]|\(\d+\))\s*)");
  std::vector<std::string> out;
  std::istringstream in(reply);
  std::string line;
  while (std::getline(in, line)) {
    std::string s = std::regex_replace(line, prefix, "");
    s = detail::trim(s);
    while (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
      s = detail::trim(s.substr(1, s.size() - 2));
    }
    if (!s.empty()) out.push_back(s);
  }
  return out;
}

using WarningSink = std::function<void(const std::string&)>;

inline void default_warning(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

/// Prompt plus paraphrases, original first, at most `k` texts in total and no
/// duplicates. A failing `source` falls back to `fallback` with a warning.
inline std::vector<std::string> generate_variants(const std::string& text, VariantSource& source, int k,
                                                  VariantSource* fallback = nullptr,
                                                  const WarningSink& warn = default_warning) {
  const std::string original = detail::collapse_spaces(detail::trim(text));
  if (original.empty()) throw InvalidInput("prompt text is empty");
  if (k < 1) throw InvalidConfig("variant count k must be >= 1");

  std::vector<std::string> texts{original};
  if (k == 1) return texts;

  std::vector<std::string> candidates;
  try {
    candidates = source.paraphrase(original, k);
  } catch (const Error& e) {
    if (!fallback) throw;
    if (warn) warn(std::string("variant generation failed (") + e.what() + "); using the offline template bank");
    candidates = fallback->paraphrase(original, k);
  }

  std::vector<std::string> seen{detail::dedup_key(original)};
  for (const auto& c : candidates) {
    if (static_cast<int>(texts.size()) >= k) break;
    const std::string cleaned = detail::collapse_spaces(detail::trim(c));
    if (cleaned.empty()) continue;
    const std::string key = detail::dedup_key(cleaned);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    texts.push_back(cleaned);
  }
  return texts;
}

/// Mean of unit embeddings, renormalized. Summation runs in a canonical
/// (sorted) order so that the result does not depend on the input order.
inline EmbeddingVector ensemble_embeddings(std::vector<EmbeddingVector> embeddings) {
  if (embeddings.empty()) throw InvalidInput("cannot ensemble an empty set of embeddings");
  const std::size_t dim = embeddings.front().dimension();
  for (const auto& e : embeddings) {
    if (e.dimension() != dim) throw InvalidInput("embedding dimension mismatch in ensemble");
  }
  std::sort(embeddings.begin(), embeddings.end(), [](const EmbeddingVector& a, const EmbeddingVector& b) {
    return std::lexicographical_compare(a.values().begin(), a.values().end(), b.values().begin(), b.values().end());
  });
  std::vector<double> mean(dim, 0.0);
  for (const auto& e : embeddings) {
    for (std::size_t i = 0; i < dim; ++i) mean[i] += e[i];
  }
  for (double& v : mean) v /= static_cast<double>(embeddings.size());
  const double norm = l2_norm<double>(mean);
  if (!(norm > 1e-12)) throw DegenerateEnsemble("prompt embeddings cancel out; the ensemble has no direction");
  return EmbeddingVector::normalized(std::move(mean));
}

struct PromptBundle {
  std::string original;
  std::vector<std::string> variants;  ///< includes the original, first
  std::vector<EmbeddingVector> embeddings;
  EmbeddingVector ensembled;
};

inline EmbeddingVector ensemble_embed(const std::vector<std::string>& texts, const Embedder& embedder) {
  std::vector<EmbeddingVector> embeddings;
  for (const auto& t : texts) {
    if (!detail::trim(t).empty()) embeddings.push_back(embedder.embed_text(t));
  }
  if (embeddings.empty()) throw InvalidInput("no non-empty prompts to ensemble");
  return ensemble_embeddings(std::move(embeddings));
}

inline PromptBundle build_prompt_bundle(const std::string& text, const Embedder& embedder, VariantSource& source,
                                        int k, VariantSource* fallback = nullptr,
                                        const WarningSink& warn = default_warning) {
  PromptBundle bundle;
  bundle.variants = generate_variants(text, source, k, fallback, warn);
  bundle.original = bundle.variants.front();
  for (const auto& v : bundle.variants) bundle.embeddings.push_back(embedder.embed_text(v));
  bundle.ensembled = ensemble_embeddings(bundle.embeddings);
  return bundle;
}

}  // namespace rsedit
