// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsedit/embedder.hpp"
#include "rsedit/error.hpp"
#include "rsedit/image.hpp"

namespace rsedit {

/// omega * max(cos(e_image, e_text), 0). Stored as a fraction; multiply by
/// 100 for the usual percentage display.
inline double clip_score_from_embeddings(std::span<const double> image_embedding,
                                         std::span<const double> text_embedding, double omega = 1.0) {
  return omega * std::max(cosine_similarity(image_embedding, text_embedding), 0.0);
}

inline double clip_score(const Image<double>& image, const std::string& text, const Embedder& embedder,
                         double omega = 1.0) {
  const EmbeddingVector e_i = embedder.embed_image(image);
  const EmbeddingVector e_t = embedder.embed_text(text);
  return clip_score_from_embeddings(e_i.values(), e_t.values(), omega);
}

struct ScoreRecord {
  std::string path;
  std::string prompt;
  double score = 0.0;
};

struct ScoreReport {
  std::string embedder_id;
  double omega = 1.0;
  std::vector<ScoreRecord> records;

  double mean() const {
    if (records.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& r : records) acc += r.score;
    return acc / static_cast<double>(records.size());
  }
};

/// One JSON object per line: {"path", "prompt", "score", "embedder"}.
inline void write_score_report(const ScoreReport& report, std::ostream& out) {
  for (const auto& r : report.records) {
    const nlohmann::json line = {
        {"path", r.path}, {"prompt", r.prompt}, {"score", r.score}, {"embedder", report.embedder_id}};
    out << line.dump() << '\n';
  }
}

inline void write_score_report(const ScoreReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write score report " + path.string());
  write_score_report(report, out);
}

inline ScoreReport read_score_report(std::istream& in) {
  ScoreReport report;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      report.records.push_back({j.at("path"), j.at("prompt"), j.at("score")});
      if (j.contains("embedder")) report.embedder_id = j.at("embedder");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed score record: ") + e.what());
    }
  }
  return report;
}

}  // namespace rsedit
