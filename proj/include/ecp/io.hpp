// Copyright 2026 The ecp authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecp/binio.hpp"
#include "ecp/csv.hpp"
#include "ecp/types.hpp"

namespace ecp {

inline constexpr const char* kManifestHeader =
    "video_id,source_dataset,duration_s,fps,outcome,t_alert,t_event,category,split";
inline constexpr const char* kMarksHeader = "video_id,annotator_id,t_mark";
inline constexpr const char* kTraceHeader = "video_id,t,score";
inline constexpr const char* kClipIndexHeader = "video_id,clip_end_t,label";

// ---------------------------------------------------------------------------
// Manifest CSV

inline std::vector<VideoRecord> load_manifest(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kManifestHeader)
    throw std::runtime_error(path + ": missing or malformed manifest header");
  std::vector<VideoRecord> records;
  records.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path + ": row " + std::to_string(i + 1);
    const auto cells = split_csv_row(lines[i]);
    if (cells.size() != 9)
      throw std::runtime_error(where + ": expected 9 fields, got " +
                               std::to_string(cells.size()));
    VideoRecord r;
    try {
      r.video_id = cells[0];
      r.source_dataset = parse_dataset(cells[1]);
      r.duration_s = parse_double(cells[2], "duration_s");
      r.fps = parse_double(cells[3], "fps");
      r.outcome = parse_outcome(cells[4]);
      if (!cells[5].empty()) r.t_alert = parse_double(cells[5], "t_alert");
      if (!cells[6].empty()) r.t_event = parse_double(cells[6], "t_event");
      if (!cells[7].empty()) r.category = cells[7];
      if (!cells[8].empty()) r.split = parse_split(cells[8]);
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    validate(r);
    records.push_back(std::move(r));
  }
  return records;
}

inline std::string manifest_row(const VideoRecord& r) {
  std::string row;
  row += csv_escape(r.video_id);
  row += ',';
  row += to_string(r.source_dataset);
  row += ',';
  row += format_time(r.duration_s);
  row += ',';
  row += format_time(r.fps);
  row += ',';
  row += to_string(r.outcome);
  row += ',';
  if (r.t_alert) row += format_time(*r.t_alert);
  row += ',';
  if (r.t_event) row += format_time(*r.t_event);
  row += ',';
  if (r.category) row += csv_escape(*r.category);
  row += ',';
  if (r.split) row += to_string(*r.split);
  return row;
}

inline void write_manifest(const std::string& path,
                           const std::vector<VideoRecord>& records) {
  auto out = open_out(path);
  out << kManifestHeader << '\n';
  for (const auto& r : records) out << manifest_row(r) << '\n';
}

// ---------------------------------------------------------------------------
// Annotator marks CSV

inline std::vector<AnnotatorMark> load_marks(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kMarksHeader)
    throw std::runtime_error(path + ": missing or malformed marks header");
  std::vector<AnnotatorMark> marks;
  std::map<std::pair<std::string, std::string>, bool> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path + ": row " + std::to_string(i + 1);
    const auto cells = split_csv_row(lines[i]);
    if (cells.size() != 3)
      throw std::runtime_error(where + ": expected 3 fields, got " +
                               std::to_string(cells.size()));
    AnnotatorMark m;
    m.video_id = cells[0];
    m.annotator_id = cells[1];
    try {
      m.t_mark = parse_double(cells[2], "t_mark");
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    validate(m);
    if (seen.count({m.video_id, m.annotator_id}))
      throw std::runtime_error(where + ": duplicate mark for (" + m.video_id +
                               ", " + m.annotator_id + ")");
    seen[{m.video_id, m.annotator_id}] = true;
    marks.push_back(std::move(m));
  }
  return marks;
}

inline void write_marks(const std::string& path,
                        const std::vector<AnnotatorMark>& marks) {
  auto out = open_out(path);
  out << kMarksHeader << '\n';
  for (const auto& m : marks)
    out << csv_escape(m.video_id) << ',' << csv_escape(m.annotator_id) << ','
        << format_time(m.t_mark) << '\n';
}

// ---------------------------------------------------------------------------
// Score traces CSV (one file may hold many videos)

inline std::vector<ScoreTrace> load_score_traces(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kTraceHeader)
    throw std::runtime_error(path + ": missing or malformed trace header");
  std::vector<ScoreTrace> traces;
  std::map<std::string, std::size_t> index;  // video_id -> position
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path + ": row " + std::to_string(i + 1);
    const auto cells = split_csv_row(lines[i]);
    if (cells.size() != 3)
      throw std::runtime_error(where + ": expected 3 fields, got " +
                               std::to_string(cells.size()));
    TraceSample s;
    try {
      s.t = parse_double(cells[1], "t");
      s.score = parse_double(cells[2], "score");
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    auto it = index.find(cells[0]);
    if (it == index.end()) {
      index.emplace(cells[0], traces.size());
      traces.push_back(ScoreTrace{cells[0], {s}});
    } else {
      traces[it->second].samples.push_back(s);
    }
  }
  for (const auto& tr : traces) validate(tr);
  return traces;
}

inline void write_score_traces(const std::string& path,
                               const std::vector<ScoreTrace>& traces) {
  auto out = open_out(path);
  out << kTraceHeader << '\n';
  for (const auto& tr : traces)
    for (const auto& s : tr.samples)
      out << csv_escape(tr.video_id) << ',' << format_time(s.t) << ','
          << format_double(s.score) << '\n';
}

// ---------------------------------------------------------------------------
// Detection traces, JSON-lines. A line is either a frame object
// {"video_id":..,"t":..,"boxes":[..]} or a lane object
// {"video_id":..,"lane_polygon":[[x,y],..]}.

inline std::vector<DetectionTrace> load_detection_traces(const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<DetectionTrace> traces;
  std::map<std::string, std::size_t> index;
  const auto trace_for = [&](const std::string& id) -> DetectionTrace& {
    auto it = index.find(id);
    if (it == index.end()) {
      index.emplace(id, traces.size());
      traces.push_back(DetectionTrace{id, {}, std::nullopt});
      return traces.back();
    }
    return traces[it->second];
  };
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path + ": line " + std::to_string(i + 1);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    if (!j.contains("video_id"))
      throw std::runtime_error(where + ": missing video_id");
    auto& tr = trace_for(j["video_id"].get<std::string>());
    if (j.contains("lane_polygon")) {
      std::vector<std::array<double, 2>> poly;
      for (const auto& pt : j["lane_polygon"])
        poly.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      tr.lane_polygon = std::move(poly);
      continue;
    }
    DetectionFrame f;
    f.t = j.at("t").get<double>();
    for (const auto& jb : j.at("boxes")) {
      DetectionBox b;
      b.cls = jb.at("class").get<std::string>();
      b.x0 = jb.at("x0").get<double>();
      b.y0 = jb.at("y0").get<double>();
      b.x1 = jb.at("x1").get<double>();
      b.y1 = jb.at("y1").get<double>();
      f.boxes.push_back(std::move(b));
    }
    tr.frames.push_back(std::move(f));
  }
  for (const auto& tr : traces) validate(tr);
  return traces;
}

inline void write_detection_traces(const std::string& path,
                                   const std::vector<DetectionTrace>& traces) {
  auto out = open_out(path);
  for (const auto& tr : traces) {
    if (tr.lane_polygon) {
      nlohmann::json j;
      j["video_id"] = tr.video_id;
      j["lane_polygon"] = *tr.lane_polygon;
      out << j.dump() << '\n';
    }
    for (const auto& f : tr.frames) {
      nlohmann::json j;
      j["video_id"] = tr.video_id;
      j["t"] = f.t;
      auto boxes = nlohmann::json::array();
      for (const auto& b : f.boxes) {
        boxes.push_back({{"class", b.cls},
                         {"x0", b.x0},
                         {"y0", b.y0},
                         {"x1", b.x1},
                         {"y1", b.y1}});
      }
      j["boxes"] = boxes;
      out << j.dump() << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Embedding binary: magic "EMB1", u32 LE P, u32 LE D, then P*D f32 LE values,
// patch-major.

inline Eigen::MatrixXd load_embedding_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embedding file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "EMB1", 4) != 0)
    throw std::runtime_error(path + ": not an EMB1 file");
  const std::uint32_t P = detail::read_u32_le(bytes.data() + 4);
  const std::uint32_t D = detail::read_u32_le(bytes.data() + 8);
  if (P < 1 || D < 1) throw std::runtime_error(path + ": P and D must be >= 1");
  const std::size_t expected = 12 + std::size_t(P) * D * 4;
  if (bytes.size() < expected)
    throw std::runtime_error(path + ": truncated payload (have " +
                             std::to_string(bytes.size() - 12) + " bytes, need " +
                             std::to_string(expected - 12) + ")");
  if (bytes.size() > expected)
    throw std::runtime_error(path + ": payload longer than P*D values");
  Eigen::MatrixXd m(P, D);
  const unsigned char* p = bytes.data() + 12;
  for (std::uint32_t i = 0; i < P; ++i) {
    for (std::uint32_t j = 0; j < D; ++j, p += 4) {
      const double v = detail::f32_from_le(p);
      if (!std::isfinite(v))
        throw std::runtime_error(path + ": non-finite value at patch " +
                                 std::to_string(i) + ", dim " + std::to_string(j));
      m(i, j) = v;
    }
  }
  return m;
}

inline EmbeddingClip load_embedding(const std::string& path) {
  EmbeddingClip clip;
  clip.patches = load_embedding_matrix(path);
  return clip;  // video_id / clip_end_t / label supplied by the clip index
}

inline void write_embedding(const std::string& path, const Eigen::MatrixXd& m) {
  if (m.rows() < 1 || m.cols() < 1)
    throw std::runtime_error("embedding must be at least 1x1");
  auto out = open_out(path);
  out.write("EMB1", 4);
  detail::write_u32_le(out, static_cast<std::uint32_t>(m.rows()));
  detail::write_u32_le(out, static_cast<std::uint32_t>(m.cols()));
  std::vector<unsigned char> buf(static_cast<std::size_t>(m.rows()) * m.cols() * 4);
  unsigned char* p = buf.data();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j, p += 4)
      detail::f32_to_le(static_cast<float>(m(i, j)), p);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
}

// Naming convention tying clip-index rows to embedding files.
inline std::string embedding_filename(const std::string& video_id, double clip_end_t) {
  return video_id + "__" + format_time(clip_end_t) + ".emb";
}

// ---------------------------------------------------------------------------
// Clip index CSV: video_id,clip_end_t,label

struct ClipIndexRow {
  std::string video_id;
  double clip_end_t = 0;
  int label = 0;
};

inline std::vector<ClipIndexRow> load_clip_index(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kClipIndexHeader)
    throw std::runtime_error(path + ": missing or malformed clip-index header");
  std::vector<ClipIndexRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path + ": row " + std::to_string(i + 1);
    const auto cells = split_csv_row(lines[i]);
    if (cells.size() != 3)
      throw std::runtime_error(where + ": expected 3 fields, got " +
                               std::to_string(cells.size()));
    ClipIndexRow r;
    r.video_id = cells[0];
    try {
      r.clip_end_t = parse_double(cells[1], "clip_end_t");
      const long label = parse_long(cells[2], "label");
      if (label != 0 && label != 1)
        throw std::runtime_error("label must be 0 or 1");
      r.label = static_cast<int>(label);
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_clip_index(const std::string& path,
                             const std::vector<ClipIndexRow>& rows) {
  auto out = open_out(path);
  out << kClipIndexHeader << '\n';
  for (const auto& r : rows)
    out << csv_escape(r.video_id) << ',' << format_time(r.clip_end_t) << ','
        << r.label << '\n';
}

}  // namespace ecp
