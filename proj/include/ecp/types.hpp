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

#include <Eigen/Core>
#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecp {

enum class SourceDataset { DAD, DADA2000, DoTA, Nexar, Custom };
enum class Outcome { PositiveEgo, PositiveNonEgo, Negative, SyntheticNegative };
enum class Split { Train, Val, Test };

inline bool is_positive(Outcome o) {
  return o == Outcome::PositiveEgo || o == Outcome::PositiveNonEgo;
}

inline std::string to_string(SourceDataset d) {
  switch (d) {
    case SourceDataset::DAD: return "DAD";
    case SourceDataset::DADA2000: return "DADA2000";
    case SourceDataset::DoTA: return "DoTA";
    case SourceDataset::Nexar: return "Nexar";
    case SourceDataset::Custom: return "custom";
  }
  throw std::logic_error("bad SourceDataset");
}

inline SourceDataset parse_dataset(const std::string& s) {
  if (s == "DAD") return SourceDataset::DAD;
  if (s == "DADA2000" || s == "DADA-2000") return SourceDataset::DADA2000;
  if (s == "DoTA") return SourceDataset::DoTA;
  if (s == "Nexar") return SourceDataset::Nexar;
  if (s == "custom") return SourceDataset::Custom;
  throw std::runtime_error("unknown source_dataset: '" + s + "'");
}

inline std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::PositiveEgo: return "positive_ego";
    case Outcome::PositiveNonEgo: return "positive_non_ego";
    case Outcome::Negative: return "negative";
    case Outcome::SyntheticNegative: return "synthetic_negative";
  }
  throw std::logic_error("bad Outcome");
}

inline Outcome parse_outcome(const std::string& s) {
  if (s == "positive_ego") return Outcome::PositiveEgo;
  if (s == "positive_non_ego") return Outcome::PositiveNonEgo;
  if (s == "negative") return Outcome::Negative;
  if (s == "synthetic_negative") return Outcome::SyntheticNegative;
  throw std::runtime_error("unknown outcome: '" + s + "'");
}

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  throw std::logic_error("bad Split");
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::runtime_error("unknown split: '" + s + "'");
}

// One annotated video. Times are seconds from the start of the video.
struct VideoRecord {
  std::string video_id;
  SourceDataset source_dataset = SourceDataset::Custom;
  double duration_s = 0;
  double fps = 0;
  Outcome outcome = Outcome::Negative;
  std::optional<double> t_alert;   // consensus alert time
  std::optional<double> t_event;   // collision / avoidance-maneuver time
  std::optional<std::string> category;  // third-party class
  std::optional<Split> split;
};

inline void validate(const VideoRecord& r) {
  const auto fail = [&](const std::string& rule) {
    throw std::runtime_error("video " + r.video_id + ": " + rule);
  };
  if (r.video_id.empty()) throw std::runtime_error("video record with empty video_id");
  if (!(r.duration_s > 0)) fail("duration_s must be > 0");
  if (!(r.fps > 0)) fail("fps must be > 0");
  if (is_positive(r.outcome)) {
    if (!r.t_event) fail("positive without event time");
    if (!(*r.t_event > 0 && *r.t_event <= r.duration_s))
      fail("event time outside (0, duration]");
  } else {
    if (r.t_event) fail(to_string(r.outcome) + " with event time");
  }
  if (r.t_alert) {
    if (!(*r.t_alert >= 0)) fail("negative alert time");
    if (*r.t_alert > r.duration_s) fail("alert after end of video");
    if (r.t_event && *r.t_alert > *r.t_event) fail("alert after event");
  }
}

struct AnnotatorMark {
  std::string video_id;
  std::string annotator_id;
  double t_mark = 0;
};

inline void validate(const AnnotatorMark& m) {
  if (!(m.t_mark >= 0))
    throw std::runtime_error("mark for video " + m.video_id + " by " +
                             m.annotator_id + ": t_mark must be >= 0");
}

struct TraceSample {
  double t = 0;
  double score = 0;
};

// Time-stamped collision-probability sequence for one video. Sampling may be
// irregular; only strict time ordering is required.
struct ScoreTrace {
  std::string video_id;
  std::vector<TraceSample> samples;
};

inline void validate(const ScoreTrace& tr) {
  const auto fail = [&](const std::string& rule) {
    throw std::runtime_error("trace for video " + tr.video_id + ": " + rule);
  };
  if (tr.samples.empty()) fail("empty trace");
  double prev = -1;
  bool first = true;
  for (const auto& s : tr.samples) {
    if (!(s.score >= 0 && s.score <= 1)) fail("score outside [0,1]");
    if (!first && !(s.t > prev)) fail("sample times not strictly increasing");
    prev = s.t;
    first = false;
  }
}

// P x D feature tensor for one clip, plus its training label.
struct EmbeddingClip {
  std::string video_id;
  double clip_end_t = 0;
  Eigen::MatrixXd patches;  // P x D
  int label = 0;
};

struct DetectionBox {
  std::string cls;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // normalized image coords
};

struct DetectionFrame {
  double t = 0;
  std::vector<DetectionBox> boxes;
};

struct DetectionTrace {
  std::string video_id;
  std::vector<DetectionFrame> frames;
  std::optional<std::vector<std::array<double, 2>>> lane_polygon;
};

inline void validate(const DetectionTrace& tr) {
  const auto fail = [&](const std::string& rule) {
    throw std::runtime_error("detections for video " + tr.video_id + ": " + rule);
  };
  double prev = -1;
  bool first = true;
  for (const auto& f : tr.frames) {
    if (!first && !(f.t > prev)) fail("frame times not strictly increasing");
    prev = f.t;
    first = false;
    for (const auto& b : f.boxes) {
      if (!(0 <= b.x0 && b.x0 < b.x1 && b.x1 <= 1 && 0 <= b.y0 && b.y0 < b.y1 &&
            b.y1 <= 1))
        fail("malformed box for class '" + b.cls + "'");
    }
  }
}

}  // namespace ecp
