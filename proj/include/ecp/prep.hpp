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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ecp/rng.hpp"
#include "ecp/types.hpp"

namespace ecp {

enum class LabelAnchor { Event, Alert };

struct PrepConfig {
  double horizon_s = 2.0;            // minimum anticipation horizon
  double synth_neg_len_s = 4.0;      // synthetic negative prefix length
  double synth_neg_min_alert_s = 4.5;  // earliest alert eligible for carving
  double label_window_s = 1.5;
  int oversample_rate = 2;
  int clip_frames = 16;
  int stride_frames = 8;  // half-overlap sliding windows
  LabelAnchor label_anchor = LabelAnchor::Event;
  std::uint64_t split_seed = 0;
};

inline void validate(const PrepConfig& c) {
  if (!(c.synth_neg_len_s < c.synth_neg_min_alert_s))
    throw std::runtime_error("prep config: synth_neg_len_s must be < synth_neg_min_alert_s");
  if (!(c.label_window_s > 0))
    throw std::runtime_error("prep config: label_window_s must be > 0");
  if (c.oversample_rate < 1)
    throw std::runtime_error("prep config: oversample_rate must be >= 1");
  if (c.clip_frames < 1 || c.stride_frames < 1)
    throw std::runtime_error("prep config: clip_frames and stride_frames must be >= 1");
  if (!(c.horizon_s >= 0))
    throw std::runtime_error("prep config: horizon_s must be >= 0");
}

// Positives whose event falls before the horizon cannot be anticipated and are
// removed; the boundary t_event == horizon_s is kept. Negatives always pass.
inline std::pair<std::vector<VideoRecord>, std::vector<VideoRecord>>
filter_insufficient_horizon(const std::vector<VideoRecord>& records, double horizon_s) {
  std::vector<VideoRecord> kept, removed;
  for (const auto& r : records) {
    if (is_positive(r.outcome) && *r.t_event < horizon_s)
      removed.push_back(r);
    else
      kept.push_back(r);
  }
  return {std::move(kept), std::move(removed)};
}

// Carves a no-threat prefix from a positive whose alert comes at
// synth_neg_min_alert_s or later. The carved record covers
// [0, synth_neg_len_s] of the source video and never overlaps the alert.
inline std::optional<VideoRecord> carve_synthetic_negative(
    const VideoRecord& record, const PrepConfig& cfg = {}) {
  if (!is_positive(record.outcome))
    throw std::runtime_error("carve_synthetic_negative: record " + record.video_id +
                             " is not positive");
  if (!record.t_alert)
    throw std::runtime_error("carve_synthetic_negative: record " + record.video_id +
                             " has no t_alert");
  if (*record.t_alert < cfg.synth_neg_min_alert_s) return std::nullopt;
  VideoRecord synth;
  synth.video_id = record.video_id + "#synneg";
  synth.source_dataset = record.source_dataset;
  synth.duration_s = cfg.synth_neg_len_s;
  synth.fps = record.fps;
  synth.outcome = Outcome::SyntheticNegative;
  synth.split = record.split;
  return synth;
}

// Clip end times for a sliding window of clip_frames frames with the given
// stride. Frames are 1..floor(duration*fps); a window ending at frame f ends
// at time f/fps.
inline std::vector<double> clip_end_times(const VideoRecord& record,
                                          int clip_frames, int stride_frames) {
  const long n_frames = static_cast<long>(std::floor(record.duration_s * record.fps + 1e-9));
  std::vector<double> ends;
  for (long start = 0; start + clip_frames <= n_frames; start += stride_frames)
    ends.push_back(double(start + clip_frames) / record.fps);
  return ends;
}

// label(t) = 1 iff the record is positive and anchor - window <= t <= anchor.
inline std::vector<int> label_clips(const VideoRecord& record,
                                    const std::vector<double>& clip_end_times,
                                    double label_window_s,
                                    LabelAnchor anchor = LabelAnchor::Event) {
  std::optional<double> anchor_t;
  if (is_positive(record.outcome)) {
    anchor_t = anchor == LabelAnchor::Event ? record.t_event : record.t_alert;
    if (!anchor_t)
      throw std::runtime_error("label_clips: record " + record.video_id +
                               " lacks the configured anchor time");
  }
  std::vector<int> labels;
  labels.reserve(clip_end_times.size());
  for (double t : clip_end_times) {
    if (t < 0 || t > record.duration_s)
      throw std::runtime_error("label_clips: clip end " + std::to_string(t) +
                               " outside [0, duration] for video " + record.video_id);
    const bool pos = anchor_t && *anchor_t - label_window_s <= t && t <= *anchor_t;
    labels.push_back(pos ? 1 : 0);
  }
  return labels;
}

// Index-level oversampling: originals in order, then rate-1 passes over the
// positives in order. Duplicates enter training as independent items.
inline std::vector<std::size_t> oversample_indices(const std::vector<int>& labels,
                                                   int rate) {
  if (rate < 1) throw std::runtime_error("oversample: rate must be >= 1");
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out.push_back(i);
  for (int r = 1; r < rate; ++r)
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == 1) out.push_back(i);
  return out;
}

inline std::vector<EmbeddingClip> oversample(const std::vector<EmbeddingClip>& clips,
                                             int rate) {
  std::vector<int> labels;
  labels.reserve(clips.size());
  for (const auto& c : clips) labels.push_back(c.label);
  std::vector<EmbeddingClip> out;
  for (std::size_t i : oversample_indices(labels, rate)) out.push_back(clips[i]);
  return out;
}

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Stratified by outcome class: within each stratum records are ordered by a
// seeded hash of video_id and cut by largest-remainder quantiles, so the
// assignment is deterministic and per-stratum sizes land within one of the
// requested fractions.
inline std::vector<VideoRecord> make_splits(std::vector<VideoRecord> records,
                                            const SplitFractions& fractions,
                                            std::uint64_t seed,
                                            bool respect_existing = false) {
  const double sum = fractions.train + fractions.val + fractions.test;
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::runtime_error("make_splits: fractions must sum to 1, got " +
                             std::to_string(sum));
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0)
    throw std::runtime_error("make_splits: fractions must be non-negative");

  std::map<Outcome, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (respect_existing && records[i].split) continue;
    strata[records[i].outcome].push_back(i);
  }
  for (auto& [outcome, idx] : strata) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto ha = mix64(seed, stable_hash64(records[a].video_id));
      const auto hb = mix64(seed, stable_hash64(records[b].video_id));
      if (ha != hb) return ha < hb;
      return records[a].video_id < records[b].video_id;
    });
    const std::size_t n = idx.size();
    const double targets[3] = {fractions.train * double(n), fractions.val * double(n),
                               fractions.test * double(n)};
    std::size_t counts[3];
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      counts[k] = static_cast<std::size_t>(std::floor(targets[k] + 1e-9));
      assigned += counts[k];
    }
    // distribute the remainder by largest fractional part, ties favoring
    // train then val then test
    std::vector<int> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return targets[a] - std::floor(targets[a]) > targets[b] - std::floor(targets[b]);
    });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[order[r % 3]];

    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
      const Split s = k == 0 ? Split::Train : k == 1 ? Split::Val : Split::Test;
      for (std::size_t c = 0; c < counts[k]; ++c) records[idx[pos++]].split = s;
    }
  }
  return records;
}

}  // namespace ecp
