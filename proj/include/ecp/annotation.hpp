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
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecp/csv.hpp"
#include "ecp/types.hpp"

namespace ecp {

// Nearest-rank percentile over a sorted ascending list: the ceil(p/100 * n)-th
// smallest value, 1-indexed.
inline double nearest_rank_percentile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::runtime_error("percentile of empty list");
  const std::size_t n = sorted.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(p / 100.0 * double(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

inline double round_half_up_1dp(double x) {
  return std::floor(x * 10.0 + 0.5) / 10.0;
}

// Median of annotator marks for one video; even counts take the midpoint of
// the two central values.
inline double consensus_alert_time(std::span<const AnnotatorMark> marks) {
  if (marks.empty()) throw std::runtime_error("consensus over empty mark list");
  std::vector<double> ts;
  ts.reserve(marks.size());
  for (const auto& m : marks) {
    if (m.video_id != marks.front().video_id)
      throw std::runtime_error("consensus over mixed video_ids: '" +
                               marks.front().video_id + "' vs '" + m.video_id + "'");
    ts.push_back(m.t_mark);
  }
  std::sort(ts.begin(), ts.end());
  const std::size_t n = ts.size();
  if (n % 2 == 1) return ts[n / 2];
  return 0.5 * (ts[n / 2 - 1] + ts[n / 2]);
}

struct ReactionStats {
  std::size_t n = 0;        // records with both alert and event time
  std::size_t skipped = 0;  // records lacking one of the times
  double median_s = 0;
  double mean_s = 0;
  double sd_s = 0;  // sample standard deviation (n-1)
  std::map<int, double> percentiles;                  // nearest-rank, {5,50,90,95}
  std::vector<std::pair<double, double>> cdf;         // (reaction_s, cum_fraction)
};

// Reaction time = t_event - t_alert. median_s is defined as the nearest-rank
// 50th percentile so it always equals percentiles[50].
inline ReactionStats reaction_time_stats(const std::vector<VideoRecord>& records) {
  ReactionStats st;
  std::vector<double> reactions;
  for (const auto& r : records) {
    if (r.t_alert && r.t_event)
      reactions.push_back(*r.t_event - *r.t_alert);
    else
      ++st.skipped;
  }
  if (reactions.empty())
    throw std::runtime_error("reaction_time_stats: no records with both t_alert and t_event");
  std::sort(reactions.begin(), reactions.end());
  st.n = reactions.size();
  double sum = 0;
  for (double r : reactions) sum += r;
  st.mean_s = sum / double(st.n);
  double ss = 0;
  for (double r : reactions) ss += (r - st.mean_s) * (r - st.mean_s);
  st.sd_s = st.n > 1 ? std::sqrt(ss / double(st.n - 1)) : 0.0;
  for (int p : {5, 50, 90, 95})
    st.percentiles[p] = nearest_rank_percentile(reactions, p);
  st.median_s = st.percentiles[50];
  for (std::size_t i = 0; i < reactions.size(); ++i) {
    const double frac = double(i + 1) / double(st.n);
    if (!st.cdf.empty() && st.cdf.back().first == reactions[i])
      st.cdf.back().second = frac;  // collapse duplicates, keep the last fraction
    else
      st.cdf.emplace_back(reactions[i], frac);
  }
  return st;
}

inline nlohmann::json to_json(const ReactionStats& st) {
  nlohmann::json j;
  j["n"] = st.n;
  j["skipped"] = st.skipped;
  j["median_s"] = st.median_s;
  j["mean_s"] = st.mean_s;
  j["sd_s"] = st.sd_s;
  nlohmann::json pct;
  for (const auto& [p, v] : st.percentiles) pct[std::to_string(p)] = v;
  j["percentiles"] = pct;
  j["cdf"] = st.cdf;
  return j;
}

inline void write_reaction_cdf(const std::string& path, const ReactionStats& st) {
  auto out = open_out(path);
  out << "reaction_s,cum_fraction\n";
  for (const auto& [r, f] : st.cdf)
    out << format_time(r) << ',' << format_double(f) << '\n';
}

struct EgoInvolvementRow {
  SourceDataset dataset = SourceDataset::Custom;
  std::size_t n_pos_ego = 0;
  std::size_t n_pos_not_ego = 0;
  std::size_t n_less_horizon = 0;  // positives removed by the horizon filter
  std::size_t n_negative = 0;
  double pct_not_ego = 0;
  bool no_positives = false;  // flag: percentage undefined, reported as 0.0
};

// Per-dataset bookkeeping of ego involvement. Positives with t_event below the
// horizon are counted only in n_less_horizon; the percentage is over retained
// positives, rounded half-up to one decimal.
inline std::vector<EgoInvolvementRow> ego_involvement_table(
    const std::vector<VideoRecord>& records, double horizon_s = 2.0) {
  std::map<SourceDataset, EgoInvolvementRow> rows;
  for (const auto& r : records) {
    auto& row = rows[r.source_dataset];
    row.dataset = r.source_dataset;
    if (is_positive(r.outcome)) {
      if (*r.t_event < horizon_s) {
        ++row.n_less_horizon;
      } else if (r.outcome == Outcome::PositiveEgo) {
        ++row.n_pos_ego;
      } else {
        ++row.n_pos_not_ego;
      }
    } else {
      ++row.n_negative;
    }
  }
  std::vector<EgoInvolvementRow> out;
  for (auto& [ds, row] : rows) {
    const std::size_t pos = row.n_pos_ego + row.n_pos_not_ego;
    if (pos == 0) {
      row.no_positives = true;
      row.pct_not_ego = 0.0;
    } else {
      row.pct_not_ego = round_half_up_1dp(100.0 * double(row.n_pos_not_ego) / double(pos));
    }
    out.push_back(row);
  }
  return out;
}

inline void write_ego_involvement(const std::string& path,
                                  const std::vector<EgoInvolvementRow>& rows) {
  auto out = open_out(path);
  out << "dataset,n_pos_ego,n_pos_not_ego,n_less_horizon,n_negative,pct_not_ego,no_positives\n";
  for (const auto& r : rows) {
    char pct[16];
    std::snprintf(pct, sizeof pct, "%.1f", r.pct_not_ego);
    out << to_string(r.dataset) << ',' << r.n_pos_ego << ',' << r.n_pos_not_ego
        << ',' << r.n_less_horizon << ',' << r.n_negative << ',' << pct << ','
        << (r.no_positives ? 1 : 0) << '\n';
  }
}

}  // namespace ecp
