// Detection scoring: greedy IoU matching, miss-rate/FPPI curves, the
// miss-rate summary at a target FPPI, and dataset statistics.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "imposters/dataset.hpp"
#include "imposters/detector.hpp"
#include "imposters/geometry.hpp"

namespace imposters {

struct MatchResult {
  int truePositives = 0;
  int falsePositives = 0;
  int missedGroundTruths = 0;
  std::vector<bool> detectionMatched;  // parallel to the sorted detections
};

// Caltech-style greedy matching: detections in descending score order, each
// matched to the unmatched ground truth of highest IoU if that IoU clears
// the overlap threshold.
inline MatchResult match_detections(std::vector<Detection> dets,
                                    const std::vector<BBox>& gts, double overlap) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  MatchResult out;
  out.detectionMatched.assign(dets.size(), false);
  std::vector<bool> gtUsed(gts.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    double best = 0;
    int bestGt = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gtUsed[j]) continue;
      const double v = iou(dets[i].box, gts[j]);
      if (v > best) {
        best = v;
        bestGt = static_cast<int>(j);
      }
    }
    if (bestGt >= 0 && best >= overlap) {
      gtUsed[bestGt] = true;
      out.detectionMatched[i] = true;
      ++out.truePositives;
    } else {
      ++out.falsePositives;
    }
  }
  out.missedGroundTruths = static_cast<int>(gts.size()) - out.truePositives;
  return out;
}

struct RocPoint {
  double threshold;
  double fppi;
  double missRate;
};

struct RocCurve {
  std::vector<RocPoint> points;  // ordered by ascending threshold
  double overlap = 0.5;
};

struct EvalImage {
  std::vector<Detection> detections;
  std::vector<BBox> groundTruths;
};

// Sweeps every distinct detection score as a threshold; keeping detections
// with score >= threshold and matching per image. Greedy matching processes
// detections in descending score order, so the match outcome of a detection
// never depends on lower-scored ones; one full match per image therefore
// yields the whole sweep via cumulative counts.
inline RocCurve compute_roc(const std::vector<EvalImage>& images, double overlap) {
  std::size_t totalGt = 0;
  for (const auto& im : images) totalGt += im.groundTruths.size();
  if (totalGt == 0) throw std::domain_error("compute_roc: no ground truths");

  // (score, isTruePositive) for every detection, matched once per image.
  std::vector<std::pair<double, bool>> outcomes;
  for (const auto& im : images) {
    std::vector<Detection> sorted = im.detections;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    const MatchResult r = match_detections(sorted, im.groundTruths, overlap);
    for (std::size_t i = 0; i < sorted.size(); ++i)
      outcomes.emplace_back(sorted[i].score, r.detectionMatched[i]);
  }

  std::sort(outcomes.begin(), outcomes.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  RocCurve curve;
  curve.overlap = overlap;
  if (outcomes.empty()) {
    curve.points.push_back({1.0, 0.0, 1.0});
    return curve;
  }
  // Walk ascending scores; at each distinct score the suffix is what remains.
  std::size_t tpSuffix = 0, fpSuffix = 0;
  for (const auto& [score, tp] : outcomes) (tp ? tpSuffix : fpSuffix)++;
  std::size_t i = 0;
  while (i < outcomes.size()) {
    const double th = outcomes[i].first;
    curve.points.push_back(
        {th, static_cast<double>(fpSuffix) / static_cast<double>(images.size()),
         1.0 - static_cast<double>(tpSuffix) / static_cast<double>(totalGt)});
    while (i < outcomes.size() && outcomes[i].first == th) {
      (outcomes[i].second ? tpSuffix : fpSuffix)--;
      ++i;
    }
  }
  return curve;
}

// Log-linear interpolation of miss rate at the target FPPI; clamped to the
// nearest endpoint (with the flag set) when the curve never reaches it.
inline double miss_rate_at(const RocCurve& curve, double fppiTarget = 0.1,
                           bool* clamped = nullptr) {
  if (curve.points.empty()) throw std::domain_error("miss_rate_at: empty curve");
  if (clamped) *clamped = false;
  // Sort by fppi ascending for interpolation.
  std::vector<RocPoint> pts = curve.points;
  std::sort(pts.begin(), pts.end(),
            [](const RocPoint& a, const RocPoint& b) { return a.fppi < b.fppi; });
  if (fppiTarget <= pts.front().fppi) {
    if (clamped && fppiTarget < pts.front().fppi) *clamped = true;
    return pts.front().missRate;
  }
  if (fppiTarget >= pts.back().fppi) {
    if (clamped && fppiTarget > pts.back().fppi) *clamped = true;
    return pts.back().missRate;
  }
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].fppi >= fppiTarget) {
      const RocPoint& a = pts[i - 1];
      const RocPoint& b = pts[i];
      if (b.fppi == a.fppi || a.fppi <= 0) return b.missRate;
      const double t = (std::log(fppiTarget) - std::log(a.fppi)) /
                       (std::log(b.fppi) - std::log(a.fppi));
      return a.missRate + t * (b.missRate - a.missRate);
    }
  }
  return pts.back().missRate;
}

inline void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << "threshold,fppi,miss_rate\n";
  for (const auto& p : curve.points)
    out << p.threshold << "," << p.fppi << "," << p.missRate << "\n";
}

// Minimal SVG plot with a log-scaled FPPI axis.
inline void write_roc_svg(const RocCurve& curve, const std::filesystem::path& path) {
  const int W = 640, H = 480, margin = 50;
  const double fppiMin = 1e-3, fppiMax = 10.0;
  auto px = [&](double fppi) {
    const double f = std::clamp(fppi, fppiMin, fppiMax);
    return margin + (std::log10(f) - std::log10(fppiMin)) /
                        (std::log10(fppiMax) - std::log10(fppiMin)) * (W - 2 * margin);
  };
  auto py = [&](double mr) { return H - margin - mr * (H - 2 * margin); };
  std::ofstream out(path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
      << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  out << "<line x1='" << margin << "' y1='" << H - margin << "' x2='" << W - margin
      << "' y2='" << H - margin << "' stroke='black'/>\n";
  out << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
      << H - margin << "' stroke='black'/>\n";
  out << "<text x='" << W / 2 << "' y='" << H - 12 << "'>fppi (log)</text>\n";
  out << "<text x='8' y='" << H / 2 << "' transform='rotate(-90 14," << H / 2
      << ")'>miss rate</text>\n";
  std::vector<RocPoint> pts = curve.points;
  std::sort(pts.begin(), pts.end(),
            [](const RocPoint& a, const RocPoint& b) { return a.fppi < b.fppi; });
  out << "<polyline fill='none' stroke='crimson' stroke-width='2' points='";
  for (const auto& p : pts) out << px(p.fppi) << "," << py(p.missRate) << " ";
  out << "'/>\n</svg>\n";
}

struct DatasetStats {
  std::map<int, double> peoplePerImagePct;          // count -> percentage
  std::map<std::string, double> personTypePct;      // type name -> percentage
};

inline DatasetStats dataset_stats(const std::vector<GroundTruthLabel>& labels) {
  DatasetStats s;
  if (labels.empty()) return s;
  std::map<int, int> countHist;
  std::map<std::string, int> typeHist;
  int totalPeople = 0;
  for (const auto& gt : labels) {
    ++countHist[static_cast<int>(gt.boxes.size())];
    for (auto t : gt.personTypes) {
      ++typeHist[person_type_name(t)];
      ++totalPeople;
    }
  }
  for (const auto& [count, n] : countHist)
    s.peoplePerImagePct[count] = 100.0 * n / static_cast<double>(labels.size());
  for (const auto& [type, n] : typeHist)
    s.personTypePct[type] = 100.0 * n / static_cast<double>(totalPeople);
  return s;
}

inline void write_stats_csv(const DatasetStats& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << "kind,key,percent\n";
  for (const auto& [count, pct] : s.peoplePerImagePct)
    out << "people_per_image," << count << "," << pct << "\n";
  for (const auto& [type, pct] : s.personTypePct)
    out << "person_type," << type << "," << pct << "\n";
}

inline void write_stats_svg(const DatasetStats& s, const std::filesystem::path& path) {
  const int W = 640, H = 360, margin = 40;
  std::ofstream out(path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
      << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  const std::size_t bars = s.peoplePerImagePct.size() + s.personTypePct.size();
  if (bars > 0) {
    const double bw = static_cast<double>(W - 2 * margin) / bars;
    std::size_t i = 0;
    auto bar = [&](const std::string& label, double pct, const char* color) {
      const double x = margin + i * bw;
      const double h = pct / 100.0 * (H - 2 * margin);
      out << "<rect x='" << x + 2 << "' y='" << H - margin - h << "' width='" << bw - 4
          << "' height='" << h << "' fill='" << color << "'/>\n";
      out << "<text x='" << x + bw / 2 << "' y='" << H - margin + 14
          << "' font-size='10' text-anchor='middle'>" << label << "</text>\n";
      ++i;
    };
    for (const auto& [count, pct] : s.peoplePerImagePct)
      bar(std::to_string(count), pct, "steelblue");
    for (const auto& [type, pct] : s.personTypePct) bar(type, pct, "darkorange");
  }
  out << "</svg>\n";
}

}  // namespace imposters
