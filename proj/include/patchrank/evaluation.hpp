#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "patchrank/data.hpp"
#include "patchrank/errors.hpp"
#include "patchrank/image_io.hpp"
#include "patchrank/scoring.hpp"

namespace patchrank {

/// One scored sample; higher score means more abnormal.
struct LabeledScore {
  double score = 0.0;
  bool abnormal = false;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // predict abnormal when score >= threshold
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

inline std::vector<LabeledScore> labeled_scores(const std::vector<ScoreReport>& reports) {
  std::vector<LabeledScore> out;
  for (const auto& r : reports) {
    if (r.label == Label::kUnlabeled) continue;
    out.push_back({r.abnormal_score, r.label == Label::kAbnormal});
  }
  return out;
}

/// ROC by sweeping the threshold over distinct scores, highest first. Tied
/// scores move together in one step, so the trapezoid rule counts tied
/// (abnormal, normal) pairs as one half.
inline RocCurve compute_roc(std::vector<LabeledScore> scores) {
  const auto pos = static_cast<std::size_t>(
      std::count_if(scores.begin(), scores.end(), [](const auto& s) { return s.abnormal; }));
  const std::size_t neg = scores.size() - pos;
  if (pos == 0) throw DataError("ROC needs at least one abnormal sample; none found");
  if (neg == 0) throw DataError("ROC needs at least one normal sample; none found");
  std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.score > b.score; });

  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  double area2 = 0.0;  // twice the area, in units of pairs
  for (std::size_t i = 0; i < scores.size();) {
    const double threshold = scores[i].score;
    std::size_t dtp = 0, dfp = 0;
    for (; i < scores.size() && scores[i].score == threshold; ++i) (scores[i].abnormal ? dtp : dfp) += 1;
    area2 += static_cast<double>(dfp) * static_cast<double>(2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos), threshold});
  }
  roc.auc = area2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return roc;
}

/// Trapezoidal area under arbitrary (fpr, tpr) points.
inline double trapezoid_area(const std::vector<RocPoint>& pts) {
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return a;
}

struct DistributionSummary {
  std::vector<double> edges;  // bins + 1, shared by both classes
  std::vector<std::size_t> normal_counts;
  std::vector<std::size_t> abnormal_counts;
  double normal_mean = 0.0, abnormal_mean = 0.0;
  double normal_median = 0.0, abnormal_median = 0.0;
  double overlap = 0.0;  // sum over bins of min(p_normal, p_abnormal)
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Per-class histograms over shared edges spanning [min, max] of all scores.
inline DistributionSummary summarize_distributions(const std::vector<LabeledScore>& scores, int bins) {
  if (bins < 1) throw ConfigError("histogram bins must be >= 1");
  std::vector<double> normal, abnormal;
  for (const auto& s : scores) (s.abnormal ? abnormal : normal).push_back(s.score);
  if (normal.empty()) throw DataError("distribution summary needs normal samples");
  if (abnormal.empty()) throw DataError("distribution summary needs abnormal samples");

  DistributionSummary d;
  d.normal_mean = detail::mean(normal);
  d.abnormal_mean = detail::mean(abnormal);
  d.normal_median = detail::median(normal);
  d.abnormal_median = detail::median(abnormal);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : scores) {
    lo = std::min(lo, s.score);
    hi = std::max(hi, s.score);
  }
  if (!(hi > lo)) {
    d.edges = {lo, hi};
    d.normal_counts = {normal.size()};
    d.abnormal_counts = {abnormal.size()};
    d.overlap = 1.0;
    return d;
  }
  const auto nb = static_cast<std::size_t>(bins);
  d.edges.resize(nb + 1);
  for (std::size_t i = 0; i <= nb; ++i) d.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(nb);
  d.edges.back() = hi;
  auto bin_of = [&](double v) {
    const auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(nb));
    return std::min(b, nb - 1);
  };
  d.normal_counts.assign(nb, 0);
  d.abnormal_counts.assign(nb, 0);
  for (double v : normal) ++d.normal_counts[bin_of(v)];
  for (double v : abnormal) ++d.abnormal_counts[bin_of(v)];
  for (std::size_t b = 0; b < nb; ++b) {
    d.overlap += std::min(static_cast<double>(d.normal_counts[b]) / static_cast<double>(normal.size()),
                          static_cast<double>(d.abnormal_counts[b]) / static_cast<double>(abnormal.size()));
  }
  return d;
}

struct RunComparison {
  double auc_a = 0.0, auc_b = 0.0;
  double delta_auc = 0.0;  // b - a
  double normal_mean_a = 0.0, abnormal_mean_a = 0.0;
  double normal_mean_b = 0.0, abnormal_mean_b = 0.0;
};

/// AUC and class means of two score runs over the same ids.
inline RunComparison compare_runs(const std::vector<ScoreReport>& a, const std::vector<ScoreReport>& b) {
  std::set<std::string> ia, ib;
  for (const auto& r : a) ia.insert(r.id);
  for (const auto& r : b) ib.insert(r.id);
  if (ia != ib) {
    std::vector<std::string> diff;
    std::set_symmetric_difference(ia.begin(), ia.end(), ib.begin(), ib.end(), std::back_inserter(diff));
    std::string msg = "score runs cover different ids:";
    for (std::size_t i = 0; i < diff.size() && i < 20; ++i) msg += " " + diff[i];
    if (diff.size() > 20) msg += " ... (" + std::to_string(diff.size()) + " total)";
    throw DataError(msg);
  }
  RunComparison c;
  const auto sa = labeled_scores(a), sb = labeled_scores(b);
  c.auc_a = compute_roc(sa).auc;
  c.auc_b = compute_roc(sb).auc;
  c.delta_auc = c.auc_b - c.auc_a;
  const auto da = summarize_distributions(sa, 1), db = summarize_distributions(sb, 1);
  c.normal_mean_a = da.normal_mean;
  c.abnormal_mean_a = da.abnormal_mean;
  c.normal_mean_b = db.normal_mean;
  c.abnormal_mean_b = db.abnormal_mean;
  return c;
}

// ---------------------------------------------------------------------------
// Output files

inline std::ofstream open_output(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  return out;
}

inline void write_roc_csv(const std::filesystem::path& file, const RocCurve& roc) {
  auto out = open_output(file);
  out << "threshold,fpr,tpr\n";
  for (const auto& p : roc.points) {
    out << (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) << ','
        << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
  }
}

inline void write_hist_csv(const std::filesystem::path& file, const DistributionSummary& d) {
  auto out = open_output(file);
  out << "bin_lo,bin_hi,normal,abnormal\n";
  for (std::size_t b = 0; b < d.normal_counts.size(); ++b) {
    out << format_double(d.edges[b]) << ',' << format_double(d.edges[b + 1]) << ',' << d.normal_counts[b] << ','
        << d.abnormal_counts[b] << '\n';
  }
}

inline void write_compare_csv(const std::filesystem::path& file, const RunComparison& c) {
  auto out = open_output(file);
  out << "run,auc,normal_mean,abnormal_mean\n";
  out << "a," << format_double(c.auc_a) << ',' << format_double(c.normal_mean_a) << ','
      << format_double(c.abnormal_mean_a) << '\n';
  out << "b," << format_double(c.auc_b) << ',' << format_double(c.normal_mean_b) << ','
      << format_double(c.abnormal_mean_b) << '\n';
  out << "delta_auc," << format_double(c.delta_auc) << ",,\n";
}

// Plain raster plots; 8-bit RGB, white background.
namespace detail {

struct Canvas {
  int w, h;
  std::vector<std::uint8_t> px;
  Canvas(int width, int height) : w(width), h(height), px(static_cast<std::size_t>(width) * height * 3, 255) {}
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    auto* p = &px[(static_cast<std::size_t>(y) * w + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  void line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
    for (int i = 0; i <= steps; ++i) {
      set(x0 + (x1 - x0) * i / steps, y0 + (y1 - y0) * i / steps, r, g, b);
    }
  }
  RawImage image() const { return {w, h, 3, px}; }
};

}  // namespace detail

inline void write_roc_png(const std::filesystem::path& file, const RocCurve& roc, int size = 256) {
  detail::Canvas c(size, size);
  const int m = 8, span = size - 2 * m;
  auto X = [&](double f) { return m + static_cast<int>(std::lround(f * span)); };
  auto Y = [&](double t) { return size - 1 - m - static_cast<int>(std::lround(t * span)); };
  c.line(X(0), Y(0), X(1), Y(0), 0, 0, 0);
  c.line(X(0), Y(0), X(0), Y(1), 0, 0, 0);
  c.line(X(0), Y(0), X(1), Y(1), 180, 180, 180);
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& a = roc.points[i - 1];
    const auto& b = roc.points[i];
    c.line(X(a.fpr), Y(a.tpr), X(b.fpr), Y(b.tpr), 200, 30, 30);
  }
  write_png(file, c.image());
}

inline void write_hist_png(const std::filesystem::path& file, const DistributionSummary& d, int width = 320,
                           int height = 200) {
  detail::Canvas c(width, height);
  const std::size_t nb = d.normal_counts.size();
  std::size_t top = 1;
  for (std::size_t b = 0; b < nb; ++b) top = std::max({top, d.normal_counts[b], d.abnormal_counts[b]});
  const int m = 8;
  const double bw = static_cast<double>(width - 2 * m) / static_cast<double>(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    const int x0 = m + static_cast<int>(bw * static_cast<double>(b));
    const int x1 = m + static_cast<int>(bw * static_cast<double>(b + 1)) - 1;
    const int mid = (x0 + x1) / 2;
    auto bar = [&](int xa, int xb, std::size_t count, std::uint8_t r, std::uint8_t g, std::uint8_t bl) {
      const int hgt = static_cast<int>(static_cast<double>(count) / static_cast<double>(top) * (height - 2 * m));
      for (int x = xa; x <= xb; ++x) c.line(x, height - 1 - m, x, height - 1 - m - hgt, r, g, bl);
    };
    bar(x0, mid, d.normal_counts[b], 40, 90, 200);
    bar(mid + 1, x1, d.abnormal_counts[b], 210, 60, 40);
  }
  c.line(m, height - 1 - m, width - m, height - 1 - m, 0, 0, 0);
  write_png(file, c.image());
}

}  // namespace patchrank
