#pragma once

// Overlap and surface-distance metrics on integer label masks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "cswin/errors.hpp"
#include "cswin/mask.hpp"

namespace cswin {

/// 2|P n G| / (|P| + |G|) for one class; 1.0 when the class is absent from both.
inline double dsc(const Mask& pred, const Mask& truth, std::uint8_t class_id) {
  require_same_extent(pred, truth, "dsc");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.labels[i] == class_id, b = truth.labels[i] == class_id;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

/// Foreground pixels of `class_id` with a 4-neighbor outside the class or outside the image.
inline std::vector<std::uint8_t> boundary_map(const Mask& m, std::uint8_t class_id) {
  std::vector<std::uint8_t> out(m.size(), 0);
  for (std::size_t i = 0; i < m.height; ++i) {
    for (std::size_t j = 0; j < m.width; ++j) {
      if (m(i, j) != class_id) continue;
      const bool edge = i == 0 || j == 0 || i + 1 == m.height || j + 1 == m.width;
      out[i * m.width + j] = edge || m(i - 1, j) != class_id || m(i + 1, j) != class_id ||
                             m(i, j - 1) != class_id || m(i, j + 1) != class_id;
    }
  }
  return out;
}

/// Linear-interpolated percentile (q in [0, 100]) of an unsorted sample.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

/// Exact squared Euclidean distance from every pixel to the nearest set pixel,
/// separably: per-column nearest distance, then a per-row minimization.
/// Entries are int64 max when `set` is empty.
inline std::vector<std::int64_t> squared_distance_transform(const std::vector<std::uint8_t>& set, std::size_t h,
                                                            std::size_t w) {
  constexpr std::int64_t inf = std::numeric_limits<std::int64_t>::max();
  std::vector<std::int64_t> col(h * w, inf);
  for (std::size_t j = 0; j < w; ++j) {
    std::int64_t last = -1;
    for (std::size_t i = 0; i < h; ++i) {
      if (set[i * w + j]) last = static_cast<std::int64_t>(i);
      if (last >= 0) col[i * w + j] = static_cast<std::int64_t>(i) - last;
    }
    last = -1;
    for (std::size_t i = h; i-- > 0;) {
      if (set[i * w + j]) last = static_cast<std::int64_t>(i);
      if (last >= 0) col[i * w + j] = std::min(col[i * w + j], last - static_cast<std::int64_t>(i));
    }
  }
  std::vector<std::int64_t> out(h * w, inf);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      std::int64_t best = inf;
      for (std::size_t jj = 0; jj < w; ++jj) {
        const std::int64_t g = col[i * w + jj];
        if (g == inf) continue;
        const std::int64_t dx = static_cast<std::int64_t>(j) - static_cast<std::int64_t>(jj);
        best = std::min(best, dx * dx + g * g);
      }
      out[i * w + j] = best;
    }
  }
  return out;
}

struct HausdorffResult {
  double hd = 0.0;
  double hd95 = 0.0;
};

/// Symmetric Hausdorff distance (and its 95th-percentile variant) between the
/// boundary pixel sets of one class. Absent in both -> 0; absent in one ->
/// the image diagonal.
inline HausdorffResult hausdorff(const Mask& pred, const Mask& truth, std::uint8_t class_id) {
  require_same_extent(pred, truth, "hausdorff");
  const std::size_t h = pred.height, w = pred.width;
  const auto bp = boundary_map(pred, class_id), bt = boundary_map(truth, class_id);
  const bool has_p = std::find(bp.begin(), bp.end(), 1) != bp.end();
  const bool has_t = std::find(bt.begin(), bt.end(), 1) != bt.end();
  if (!has_p && !has_t) return {};
  if (has_p != has_t) {
    const double diag = std::sqrt(static_cast<double>(h * h + w * w));
    return {diag, diag};
  }
  auto directed = [&](const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to) {
    const auto dt = squared_distance_transform(to, h, w);
    std::vector<double> d;
    for (std::size_t i = 0; i < from.size(); ++i)
      if (from[i]) d.push_back(std::sqrt(static_cast<double>(dt[i])));
    return d;
  };
  const auto dpt = directed(bp, bt), dtp = directed(bt, bp);
  const double max_pt = *std::max_element(dpt.begin(), dpt.end());
  const double max_tp = *std::max_element(dtp.begin(), dtp.end());
  return {std::max(max_pt, max_tp), std::max(percentile(dpt, 95.0), percentile(dtp, 95.0))};
}

struct BinaryScores {
  double se = 1.0;
  double sp = 1.0;
  double acc = 1.0;
};

/// Sensitivity, specificity and accuracy of a binary (0/1) prediction; 0/0 -> 1.
inline BinaryScores se_sp_acc(const Mask& pred, const Mask& truth) {
  require_same_extent(pred, truth, "se_sp_acc");
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::uint8_t a = pred.labels[i], b = truth.labels[i];
    if (a > 1 || b > 1) throw DataError("se_sp_acc: masks must be binary");
    tp += a && b;
    tn += !a && !b;
    fp += a && !b;
    fn += !a && b;
  }
  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  return {ratio(tp, tp + fn), ratio(tn, tn + fp), ratio(tp + tn, pred.size())};
}

inline Mask binarize(const Mask& m) {
  Mask out(m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) out.labels[i] = m.labels[i] != 0;
  return out;
}

/// Running per-class averages over evaluated samples. Foreground classes
/// 1..K-1 enter the means; SE/SP/ACC use the foreground-vs-background split.
struct MetricsReport {
  std::size_t num_classes = 0;
  std::size_t samples = 0;
  std::vector<double> dsc;    // per class, index 0 = background
  std::vector<double> hd;
  std::vector<double> hd95;
  double se = 0, sp = 0, acc = 0;

  explicit MetricsReport(std::size_t k = 0) : num_classes(k), dsc(k, 0.0), hd(k, 0.0), hd95(k, 0.0) {}

  void add(const Mask& pred, const Mask& truth) {
    require_same_extent(pred, truth, "MetricsReport::add");
    const double n = static_cast<double>(samples);
    auto fold = [n](double& acc_value, double v) { acc_value = (acc_value * n + v) / (n + 1.0); };
    for (std::size_t c = 0; c < num_classes; ++c) {
      const auto id = static_cast<std::uint8_t>(c);
      fold(dsc[c], cswin::dsc(pred, truth, id));
      const auto h = hausdorff(pred, truth, id);
      fold(hd[c], h.hd);
      fold(hd95[c], h.hd95);
    }
    const auto b = se_sp_acc(binarize(pred), binarize(truth));
    fold(se, b.se);
    fold(sp, b.sp);
    fold(acc, b.acc);
    ++samples;
  }

  static double foreground_mean(const std::vector<double>& v) {
    if (v.size() <= 1) return v.empty() ? 0.0 : v[0];
    double s = 0;
    for (std::size_t c = 1; c < v.size(); ++c) s += v[c];
    return s / static_cast<double>(v.size() - 1);
  }
  double mean_dsc() const { return foreground_mean(dsc); }
  double mean_hd() const { return foreground_mean(hd); }
  double mean_hd95() const { return foreground_mean(hd95); }
};

}  // namespace cswin
