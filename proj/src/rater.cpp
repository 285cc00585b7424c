// Copyright 2026 The lnseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lnseg/rater.hpp"

#include <spdlog/fmt/fmt.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <unordered_set>

#include <Eigen/Dense>

#include "lnseg/error.hpp"
#include "lnseg/morphology.hpp"
#include "lnseg/png_io.hpp"

namespace lnseg {

std::string_view to_string(RoiShape s) { return s == RoiShape::Square ? "square" : "circle"; }

std::optional<RoiShape> parse_roi_shape(std::string_view text) {
  if (text == "square") return RoiShape::Square;
  if (text == "circle") return RoiShape::Circle;
  return std::nullopt;
}

void RaterConfig::validate() const {
  if (!(eccentricity_max > 0 && eccentricity_max < 1)) throw Error(Errc::SpecError, "eccentricity_max must lie in (0,1)");
  if (area_divisor < 1 || centroid_tol_divisor < 1) throw Error(Errc::SpecError, "rater divisors must be >= 1");
  if (!(roi_intensity_min > 0 && roi_intensity_min < 1)) throw Error(Errc::SpecError, "roi_intensity_min must lie in (0,1)");
  if (!(binarize_threshold > 0 && binarize_threshold < 1)) throw Error(Errc::SpecError, "binarize_threshold must lie in (0,1)");
}

double min_area(int dim, const RaterConfig& cfg) {
  const double side = double(dim) / cfg.area_divisor;
  return side * side;
}

double centroid_tolerance(int dim, const RaterConfig& cfg) { return double(dim) / cfg.centroid_tol_divisor; }

std::string_view to_string(DetectionStatus s) {
  switch (s) {
    case DetectionStatus::Candidate: return "candidate";
    case DetectionStatus::FilteredNoise: return "filtered";
    case DetectionStatus::TruePositive: return "tp";
    case DetectionStatus::FalsePositive: return "fp";
  }
  return "candidate";
}

int RatingResult::filtered() const {
  return static_cast<int>(std::count_if(detections.begin(), detections.end(), [](const Detection& d) {
    return d.status == DetectionStatus::FilteredNoise;
  }));
}

namespace {

// Clockwise with y pointing down: N, NE, E, SE, S, SW, W, NW.
constexpr int kDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};
constexpr int kDy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};

int direction_of(int dx, int dy) {
  for (int d = 0; d < 8; ++d) {
    if (kDx[d] == dx && kDy[d] == dy) return d;
  }
  return -1;
}

using Labels = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// 8-connected labels (1-based) and each component's first pixel in raster order.
int label_components(const Mask& mask, Labels& labels, std::vector<std::pair<int, int>>& starts) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  labels = Labels::Zero(h, w);
  int next = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x) || labels(y, x)) continue;
      ++next;
      starts.emplace_back(x, y);
      labels(y, x) = next;
      stack.emplace_back(x, y);
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        for (int d = 0; d < 8; ++d) {
          const int nx = cx + kDx[d], ny = cy + kDy[d];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          if (mask(ny, nx) && !labels(ny, nx)) {
            labels(ny, nx) = next;
            stack.emplace_back(nx, ny);
          }
        }
      }
    }
  }
  return next;
}

// Moore-neighbour tracing of the component that owns `start`. Stops when a
// (pixel, backtrack) state repeats.
std::vector<std::pair<int, int>> trace(const Labels& labels, int label, std::pair<int, int> start) {
  const int h = static_cast<int>(labels.rows()), w = static_cast<int>(labels.cols());
  auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && labels(y, x) == label; };
  std::vector<std::pair<int, int>> contour{start};
  std::unordered_set<std::int64_t> seen_states;
  std::set<std::pair<int, int>> seen_points{start};
  int cx = start.first, cy = start.second;
  int back = 6;  // west of the first pixel is background
  while (true) {
    const std::int64_t state = (std::int64_t(cy) * w + cx) * 8 + back;
    if (!seen_states.insert(state).second) break;
    int found = -1;
    for (int i = 1; i <= 8; ++i) {
      const int d = (back + i) % 8;
      if (inside(cx + kDx[d], cy + kDy[d])) {
        found = d;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    const int prev = (found + 7) % 8;
    const int qx = cx + kDx[prev], qy = cy + kDy[prev];
    cx += kDx[found];
    cy += kDy[found];
    back = direction_of(qx - cx, qy - cy);
    if (seen_points.insert({cx, cy}).second) contour.emplace_back(cx, cy);
  }
  return contour;
}

struct Moments {
  double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
};

// Per-label pixel moments in one pass; index 0 is the background.
std::vector<Moments> component_moments(const Labels& labels, int n) {
  std::vector<Moments> m(n + 1);
  for (Eigen::Index y = 0; y < labels.rows(); ++y) {
    for (Eigen::Index x = 0; x < labels.cols(); ++x) {
      auto& a = m[labels(y, x)];
      a.n += 1;
      a.sx += x;
      a.sy += y;
      a.sxx += double(x) * x;
      a.syy += double(y) * y;
      a.sxy += double(x) * y;
    }
  }
  return m;
}

// Second-moment ellipse of a component; a uniform filled ellipse with
// semi-axes a, b has variances a^2/4 and b^2/4 along its axes.
EllipseFit moment_ellipse(const Moments& m) {
  EllipseFit e;
  e.center_x = m.sx / m.n;
  e.center_y = m.sy / m.n;
  const double cxy = m.sxy / m.n - e.center_x * e.center_y;
  Eigen::Matrix2d cov;
  cov << m.sxx / m.n - e.center_x * e.center_x, cxy, cxy, m.syy / m.n - e.center_y * e.center_y;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  const double l_small = std::max(es.eigenvalues()(0), 0.0), l_big = std::max(es.eigenvalues()(1), 0.0);
  e.semi_major = 2.0 * std::sqrt(l_big);
  e.semi_minor = 2.0 * std::sqrt(l_small);
  const Eigen::Vector2d v = es.eigenvectors().col(1);
  e.angle_deg = std::atan2(v(1), v(0)) * 180.0 / std::numbers::pi;
  return e;
}

Detection from_fit(const EllipseFit& f) {
  Detection d;
  d.center_x = f.center_x;
  d.center_y = f.center_y;
  d.major_axis = 2.0 * f.semi_major;
  d.minor_axis = 2.0 * f.semi_minor;
  d.angle_deg = f.angle_deg;
  d.area = std::numbers::pi * f.semi_major * f.semi_minor;
  if (f.semi_major > 0) {
    const double ratio = f.semi_minor / f.semi_major;
    d.eccentricity = std::sqrt(std::max(0.0, 1.0 - ratio * ratio));
  }
  // Keep the documented [0, 1) range for line-like components.
  d.eccentricity = std::min(d.eccentricity, std::nextafter(1.0, 0.0));
  return d;
}

}  // namespace

std::vector<std::vector<std::pair<int, int>>> trace_outer_contours(const Mask& mask) {
  Labels labels;
  std::vector<std::pair<int, int>> starts;
  const int n = label_components(mask, labels, starts);
  std::vector<std::vector<std::pair<int, int>>> out;
  for (int i = 0; i < n; ++i) out.push_back(trace(labels, i + 1, starts[i]));
  return out;
}

std::optional<EllipseFit> fit_ellipse(const std::vector<std::pair<int, int>>& points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (n < 5) return std::nullopt;
  // Centre and scale for conditioning.
  double mx = 0, my = 0;
  for (auto [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= double(n);
  my /= double(n);
  double scale = 0;
  for (auto [x, y] : points) scale = std::max({scale, std::abs(x - mx), std::abs(y - my)});
  if (scale == 0) return std::nullopt;

  Eigen::MatrixXd d1(n, 3), d2(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = (points[i].first - mx) / scale, y = (points[i].second - my) / scale;
    d1.row(i) << x * x, x * y, y * y;
    d2.row(i) << x, y, 1.0;
  }
  const Eigen::Matrix3d s1 = d1.transpose() * d1;
  const Eigen::Matrix3d s2 = d1.transpose() * d2;
  const Eigen::Matrix3d s3 = d2.transpose() * d2;
  Eigen::FullPivLU<Eigen::Matrix3d> lu(s3);
  if (!lu.isInvertible()) return std::nullopt;
  const Eigen::Matrix3d t = -lu.solve(s2.transpose());
  const Eigen::Matrix3d m = s1 + s2 * t;
  Eigen::Matrix3d reduced;
  reduced.row(0) = m.row(2) / 2.0;
  reduced.row(1) = -m.row(1);
  reduced.row(2) = m.row(0) / 2.0;
  Eigen::EigenSolver<Eigen::Matrix3d> es(reduced);
  if (es.info() != Eigen::Success) return std::nullopt;
  int pick = -1;
  double best = 0;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d v = es.eigenvectors().col(k).real();
    const double cond = 4.0 * v(0) * v(2) - v(1) * v(1);
    if (cond > best) {
      best = cond;
      pick = k;
    }
  }
  if (pick < 0) return std::nullopt;
  Eigen::Vector3d a1 = es.eigenvectors().col(pick).real();
  // Eigenvectors carry no sign; fix it so the quadratic form is positive.
  if (a1(0) + a1(2) < 0) a1 = -a1;
  const Eigen::Vector3d a2 = t * a1;
  const double A = a1(0), B = a1(1), C = a1(2), D = a2(0), E = a2(1), F = a2(2);
  const double disc = B * B - 4.0 * A * C;
  if (disc >= 0) return std::nullopt;
  const double x0 = (2.0 * C * D - B * E) / disc;
  const double y0 = (2.0 * A * E - B * D) / disc;
  const double f0 = F + (D * x0 + E * y0) / 2.0;
  Eigen::Matrix2d q;
  q << A, B / 2.0, B / 2.0, C;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> qs(q);
  const double l1 = qs.eigenvalues()(0), l2 = qs.eigenvalues()(1);
  const double r1 = -f0 / l1, r2 = -f0 / l2;
  if (!(r1 > 0 && r2 > 0) || !std::isfinite(r1) || !std::isfinite(r2)) return std::nullopt;
  // Smaller eigenvalue gives the longer axis.
  EllipseFit e;
  e.semi_major = std::sqrt(r1) * scale;
  e.semi_minor = std::sqrt(r2) * scale;
  e.center_x = x0 * scale + mx;
  e.center_y = y0 * scale + my;
  const Eigen::Vector2d v = qs.eigenvectors().col(0);
  e.angle_deg = std::atan2(v(1), v(0)) * 180.0 / std::numbers::pi;
  return e;
}

std::vector<Detection> detect_blobs(const ImageF& mask, const RaterConfig& cfg) {
  const Mask bin = binarize(mask, cfg.binarize_threshold);
  Labels labels;
  std::vector<std::pair<int, int>> starts;
  const int n = label_components(bin, labels, starts);
  std::vector<Detection> out;
  out.reserve(n);
  const std::vector<Moments> moments = component_moments(labels, n);
  for (int i = 0; i < n; ++i) {
    const auto contour = trace(labels, i + 1, starts[i]);
    const auto fit = fit_ellipse(contour);
    Detection d;
    if (fit) {
      d = from_fit(*fit);
    } else {
      d = from_fit(moment_ellipse(moments[i + 1]));
      d.status = DetectionStatus::FilteredNoise;
    }
    d.contour_points = static_cast<int>(contour.size());
    d.pixel_count = static_cast<int>(moments[i + 1].n);
    out.push_back(d);
  }
  return out;
}

Detection filter_geometry(Detection det, int dim, const RaterConfig& cfg) {
  if (det.status != DetectionStatus::Candidate) return det;
  if (det.eccentricity >= cfg.eccentricity_max || det.area <= min_area(dim, cfg)) {
    det.status = DetectionStatus::FilteredNoise;
  }
  return det;
}

double roi_mean(const Detection& det, const ImageF& mask, const RaterConfig& cfg) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  const double half = det.minor_axis / 2.0;
  const int x0 = std::max(0, static_cast<int>(std::ceil(det.center_x - half)));
  const int x1 = std::min(w - 1, static_cast<int>(std::floor(det.center_x + half)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(det.center_y - half)));
  const int y1 = std::min(h - 1, static_cast<int>(std::floor(det.center_y + half)));
  double sum = 0;
  long count = 0;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (cfg.roi_shape == RoiShape::Circle) {
        const double dx = x - det.center_x, dy = y - det.center_y;
        if (dx * dx + dy * dy > half * half) continue;
      }
      sum += mask(y, x);
      ++count;
    }
  }
  if (count == 0) {
    // ROI narrower than a pixel: fall back to the pixel under the centre.
    const int x = std::clamp(static_cast<int>(std::lround(det.center_x)), 0, w - 1);
    const int y = std::clamp(static_cast<int>(std::lround(det.center_y)), 0, h - 1);
    return mask(y, x);
  }
  return sum / double(count);
}

Detection filter_roi_intensity(Detection det, const ImageF& mask, const RaterConfig& cfg) {
  det.roi_mean = roi_mean(det, mask, cfg);
  if (det.status == DetectionStatus::Candidate && det.roi_mean < cfg.roi_intensity_min) {
    det.status = DetectionStatus::FilteredNoise;
  }
  return det;
}

RatingResult match(std::vector<Detection> detections, const std::optional<NoduleAnnotation>& gt, int dim,
                   const RaterConfig& cfg) {
  RatingResult r;
  if (gt) r.image_id = gt->image_id;
  const double tol = centroid_tolerance(dim, cfg);
  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < detections.size(); ++i) {
    auto& d = detections[i];
    if (d.status == DetectionStatus::FilteredNoise) continue;
    d.status = DetectionStatus::FalsePositive;
    if (!gt) continue;
    const double dist = std::hypot(d.center_x - gt->center_x, d.center_y - gt->center_y);
    if (dist <= tol && dist < best_dist) {
      best_dist = dist;
      best = static_cast<int>(i);
    }
  }
  if (best >= 0) detections[best].status = DetectionStatus::TruePositive;
  for (const auto& d : detections) {
    r.tp += d.status == DetectionStatus::TruePositive;
    r.fp += d.status == DetectionStatus::FalsePositive;
  }
  r.detections = std::move(detections);
  return r;
}

RatingResult rate_image(const std::string& image_id, const ImageF& mask,
                        const std::optional<NoduleAnnotation>& gt, const RaterConfig& cfg) {
  if (!is_square(mask)) throw Error(Errc::ShapeMismatch, image_id + ": rater expects a square mask");
  const int dim = static_cast<int>(mask.rows());
  std::vector<Detection> dets = detect_blobs(mask, cfg);
  for (auto& d : dets) d = filter_roi_intensity(filter_geometry(d, dim, cfg), mask, cfg);
  RatingResult r = match(std::move(dets), gt, dim, cfg);
  r.image_id = image_id;
  return r;
}

Aggregate aggregate(const std::vector<RatingResult>& results) {
  if (results.empty()) throw Error(Errc::EmptySet, "cannot aggregate an empty result set");
  Aggregate a;
  a.n = static_cast<int>(results.size());
  for (const auto& r : results) {
    a.tp += r.tp;
    a.fp += r.fp;
  }
  a.sensitivity = 100.0 * a.tp / a.n;
  a.fp_per_image = double(a.fp) / a.n;
  return a;
}

void write_ratings_csv(const std::filesystem::path& path, const std::vector<RatingResult>& results) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "image_id,tp,fp,detection,center_x,center_y,major_axis,minor_axis,angle_deg,eccentricity,area,roi_mean,"
         "status\n";
  for (const auto& r : results) {
    if (r.detections.empty()) {
      out << fmt::format("{},{},{},,,,,,,,,,\n", r.image_id, r.tp, r.fp);
      continue;
    }
    for (std::size_t i = 0; i < r.detections.size(); ++i) {
      const auto& d = r.detections[i];
      out << fmt::format("{},{},{},{},{:.4f},{:.4f},{:.4f},{:.4f},{:.3f},{:.6f},{:.3f},{:.6f},{}\n", r.image_id,
                         r.tp, r.fp, i, d.center_x, d.center_y, d.major_axis, d.minor_axis, d.angle_deg,
                         d.eccentricity, d.area, d.roi_mean, to_string(d.status));
    }
  }
}

void write_overlay(const std::filesystem::path& path, const ImageF& mask, const RatingResult& result,
                   const std::optional<NoduleAnnotation>& gt) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  std::vector<std::uint8_t> rgb(std::size_t(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto v = static_cast<std::uint8_t>(std::lround(std::clamp(mask(y, x), 0.0f, 1.0f) * 160.0f));
      std::uint8_t* p = &rgb[(std::size_t(y) * w + x) * 3];
      p[0] = p[1] = p[2] = v;
    }
  }
  auto plot = [&](double fx, double fy, std::array<std::uint8_t, 3> c) {
    const long x = std::lround(fx), y = std::lround(fy);
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::uint8_t* p = &rgb[(std::size_t(y) * w + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  };
  auto draw_ellipse = [&](double cx, double cy, double a, double b, double angle_deg,
                          std::array<std::uint8_t, 3> c) {
    const double th = angle_deg * std::numbers::pi / 180.0;
    const int steps = std::max(64, static_cast<int>(8 * (a + b)));
    for (int i = 0; i < steps; ++i) {
      const double t = 2.0 * std::numbers::pi * i / steps;
      const double ex = a * std::cos(t), ey = b * std::sin(t);
      plot(cx + ex * std::cos(th) - ey * std::sin(th), cy + ex * std::sin(th) + ey * std::cos(th), c);
    }
  };
  for (const auto& d : result.detections) {
    std::array<std::uint8_t, 3> c{80, 80, 255};
    if (d.status == DetectionStatus::TruePositive) c = {0, 255, 0};
    if (d.status == DetectionStatus::FalsePositive) c = {255, 0, 0};
    draw_ellipse(d.center_x, d.center_y, d.major_axis / 2, d.minor_axis / 2, d.angle_deg, c);
  }
  if (gt) {
    const double r = std::max(gt->diameter_px / 2.0, 1.0);
    draw_ellipse(gt->center_x, gt->center_y, r, r, 0.0, {255, 255, 0});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png::write_rgb8(path, w, h, rgb);
}

}  // namespace lnseg
