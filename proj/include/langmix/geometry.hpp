#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include "langmix/common.hpp"

namespace langmix {

enum class ManifoldKind { Circle, Sphere, EmbeddedTorus, PhaseTorus };

struct ChartAxis {
  double lo = 0.0;
  double hi = 0.0;
  bool periodic = false;
  double span() const { return hi - lo; }
};

/// A chart-parametrized closed manifold isometrically embedded in R^d.
/// The chart domain is a product of half-open intervals, periodic axes
/// identified. All curvature quantities are analytic per kind.
class ParamManifold {
 public:
  static ParamManifold circle(double r, int ambient_dim = 2) {
    require(r > 0, "circle: radius must be positive");
    require(ambient_dim >= 2, "circle: ambient dimension must be >= 2");
    ParamManifold m;
    m.kind_ = ManifoldKind::Circle;
    m.r_ = r;
    m.intrinsic_dim_ = 1;
    m.natural_dim_ = 2;
    m.ambient_dim_ = ambient_dim;
    m.axes_ = {{0.0, kTwoPi, true}};
    return m;
  }

  // Round 2-sphere. Chart: arc-length latitude/longitude centered so that
  // the chart origin maps to the pole (0, 0, r) with identity metric there.
  static ParamManifold sphere(int intrinsic_dim, double r, int ambient_dim = 3) {
    require(intrinsic_dim == 2, "sphere: only d' = 2 is supported");
    require(r > 0, "sphere: radius must be positive");
    require(ambient_dim >= 3, "sphere: ambient dimension must be >= 3");
    ParamManifold m;
    m.kind_ = ManifoldKind::Sphere;
    m.r_ = r;
    m.intrinsic_dim_ = 2;
    m.natural_dim_ = 3;
    m.ambient_dim_ = ambient_dim;
    m.axes_ = {{-kPi * r / 2, kPi * r / 2, false}, {-kPi * r, kPi * r, true}};
    return m;
  }

  static ParamManifold embedded_torus(double minor_a, double major_c, int ambient_dim = 3) {
    require(minor_a > 0 && major_c > minor_a, "embedded_torus: need 0 < a < c");
    require(ambient_dim >= 3, "embedded_torus: ambient dimension must be >= 3");
    ParamManifold m;
    m.kind_ = ManifoldKind::EmbeddedTorus;
    m.a_ = minor_a;
    m.c_ = major_c;
    m.intrinsic_dim_ = 2;
    m.natural_dim_ = 3;
    m.ambient_dim_ = ambient_dim;
    m.axes_ = {{0.0, kTwoPi, true}, {0.0, kTwoPi, true}};
    return m;
  }

  // Two-phase signal manifold: x_t = A1 cos(2 pi k1 t / N + phi1)
  //                                 + A2 cos(2 pi k2 t / N + phi2), t = 0..N-1.
  static ParamManifold phase_torus(double amp1, double amp2, int k1, int k2, int signal_len) {
    require(signal_len >= 4, "phase_torus: signal length too small");
    require(k1 != k2, "phase_torus: frequencies must differ");
    require(k1 > 0 && k2 > 0 && 2 * k1 < signal_len && 2 * k2 < signal_len,
            "phase_torus: frequencies must satisfy 0 < k < N/2");
    require(amp1 > 0 && amp2 > 0, "phase_torus: amplitudes must be positive");
    ParamManifold m;
    m.kind_ = ManifoldKind::PhaseTorus;
    m.amp1_ = amp1;
    m.amp2_ = amp2;
    m.k1_ = k1;
    m.k2_ = k2;
    m.n_signal_ = signal_len;
    m.intrinsic_dim_ = 2;
    m.natural_dim_ = signal_len;
    m.ambient_dim_ = signal_len;
    m.axes_ = {{0.0, kTwoPi, true}, {0.0, kTwoPi, true}};
    return m;
  }

  ManifoldKind kind() const { return kind_; }
  int intrinsic_dim() const { return intrinsic_dim_; }
  int ambient_dim() const { return ambient_dim_; }
  // Dimension of the coordinate block actually used by the embedding;
  // coordinates beyond it are zero (padding).
  int natural_dim() const { return natural_dim_; }
  const std::vector<ChartAxis>& chart_domain() const { return axes_; }

  double radius() const { return r_; }
  double minor_a() const { return a_; }
  double major_c() const { return c_; }
  int signal_len() const { return n_signal_; }
  int freq1() const { return k1_; }
  int freq2() const { return k2_; }
  double amp1() const { return amp1_; }
  double amp2() const { return amp2_; }

  void check_in_domain(const Vec& theta) const {
    require(theta.size() == intrinsic_dim_, "chart point has wrong dimension");
    for (int i = 0; i < intrinsic_dim_; ++i) {
      if (axes_[i].periodic) continue;
      require(theta[i] >= axes_[i].lo && theta[i] < axes_[i].hi,
              "chart point outside domain");
    }
  }

  Vec embed(const Vec& theta) const {
    check_in_domain(theta);
    Vec x = Vec::Zero(ambient_dim_);
    switch (kind_) {
      case ManifoldKind::Circle:
        x[0] = r_ * std::cos(theta[0]);
        x[1] = r_ * std::sin(theta[0]);
        break;
      case ManifoldKind::Sphere: {
        const double u = theta[0] / r_, v = theta[1] / r_;
        x[0] = r_ * std::sin(u);
        x[1] = r_ * std::cos(u) * std::sin(v);
        x[2] = r_ * std::cos(u) * std::cos(v);
        break;
      }
      case ManifoldKind::EmbeddedTorus: {
        const double u = theta[0], v = theta[1];
        const double w = c_ + a_ * std::cos(v);
        x[0] = w * std::cos(u);
        x[1] = w * std::sin(u);
        x[2] = a_ * std::sin(v);
        break;
      }
      case ManifoldKind::PhaseTorus: {
        for (int t = 0; t < n_signal_; ++t) {
          x[t] = amp1_ * std::cos(kTwoPi * k1_ * t / n_signal_ + theta[0]) +
                 amp2_ * std::cos(kTwoPi * k2_ * t / n_signal_ + theta[1]);
        }
        break;
      }
    }
    return x;
  }

  // Metric tensor g = J^T J of the embedding, analytic per kind.
  Mat metric(const Vec& theta) const {
    check_in_domain(theta);
    Mat g = Mat::Zero(intrinsic_dim_, intrinsic_dim_);
    switch (kind_) {
      case ManifoldKind::Circle:
        g(0, 0) = r_ * r_;
        break;
      case ManifoldKind::Sphere: {
        const double cu = std::cos(theta[0] / r_);
        g(0, 0) = 1.0;
        g(1, 1) = cu * cu;
        break;
      }
      case ManifoldKind::EmbeddedTorus: {
        const double w = c_ + a_ * std::cos(theta[1]);
        g(0, 0) = w * w;
        g(1, 1) = a_ * a_;
        break;
      }
      case ManifoldKind::PhaseTorus:
        // Sum_t sin^2(2 pi k t / N + phi) = N/2 for 0 < k < N/2; cross terms
        // vanish by orthogonality of distinct frequencies.
        g(0, 0) = amp1_ * amp1_ * n_signal_ / 2.0;
        g(1, 1) = amp2_ * amp2_ * n_signal_ / 2.0;
        break;
    }
    return g;
  }

  std::pair<Vec, Mat> chart_eval(const Vec& theta) const {
    return {embed(theta), metric(theta)};
  }

  /// Smallest eigenvalue of the Ricci tensor at theta (w.r.t. g).
  double ricci_lower(const Vec& theta) const {
    check_in_domain(theta);
    switch (kind_) {
      case ManifoldKind::Circle:
        return 0.0;
      case ManifoldKind::Sphere:
        return (intrinsic_dim_ - 1) / (r_ * r_);
      case ManifoldKind::EmbeddedTorus: {
        // Ricci of a 2-manifold is Gauss curvature times the metric.
        const double v = theta[1];
        return std::cos(v) / (a_ * (c_ + a_ * std::cos(v)));
      }
      case ManifoldKind::PhaseTorus:
        return 0.0;  // flat
    }
    return 0.0;
  }

  double analytic_volume() const {
    switch (kind_) {
      case ManifoldKind::Circle:
        return kTwoPi * r_;
      case ManifoldKind::Sphere:
        return 4.0 * kPi * r_ * r_;
      case ManifoldKind::EmbeddedTorus:
        return 4.0 * kPi * kPi * a_ * c_;
      case ManifoldKind::PhaseTorus:
        return kTwoPi * kTwoPi * amp1_ * amp2_ * n_signal_ / 2.0;
    }
    return 0.0;
  }

  /// Embedding radius rho = sup over the manifold of the ambient norm.
  double embedding_radius() const {
    switch (kind_) {
      case ManifoldKind::Circle:
        return r_;
      case ManifoldKind::Sphere:
        return r_;
      case ManifoldKind::EmbeddedTorus:
        return c_ + a_;
      case ManifoldKind::PhaseTorus:
        // ||x||^2 = (A1^2 + A2^2) N / 2, constant over the chart.
        return std::sqrt((amp1_ * amp1_ + amp2_ * amp2_) * n_signal_ / 2.0);
    }
    return 0.0;
  }

 private:
  ManifoldKind kind_ = ManifoldKind::Circle;
  int intrinsic_dim_ = 1;
  int ambient_dim_ = 2;
  int natural_dim_ = 2;
  std::vector<ChartAxis> axes_;
  double r_ = 1.0;
  double a_ = 0.0, c_ = 0.0;
  double amp1_ = 0.0, amp2_ = 0.0;
  int k1_ = 0, k2_ = 0, n_signal_ = 0;
};

/// Quadrature mesh with a neighbor graph carrying geodesic structure.
class ManifoldMesh {
 public:
  ManifoldMesh() = default;

  const ParamManifold& manifold() const { return manifold_; }
  int size() const { return static_cast<int>(weights_.size()); }
  int resolution() const { return resolution_; }
  const Mat& nodes() const { return nodes_; }
  const Mat& embedded_points() const { return points_; }
  const Vec& weights() const { return weights_; }
  int graph_k() const { return k_; }

  double total_volume() const { return weights_.sum(); }

  /// Geodesic distances from node src to all nodes (graph shortest paths).
  /// With cutoff >= 0, stops once all nodes within the cutoff are settled;
  /// unreached nodes get +inf.
  Vec geodesic_from(int src, double cutoff = -1.0) const {
    const int n = size();
    Vec dist = Vec::Constant(n, std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    dist[src] = 0.0;
    pq.emplace(0.0, src);
    while (!pq.empty()) {
      const auto [d, i] = pq.top();
      pq.pop();
      if (d > dist[i]) continue;
      if (cutoff >= 0 && d > cutoff) break;
      for (const auto& [j, w] : adj_[i]) {
        const double nd = d + w;
        if (nd < dist[j]) {
          dist[j] = nd;
          pq.emplace(nd, j);
        }
      }
    }
    return dist;
  }

  /// Full symmetric geodesic matrix. O(n^2) memory; intended for small and
  /// medium meshes.
  const Mat& geodesic_matrix() const {
    if (geo_.size() == 0) {
      const int n = size();
      geo_.resize(n, n);
      for (int i = 0; i < n; ++i) geo_.row(i) = geodesic_from(i).transpose();
      // Graph shortest paths are symmetric up to tie-breaking noise.
      geo_ = ((geo_ + geo_.transpose()) / 2).eval();
    }
    return geo_;
  }

  double diameter() const {
    double dmax = 0.0;
    for (int i = 0; i < size(); ++i) dmax = std::max(dmax, geodesic_from(i).maxCoeff());
    return dmax;
  }

  void export_csv(const std::string& path) const {
    std::ofstream out(path);
    require(out.good(), "mesh export: cannot open " + path);
    out << "node_index";
    for (int a = 0; a < manifold_.intrinsic_dim(); ++a) out << ",chart" << a;
    for (int a = 0; a < manifold_.ambient_dim(); ++a) out << ",x" << a;
    out << ",weight\n";
    char buf[32];
    for (int i = 0; i < size(); ++i) {
      out << i;
      for (int a = 0; a < manifold_.intrinsic_dim(); ++a) {
        std::snprintf(buf, sizeof buf, ",%.17g", nodes_(i, a));
        out << buf;
      }
      for (int a = 0; a < manifold_.ambient_dim(); ++a) {
        std::snprintf(buf, sizeof buf, ",%.17g", points_(i, a));
        out << buf;
      }
      std::snprintf(buf, sizeof buf, ",%.17g", weights_[i]);
      out << buf << "\n";
    }
  }

  // Row-major doubles, little-endian, preceded by two 8-byte unsigned n, n.
  void export_geodesic_binary(const std::string& path) const {
    const Mat& g = geodesic_matrix();
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "geodesic export: cannot open " + path);
    const std::uint64_t n = static_cast<std::uint64_t>(size());
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(&n), 8);
    for (int i = 0; i < size(); ++i)
      for (int j = 0; j < size(); ++j) {
        const double v = g(i, j);
        out.write(reinterpret_cast<const char*>(&v), 8);
      }
  }

  friend ManifoldMesh build_mesh(const ParamManifold& m, int resolution, int k);

 private:
  ParamManifold manifold_;
  int resolution_ = 0;
  int k_ = 0;
  Mat nodes_;
  Mat points_;
  Vec weights_;
  std::vector<std::vector<std::pair<int, double>>> adj_;
  mutable Mat geo_;
};

/// Uniform chart grid (cell-centered), weights sqrt(det g) * cell volume,
/// k-NN graph with metric edge lengths; k is raised until connected.
inline ManifoldMesh build_mesh(const ParamManifold& m, int resolution, int k = 8) {
  require(resolution >= 8, "build_mesh: resolution must be >= 8");
  const int dp = m.intrinsic_dim();
  const auto& axes = m.chart_domain();

  // Cell-centered grid, resolution nodes per axis.
  std::vector<int> idx(dp, 0);
  const int n = static_cast<int>(std::pow(static_cast<double>(resolution), dp) + 0.5);
  ManifoldMesh mesh;
  mesh.manifold_ = m;
  mesh.resolution_ = resolution;
  mesh.nodes_.resize(n, dp);
  mesh.points_.resize(n, m.ambient_dim());
  mesh.weights_.resize(n);
  double cell = 1.0;
  std::vector<double> h(dp);
  for (int a = 0; a < dp; ++a) {
    h[a] = axes[a].span() / resolution;
    cell *= h[a];
  }
  for (int i = 0; i < n; ++i) {
    Vec theta(dp);
    int rem = i;
    for (int a = 0; a < dp; ++a) {
      const int ia = rem % resolution;
      rem /= resolution;
      theta[a] = axes[a].lo + (ia + 0.5) * h[a];
    }
    mesh.nodes_.row(i) = theta.transpose();
    mesh.points_.row(i) = m.embed(theta).transpose();
    const Mat g = m.metric(theta);
    mesh.weights_[i] = std::sqrt(std::max(0.0, g.determinant())) * cell;
  }

  // k-NN by embedded Euclidean distance, symmetrized; edge length from the
  // local metric at the chart midpoint (periodic wrap on each axis).
  auto edge_length = [&](int i, int j) {
    Vec dtheta(dp), mid(dp);
    for (int a = 0; a < dp; ++a) {
      double d = mesh.nodes_(j, a) - mesh.nodes_(i, a);
      if (axes[a].periodic) d = wrap_centered(d, axes[a].span());
      dtheta[a] = d;
      double mval = mesh.nodes_(i, a) + d / 2;
      if (axes[a].periodic) {
        const double span = axes[a].span();
        mval = axes[a].lo + std::fmod(std::fmod(mval - axes[a].lo, span) + span, span);
      } else {
        mval = std::clamp(mval, axes[a].lo, std::nextafter(axes[a].hi, axes[a].lo));
      }
      mid[a] = mval;
    }
    const Mat g = m.metric(mid);
    return std::sqrt(std::max(0.0, double(dtheta.transpose() * g * dtheta)));
  };

  const int kmax = std::min(n - 1, 64);
  int kk = std::min(k, kmax);
  while (true) {
    mesh.adj_.assign(n, {});
    std::vector<std::pair<double, int>> cand(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j)
        cand[j] = {j == i ? std::numeric_limits<double>::infinity()
                          : (mesh.points_.row(i) - mesh.points_.row(j)).squaredNorm(),
                   j};
      std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
      for (int t = 0; t < kk; ++t) {
        const int j = cand[t].second;
        mesh.adj_[i].emplace_back(j, edge_length(i, j));
      }
    }
    // Symmetrize.
    for (int i = 0; i < n; ++i)
      for (const auto& [j, w] : std::vector<std::pair<int, double>>(mesh.adj_[i])) {
        bool found = false;
        for (const auto& [jj, ww] : mesh.adj_[j])
          if (jj == i) {
            found = true;
            break;
          }
        if (!found) mesh.adj_[j].emplace_back(i, w);
      }
    // Connectivity check (BFS).
    std::vector<char> seen(n, 0);
    std::vector<int> stack = {0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      for (const auto& [j, w] : mesh.adj_[i])
        if (!seen[j]) {
          seen[j] = 1;
          ++count;
          stack.push_back(j);
        }
    }
    if (count == n) break;
    if (kk >= kmax)
      throw MeshError("build_mesh: neighbor graph disconnected at k=" + std::to_string(kk) +
                      "; increase resolution");
    kk = std::min(2 * kk, kmax);
  }
  mesh.k_ = kk;
  return mesh;
}

/// Canonical Kato radius sqrt((d'-1)/K) * log(base), base 2 by default.
inline double kato_radius(double K, int intrinsic_dim, double log_base = 2.0) {
  require(K > 0, "kato_radius: K must be positive");
  require(intrinsic_dim >= 2, "kato_radius: d' must be >= 2");
  return std::sqrt((intrinsic_dim - 1) / K) * std::log(log_base);
}

/// sup over mesh nodes of the ball-average of (d' - 1 - ric_-)_+ at scale R.
inline double kato_constant(const ManifoldMesh& mesh, const ParamManifold& m, double R) {
  require(R > 0, "kato_constant: R must be positive");
  const int n = mesh.size();
  const int dp = m.intrinsic_dim();
  Vec integrand(n);
  for (int i = 0; i < n; ++i) {
    const double ric = m.ricci_lower(mesh.nodes().row(i).transpose());
    integrand[i] = std::max(0.0, dp - 1 - ric);
  }
  double sup = 0.0;
  for (int x = 0; x < n; ++x) {
    const Vec dist = mesh.geodesic_from(x, R);
    double num = 0.0, den = 0.0;
    int members = 0;
    for (int i = 0; i < n; ++i) {
      if (dist[i] <= R) {
        num += integrand[i] * mesh.weights()[i];
        den += mesh.weights()[i];
        ++members;
      }
    }
    if (members <= 1)
      throw MeshError("kato_constant: R below mesh spacing; increase resolution");
    sup = std::max(sup, num / den);
  }
  return sup;
}

inline double diameter_empirical(const ManifoldMesh& mesh) {
  if (mesh.size() <= 1) return 0.0;
  return mesh.diameter();
}

struct BishopGromovResult {
  double lhs = 0.0;  // vol(B_R) / vol(B_r) from mesh quadrature
  double rhs = 0.0;  // model-space ratio
  bool holds = false;
};

/// Volume-ratio comparison against the constant-curvature model space with
/// ric >= -K g, model s(u) = sinh(u sqrt(K/(d'-1))).
inline BishopGromovResult bishop_gromov_check(const ManifoldMesh& mesh, double K, int x, double r,
                                              double R, double mesh_tolerance = 0.05) {
  require(K > 0, "bishop_gromov_check: K must be positive");
  require(r > 0 && r <= R, "bishop_gromov_check: need 0 < r <= R");
  require(x >= 0 && x < mesh.size(), "bishop_gromov_check: node out of range");
  BishopGromovResult res;
  if (r == R) {
    res.lhs = res.rhs = 1.0;
    res.holds = true;
    return res;
  }
  const int dp = mesh.manifold().intrinsic_dim();
  const Vec dist = mesh.geodesic_from(x, R);
  double vr = 0.0, vR = 0.0;
  for (int i = 0; i < mesh.size(); ++i) {
    if (dist[i] <= R) vR += mesh.weights()[i];
    if (dist[i] <= r) vr += mesh.weights()[i];
  }
  require(vr > 0, "bishop_gromov_check: inner ball empty; r below mesh spacing");
  res.lhs = vR / vr;

  const double lam = std::sqrt(K / std::max(1, dp - 1));
  auto model_vol = [&](double rad) {
    // Simpson on sinh(lam u)^(d'-1).
    const int steps = 512;
    const double h = rad / steps;
    double s = 0.0;
    for (int i = 0; i <= steps; ++i) {
      const double u = i * h;
      const double f = std::pow(std::sinh(lam * u), dp - 1);
      const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      s += w * f;
    }
    return s * h / 3.0;
  };
  res.rhs = model_vol(R) / model_vol(r);
  res.holds = res.lhs <= res.rhs * (1.0 + mesh_tolerance);
  return res;
}

/// Curvature/diameter summary fed to the bound evaluators. K_measured is the
/// magnitude of the most negative Ricci eigenvalue on the mesh; K_eff clamps
/// it to just above 1 for the bound evaluators' regime.
struct GeometrySummary {
  int intrinsic_dim = 0;
  double K_measured = 0.0;
  double K_eff = 0.0;
  double rho = 0.0;
  double kappa_log2 = 0.0;  // Kato constant at radius sqrt((d'-1)/K) log 2
  double kappa_log4 = 0.0;  // same at the log 4 radius
  double diameter_empirical = 0.0;
  double B = 0.0;  // sup ||grad log p||_g (0 for uniform targets)
  double L = 0.0;  // Lipschitz constant of grad log p (0 for uniform targets)
};

inline GeometrySummary summarize_geometry(const ManifoldMesh& mesh, const ParamManifold& m,
                                          double B = 0.0, double L = 0.0) {
  GeometrySummary s;
  s.intrinsic_dim = m.intrinsic_dim();
  double ric_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < mesh.size(); ++i)
    ric_min = std::min(ric_min, m.ricci_lower(mesh.nodes().row(i).transpose()));
  s.K_measured = std::max(0.0, -ric_min);
  s.K_eff = std::max(s.K_measured, 1.0 + 1e-6);
  s.rho = m.embedding_radius();
  if (s.intrinsic_dim >= 2) {
    s.kappa_log2 = kato_constant(mesh, m, kato_radius(s.K_eff, s.intrinsic_dim, 2.0));
    s.kappa_log4 = kato_constant(mesh, m, kato_radius(s.K_eff, s.intrinsic_dim, 4.0));
  }
  s.diameter_empirical = diameter_empirical(mesh);
  s.B = B;
  s.L = L;
  return s;
}

}  // namespace langmix
