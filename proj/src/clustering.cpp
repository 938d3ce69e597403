#include "polyrom/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "polyrom/errors.hpp"

namespace polyrom {

namespace {

double sq_dist_row(const DenseMatrix& pts, int row, const DenseMatrix& cent, int crow) {
  double s = 0.0;
  for (int d = 0; d < pts.cols; ++d) {
    const double diff = pts(row, d) - cent(crow, d);
    s += diff * diff;
  }
  return s;
}

}  // namespace

KmeansResult kmeans(const DenseMatrix& points, int k, unsigned seed, int max_iter) {
  const int N = points.rows, d = points.cols;
  if (N < 1 || d < 1) throw DimensionError("kmeans: empty point set");
  if (k < 1 || k > N) throw InvalidArgument("kmeans: need 1 <= k <= point count");
  if (max_iter < 1) throw InvalidArgument("kmeans: max_iter must be positive");

  std::mt19937_64 rng(seed);
  KmeansResult res;
  res.centroids = DenseMatrix(k, d);

  // k-means++ seeding.
  std::uniform_int_distribution<int> first(0, N - 1);
  std::vector<int> chosen;
  chosen.push_back(first(rng));
  std::vector<double> min_d2(N, std::numeric_limits<double>::infinity());
  for (int c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (int i = 0; i < N; ++i) total += min_d2[i];
      if (total <= 0.0) {
        // All remaining points coincide with a centroid; reuse index order.
        int next = 0;
        while (std::find(chosen.begin(), chosen.end(), next) != chosen.end() && next < N - 1)
          ++next;
        chosen.push_back(next);
      } else {
        std::uniform_real_distribution<double> unif(0.0, total);
        const double target = unif(rng);
        double acc = 0.0;
        int pick = N - 1;
        for (int i = 0; i < N; ++i) {
          acc += min_d2[i];
          if (acc >= target) {
            pick = i;
            break;
          }
        }
        chosen.push_back(pick);
      }
    }
    for (int dd = 0; dd < d; ++dd) res.centroids(c, dd) = points(chosen.back(), dd);
    for (int i = 0; i < N; ++i)
      min_d2[i] = std::min(min_d2[i], sq_dist_row(points, i, res.centroids, c));
  }

  res.assignment.assign(N, -1);
  std::vector<int> counts(k, 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    // Assignment pass; ties resolved toward the lowest centroid index.
    bool changed = false;
    double inertia = 0.0;
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < N; ++i) {
      int best = 0;
      double bestd = sq_dist_row(points, i, res.centroids, 0);
      for (int c = 1; c < k; ++c) {
        const double dd = sq_dist_row(points, i, res.centroids, c);
        if (dd < bestd) {
          bestd = dd;
          best = c;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
      counts[best]++;
      inertia += bestd;
    }
    res.inertia_history.push_back(inertia);
    res.inertia = inertia;
    res.iterations = iter + 1;
    if (!changed && iter > 0) break;

    // Mean update.
    DenseMatrix sums(k, d);
    for (int i = 0; i < N; ++i)
      for (int dd = 0; dd < d; ++dd) sums(res.assignment[i], dd) += points(i, dd);
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (int dd = 0; dd < d; ++dd) res.centroids(c, dd) = sums(c, dd) / counts[c];
    }
    // Reseed emptied clusters to the point farthest from its centroid.
    for (int c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      int far = 0;
      double fard = -1.0;
      for (int i = 0; i < N; ++i) {
        const double dd = sq_dist_row(points, i, res.centroids, res.assignment[i]);
        if (dd > fard) {
          fard = dd;
          far = i;
        }
      }
      for (int dd = 0; dd < d; ++dd) res.centroids(c, dd) = points(far, dd);
    }
  }
  return res;
}

PseudoLabelSet select_pseudo_labels(const DenseMatrix& points, const KmeansResult& km) {
  const int N = points.rows;
  const int k = km.centroids.rows;
  if (static_cast<int>(km.assignment.size()) != N)
    throw DimensionError("select_pseudo_labels: assignment does not match point count");
  if (km.centroids.cols != points.cols)
    throw DimensionError("select_pseudo_labels: centroid dimension mismatch");

  PseudoLabelSet out;
  out.radii.assign(k, 0.0);
  std::vector<int> counts(k, 0);
  std::vector<double> dist(N, 0.0);
  for (int i = 0; i < N; ++i) {
    const int c = km.assignment[i];
    if (c < 0 || c >= k) throw InvalidArgument("select_pseudo_labels: bad cluster id");
    dist[i] = std::sqrt(sq_dist_row(points, i, km.centroids, c));
    out.radii[c] += dist[i];
    counts[c]++;
  }
  for (int c = 0; c < k; ++c) {
    if (counts[c] == 0) {
      out.warnings.push_back("cluster " + std::to_string(c) +
                             " is empty; no pseudo-labels selected from it");
      continue;
    }
    out.radii[c] /= counts[c];
    if (counts[c] == 1)
      out.warnings.push_back("cluster " + std::to_string(c) +
                             " has a single member; no pseudo-labels selected from it");
  }
  std::vector<int> picked;
  for (int i = 0; i < N; ++i) {
    const int c = km.assignment[i];
    if (dist[i] < out.radii[c]) picked.push_back(i);
  }
  std::vector<int> picked_per_cluster(k, 0);
  for (int i : picked) picked_per_cluster[km.assignment[i]]++;
  for (int c = 0; c < k; ++c)
    if (counts[c] > 1 && picked_per_cluster[c] == 0)
      out.warnings.push_back("cluster " + std::to_string(c) +
                             " has no member strictly inside its mean radius");

  out.indices = picked;
  out.labels = DenseMatrix(static_cast<int>(picked.size()), k);
  out.cluster_of.resize(picked.size());
  for (std::size_t p = 0; p < picked.size(); ++p) {
    const int c = km.assignment[picked[p]];
    out.cluster_of[p] = c;
    out.labels(static_cast<int>(p), c) = 1.0;
  }
  return out;
}

Vector activation_rates(const DenseMatrix& latents) {
  const int r = latents.rows, T = latents.cols;
  if (r < 1 || T < 1) throw DimensionError("activation_rates: empty latent matrix");
  for (int t = 0; t < T; ++t) {
    double s = 0.0;
    for (int i = 0; i < r; ++i) {
      if (latents(i, t) < -1e-8)
        throw InvalidArgument("activation_rates: negative latent entry in column " +
                              std::to_string(t));
      s += latents(i, t);
    }
    if (std::abs(s - 1.0) > 1e-8)
      throw InvalidArgument("activation_rates: column " + std::to_string(t) +
                            " is not on the simplex");
  }
  Vector rates(r, 0.0);
  double total = 0.0;
  for (int i = 0; i < r; ++i) {
    for (int t = 0; t < T; ++t) rates[i] += latents(i, t);
    total += rates[i];
  }
  if (total <= 0.0) throw NumericalError("activation_rates: degenerate latent mass");
  for (double& v : rates) v /= total;
  return rates;
}

}  // namespace polyrom
