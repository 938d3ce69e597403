#ifndef POLYROM_CLUSTERING_HPP
#define POLYROM_CLUSTERING_HPP

#include <string>
#include <vector>

#include "polyrom/linalg.hpp"

namespace polyrom {

struct KmeansResult {
  DenseMatrix centroids;         // k rows, one centroid per row
  std::vector<int> assignment;   // point -> cluster id
  double inertia = 0.0;          // sum of squared distances to assigned centroids
  int iterations = 0;
  Vector inertia_history;        // value after each assignment pass, nonincreasing
};

// Lloyd iteration with k-means++ seeding. Deterministic for a given seed;
// ties go to the lowest centroid index; an emptied cluster is reseeded to
// the point farthest from its assigned centroid.
KmeansResult kmeans(const DenseMatrix& points, int k, unsigned seed, int max_iter = 300);

struct PseudoLabelSet {
  std::vector<int> indices;      // indices of selected points
  DenseMatrix labels;            // one one-hot row per selected point, k columns
  std::vector<int> cluster_of;   // cluster id per selected point
  Vector radii;                  // per-cluster mean member distance
  std::vector<std::string> warnings;
};

// Keeps the points strictly closer to their centroid than the mean member
// distance of that cluster; labels are unit vectors with the cluster id hot.
PseudoLabelSet select_pseudo_labels(const DenseMatrix& points, const KmeansResult& km);

// Mean simplex coordinate per latent component: rates_i = sum_t rho_{i,t}
// normalized over all components. Columns of `latents` must lie on the
// probability simplex (1e-8 tolerance).
Vector activation_rates(const DenseMatrix& latents);

}  // namespace polyrom

#endif
