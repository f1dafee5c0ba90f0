#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hsdiff/geometry.hpp"

namespace hsdiff::detail {

// Bucket grid over the torus used to find neighbours closer than a cutoff.
// Falls back to an all-pairs scan when fewer than three buckets fit per axis.
class OccupancyGrid {
 public:
  OccupancyGrid(const TorusGeometry& geom, double cutoff) : geom_(geom), cutoff_(cutoff) {
    ncell_ = static_cast<int>(std::floor(geom.side / cutoff));
    if (ncell_ < 3) ncell_ = 1;
    width_ = geom.side / ncell_;
    std::size_t total = 1;
    for (int k = 0; k < geom.dim; ++k) total *= static_cast<std::size_t>(ncell_);
    buckets_.resize(total);
  }

  void insert(std::uint32_t id, const Vec& x) { buckets_[bucket_of(x)].push_back(id); }

  void erase(std::uint32_t id, const Vec& x) {
    auto& b = buckets_[bucket_of(x)];
    for (std::size_t k = 0; k < b.size(); ++k) {
      if (b[k] == id) {
        b[k] = b.back();
        b.pop_back();
        return;
      }
    }
  }

  // Calls f(id) for every stored id in the 3^d block around x (or all ids).
  template <typename F>
  void for_each_near(const Vec& x, F&& f) const {
    if (ncell_ == 1) {
      for (auto id : buckets_[0]) f(id);
      return;
    }
    const auto c = coords(x);
    const int zr = geom_.dim == 3 ? 1 : 0;
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b)
        for (int z = -zr; z <= zr; ++z) {
          const int ix = wrap(c[0] + a), iy = wrap(c[1] + b);
          std::size_t idx = static_cast<std::size_t>(ix) * ncell_ + iy;
          if (geom_.dim == 3) idx = idx * ncell_ + wrap(c[2] + z);
          for (auto id : buckets_[idx]) f(id);
        }
  }

 private:
  int wrap(int i) const { return ((i % ncell_) + ncell_) % ncell_; }

  std::array<int, 3> coords(const Vec& x) const {
    std::array<int, 3> c{0, 0, 0};
    for (int k = 0; k < geom_.dim; ++k) {
      c[k] = wrap(static_cast<int>(std::floor(x[k] / width_)));
    }
    return c;
  }

  std::size_t bucket_of(const Vec& x) const {
    if (ncell_ == 1) return 0;
    const auto c = coords(x);
    std::size_t idx = static_cast<std::size_t>(c[0]) * ncell_ + c[1];
    if (geom_.dim == 3) idx = idx * ncell_ + c[2];
    return idx;
  }

  TorusGeometry geom_;
  double cutoff_;
  int ncell_ = 1;
  double width_ = 1.0;
  std::vector<std::vector<std::uint32_t>> buckets_;
};

}  // namespace hsdiff::detail
