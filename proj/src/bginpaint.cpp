#include <edit3d/bginpaint.hpp>

#include "poisson_solver.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace edit3d::bginpaint {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Mask fill_region(const GradientField &g, const Mask &hole) {
  require(hole.same_shape(g.gx) && g.valid_mask.same_shape(g.gx) && g.gy.same_shape(g.gx), ErrorKind::InvalidInput,
          "gradient field and hole sizes differ");
  return mask::unite(hole, mask::invert(g.valid_mask));
}

// Fill order: increasing Euclidean distance to the nearest known pixel, ties broken by index.
std::vector<int> distance_order(const Mask &unknown) {
  const int w = unknown.width();
  const int h = unknown.height();
  Grid<double> dist(w, h, std::numeric_limits<double>::infinity());
  Grid<int> seed(w, h, -1);
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (unknown(u, v) != 0) {
        continue;
      }
      const auto idx = static_cast<int>(unknown.index(u, v));
      dist[static_cast<std::size_t>(idx)] = 0.0;
      seed[static_cast<std::size_t>(idx)] = idx;
      bool frontier = false;
      for (int dv = -1; dv <= 1 && !frontier; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          if (unknown.contains(u + du, v + dv) && unknown(u + du, v + dv) != 0) {
            frontier = true;
            break;
          }
        }
      }
      if (frontier) {
        queue.emplace(0.0, idx);
      }
    }
  }
  std::vector<int> order;
  Mask done(w, h);
  while (!queue.empty()) {
    const auto [d, idx] = queue.top();
    queue.pop();
    const auto sidx = static_cast<std::size_t>(idx);
    if (done[sidx] != 0 || d > dist[sidx]) {
      continue;
    }
    done[sidx] = 1;
    const int u = idx % w;
    const int v = idx / w;
    if (unknown[sidx] != 0) {
      order.push_back(idx);
    }
    const int s = seed[sidx];
    const int su = s % w;
    const int sv = s / w;
    for (int dv = -1; dv <= 1; ++dv) {
      for (int du = -1; du <= 1; ++du) {
        const int nu = u + du;
        const int nv = v + dv;
        if (!unknown.contains(nu, nv) || unknown(nu, nv) == 0) {
          continue;
        }
        const auto nidx = unknown.index(nu, nv);
        const double nd = std::hypot(nu - su, nv - sv);
        if (nd < dist[nidx] && done[nidx] == 0) {
          dist[nidx] = nd;
          seed[nidx] = s;
          queue.emplace(nd, static_cast<int>(nidx));
        }
      }
    }
  }
  return order;
}

FillResult fill_coherence(const GradientField &g, const Mask &unknown, const FillOptions &opt) {
  FillResult out;
  out.field = g;
  out.field.valid_mask = Mask(g.gx.width(), g.gx.height(), 1);
  Grid<double> &gx = out.field.gx;
  Grid<double> &gy = out.field.gy;
  const int w = gx.width();
  const int h = gx.height();
  Mask available = mask::invert(unknown);

  const auto derivative = [&](const Grid<double> &c, int u, int v, int du, int dv, double &out_d) {
    const bool fwd = available.contains(u + du, v + dv) && available(u + du, v + dv) != 0;
    const bool bwd = available.contains(u - du, v - dv) && available(u - du, v - dv) != 0;
    if (fwd && bwd) {
      out_d = 0.5 * (c(u + du, v + dv) - c(u - du, v - dv));
    } else if (fwd) {
      out_d = c(u + du, v + dv) - c(u, v);
    } else if (bwd) {
      out_d = c(u, v) - c(u - du, v - dv);
    } else {
      return false;
    }
    return true;
  };

  // Scale of the data's own variation decides when the structure tensor is just noise.
  double scale = 0.0;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (available(u, v) == 0) {
        continue;
      }
      for (const Grid<double> *c : {&gx, &gy}) {
        double dx = 0.0;
        double dy = 0.0;
        if (derivative(*c, u, v, 1, 0, dx) && derivative(*c, u, v, 0, 1, dy)) {
          scale = std::max(scale, dx * dx + dy * dy);
        }
      }
    }
  }
  const double floor = 1e-8 * scale + std::numeric_limits<double>::min();

  const int r = static_cast<int>(std::ceil(opt.radius));
  const int tr = static_cast<int>(std::ceil(opt.tensor_radius));
  const double sigma = 0.5 * opt.tensor_radius;
  const double eps2 = opt.radius * opt.radius;

  for (const int idx : distance_order(unknown)) {
    const int u = idx % w;
    const int v = idx / w;

    double j11 = 0.0;
    double j12 = 0.0;
    double j22 = 0.0;
    for (int dv = -tr; dv <= tr; ++dv) {
      for (int du = -tr; du <= tr; ++du) {
        const int qu = u + du;
        const int qv = v + dv;
        if (du * du + dv * dv > tr * tr || !available.contains(qu, qv) || available(qu, qv) == 0) {
          continue;
        }
        const double gw = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
        for (const Grid<double> *c : {&gx, &gy}) {
          double dx = 0.0;
          double dy = 0.0;
          if (derivative(*c, qu, qv, 1, 0, dx) && derivative(*c, qu, qv, 0, 1, dy)) {
            j11 += gw * dx * dx;
            j12 += gw * dx * dy;
            j22 += gw * dy * dy;
          }
        }
      }
    }
    const double tr_j = j11 + j22;
    const double diff = std::sqrt((j11 - j22) * (j11 - j22) + 4.0 * j12 * j12);
    const double l1 = 0.5 * (tr_j + diff);
    const double l2 = 0.5 * (tr_j - diff);
    double nx = 1.0;
    double ny = 0.0;
    double coherence = 0.0;
    if (l1 > floor) {
      coherence = (l1 - l2) / (l1 + l2);
      // Eigenvector of the larger eigenvalue: the direction across edges.
      if (std::abs(j12) > 0.0) {
        nx = l1 - j22;
        ny = j12;
      } else if (j22 > j11) {
        nx = 0.0;
        ny = 1.0;
      }
      const double n = std::hypot(nx, ny);
      nx /= n;
      ny /= n;
    }
    const double mu = opt.sharpness * coherence;
    const double k = mu * mu / (2.0 * eps2);

    double wsum = 0.0;
    double sx = 0.0;
    double sy = 0.0;
    for (int dv = -r; dv <= r; ++dv) {
      for (int du = -r; du <= r; ++du) {
        const int qu = u + du;
        const int qv = v + dv;
        if ((du == 0 && dv == 0) || du * du + dv * dv > eps2 || !available.contains(qu, qv) ||
            available(qu, qv) == 0) {
          continue;
        }
        const double across = nx * du + ny * dv;
        const double wq = std::exp(-k * across * across) / std::hypot(du, dv);
        wsum += wq;
        sx += wq * gx(qu, qv);
        sy += wq * gy(qu, qv);
      }
    }
    if (wsum > 0.0) {
      gx(u, v) = sx / wsum;
      gy(u, v) = sy / wsum;
    } else {
      gx(u, v) = 0.0;
      gy(u, v) = 0.0;
    }
    available(u, v) = 1;
  }
  out.converged = true;
  out.iterations = 1;
  return out;
}

FillResult fill_harmonic(const GradientField &g, const Mask &unknown, const FillOptions &opt) {
  FillResult out;
  out.field = g;
  out.field.valid_mask = Mask(g.gx.width(), g.gx.height(), 1);
  detail::SolveSettings settings;
  settings.tolerance = opt.tolerance;
  settings.max_sweeps = opt.max_iterations;
  const Grid<double> rhs(g.gx.width(), g.gx.height(), 0.0);
  out.converged = true;
  for (Grid<double> *c : {&out.field.gx, &out.field.gy}) {
    // Start the unknowns at the mean of the known data.
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < c->size(); ++i) {
      if (unknown[i] == 0) {
        sum += (*c)[i];
        ++n;
      }
    }
    const double mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
    for (std::size_t i = 0; i < c->size(); ++i) {
      if (unknown[i] != 0) {
        (*c)[i] = mean;
      }
    }
    const auto outcome = detail::solve_masked_poisson(*c, unknown, rhs, settings);
    out.converged = out.converged && outcome.converged;
    out.iterations = std::max(out.iterations, outcome.sweeps);
    out.residual = std::max(out.residual, outcome.history.back());
  }
  return out;
}

// Right-hand side for n_p d_p - sum_q d_q = -sum_q flux_pq with face flux from averaged gradients.
Grid<double> divergence_rhs(const GradientField &g, const Mask &hole) {
  const int w = g.gx.width();
  const int h = g.gx.height();
  Grid<double> rhs(w, h, 0.0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (hole(u, v) == 0) {
        continue;
      }
      double flux = 0.0;
      if (u + 1 < w) {
        flux += 0.5 * (g.gx(u, v) + g.gx(u + 1, v));
      }
      if (u > 0) {
        flux -= 0.5 * (g.gx(u, v) + g.gx(u - 1, v));
      }
      if (v + 1 < h) {
        flux += 0.5 * (g.gy(u, v) + g.gy(u, v + 1));
      }
      if (v > 0) {
        flux -= 0.5 * (g.gy(u, v) + g.gy(u, v - 1));
      }
      rhs(u, v) = -flux;
    }
  }
  return rhs;
}

} // namespace

GradientField disparity_gradient(const geom::DisparityMap &disparity, const Mask &hole) {
  const int w = disparity.width();
  const int h = disparity.height();
  require(hole.width() == w && hole.height() == h, ErrorKind::InvalidInput, "disparity/hole sizes differ");
  require(mask::count(hole) < hole.size(), ErrorKind::Degenerate, "disparity_gradient: hole covers the whole image");
  for (std::size_t i = 0; i < hole.size(); ++i) {
    require(hole[i] != 0 || std::isfinite(disparity.values[i]), ErrorKind::InvalidInput,
            "disparity_gradient: disparity must be valid outside the hole");
  }
  GradientField g{Grid<double>(w, h, kNaN), Grid<double>(w, h, kNaN), mask::erode(mask::invert(hole), 1)};
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (g.valid_mask(u, v) == 0) {
        continue;
      }
      const auto &d = disparity.values;
      if (w == 1) {
        g.gx(u, v) = 0.0;
      } else if (u == 0) {
        g.gx(u, v) = d(1, v) - d(0, v);
      } else if (u == w - 1) {
        g.gx(u, v) = d(u, v) - d(u - 1, v);
      } else {
        g.gx(u, v) = 0.5 * (d(u + 1, v) - d(u - 1, v));
      }
      if (h == 1) {
        g.gy(u, v) = 0.0;
      } else if (v == 0) {
        g.gy(u, v) = d(u, 1) - d(u, 0);
      } else if (v == h - 1) {
        g.gy(u, v) = d(u, v) - d(u, v - 1);
      } else {
        g.gy(u, v) = 0.5 * (d(u, v + 1) - d(u, v - 1));
      }
    }
  }
  return g;
}

FillResult fill_gradient(const GradientField &g, const Mask &hole, const FillOptions &options) {
  const Mask unknown = fill_region(g, hole);
  if (!mask::any(unknown)) {
    FillResult out;
    out.field = g;
    return out;
  }
  require(mask::count(unknown) < unknown.size(), ErrorKind::Degenerate, "fill_gradient: nothing known to fill from");
  switch (options.method) {
  case FillMethod::CoherenceTransport:
    return fill_coherence(g, unknown, options);
  case FillMethod::Harmonic:
    return fill_harmonic(g, unknown, options);
  }
  fail(ErrorKind::InvalidConfig, "fill_gradient: unknown method");
}

double poisson_residual(const GradientField &g, const geom::DisparityMap &d, const Mask &hole) {
  return detail::max_residual(d.values, hole, divergence_rhs(g, hole));
}

geom::DisparityMap poisson_reconstruct(const GradientField &g, const geom::DisparityMap &anchor, const Mask &hole,
                                       const PoissonOptions &options, PoissonReport *report) {
  const int w = anchor.width();
  const int h = anchor.height();
  require(hole.width() == w && hole.height() == h && g.gx.width() == w && g.gx.height() == h,
          ErrorKind::InvalidInput, "poisson_reconstruct: size mismatch");
  geom::DisparityMap out = anchor;
  if (!mask::any(hole)) {
    if (report != nullptr) {
      *report = {{0.0}, 0, true};
    }
    return out;
  }
  const Mask ring = mask::subtract(mask::dilate(hole, 1), hole);
  double ring_sum = 0.0;
  std::size_t ring_n = 0;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (hole(u, v) != 0) {
        require(g.valid_mask(u, v) != 0, ErrorKind::InvalidInput,
                "poisson_reconstruct: gradient undefined inside the hole");
        continue;
      }
      if (ring(u, v) == 0) {
        continue;
      }
      require(std::isfinite(anchor(u, v)), ErrorKind::InvalidInput, "poisson_reconstruct: anchor invalid on ring");
      require(g.valid_mask(u, v) != 0, ErrorKind::InvalidInput, "poisson_reconstruct: gradient undefined on ring");
      ring_sum += anchor(u, v);
      ++ring_n;
    }
  }
  require(ring_n > 0, ErrorKind::Degenerate, "poisson_reconstruct: no Dirichlet boundary");
  const double start = ring_sum / static_cast<double>(ring_n);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (hole[i] != 0) {
      out.values[i] = start;
    }
  }
  const Grid<double> rhs = divergence_rhs(g, hole);
  detail::SolveSettings settings;
  settings.tolerance = options.tolerance;
  settings.max_sweeps = options.max_sweeps;
  settings.multigrid = options.multigrid;
  settings.pre_smooth = options.pre_smooth;
  settings.post_smooth = options.post_smooth;
  const auto outcome = detail::solve_masked_poisson(out.values, hole, rhs, settings);
  if (report != nullptr) {
    *report = {outcome.history, outcome.sweeps, outcome.converged};
  }
  if (!outcome.converged) {
    fail(ErrorKind::SolverFailure, fmt::format("poisson_reconstruct: no convergence after {} sweeps, residual {:.3e}",
                                               outcome.sweeps, outcome.history.back()));
  }
  return out;
}

geom::DepthMap inpaint_background_depth(const geom::DepthMap &depth, const Mask &object_mask,
                                        const BackgroundOptions &options) {
  require(depth.values.same_shape(object_mask), ErrorKind::InvalidInput, "inpaint_background_depth: size mismatch");
  if (!mask::any(object_mask)) {
    return depth;
  }
  Mask hole = object_mask;
  for (std::size_t i = 0; i < hole.size(); ++i) {
    if (!std::isfinite(depth.values[i]) || depth.values[i] <= 0.0) {
      hole[i] = 1;
    }
  }
  require(mask::count(hole) < hole.size(), ErrorKind::Degenerate,
          "inpaint_background_depth: mask covers the whole image");
  const geom::DisparityMap disparity = geom::depth_to_disparity(depth, options.max_disparity);
  const GradientField g = disparity_gradient(disparity, hole);
  const FillResult filled = fill_gradient(g, hole, options.fill);
  const geom::DisparityMap completed = poisson_reconstruct(filled.field, disparity, hole, options.poisson);

  geom::DepthMap out = depth;
  const double min_disparity = 1.0 / 1.0e3;
  for (std::size_t i = 0; i < hole.size(); ++i) {
    if (hole[i] != 0) {
      out.values[i] = 1.0 / std::clamp(completed.values[i], min_disparity, options.max_disparity);
    }
  }
  return out;
}

} // namespace edit3d::bginpaint
