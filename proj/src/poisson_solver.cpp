#include "poisson_solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace edit3d::bginpaint::detail {
namespace {

// Symmetric system over the unknown cells of one level. Off-diagonal couplings are stored as
// positive weights a_ij with A_ij = -a_ij.
struct Level {
  std::vector<int> cu;
  std::vector<int> cv;
  std::vector<double> diag;
  std::vector<int> start; // CSR offsets into nbr / weight
  std::vector<int> nbr;
  std::vector<double> weight;
  std::vector<int> red;
  std::vector<int> black;
  std::vector<int> parent; // aggregate index on the next coarser level
  std::vector<double> x;
  std::vector<double> b;

  [[nodiscard]] std::size_t size() const { return diag.size(); }

  void colour() {
    red.clear();
    black.clear();
    for (std::size_t i = 0; i < size(); ++i) {
      ((cu[i] + cv[i]) % 2 == 0 ? red : black).push_back(static_cast<int>(i));
    }
  }

  [[nodiscard]] double residual(std::size_t i) const {
    double ax = diag[i] * x[i];
    for (int k = start[i]; k < start[i + 1]; ++k) {
      ax -= weight[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(nbr[static_cast<std::size_t>(k)])];
    }
    return b[i] - ax;
  }

  void relax(int i) {
    const auto s = static_cast<std::size_t>(i);
    double sum = b[s];
    for (int k = start[s]; k < start[s + 1]; ++k) {
      sum += weight[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(nbr[static_cast<std::size_t>(k)])];
    }
    x[s] = sum / diag[s];
  }

  void smooth(int sweeps, bool reverse) {
    for (int s = 0; s < sweeps; ++s) {
      const auto &first = reverse ? black : red;
      const auto &second = reverse ? red : black;
      for (const int i : first) {
        relax(i);
      }
      for (const int i : second) {
        relax(i);
      }
    }
  }
};

Level fine_level(const Grid<double> &x, const Mask &unknown, const Grid<double> &rhs, Grid<int> &id) {
  const int w = x.width();
  const int h = x.height();
  Level l;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (unknown(u, v) != 0) {
        id(u, v) = static_cast<int>(l.cu.size());
        l.cu.push_back(u);
        l.cv.push_back(v);
      }
    }
  }
  const std::size_t n = l.cu.size();
  l.diag.assign(n, 0.0);
  l.b.assign(n, 0.0);
  l.x.assign(n, 0.0);
  l.start.assign(n + 1, 0);
  constexpr int du[4] = {-1, 1, 0, 0};
  constexpr int dv[4] = {0, 0, -1, 1};
  for (std::size_t i = 0; i < n; ++i) {
    const int u = l.cu[i];
    const int v = l.cv[i];
    l.b[i] = rhs(u, v);
    l.x[i] = x(u, v);
    for (int k = 0; k < 4; ++k) {
      const int nu = u + du[k];
      const int nv = v + dv[k];
      if (!x.contains(nu, nv)) {
        continue;
      }
      l.diag[i] += 1.0;
      if (unknown(nu, nv) != 0) {
        l.nbr.push_back(id(nu, nv));
        l.weight.push_back(1.0);
      } else {
        l.b[i] += x(nu, nv);
      }
    }
    l.start[i + 1] = static_cast<int>(l.nbr.size());
  }
  l.colour();
  return l;
}

// Galerkin coarsening P^T A P with P the piecewise-constant injection over 2x2 aggregates.
Level coarsen(Level &fine) {
  Level c;
  std::unordered_map<long long, int> index;
  const std::size_t n = fine.size();
  fine.parent.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const int u = fine.cu[i] >> 1;
    const int v = fine.cv[i] >> 1;
    const long long key = (static_cast<long long>(v) << 32) | static_cast<unsigned>(u);
    auto [it, inserted] = index.try_emplace(key, static_cast<int>(c.cu.size()));
    if (inserted) {
      c.cu.push_back(u);
      c.cv.push_back(v);
    }
    fine.parent[i] = it->second;
  }
  const std::size_t m = c.cu.size();
  c.diag.assign(m, 0.0);
  std::vector<std::vector<std::pair<int, double>>> rows(m);
  for (std::size_t i = 0; i < n; ++i) {
    const int pi = fine.parent[i];
    c.diag[static_cast<std::size_t>(pi)] += fine.diag[i];
    for (int k = fine.start[i]; k < fine.start[i + 1]; ++k) {
      const int j = fine.nbr[static_cast<std::size_t>(k)];
      const double a = fine.weight[static_cast<std::size_t>(k)];
      const int pj = fine.parent[static_cast<std::size_t>(j)];
      if (pj == pi) {
        c.diag[static_cast<std::size_t>(pi)] -= a;
        continue;
      }
      auto &row = rows[static_cast<std::size_t>(pi)];
      auto found = std::find_if(row.begin(), row.end(), [pj](const auto &e) { return e.first == pj; });
      if (found == row.end()) {
        row.emplace_back(pj, a);
      } else {
        found->second += a;
      }
    }
  }
  c.start.assign(m + 1, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (const auto &[j, a] : rows[i]) {
      c.nbr.push_back(j);
      c.weight.push_back(a);
    }
    c.start[i + 1] = static_cast<int>(c.nbr.size());
  }
  c.x.assign(m, 0.0);
  c.b.assign(m, 0.0);
  c.colour();
  return c;
}

constexpr std::size_t kDirectSize = 256;

class Hierarchy {
public:
  explicit Hierarchy(Level top, bool multigrid) {
    levels_.push_back(std::move(top));
    while (multigrid && levels_.back().size() > kDirectSize) {
      Level next = coarsen(levels_.back());
      if (next.size() * 10 > levels_.back().size() * 9) {
        levels_.back().parent.clear();
        break;
      }
      levels_.push_back(std::move(next));
    }
    const Level &last = levels_.back();
    if (levels_.size() > 1 && last.size() <= kDirectSize) {
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(last.size()),
                                                static_cast<Eigen::Index>(last.size()));
      for (std::size_t i = 0; i < last.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        a(ii, ii) = last.diag[i];
        for (int k = last.start[i]; k < last.start[i + 1]; ++k) {
          a(ii, last.nbr[static_cast<std::size_t>(k)]) -= last.weight[static_cast<std::size_t>(k)];
        }
      }
      direct_ = a.ldlt();
      has_direct_ = true;
    }
  }

  Level &top() { return levels_.front(); }
  [[nodiscard]] bool has_coarse() const { return levels_.size() > 1; }

  void cycle(std::size_t l, int pre, int post) {
    Level &fine = levels_[l];
    if (l + 1 == levels_.size()) {
      if (has_direct_) {
        const Eigen::Map<const Eigen::VectorXd> b(fine.b.data(), static_cast<Eigen::Index>(fine.size()));
        Eigen::Map<Eigen::VectorXd>(fine.x.data(), static_cast<Eigen::Index>(fine.size())) = direct_.solve(b);
      } else {
        fine.smooth(50, false);
      }
      return;
    }
    fine.smooth(pre, false);
    Level &coarse = levels_[l + 1];
    std::fill(coarse.b.begin(), coarse.b.end(), 0.0);
    std::fill(coarse.x.begin(), coarse.x.end(), 0.0);
    std::vector<double> r(fine.size());
    for (std::size_t i = 0; i < fine.size(); ++i) {
      r[i] = fine.residual(i);
      coarse.b[static_cast<std::size_t>(fine.parent[i])] += r[i];
    }
    cycle(l + 1, pre, post);
    // Constant interpolation under-corrects smooth errors; take the energy-minimising step along
    // the prolonged correction instead of a unit step.
    const auto e = [&](std::size_t i) { return coarse.x[static_cast<std::size_t>(fine.parent[i])]; };
    double er = 0.0;
    double eae = 0.0;
    for (std::size_t i = 0; i < fine.size(); ++i) {
      double ae = fine.diag[i] * e(i);
      for (int k = fine.start[i]; k < fine.start[i + 1]; ++k) {
        ae -= fine.weight[static_cast<std::size_t>(k)] * e(static_cast<std::size_t>(fine.nbr[static_cast<std::size_t>(k)]));
      }
      er += e(i) * r[i];
      eae += e(i) * ae;
    }
    const double alpha = eae > 0.0 && er > 0.0 ? er / eae : 1.0;
    for (std::size_t i = 0; i < fine.size(); ++i) {
      fine.x[i] += alpha * e(i);
    }
    fine.smooth(post, true);
  }

private:
  std::vector<Level> levels_;
  Eigen::LDLT<Eigen::MatrixXd> direct_;
  bool has_direct_ = false;
};

double level_residual(const Level &l) {
  double worst = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    worst = std::max(worst, std::abs(l.residual(i)));
  }
  return worst;
}

} // namespace

double max_residual(const Grid<double> &x, const Mask &unknown, const Grid<double> &rhs) {
  Grid<int> id(x.width(), x.height(), -1);
  return level_residual(fine_level(x, unknown, rhs, id));
}

SolveOutcome solve_masked_poisson(Grid<double> &x, const Mask &unknown, const Grid<double> &rhs,
                                  const SolveSettings &settings) {
  SolveOutcome out;
  Grid<int> id(x.width(), x.height(), -1);
  Hierarchy hierarchy(fine_level(x, unknown, rhs, id), settings.multigrid);
  Level &top = hierarchy.top();
  double res = level_residual(top);
  out.history.push_back(res);
  const bool use_mg = hierarchy.has_coarse();
  const int per_cycle = use_mg ? settings.pre_smooth + settings.post_smooth : 10;
  while (res > settings.tolerance && out.sweeps + per_cycle <= settings.max_sweeps) {
    if (use_mg) {
      hierarchy.cycle(0, settings.pre_smooth, settings.post_smooth);
    } else {
      top.smooth(per_cycle, false);
    }
    out.sweeps += per_cycle;
    res = level_residual(top);
    out.history.push_back(res);
  }
  out.converged = res <= settings.tolerance;
  for (std::size_t i = 0; i < top.size(); ++i) {
    x(top.cu[i], top.cv[i]) = top.x[i];
  }
  return out;
}

} // namespace edit3d::bginpaint::detail
