#include "diffswarm/planning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <tuple>

namespace diffswarm::planning {
namespace {

constexpr double kSqrt2 = 1.4142135623730951;

// Nudge past exact cell boundaries so an endpoint on a boundary lands in the
// far cell consistently.
constexpr double kEndpointNudge = 1e-6;

}  // namespace

OccupancyGrid::OccupancyGrid(double resolution, double origin_x, double origin_y, int width,
                             int height, int occupied_threshold)
    : resolution_(resolution),
      origin_x_(origin_x),
      origin_y_(origin_y),
      width_(width),
      height_(height),
      threshold_(occupied_threshold) {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw std::invalid_argument("grid: resolution must be > 0");
  }
  if (width <= 0 || height <= 0) throw std::invalid_argument("grid: dimensions must be > 0");
  if (occupied_threshold < 1) throw std::invalid_argument("grid: occupied threshold must be >= 1");
  cells_.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
}

OccupancyGrid OccupancyGrid::covering(const sim::Rect& bounds, double resolution,
                                      int occupied_threshold) {
  if (!(resolution > 0.0)) throw std::invalid_argument("grid: resolution must be > 0");
  const int w = static_cast<int>(std::ceil((bounds.max_x - bounds.min_x) / resolution - 1e-9));
  const int h = static_cast<int>(std::ceil((bounds.max_y - bounds.min_y) / resolution - 1e-9));
  return OccupancyGrid(resolution, bounds.min_x, bounds.min_y, std::max(w, 1), std::max(h, 1),
                       occupied_threshold);
}

CellIndex OccupancyGrid::cell_of(double x, double y) const {
  return {static_cast<int>(std::floor((x - origin_x_) / resolution_)),
          static_cast<int>(std::floor((y - origin_y_) / resolution_))};
}

void OccupancyGrid::cell_center(CellIndex c, double& x, double& y) const {
  x = origin_x_ + (c.x + 0.5) * resolution_;
  y = origin_y_ + (c.y + 0.5) * resolution_;
}

void OccupancyGrid::set_state(CellIndex c, CellState s) {
  Cell& cell = cells_[index(c)];
  cell.state = s;
  if (s == CellState::kOccupied) cell.hit_count = std::max(cell.hit_count, threshold_);
  if (s != CellState::kOccupied) cell.hit_count = std::min(cell.hit_count, threshold_ - 1);
}

void OccupancyGrid::add_hit(CellIndex c) {
  Cell& cell = cells_[index(c)];
  ++cell.hit_count;
  refresh(cell);
}

void OccupancyGrid::mark_free(CellIndex c) {
  Cell& cell = cells_[index(c)];
  cell.hit_count = std::max(cell.hit_count - 1, 0);
  refresh(cell);
}

std::size_t OccupancyGrid::count(CellState s) const {
  return static_cast<std::size_t>(
      std::count_if(cells_.begin(), cells_.end(), [s](const Cell& c) { return c.state == s; }));
}

bool operator==(const OccupancyGrid& a, const OccupancyGrid& b) {
  if (a.resolution_ != b.resolution_ || a.origin_x_ != b.origin_x_ ||
      a.origin_y_ != b.origin_y_ || a.width_ != b.width_ || a.height_ != b.height_) {
    return false;
  }
  for (std::size_t i = 0; i < a.cells_.size(); ++i) {
    if (a.cells_[i].state != b.cells_[i].state || a.cells_[i].hit_count != b.cells_[i].hit_count) {
      return false;
    }
  }
  return true;
}

std::vector<CellIndex> traverse(const OccupancyGrid& grid, double x0, double y0, double x1,
                                double y1) {
  std::vector<CellIndex> out;
  const double rho = grid.resolution();
  CellIndex c = grid.cell_of(x0, y0);
  const CellIndex end = grid.cell_of(x1, y1);
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  const int step_x = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
  const int step_y = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Parametric distance (0..1) to the next vertical / horizontal boundary.
  auto boundary = [&](int cell, int step, double origin, double p0, double d) {
    if (step == 0) return kInf;
    const double edge = origin + (cell + (step > 0 ? 1 : 0)) * rho;
    return (edge - p0) / d;
  };
  double t_max_x = boundary(c.x, step_x, grid.origin_x(), x0, dx);
  double t_max_y = boundary(c.y, step_y, grid.origin_y(), y0, dy);
  const double t_delta_x = step_x == 0 ? kInf : rho / std::abs(dx);
  const double t_delta_y = step_y == 0 ? kInf : rho / std::abs(dy);

  const std::size_t limit = static_cast<std::size_t>(std::abs(end.x - c.x) + std::abs(end.y - c.y));
  while (grid.in_bounds(c)) {
    out.push_back(c);
    if (c == end || out.size() > limit) break;
    if (t_max_x < t_max_y) {
      c.x += step_x;
      t_max_x += t_delta_x;
    } else {
      c.y += step_y;
      t_max_y += t_delta_y;
    }
  }
  return out;
}

IngestStats ingest_ir_scan(OccupancyGrid& grid, const Posture& pose, const sim::IrScan& scan,
                           const RobotGeometry& geom) {
  IngestStats stats;
  for (std::size_t i = 0; i < scan.size(); ++i) {
    const double bearing = pose.theta + geom.ir_ray_angles[i];
    const double ux = std::cos(bearing);
    const double uy = std::sin(bearing);
    if (scan[i]) {
      const double r = *scan[i] + kEndpointNudge;
      const double ex = pose.x + r * ux;
      const double ey = pose.y + r * uy;
      const CellIndex end = grid.cell_of(ex, ey);
      if (!grid.in_bounds(end)) {
        ++stats.skipped;
        continue;
      }
      for (const CellIndex& c : traverse(grid, pose.x, pose.y, ex, ey)) {
        if (c == end) break;
        grid.mark_free(c);
      }
      grid.add_hit(end);
      ++stats.hits;
    } else {
      const double r = geom.ir_range_max;
      for (const CellIndex& c : traverse(grid, pose.x, pose.y, pose.x + r * ux, pose.y + r * uy)) {
        grid.mark_free(c);
      }
    }
  }
  return stats;
}

OccupancyGrid median_filter(const OccupancyGrid& grid, int window) {
  if (window < 3 || window % 2 == 0) {
    throw std::domain_error("median_filter: window must be odd and >= 3");
  }
  const int half = window / 2;
  const int majority = window * window / 2 + 1;
  OccupancyGrid out = grid;
  for (int y = 0; y < grid.height(); ++y) {
    for (int x = 0; x < grid.width(); ++x) {
      const CellIndex c{x, y};
      if (grid.state(c) == CellState::kUnknown) continue;
      int occupied = 0;
      for (int oy = -half; oy <= half; ++oy) {
        for (int ox = -half; ox <= half; ++ox) {
          const CellIndex n{x + ox, y + oy};
          if (grid.in_bounds(n) && grid.state(n) == CellState::kOccupied) ++occupied;
        }
      }
      out.set_state(c, occupied >= majority ? CellState::kOccupied : CellState::kFree);
    }
  }
  return out;
}

OccupancyGrid inflate(const OccupancyGrid& grid, double margin, InflateOptions options) {
  if (!(margin >= 0.0)) throw std::invalid_argument("inflate: margin must be >= 0");
  const double radius = margin / grid.resolution();
  const int reach = static_cast<int>(std::ceil(radius));
  const double r2 = radius * radius + 1e-9;
  std::vector<CellIndex> disc;
  for (int oy = -reach; oy <= reach; ++oy) {
    for (int ox = -reach; ox <= reach; ++ox) {
      if (ox * ox + oy * oy <= r2) disc.push_back({ox, oy});
    }
  }
  OccupancyGrid out = grid;
  for (int y = 0; y < grid.height(); ++y) {
    for (int x = 0; x < grid.width(); ++x) {
      const CellState s = grid.state({x, y});
      const bool source = s == CellState::kOccupied ||
                          (options.unknown_as_source && s == CellState::kUnknown);
      if (!source) continue;
      for (const CellIndex& d : disc) {
        const CellIndex n{x + d.x, y + d.y};
        if (grid.in_bounds(n) && out.state(n) == CellState::kFree) {
          out.set_state(n, CellState::kOccupied);
        }
      }
    }
  }
  return out;
}

double step_cost(int axis_steps, int diagonal_steps) {
  return static_cast<double>(axis_steps) + static_cast<double>(diagonal_steps) * kSqrt2;
}

double heuristic(CellIndex a, CellIndex b) {
  return std::hypot(static_cast<double>(a.x - b.x), static_cast<double>(a.y - b.y));
}

SearchResult astar_search(const OccupancyGrid& grid, CellIndex start, CellIndex goal) {
  for (const CellIndex& c : {start, goal}) {
    if (!grid.in_bounds(c)) throw InvalidEndpoint("astar: endpoint outside the grid");
    if (grid.blocked(c)) throw InvalidEndpoint("astar: endpoint is occupied or unknown");
  }
  const auto w = static_cast<std::size_t>(grid.width());
  const std::size_t n = w * static_cast<std::size_t>(grid.height());
  auto idx = [w](CellIndex c) { return static_cast<std::size_t>(c.y) * w + static_cast<std::size_t>(c.x); };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> g(n, kInf);
  std::vector<std::size_t> parent(n, n);
  std::vector<bool> closed(n, false);

  using Entry = std::tuple<double, double, int, int>;  // f, h, x, y
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  g[idx(start)] = 0.0;
  open.emplace(heuristic(start, goal), heuristic(start, goal), start.x, start.y);

  SearchResult result;
  while (!open.empty()) {
    const auto [f, h, x, y] = open.top();
    open.pop();
    const CellIndex c{x, y};
    const std::size_t ci = idx(c);
    if (closed[ci]) continue;
    closed[ci] = true;
    result.expanded.push_back(c);
    if (c == goal) break;

    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const CellIndex nb{x + dx, y + dy};
        if (!grid.in_bounds(nb) || grid.blocked(nb)) continue;
        const bool diagonal = dx != 0 && dy != 0;
        if (diagonal && grid.blocked({x + dx, y}) && grid.blocked({x, y + dy})) continue;
        const std::size_t ni = idx(nb);
        if (closed[ni]) continue;
        const double candidate = g[ci] + (diagonal ? kSqrt2 : 1.0);
        if (candidate < g[ni]) {
          g[ni] = candidate;
          parent[ni] = ci;
          const double hn = heuristic(nb, goal);
          open.emplace(candidate + hn, hn, nb.x, nb.y);
        }
      }
    }
  }

  if (!closed[idx(goal)]) return result;
  GridPath path;
  for (std::size_t i = idx(goal); i != n; i = parent[i]) {
    path.cells.push_back({static_cast<int>(i % w), static_cast<int>(i / w)});
  }
  std::reverse(path.cells.begin(), path.cells.end());
  for (std::size_t i = 1; i < path.cells.size(); ++i) {
    const bool diagonal = path.cells[i].x != path.cells[i - 1].x &&
                          path.cells[i].y != path.cells[i - 1].y;
    ++(diagonal ? path.diagonal_steps : path.axis_steps);
  }
  path.cost = step_cost(path.axis_steps, path.diagonal_steps);
  result.path = std::move(path);
  return result;
}

std::optional<GridPath> astar(const OccupancyGrid& grid, CellIndex start, CellIndex goal) {
  return astar_search(grid, start, goal).path;
}

void write_pgm(const OccupancyGrid& grid, std::ostream& out) {
  out << "P5\n" << grid.width() << ' ' << grid.height() << "\n255\n";
  for (int y = grid.height() - 1; y >= 0; --y) {
    for (int x = 0; x < grid.width(); ++x) {
      unsigned char byte = 127;
      switch (grid.state({x, y})) {
        case CellState::kFree: byte = 0; break;
        case CellState::kOccupied: byte = 255; break;
        case CellState::kUnknown: byte = 127; break;
      }
      out.put(static_cast<char>(byte));
    }
  }
}

void write_header(const OccupancyGrid& grid, std::ostream& out) {
  out << "resolution_mm " << grid.resolution() << '\n'
      << "origin_x_mm " << grid.origin_x() << '\n'
      << "origin_y_mm " << grid.origin_y() << '\n'
      << "width " << grid.width() << '\n'
      << "height " << grid.height() << '\n'
      << "encoding 0=free 127=unknown 255=occupied, first row is max y\n";
}

double path_clearance(const GridPath& path, const OccupancyGrid& grid, const sim::World& world,
                      double step) {
  if (!(step > 0.0)) throw std::invalid_argument("path_clearance: step must be > 0");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < path.cells.size(); ++i) {
    double ax = 0.0;
    double ay = 0.0;
    grid.cell_center(path.cells[i], ax, ay);
    best = std::min(best, world.clearance(ax, ay));
    if (i + 1 == path.cells.size()) break;
    double bx = 0.0;
    double by = 0.0;
    grid.cell_center(path.cells[i + 1], bx, by);
    const double len = std::hypot(bx - ax, by - ay);
    const int samples = static_cast<int>(std::ceil(len / step));
    for (int k = 1; k < samples; ++k) {
      const double a = static_cast<double>(k) / samples;
      best = std::min(best, world.clearance(ax + a * (bx - ax), ay + a * (by - ay)));
    }
  }
  return best;
}

}  // namespace diffswarm::planning
