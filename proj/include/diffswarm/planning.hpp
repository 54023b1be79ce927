#pragma once

// Occupancy grids built from IR scans, median denoising, obstacle inflation
// and 8-connected A* search.

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "diffswarm/core.hpp"
#include "diffswarm/sim.hpp"

namespace diffswarm::planning {

enum class CellState : std::uint8_t { kUnknown, kFree, kOccupied };

struct Cell {
  int hit_count = 0;
  CellState state = CellState::kUnknown;
};

struct CellIndex {
  int x = 0;
  int y = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

class OccupancyGrid {
 public:
  /// Cell (0, 0) spans [origin_x, origin_x + resolution) x [origin_y, ...).
  OccupancyGrid(double resolution, double origin_x, double origin_y, int width, int height,
                int occupied_threshold = 2);

  /// Smallest grid at `resolution` covering `bounds`.
  static OccupancyGrid covering(const sim::Rect& bounds, double resolution,
                                int occupied_threshold = 2);

  double resolution() const { return resolution_; }
  double origin_x() const { return origin_x_; }
  double origin_y() const { return origin_y_; }
  int width() const { return width_; }
  int height() const { return height_; }
  int occupied_threshold() const { return threshold_; }

  bool in_bounds(CellIndex c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_;
  }
  /// Cell containing a world point; may be out of bounds.
  CellIndex cell_of(double x, double y) const;
  void cell_center(CellIndex c, double& x, double& y) const;

  const Cell& at(CellIndex c) const { return cells_[index(c)]; }
  CellState state(CellIndex c) const { return at(c).state; }
  /// Free or occupied: traversal treats unknown as blocked.
  bool blocked(CellIndex c) const { return state(c) != CellState::kFree; }

  /// Sets the state directly, keeping hit_count consistent with it.
  void set_state(CellIndex c, CellState s);
  /// One endpoint observation.
  void add_hit(CellIndex c);
  /// One pass-through observation: hit_count decremented (floor 0).
  void mark_free(CellIndex c);

  std::size_t count(CellState s) const;

  friend bool operator==(const OccupancyGrid& a, const OccupancyGrid& b);

 private:
  std::size_t index(CellIndex c) const {
    if (!in_bounds(c)) throw std::out_of_range("grid cell out of bounds");
    return static_cast<std::size_t>(c.y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(c.x);
  }
  void refresh(Cell& cell) const {
    cell.state = cell.hit_count >= threshold_ ? CellState::kOccupied : CellState::kFree;
  }

  double resolution_;
  double origin_x_;
  double origin_y_;
  int width_;
  int height_;
  int threshold_;
  std::vector<Cell> cells_;
};

/// Cells a segment passes through, in order, starting with the cell of
/// (x0, y0). Stops at the end cell or where the segment leaves the grid.
std::vector<CellIndex> traverse(const OccupancyGrid& grid, double x0, double y0, double x1,
                                double y1);

struct IngestStats {
  std::uint64_t hits = 0;
  std::uint64_t skipped = 0;  // endpoint outside the grid
};

/// Rays start at the robot center. An in-range reading frees the cells
/// before its endpoint and adds a hit to the endpoint cell. A missing reading
/// frees every cell out to ir_range_max.
IngestStats ingest_ir_scan(OccupancyGrid& grid, const Posture& pose, const sim::IrScan& scan,
                           const RobotGeometry& geom);

/// Binary median over a window x window neighborhood. Out-of-bounds and
/// unknown cells count as free; unknown cells stay unknown. Throws
/// std::domain_error for an even window or one below 3.
OccupancyGrid median_filter(const OccupancyGrid& grid, int window);

struct InflateOptions {
  // Also grow blocked space around unknown cells.
  bool unknown_as_source = false;
};

/// Marks free cells within euclidean distance `margin` (mm) of a source cell
/// as occupied.
OccupancyGrid inflate(const OccupancyGrid& grid, double margin, InflateOptions options = {});

struct GridPath {
  std::vector<CellIndex> cells;
  int axis_steps = 0;
  int diagonal_steps = 0;
  double cost = 0.0;  // axis_steps + sqrt(2) diagonal_steps, in cells
};

/// Cost of a run of axis and diagonal steps, computed the same way everywhere
/// so equal step counts compare exactly.
double step_cost(int axis_steps, int diagonal_steps);

class InvalidEndpoint : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SearchResult {
  std::optional<GridPath> path;         // nullopt means no path
  std::vector<CellIndex> expanded;      // in expansion order
};

/// Throws InvalidEndpoint when start or goal is out of bounds or not free.
SearchResult astar_search(const OccupancyGrid& grid, CellIndex start, CellIndex goal);
std::optional<GridPath> astar(const OccupancyGrid& grid, CellIndex start, CellIndex goal);

/// Euclidean distance between cells, in cells.
double heuristic(CellIndex a, CellIndex b);

/// Binary PGM (P5), one byte per cell: 0 free, 127 unknown, 255 occupied.
/// The first row written is the top (largest y) row.
void write_pgm(const OccupancyGrid& grid, std::ostream& out);
/// Plain-text sidecar with resolution, origin and dimensions.
void write_header(const OccupancyGrid& grid, std::ostream& out);

/// Smallest obstacle clearance (mm) along the polyline through the path's
/// cell centers, sampled every `step` mm.
double path_clearance(const GridPath& path, const OccupancyGrid& grid, const sim::World& world,
                      double step = 1.0);

}  // namespace diffswarm::planning
