#pragma once

#include <string>
#include <vector>

#include "spg/graph.hpp"
#include "spg/raster.hpp"

namespace spg {

// Diagnostic figure: the sketch polylines in black, patch centers as red
// dots, and each inner node's strongest edge as a blue line.
std::string graph_svg(const Canvas& canvas, const Adjacency& adj,
                      const std::vector<std::pair<int, int>>& centers,
                      int display_size = 512);

} // namespace spg
