#include "spg/svg.hpp"

#include <sstream>

namespace spg {

std::string graph_svg(const Canvas& canvas, const Adjacency& adj,
                      const std::vector<std::pair<int, int>>& centers,
                      int display_size) {
    require(static_cast<int>(centers.size()) == adj.nodes - 1,
            "svg: center count ", centers.size(), " does not match adjacency ",
            adj.nodes - 1);
    double s = static_cast<double>(display_size) / canvas.size;
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << display_size
       << "\" height=\"" << display_size << "\" viewBox=\"0 0 " << display_size
       << " " << display_size << "\">\n";
    os << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (const Polyline& line : canvas.strokes) {
        if (line.size() == 1) {
            os << "  <circle cx=\"" << line[0].first * s << "\" cy=\""
               << line[0].second * s << "\" r=\"1.5\" fill=\"black\"/>\n";
            continue;
        }
        os << "  <polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < line.size(); ++i) {
            if (i) os << " ";
            os << line[i].first * s << "," << line[i].second * s;
        }
        os << "\"/>\n";
    }

    // strongest edge per inner node
    for (int i = 0; i < adj.nodes - 1; ++i) {
        int j = adj.top1[static_cast<size_t>(i)];
        if (j < 0) continue;
        auto [x0, y0] = centers[static_cast<size_t>(i)];
        auto [x1, y1] = centers[static_cast<size_t>(j)];
        os << "  <line class=\"edge\" x1=\"" << x0 * s << "\" y1=\"" << y0 * s
           << "\" x2=\"" << x1 * s << "\" y2=\"" << y1 * s
           << "\" stroke=\"blue\" stroke-width=\"1.2\"/>\n";
    }
    for (auto [x, y] : centers)
        os << "  <circle class=\"center\" cx=\"" << x * s << "\" cy=\"" << y * s
           << "\" r=\"4\" fill=\"red\"/>\n";

    os << "</svg>\n";
    return os.str();
}

} // namespace spg
