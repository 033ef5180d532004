#include "spg/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "spg/rng.hpp"

namespace spg {

double Canvas::ink_sum() const {
    double s = 0.0;
    for (float p : pixels) s += p;
    return s;
}

namespace {

void draw_segment(Canvas& c, int x0, int y0, int x1, int y1) {
    // integer Bresenham, clipped per pixel
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        if (x0 >= 0 && x0 < c.size && y0 >= 0 && y0 < c.size) c.at(y0, x0) = 1.0f;
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

} // namespace

Canvas rasterize(const StrokeSeq& seq, int size) {
    require(size >= 2, "rasterize: canvas size must be >= 2, got ", size);
    Canvas c;
    c.size = size;
    c.pixels.assign(static_cast<size_t>(size) * size, 0.0f);

    std::vector<Polyline> lines = stroke5_to_polylines(seq);
    if (lines.empty()) return c;

    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    for (const Polyline& l : lines)
        for (auto [x, y] : l) {
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
            min_y = std::min(min_y, y);
            max_y = std::max(max_y, y);
        }
    double span = std::max(max_x - min_x, max_y - min_y);
    double scale = span > 1e-12 ? 0.9 * size / span : 1.0;
    double cx = (min_x + max_x) / 2.0, cy = (min_y + max_y) / 2.0;
    double half = size / 2.0;

    auto to_canvas = [&](double x, double y) {
        return std::pair<double, double>{(x - cx) * scale + half,
                                         (y - cy) * scale + half};
    };

    for (const Polyline& l : lines) {
        Polyline mapped;
        for (auto [x, y] : l) mapped.push_back(to_canvas(x, y));
        c.strokes.push_back(mapped);
        if (mapped.size() == 1) {
            int px = static_cast<int>(std::lround(mapped[0].first));
            int py = static_cast<int>(std::lround(mapped[0].second));
            if (px >= 0 && px < size && py >= 0 && py < size) c.at(py, px) = 1.0f;
            continue;
        }
        for (size_t i = 1; i < mapped.size(); ++i)
            draw_segment(c,
                         static_cast<int>(std::lround(mapped[i - 1].first)),
                         static_cast<int>(std::lround(mapped[i - 1].second)),
                         static_cast<int>(std::lround(mapped[i].first)),
                         static_cast<int>(std::lround(mapped[i].second)));
    }
    return c;
}

std::vector<std::pair<int, int>> select_patch_centers(const Canvas& canvas, int M,
                                                      bool* repeated) {
    require(M >= 1, "patch centers: M must be >= 1, got ", M);
    std::vector<std::pair<int, int>> points;
    for (const Polyline& l : canvas.strokes)
        for (auto [x, y] : l) {
            int px = std::clamp(static_cast<int>(std::lround(x)), 0, canvas.size - 1);
            int py = std::clamp(static_cast<int>(std::lround(y)), 0, canvas.size - 1);
            points.emplace_back(px, py);
        }
    if (points.empty()) {
        // inkless sketch (a decoder can emit a bare end action): park every
        // center mid-canvas so downstream stages see blank patches
        points.emplace_back(canvas.size / 2, canvas.size / 2);
    }

    size_t L = points.size();
    size_t stride = (L + static_cast<size_t>(M) - 1) / static_cast<size_t>(M);
    std::vector<std::pair<int, int>> centers;
    for (size_t i = 0; i < L && centers.size() < static_cast<size_t>(M); i += stride)
        centers.push_back(points[i]);
    bool rep = false;
    while (centers.size() < static_cast<size_t>(M)) {
        centers.push_back(centers.back());
        rep = true;
    }
    if (repeated) *repeated = rep;
    return centers;
}

namespace {

std::vector<float> crop_window(const Canvas& canvas, int cx, int cy, int patch_size) {
    std::vector<float> out(static_cast<size_t>(patch_size) * patch_size, 0.0f);
    int x0 = cx - patch_size / 2;
    int y0 = cy - patch_size / 2;
    for (int r = 0; r < patch_size; ++r) {
        int sy = y0 + r;
        if (sy < 0 || sy >= canvas.size) continue;
        int c_lo = std::max(0, -x0);
        int c_hi = std::min(patch_size, canvas.size - x0);
        for (int c = c_lo; c < c_hi; ++c)
            out[static_cast<size_t>(r) * patch_size + c] = canvas.at(sy, x0 + c);
    }
    return out;
}

} // namespace

std::vector<float> bilinear_resize(const std::vector<float>& src, int src_size,
                                   int dst_size) {
    std::vector<float> out(static_cast<size_t>(dst_size) * dst_size, 0.0f);
    double r = static_cast<double>(src_size) / dst_size;
    for (int y = 0; y < dst_size; ++y) {
        double sy = (y + 0.5) * r - 0.5;
        int y0 = static_cast<int>(std::floor(sy));
        double fy = sy - y0;
        int y0c = std::clamp(y0, 0, src_size - 1);
        int y1c = std::clamp(y0 + 1, 0, src_size - 1);
        for (int x = 0; x < dst_size; ++x) {
            double sx = (x + 0.5) * r - 0.5;
            int x0 = static_cast<int>(std::floor(sx));
            double fx = sx - x0;
            int x0c = std::clamp(x0, 0, src_size - 1);
            int x1c = std::clamp(x0 + 1, 0, src_size - 1);
            double v00 = src[static_cast<size_t>(y0c) * src_size + x0c];
            double v01 = src[static_cast<size_t>(y0c) * src_size + x1c];
            double v10 = src[static_cast<size_t>(y1c) * src_size + x0c];
            double v11 = src[static_cast<size_t>(y1c) * src_size + x1c];
            double v = v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx +
                       v10 * fy * (1 - fx) + v11 * fy * fx;
            out[static_cast<size_t>(y) * dst_size + x] = static_cast<float>(v);
        }
    }
    return out;
}

Canvas redraw(const Canvas& canvas, int size) {
    Canvas out;
    out.size = size;
    out.pixels.assign(static_cast<size_t>(size) * size, 0.0f);
    double s = canvas.size > 0 ? static_cast<double>(size) / canvas.size : 1.0;
    for (const Polyline& line : canvas.strokes) {
        Polyline mapped;
        for (auto [x, y] : line) mapped.emplace_back(x * s, y * s);
        out.strokes.push_back(mapped);
        if (mapped.size() == 1) {
            int px = std::clamp(static_cast<int>(std::lround(mapped[0].first)), 0, size - 1);
            int py = std::clamp(static_cast<int>(std::lround(mapped[0].second)), 0, size - 1);
            out.at(py, px) = 1.0f;
            continue;
        }
        for (size_t i = 1; i < mapped.size(); ++i)
            draw_segment(out,
                         static_cast<int>(std::lround(mapped[i - 1].first)),
                         static_cast<int>(std::lround(mapped[i - 1].second)),
                         static_cast<int>(std::lround(mapped[i].first)),
                         static_cast<int>(std::lround(mapped[i].second)));
    }
    return out;
}

PatchSet crop_patches(const Canvas& canvas,
                      const std::vector<std::pair<int, int>>& centers,
                      int patch_size) {
    require(patch_size >= 2, "crop: patch size must be >= 2, got ", patch_size);
    for (auto [x, y] : centers)
        require(x >= 0 && x < canvas.size && y >= 0 && y < canvas.size,
                "crop: center (", x, ",", y, ") outside canvas of size ",
                canvas.size);
    PatchSet ps;
    ps.patch_size = patch_size;
    ps.centers = centers;
    for (auto [x, y] : centers)
        ps.patches.push_back(crop_window(canvas, x, y, patch_size));
    ps.full_view = bilinear_resize(canvas.pixels, canvas.size, patch_size);
    ps.masked.assign(centers.size(), 0);
    return ps;
}

MaskPlan MaskPlan::make(float probability, uint64_t seed, int patch_count) {
    require(probability >= 0.0f && probability <= 1.0f,
            "mask plan: probability must be in [0,1], got ", probability);
    MaskPlan plan;
    plan.probability = probability;
    plan.seed = seed;
    if (probability > 0.0f) {
        Rng rng(seed);
        for (int i = 0; i < patch_count; ++i)
            if (rng.uniform() < probability) plan.selected.push_back(i);
    }
    return plan;
}

PatchSet apply_mask(const PatchSet& pset, const MaskPlan& plan,
                    const Canvas& canvas, Canvas* corrupted_out) {
    for (int idx : plan.selected)
        require(idx >= 0 && idx < pset.count(), "mask: selected index ", idx,
                " out of range for ", pset.count(), " patches");
    if (plan.selected.empty()) {
        if (corrupted_out) *corrupted_out = canvas;
        return pset;
    }

    Canvas corrupted = canvas;
    int half = pset.patch_size / 2;
    for (int idx : plan.selected) {
        auto [cx, cy] = pset.centers[static_cast<size_t>(idx)];
        int x0 = cx - half, y0 = cy - half;
        for (int r = 0; r < pset.patch_size; ++r) {
            int sy = y0 + r;
            if (sy < 0 || sy >= corrupted.size) continue;
            int c_lo = std::max(0, x0);
            int c_hi = std::min(corrupted.size, x0 + pset.patch_size);
            for (int c = c_lo; c < c_hi; ++c) corrupted.at(sy, c) = 0.0f;
        }
    }

    PatchSet out = crop_patches(corrupted, pset.centers, pset.patch_size);
    for (int idx : plan.selected) out.masked[static_cast<size_t>(idx)] = 1;
    out.centers_repeated = pset.centers_repeated;
    if (corrupted_out) *corrupted_out = std::move(corrupted);
    return out;
}

std::string PatchSet::serialize() const {
    std::string out;
    auto put_i32 = [&](int32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
    };
    auto put_f32 = [&](float f) {
        uint32_t v;
        std::memcpy(&v, &f, 4);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
    };
    put_i32(patch_size);
    put_i32(count());
    for (auto [x, y] : centers) {
        put_i32(x);
        put_i32(y);
    }
    for (uint8_t m : masked) out.push_back(static_cast<char>(m));
    for (const auto& p : patches)
        for (float f : p) put_f32(f);
    for (float f : full_view) put_f32(f);
    return out;
}

} // namespace spg
