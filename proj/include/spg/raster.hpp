#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spg/stroke.hpp"

namespace spg {

// Square grayscale canvas (ink = 1, background = 0) plus the stroke
// polylines mapped into canvas coordinates.
struct Canvas {
    int size = 0;
    std::vector<float> pixels;              // size*size, row-major
    std::vector<Polyline> strokes;          // absolute canvas coordinates

    float at(int y, int x) const { return pixels[static_cast<size_t>(y) * size + x]; }
    float& at(int y, int x) { return pixels[static_cast<size_t>(y) * size + x]; }
    double ink_sum() const;
};

struct PatchSet {
    int patch_size = 0;
    std::vector<std::pair<int, int>> centers;  // (x, y) pixel coordinates
    std::vector<std::vector<float>> patches;   // M rasters, patch_size^2 each
    std::vector<float> full_view;              // whole canvas resized to patch_size
    std::vector<uint8_t> masked;               // per-patch mask flags
    bool centers_repeated = false;             // fewer stroke points than M

    int count() const { return static_cast<int>(patches.size()); }
    // Deterministic byte-stable serialization (golden tests, debugging).
    std::string serialize() const;
};

struct MaskPlan {
    float probability = 0.0f;
    uint64_t seed = 0;
    std::vector<int> selected; // patch indices to erase

    static MaskPlan make(float probability, uint64_t seed, int patch_count);
};

// Draws the sequence with 1px Bresenham segments; the sketch bounding box is
// centered and scaled to fit 90% of the canvas, aspect preserved.
Canvas rasterize(const StrokeSeq& seq, int size);

// Every ceil(L/M)-th stroke point, in drawing order, starting from the first
// (L = total stroke points). When fewer than M points exist the last center
// repeats and the result is flagged.
std::vector<std::pair<int, int>> select_patch_centers(const Canvas& canvas, int M,
                                                      bool* repeated = nullptr);

// Square windows centered on each center, zero-padded at borders, plus the
// bilinear full-canvas resize.
PatchSet crop_patches(const Canvas& canvas,
                      const std::vector<std::pair<int, int>>& centers,
                      int patch_size);

// Erases every selected patch window on a copy of the canvas, then re-crops
// all patches from the corrupted canvas, so unmasked patches overlapping an
// erased window see background there. The full view is re-rendered from the
// corrupted canvas too. Returns the corrupted canvas via `corrupted_out`
// when non-null.
PatchSet apply_mask(const PatchSet& pset, const MaskPlan& plan,
                    const Canvas& canvas, Canvas* corrupted_out = nullptr);

std::vector<float> bilinear_resize(const std::vector<float>& src, int src_size,
                                   int dst_size);

// Redraws the stored polylines onto a fresh grid of the given size (crisp
// 1px strokes at any scale, unlike resampling the pixels).
Canvas redraw(const Canvas& canvas, int size);

} // namespace spg
