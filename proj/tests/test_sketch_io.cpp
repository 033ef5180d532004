#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spg/corpus.hpp"
#include "spg/raster.hpp"
#include "spg/rng.hpp"
#include "spg/stroke.hpp"

using namespace spg;

TEST_CASE("quickdraw line converts to the expected stroke-5 actions") {
    StrokeSeq seq = parse_ndjson(R"({"drawing": [[[0,10],[0,0]]]})");
    REQUIRE(seq.size() == 3);
    CHECK(seq.actions[0].dx == 10.0f);
    CHECK(seq.actions[0].dy == 0.0f);
    CHECK(seq.actions[0].down == 1);
    CHECK(seq.actions[1].dx == 0.0f);
    CHECK(seq.actions[1].up == 1);
    CHECK(seq.actions[2].end == 1);
    seq.validate();
}

TEST_CASE("empty drawing is rejected") {
    CHECK_THROWS_AS(parse_ndjson(R"({"drawing": []})"), Error);
    CHECK_THROWS_AS(parse_ndjson("{not json"), Error);
    CHECK_THROWS_AS(parse_ndjson("[]"), Error);
}

TEST_CASE("category field is surfaced when present") {
    std::string cat;
    parse_ndjson(R"({"word": "cat", "drawing": [[[0,1],[0,1]]]})", 250, &cat);
    CHECK(cat == "cat");
}

TEST_CASE("stroke-5 round-trips to the original polylines") {
    std::vector<Polyline> lines = {
        {{0, 0}, {10, 3}, {12, 9}},
        {{20, 5}},              // dot stroke
        {{30, 0}, {31, 8}},
    };
    StrokeSeq seq = polylines_to_stroke5(lines);
    seq.validate();
    std::vector<Polyline> back = stroke5_to_polylines(seq);
    REQUIRE(back.size() == lines.size());
    for (size_t s = 0; s < lines.size(); ++s) {
        REQUIRE(back[s].size() == lines[s].size());
        for (size_t i = 0; i < lines[s].size(); ++i) {
            // reconstruction is translated so the first point is the origin
            CHECK(back[s][i].first ==
                  doctest::Approx(lines[s][i].first - lines[0][0].first).epsilon(1e-5));
            CHECK(back[s][i].second ==
                  doctest::Approx(lines[s][i].second - lines[0][0].second).epsilon(1e-5));
        }
    }
}

TEST_CASE("round-trip also holds after normalization, up to the stored scale") {
    std::vector<Polyline> lines = {{{0, 0}, {8, 2}, {9, 7}}, {{4, 4}, {1, 1}}};
    StrokeSeq seq = polylines_to_stroke5(lines);
    normalize_offsets(seq, 4.0f);
    std::vector<Polyline> back = stroke5_to_polylines(seq);
    REQUIRE(back.size() == 2);
    for (size_t s = 0; s < lines.size(); ++s)
        for (size_t i = 0; i < lines[s].size(); ++i) {
            CHECK(back[s][i].first * seq.scale ==
                  doctest::Approx(lines[s][i].first).epsilon(1e-5));
            CHECK(back[s][i].second * seq.scale ==
                  doctest::Approx(lines[s][i].second).epsilon(1e-5));
        }
}

TEST_CASE("over-length drawings truncate with the flag set") {
    std::vector<Polyline> lines;
    Polyline big;
    for (int i = 0; i < 400; ++i) big.emplace_back(i, i % 7);
    lines.push_back(big);
    StrokeSeq seq = polylines_to_stroke5(lines, 250);
    CHECK(seq.truncated);
    CHECK(seq.size() == 250);
    seq.validate();
}

TEST_CASE("rasterize: no ink gives an all-zero canvas") {
    StrokeSeq seq;
    seq.actions.push_back(StrokeAction{0, 0, 0, 0, 1});
    Canvas c = rasterize(seq, 64);
    CHECK(c.ink_sum() == 0.0);
}

TEST_CASE("rasterize: a horizontal stroke inks a single row") {
    StrokeSeq seq = polylines_to_stroke5({{{0, 0}, {50, 0}}});
    Canvas c = rasterize(seq, 128);
    int rows_with_ink = 0;
    int run = 0;
    for (int y = 0; y < 128; ++y) {
        int count = 0;
        for (int x = 0; x < 128; ++x)
            if (c.at(y, x) > 0) ++count;
        if (count > 0) {
            ++rows_with_ink;
            run = count;
        }
    }
    CHECK(rows_with_ink == 1);
    CHECK(run >= static_cast<int>(0.8 * 0.9 * 128));
}

TEST_CASE("rasterize: single-point sketch draws one dot") {
    StrokeSeq seq = polylines_to_stroke5({{{5, 5}}});
    Canvas c = rasterize(seq, 64);
    CHECK(c.ink_sum() == 1.0);
    CHECK(c.at(32, 32) == 1.0f);
}

TEST_CASE("rasterize is deterministic for deep copies") {
    StrokeSeq seq = synth_sketch("star", 99);
    StrokeSeq copy = seq;
    Canvas a = rasterize(seq, 128);
    Canvas b = rasterize(copy, 128);
    CHECK(a.pixels == b.pixels);
}

TEST_CASE("patch centers follow the arc-index stride rule") {
    SUBCASE("M=1 picks the first stroke point") {
        StrokeSeq seq = polylines_to_stroke5({{{0, 0}, {10, 0}, {20, 0}}});
        Canvas c = rasterize(seq, 64);
        auto centers = select_patch_centers(c, 1);
        REQUIRE(centers.size() == 1);
        int fx = static_cast<int>(std::lround(c.strokes[0][0].first));
        int fy = static_cast<int>(std::lround(c.strokes[0][0].second));
        CHECK(centers[0].first == fx);
        CHECK(centers[0].second == fy);
    }
    SUBCASE("40 points with M=8 sample every 5th point") {
        Polyline line;
        for (int i = 0; i < 40; ++i) line.emplace_back(i * 3, (i * 7) % 23);
        StrokeSeq seq = polylines_to_stroke5({line});
        Canvas c = rasterize(seq, 128);
        auto centers = select_patch_centers(c, 8);
        REQUIRE(centers.size() == 8);
        for (int k = 0; k < 8; ++k) {
            auto [ex, ey] = c.strokes[0][static_cast<size_t>(k * 5)];
            CHECK(centers[static_cast<size_t>(k)].first ==
                  static_cast<int>(std::lround(ex)));
            CHECK(centers[static_cast<size_t>(k)].second ==
                  static_cast<int>(std::lround(ey)));
        }
    }
    SUBCASE("fewer stroke points than M repeats the last center, flagged") {
        StrokeSeq seq = polylines_to_stroke5({{{0, 0}, {10, 10}}});
        Canvas c = rasterize(seq, 64);
        bool repeated = false;
        auto centers = select_patch_centers(c, 5, &repeated);
        CHECK(repeated);
        REQUIRE(centers.size() == 5);
        CHECK(centers[4] == centers[2]);
    }
}

TEST_CASE("centers stay on the canvas for 1000 random sketches") {
    const char* cats[4] = {"circle", "square", "star", "zigzag"};
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        StrokeSeq seq = synth_sketch(cats[i % 4], static_cast<uint64_t>(1000 + i));
        Canvas c = rasterize(seq, 128);
        auto centers = select_patch_centers(c, 8);
        for (auto [x, y] : centers) {
            REQUIRE(x >= 0);
            REQUIRE(x < 128);
            REQUIRE(y >= 0);
            REQUIRE(y < 128);
            ++checked;
        }
    }
    CHECK(checked == 8000);
}

TEST_CASE("crop pads with background outside the canvas") {
    StrokeSeq seq = synth_sketch("square", 5);
    Canvas c = rasterize(seq, 64);
    PatchSet ps = crop_patches(c, {{0, 0}}, 32);
    // the two quadrants hanging off the canvas are entirely background
    for (int r = 0; r < 16; ++r)
        for (int col = 0; col < 32; ++col)
            CHECK(ps.patches[0][static_cast<size_t>(r) * 32 + col] == 0.0f);
    for (int r = 16; r < 32; ++r)
        for (int col = 0; col < 16; ++col)
            CHECK(ps.patches[0][static_cast<size_t>(r) * 32 + col] == 0.0f);
}

TEST_CASE("crop of a blank canvas is all zeros") {
    Canvas c;
    c.size = 64;
    c.pixels.assign(64 * 64, 0.0f);
    PatchSet ps = crop_patches(c, {{32, 32}, {5, 60}}, 24);
    for (const auto& p : ps.patches)
        for (float v : p) CHECK(v == 0.0f);
    for (float v : ps.full_view) CHECK(v == 0.0f);
}

namespace {

// dense closed ring: consecutive vertices a few pixels apart once rasterized
StrokeSeq dense_circle(int vertices) {
    Polyline pts;
    for (int i = 0; i <= vertices; ++i) {
        double t = 6.283185307179586 * i / vertices;
        pts.emplace_back(100.0 * std::cos(t), 100.0 * std::sin(t));
    }
    return polylines_to_stroke5({pts});
}

} // namespace

TEST_CASE("patches that tile the strokes cover at least the canvas ink") {
    StrokeSeq seq = dense_circle(48);
    Canvas c = rasterize(seq, 96);
    // centers on every 2nd stroke point blanket the drawing
    std::vector<std::pair<int, int>> centers;
    for (const Polyline& l : c.strokes)
        for (size_t i = 0; i < l.size(); i += 2)
            centers.emplace_back(
                std::clamp(static_cast<int>(std::lround(l[i].first)), 0, 95),
                std::clamp(static_cast<int>(std::lround(l[i].second)), 0, 95));
    PatchSet ps = crop_patches(c, centers, 48);
    double patch_ink = 0.0;
    for (const auto& p : ps.patches)
        for (float v : p) patch_ink += v;
    CHECK(patch_ink >= c.ink_sum());
}

TEST_CASE("mask plan with probability zero changes nothing") {
    StrokeSeq seq = synth_sketch("circle", 3);
    Canvas c = rasterize(seq, 128);
    auto centers = select_patch_centers(c, 8);
    PatchSet ps = crop_patches(c, centers, 48);
    MaskPlan plan = MaskPlan::make(0.0f, 42, 8);
    PatchSet out = apply_mask(ps, plan, c);
    CHECK(out.serialize() == ps.serialize());
}

TEST_CASE("masked window is blank in every overlapping recropped patch") {
    StrokeSeq seq = synth_sketch("star", 8);
    Canvas c = rasterize(seq, 128);
    std::vector<std::pair<int, int>> centers = {{60, 60}, {70, 60}, {40, 80}};
    PatchSet ps = crop_patches(c, centers, 48);
    MaskPlan plan;
    plan.probability = 0.5f;
    plan.selected = {1}; // mask the patch at (70,60); (60,60) overlaps it
    PatchSet out = apply_mask(ps, plan, c);
    CHECK(out.masked[1] == 1);
    CHECK(out.masked[0] == 0);

    // masked patch must be entirely background
    for (float v : out.patches[1]) CHECK(v == 0.0f);

    // the erased square in canvas coordinates
    int half = 24;
    int ex0 = 70 - half, ey0 = 60 - half;
    auto in_erased = [&](int x, int y) {
        return x >= ex0 && x < ex0 + 48 && y >= ey0 && y < ey0 + 48;
    };
    // every pixel of every patch that maps into the erased square is blank
    for (int pi = 0; pi < out.count(); ++pi) {
        auto [cx, cy] = out.centers[static_cast<size_t>(pi)];
        for (int r = 0; r < 48; ++r)
            for (int col = 0; col < 48; ++col) {
                int gx = cx - half + col, gy = cy - half + r;
                if (in_erased(gx, gy))
                    CHECK(out.patches[static_cast<size_t>(pi)]
                                     [static_cast<size_t>(r) * 48 + col] == 0.0f);
            }
    }
}

TEST_CASE("probability one blanks every patch and the full view") {
    // dense ring with enough patch windows to cover every ink pixel
    StrokeSeq seq = dense_circle(48);
    Canvas c = rasterize(seq, 128);
    auto centers = select_patch_centers(c, 20);
    PatchSet ps = crop_patches(c, centers, 48);
    MaskPlan plan = MaskPlan::make(1.0f, 7, 20);
    REQUIRE(plan.selected.size() == 20);
    Canvas corrupted;
    PatchSet out = apply_mask(ps, plan, c, &corrupted);
    for (const auto& p : out.patches)
        for (float v : p) CHECK(v == 0.0f);
    CHECK(corrupted.ink_sum() == 0.0);
    for (float v : out.full_view) CHECK(v == 0.0f);
}

TEST_CASE("pipeline is byte-stable across repeated runs") {
    StrokeSeq seq = parse_ndjson(R"({"drawing": [[[0,30,60],[0,40,10]],[[5,25],[50,55]]]})");
    auto run = [&] {
        Canvas c = rasterize(seq, 128);
        auto centers = select_patch_centers(c, 8);
        PatchSet ps = crop_patches(c, centers, 48);
        MaskPlan plan = MaskPlan::make(0.3f, 99, 8);
        return apply_mask(ps, plan, c).serialize();
    };
    CHECK(run() == run());
}

TEST_CASE("mask plans are deterministic per seed and scale with probability") {
    MaskPlan a = MaskPlan::make(0.4f, 123, 20);
    MaskPlan b = MaskPlan::make(0.4f, 123, 20);
    CHECK(a.selected == b.selected);
    MaskPlan c = MaskPlan::make(0.4f, 124, 20);
    // different seed, overwhelmingly likely to differ
    CHECK(a.selected != c.selected);
}
