#pragma once

#include <string>
#include <vector>

#include "spg/common.hpp"

namespace spg {

// One pen action: move by (dx,dy), with exactly one state flag set.
//   down — the move draws a segment
//   up   — the move travels with the pen lifted (stroke boundary)
//   end  — terminator, no move
struct StrokeAction {
    float dx = 0.0f;
    float dy = 0.0f;
    uint8_t down = 0;
    uint8_t up = 0;
    uint8_t end = 0;
};

// A sketch as a stroke-5 action sequence.
struct StrokeSeq {
    std::vector<StrokeAction> actions;
    float scale = 1.0f;     // offsets were divided by this during normalization
    bool truncated = false; // sequence was cut at max length during parsing

    size_t size() const { return actions.size(); }
    void validate() const; // checks the one-hot / single-end invariants
};

using Polyline = std::vector<std::pair<double, double>>;

// Absolute polylines -> stroke-5 deltas. The first point becomes the origin;
// each stroke contributes its within-stroke moves (pen down) and one pen-up
// move carrying the jump to the next stroke (zero for the last). A trailing
// end action is appended. A single-point stroke contributes only its pen-up
// move and decodes back to a dot.
StrokeSeq polylines_to_stroke5(const std::vector<Polyline>& lines,
                               size_t max_len = 250);

// Inverse of polylines_to_stroke5, starting from the origin.
std::vector<Polyline> stroke5_to_polylines(const StrokeSeq& seq);

// Parses one NDJSON line. Accepts the QuickDraw schema
//   {"drawing": [[[x...],[y...]], ...], "word": "cat"}
// and the native form: a bare JSON array of [dx,dy,p1,p2,p3] tuples.
// `category_out`, when non-null, receives the "word" field if present.
StrokeSeq parse_ndjson(const std::string& line, size_t max_len = 250,
                       std::string* category_out = nullptr);

// Divides all offsets by `scale` (stored on the sequence).
void normalize_offsets(StrokeSeq& seq, float scale);

// Standard deviation of all dx/dy offsets over a set of sequences.
double offset_stddev(const std::vector<StrokeSeq>& seqs);

// Serializes as a native stroke-5 NDJSON line (array of 5-tuples).
std::string stroke5_to_json(const StrokeSeq& seq);

} // namespace spg
