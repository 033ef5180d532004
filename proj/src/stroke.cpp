#include "spg/stroke.hpp"

#include <cmath>

#include <json.hpp>

namespace spg {

void StrokeSeq::validate() const {
    for (size_t i = 0; i < actions.size(); ++i) {
        const StrokeAction& a = actions[i];
        int flags = a.down + a.up + a.end;
        require(flags == 1, "stroke seq: action ", i,
                " must have exactly one state flag, has ", flags);
        if (a.end)
            require(i + 1 == actions.size(),
                    "stroke seq: end action at ", i, " is not last");
    }
}

StrokeSeq polylines_to_stroke5(const std::vector<Polyline>& lines,
                               size_t max_len) {
    require(!lines.empty(), "stroke conversion: empty drawing");
    for (const Polyline& l : lines)
        require(!l.empty(), "stroke conversion: empty stroke");

    StrokeSeq seq;
    double px = lines[0][0].first;
    double py = lines[0][0].second;
    for (size_t s = 0; s < lines.size(); ++s) {
        const Polyline& line = lines[s];
        for (size_t i = 1; i < line.size(); ++i) {
            StrokeAction a;
            a.dx = static_cast<float>(line[i].first - px);
            a.dy = static_cast<float>(line[i].second - py);
            a.down = 1;
            px = line[i].first;
            py = line[i].second;
            seq.actions.push_back(a);
        }
        StrokeAction lift;
        if (s + 1 < lines.size()) {
            lift.dx = static_cast<float>(lines[s + 1][0].first - px);
            lift.dy = static_cast<float>(lines[s + 1][0].second - py);
            px = lines[s + 1][0].first;
            py = lines[s + 1][0].second;
        }
        lift.up = 1;
        seq.actions.push_back(lift);
    }
    if (seq.actions.size() + 1 > max_len) {
        seq.actions.resize(max_len - 1);
        // keep the sequence well-formed: last kept move becomes a pen lift
        if (!seq.actions.empty() && seq.actions.back().down) {
            seq.actions.back().down = 0;
            seq.actions.back().up = 1;
        }
        seq.truncated = true;
    }
    StrokeAction end;
    end.end = 1;
    seq.actions.push_back(end);
    return seq;
}

std::vector<Polyline> stroke5_to_polylines(const StrokeSeq& seq) {
    std::vector<Polyline> out;
    double x = 0.0, y = 0.0;
    Polyline cur;
    cur.emplace_back(x, y);
    bool has_ink = false;
    for (const StrokeAction& a : seq.actions) {
        if (a.end) break;
        double nx = x + a.dx, ny = y + a.dy;
        if (a.down) {
            cur.emplace_back(nx, ny);
            has_ink = true;
        } else if (a.up) {
            if (has_ink) {
                out.push_back(cur);
            } else {
                // pen lifted without drawing: the visited point is a dot
                out.push_back(Polyline{{x, y}});
            }
            cur.clear();
            cur.emplace_back(nx, ny);
            has_ink = false;
        }
        x = nx;
        y = ny;
    }
    if (has_ink) out.push_back(cur);
    return out;
}

StrokeSeq parse_ndjson(const std::string& line, size_t max_len,
                       std::string* category_out) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
        fail("ndjson: malformed JSON: ", e.what());
    }

    if (j.is_array()) {
        // native stroke-5: array of [dx,dy,p1,p2,p3]
        StrokeSeq seq;
        for (const auto& row : j) {
            require(row.is_array() && row.size() == 5,
                    "ndjson: stroke-5 rows must be 5-tuples");
            StrokeAction a;
            a.dx = row[0].get<float>();
            a.dy = row[1].get<float>();
            a.down = row[2].get<int>() != 0;
            a.up = row[3].get<int>() != 0;
            a.end = row[4].get<int>() != 0;
            seq.actions.push_back(a);
            if (a.end) break;
        }
        require(!seq.actions.empty(), "ndjson: empty stroke-5 array");
        if (seq.actions.size() > max_len) {
            seq.actions.resize(max_len);
            seq.actions.back() = StrokeAction{0, 0, 0, 0, 1};
            seq.truncated = true;
        }
        if (!seq.actions.back().end) {
            if (seq.actions.size() == max_len) {
                seq.actions.back() = StrokeAction{0, 0, 0, 0, 1};
                seq.truncated = true;
            } else {
                seq.actions.push_back(StrokeAction{0, 0, 0, 0, 1});
            }
        }
        seq.validate();
        return seq;
    }

    require(j.is_object() && j.contains("drawing"),
            "ndjson: expected an object with a \"drawing\" array");
    if (category_out && j.contains("word"))
        *category_out = j["word"].get<std::string>();

    const auto& drawing = j["drawing"];
    require(drawing.is_array() && !drawing.empty(), "ndjson: empty drawing");
    std::vector<Polyline> lines;
    for (const auto& stroke : drawing) {
        require(stroke.is_array() && stroke.size() >= 2,
                "ndjson: stroke must be [xs, ys]");
        const auto& xs = stroke[0];
        const auto& ys = stroke[1];
        require(xs.is_array() && ys.is_array() && xs.size() == ys.size() &&
                !xs.empty(),
                "ndjson: stroke coordinate lists must be equal-length and nonempty");
        Polyline line;
        for (size_t i = 0; i < xs.size(); ++i)
            line.emplace_back(xs[i].get<double>(), ys[i].get<double>());
        lines.push_back(std::move(line));
    }
    return polylines_to_stroke5(lines, max_len);
}

void normalize_offsets(StrokeSeq& seq, float scale) {
    require(scale > 0.0f, "normalize: scale must be positive, got ", scale);
    for (StrokeAction& a : seq.actions) {
        a.dx /= scale;
        a.dy /= scale;
    }
    seq.scale = scale;
}

double offset_stddev(const std::vector<StrokeSeq>& seqs) {
    double sum = 0.0, sq = 0.0;
    int64_t n = 0;
    for (const StrokeSeq& s : seqs)
        for (const StrokeAction& a : s.actions) {
            if (a.end) break;
            sum += a.dx;
            sq += static_cast<double>(a.dx) * a.dx;
            sum += a.dy;
            sq += static_cast<double>(a.dy) * a.dy;
            n += 2;
        }
    if (n == 0) return 1.0;
    double mean = sum / static_cast<double>(n);
    double var = sq / static_cast<double>(n) - mean * mean;
    return var > 0.0 ? std::sqrt(var) : 1.0;
}

std::string stroke5_to_json(const StrokeSeq& seq) {
    nlohmann::json j = nlohmann::json::array();
    for (const StrokeAction& a : seq.actions) {
        j.push_back({a.dx, a.dy, static_cast<int>(a.down),
                     static_cast<int>(a.up), static_cast<int>(a.end)});
    }
    return j.dump();
}

} // namespace spg
