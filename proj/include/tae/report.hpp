#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "tae/common.hpp"
#include "tae/train.hpp"

namespace tae {

// ---------------------------------------------------------------------------
// metrics stream
// ---------------------------------------------------------------------------

inline std::string step_record_json(const StepRecord& r) {
    nlohmann::json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["total"] = r.loss.total;
    j["transformation_term"] = r.loss.transformation_term;
    j["label_term"] = r.loss.label_term;
    j["entmin_term"] = r.loss.entmin_term;
    return j.dump();
}

inline std::vector<StepRecord> read_metrics_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open metrics file '" + path + "'");
    std::vector<StepRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("'" + path + "' line " + std::to_string(line_no) + ": " + e.what());
        }
        StepRecord r;
        r.step = j.at("step").get<std::int64_t>();
        r.epoch = j.at("epoch").get<int>();
        r.lr = j.at("lr").get<double>();
        r.loss.total = j.at("total").get<double>();
        r.loss.transformation_term = j.at("transformation_term").get<double>();
        r.loss.label_term = j.at("label_term").get<double>();
        r.loss.entmin_term = j.at("entmin_term").get<double>();
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV tables (protocol, setting, seed, error_rate)
// ---------------------------------------------------------------------------

struct EvalRow {
    std::string protocol;
    std::string setting;
    std::uint64_t seed = 0;
    double error_rate = 0.0;
};

inline void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << "protocol,setting,seed,error_rate\n";
    char buf[64];
    for (const EvalRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.error_rate);
        out << r.protocol << "," << r.setting << "," << r.seed << "," << buf << "\n";
    }
}

inline std::vector<EvalRow> read_eval_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<EvalRow> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;  // header
        std::vector<std::string> cells;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        cells.push_back(cur);
        if (cells.size() != 4)
            throw FormatError("'" + path + "' line " + std::to_string(line_no) + ": expected 4 cells, got " +
                              std::to_string(cells.size()));
        EvalRow r;
        r.protocol = cells[0];
        r.setting = cells[1];
        r.seed = std::stoull(cells[2]);
        r.error_rate = std::stod(cells[3]);
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// hand-rolled SVG plots
// ---------------------------------------------------------------------------

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

namespace detail {

inline const char* series_color(size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
    return colors[i % 8];
}

inline std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return std::string(buf);
}

}  // namespace detail

// Line chart of one or more series; fixed geometry, deterministic output.
inline void write_svg_lines(const std::string& path, const std::string& title, const std::string& x_label,
                            const std::string& y_label, const std::vector<Series>& series) {
    if (series.empty()) throw InputError("write_svg_lines: no series to plot");
    const double width = 720, height = 440, ml = 70, mr = 160, mt = 40, mb = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : series) {
        if (s.x.size() != s.y.size() || s.x.empty()) throw InputError("write_svg_lines: malformed series '" + s.label + "'");
        for (double v : s.x) {
            xmin = std::min(xmin, v);
            xmax = std::max(xmax, v);
        }
        for (double v : s.y) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    const double plot_w = width - ml - mr, plot_h = height - mt - mb;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * plot_w; };
    auto py = [&](double y) { return mt + plot_h - (y - ymin) / (ymax - ymin) * plot_h; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\">"
        << title << "</text>\n";
    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\"" << mt + plot_h
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = xmin + (xmax - xmin) * t / 4.0;
        const double fy = ymin + (ymax - ymin) * t / 4.0;
        svg << "<text x=\"" << px(fx) << "\" y=\"" << mt + plot_h + 18
            << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << detail::fmt_tick(fx)
            << "</text>\n";
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
            << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << detail::fmt_tick(fy)
            << "</text>\n";
        if (t > 0)
            svg << "<line x1=\"" << ml << "\" y1=\"" << py(fy) << "\" x2=\"" << ml + plot_w << "\" y2=\"" << py(fy)
                << "\" stroke=\"#dddddd\"/>\n";
    }
    svg << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << x_label << "</text>\n";
    svg << "<text x=\"18\" y=\"" << mt + plot_h / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
        << "font-family=\"sans-serif\" transform=\"rotate(-90 18 " << mt + plot_h / 2 << ")\">" << y_label << "</text>\n";
    // series
    for (size_t i = 0; i < series.size(); ++i) {
        const Series& s = series[i];
        svg << "<polyline fill=\"none\" stroke=\"" << detail::series_color(i) << "\" stroke-width=\"1.5\" points=\"";
        char buf[64];
        for (size_t j = 0; j < s.x.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.6g,%.6g ", px(s.x[j]), py(s.y[j]));
            svg << buf;
        }
        svg << "\"/>\n";
        const double ly = mt + 16.0 * static_cast<double>(i);
        svg << "<line x1=\"" << ml + plot_w + 10 << "\" y1=\"" << ly << "\" x2=\"" << ml + plot_w + 30 << "\" y2=\"" << ly
            << "\" stroke=\"" << detail::series_color(i) << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << ml + plot_w + 34 << "\" y=\"" << ly + 4
            << "\" font-size=\"11\" font-family=\"sans-serif\">" << s.label << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << svg.str();
}

// Bar chart for error tables: one bar per (protocol, setting) mean.
inline void write_svg_bars(const std::string& path, const std::string& title,
                           const std::vector<std::pair<std::string, double>>& bars) {
    if (bars.empty()) throw InputError("write_svg_bars: nothing to plot");
    const double width = 720, height = 440, ml = 70, mr = 30, mt = 40, mb = 120;
    const double plot_w = width - ml - mr, plot_h = height - mt - mb;
    double ymax = 0.0;
    for (const auto& [label, v] : bars) ymax = std::max(ymax, v);
    if (ymax <= 0.0) ymax = 1.0;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\">"
        << title << "</text>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\"" << mt + plot_h
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fy = ymax * t / 4.0;
        const double y = mt + plot_h - fy / ymax * plot_h;
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << detail::fmt_tick(fy)
            << "</text>\n";
    }
    const double slot = plot_w / static_cast<double>(bars.size());
    for (size_t i = 0; i < bars.size(); ++i) {
        const double bh = bars[i].second / ymax * plot_h;
        const double x = ml + slot * static_cast<double>(i) + slot * 0.15;
        svg << "<rect x=\"" << x << "\" y=\"" << mt + plot_h - bh << "\" width=\"" << slot * 0.7 << "\" height=\"" << bh
            << "\" fill=\"" << detail::series_color(i) << "\"/>\n";
        const double lx = ml + slot * (static_cast<double>(i) + 0.5);
        svg << "<text x=\"" << lx << "\" y=\"" << mt + plot_h + 14 << "\" text-anchor=\"end\" font-size=\"10\" "
            << "font-family=\"sans-serif\" transform=\"rotate(-45 " << lx << " " << mt + plot_h + 14 << ")\">"
            << bars[i].first << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << svg.str();
}

// ---------------------------------------------------------------------------
// cross-run summary
// ---------------------------------------------------------------------------

struct SummaryStat {
    int count = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation; 0 for a single value
};

inline SummaryStat summarize(const std::vector<double>& values) {
    SummaryStat s;
    s.count = static_cast<int>(values.size());
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double acc = 0.0;
        for (double v : values) acc += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(acc / static_cast<double>(values.size() - 1));
    }
    return s;
}

}  // namespace tae
