#include "cumix/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace cumix::svg {

namespace {

constexpr double kW = 640.0, kH = 480.0;
constexpr double kL = 70.0, kR = 20.0, kT = 40.0, kB = 50.0;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

const char* kPalette[] = {"#1f6fb4", "#d1495b", "#2e9e62", "#8e6bb0", "#c88a2a", "#4a4a4a"};

std::string color_ramp(double t) {
    // dark blue -> yellow
    t = std::clamp(t, 0.0, 1.0);
    const int r = static_cast<int>(20 + 235 * t);
    const int g = static_cast<int>(30 + 200 * t);
    const int b = static_cast<int>(90 + 40 * (1.0 - t));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

struct Frame {
    double x0, x1, y0, y1;
    double px(double x) const { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); }
    double py(double y) const { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); }
};

void open_svg(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
       << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
          "font-family=\"sans-serif\">" << title << "</text>\n";
}

void axes(std::ostringstream& os, const Frame& f, const std::string& x_label,
          const std::string& y_label) {
    os << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\""
       << kH - kB << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double tx = f.x0 + (f.x1 - f.x0) * i / 5.0;
        const double ty = f.y0 + (f.y1 - f.y0) * i / 5.0;
        os << "<text x=\"" << f.px(tx) << "\" y=\"" << kH - kB + 18
           << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(tx)
           << "</text>\n";
        os << "<text x=\"" << kL - 8 << "\" y=\"" << f.py(ty) + 4
           << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(ty)
           << "</text>\n";
    }
    os << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << x_label
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
          "transform=\"rotate(-90 16 " << (kT + kH - kB) / 2 << ")\">" << y_label << "</text>\n";
}

}  // namespace

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series) {
    double x0 = std::numeric_limits<double>::max(), x1 = std::numeric_limits<double>::lowest();
    double y0 = x0, y1 = x1;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (x0 >= x1) x1 = x0 + 1.0;
    if (y0 >= y1) y1 = y0 + 1.0;
    const double pad = 0.05 * (y1 - y0);
    Frame f{x0, x1, y0 - pad, y1 + pad};

    std::ostringstream os;
    open_svg(os, title);
    axes(os, f, x_label, y_label);
    for (size_t si = 0; si < series.size(); ++si) {
        const char* color = kPalette[si % 6];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : series[si].points) os << f.px(x) << "," << f.py(y) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << kW - kR - 8 << "\" y=\"" << kT + 16 + 16 * static_cast<double>(si)
           << "\" text-anchor=\"end\" font-size=\"12\" font-family=\"sans-serif\" fill=\"" << color
           << "\">" << series[si].name << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string heatmap(const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<std::vector<double>>& values,
                    bool log_color) {
    const auto rows = static_cast<double>(values.size());
    const auto cols = static_cast<double>(values.empty() ? 0 : values[0].size());
    double vmax = 0.0;
    for (const auto& r : values)
        for (const auto v : r) vmax = std::max(vmax, v);
    Frame f{0, std::max(cols, 1.0), 0, std::max(rows, 1.0)};

    std::ostringstream os;
    open_svg(os, title);
    axes(os, f, x_label, y_label);
    for (size_t i = 0; i < values.size(); ++i) {
        for (size_t j = 0; j < values[i].size(); ++j) {
            double t = 0.0;
            if (vmax > 0.0) {
                t = log_color ? std::log1p(values[i][j]) / std::log1p(vmax) : values[i][j] / vmax;
            }
            const double x = f.px(static_cast<double>(j));
            const double y = f.py(static_cast<double>(i + 1));
            const double w = f.px(static_cast<double>(j + 1)) - x;
            const double h = f.py(static_cast<double>(i)) - y;
            os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
               << "\" fill=\"" << color_ramp(t) << "\"/>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

std::string contour(const std::string& title, const std::vector<double>& coords,
                    const std::vector<std::vector<double>>& values, int levels) {
    const auto n = coords.size();
    double vmin = std::numeric_limits<double>::max(), vmax = std::numeric_limits<double>::lowest();
    for (const auto& r : values)
        for (const auto v : r) {
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
    if (vmin >= vmax) vmax = vmin + 1.0;
    Frame f{coords.front(), coords.back(), coords.front(), coords.back()};

    std::ostringstream os;
    open_svg(os, title);
    axes(os, f, "direction 1", "direction 2");
    for (size_t i = 0; i + 1 < n; ++i)
        for (size_t j = 0; j + 1 < n; ++j) {
            const double t = (values[i][j] - vmin) / (vmax - vmin);
            const double x = f.px(coords[j]);
            const double y = f.py(coords[i + 1]);
            os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\""
               << f.px(coords[j + 1]) - x << "\" height=\"" << f.py(coords[i]) - y << "\" fill=\""
               << color_ramp(t) << "\"/>\n";
        }

    // Marching squares per iso level.
    for (int li = 1; li <= levels; ++li) {
        const double iso = vmin + (vmax - vmin) * li / (levels + 1.0);
        os << "<path fill=\"none\" stroke=\"black\" stroke-width=\"1\" opacity=\"0.6\" d=\"";
        for (size_t i = 0; i + 1 < n; ++i) {
            for (size_t j = 0; j + 1 < n; ++j) {
                // Corner values, y axis = i (rows), x axis = j (cols).
                const double v00 = values[i][j], v01 = values[i][j + 1];
                const double v10 = values[i + 1][j], v11 = values[i + 1][j + 1];
                auto lerp = [&](double a, double b, double ca, double cb) {
                    return ca + (iso - a) / (b - a) * (cb - ca);
                };
                std::vector<std::pair<double, double>> pts;
                if ((v00 < iso) != (v01 < iso))
                    pts.emplace_back(lerp(v00, v01, coords[j], coords[j + 1]), coords[i]);
                if ((v10 < iso) != (v11 < iso))
                    pts.emplace_back(lerp(v10, v11, coords[j], coords[j + 1]), coords[i + 1]);
                if ((v00 < iso) != (v10 < iso))
                    pts.emplace_back(coords[j], lerp(v00, v10, coords[i], coords[i + 1]));
                if ((v01 < iso) != (v11 < iso))
                    pts.emplace_back(coords[j + 1], lerp(v01, v11, coords[i], coords[i + 1]));
                if (pts.size() >= 2)
                    os << "M" << f.px(pts[0].first) << " " << f.py(pts[0].second) << "L"
                       << f.px(pts[1].first) << " " << f.py(pts[1].second);
                if (pts.size() == 4)
                    os << "M" << f.px(pts[2].first) << " " << f.py(pts[2].second) << "L"
                       << f.px(pts[3].first) << " " << f.py(pts[3].second);
            }
        }
        os << "\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace cumix::svg
