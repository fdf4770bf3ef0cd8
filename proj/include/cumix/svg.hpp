#pragma once

#include <string>
#include <utility>
#include <vector>

namespace cumix::svg {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

// Simple line chart with axes and a legend. Output carries no timestamps, so
// identical inputs produce identical files.
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series);

// Heatmap of a [rows][cols] matrix with optional log-scaled coloring.
std::string heatmap(const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<std::vector<double>>& values,
                    bool log_color);

// Filled heatmap plus marching-squares iso-lines over a square grid.
std::string contour(const std::string& title, const std::vector<double>& coords,
                    const std::vector<std::vector<double>>& values, int levels);

}  // namespace cumix::svg
