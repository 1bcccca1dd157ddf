#pragma once

#include <string>
#include <vector>

#include "flowtok/datamodel.hpp"
#include "flowtok/tensor.hpp"

namespace flowtok {

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotOptions {
    int width = 640;
    int height = 400;
    std::string title;
    std::string x_label = "step";
    std::string y_label;
};

// Rasterizes a line chart (axes, ticks, legend, 5x7 bitmap text) into an
// (H,W,3) image in [0,1]. Non-finite points are skipped. EmptyInput when no
// series has a point; ConfigError when the canvas is too small to hold the
// axes.
Tensor render_line_chart(const std::vector<PlotSeries>& series, const PlotOptions& opt);
void write_line_chart(const std::string& path, const std::vector<PlotSeries>& series,
                      const PlotOptions& opt);

// One series per metric name, x = step. An empty name list selects every name
// present, in first-appearance order.
std::vector<PlotSeries> series_from_records(const std::vector<MetricRecord>& records,
                                            const std::vector<std::string>& names = {});

}  // namespace flowtok
