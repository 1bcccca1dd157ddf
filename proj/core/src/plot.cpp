#include "flowtok/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "flowtok/errors.hpp"
#include "flowtok/image_io.hpp"

namespace flowtok {

namespace {

struct Rgb {
    float r, g, b;
};

constexpr Rgb kBackground{0.98f, 0.98f, 0.98f};
constexpr Rgb kAxis{0.15f, 0.15f, 0.15f};
constexpr Rgb kGrid{0.88f, 0.88f, 0.88f};

const std::array<Rgb, 6>& palette() {
    static const std::array<Rgb, 6> p{{{0.12f, 0.35f, 0.80f},
                                       {0.85f, 0.33f, 0.10f},
                                       {0.13f, 0.55f, 0.13f},
                                       {0.58f, 0.15f, 0.60f},
                                       {0.80f, 0.60f, 0.05f},
                                       {0.10f, 0.60f, 0.60f}}};
    return p;
}

// 5x7 glyphs, one byte per row, low 5 bits used, MSB-left. Uppercase maps to
// lowercase; unknown characters render as blanks.
const std::map<char, std::array<uint8_t, 7>>& font() {
    static const std::map<char, std::array<uint8_t, 7>> f = {
        {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
        {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
        {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
        {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
        {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
        {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
        {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
        {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
        {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
        {'a', {0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f}},
        {'b', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1e}},
        {'c', {0x00, 0x00, 0x0e, 0x10, 0x10, 0x11, 0x0e}},
        {'d', {0x01, 0x01, 0x0d, 0x13, 0x11, 0x11, 0x0f}},
        {'e', {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e}},
        {'f', {0x06, 0x09, 0x08, 0x1c, 0x08, 0x08, 0x08}},
        {'g', {0x00, 0x0f, 0x11, 0x11, 0x0f, 0x01, 0x0e}},
        {'h', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'i', {0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e}},
        {'j', {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0c}},
        {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
        {'l', {0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
        {'m', {0x00, 0x00, 0x1a, 0x15, 0x15, 0x15, 0x15}},
        {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'o', {0x00, 0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e}},
        {'p', {0x00, 0x00, 0x1e, 0x11, 0x1e, 0x10, 0x10}},
        {'q', {0x00, 0x00, 0x0d, 0x13, 0x0f, 0x01, 0x01}},
        {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
        {'s', {0x00, 0x00, 0x0e, 0x10, 0x0e, 0x01, 0x1e}},
        {'t', {0x08, 0x08, 0x1c, 0x08, 0x08, 0x09, 0x06}},
        {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0d}},
        {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0a, 0x04}},
        {'w', {0x00, 0x00, 0x11, 0x15, 0x15, 0x15, 0x0a}},
        {'x', {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11}},
        {'y', {0x00, 0x00, 0x11, 0x11, 0x0f, 0x01, 0x0e}},
        {'z', {0x00, 0x00, 0x1f, 0x02, 0x04, 0x08, 0x1f}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
        {',', {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08}},
        {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
        {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
        {'/', {0x01, 0x02, 0x02, 0x04, 0x08, 0x08, 0x10}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
        {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
        {'%', {0x19, 0x1a, 0x02, 0x04, 0x08, 0x0b, 0x13}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    return f;
}

struct Canvas {
    Tensor img;
    int w, h;

    Canvas(int width, int height) : img({height, width, 3}), w(width), h(height) {
        fill(kBackground);
    }
    void fill(Rgb c) {
        for (int64_t i = 0; i < img.numel(); i += 3) {
            img.v[size_t(i)] = c.r;
            img.v[size_t(i + 1)] = c.g;
            img.v[size_t(i + 2)] = c.b;
        }
    }
    void put(int x, int y, Rgb c) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        const size_t i = (size_t(y) * size_t(w) + size_t(x)) * 3;
        img.v[i] = c.r;
        img.v[i + 1] = c.g;
        img.v[i + 2] = c.b;
    }
    void hline(int x0, int x1, int y, Rgb c) {
        for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) put(x, y, c);
    }
    void vline(int x, int y0, int y1, Rgb c) {
        for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) put(x, y, c);
    }
    void line(int x0, int y0, int x1, int y1, Rgb c) {
        const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
        for (int i = 0; i <= steps; ++i) {
            const double t = double(i) / steps;
            put(int(std::lround(x0 + t * (x1 - x0))), int(std::lround(y0 + t * (y1 - y0))), c);
        }
    }
    void text(int x, int y, const std::string& s, Rgb c) {
        const auto& glyphs = font();
        int cx = x;
        for (char raw : s) {
            const char ch = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
            auto it = glyphs.find(ch);
            if (it != glyphs.end())
                for (int row = 0; row < 7; ++row)
                    for (int col = 0; col < 5; ++col)
                        if (it->second[size_t(row)] & (1 << (4 - col))) put(cx + col, y + row, c);
            cx += 6;
        }
    }
};

int text_width(const std::string& s) { return static_cast<int>(s.size()) * 6 - 1; }

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// Largest 1/2/5 * 10^k step giving at most `target` intervals.
double nice_step(double range, int target) {
    const double raw = range / std::max(target, 1);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * mag >= raw) return m * mag;
    return 10.0 * mag;
}

}  // namespace

std::vector<PlotSeries> series_from_records(const std::vector<MetricRecord>& records,
                                            const std::vector<std::string>& names) {
    std::vector<std::string> order = names;
    if (order.empty())
        for (const MetricRecord& r : records)
            if (std::find(order.begin(), order.end(), r.name) == order.end())
                order.push_back(r.name);
    std::vector<PlotSeries> out;
    for (const std::string& name : order) {
        PlotSeries s;
        s.label = name;
        for (const MetricRecord& r : records)
            if (r.name == name) {
                s.x.push_back(double(r.step));
                s.y.push_back(r.value);
            }
        out.push_back(std::move(s));
    }
    return out;
}

Tensor render_line_chart(const std::vector<PlotSeries>& series, const PlotOptions& opt) {
    if (opt.width < 160 || opt.height < 100)
        throw ConfigError("render_line_chart: canvas must be at least 160x100");
    for (const PlotSeries& s : series)
        if (s.x.size() != s.y.size())
            throw ShapeError("render_line_chart: series " + s.label + " has mismatched x/y");

    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool any = false;
    for (const PlotSeries& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if (!any) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                any = true;
            } else {
                xmin = std::min(xmin, s.x[i]);
                xmax = std::max(xmax, s.x[i]);
                ymin = std::min(ymin, s.y[i]);
                ymax = std::max(ymax, s.y[i]);
            }
        }
    if (!any) throw EmptyInput("render_line_chart: no finite points");
    if (xmax == xmin) {
        xmin -= 1.0;
        xmax += 1.0;
    }
    if (ymax == ymin) {
        ymin -= 1.0;
        ymax += 1.0;
    }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    Canvas cv(opt.width, opt.height);
    const int left = 64, right = opt.width - 16, top = 28, bottom = opt.height - 36;
    auto px = [&](double x) {
        return left + int(std::lround((x - xmin) / (xmax - xmin) * (right - left)));
    };
    auto py = [&](double y) {
        return bottom - int(std::lround((y - ymin) / (ymax - ymin) * (bottom - top)));
    };

    // Grid and ticks.
    const double ystep = nice_step(ymax - ymin, 5);
    for (double v = std::ceil(ymin / ystep) * ystep; v <= ymax + 1e-12 * ystep; v += ystep) {
        const int y = py(v);
        cv.hline(left + 1, right, y, kGrid);
        const std::string lab = tick_label(v);
        cv.text(left - 6 - text_width(lab), y - 3, lab, kAxis);
        cv.hline(left - 3, left, y, kAxis);
    }
    const double xstep = nice_step(xmax - xmin, 6);
    for (double v = std::ceil(xmin / xstep) * xstep; v <= xmax + 1e-12 * xstep; v += xstep) {
        const int x = px(v);
        const std::string lab = tick_label(v);
        cv.text(x - text_width(lab) / 2, bottom + 8, lab, kAxis);
        cv.vline(x, bottom, bottom + 3, kAxis);
    }
    cv.hline(left, right, bottom, kAxis);
    cv.vline(left, top, bottom, kAxis);

    if (!opt.title.empty())
        cv.text((opt.width - text_width(opt.title)) / 2, 8, opt.title, kAxis);
    if (!opt.x_label.empty())
        cv.text((left + right - text_width(opt.x_label)) / 2, opt.height - 12, opt.x_label, kAxis);
    if (!opt.y_label.empty()) cv.text(4, top - 14, opt.y_label, kAxis);

    // Series and legend.
    int legend_y = top + 4;
    for (size_t si = 0; si < series.size(); ++si) {
        const Rgb c = palette()[si % palette().size()];
        const PlotSeries& s = series[si];
        int prev_x = 0, prev_y = 0;
        bool has_prev = false;
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                has_prev = false;
                continue;
            }
            const int x = px(s.x[i]), y = py(s.y[i]);
            if (has_prev) cv.line(prev_x, prev_y, x, y, c);
            cv.put(x, y, c);
            prev_x = x;
            prev_y = y;
            has_prev = true;
        }
        if (!s.label.empty()) {
            const int lx = right - 24 - text_width(s.label);
            cv.hline(lx - 20, lx - 6, legend_y + 3, c);
            cv.text(lx, legend_y, s.label, kAxis);
            legend_y += 11;
        }
    }
    return cv.img;
}

void write_line_chart(const std::string& path, const std::vector<PlotSeries>& series,
                      const PlotOptions& opt) {
    write_png(path, render_line_chart(series, opt));
}

}  // namespace flowtok
