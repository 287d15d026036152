#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "saelab/experiments.hpp"

namespace saelab::experiments::svg {

namespace {

std::string fmt(double v) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(2);
    s << v;
    return s.str();
}

std::string color(std::size_t i, std::size_t n) {
    const double hue = 360.0 * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n, 1));
    return "hsl(" + fmt(hue) + ",70%,45%)";
}

void open(std::ostringstream& o, int w, int h) {
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

}  // namespace

std::string circle_diagram(const ArcReport& report) {
    constexpr double cx = 250.0;
    constexpr double cy = 250.0;
    constexpr double r = 150.0;
    std::ostringstream o;
    open(o, 500, 500);
    o << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << r
      << "\" fill=\"none\" stroke=\"#bbb\" stroke-width=\"1\"/>\n";

    std::size_t ring = 0;
    const double step = 2.0 * std::numbers::pi / static_cast<double>(report.grid);
    for (const auto& a : report.arcs) {
        if (!a.live) {
            continue;
        }
        const double rr = r + 8.0 + 5.0 * static_cast<double>(ring % 12);
        ++ring;
        const std::string c = color(a.latent, report.latents);
        const double span = a.full ? 2.0 * std::numbers::pi - 1e-3
                                   : std::fmod(a.end - a.start + 2.0 * std::numbers::pi,
                                               2.0 * std::numbers::pi) + step;
        const double t0 = a.start;
        const double t1 = a.start + span;
        o << "<path d=\"M " << fmt(cx + rr * std::cos(t0)) << ' ' << fmt(cy - rr * std::sin(t0))
          << " A " << fmt(rr) << ' ' << fmt(rr) << " 0 " << (span > std::numbers::pi ? 1 : 0)
          << " 0 " << fmt(cx + rr * std::cos(t1)) << ' ' << fmt(cy - rr * std::sin(t1))
          << "\" fill=\"none\" stroke=\"" << c << "\" stroke-width=\"3\"/>\n";
        o << "<line x1=\"" << cx << "\" y1=\"" << cy << "\" x2=\"" << fmt(cx + r * a.decoder_x)
          << "\" y2=\"" << fmt(cy - r * a.decoder_y) << "\" stroke=\"" << c
          << "\" stroke-width=\"1.5\"/>\n";
    }
    if (!report.trace.empty()) {
        o << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1\" points=\"";
        const std::size_t stride = std::max<std::size_t>(1, report.trace.size() / 512);
        for (std::size_t g = 0; g < report.trace.size(); g += stride) {
            o << fmt(cx + r * report.trace[g].first) << ',' << fmt(cy - r * report.trace[g].second)
              << ' ';
        }
        o << fmt(cx + r * report.trace.front().first) << ','
          << fmt(cy - r * report.trace.front().second) << "\"/>\n";
    }
    o << "<text x=\"10\" y=\"20\">n = " << report.latents << ", live = " << report.live
      << ", loss = " << report.loss.loss << "</text>\n</svg>\n";
    return o.str();
}

std::string histogram(const GeometryReport& report) {
    constexpr double left = 50.0;
    constexpr double bottom = 260.0;
    constexpr double width = 500.0;
    constexpr double height = 220.0;
    std::ostringstream o;
    open(o, 600, 300);
    const std::size_t peak =
        std::max<std::size_t>(1, *std::max_element(report.histogram.begin(), report.histogram.end()));
    const double bw = width / static_cast<double>(report.histogram.size());
    for (std::size_t b = 0; b < report.histogram.size(); ++b) {
        const double h = height * static_cast<double>(report.histogram[b]) / static_cast<double>(peak);
        o << "<rect x=\"" << fmt(left + bw * static_cast<double>(b)) << "\" y=\"" << fmt(bottom - h)
          << "\" width=\"" << fmt(bw - 1.0) << "\" height=\"" << fmt(h)
          << "\" fill=\"steelblue\"/>\n";
    }
    const double xh = left + width * (report.high + 1.0) / 2.0;
    o << "<line x1=\"" << fmt(xh) << "\" y1=\"" << fmt(bottom) << "\" x2=\"" << fmt(xh)
      << "\" y2=\"" << fmt(bottom - height) << "\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << left + width << "\" y2=\""
      << bottom << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << left << "\" y=\"" << bottom + 18 << "\">-1</text>\n";
    o << "<text x=\"" << left + width - 8 << "\" y=\"" << bottom + 18 << "\">1</text>\n";
    o << "<text x=\"" << left + width / 2 - 110 << "\" y=\"" << bottom + 34
      << "\">nearest-neighbour cosine similarity</text>\n";
    o << "<text x=\"" << left << "\" y=\"20\">live = " << report.live
      << ", above " << report.high << ": " << report.high_latents << "</text>\n</svg>\n";
    return o.str();
}

std::string loss_curve(const SweepResult& result) {
    constexpr double left = 60.0;
    constexpr double top = 30.0;
    constexpr double width = 480.0;
    constexpr double height = 300.0;
    std::ostringstream o;
    open(o, 600, 380);
    if (result.best.empty()) {
        o << "</svg>\n";
        return o.str();
    }
    double x0 = std::log10(static_cast<double>(result.best.front().n));
    double x1 = std::log10(static_cast<double>(result.best.back().n));
    double y0 = 1e300;
    double y1 = -1e300;
    for (const auto& b : result.best) {
        y0 = std::min(y0, std::log10(b.loss));
        y1 = std::max(y1, std::log10(b.loss));
    }
    if (x1 - x0 < 1e-9) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if (y1 - y0 < 1e-9) {
        y0 -= 0.05;
        y1 += 0.05;
    }
    const auto px = [&](double lx) { return left + width * (lx - x0) / (x1 - x0); };
    const auto py = [&](double ly) { return top + height * (1.0 - (ly - y0) / (y1 - y0)); };
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << width << "\" height=\""
      << height << "\" fill=\"none\" stroke=\"black\"/>\n";
    o << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (const auto& b : result.best) {
        o << fmt(px(std::log10(static_cast<double>(b.n)))) << ',' << fmt(py(std::log10(b.loss)))
          << ' ';
    }
    o << "\"/>\n";
    for (const auto& b : result.best) {
        o << "<circle cx=\"" << fmt(px(std::log10(static_cast<double>(b.n)))) << "\" cy=\""
          << fmt(py(std::log10(b.loss))) << "\" r=\"3\" fill=\"steelblue\"/>\n";
    }
    if (result.fit) {
        const double a = std::log10(result.fit->x_lo);
        const double b = std::log10(result.fit->x_hi);
        const auto line = [&](double lx) {
            return (result.fit->intercept + result.fit->slope * lx * std::log(10.0)) / std::log(10.0);
        };
        o << "<line x1=\"" << fmt(px(a)) << "\" y1=\"" << fmt(py(line(a))) << "\" x2=\""
          << fmt(px(b)) << "\" y2=\"" << fmt(py(line(b)))
          << "\" stroke=\"red\" stroke-dasharray=\"5 3\"/>\n";
        o << "<text x=\"" << left + 10 << "\" y=\"" << top + 18 << "\">slope " << result.fit->slope
          << "</text>\n";
    }
    o << "<text x=\"" << left + width / 2 - 60 << "\" y=\"" << top + height + 30
      << "\">latents n (log)</text>\n";
    o << "<text x=\"8\" y=\"" << top + height / 2 << "\">loss (log)</text>\n</svg>\n";
    return o.str();
}

}  // namespace saelab::experiments::svg
