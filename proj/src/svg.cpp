#include "knolling/svg.hpp"

#include "knolling/rng.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace knolling {

std::string layout_svg(const Layout& layout, const Workspace& ws, const std::string& title) {
    const double scale = 1000.0;  // px per meter
    const double W = ws.width * scale, H = ws.height * scale;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H
       << "\" fill=\"#fafafa\" stroke=\"#333\"/>\n";
    if (!title.empty())
        os << "<text x=\"8\" y=\"18\" font-size=\"14\" fill=\"#333\">" << title
           << "</text>\n";
    const double max_area = kMaxObjectSide * kMaxObjectSide;
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& item = layout[i];
        double w = item.spec.width * scale;
        double l = item.spec.length * scale;
        double cx = item.pose.x * scale;
        double cy = H - item.pose.y * scale;  // svg y grows downward
        double deg = -item.pose.yaw * 180.0 / kPi;
        int shade = 235 - static_cast<int>(150.0 * std::min(1.0, item.spec.area() / max_area));
        os << "<g transform=\"translate(" << cx << ',' << cy << ") rotate(" << deg
           << ")\">";
        os << "<rect x=\"" << -w / 2 << "\" y=\"" << -l / 2 << "\" width=\"" << w
           << "\" height=\"" << l << "\" fill=\"rgb(" << shade << ',' << shade
           << ",245)\" stroke=\"#224\" stroke-width=\"1\"/>";
        os << "<text x=\"0\" y=\"4\" font-size=\"12\" text-anchor=\"middle\" fill=\"#112\">"
           << i << "</text>";
        os << "</g>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void write_svg(const std::string& path, const Layout& layout, const Workspace& ws,
               const std::string& title) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << layout_svg(layout, ws, title);
}

}  // namespace knolling
