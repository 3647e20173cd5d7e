#include "defacto/svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace defacto {

namespace {

struct Scale {
  double lo, hi, px0, px1;
  double operator()(double v) const {
    return px0 + (v - lo) / (hi - lo) * (px1 - px0);
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

std::string tipping_svg(const TippingResult& result,
                        const std::string& k_label) {
  const int width = 640, height = 420;
  const double ml = 70, mr = 20, mt = 20, mb = 50;

  double kmin = result.curve.front().k, kmax = result.curve.back().k;
  double ymin = 0.0, ymax = 0.0;
  for (const auto& row : result.curve) {
    ymin = std::min({ymin, row.ci_low});
    ymax = std::max({ymax, row.ci_high});
  }
  double pad = 0.05 * (ymax - ymin + 1e-12);
  ymin -= pad;
  ymax += pad;

  Scale sx{kmin, kmax, ml, width - mr};
  Scale sy{ymin, ymax, height - mb, mt};  // inverted y

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width
      << "' height='" << height << "' viewBox='0 0 " << width << " " << height
      << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n";

  // CI band.
  svg << "<polygon fill='#c6dbef' stroke='none' points='";
  for (const auto& row : result.curve) {
    svg << fmt(sx(row.k)) << "," << fmt(sy(row.ci_high)) << " ";
  }
  for (auto it = result.curve.rbegin(); it != result.curve.rend(); ++it) {
    svg << fmt(sx(it->k)) << "," << fmt(sy(it->ci_low)) << " ";
  }
  svg << "'/>\n";

  // Zero reference.
  if (ymin < 0 && ymax > 0) {
    svg << "<line x1='" << fmt(sx(kmin)) << "' y1='" << fmt(sy(0)) << "' x2='"
        << fmt(sx(kmax)) << "' y2='" << fmt(sy(0))
        << "' stroke='#999' stroke-dasharray='4 3'/>\n";
  }

  // Estimate line.
  svg << "<polyline fill='none' stroke='#08519c' stroke-width='2' points='";
  for (const auto& row : result.curve) {
    svg << fmt(sx(row.k)) << "," << fmt(sy(row.estimate)) << " ";
  }
  svg << "'/>\n";

  // Crossing marker.
  if (result.crossing) {
    double x = sx(*result.crossing);
    svg << "<line x1='" << fmt(x) << "' y1='" << fmt(sy(ymin)) << "' x2='"
        << fmt(x) << "' y2='" << fmt(sy(ymax))
        << "' stroke='#cb181d' stroke-width='2'/>\n"
        << "<text x='" << fmt(x + 5) << "' y='" << fmt(mt + 14)
        << "' font-size='12' fill='#cb181d'>tipping point " << k_label << " = "
        << fmt(*result.crossing) << "</text>\n";
  }

  // Axes with a handful of ticks.
  svg << "<line x1='" << ml << "' y1='" << height - mb << "' x2='"
      << width - mr << "' y2='" << height - mb << "' stroke='black'/>\n"
      << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
      << height - mb << "' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    double k = kmin + (kmax - kmin) * i / 4.0;
    double v = ymin + (ymax - ymin) * i / 4.0;
    svg << "<text x='" << fmt(sx(k)) << "' y='" << height - mb + 18
        << "' font-size='11' text-anchor='middle'>" << fmt(k) << "</text>\n"
        << "<text x='" << ml - 8 << "' y='" << fmt(sy(v) + 4)
        << "' font-size='11' text-anchor='end'>" << fmt(v) << "</text>\n";
  }
  svg << "<text x='" << (ml + width - mr) / 2 << "' y='" << height - 12
      << "' font-size='13' text-anchor='middle'>" << k_label << "</text>\n"
      << "<text x='16' y='" << (mt + height - mb) / 2
      << "' font-size='13' text-anchor='middle' transform='rotate(-90 16 "
      << (mt + height - mb) / 2 << ")'>treatment effect</text>\n"
      << "</svg>\n";
  return svg.str();
}

}  // namespace defacto
