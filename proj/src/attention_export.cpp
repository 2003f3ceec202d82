#include "slicefusion/attention_export.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "slicefusion/io.hpp"

namespace slicefusion {

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

void check(const Tensor& scores) {
  if (scores.rank() != 1 || scores.size() == 0) throw ShapeError("attention scores must be a nonempty vector");
}

}  // namespace

std::string scores_csv(const Tensor& scores) {
  check(scores);
  std::ostringstream out;
  out.precision(17);
  out << "slice_index,score\n";
  for (std::size_t j = 0; j < scores.size(); ++j) out << j << ',' << scores[j] << '\n';
  return out.str();
}

std::string scores_svg(const Tensor& scores, std::string_view title) {
  check(scores);
  const std::size_t n = scores.size();
  const double uniform = 1.0 / static_cast<double>(n);
  const double top = std::max(*std::max_element(scores.data().begin(), scores.data().end()), 1.5 * uniform);
  const double left = 50, right = 20, upper = 40, lower = 40, plot_w = 640, plot_h = 240;
  const double bar_w = plot_w / static_cast<double>(n);
  const auto y_of = [&](double v) { return upper + plot_h * (1.0 - v / top); };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(left + plot_w + right) << "\" height=\""
      << num(upper + plot_h + lower) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty())
    out << "<text x=\"" << num(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
        << "</text>\n";
  for (std::size_t j = 0; j < n; ++j) {
    const double y = y_of(scores[j]);
    out << "<rect x=\"" << num(left + bar_w * static_cast<double>(j) + 1) << "\" y=\"" << num(y) << "\" width=\""
        << num(std::max(bar_w - 2, 1.0)) << "\" height=\"" << num(upper + plot_h - y) << "\" fill=\"steelblue\"/>\n";
  }
  out << "<line x1=\"" << num(left) << "\" y1=\"" << num(upper + plot_h) << "\" x2=\"" << num(left + plot_w)
      << "\" y2=\"" << num(upper + plot_h) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << num(left) << "\" y1=\"" << num(upper) << "\" x2=\"" << num(left) << "\" y2=\""
      << num(upper + plot_h) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << num(left) << "\" y1=\"" << num(y_of(uniform)) << "\" x2=\"" << num(left + plot_w)
      << "\" y2=\"" << num(y_of(uniform)) << "\" stroke=\"red\" stroke-dasharray=\"6,4\"/>\n"
      << "<text x=\"" << num(left + plot_w - 60) << "\" y=\"" << num(y_of(uniform) - 4)
      << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"red\">1/" << n << "</text>\n"
      << "<text x=\"" << num(left) << "\" y=\"" << num(upper + plot_h + 28)
      << "\" font-family=\"sans-serif\" font-size=\"11\">slice 0</text>\n"
      << "<text x=\"" << num(left + plot_w - 50) << "\" y=\"" << num(upper + plot_h + 28)
      << "\" font-family=\"sans-serif\" font-size=\"11\">slice " << n - 1 << "</text>\n"
      << "</svg>\n";
  return out.str();
}

void write_attention_profile(const Tensor& scores, const std::filesystem::path& csv_path,
                             const std::filesystem::path& svg_path, std::string_view title) {
  write_file_atomic(csv_path, scores_csv(scores));
  write_file_atomic(svg_path, scores_svg(scores, title));
}

}  // namespace slicefusion
