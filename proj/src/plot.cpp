#include "charlab/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "charlab/error.hpp"

namespace charlab {

namespace {

using ojson = nlohmann::ordered_json;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
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

std::string fmt(double x) {
  std::ostringstream out;
  out.precision(4);
  out << x;
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

std::string curve_label(const ojson& c) {
  std::ostringstream out;
  out << c.at("run_id").get<std::string>() << ' ' << c.at("task").get<std::string>() << " |V|="
      << c.at("vocab_size").get<int>() << " K=" << fmt(c.at("K").get<double>());
  return out.str();
}

}  // namespace

std::string svg_chart(const ChartSpec& spec, const std::vector<Series>& series) {
  const double width = 760, height = 460;
  const double left = 70, right = 230, top = 40, bottom = spec.caption.empty() ? 60 : 80;
  const double pw = width - left - right, ph = height - top - bottom;

  auto tx = [&](double x) { return spec.log_x ? std::log10(x) : x; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (spec.log_x && x <= 0) throw Error(ErrorKind::kInvalidArgument, "log axis needs positive x");
      x0 = std::min(x0, tx(x));
      x1 = std::max(x1, tx(x));
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  y0 = std::min(y0, 0.0);

  auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left << "\" y=\"22\" font-size=\"14\">" << escape(spec.title) << "</text>\n";
  out << "<g stroke=\"black\" stroke-width=\"1\">\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n";
  out << "</g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    const double label_x = spec.log_x ? std::pow(10.0, fx) : fx;
    const double sx = left + pw * i / 4.0;
    const double sy = top + ph - ph * i / 4.0;
    out << "<text x=\"" << sx << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << fmt(label_x)
        << "</text>\n";
    out << "<text x=\"" << left - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << top + ph + 34 << "\" text-anchor=\"middle\">"
      << escape(spec.x_label) << (spec.log_x ? " (log)" : "") << "</text>\n";
  out << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(spec.y_label) << "</text>\n";

  for (size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t k = 0; k < series[i].points.size(); ++k) {
      const auto& [x, y] = series[i].points[k];
      out << (k ? " " : "") << fmt(px(x)) << ',' << fmt(py(y));
    }
    out << "\"/>\n";
    if (spec.markers) {
      for (const auto& [x, y] : series[i].points) {
        out << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    const double ly = top + 10 + 16.0 * static_cast<double>(i);
    out << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly + 4 << "\">" << escape(series[i].label) << "</text>\n";
  }
  if (!spec.caption.empty()) {
    out << "<text x=\"" << left << "\" y=\"" << height - 14 << "\">" << escape(spec.caption) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::vector<std::filesystem::path> write_plots(const nlohmann::ordered_json& report, const std::filesystem::path& dir) {
  if (!report.contains("curves") || report.at("curves").empty()) {
    throw Error(ErrorKind::kEmptyInput, "report has no curves to plot");
  }
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_file(dir / name, text);
    written.push_back(dir / name);
  };

  // Accuracy against step, one series per curve.
  {
    std::vector<Series> series;
    std::ostringstream csv;
    csv.precision(10);
    csv << "run_id,task,vocab_size,K,step,accuracy\n";
    for (const auto& c : report.at("curves")) {
      Series s{curve_label(c), {}};
      for (const auto& p : c.at("points")) {
        const double step = p.at(0).get<double>();
        const double acc = p.at(1).get<double>();
        s.points.emplace_back(step, acc);
        csv << c.at("run_id").get<std::string>() << ',' << c.at("task").get<std::string>() << ','
            << c.at("vocab_size").get<int>() << ',' << c.at("K").get<double>() << ',' << step << ',' << acc << '\n';
      }
      series.push_back(std::move(s));
    }
    emit("accuracy.svg", svg_chart({"Exact-match accuracy", "training step", "accuracy", "", false, false}, series));
    emit("accuracy.csv", csv.str());
  }

  // Character-level emergence step against vocabulary size, per (architecture, K).
  std::vector<const ojson*> char_entries;
  for (const auto& e : report.at("entries")) {
    if (e.at("task").get<std::string>() == "mean_char") char_entries.push_back(&e);
  }
  {
    std::map<std::pair<bool, double>, Series> groups;
    std::ostringstream csv;
    csv.precision(10);
    csv << "run_id,char_enabled,vocab_size,K,emergence_step\n";
    for (const ojson* e : char_entries) {
      const bool arch = e->at("char_enabled").get<bool>();
      const double k = e->at("K").get<double>();
      auto& s = groups[{arch, k}];
      s.label = std::string(arch ? "char-aware" : "baseline") + " K=" + fmt(k);
      csv << e->at("run_id").get<std::string>() << ',' << (arch ? "true" : "false") << ','
          << e->at("vocab_size").get<int>() << ',' << k << ',';
      if (!e->at("emergence_step").is_null()) {
        s.points.emplace_back(e->at("vocab_size").get<double>(), e->at("emergence_step").get<double>());
        csv << e->at("emergence_step").get<int>();
      }
      csv << '\n';
    }
    std::vector<Series> series;
    for (auto& [key, s] : groups) {
      std::sort(s.points.begin(), s.points.end());
      series.push_back(std::move(s));
    }
    emit("emergence.svg", svg_chart({"Character-task emergence step", "|V|", "emergence step", "", true, true}, series));
    emit("emergence.csv", csv.str());
  }

  // Raw against rescaled emergence points, each normalized by its mean.
  {
    std::vector<std::tuple<double, double, double>> pts;  // (|V| K, raw, scaled)
    std::ostringstream csv;
    csv.precision(10);
    csv << "run_id,char_enabled,vocab_size,K,emergence_step,scaled_step\n";
    for (const ojson* e : char_entries) {
      if (e->at("emergence_step").is_null()) continue;
      const double vk = e->at("vocab_size").get<double>() * e->at("K").get<double>();
      pts.emplace_back(vk, e->at("emergence_step").get<double>(), e->at("scaled_step").get<double>());
      csv << e->at("run_id").get<std::string>() << ',' << (e->at("char_enabled").get<bool>() ? "true" : "false")
          << ',' << e->at("vocab_size").get<int>() << ',' << e->at("K").get<double>() << ','
          << e->at("emergence_step").get<int>() << ',' << e->at("scaled_step").get<double>() << '\n';
    }
    std::sort(pts.begin(), pts.end());
    double raw_mean = 0, scaled_mean = 0;
    for (const auto& [vk, raw, scaled] : pts) {
      raw_mean += raw;
      scaled_mean += scaled;
    }
    Series raw{"raw step / mean", {}}, scaled{"scaled step / mean", {}};
    for (const auto& [vk, r, s] : pts) {
      raw.points.emplace_back(vk, r * static_cast<double>(pts.size()) / raw_mean);
      scaled.points.emplace_back(vk, s * static_cast<double>(pts.size()) / scaled_mean);
    }
    std::ostringstream caption;
    for (const auto& [arch, stats] : report.at("collapse").items()) {
      if (stats.contains("error")) {
        caption << arch << ": " << stats.at("error").get<std::string>() << "  ";
        continue;
      }
      caption << arch << ": raw CV=" << fmt(stats.at("raw_dispersion").get<double>())
              << " scaled CV=" << fmt(stats.at("scaled_dispersion").get<double>())
              << " best exponent=" << fmt(stats.at("best_exponent").get<double>()) << "  ";
    }
    ChartSpec spec{"Emergence points before and after rescaling", "|V| K", "step / mean", caption.str(), true, true};
    emit("collapse.svg", svg_chart(spec, {raw, scaled}));
    emit("collapse.csv", csv.str());
  }
  return written;
}

}  // namespace charlab
