#include <algorithm>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "msmil/error.hpp"
#include "msmil/harness.hpp"

namespace msmil {

void write_results_csv(std::ostream& out, std::span<const ExperimentResult> results) {
  out << "method,k,classifier,nP,aug1,repetitions,mean_acc,std_acc,seed,seconds\n";
  char buf[256];
  for (const auto& r : results) {
    const auto& c = r.config;
    std::snprintf(buf, sizeof buf, "%s,%zu,%s,%zu,%d,%zu,%.17g,%.17g,%llu,%.3f\n",
                  to_string(c.method).data(), c.k, to_string(c.classifier).data(),
                  r.n_patches, c.aug1 ? 1 : 0, c.repetitions, r.mean_acc, r.std_acc,
                  static_cast<unsigned long long>(c.seed), c.record_time ? r.seconds : 0.0);
    out << buf;
  }
}

std::vector<ExperimentResult> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("method,k,classifier", 0) != 0)
    throw FormatError("results CSV lacks the expected header", 0);
  std::uint64_t offset = line.size() + 1;
  std::vector<ExperimentResult> out;
  while (std::getline(in, line)) {
    const auto at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw FormatError("results row must have 10 columns", at);
    ExperimentResult r;
    auto method = parse_method(cells[0]);
    auto classifier = parse_classifier(cells[2]);
    if (!method || !classifier) throw FormatError("unknown method or classifier", at);
    try {
      r.config.method = *method;
      r.config.k = std::stoul(cells[1]);
      r.config.classifier = *classifier;
      r.n_patches = std::stoul(cells[3]);
      r.config.aug1 = cells[4] == "1";
      r.config.repetitions = std::stoul(cells[5]);
      r.mean_acc = std::stod(cells[6]);
      r.std_acc = std::stod(cells[7]);
      r.config.seed = std::stoull(cells[8]);
      r.seconds = std::stod(cells[9]);
    } catch (const std::exception&) {
      throw FormatError("unparsable number in results row", at);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_repetitions_csv(std::ostream& out, const ExperimentResult& result) {
  out << "repetition,accuracy,kernel,gamma,C\n";
  char buf[128];
  for (std::size_t r = 0; r < result.repetitions.size(); ++r) {
    const auto& o = result.repetitions[r];
    if (o.chosen)
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%s,%g,%g\n", r, o.accuracy,
                    to_string(o.chosen->kernel).data(), o.chosen->gamma, o.chosen->C);
    else
      std::snprintf(buf, sizeof buf, "%zu,%.17g,,,\n", r, o.accuracy);
    out << buf;
  }
}

namespace {

const char* method_color(Method m) {
  switch (m) {
    case Method::kBaseline: return "#1f77b4";
    case Method::kMC: return "#e6c300";
    case Method::kMA: return "#2ca02c";
    case Method::kMM: return "#d62728";
  }
  return "#777777";
}

constexpr double kFloor = 0.5;
constexpr double kPlotTop = 40.0;
constexpr double kPlotHeight = 300.0;
constexpr double kBarWidth = 14.0;
constexpr double kBarGap = 4.0;
constexpr double kGroupGap = 14.0;
constexpr double kPanelGap = 40.0;
constexpr double kLeftMargin = 60.0;

double y_of(double acc) {
  acc = std::clamp(acc, kFloor, 1.0);
  return kPlotTop + (1.0 - acc) / (1.0 - kFloor) * kPlotHeight;
}

}  // namespace

std::string render_report_svg(std::span<const ExperimentResult> results,
                              std::optional<double> baseline_mean) {
  // panel -> k -> method -> result
  std::map<int, std::map<std::size_t, std::multimap<int, const ExperimentResult*>>> layout;
  for (const auto& r : results)
    layout[static_cast<int>(r.config.classifier)][r.config.k].emplace(
        static_cast<int>(r.config.method), &r);

  std::ostringstream body;
  char buf[512];
  double x = kLeftMargin;
  const double axis_bottom = kPlotTop + kPlotHeight;
  for (const auto& [classifier, by_k] : layout) {
    const double panel_start = x;
    for (const auto& [k, by_method] : by_k) {
      const double group_start = x;
      for (const auto& [method_id, r] : by_method) {
        const double top = y_of(r->mean_acc);
        std::snprintf(buf, sizeof buf,
                      "<rect class=\"bar\" x=\"%.1f\" y=\"%.3f\" width=\"%.1f\" height=\"%.3f\" "
                      "fill=\"%s\"><title>%s k=%zu %s: %.4f &#177; %.4f</title></rect>\n",
                      x, top, kBarWidth, axis_bottom - top,
                      method_color(r->config.method), to_string(r->config.method).data(), k,
                      to_string(r->config.classifier).data(), r->mean_acc, r->std_acc);
        body << buf;
        const double cx = x + kBarWidth / 2;
        std::snprintf(buf, sizeof buf,
                      "<line class=\"whisker\" x1=\"%.1f\" y1=\"%.3f\" x2=\"%.1f\" y2=\"%.3f\" "
                      "stroke=\"black\" data-std=\"%.6f\"/>\n",
                      cx, y_of(r->mean_acc + r->std_acc), cx, y_of(r->mean_acc - r->std_acc),
                      r->std_acc);
        body << buf;
        x += kBarWidth + kBarGap;
      }
      std::snprintf(buf, sizeof buf,
                    "<text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"middle\">k=%zu</text>\n",
                    (group_start + x - kBarGap) / 2, axis_bottom + 14, k);
      body << buf;
      x += kGroupGap;
    }
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\">%s</text>\n",
                  (panel_start + x - kGroupGap) / 2, kPlotTop - 12,
                  to_string(static_cast<Classifier>(classifier)).data());
    body << buf;
    x += kPanelGap;
  }
  const double width = std::max(x, kLeftMargin + 100.0);

  std::ostringstream svg;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "data-y-min=\"%.1f\" data-y-max=\"1.0\">\n",
                width, axis_bottom + 60, kFloor);
  svg << buf;
  svg << "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double acc = kFloor + 0.1 * t;
    std::snprintf(buf, sizeof buf,
                  "<line class=\"grid\" x1=\"%.1f\" y1=\"%.3f\" x2=\"%.1f\" y2=\"%.3f\" stroke=\"#dddddd\"/>\n"
                  "<text class=\"tick\" x=\"%.1f\" y=\"%.3f\" font-size=\"10\" text-anchor=\"end\">%.1f</text>\n",
                  kLeftMargin - 4, y_of(acc), width - kPanelGap + 20, y_of(acc), kLeftMargin - 8,
                  y_of(acc) + 3, acc);
    svg << buf;
  }
  svg << body.str();
  if (baseline_mean) {
    std::snprintf(buf, sizeof buf,
                  "<line class=\"baseline\" x1=\"%.1f\" y1=\"%.3f\" x2=\"%.1f\" y2=\"%.3f\" "
                  "stroke=\"#1f77b4\" stroke-width=\"2\" data-value=\"%.17g\"/>\n",
                  kLeftMargin, y_of(*baseline_mean), width - kPanelGap + 20, y_of(*baseline_mean),
                  *baseline_mean);
    svg << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"14\" y=\"%.1f\" font-size=\"11\" transform=\"rotate(-90 14 %.1f)\" "
                "text-anchor=\"middle\">accuracy</text>\n",
                kPlotTop + kPlotHeight / 2, kPlotTop + kPlotHeight / 2);
  svg << buf << "</svg>\n";
  return svg.str();
}

}  // namespace msmil
