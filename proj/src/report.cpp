#include "ccil/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace ccil {

namespace {

using Json = nlohmann::json;

struct RunRecord {
  std::string dir;
  std::string run_id;
  std::string row_id;  // run_id with the -seedN suffix stripped
  std::uint64_t fingerprint = 0;
  Json metrics;
};

std::string strip_seed_suffix(const std::string& run_id) {
  auto pos = run_id.rfind("-seed");
  if (pos == std::string::npos) return run_id;
  for (std::size_t i = pos + 5; i < run_id.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(run_id[i]))) return run_id;
  }
  return run_id.substr(0, pos);
}

struct Stat {
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
};

Stat stat_of(const std::vector<double>& values) {
  Stat s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= values.size();
  for (double v : values) s.stddev += (v - s.mean) * (v - s.mean);
  s.stddev = values.size() > 1 ? std::sqrt(s.stddev / (values.size() - 1)) : 0.0;
  return s;
}

std::string fmt(double v, int precision = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

std::string fmt_stat(const Stat& s, int precision = 2) {
  if (s.n == 0) return "-";
  if (s.n == 1) return fmt(s.mean, precision);
  return fmt(s.mean, precision) + " ± " + fmt(s.stddev, precision);
}

// Minimal SVG helpers: enough for line charts and grouped bars.
class Svg {
 public:
  Svg(int width, int height) : w_(width), h_(height) {
    body_ << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w_ << "' height='" << h_
          << "' viewBox='0 0 " << w_ << " " << h_ << "'>\n"
          << "<rect width='100%' height='100%' fill='white'/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& color,
            double width = 1.0) {
    body_ << "<line x1='" << x1 << "' y1='" << y1 << "' x2='" << x2 << "' y2='" << y2
          << "' stroke='" << color << "' stroke-width='" << width << "'/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
    body_ << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (auto& [x, y] : pts) body_ << x << "," << y << " ";
    body_ << "'/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& color) {
    body_ << "<rect x='" << x << "' y='" << y << "' width='" << w << "' height='" << h
          << "' fill='" << color << "'/>\n";
  }
  void text(double x, double y, const std::string& s, int size = 11,
            const std::string& anchor = "start") {
    body_ << "<text x='" << x << "' y='" << y << "' font-size='" << size
          << "' font-family='sans-serif' text-anchor='" << anchor << "'>" << s << "</text>\n";
  }
  std::string str() {
    return body_.str() + "</svg>\n";
  }

 private:
  int w_, h_;
  std::ostringstream body_;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

void write_file(const std::string& path, const std::string& content,
                std::vector<std::string>& written) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  written.push_back(path);
}

// Accuracy-over-steps chart, one colored line per configuration group.
std::string accuracy_chart(const std::map<std::string, std::vector<std::vector<double>>>& curves) {
  const int W = 640, H = 420, L = 60, B = 40, T = 30, R = 20;
  Svg svg(W, H);
  std::size_t max_steps = 0;
  for (auto& [id, runs] : curves) {
    for (auto& c : runs) max_steps = std::max(max_steps, c.size());
  }
  if (max_steps < 1) return svg.str();
  auto xpos = [&](std::size_t i) {
    return L + (W - L - R) * (max_steps == 1 ? 0.0 : static_cast<double>(i) / (max_steps - 1));
  };
  auto ypos = [&](double acc) { return T + (H - T - B) * (1.0 - acc / 100.0); };
  for (int g = 0; g <= 10; ++g) {
    double y = ypos(10.0 * g);
    svg.line(L, y, W - R, y, "#eeeeee");
    svg.text(L - 8, y + 4, std::to_string(10 * g), 10, "end");
  }
  for (std::size_t i = 0; i < max_steps; ++i) {
    svg.text(xpos(i), H - B + 16, std::to_string(i), 10, "middle");
  }
  svg.text(W / 2, H - 8, "incremental step", 11, "middle");
  svg.text(14, T - 12, "overall accuracy (%) on all seen classes", 11);
  int color = 0;
  int legend_y = T + 6;
  for (auto& [id, runs] : curves) {
    const char* c = kPalette[color % 8];
    for (auto& curve : runs) {
      std::vector<std::pair<double, double>> pts;
      for (std::size_t i = 0; i < curve.size(); ++i) pts.push_back({xpos(i), ypos(curve[i])});
      svg.polyline(pts, c);
    }
    svg.rect(W - R - 150, legend_y, 10, 10, c);
    svg.text(W - R - 135, legend_y + 9, id, 10);
    legend_y += 15;
    ++color;
  }
  return svg.str();
}

// Old-vs-new mean weight-norm bars per configuration group.
std::string norm_chart(const std::map<std::string, std::pair<Stat, Stat>>& norms) {
  const int W = 640, H = 360, L = 60, B = 90, T = 30, R = 20;
  Svg svg(W, H);
  double max_norm = 0.0;
  for (auto& [id, pair] : norms) {
    max_norm = std::max({max_norm, pair.first.mean, pair.second.mean});
  }
  if (max_norm <= 0.0) max_norm = 1.0;
  auto ypos = [&](double v) { return T + (H - T - B) * (1.0 - v / (1.15 * max_norm)); };
  svg.text(14, T - 12, "mean L2 norm of class weight vectors", 11);
  double group_w = (W - L - R) / std::max<std::size_t>(1, norms.size());
  int i = 0;
  for (auto& [id, pair] : norms) {
    double x0 = L + i * group_w;
    double bw = std::min(28.0, group_w / 3.0);
    svg.rect(x0 + group_w / 2 - bw - 2, ypos(pair.first.mean), bw,
             (H - B) - ypos(pair.first.mean), "#1f77b4");
    svg.rect(x0 + group_w / 2 + 2, ypos(pair.second.mean), bw, (H - B) - ypos(pair.second.mean),
             "#d62728");
    svg.text(x0 + group_w / 2, H - B + 14, id, 9, "middle");
    ++i;
  }
  svg.rect(L, H - 40, 10, 10, "#1f77b4");
  svg.text(L + 15, H - 31, "old classes", 10);
  svg.rect(L + 110, H - 40, 10, 10, "#d62728");
  svg.text(L + 125, H - 31, "new classes", 10);
  return svg.str();
}

// Training-loss curve for one run (the longest-phase view).
std::string loss_chart(const std::vector<std::pair<std::string, double>>& losses) {
  const int W = 640, H = 320, L = 60, B = 40, T = 20, R = 20;
  Svg svg(W, H);
  if (losses.empty()) return svg.str();
  double max_loss = 0.0;
  for (auto& [phase, v] : losses) max_loss = std::max(max_loss, v);
  if (max_loss <= 0.0) max_loss = 1.0;
  auto xpos = [&](std::size_t i) {
    return L + (W - L - R) * (losses.size() == 1
                                  ? 0.0
                                  : static_cast<double>(i) / (losses.size() - 1));
  };
  auto ypos = [&](double v) { return T + (H - T - B) * (1.0 - v / (1.1 * max_loss)); };
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < losses.size(); ++i) pts.push_back({xpos(i), ypos(losses[i].second)});
  svg.polyline(pts, "#d62728");
  // Phase boundaries.
  for (std::size_t i = 1; i < losses.size(); ++i) {
    if (losses[i].first != losses[i - 1].first) {
      svg.line(xpos(i), T, xpos(i), H - B, "#cccccc");
    }
  }
  svg.text(W / 2, H - 8, "epoch (all phases, in order)", 11, "middle");
  svg.text(14, T - 4, "mean training loss", 11);
  return svg.str();
}

}  // namespace

RenderSummary render_report(const std::string& results_dir, const std::string& out_dir) {
  RenderSummary summary;
  if (!fs::exists(results_dir)) {
    throw std::runtime_error("results directory not found: " + results_dir);
  }
  std::vector<RunRecord> runs;
  for (const auto& entry : fs::recursive_directory_iterator(results_dir)) {
    if (!entry.is_regular_file() || entry.path().filename() != "manifest.json") continue;
    RunRecord rec;
    rec.dir = entry.path().parent_path().string();
    try {
      std::ifstream min(entry.path());
      Json manifest = Json::parse(min);
      rec.run_id = manifest.at("config").at("run_id").get<std::string>();
      rec.fingerprint = manifest.value("config_fingerprint", 0ULL);
      rec.row_id = strip_seed_suffix(rec.run_id);
      std::ifstream metin(rec.dir + "/metrics.json");
      if (!metin) {
        summary.warnings.push_back(rec.dir + ": run incomplete (no metrics.json); skipped");
        continue;
      }
      rec.metrics = Json::parse(metin);
    } catch (const std::exception& e) {
      summary.warnings.push_back(rec.dir + ": unreadable (" + e.what() + ")");
      continue;
    }
    runs.push_back(std::move(rec));
    ++summary.runs_found;
  }

  fs::create_directories(out_dir);

  // Group seed replicas: same row id + fingerprint.
  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const auto& run : runs) {
    groups[run.row_id + "#" + std::to_string(run.fingerprint)].push_back(&run);
  }
  summary.groups = static_cast<int>(groups.size());

  auto collect = [](const std::vector<const RunRecord*>& rs, const char* key) {
    std::vector<double> vals;
    for (const auto* r : rs) {
      if (r->metrics.contains(key) && r->metrics.at(key).is_number()) {
        vals.push_back(r->metrics.at(key).get<double>());
      }
    }
    return vals;
  };

  // Summary table in the regularizer-study row format:
  // Avg Acc | SS-NLL | SS-Acc | forgetting | feature retention | ECE.
  std::string md =
      "| Model | Runs | Avg Acc ↑ | SS-NLL ↓ | SS-Acc ↑ | Forgetting ↓ | F. Retention ↓ | ECE ↓ "
      "|\n|---|---|---|---|---|---|---|---|\n";
  std::string csv =
      "row,runs,avg_acc_mean,avg_acc_std,ss_nll_mean,ss_nll_std,ss_acc_mean,ss_acc_std,"
      "forgetting_mean,forgetting_std,retention_mean,retention_std,ece_mean,ece_std\n";
  std::map<std::string, std::vector<std::vector<double>>> curves;
  std::map<std::string, std::pair<Stat, Stat>> norms;
  for (auto& [key, rs] : groups) {
    std::string row = rs.front()->row_id;
    Stat avg = stat_of(collect(rs, "avg_acc"));
    Stat ssn = stat_of(collect(rs, "ss_nll"));
    Stat ssa = stat_of(collect(rs, "ss_acc"));
    Stat fgt = stat_of(collect(rs, "forgetting"));
    Stat ret = stat_of(collect(rs, "feature_retention"));
    Stat ece_s = stat_of(collect(rs, "ece"));
    md += "| " + row + " | " + std::to_string(rs.size()) + " | " + fmt_stat(avg) + " | " +
          fmt_stat(ssn, 3) + " | " + fmt_stat(ssa) + " | " + fmt_stat(fgt) + " | " +
          fmt_stat(ret) + " | " + fmt_stat(ece_s, 3) + " |\n";
    csv += row + "," + std::to_string(rs.size()) + "," + fmt(avg.mean, 4) + "," +
           fmt(avg.stddev, 4) + "," + fmt(ssn.mean, 4) + "," + fmt(ssn.stddev, 4) + "," +
           fmt(ssa.mean, 4) + "," + fmt(ssa.stddev, 4) + "," + fmt(fgt.mean, 4) + "," +
           fmt(fgt.stddev, 4) + "," + fmt(ret.mean, 4) + "," + fmt(ret.stddev, 4) + "," +
           fmt(ece_s.mean, 4) + "," + fmt(ece_s.stddev, 4) + "\n";

    for (const auto* r : rs) {
      if (r->metrics.contains("overall_acc")) {
        curves[row].push_back(r->metrics.at("overall_acc").get<std::vector<double>>());
      }
    }
    Stat old_norm = stat_of(collect(rs, "final_norm_old"));
    Stat new_norm = stat_of(collect(rs, "final_norm_new"));
    if (old_norm.n > 0 && new_norm.n > 0) norms[row] = {old_norm, new_norm};
  }

  write_file(out_dir + "/summary.md", md, summary.written);
  write_file(out_dir + "/summary.csv", csv, summary.written);
  if (!curves.empty()) {
    write_file(out_dir + "/accuracy_curves.svg", accuracy_chart(curves), summary.written);
  }
  if (!norms.empty()) {
    write_file(out_dir + "/weight_norms.svg", norm_chart(norms), summary.written);
  }

  // One loss curve per run, from the stored training log.
  for (const auto& run : runs) {
    std::ifstream log_in(run.dir + "/training_log.csv");
    if (!log_in) continue;
    std::vector<std::pair<std::string, double>> losses;
    std::string line;
    std::getline(log_in, line);  // header
    while (std::getline(log_in, line)) {
      auto p1 = line.find(',');
      auto p3 = line.rfind(',');
      if (p1 == std::string::npos || p3 == std::string::npos || p3 <= p1) continue;
      losses.push_back({line.substr(0, p1), std::stod(line.substr(p3 + 1))});
    }
    if (!losses.empty()) {
      write_file(out_dir + "/loss_" + run.run_id + ".svg", loss_chart(losses), summary.written);
    }
  }
  return summary;
}

}  // namespace ccil
