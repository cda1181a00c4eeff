#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "salprune/harness.hpp"
#include "salprune/image_io.hpp"

namespace salprune {
namespace fs = std::filesystem;

namespace {

std::string num(double x, int digits) {
  if (!std::isfinite(x)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  std::string s = buf;
  if (s == "-0.00" || s == "-0.0000") s.erase(0, 1);
  return s;
}

struct Mean {
  double sum = 0.0;
  int n = 0;
  void add(double x) {
    sum += x;
    ++n;
  }
  double value() const { return n ? sum / n : NAN; }
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                          "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#000000", "#aec7e8"};

std::string road_svg(const std::string& method, const std::vector<std::string>& regimes,
                     const std::map<std::string, RoadCurve>& curves) {
  const double W = 640, H = 420, L = 60, R = 190, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  auto X = [&](double f) { return L + f * pw; };
  auto Y = [&](double a) { return T + (1.0 - a) * ph; };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << L + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">ROAD (MoRF), " << method
    << "</text>\n";
  for (int i = 0; i <= 10; i += 2) {
    const double v = i / 10.0;
    o << "<line x1=\"" << X(v) << "\" y1=\"" << T << "\" x2=\"" << X(v) << "\" y2=\"" << T + ph
      << "\" stroke=\"#e5e5e5\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << Y(v) << "\" x2=\"" << L + pw << "\" y2=\"" << Y(v)
      << "\" stroke=\"#e5e5e5\"/>\n";
    o << "<text x=\"" << X(v) << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">" << num(100 * v, 0)
      << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << Y(v) + 4 << "\" text-anchor=\"end\">" << num(v, 1) << "</text>\n";
  }
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">pixels removed (%)</text>\n";
  o << "<text transform=\"translate(16," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">accuracy</text>\n";
  int k = 0;
  for (const auto& regime : regimes) {
    const auto it = curves.find(regime);
    if (it == curves.end()) continue;
    const char* color = kPalette[k % (sizeof kPalette / sizeof *kPalette)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < it->second.fraction.size(); ++i) {
      o << (i ? " " : "") << num(X(it->second.fraction[i]), 2) << "," << num(Y(it->second.accuracy[i]), 2);
    }
    o << "\"/>\n";
    const double ly = T + 10 + 18 * k;
    o << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 36 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << L + pw + 42 << "\" y=\"" << ly + 4 << "\">" << regime << "</text>\n";
    ++k;
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace

std::vector<fs::path> render_reports(const RunManifest& m) {
  const fs::path out = m.run_dir / "report";
  fs::create_directories(out);
  std::vector<fs::path> written;
  std::vector<std::string> gaps;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_file_atomic(out / name, text);
    written.push_back(out / name);
  };

  for (const auto& c : m.cells)
    if (!c.ok) gaps.push_back("cell seed " + std::to_string(c.seed) + " / " + c.regime + " failed: " + c.failure);

  // (a) accuracy per regime
  {
    std::ostringstream o;
    o << "regime,accuracy_mean";
    for (auto s : m.plan.seeds) o << ",accuracy_seed" << s;
    o << ",pgd_accuracy_mean,model_sparsity\n";
    for (const auto& r : m.regimes) {
      Mean acc, pgd, sp;
      std::ostringstream per;
      for (auto s : m.plan.seeds) {
        const CellResult* c = m.cell(s, r);
        if (c && c->ok) {
          acc.add(c->accuracy);
          pgd.add(c->pgd_accuracy);
          sp.add(c->model_sparsity);
          per << "," << num(c->accuracy, 4);
        } else {
          per << ",nan";
        }
      }
      o << r << "," << num(acc.value(), 4) << per.str() << "," << num(pgd.value(), 4) << "," << num(sp.value(), 4)
        << "\n";
    }
    emit("accuracy.csv", o.str());
  }

  // (b) sparsity deltas: methods x non-natural regimes
  {
    std::ostringstream o;
    o << "method";
    for (const auto& r : m.regimes)
      if (r != "natural") o << "," << r;
    o << "\n";
    for (const auto& method : m.methods) {
      o << method;
      for (const auto& r : m.regimes) {
        if (r == "natural") continue;
        Mean d;
        for (auto s : m.plan.seeds) {
          const CellResult* c = m.cell(s, r);
          const MethodResult* mr = c && c->ok ? c->method(method) : nullptr;
          if (mr && mr->sparsity_delta) d.add(*mr->sparsity_delta);
        }
        o << "," << num(d.value(), 2);
      }
      o << "\n";
    }
    emit("sparsity.csv", o.str());
  }

  // (c) ROAD plots, mean curve over seeds
  std::map<std::string, std::map<std::string, double>> mean_auc;
  for (const auto& method : m.methods) {
    std::map<std::string, RoadCurve> curves;
    for (const auto& r : m.regimes) {
      RoadCurve mean;
      int n = 0;
      Mean auc;
      for (auto s : m.plan.seeds) {
        const CellResult* c = m.cell(s, r);
        const MethodResult* mr = c && c->ok ? c->method(method) : nullptr;
        if (!mr || mr->road.fraction.empty()) continue;
        if (n == 0) {
          mean = mr->road;
        } else if (mr->road.fraction.size() == mean.fraction.size()) {
          for (std::size_t i = 0; i < mean.accuracy.size(); ++i) mean.accuracy[i] += mr->road.accuracy[i];
        } else {
          continue;
        }
        auc.add(mr->road_auc);
        ++n;
      }
      if (n == 0) {
        gaps.push_back("no ROAD curve for " + r + " / " + method);
        continue;
      }
      for (double& a : mean.accuracy) a /= n;
      curves[r] = mean;
      mean_auc[method][r] = auc.value();
    }
    emit("road_" + method + ".svg", road_svg(method, m.regimes, curves));
  }

  // (d) saliency grids: one row per (sample, method), one column per regime
  for (const auto& method : m.methods) {
    const CellResult* first = m.plan.seeds.empty() ? nullptr : m.cell(m.plan.seeds.front(), "natural");
    const MethodResult* fm = first && first->ok ? first->method(method) : nullptr;
    const std::size_t samples = fm ? fm->saliency_files.size() : 0;
    for (std::size_t i = 0; i < samples; ++i) {
      std::vector<Image8> tiles;
      for (const auto& r : m.regimes) {
        const CellResult* c = m.cell(m.plan.seeds.front(), r);
        const MethodResult* mr = c && c->ok ? c->method(method) : nullptr;
        Image8 tile{32, 32, 1, std::vector<std::uint8_t>(32 * 32, 0)};
        if (mr && i < mr->saliency_files.size() && fs::exists(m.run_dir / mr->saliency_files[i])) {
          tile = read_pnm(m.run_dir / mr->saliency_files[i]);
        } else {
          gaps.push_back("saliency map " + r + "/" + method + "/" + std::to_string(i) + " missing");
        }
        tiles.push_back(std::move(tile));
      }
      const int pad = 2, th = tiles.front().height, tw = tiles.front().width;
      Image8 grid{static_cast<int>(tiles.size()) * (tw + pad) + pad, th + 2 * pad, 1, {}};
      grid.pixels.assign(static_cast<std::size_t>(grid.width) * grid.height, 255);
      for (std::size_t t = 0; t < tiles.size(); ++t) {
        if (tiles[t].width != tw || tiles[t].height != th || tiles[t].channels != 1) continue;
        for (int y = 0; y < th; ++y)
          for (int x = 0; x < tw; ++x)
            grid.pixels[static_cast<std::size_t>(y + pad) * grid.width + pad + static_cast<int>(t) * (tw + pad) + x] =
                tiles[t].pixels[static_cast<std::size_t>(y) * tw + x];
      }
      const std::string name = "saliency_" + method + "_" + std::to_string(i) + ".pgm";
      write_pnm(out / name, grid);
      written.push_back(out / name);
    }
  }

  for (const auto& f : m.csv_files)
    if (!fs::exists(m.run_dir / f)) gaps.push_back("artifact " + f + " missing");

  // (e) summary
  std::ostringstream md;
  md << "# Run " << m.plan.run_id << "\n\n";
  md << "Config hash `" << m.config_hash << "`, " << m.tool_version << ", " << m.cells.size() << " cells ("
     << m.failures() << " failed).\n\n";
  md << "## Accuracy\n\n| regime | accuracy | PGD accuracy |\n|---|---|---|\n";
  for (const auto& r : m.regimes) {
    Mean acc, pgd;
    for (auto s : m.plan.seeds)
      if (const CellResult* c = m.cell(s, r); c && c->ok) {
        acc.add(c->accuracy);
        pgd.add(c->pgd_accuracy);
      }
    md << "| " << r << " | " << num(acc.value(), 4) << " | " << num(pgd.value(), 4) << " |\n";
  }
  md << "\n## ROAD AUC (mean over seeds, lower is more faithful)\n\n| regime |";
  for (const auto& method : m.methods) md << " " << method << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < m.methods.size(); ++i) md << "---|";
  md << "\n";
  for (const auto& r : m.regimes) {
    md << "| " << r << " |";
    for (const auto& method : m.methods) {
      const auto it = mean_auc[method].find(r);
      md << " " << (it == mean_auc[method].end() ? "n/a" : num(it->second, 4)) << " |";
    }
    md << "\n";
  }

  md << "\n## Trend checks (per seed, against natural)\n\n";
  md << "| regime | AUC <= natural (vanilla) | grad norm < natural | accuracy within 3 points |\n|---|---|---|---|\n";
  for (const auto& r : m.regimes) {
    if (r == "natural") continue;
    int auc_ok = 0, norm_ok = 0, acc_ok = 0, n = 0;
    for (auto s : m.plan.seeds) {
      const CellResult* c = m.cell(s, r);
      const CellResult* nat = m.cell(s, "natural");
      if (!c || !c->ok || !nat || !nat->ok) continue;
      ++n;
      const MethodResult* a = c->method("vanilla");
      const MethodResult* b = nat->method("vanilla");
      if (a && b && a->road_auc <= b->road_auc) ++auc_ok;
      if (c->grad_norm.mean < nat->grad_norm.mean) ++norm_ok;
      if (c->accuracy >= nat->accuracy - 0.03) ++acc_ok;
    }
    md << "| " << r << " | " << auc_ok << "/" << n << " | " << norm_ok << "/" << n << " | " << acc_ok << "/" << n
       << " |\n";
  }
  md << "\n## Gradient norms (mean over seeds)\n\n| regime | mean norm | stddev |\n|---|---|---|\n";
  for (const auto& r : m.regimes) {
    Mean mu, sd;
    for (auto s : m.plan.seeds)
      if (const CellResult* c = m.cell(s, r); c && c->ok) {
        mu.add(c->grad_norm.mean);
        sd.add(c->grad_norm.stddev);
      }
    md << "| " << r << " | " << num(mu.value(), 5) << " | " << num(sd.value(), 5) << " |\n";
  }
  md << "\n## Gaps\n\n";
  if (gaps.empty()) md << "None.\n";
  for (const auto& g : gaps) md << "- " << g << "\n";
  emit("report.md", md.str());
  return written;
}

}  // namespace salprune
