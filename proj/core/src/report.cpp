#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "archive.hpp"
#include "oneshot/harness.hpp"

namespace oneshot {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json read_json_if(const fs::path& p) {
  std::ifstream f(p);
  if (!f) return json();
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw IoError("malformed " + p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& s) {
  detail::ensure_parent_dir(p);
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  f << s;
}

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

std::string bar_chart(const std::vector<MethodResult>& methods) {
  const double W = 640, H = 360, left = 60, bottom = 80, top = 30;
  const double plot_h = H - bottom - top;
  const double slot = (W - left - 20) / static_cast<double>(methods.size());
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">Global test accuracy by method</text>\n";
  for (int t = 0; t <= 10; t += 2) {
    const double y = top + plot_h * (1.0 - t / 10.0);
    s << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << W - 20 << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << t * 10 << "%</text>\n";
  }
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const double acc = std::clamp(methods[i].accuracy, 0.0, 1.0);
    const double x = left + slot * static_cast<double>(i) + slot * 0.15, w = slot * 0.7, h = plot_h * acc;
    s << "<rect x=\"" << fixed(x, 1) << "\" y=\"" << fixed(top + plot_h - h, 1) << "\" width=\"" << fixed(w, 1)
      << "\" height=\"" << fixed(h, 1) << "\" fill=\"" << (i == 0 ? "#2b6cb0" : "#90a4ae") << "\"/>\n";
    s << "<text x=\"" << fixed(x + w / 2, 1) << "\" y=\"" << fixed(top + plot_h - h - 4, 1)
      << "\" text-anchor=\"middle\">" << fixed(100 * acc, 1) << "</text>\n";
    s << "<text transform=\"translate(" << fixed(x + w / 2, 1) << "," << top + plot_h + 12
      << ") rotate(30)\">" << esc(methods[i].method) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string line_chart(const std::vector<PrivacyRow>& rows) {
  const double W = 480, H = 320, left = 60, right = 20, top = 30, bottom = 50;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : rows) {
    lo = std::min(lo, r.mean_psnr);
    hi = std::max(hi, r.mean_psnr);
  }
  lo = std::floor(lo - 1);
  hi = std::ceil(hi + 1);
  auto px = [&](double l) { return left + (W - left - right) * l; };
  auto py = [&](double v) { return top + (H - top - bottom) * (1.0 - (v - lo) / (hi - lo)); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">Mean PSNR vs lambda</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom << "\" stroke=\"#333\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom << "\" stroke=\"#333\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double l = t / 4.0;
    s << "<text x=\"" << px(l) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">" << fixed(l, 2) << "</text>\n";
    const double v = lo + (hi - lo) * t / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << fixed(py(v) + 4, 1) << "\" text-anchor=\"end\">" << fixed(v, 1) << "</text>\n";
  }
  s << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">lambda</text>\n";
  s << "<polyline fill=\"none\" stroke=\"#2b6cb0\" stroke-width=\"2\" points=\"";
  for (const auto& r : rows) s << fixed(px(r.param), 1) << "," << fixed(py(r.mean_psnr), 1) << " ";
  s << "\"/>\n";
  for (const auto& r : rows) {
    s << "<circle cx=\"" << fixed(px(r.param), 1) << "\" cy=\"" << fixed(py(r.mean_psnr), 1) << "\" r=\"3\" fill=\"#2b6cb0\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

double ExperimentReport::accuracy(const std::string& method) const {
  for (const auto& m : methods) {
    if (m.method == method) return m.accuracy;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

const PrivacyRow* ExperimentReport::privacy_row(const std::string& mode, double param) const {
  for (const auto& r : privacy) {
    if (r.mode == mode && std::abs(r.param - param) < 1e-12) return &r;
  }
  return nullptr;
}

ExperimentReport collect_report(const fs::path& out_dir) {
  ExperimentReport r;
  {
    std::ifstream f(out_dir / "config.conf");
    if (!f) throw IoError("no run found under " + out_dir.string());
    std::stringstream ss;
    ss << f.rdbuf();
    r.config_text = ss.str();
  }
  const auto cfg = parse_config(r.config_text);

  if (const auto acc = read_json_if(out_dir / "reports/accuracy.json"); !acc.is_null()) {
    for (const auto& m : acc.at("methods")) {
      r.methods.push_back({m.at("method").get<std::string>(), m.at("accuracy").get<double>(),
                           m.at("distillates").get<std::size_t>()});
    }
  }
  if (const auto pr = read_json_if(out_dir / "reports/privacy.json"); !pr.is_null()) {
    for (const auto& row : pr.at("rows")) {
      r.privacy.push_back({row.at("mode").get<std::string>(), row.at("param").get<double>(),
                           row.at("mean_psnr").get<double>(), row.at("mean_ssim").get<double>(),
                           row.at("samples").get<std::size_t>()});
    }
  }
  if (const auto t = read_json_if(out_dir / "reports/timing.json"); !t.is_null()) {
    for (const auto& s : stage_names()) {
      if (t.contains(s)) r.stage_seconds.emplace_back(s, t.at(s).get<double>());
    }
  }
  if (const auto sh = read_json_if(out_dir / "shards/summary.json"); !sh.is_null()) {
    r.mean_max_class_share = sh.at("mean_max_share").get<double>();
  }
  const auto models = read_json_if(out_dir / "models/summary.json");
  if (!models.is_null()) r.ae_reconstruction_error = models.at("ae_test_error").get<double>();

  const auto dist = read_json_if(out_dir / "distillates/fedsd2c/summary.json");
  std::map<int, json> dist_by_client;
  if (!dist.is_null()) {
    for (const auto& c : dist.at("clients")) dist_by_client[c.at("client_id").get<int>()] = c;
  }
  std::vector<std::uint64_t> payloads;
  for (int i = 0; i < static_cast<int>(cfg.partition.n_clients); ++i) {
    const std::string stem = "client_" + std::to_string(i);
    ClientDiagnostics d;
    d.client_id = i;
    if (const auto sj = read_json_if(out_dir / "shards" / (stem + ".json")); !sj.is_null()) {
      d.class_histogram = sj.at("class_histogram").get<std::vector<std::size_t>>();
      d.shard_size = sj.at("indices").size();
    }
    if (const auto mj = read_json_if(out_dir / "models" / (stem + ".json")); !mj.is_null() && !mj.value("empty", true)) {
      d.train_accuracy = mj.at("train_accuracy").get<double>();
      d.test_accuracy = mj.at("test_accuracy").get<double>();
    }
    if (const auto cj = read_json_if(out_dir / "coresets" / (stem + ".json")); !cj.is_null()) {
      d.covered_classes = cj.at("covered_classes").get<std::vector<int>>();
      d.coreset_size = cj.at("size").get<std::size_t>();
      if (cj.contains("perturb_warnings")) d.warnings = cj.at("perturb_warnings").get<std::vector<std::string>>();
    }
    if (auto it = dist_by_client.find(i); it != dist_by_client.end()) {
      d.payload_bytes = it->second.at("payload_bytes").get<std::uint64_t>();
      d.syn_initial_loss = it->second.at("initial_loss").get<double>();
      d.syn_final_loss = it->second.at("final_loss").get<double>();
      payloads.push_back(d.payload_bytes);
    }
    r.clients.push_back(std::move(d));
  }
  r.cost = comm_cost(payloads, models.is_null() ? 0 : models.at("model_payload_bytes").get<std::uint64_t>());
  return r;
}

std::vector<std::string> emit_report(const ExperimentReport& report, const fs::path& dir) {
  std::vector<std::string> notices;
  json methods = json::array(), privacy = json::array(), clients = json::array(), stages = json::object();
  for (const auto& m : report.methods) {
    methods.push_back({{"method", m.method}, {"accuracy", m.accuracy}, {"distillates", m.distillates}});
  }
  for (const auto& p : report.privacy) {
    privacy.push_back({{"mode", p.mode}, {"param", p.param}, {"mean_psnr", p.mean_psnr}, {"mean_ssim", p.mean_ssim},
                       {"samples", p.samples}});
  }
  for (const auto& c : report.clients) {
    clients.push_back({{"client_id", c.client_id},
                       {"shard_size", c.shard_size},
                       {"class_histogram", c.class_histogram},
                       {"train_accuracy", c.train_accuracy},
                       {"test_accuracy", c.test_accuracy},
                       {"covered_classes", c.covered_classes},
                       {"coreset_size", c.coreset_size},
                       {"syn_initial_loss", c.syn_initial_loss},
                       {"syn_final_loss", c.syn_final_loss},
                       {"payload_bytes", c.payload_bytes},
                       {"warnings", c.warnings}});
  }
  for (const auto& [s, t] : report.stage_seconds) stages[s] = t;
  const json j = {{"methods", methods},
                  {"privacy", privacy},
                  {"comm_cost",
                   {{"clients", report.cost.clients},
                    {"total_payload_bytes", report.cost.total_payload_bytes},
                    {"mean_payload_bytes", report.cost.mean_payload_bytes},
                    {"model_bytes", report.cost.model_bytes},
                    {"ratio", report.cost.ratio}}},
                  {"stage_seconds", stages},
                  {"clients", clients},
                  {"ae_reconstruction_error", report.ae_reconstruction_error},
                  {"mean_max_class_share", report.mean_max_class_share},
                  {"config", report.config_text}};
  write_text(dir / "report.json", j.dump(2) + "\n");

  std::string t = "method\taccuracy\tdistillates\n";
  for (const auto& m : report.methods) t += m.method + "\t" + fixed(100 * m.accuracy, 2) + "\t" + std::to_string(m.distillates) + "\n";
  write_text(dir / "methods.tsv", t);

  t = "mode\tparam\tmean_psnr\tmean_ssim\tsamples\n";
  for (const auto& p : report.privacy) {
    t += p.mode + "\t" + fixed(p.param, 3) + "\t" + fixed(p.mean_psnr, 3) + "\t" + fixed(p.mean_ssim, 3) + "\t" +
         std::to_string(p.samples) + "\n";
  }
  write_text(dir / "privacy.tsv", t);

  t = "client\tshard\ttrain_acc\ttest_acc\tcoreset\tclasses\tsyn_initial\tsyn_final\tpayload_bytes\n";
  for (const auto& c : report.clients) {
    std::string cls;
    for (std::size_t i = 0; i < c.covered_classes.size(); ++i) cls += (i ? "," : "") + std::to_string(c.covered_classes[i]);
    t += std::to_string(c.client_id) + "\t" + std::to_string(c.shard_size) + "\t" + fixed(100 * c.train_accuracy, 2) +
         "\t" + fixed(100 * c.test_accuracy, 2) + "\t" + std::to_string(c.coreset_size) + "\t" +
         (cls.empty() ? "-" : cls) + "\t" + fixed(c.syn_initial_loss, 5) + "\t" + fixed(c.syn_final_loss, 5) + "\t" +
         std::to_string(c.payload_bytes) + "\n";
  }
  write_text(dir / "clients.tsv", t);

  if (report.methods.empty()) {
    notices.push_back("no method accuracies; accuracy plot skipped");
  } else {
    write_text(dir / "accuracy.svg", bar_chart(report.methods));
  }
  std::vector<PrivacyRow> fourier;
  for (const auto& p : report.privacy) {
    if (p.mode == "fourier") fourier.push_back(p);
  }
  if (fourier.empty()) {
    notices.push_back("no Fourier privacy rows; PSNR-vs-lambda plot skipped");
  } else {
    write_text(dir / "psnr_lambda.svg", line_chart(fourier));
  }
  return notices;
}

}  // namespace oneshot
