#include "oneshot/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "archive.hpp"

namespace oneshot {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const char* const kMain = "fedsd2c";

struct Splits {
  std::vector<std::string> class_names;
  std::vector<LabeledImage> test, proxy, pool;
};

Splits make_splits(const ExperimentConfig& cfg) {
  Corpus corpus;
  if (cfg.corpus == "shapes") {
    corpus = generate_shapes_corpus({cfg.shapes_per_class, cfg.resolution, cfg.shapes_seed});
  } else {
    corpus = load_corpus(cfg.corpus, cfg.resolution);
  }
  Splits s;
  s.class_names = corpus.class_names;
  auto [rest, test] = stratified_holdout(corpus.images, cfg.test_fraction, derive_seed(cfg.seed, "test-split"));
  s.test = std::move(test);
  if (cfg.proxy_fraction > 0) {
    auto [pool, proxy] =
        stratified_holdout(rest, cfg.proxy_fraction / (1.0 - cfg.test_fraction), derive_seed(cfg.seed, "proxy-split"));
    s.pool = std::move(pool);
    s.proxy = std::move(proxy);
  } else {
    s.pool = std::move(rest);
  }
  return s;
}

ModelSpec model_spec(const ExperimentConfig& cfg, std::size_t num_classes) {
  ModelSpec m = cfg.model;
  m.num_classes = num_classes;
  return m;
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("missing artifact " + p.string() + " (run the earlier stages first)");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw IoError("malformed " + p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  detail::ensure_parent_dir(p);
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << j.dump(2) << "\n";
}

std::string client_file(int i, const std::string& ext) { return "client_" + std::to_string(i) + ext; }

std::string num_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string noise_method(const ExperimentConfig& cfg, double p) {
  return to_string(cfg.noise_cfg.distribution) + "_p" + num_tag(p);
}

std::string lambda_dir(double l) { return "lambda_" + num_tag(l); }

/// Methods whose global model comes from server training, in report order.
std::vector<std::string> trained_methods(const ExperimentConfig& cfg) {
  std::vector<std::string> m{kMain};
  if (cfg.random_selection) m.push_back("random_selection");
  if (cfg.no_ae) m.push_back("no_ae");
  if (cfg.noise) {
    for (double p : cfg.noise_p) m.push_back(noise_method(cfg, p));
  }
  if (cfg.fedmix) m.push_back("fedmix");
  return m;
}

bool uses_identity_ae(const std::string& method) { return method == "no_ae" || method == "fedmix"; }

template <typename Fn>
void for_each_client(const std::string& stage, std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::string> errors(n);
  auto run_one = [&](std::size_t i) {
    try {
      fn(i);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < n;) run_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw StageError(stage, static_cast<int>(i), errors[i]);
  }
}

class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg) : cfg_(std::move(cfg)), root_(cfg_.out_dir) {}

  void partition();
  void train_local();
  void coreset();
  void perturb();
  void synthesize();
  void serve_train();
  void evaluate_models();
  void privacy();

 private:
  const Splits& splits() {
    if (!splits_) splits_ = std::make_unique<Splits>(make_splits(cfg_));
    return *splits_;
  }
  std::size_t num_classes() { return splits().class_names.size(); }
  std::size_t n() const { return cfg_.partition.n_clients; }
  fs::path path(const std::string& rel) const { return root_ / rel; }
  void require(const std::string& rel, const std::string& producer) const {
    if (!fs::exists(path(rel))) throw IoError("missing " + path(rel).string() + "; run the '" + producer + "' stage first");
  }

  ClientShard load_shard(int i);
  bool active(int i) const { return fs::exists(path("models/" + client_file(i, ".model"))); }
  std::vector<int> active_clients() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(n()); ++i) {
      if (active(i)) out.push_back(i);
    }
    return out;
  }
  Autoencoder autoencoder_for(const std::string& method) {
    if (uses_identity_ae(method)) return Autoencoder({AeKind::kIdentityPassthrough, cfg_.resolution, 4, 32, 0});
    return load_autoencoder(path("models/autoencoder.ae"));
  }
  void write_distillates(const std::string& method, std::vector<DistillateSet> sets);

  ExperimentConfig cfg_;
  fs::path root_;
  std::unique_ptr<Splits> splits_;
};

ClientShard Pipeline::load_shard(int i) {
  const auto j = read_json(path("shards/" + client_file(i, ".json")));
  ClientShard s;
  s.client_id = i;
  s.corpus_indices = j.at("indices").get<std::vector<std::size_t>>();
  s.class_histogram = j.at("class_histogram").get<std::vector<std::size_t>>();
  const auto& pool = splits().pool;
  for (auto idx : s.corpus_indices) {
    if (idx >= pool.size()) throw IoError("shard index out of range; was the corpus changed?");
    s.images.push_back(pool[idx]);
  }
  return s;
}

void Pipeline::partition() {
  fs::create_directories(root_);
  {
    std::ofstream f(path("config.conf"));
    f << config_to_text(cfg_);
  }
  const auto& sp = splits();
  const auto shards = dirichlet_partition(sp.pool, cfg_.partition);
  for (const auto& s : shards) {
    auto hist = s.class_histogram;
    hist.resize(num_classes(), 0);
    write_json(path("shards/" + client_file(s.client_id, ".json")),
               {{"client_id", s.client_id}, {"indices", s.corpus_indices}, {"class_histogram", hist}});
  }
  const auto stats = partition_stats(shards);
  write_json(path("shards/summary.json"), {{"classes", sp.class_names},
                                           {"pool", sp.pool.size()},
                                           {"test", sp.test.size()},
                                           {"proxy", sp.proxy.size()},
                                           {"client_sizes", stats.client_sizes},
                                           {"max_share", stats.max_share},
                                           {"mean_max_share", stats.mean_max_share}});
}

void Pipeline::train_local() {
  const auto spec = model_spec(cfg_, num_classes());
  const auto& test = splits().test;
  for_each_client("train-local", n(), cfg_.threads, [&](std::size_t i) {
    const auto shard = load_shard(static_cast<int>(i));
    const auto model_path = path("models/" + client_file(static_cast<int>(i), ".model"));
    fs::remove(model_path);
    if (shard.empty()) {
      write_json(path("models/" + client_file(static_cast<int>(i), ".json")), {{"empty", true}});
      return;
    }
    TrainConfig tc = cfg_.local;
    tc.seed = derive_seed(cfg_.seed, "local", i);
    const auto trained = oneshot::train_local(shard, spec, tc);
    save_checkpoint(trained.model, model_path);
    write_json(path("models/" + client_file(static_cast<int>(i), ".json")),
               {{"empty", false},
                {"train_accuracy", trained.report.train_accuracy},
                {"test_accuracy", evaluate(trained.model, test)},
                {"single_class", trained.report.single_class},
                {"epoch_loss", trained.report.epoch_loss}});
  });

  // Server-side distiller, trained on the proxy split only.
  const auto& proxy = splits().proxy;
  std::vector<Image> sample;
  for (const auto& li : proxy) sample.push_back(li.image);
  AutoencoderSpec aes = cfg_.ae;
  Autoencoder ae(aes);
  if (aes.kind == AeKind::kTrainedSmall) {
    if (sample.empty()) throw StageError("train-local", -1, "trained_small autoencoder needs proxy_fraction > 0");
    ae = train_autoencoder(sample, aes, cfg_.ae_train);
  }
  std::vector<Image> held;
  for (std::size_t i = 0; i < std::min<std::size_t>(test.size(), 500); ++i) held.push_back(test[i].image);
  save_autoencoder(ae, path("models/autoencoder.ae"));
  write_json(path("models/summary.json"),
             {{"model_payload_bytes", checkpoint_payload_bytes(LocalModel(spec))},
              {"parameter_count", LocalModel(spec).parameter_count()},
              {"ae_kind", to_string(ae.kind())},
              {"ae_train_error", ae.train_error},
              {"ae_test_error", reconstruction_error(ae, held)},
              {"ae_latent_shape", ae.latent_shape()}});
}

void Pipeline::coreset() {
  require("models/summary.json", "train-local");
  for_each_client("coreset", n(), cfg_.threads, [&](std::size_t i) {
    const int id = static_cast<int>(i);
    if (!active(id)) return;
    const auto shard = load_shard(id);
    const auto model = load_checkpoint(path("models/" + client_file(id, ".model")));
    SelectionSpec sel = cfg_.selection;
    sel.seed = derive_seed(cfg_.seed, "coreset", i);
    const auto cs = select_coreset(shard, model, sel);
    save_coreset(cs, sel, path("coresets/" + client_file(id, ".coreset")));
    json info = {{"covered_classes", cs.covered_classes}, {"size", cs.size()}};
    if (cfg_.random_selection) {
      const auto rs = select_coreset_random(shard, sel, cfg_.resolution);
      save_coreset(rs, sel, path("coresets/" + client_file(id, ".random.coreset")));
      info["random_size"] = rs.size();
    }
    write_json(path("coresets/" + client_file(id, ".json")), info);
  });
}

void Pipeline::perturb() {
  require("models/summary.json", "train-local");
  for_each_client("perturb", n(), cfg_.threads, [&](std::size_t i) {
    const int id = static_cast<int>(i);
    if (!active(id)) return;
    auto info = read_json(path("coresets/" + client_file(id, ".json")));
    json warnings = json::array();
    for (const std::string variant : {"", ".random"}) {
      const auto cs_path = path("coresets/" + client_file(id, variant + ".coreset"));
      if (variant == ".random" && !cfg_.random_selection) continue;
      const auto cs = load_coreset(cs_path);
      std::vector<Image> images;
      if (!cs.empty()) {
        PerturbConfig pc = cfg_.perturb;
        pc.seed = derive_seed(cfg_.seed, "perturb", i);
        auto r = fourier_perturb(cs, pc);
        images = std::move(r.images);
        for (auto& w : r.warnings) warnings.push_back(w);
      }
      save_images(images, path("coresets/" + client_file(id, variant + ".perturbed")));
    }
    info["perturb_warnings"] = warnings;
    write_json(path("coresets/" + client_file(id, ".json")), info);
  });
}

void Pipeline::write_distillates(const std::string& method, std::vector<DistillateSet> sets) {
  json clients = json::array();
  for (const auto& s : sets) {
    const auto bytes = serialize_distillates(s, path("distillates/" + method + "/" + client_file(s.client_id, ".dist")));
    clients.push_back({{"client_id", s.client_id},
                       {"count", s.size()},
                       {"payload_bytes", bytes},
                       {"initial_loss", s.initial_loss()},
                       {"final_loss", s.final_loss()}});
  }
  write_json(path("distillates/" + method + "/summary.json"), {{"method", method}, {"clients", clients}});
}

void Pipeline::synthesize() {
  const auto ae = load_autoencoder(path("models/autoencoder.ae"));
  const Autoencoder identity({AeKind::kIdentityPassthrough, cfg_.resolution, 4, 32, 0});
  const auto clients = active_clients();
  const std::size_t nc = clients.size();
  std::map<std::string, std::vector<DistillateSet>> out;
  std::vector<std::string> methods = trained_methods(cfg_);
  for (double l : cfg_.lambda_grid) {
    if (l != cfg_.perturb.lambda) methods.push_back(lambda_dir(l));
  }
  for (const auto& m : methods) out[m].resize(nc);
  std::vector<json> fedmix_pairs(nc);
  const std::size_t ipc_no_ae =
      ae.kind() == AeKind::kIdentityPassthrough
          ? cfg_.selection.ipc
          : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(cfg_.selection.ipc) *
                                                                          static_cast<double>(ae.latent_size()) /
                                                                          static_cast<double>(identity.latent_size()))));

  for_each_client("synthesize", nc, cfg_.threads, [&](std::size_t k) {
    const int id = clients[k];
    const auto model = load_checkpoint(path("models/" + client_file(id, ".model")));
    const auto cs = load_coreset(path("coresets/" + client_file(id, ".coreset")));
    const auto perturbed = load_images(path("coresets/" + client_file(id, ".perturbed")));
    SynthesisConfig sc = cfg_.synthesis;
    sc.seed = derive_seed(cfg_.seed, "synthesis", static_cast<std::uint64_t>(id));
    out[kMain][k] = synthesize_distillates(cs, perturbed, ae, model, sc);

    if (cfg_.random_selection) {
      const auto rs = load_coreset(path("coresets/" + client_file(id, ".random.coreset")));
      const auto rp = load_images(path("coresets/" + client_file(id, ".random.perturbed")));
      out["random_selection"][k] = synthesize_distillates(rs, rp, ae, model, sc);
    }
    if (cfg_.no_ae) {
      // Equal-cost Core-Set: the best ipc' patches of each class, ipc' scaled by latent/pixel size.
      CoreSet sub;
      sub.client_id = cs.client_id;
      sub.ipc = ipc_no_ae;
      std::vector<Image> sub_perturbed;
      std::vector<std::size_t> index_map;
      std::map<int, std::size_t> taken;
      for (std::size_t j = 0; j < cs.size(); ++j) {
        auto& t = taken[cs.patches[j].label];
        if (t++ >= ipc_no_ae) continue;
        sub.patches.push_back(cs.patches[j]);
        sub.covered_classes.insert(cs.patches[j].label);
        sub_perturbed.push_back(perturbed[j]);
        index_map.push_back(j);
      }
      auto set = synthesize_distillates(sub, sub_perturbed, identity, model, sc);
      for (auto& d : set.items) d.origin.coreset_index = index_map[d.origin.coreset_index];
      out["no_ae"][k] = std::move(set);
    }
    if (cfg_.noise) {
      std::vector<Image> originals;
      for (const auto& p : cs.patches) originals.push_back(p.pixels);
      const auto clean = synthesize_distillates(cs, originals, ae, model, sc);
      for (double p : cfg_.noise_p) {
        NoiseConfig nc2 = cfg_.noise_cfg;
        nc2.p = p;
        nc2.seed = derive_seed(cfg_.seed, "noise", static_cast<std::uint64_t>(id));
        out[noise_method(cfg_, p)][k] = noise_perturb(clean, nc2);
      }
    }
    if (cfg_.fedmix) {
      DistillateSet set;
      json pairs = json::array();
      if (cs.size() >= 2) {
        const auto mixed = fedmix_synthesize(cs, model.num_classes(), derive_seed(cfg_.seed, "fedmix", id));
        set = images_as_distillates(mixed.images, mixed.labels, id, model.num_classes());
        for (const auto& [a, b] : mixed.pairs) pairs.push_back({a, b});
      } else {
        set.latent_shape = identity.latent_shape();
      }
      set.client_id = id;
      set.num_classes = model.num_classes();
      fedmix_pairs[k] = pairs;
      out["fedmix"][k] = std::move(set);
    }
    for (double l : cfg_.lambda_grid) {
      if (l == cfg_.perturb.lambda) continue;
      std::vector<Image> imgs;
      if (!cs.empty()) {
        PerturbConfig pc = cfg_.perturb;
        pc.lambda = l;
        pc.seed = derive_seed(cfg_.seed, "perturb", static_cast<std::uint64_t>(id));
        imgs = fourier_perturb(cs, pc).images;
      }
      out[lambda_dir(l)][k] = synthesize_distillates(cs, imgs, ae, model, sc);
    }
  });

  for (auto& [method, sets] : out) write_distillates(method, std::move(sets));
  if (cfg_.fedmix) {
    json pairs;
    for (std::size_t k = 0; k < nc; ++k) pairs[std::to_string(clients[k])] = fedmix_pairs[k];
    write_json(path("distillates/fedmix/pairs.json"), pairs);
  }
  write_json(path("distillates/summary.json"), {{"methods", methods}, {"ipc_no_ae", ipc_no_ae}});
}

void Pipeline::serve_train() {
  const auto spec = model_spec(cfg_, num_classes());
  const auto clients = active_clients();
  for (const auto& method : trained_methods(cfg_)) {
    std::vector<DistillateSet> sets;
    for (int id : clients) sets.push_back(load_distillates(path("distillates/" + method + "/" + client_file(id, ".dist"))));
    if (sets.empty()) throw StageError("serve-train", -1, "no active clients");
    const auto combined = aggregate(sets);
    if (combined.empty()) throw StageError("serve-train", -1, "method " + method + " produced no distillates");
    ServerTrainConfig sc = cfg_.server;
    sc.seed = derive_seed(cfg_.seed, "server");
    try {
      const auto result = train_server(combined, autoencoder_for(method), spec, sc, splits().test);
      save_checkpoint(result.model, path("global/" + method + ".model"));
      write_trace(result.trace, path("global/" + method + ".trace.tsv"));
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError("serve-train", -1, method + ": " + e.what());
    }
  }
  if (cfg_.fedavg) {
    std::vector<LocalModel> locals;
    for (int id : clients) locals.push_back(load_checkpoint(path("models/" + client_file(id, ".model"))));
    if (locals.empty()) throw StageError("serve-train", -1, "no local models to average");
    save_checkpoint(fedavg_oneshot(locals), path("global/fedavg.model"));
  }
}

void Pipeline::evaluate_models() {
  const auto& test = splits().test;
  json methods = json::array();
  std::vector<std::string> names = trained_methods(cfg_);
  if (cfg_.fedavg) names.push_back("fedavg");
  for (const auto& m : names) {
    const auto model = load_checkpoint(path("global/" + m + ".model"));
    std::size_t count = 0;
    if (m != "fedavg") {
      const auto summary = read_json(path("distillates/" + m + "/summary.json"));
      for (const auto& c : summary.at("clients")) {
        count += c.at("count").get<std::size_t>();
      }
    }
    methods.push_back({{"method", m}, {"accuracy", evaluate(model, test)}, {"distillates", count}});
  }
  if (cfg_.ensemble) {
    std::vector<LocalModel> locals;
    for (int id : active_clients()) locals.push_back(load_checkpoint(path("models/" + client_file(id, ".model"))));
    methods.push_back({{"method", "ensemble"}, {"accuracy", ensemble_eval(locals, test)}, {"distillates", 0}});
  }
  write_json(path("reports/accuracy.json"), {{"methods", methods}, {"test_size", test.size()}});
}

void Pipeline::privacy() {
  const auto ae = load_autoencoder(path("models/autoencoder.ae"));
  const auto clients = active_clients();
  std::map<int, CoreSet> coresets;
  for (int id : clients) coresets[id] = load_coreset(path("coresets/" + client_file(id, ".coreset")));

  auto pooled = [&](const std::string& dir, const std::string& mode, double param) {
    std::vector<Image> originals, decoded;
    for (int id : clients) {
      const auto set = load_distillates(path("distillates/" + dir + "/" + client_file(id, ".dist")));
      auto imgs = decode_distillates(set, ae);
      for (std::size_t j = 0; j < set.size(); ++j) {
        originals.push_back(coresets[id].patches.at(set.items[j].origin.coreset_index).pixels);
        decoded.push_back(std::move(imgs[j]));
      }
    }
    const auto r = privacy_report(originals, decoded, mode + " " + num_tag(param));
    return json{{"mode", mode}, {"param", param}, {"mean_psnr", r.mean_psnr}, {"mean_ssim", r.mean_ssim},
                {"samples", r.psnr.size()}};
  };

  json rows = json::array();
  std::vector<double> grid = cfg_.lambda_grid;
  if (std::find(grid.begin(), grid.end(), cfg_.perturb.lambda) == grid.end()) grid.push_back(cfg_.perturb.lambda);
  std::sort(grid.begin(), grid.end());
  for (double l : grid) rows.push_back(pooled(l == cfg_.perturb.lambda ? std::string(kMain) : lambda_dir(l), "fourier", l));
  if (cfg_.noise) {
    for (double p : cfg_.noise_p) rows.push_back(pooled(noise_method(cfg_, p), to_string(cfg_.noise_cfg.distribution), p));
  }
  if (cfg_.fedmix) {
    const auto pairs = read_json(path("distillates/fedmix/pairs.json"));
    std::vector<Image> originals, decoded;
    for (int id : clients) {
      const auto set = load_distillates(path("distillates/fedmix/" + client_file(id, ".dist")));
      const auto& pj = pairs.at(std::to_string(id));
      for (std::size_t j = 0; j < set.size(); ++j) {
        const Image mix = decode(Autoencoder({AeKind::kIdentityPassthrough, cfg_.resolution, 4, 32, 0}),
                                 set.items[j].latent);
        for (std::size_t side = 0; side < 2; ++side) {
          originals.push_back(coresets[id].patches.at(pj.at(j).at(side).get<std::size_t>()).pixels);
          decoded.push_back(mix);
        }
      }
    }
    const auto r = privacy_report(originals, decoded, "fedmix");
    rows.push_back({{"mode", "fedmix"}, {"param", 0.0}, {"mean_psnr", r.mean_psnr}, {"mean_ssim", r.mean_ssim},
                    {"samples", r.psnr.size()}});
  }
  write_json(path("reports/privacy.json"), {{"rows", rows}});
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"partition", "train-local", "coreset", "perturb", "synthesize",
                                                 "serve-train", "evaluate", "privacy-report", "report"};
  return names;
}

void run_stage(const ExperimentConfig& cfg_in, const std::string& stage) {
  ExperimentConfig cfg = cfg_in;
  cfg.resolve();
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Pipeline p(cfg);
  try {
    if (stage == "partition") {
      p.partition();
    } else if (stage == "train-local") {
      p.train_local();
    } else if (stage == "coreset") {
      p.coreset();
    } else if (stage == "perturb") {
      p.perturb();
    } else if (stage == "synthesize") {
      p.synthesize();
    } else if (stage == "serve-train") {
      p.serve_train();
    } else if (stage == "evaluate") {
      p.evaluate_models();
    } else if (stage == "privacy-report") {
      p.privacy();
    } else if (stage == "report") {
      emit_report(collect_report(cfg.out_dir), cfg.out_dir / "reports");
    } else {
      throw InvalidArgument("unknown stage '" + stage + "'");
    }
  } catch (const StageError&) {
    throw;
  } catch (const InvalidArgument& e) {
    if (stage_names().end() == std::find(stage_names().begin(), stage_names().end(), stage)) throw;
    throw StageError(stage, -1, e.what());
  } catch (const std::exception& e) {
    throw StageError(stage, -1, e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto timing_path = cfg.out_dir / "reports" / "timing.json";
  json timing = fs::exists(timing_path) ? read_json(timing_path) : json::object();
  timing[stage] = secs;
  write_json(timing_path, timing);
}

ExperimentReport run_pipeline(const ExperimentConfig& cfg) {
  for (const auto& s : stage_names()) run_stage(cfg, s);
  return collect_report(cfg.out_dir);
}

}  // namespace oneshot
