#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "oneshot/harness.hpp"

namespace oneshot {
namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw InvalidArgument("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

double to_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw InvalidArgument("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument("expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>) {
      s += fmt(xs[i]);
    } else {
      s += std::to_string(xs[i]);
    }
  }
  return s;
}

template <typename T, typename F>
std::vector<T> split_list(const std::string& v, F&& conv) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(conv(item));
  }
  return out;
}

struct Key {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

// Declared in file order; this is also the canonical order of config_to_text.
const std::vector<std::pair<std::string, Key>>& key_table() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<std::pair<std::string, Key>> table = {
      {"corpus", {[](const C& c) { return c.corpus; }, [](C& c, S v) { c.corpus = v; }}},
      {"corpus.shapes_per_class",
       {[](const C& c) { return std::to_string(c.shapes_per_class); }, [](C& c, S v) { c.shapes_per_class = to_size(v); }}},
      {"corpus.shapes_seed",
       {[](const C& c) { return std::to_string(c.shapes_seed); }, [](C& c, S v) { c.shapes_seed = to_u64(v); }}},
      {"resolution", {[](const C& c) { return std::to_string(c.resolution); }, [](C& c, S v) { c.resolution = to_size(v); }}},
      {"test_fraction", {[](const C& c) { return fmt(c.test_fraction); }, [](C& c, S v) { c.test_fraction = to_double(v); }}},
      {"proxy_fraction", {[](const C& c) { return fmt(c.proxy_fraction); }, [](C& c, S v) { c.proxy_fraction = to_double(v); }}},
      {"partition.n_clients",
       {[](const C& c) { return std::to_string(c.partition.n_clients); }, [](C& c, S v) { c.partition.n_clients = to_size(v); }}},
      {"partition.alpha", {[](const C& c) { return fmt(c.partition.alpha); }, [](C& c, S v) { c.partition.alpha = to_double(v); }}},
      {"model.arch", {[](const C& c) { return to_string(c.model.arch); }, [](C& c, S v) { c.model.arch = parse_arch(v); }}},
      {"model.widths",
       {[](const C& c) { return join(c.model.widths); }, [](C& c, S v) { c.model.widths = split_list<std::size_t>(v, to_size); }}},
      {"local.epochs", {[](const C& c) { return std::to_string(c.local.epochs); }, [](C& c, S v) { c.local.epochs = to_size(v); }}},
      {"local.batch_size",
       {[](const C& c) { return std::to_string(c.local.batch_size); }, [](C& c, S v) { c.local.batch_size = to_size(v); }}},
      {"local.lr", {[](const C& c) { return fmt(c.local.learning_rate); }, [](C& c, S v) { c.local.learning_rate = to_double(v); }}},
      {"local.momentum", {[](const C& c) { return fmt(c.local.momentum); }, [](C& c, S v) { c.local.momentum = to_double(v); }}},
      {"local.weight_decay",
       {[](const C& c) { return fmt(c.local.weight_decay); }, [](C& c, S v) { c.local.weight_decay = to_double(v); }}},
      {"coreset.ipc", {[](const C& c) { return std::to_string(c.selection.ipc); }, [](C& c, S v) { c.selection.ipc = to_size(v); }}},
      {"coreset.k",
       {[](const C& c) { return std::to_string(c.selection.patches_per_image); },
        [](C& c, S v) { c.selection.patches_per_image = to_size(v); }}},
      {"coreset.scale_min",
       {[](const C& c) { return fmt(c.selection.scale_range.first); }, [](C& c, S v) { c.selection.scale_range.first = to_double(v); }}},
      {"coreset.scale_max",
       {[](const C& c) { return fmt(c.selection.scale_range.second); },
        [](C& c, S v) { c.selection.scale_range.second = to_double(v); }}},
      {"coreset.keep_underfull",
       {[](const C& c) { return fmt(c.selection.keep_underfull); }, [](C& c, S v) { c.selection.keep_underfull = to_bool(v); }}},
      {"perturb.lambda", {[](const C& c) { return fmt(c.perturb.lambda); }, [](C& c, S v) { c.perturb.lambda = to_double(v); }}},
      {"perturb.ref_source",
       {[](const C& c) { return to_string(c.perturb.ref_source); }, [](C& c, S v) { c.perturb.ref_source = parse_ref_source(v); }}},
      {"perturb.same_class_ref",
       {[](const C& c) { return fmt(c.perturb.same_class_ref); }, [](C& c, S v) { c.perturb.same_class_ref = to_bool(v); }}},
      {"ae.kind", {[](const C& c) { return to_string(c.ae.kind); }, [](C& c, S v) { c.ae.kind = parse_ae_kind(v); }}},
      {"ae.latent_channels",
       {[](const C& c) { return std::to_string(c.ae.latent_channels); }, [](C& c, S v) { c.ae.latent_channels = to_size(v); }}},
      {"ae.hidden_channels",
       {[](const C& c) { return std::to_string(c.ae.hidden_channels); }, [](C& c, S v) { c.ae.hidden_channels = to_size(v); }}},
      {"ae.epochs", {[](const C& c) { return std::to_string(c.ae_train.epochs); }, [](C& c, S v) { c.ae_train.epochs = to_size(v); }}},
      {"ae.batch_size",
       {[](const C& c) { return std::to_string(c.ae_train.batch_size); }, [](C& c, S v) { c.ae_train.batch_size = to_size(v); }}},
      {"ae.lr", {[](const C& c) { return fmt(c.ae_train.learning_rate); }, [](C& c, S v) { c.ae_train.learning_rate = to_double(v); }}},
      {"syn.T", {[](const C& c) { return std::to_string(c.synthesis.T_syn); }, [](C& c, S v) { c.synthesis.T_syn = to_size(v); }}},
      {"syn.eta", {[](const C& c) { return fmt(c.synthesis.eta_syn); }, [](C& c, S v) { c.synthesis.eta_syn = to_double(v); }}},
      {"syn.batch_size",
       {[](const C& c) { return std::to_string(c.synthesis.batch_size); }, [](C& c, S v) { c.synthesis.batch_size = to_size(v); }}},
      {"syn.per_sample",
       {[](const C& c) { return fmt(c.synthesis.per_sample); }, [](C& c, S v) { c.synthesis.per_sample = to_bool(v); }}},
      {"syn.step_halving",
       {[](const C& c) { return fmt(c.synthesis.step_halving); }, [](C& c, S v) { c.synthesis.step_halving = to_bool(v); }}},
      {"server.epochs", {[](const C& c) { return std::to_string(c.server.epochs); }, [](C& c, S v) { c.server.epochs = to_size(v); }}},
      {"server.batch_size",
       {[](const C& c) { return std::to_string(c.server.batch_size); }, [](C& c, S v) { c.server.batch_size = to_size(v); }}},
      {"server.lr", {[](const C& c) { return fmt(c.server.learning_rate); }, [](C& c, S v) { c.server.learning_rate = to_double(v); }}},
      {"server.momentum", {[](const C& c) { return fmt(c.server.momentum); }, [](C& c, S v) { c.server.momentum = to_double(v); }}},
      {"server.weight_decay",
       {[](const C& c) { return fmt(c.server.weight_decay); }, [](C& c, S v) { c.server.weight_decay = to_double(v); }}},
      {"server.kl_direction",
       {[](const C& c) {
          return std::string(c.server.direction == nn::KlDirection::kTeacherToStudent ? "teacher_to_student"
                                                                                      : "student_to_teacher");
        },
        [](C& c, S v) {
          if (v == "teacher_to_student") {
            c.server.direction = nn::KlDirection::kTeacherToStudent;
          } else if (v == "student_to_teacher") {
            c.server.direction = nn::KlDirection::kStudentToTeacher;
          } else {
            throw InvalidArgument("expected teacher_to_student or student_to_teacher, got '" + v + "'");
          }
        }}},
      {"server.eval_every",
       {[](const C& c) { return std::to_string(c.server.eval_every); }, [](C& c, S v) { c.server.eval_every = to_size(v); }}},
      {"baseline.fedavg", {[](const C& c) { return fmt(c.fedavg); }, [](C& c, S v) { c.fedavg = to_bool(v); }}},
      {"baseline.ensemble", {[](const C& c) { return fmt(c.ensemble); }, [](C& c, S v) { c.ensemble = to_bool(v); }}},
      {"baseline.random_selection",
       {[](const C& c) { return fmt(c.random_selection); }, [](C& c, S v) { c.random_selection = to_bool(v); }}},
      {"baseline.no_ae", {[](const C& c) { return fmt(c.no_ae); }, [](C& c, S v) { c.no_ae = to_bool(v); }}},
      {"baseline.noise", {[](const C& c) { return fmt(c.noise); }, [](C& c, S v) { c.noise = to_bool(v); }}},
      {"baseline.fedmix", {[](const C& c) { return fmt(c.fedmix); }, [](C& c, S v) { c.fedmix = to_bool(v); }}},
      {"noise.p", {[](const C& c) { return join(c.noise_p); }, [](C& c, S v) { c.noise_p = split_list<double>(v, to_double); }}},
      {"noise.s", {[](const C& c) { return fmt(c.noise_cfg.s); }, [](C& c, S v) { c.noise_cfg.s = to_double(v); }}},
      {"noise.distribution",
       {[](const C& c) { return to_string(c.noise_cfg.distribution); },
        [](C& c, S v) { c.noise_cfg.distribution = parse_noise_dist(v); }}},
      {"privacy.lambda_grid",
       {[](const C& c) { return join(c.lambda_grid); }, [](C& c, S v) { c.lambda_grid = split_list<double>(v, to_double); }}},
      {"out", {[](const C& c) { return c.out_dir.string(); }, [](C& c, S v) { c.out_dir = v; }}},
      {"seed", {[](const C& c) { return std::to_string(c.seed); }, [](C& c, S v) { c.seed = to_u64(v); }}},
      {"threads", {[](const C& c) { return std::to_string(c.threads); }, [](C& c, S v) { c.threads = to_size(v); }}},
      {"deterministic", {[](const C& c) { return fmt(c.deterministic); }, [](C& c, S v) { c.deterministic = to_bool(v); }}},
  };
  return table;
}

}  // namespace

void ExperimentConfig::resolve() {
  model.resolution = resolution;
  ae.resolution = resolution;
  model.init_seed = derive_seed(seed, "model-init");
  ae.seed = derive_seed(seed, "ae");
  ae_train.seed = derive_seed(seed, "ae-train");
  partition.seed = derive_seed(seed, "partition");
  if (deterministic) threads = 1;
}

void ExperimentConfig::validate() const {
  if (!(test_fraction > 0 && test_fraction < 1)) throw InvalidArgument("test_fraction must be in (0, 1)");
  if (!(proxy_fraction >= 0 && proxy_fraction < 1 - test_fraction)) {
    throw InvalidArgument("proxy_fraction must be in [0, 1 - test_fraction)");
  }
  if (corpus == "shapes" && shapes_per_class == 0) throw InvalidArgument("corpus.shapes_per_class must be positive");
  if (threads == 0) throw InvalidArgument("threads must be >= 1");
  partition.validate();
  model.validate();
  local.validate();
  selection.validate();
  perturb.validate();
  ae.validate();
  synthesis.validate();
  server.validate();
  for (double p : noise_p) {
    NoiseConfig n = noise_cfg;
    n.p = p;
    n.validate();
  }
  for (double l : lambda_grid) {
    if (!(l >= 0 && l <= 1)) throw InvalidArgument("privacy.lambda_grid entries must be in [0, 1]");
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : key_table()) out.push_back(k);
  return out;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [k, entry] : key_table()) {
    if (k == key) {
      entry.set(cfg, value);
      return;
    }
  }
  throw InvalidArgument("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw InvalidArgument(where + "expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw InvalidArgument(where + "duplicate key '" + key + "'");
    try {
      set_config_value(cfg, key, value);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(where + key + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, entry] : key_table()) out += k + " = " + entry.get(cfg) + "\n";
  return out;
}

}  // namespace oneshot
