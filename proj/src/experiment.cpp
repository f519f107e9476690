#include "atzsl/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "atzsl/errors.hpp"
#include "atzsl/io.hpp"
#include "atzsl/random.hpp"

namespace atzsl {

namespace fs = std::filesystem;

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::kImages: return "images";
    case RunMode::kAttributes: return "attributes";
    case RunMode::kBaseline: return "baseline";
    case RunMode::kBaseline2: return "baseline2";
    case RunMode::kBaseline3: return "baseline3";
  }
  return "?";
}

RunMode parse_run_mode(const std::string& s) {
  for (RunMode m : {RunMode::kImages, RunMode::kAttributes, RunMode::kBaseline, RunMode::kBaseline2,
                    RunMode::kBaseline3}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("mode", "unknown mode '" + s + "' (images|attributes|baseline|baseline2|baseline3)");
}

std::string ExperimentConfig::dataset_dir() const {
  const fs::path dir(dataset.dir);
  return dir.is_absolute() ? dir.string() : (fs::path(output_dir) / dir).string();
}

namespace {

// Flattened "section.key" -> value map; every key must be consumed exactly once.
class KeyTable {
 public:
  explicit KeyTable(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  std::optional<std::string> take(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    std::string v = it->second;
    values_.erase(it);
    return v;
  }

  void expect_consumed() const {
    if (!values_.empty()) throw ConfigError(values_.begin()->first, "unknown key");
  }

 private:
  std::map<std::string, std::string> values_;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "no" || v == "0" || v == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

template <typename F>
auto parse_enum(const std::string& key, const std::string& v, F&& parse) {
  try {
    return parse(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, e.what());
  }
}

template <typename T, typename F>
void read(KeyTable& t, const std::string& key, T& field, F&& convert) {
  if (auto v = t.take(key)) field = convert(key, *v);
}

void read_double(KeyTable& t, const std::string& key, double& field) { read(t, key, field, to_double); }
void read_size(KeyTable& t, const std::string& key, std::size_t& field) {
  read(t, key, field, [](const std::string& k, const std::string& v) { return static_cast<std::size_t>(to_u64(k, v)); });
}

std::map<std::string, std::string> flatten(const std::string& ini_text) {
  namespace pt = boost::property_tree;
  // The INI reader only knows ';' comments.
  std::string text;
  std::istringstream lines(ini_text);
  for (std::string line; std::getline(lines, line);) {
    const std::string t = trim(line);
    if (!t.empty() && t.front() == '#') continue;
    text += line + "\n";
  }
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("", "line " + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, std::string> out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section, "key outside a section");
    for (const auto& [key, value] : body) out[section + "." + key] = trim(value.data());
  }
  return out;
}

// Validation errors of embedded specs carry their own key names; map them onto
// the train section.
[[noreturn]] void rethrow_in_train(const ConfigError& e) {
  const std::string& k = e.key();
  std::string key = k;
  if (k.rfind("attack.", 0) == 0) key = "train.attack_" + k.substr(7);
  if (k == "attack.rho") key = "train.rho_hi";
  if (k == "attack.target") key = "train.mode";
  if (k.rfind("rho_dist", 0) == 0) key = k == "rho_dist" ? "train.rho_lo" : "train.rho_" + k.substr(9);
  const std::string what = e.what();
  const std::string msg = what.rfind(k + ": ", 0) == 0 ? what.substr(k.size() + 2) : what;
  throw ConfigError(key, msg);
}

std::optional<Bounds> read_bounds(KeyTable& t, const std::string& lo_key, const std::string& hi_key) {
  const auto lo = t.take(lo_key);
  const auto hi = t.take(hi_key);
  if (!lo && !hi) return std::nullopt;
  if (!lo || !hi) throw ConfigError(lo ? hi_key : lo_key, "clamp bounds need both lo and hi");
  const Bounds b{to_double(lo_key, *lo), to_double(hi_key, *hi)};
  if (!(b.first <= b.second)) throw ConfigError(lo_key, "clamp lo must not exceed hi");
  return b;
}

}  // namespace

EvalScenario parse_scenario(const std::string& label, std::size_t default_steps) {
  const std::vector<std::string> parts = split(label, '/');
  auto bad = [&](const std::string& why) { return ConfigError("eval.scenarios", "'" + label + "': " + why); };
  if (parts.size() < 2) throw bad("expected <setting>/clean or <setting>/<space>/<attack>/rho=<r>[/N=<n>]");
  EvalScenario s;
  s.setting = parse_enum("eval.scenarios", parts[0], parse_setting);
  if (parts[1] == "clean") {
    if (parts.size() != 2) throw bad("clean scenarios take no attack fields");
    return s;
  }
  if (parts.size() < 4 || parts.size() > 5) throw bad("expected <setting>/<space>/<attack>/rho=<r>[/N=<n>]");
  s.space = parse_enum("eval.scenarios", parts[1], parse_space);
  AttackSpec a;
  std::string family = parts[2];
  std::transform(family.begin(), family.end(), family.begin(), [](unsigned char c) { return std::tolower(c); });
  a.family = parse_enum("eval.scenarios", family, parse_attack_family);
  if (parts[3].rfind("rho=", 0) != 0) throw bad("missing rho=<magnitude>");
  a.magnitude = to_double("eval.scenarios", parts[3].substr(4));
  a.steps = a.family == AttackFamily::kFgsm ? 1 : default_steps;
  if (parts.size() == 5) {
    if (parts[4].rfind("N=", 0) != 0) throw bad("expected N=<steps>");
    a.steps = static_cast<std::size_t>(to_u64("eval.scenarios", parts[4].substr(2)));
    if (a.family == AttackFamily::kFgsm && a.steps != 1) throw bad("FGSM is a single step");
  }
  a.norm = s.space == Space::kVisual ? Norm::kLinf : Norm::kL2;
  a.target = s.space == Space::kVisual ? AttackTarget::kInput : AttackTarget::kPrototype;
  s.attack = a;
  s.validate();
  return s;
}

ExperimentConfig parse_experiment(const std::string& ini_text, const Overrides& overrides) {
  std::map<std::string, std::string> flat = flatten(ini_text);
  for (const auto& [k, v] : overrides) {
    if (k.find('.') == std::string::npos) throw ConfigError(k, "override keys take the form section.key");
    flat[k] = trim(v);
  }
  KeyTable t(std::move(flat));
  ExperimentConfig c;

  read(t, "experiment.seed", c.seed, to_u64);
  if (auto v = t.take("experiment.output_dir")) c.output_dir = *v;
  if (c.output_dir.empty()) throw ConfigError("experiment.output_dir", "must not be empty");

  DatasetSection& d = c.dataset;
  if (auto v = t.take("dataset.source")) d.source = *v;
  if (d.source != "synthetic" && d.source != "files") {
    throw ConfigError("dataset.source", "expected synthetic or files, got '" + d.source + "'");
  }
  if (auto v = t.take("dataset.dir")) d.dir = *v;
  read_size(t, "dataset.num_seen", d.synth.num_seen);
  read_size(t, "dataset.num_unseen", d.synth.num_unseen);
  read_size(t, "dataset.attr_dim", d.synth.attr_dim);
  read_size(t, "dataset.feature_dim", d.synth.feature_dim);
  read_size(t, "dataset.seen_samples", d.synth.seen_samples);
  read_double(t, "dataset.seen_test_fraction", d.synth.seen_test_fraction);
  read_size(t, "dataset.unseen_samples", d.synth.unseen_samples);
  read_double(t, "dataset.proto_lo", d.synth.proto_lo);
  read_double(t, "dataset.proto_hi", d.synth.proto_hi);
  read_double(t, "dataset.noise", d.synth.noise);
  read_double(t, "dataset.map_scale", d.synth.map_scale);
  if (auto v = t.take("dataset.map_seed")) d.synth.map_seed = to_u64("dataset.map_seed", *v);
  read(t, "dataset.normalize_prototypes", d.normalize_prototypes, to_bool);
  d.synth.validate();

  NetConfig& n = c.net;
  if (auto v = t.take("net.feature_hidden")) {
    n.feature_hidden.clear();
    if (*v != "none") {
      for (const std::string& w : split(*v, ',')) n.feature_hidden.push_back(to_u64("net.feature_hidden", w));
    }
  }
  read_size(t, "net.attr_hidden", n.attr_hidden);
  read_size(t, "net.embed_dim", n.embed_dim);
  read_size(t, "net.relation_hidden", n.relation_hidden);
  read_double(t, "net.temperature", n.temperature);
  if (auto v = t.take("net.combine")) n.combine = parse_enum("net.combine", *v, parse_combine);
  {
    NetConfig probe = n;
    probe.input_dim = probe.prototype_dim = 1;
    probe.validate();
  }

  TrainMode mode = TrainMode::kImages;
  if (auto v = t.take("train.mode")) mode = parse_enum("train.mode", *v, parse_train_mode);
  TrainConfig& tr = c.train;
  tr = mode == TrainMode::kImages ? TrainConfig::image_defaults() : TrainConfig::attribute_defaults();
  tr.temperature = n.temperature;
  read_double(t, "train.alpha", tr.alpha);
  read_size(t, "train.epochs", tr.epochs);
  read_size(t, "train.batch_size", tr.batch_size);
  read_double(t, "train.lr", tr.base_lr);
  read_double(t, "train.anneal_factor", tr.anneal_factor);
  read_size(t, "train.anneal_period", tr.anneal_period);
  read_double(t, "train.weight_decay", tr.weight_decay);
  if (auto v = t.take("train.decay_scope")) tr.decay_scope = parse_enum("train.decay_scope", *v, parse_decay_scope);
  if (auto v = t.take("train.attack_family")) {
    tr.attack.family = parse_enum("train.attack_family", *v, parse_attack_family);
  }
  read_size(t, "train.attack_steps", tr.attack.steps);
  if (auto v = t.take("train.attack_step_size")) {
    tr.attack.step_size = *v == "auto" ? std::nullopt : std::optional(to_double("train.attack_step_size", *v));
  }
  if (auto v = t.take("train.prototype_mode")) {
    tr.attack.prototype_mode = parse_enum("train.prototype_mode", *v, parse_prototype_mode);
  }
  read(t, "train.keep_best", tr.attack.keep_best, to_bool);
  tr.attack.clamp = read_bounds(t, "train.clamp_lo", "train.clamp_hi");
  read_double(t, "train.rho_lo", tr.rho_dist.lo);
  read_double(t, "train.rho_hi", tr.rho_dist.hi);
  read_double(t, "train.rho_mean", tr.rho_dist.mean);
  read_double(t, "train.rho_stddev", tr.rho_dist.stddev);
  if (auto v = t.take("train.max_iterations")) {
    tr.max_iterations = *v == "none" ? std::nullopt : std::optional(to_u64("train.max_iterations", *v));
  }
  if (tr.attack.family == AttackFamily::kFgsm) tr.attack.steps = 1;
  try {
    tr.validate();
  } catch (const ConfigError& e) {
    if (e.key().rfind("train.", 0) == 0) throw;
    rethrow_in_train(e);
  }

  std::size_t default_steps = 9;
  read_size(t, "eval.steps", default_steps);
  if (default_steps == 0) throw ConfigError("eval.steps", "must be >= 1");
  SemanticScope scope = SemanticScope::kDefault;
  if (auto v = t.take("eval.semantic_scope")) scope = parse_enum("eval.semantic_scope", *v, parse_semantic_scope);
  PrototypeMode pmode = PrototypeMode::kJoint;
  if (auto v = t.take("eval.prototype_mode")) pmode = parse_enum("eval.prototype_mode", *v, parse_prototype_mode);
  bool keep_best = true;
  read(t, "eval.keep_best", keep_best, to_bool);
  c.eval.clamp = read_bounds(t, "eval.clamp_lo", "eval.clamp_hi");
  const std::string labels = t.take("eval.scenarios").value_or("standard/clean, generalized/clean");
  for (const std::string& label : split(labels, ',')) {
    EvalScenario s = parse_scenario(label, default_steps);
    s.scope = scope;
    if (s.attack) {
      s.attack->prototype_mode = pmode;
      s.attack->keep_best = keep_best;
      if (s.space == Space::kVisual) s.attack->clamp = c.eval.clamp;
    }
    s.validate();
    c.eval.scenarios.push_back(s);
  }
  if (c.eval.scenarios.empty()) throw ConfigError("eval.scenarios", "at least one scenario is required");
  std::set<std::string> seen;
  for (const auto& s : c.eval.scenarios) {
    if (!seen.insert(s.label()).second) throw ConfigError("eval.scenarios", "duplicate scenario " + s.label());
  }

  t.expect_consumed();
  return c;
}

ExperimentConfig load_experiment(const std::string& path, const Overrides& overrides) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const DataError&) {
    throw ConfigError("", "cannot read config file " + path);
  }
  Overrides all;
  if (const char* env = std::getenv("ATZSL_OUTPUT_DIR"); env != nullptr && *env != '\0') {
    all.emplace_back("experiment.output_dir", env);
  }
  all.insert(all.end(), overrides.begin(), overrides.end());
  return parse_experiment(text, all);
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  auto num = [](double v) { return io::format_double(v); };
  os << "[experiment]\nseed = " << c.seed << "\noutput_dir = " << c.output_dir << "\n\n";
  const SynthSpec& s = c.dataset.synth;
  os << "[dataset]\nsource = " << c.dataset.source << "\ndir = " << c.dataset.dir << "\nnum_seen = " << s.num_seen
     << "\nnum_unseen = " << s.num_unseen << "\nattr_dim = " << s.attr_dim << "\nfeature_dim = " << s.feature_dim
     << "\nseen_samples = " << s.seen_samples << "\nseen_test_fraction = " << num(s.seen_test_fraction)
     << "\nunseen_samples = " << s.unseen_samples << "\nproto_lo = " << num(s.proto_lo)
     << "\nproto_hi = " << num(s.proto_hi) << "\nnoise = " << num(s.noise) << "\nmap_scale = " << num(s.map_scale)
     << "\n";
  if (s.map_seed) os << "map_seed = " << *s.map_seed << "\n";
  os << "normalize_prototypes = " << (c.dataset.normalize_prototypes ? "true" : "false") << "\n\n";

  const NetConfig& n = c.net;
  os << "[net]\nfeature_hidden = ";
  if (n.feature_hidden.empty()) os << "none";
  for (std::size_t i = 0; i < n.feature_hidden.size(); ++i) os << (i ? "," : "") << n.feature_hidden[i];
  os << "\nattr_hidden = " << n.attr_hidden << "\nembed_dim = " << n.embed_dim
     << "\nrelation_hidden = " << n.relation_hidden << "\ntemperature = " << num(n.temperature)
     << "\ncombine = " << to_string(n.combine) << "\n\n";

  const TrainConfig& t = c.train;
  os << "[train]\nmode = " << to_string(t.mode) << "\nalpha = " << num(t.alpha) << "\nepochs = " << t.epochs
     << "\nbatch_size = " << t.batch_size << "\nlr = " << num(t.base_lr) << "\nanneal_factor = "
     << num(t.anneal_factor) << "\nanneal_period = " << t.anneal_period << "\nweight_decay = " << num(t.weight_decay)
     << "\ndecay_scope = " << to_string(t.decay_scope) << "\nattack_family = " << to_string(t.attack.family)
     << "\nattack_steps = " << t.attack.steps
     << "\nattack_step_size = " << (t.attack.step_size ? num(*t.attack.step_size) : "auto")
     << "\nprototype_mode = " << to_string(t.attack.prototype_mode)
     << "\nkeep_best = " << (t.attack.keep_best ? "true" : "false") << "\n";
  if (t.attack.clamp) {
    os << "clamp_lo = " << num(t.attack.clamp->first) << "\nclamp_hi = " << num(t.attack.clamp->second) << "\n";
  }
  os << "rho_lo = " << num(t.rho_dist.lo) << "\nrho_hi = " << num(t.rho_dist.hi) << "\nrho_mean = "
     << num(t.rho_dist.mean) << "\nrho_stddev = " << num(t.rho_dist.stddev)
     << "\nmax_iterations = " << (t.max_iterations ? std::to_string(*t.max_iterations) : "none") << "\n\n";

  os << "[eval]\nscenarios = ";
  for (std::size_t i = 0; i < c.eval.scenarios.size(); ++i) os << (i ? ", " : "") << c.eval.scenarios[i].label();
  os << "\n";
  if (!c.eval.scenarios.empty()) {
    const EvalScenario& first = c.eval.scenarios.front();
    os << "semantic_scope = " << to_string(first.scope) << "\n";
    for (const auto& s : c.eval.scenarios) {
      if (!s.attack) continue;
      os << "prototype_mode = " << to_string(s.attack->prototype_mode)
         << "\nkeep_best = " << (s.attack->keep_best ? "true" : "false") << "\n";
      break;
    }
  }
  if (c.eval.clamp) os << "clamp_lo = " << num(c.eval.clamp->first) << "\nclamp_hi = " << num(c.eval.clamp->second) << "\n";
  return os.str();
}

double median_prototype_separation(const PrototypeSet& protos) {
  const std::size_t n = protos.size();
  if (n < 2) throw DataError("median_prototype_separation: need at least two prototypes");
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < protos.dim(); ++k) {
        const double diff = protos.matrix.at(i, k) - protos.matrix.at(j, k);
        s += diff * diff;
      }
      nearest[i] = std::min(nearest[i], std::sqrt(s));
      nearest[j] = std::min(nearest[j], std::sqrt(s));
    }
  }
  std::sort(nearest.begin(), nearest.end());
  const std::size_t m = n / 2;
  return n % 2 == 1 ? nearest[m] : 0.5 * (nearest[m - 1] + nearest[m]);
}

namespace {

ZslDataset load_experiment_dataset(const ExperimentConfig& c) {
  const fs::path dir(c.dataset_dir());
  ZslDataset ds = load_dataset((dir / "features.bin").string(), (dir / "prototypes.csv").string(),
                               (dir / "splits.csv").string());
  return c.dataset.normalize_prototypes ? with_scaled_prototypes(std::move(ds)) : ds;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

GenerateResult cmd_generate(const ExperimentConfig& config) {
  if (config.dataset.source != "synthetic") {
    throw ConfigError("dataset.source", "generate needs source = synthetic");
  }
  const ZslDataset ds = generate_synthetic(config.dataset.synth, derive_seed(config.seed, "dataset"));
  GenerateResult r;
  r.dir = config.dataset_dir();
  ensure_dir(r.dir);
  save_dataset(ds, r.dir);
  const PrototypeSet protos = config.dataset.normalize_prototypes ? minmax_scaled(ds.prototypes) : ds.prototypes;
  std::ostringstream os;
  os << "N_s=" << ds.seen_classes.size() << " N_u=" << ds.unseen_classes.size() << " N_tr=" << ds.train_rows().size()
     << " N_test=" << ds.test_rows(ds.seen_classes).size() + ds.test_rows(ds.unseen_classes).size()
     << " d_x=" << ds.feature_dim() << " q=" << ds.prototypes.dim()
     << " median_prototype_separation=" << io::format_double(median_prototype_separation(protos));
  r.summary = os.str();
  return r;
}

TrainOutput cmd_train(const ExperimentConfig& config, RunMode mode) {
  ExperimentConfig c = config;
  if (mode == RunMode::kImages && c.train.mode != TrainMode::kImages) {
    throw ConfigError("train.mode", "--mode images needs train.mode = images");
  }
  if (mode == RunMode::kAttributes && c.train.mode != TrainMode::kAttributes) {
    throw ConfigError("train.mode", "--mode attributes needs train.mode = attributes");
  }
  if (mode == RunMode::kBaseline || mode == RunMode::kBaseline3) c.train.alpha = 1.0;
  if (mode == RunMode::kBaseline2) c.train.alpha = 0.0;
  if (mode == RunMode::kBaseline3) c.net.combine = Combine::kProduct;

  const ZslDataset ds = load_experiment_dataset(c);
  NetConfig net = c.net;
  net.input_dim = ds.feature_dim();
  net.prototype_dim = ds.prototypes.dim();
  TrainConfig tc = c.train;
  tc.seed = derive_seed(c.seed, "train");
  TrainResult result = train(ds, net, tc);

  const fs::path dir = fs::path(c.output_dir) / to_string(mode);
  ensure_dir(dir);
  TrainOutput out;
  out.checkpoint = (dir / "checkpoint.atzsl").string();
  out.log = (dir / "train_log.jsonl").string();
  save_checkpoint(result.net, out.checkpoint);
  io::write_file_atomic(out.log, result.log.to_jsonl());
  io::write_file_atomic((dir / "config.ini").string(), to_ini(c));
  out.train_log = std::move(result.log);
  return out;
}

EvalOutput cmd_eval(const ExperimentConfig& config, const std::string& checkpoint,
                    const std::optional<std::string>& out_dir) {
  if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint);
  const RelationNet net = load_checkpoint(checkpoint);
  const ZslDataset ds = load_experiment_dataset(config);
  if (net.config.input_dim != ds.feature_dim() || net.config.prototype_dim != ds.prototypes.dim()) {
    throw ConfigError("net", "checkpoint " + checkpoint + " expects d_x=" + std::to_string(net.config.input_dim) +
                                 " q=" + std::to_string(net.config.prototype_dim) + ", dataset has d_x=" +
                                 std::to_string(ds.feature_dim()) + " q=" + std::to_string(ds.prototypes.dim()));
  }

  EvalOutput out;
  out.dir = out_dir ? *out_dir : (fs::path(checkpoint).parent_path() / "eval").string();
  const std::uint64_t seed = derive_seed(config.seed, "eval");
  for (const EvalScenario& s : config.eval.scenarios) out.fragments.push_back(evaluate(net, ds, s, seed));

  std::vector<TradeOffReport> reports;
  std::optional<TradeOffReport> standard, generalized;
  for (Setting setting : {Setting::kStandard, Setting::kGeneralized}) {
    const MetricsFragment* clean = nullptr;
    std::vector<MetricsFragment> attacked;
    for (const auto& f : out.fragments) {
      if (f.setting != setting) continue;
      if (f.attack) attacked.push_back(f);
      else clean = &f;
    }
    if (!clean) continue;
    TradeOffReport r = trade_off_report(*clean, attacked);
    (setting == Setting::kStandard ? standard : generalized) = r;
    reports.push_back(std::move(r));
  }

  ensure_dir(out.dir);
  const fs::path dir(out.dir);
  io::write_file_atomic((dir / "metrics.csv").string(), metrics_csv(out.fragments));
  TradeOffReport empty;
  io::write_file_atomic((dir / "trade_off.csv").string(), (standard ? *standard : empty).to_csv());
  if (generalized) io::write_file_atomic((dir / "trade_off_hm.csv").string(), generalized->to_csv());
  out.text = metrics_text(out.fragments, reports);
  io::write_file_atomic((dir / "report.txt").string(), out.text);

  // One chart per (setting, space) family: the clean headline next to each attack.
  std::map<std::pair<Setting, Space>, std::vector<std::pair<std::string, double>>> families;
  for (const auto& f : out.fragments) {
    if (!f.attack) continue;
    auto& bars = families[{f.setting, f.space}];
    if (bars.empty()) {
      for (const auto& g : out.fragments) {
        if (!g.attack && g.setting == f.setting) bars.emplace_back("clean", g.headline());
      }
    }
    std::string name = f.attack->display_name() + " rho=" + io::format_double(f.attack->magnitude);
    bars.emplace_back(std::move(name), f.headline());
  }
  for (const auto& [key, bars] : families) {
    const std::string stem = to_string(key.first) + "_" + to_string(key.second);
    const std::string metric = key.first == Setting::kStandard ? "T1" : "H";
    io::write_file_atomic((dir / (stem + ".svg")).string(),
                          bar_chart_svg(metric + " under " + to_string(key.second) + "-space attacks (" +
                                            to_string(key.first) + ")",
                                        bars));
  }
  return out;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

MetricsTable read_metrics_dir(const std::string& dir) {
  const fs::path root(dir);
  const std::string metrics_path = (root / "metrics.csv").string();
  std::istringstream in(io::read_file(metrics_path));
  std::string line;
  if (!std::getline(in, line) || line != "# atzsl-metrics v1") {
    throw DataError(metrics_path + ":1: expected '# atzsl-metrics v1'");
  }
  MetricsTable t;
  if (!std::getline(in, line)) throw DataError(metrics_path + ":2: missing header");
  t.header = split_csv_line(line);
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size()) {
      throw DataError(metrics_path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(t.header.size()) + " fields, got " + std::to_string(cells.size()));
    }
    t.scenarios.push_back(cells[0]);
    t.rows.push_back(std::move(cells));
  }

  return t;
}

ReportOutput cmd_report(const std::vector<std::string>& dirs, const std::vector<std::string>& labels,
                        const std::optional<std::string>& out_dir) {
  if (dirs.empty()) throw ConfigError("report", "at least one metrics directory is required");
  if (!labels.empty() && labels.size() != dirs.size()) {
    throw ConfigError("report.labels", "expected one label per directory");
  }
  std::vector<MetricsTable> tables;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    tables.push_back(read_metrics_dir(dirs[i]));
    if (!labels.empty()) {
      names.push_back(labels[i]);
      continue;
    }
    fs::path p = fs::path(dirs[i]).lexically_normal();
    if (p.filename().empty()) p = p.parent_path();
    std::string name = p.filename().string();
    if (name == "eval" && p.has_parent_path()) name = p.parent_path().filename().string();
    names.push_back(name);
  }

  const std::set<std::string> reference(tables.front().scenarios.begin(), tables.front().scenarios.end());
  std::vector<std::string> mismatch;
  for (std::size_t i = 1; i < tables.size(); ++i) {
    const std::set<std::string> other(tables[i].scenarios.begin(), tables[i].scenarios.end());
    for (const auto& s : reference) {
      if (!other.count(s)) mismatch.push_back(s + " missing from " + names[i]);
    }
    for (const auto& s : other) {
      if (!reference.count(s)) mismatch.push_back(s + " missing from " + names[0]);
    }
  }
  if (!mismatch.empty()) {
    std::string msg = "incompatible scenario sets:";
    for (const auto& m : mismatch) msg += "\n  " + m;
    throw DataError(msg);
  }

  // (scenario, metric, one value per run)
  std::vector<std::vector<std::string>> rows;
  std::vector<bool> highlight;
  const std::vector<std::string> metrics{"acc_u", "acc_s", "h", "t1"};
  auto cell = [](const MetricsTable& t, const std::string& scenario, const std::string& column) -> std::string {
    const auto col = std::find(t.header.begin(), t.header.end(), column) - t.header.begin();
    if (static_cast<std::size_t>(col) >= t.header.size()) return "";
    for (const auto& r : t.rows) {
      if (r[0] == scenario) return r[col];
    }
    return "";
  };
  for (const std::string& scenario : tables.front().scenarios) {
    for (const std::string& metric : metrics) {
      if (cell(tables.front(), scenario, metric).empty()) continue;
      std::vector<std::string> row{scenario, metric};
      for (const auto& t : tables) row.push_back(cell(t, scenario, metric));
      rows.push_back(std::move(row));
      highlight.push_back(false);
    }
  }
  // Trade-off rows: harmonic mean of the clean and attacked headline metric of
  // the same setting, per attacked scenario.
  auto headline = [&](const MetricsTable& t, const std::string& scenario) {
    const std::string setting = cell(t, scenario, "setting");
    return cell(t, scenario, setting == "standard" ? "t1" : "h");
  };
  for (const std::string& scenario : tables.front().scenarios) {
    const std::string setting = cell(tables.front(), scenario, "setting");
    const std::string clean_label = setting + "/clean";
    if (scenario == clean_label || !reference.count(clean_label)) continue;
    std::vector<std::string> row{scenario, setting == "standard" ? "H_T1" : "H_HM"};
    for (const auto& t : tables) {
      const std::string c = headline(t, clean_label), a = headline(t, scenario);
      if (c.empty() || a.empty()) throw DataError("missing headline metric for " + scenario);
      row.push_back(fixed6(harmonic_mean(to_double("report", c), to_double("report", a))));
    }
    rows.push_back(std::move(row));
    highlight.push_back(true);
  }

  ReportOutput out;
  out.csv = "scenario,metric";
  for (const auto& n : names) out.csv += "," + n;
  out.csv += "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out.csv += (i ? "," : "") + r[i];
    out.csv += "\n";
  }

  std::vector<std::size_t> width(2 + names.size(), 0);
  std::vector<std::string> head{"scenario", "metric"};
  head.insert(head.end(), names.begin(), names.end());
  for (std::size_t i = 0; i < head.size(); ++i) width[i] = head[i].size();
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  auto line = [&](const std::vector<std::string>& r, const std::string& mark) {
    std::string s = mark;
    for (std::size_t i = 0; i < r.size(); ++i) {
      s += r[i] + std::string(width[i] - r[i].size() + (i + 1 < r.size() ? 2 : 0), ' ');
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  out.text = line(head, "  ");
  for (std::size_t i = 0; i < rows.size(); ++i) out.text += line(rows[i], highlight[i] ? "* " : "  ");
  if (std::find(highlight.begin(), highlight.end(), true) != highlight.end()) {
    out.text += "\n* harmonic mean of clean and attacked accuracy\n";
  }

  if (out_dir) {
    ensure_dir(*out_dir);
    io::write_file_atomic((fs::path(*out_dir) / "report.csv").string(), out.csv);
    io::write_file_atomic((fs::path(*out_dir) / "report.txt").string(), out.text);
  }
  return out;
}

}  // namespace atzsl
