#include "atzsl/zsleval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "atzsl/errors.hpp"
#include "atzsl/io.hpp"
#include "atzsl/random.hpp"

namespace atzsl {

std::string to_string(Setting s) { return s == Setting::kStandard ? "standard" : "generalized"; }
std::string to_string(Space s) { return s == Space::kVisual ? "visual" : "semantic"; }
std::string to_string(SemanticScope s) {
  switch (s) {
    case SemanticScope::kDefault: return "default";
    case SemanticScope::kUnseenOnly: return "unseen";
    case SemanticScope::kAll: return "all";
  }
  return "?";
}

Setting parse_setting(const std::string& s) {
  if (s == "standard") return Setting::kStandard;
  if (s == "generalized") return Setting::kGeneralized;
  throw std::invalid_argument("unknown setting '" + s + "'");
}
Space parse_space(const std::string& s) {
  if (s == "visual") return Space::kVisual;
  if (s == "semantic") return Space::kSemantic;
  throw std::invalid_argument("unknown space '" + s + "'");
}
SemanticScope parse_semantic_scope(const std::string& s) {
  if (s == "default") return SemanticScope::kDefault;
  if (s == "unseen") return SemanticScope::kUnseenOnly;
  if (s == "all") return SemanticScope::kAll;
  throw std::invalid_argument("unknown semantic scope '" + s + "'");
}

std::string EvalScenario::label() const {
  std::string out = to_string(setting);
  if (!attack) return out + "/clean";
  out += "/" + to_string(space) + "/" + attack->display_name() + "/rho=" + io::format_double(attack->magnitude);
  if (attack->family != AttackFamily::kFgsm) out += "/N=" + std::to_string(attack->steps);
  return out;
}

void EvalScenario::validate() const {
  if (!attack) return;
  attack->validate();
  const AttackTarget wanted = space == Space::kVisual ? AttackTarget::kInput : AttackTarget::kPrototype;
  if (attack->target != wanted) {
    throw ConfigError("eval.scenarios", label() + ": " + to_string(space) + "-space attacks target " + to_string(wanted));
  }
}

double MetricsFragment::headline() const { return setting == Setting::kStandard ? t1.value_or(acc_u) : h.value_or(0.0); }

std::vector<ClassAccuracy> per_class_breakdown(std::span<const int> predictions, std::span<const int> labels,
                                               const std::vector<int>& classes) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("per_class_top1: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  }
  std::map<int, ClassAccuracy> tally;
  for (int c : classes) tally[c] = ClassAccuracy{c, 0, 0, 0.0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = tally.find(labels[i]);
    if (it == tally.end()) continue;
    ++it->second.samples;
    if (predictions[i] == labels[i]) ++it->second.correct;
  }
  std::vector<ClassAccuracy> out;
  for (int c : classes) {
    ClassAccuracy a = tally.at(c);
    if (a.samples == 0) throw DataError("class " + std::to_string(c) + " has no test samples");
    a.accuracy = static_cast<double>(a.correct) / static_cast<double>(a.samples);
    out.push_back(a);
  }
  return out;
}

double per_class_top1(std::span<const int> predictions, std::span<const int> labels, const std::vector<int>& classes) {
  if (classes.empty()) throw std::invalid_argument("per_class_top1: empty class set");
  double acc = 0.0;
  for (const ClassAccuracy& a : per_class_breakdown(predictions, labels, classes)) acc += a.accuracy;
  return acc / static_cast<double>(classes.size());
}

double harmonic_mean(double a, double b) {
  if (a < 0.0 || b < 0.0) throw std::invalid_argument("harmonic_mean: negative argument");
  if (a + b == 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

namespace {

constexpr std::size_t kAttackChunk = 128;

Tensor rows_of(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t d = x.shape()[1];
  return Tensor(Shape{end - begin, d}, std::vector<double>(x.values().begin() + static_cast<std::ptrdiff_t>(begin * d),
                                                           x.values().begin() + static_cast<std::ptrdiff_t>(end * d)));
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct AttackedPredictions {
  std::vector<int> predictions;
  std::vector<double> clean_losses;
  std::vector<double> attacked_losses;
};

AttackedPredictions run_scenario(const RelationNet& net, const Tensor& x, const std::vector<std::size_t>& labels,
                                 const PrototypeSet& protos, const EvalScenario& scenario,
                                 const std::vector<bool>& semantic_mask, std::uint64_t seed) {
  const double temperature = net.config.temperature;
  const std::size_t n = labels.size();
  AttackedPredictions out;
  out.clean_losses = batch_losses(net, x, labels, protos.matrix, temperature);

  if (!scenario.attack) {
    out.predictions = predict_batch(net, x, protos);
    out.attacked_losses = out.clean_losses;
    return out;
  }
  const AttackSpec& spec = *scenario.attack;

  if (scenario.space == Space::kSemantic) {
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor xi = rows_of(x, i, i + 1);
      const PrototypeSet adv = l2_prototype_attack(net, xi, {labels[i]}, protos, spec, temperature,
                                                   seed + i, semantic_mask);
      out.predictions.push_back(predict_batch(net, xi, adv).front());
      out.attacked_losses.push_back(batch_losses(net, xi, {labels[i]}, adv.matrix, temperature).front());
    }
    return out;
  }

  Tensor x_adv(x.shape());
  if (spec.family == AttackFamily::kZooLike) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<std::size_t> label{labels[i]};
      const Tensor xi = Tensor::vector(std::vector<double>(x.row(i).begin(), x.row(i).end()));
      ScalarOracle oracle = [&](const Tensor& point) {
        return batch_losses(net, point.reshaped(Shape{1, point.size()}), label, protos.matrix, temperature).front();
      };
      const Tensor adv = zeroth_order_attack(oracle, xi, spec, seed + i);
      std::copy(adv.data().begin(), adv.data().end(), x_adv.row(i).begin());
    }
  } else {
    for (std::size_t start = 0; start < n; start += kAttackChunk) {
      const std::size_t stop = std::min(n, start + kAttackChunk);
      const std::vector<std::size_t> chunk_labels(labels.begin() + static_cast<std::ptrdiff_t>(start),
                                                  labels.begin() + static_cast<std::ptrdiff_t>(stop));
      const Tensor adv = ifgsm_input_attack(net, rows_of(x, start, stop), chunk_labels, protos.matrix, spec, temperature);
      std::copy(adv.data().begin(), adv.data().end(), x_adv.row(start).begin());
    }
  }
  out.predictions = predict_batch(net, x_adv, protos);
  out.attacked_losses = batch_losses(net, x_adv, labels, protos.matrix, temperature);
  return out;
}

}  // namespace

MetricsFragment evaluate(const RelationNet& net, const ZslDataset& ds, const EvalScenario& scenario,
                         std::uint64_t seed) {
  scenario.validate();
  const PrototypeSet seen = ds.seen_prototypes();
  const PrototypeSet unseen = ds.unseen_prototypes();
  const bool generalized = scenario.setting == Setting::kGeneralized;
  const PrototypeSet protos = generalized ? merge(seen, unseen) : unseen;
  if (protos.dim() != net.config.prototype_dim || ds.feature_dim() != net.config.input_dim) {
    throw DimensionError("model expects inputs of " + std::to_string(net.config.input_dim) + " and prototypes of " +
                         std::to_string(net.config.prototype_dim) + ", dataset has " +
                         std::to_string(ds.feature_dim()) + " and " + std::to_string(protos.dim()));
  }

  std::vector<int> classes = ds.unseen_classes;
  if (generalized) classes.insert(classes.end(), ds.seen_classes.begin(), ds.seen_classes.end());
  const std::vector<std::size_t> rows = ds.test_rows(classes);
  if (rows.empty()) throw DataError(scenario.label() + ": no test samples");
  const std::vector<int> label_ids = ds.gather_labels(rows);
  std::vector<std::size_t> labels;
  for (int c : label_ids) labels.push_back(*protos.index_of(c));

  // Semantic attacks may move unseen prototypes only, or every prototype.
  const bool all_protos = scenario.scope == SemanticScope::kAll ||
                          (scenario.scope == SemanticScope::kDefault && generalized);
  std::vector<bool> mask(protos.size(), true);
  if (!all_protos) {
    const std::set<int> u(ds.unseen_classes.begin(), ds.unseen_classes.end());
    for (std::size_t j = 0; j < protos.size(); ++j) mask[j] = u.count(protos.class_ids[j]) > 0;
  }

  const AttackedPredictions res =
      run_scenario(net, ds.gather(rows), labels, protos, scenario, mask, derive_seed(seed, scenario.label()));

  MetricsFragment m;
  m.scenario = scenario.label();
  m.setting = scenario.setting;
  m.space = scenario.space;
  m.attack = scenario.attack;
  m.clean_loss = mean(res.clean_losses);
  m.attacked_loss = mean(res.attacked_losses);
  m.per_class = per_class_breakdown(res.predictions, label_ids, classes);
  m.acc_u = per_class_top1(res.predictions, label_ids, ds.unseen_classes);
  if (generalized) {
    m.acc_s = per_class_top1(res.predictions, label_ids, ds.seen_classes);
    m.h = harmonic_mean(*m.acc_s, m.acc_u);
  } else {
    m.t1 = m.acc_u;
  }
  return m;
}

TradeOffReport trade_off_report(const MetricsFragment& clean, const std::vector<MetricsFragment>& attacked) {
  if (clean.attack) throw std::invalid_argument("trade_off_report: reference fragment is not a clean scenario");
  TradeOffReport report;
  report.setting = clean.setting;
  for (const MetricsFragment& a : attacked) {
    if (a.setting != clean.setting) {
      throw std::invalid_argument("trade_off_report: mixed settings (" + clean.scenario + " vs " + a.scenario + ")");
    }
    if (!a.attack) continue;
    TradeOffRow row;
    row.attack = a.attack->display_name();
    row.magnitude = a.attack->magnitude;
    row.scenario = a.scenario;
    row.clean = clean.headline();
    row.adversarial = a.headline();
    row.value = harmonic_mean(row.clean, row.adversarial);
    report.rows.push_back(row);
  }
  return report;
}

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fixed(*v) : ""; }

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string TradeOffReport::to_csv() const {
  std::string out = "attack,magnitude," + metric_name() + "\n";
  for (const TradeOffRow& r : rows) out += r.attack + ",rho=" + io::format_double(r.magnitude) + "," + fixed(r.value) + "\n";
  return out;
}

std::string metrics_csv(const std::vector<MetricsFragment>& fragments) {
  std::string out = "# atzsl-metrics v1\n";
  out += "scenario,setting,space,attack,rho,steps,acc_u,acc_s,h,t1,clean_loss,attacked_loss\n";
  for (const MetricsFragment& m : fragments) {
    out += m.scenario + "," + to_string(m.setting) + ",";
    if (m.attack) {
      out += to_string(m.space) + "," + m.attack->display_name() + "," + io::format_double(m.attack->magnitude) + "," +
             std::to_string(m.attack->steps) + ",";
    } else {
      out += ",none,0,0,";
    }
    out += fixed(m.acc_u) + "," + opt(m.acc_s) + "," + opt(m.h) + "," + opt(m.t1) + "," + fixed(m.clean_loss) + "," +
           fixed(m.attacked_loss) + "\n";
  }
  return out;
}

std::string metrics_text(const std::vector<MetricsFragment>& fragments, const std::vector<TradeOffReport>& trade_offs) {
  std::size_t width = 8;
  for (const auto& m : fragments) width = std::max(width, m.scenario.size());
  std::ostringstream os;
  auto pad = [&](const std::string& s) { return s + std::string(width + 2 - std::min(width + 2, s.size()), ' '); };
  os << pad("scenario") << "acc_U     acc_S     H         T1\n";
  for (const auto& m : fragments) {
    auto cell = [](const std::optional<double>& v) {
      std::string s = v ? fixed(*v, 4) : "-";
      return s + std::string(10 - std::min<std::size_t>(10, s.size()), ' ');
    };
    os << pad(m.scenario) << cell(m.acc_u) << cell(m.acc_s) << cell(m.h) << cell(m.t1) << "\n";
  }
  for (const auto& t : trade_offs) {
    if (t.rows.empty()) continue;
    os << "\n" << t.metric_name() << " (" << to_string(t.setting) << ")\n";
    for (const auto& r : t.rows) {
      os << "  " << pad(r.scenario) << fixed(r.value, 4) << "  (clean " << fixed(r.clean, 4) << ", attacked "
         << fixed(r.adversarial, 4) << ")\n";
    }
  }
  return os.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::pair<std::string, double>>& bars) {
  constexpr int kBarWidth = 48, kGap = 16, kHeight = 240, kTop = 40, kBottom = 90, kLeft = 50;
  const int width = kLeft + static_cast<int>(bars.size()) * (kBarWidth + kGap) + kGap;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << kTop + kHeight + kBottom
     << "\">\n";
  os << "  <text x=\"" << kLeft << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << svg_escape(title)
     << "</text>\n";
  os << "  <line x1=\"" << kLeft << "\" y1=\"" << kTop + kHeight << "\" x2=\"" << width << "\" y2=\"" << kTop + kHeight
     << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const int y = kTop + kHeight - tick * kHeight / 4;
    os << "  <text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" font-family=\"sans-serif\" font-size=\"10\" "
       << "text-anchor=\"end\">" << tick * 25 << "</text>\n";
  }
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double v = std::clamp(bars[i].second, 0.0, 1.0);
    const int h = static_cast<int>(std::lround(v * kHeight));
    const int x = kLeft + kGap + static_cast<int>(i) * (kBarWidth + kGap);
    os << "  <rect x=\"" << x << "\" y=\"" << kTop + kHeight - h << "\" width=\"" << kBarWidth << "\" height=\"" << h
       << "\" fill=\"" << (i == 0 ? "#4c72b0" : "#dd8452") << "\"/>\n";
    os << "  <text x=\"" << x + kBarWidth / 2 << "\" y=\"" << kTop + kHeight - h - 4
       << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" << fixed(100.0 * v, 1) << "</text>\n";
    os << "  <text transform=\"translate(" << x + kBarWidth / 2 << "," << kTop + kHeight + 12
       << ") rotate(40)\" font-family=\"sans-serif\" font-size=\"10\">" << svg_escape(bars[i].first) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace atzsl
