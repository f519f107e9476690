#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "atzsl/attacks.hpp"
#include "atzsl/dataset.hpp"
#include "atzsl/relnet.hpp"

namespace atzsl {

enum class Setting { kStandard, kGeneralized };
enum class Space { kVisual, kSemantic };
// Which prototypes a semantic-space attack may move. kDefault: unseen only under
// the standard setting, every prototype under the generalized one.
enum class SemanticScope { kDefault, kUnseenOnly, kAll };

std::string to_string(Setting s);
std::string to_string(Space s);
std::string to_string(SemanticScope s);
Setting parse_setting(const std::string& s);
Space parse_space(const std::string& s);
SemanticScope parse_semantic_scope(const std::string& s);

struct EvalScenario {
  Setting setting = Setting::kStandard;
  std::optional<AttackSpec> attack;  // absent: clean
  Space space = Space::kVisual;
  SemanticScope scope = SemanticScope::kDefault;

  // e.g. "standard/clean", "generalized/visual/IFGSM/rho=2/N=9"
  std::string label() const;
  void validate() const;
};

struct ClassAccuracy {
  int class_id = 0;
  std::size_t samples = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct MetricsFragment {
  std::string scenario;
  Setting setting = Setting::kStandard;
  Space space = Space::kVisual;
  std::optional<AttackSpec> attack;
  double acc_u = 0.0;
  std::optional<double> acc_s;  // generalized only
  std::optional<double> h;      // generalized only
  std::optional<double> t1;     // standard only
  double clean_loss = 0.0;      // mean per-sample loss on clean inputs
  double attacked_loss = 0.0;   // mean per-sample loss at the attacked point
  std::vector<ClassAccuracy> per_class;

  // T1 under the standard setting, H under the generalized one.
  double headline() const;
};

// Mean over `classes` of (correct in class / samples in class). Throws when a
// class has no samples.
double per_class_top1(std::span<const int> predictions, std::span<const int> labels, const std::vector<int>& classes);
std::vector<ClassAccuracy> per_class_breakdown(std::span<const int> predictions, std::span<const int> labels,
                                               const std::vector<int>& classes);

// 2ab / (a + b), 0 when a + b == 0.
double harmonic_mean(double a, double b);

// Semantic-space attacks build the adversarial prototypes per test sample,
// ascending the prediction loss of that sample's true label.
MetricsFragment evaluate(const RelationNet& net, const ZslDataset& ds, const EvalScenario& scenario,
                         std::uint64_t seed);

struct TradeOffRow {
  std::string attack;  // display name
  double magnitude = 0.0;
  std::string scenario;
  double clean = 0.0;
  double adversarial = 0.0;
  double value = 0.0;  // harmonic mean of clean and adversarial
};

struct TradeOffReport {
  Setting setting = Setting::kStandard;
  std::vector<TradeOffRow> rows;

  std::string metric_name() const { return setting == Setting::kStandard ? "H_T1" : "H_HM"; }
  // Header "attack,magnitude,<metric>", rows like "FGSM,rho=1,0.507000".
  std::string to_csv() const;
};

TradeOffReport trade_off_report(const MetricsFragment& clean, const std::vector<MetricsFragment>& attacked);

// "# atzsl-metrics v1" followed by one CSV row per scenario.
std::string metrics_csv(const std::vector<MetricsFragment>& fragments);
std::string metrics_text(const std::vector<MetricsFragment>& fragments, const std::vector<TradeOffReport>& trade_offs);
// Bar chart with one bar per (label, value in [0, 1]).
std::string bar_chart_svg(const std::string& title, const std::vector<std::pair<std::string, double>>& bars);

}  // namespace atzsl
