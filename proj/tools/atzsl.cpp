// atzsl: generate / train / eval / report driver.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atzsl/errors.hpp"
#include "atzsl/experiment.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment INI file")->required();
  cmd->add_option("--set", c.sets, "override a config key: section.key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "override experiment.seed");
  cmd->add_option("--output-dir", c.output_dir, "override experiment.output_dir and ATZSL_OUTPUT_DIR");
}

atzsl::ExperimentConfig load(const Common& c, atzsl::Overrides extra = {}) {
  atzsl::Overrides o;
  for (const std::string& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw atzsl::ConfigError(s, "--set expects section.key=value");
    o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) o.emplace_back("experiment.seed", std::to_string(*c.seed));
  if (c.output_dir) o.emplace_back("experiment.output_dir", *c.output_dir);
  o.insert(o.end(), extra.begin(), extra.end());
  return atzsl::load_experiment(c.config, o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarially trained zero-shot learning"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts;
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(gen, gen_opts);

  auto* tr = app.add_subcommand("train", "train a relation network");
  add_common(tr, train_opts);
  std::string mode = "images";
  tr->add_option("--mode", mode, "images|attributes|baseline|baseline2|baseline3")
      ->capture_default_str()
      ->check(CLI::IsMember({"images", "attributes", "baseline", "baseline2", "baseline3"}));

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on every configured scenario");
  add_common(ev, eval_opts);
  std::string checkpoint;
  std::optional<std::string> eval_out;
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--out", eval_out, "metrics directory (default: <checkpoint dir>/eval)");

  auto* rep = app.add_subcommand("report", "merge metrics directories into one table");
  std::vector<std::string> dirs, labels;
  std::optional<std::string> report_out;
  rep->add_option("dirs", dirs, "metrics directories, one column each")->required();
  rep->add_option("--label", labels, "column label per directory (repeatable)");
  rep->add_option("--out", report_out, "write report.csv and report.txt here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const auto r = atzsl::cmd_generate(load(gen_opts));
      std::cout << r.summary << "\nwrote " << r.dir << "\n";
    } else if (*tr) {
      const atzsl::RunMode m = atzsl::parse_run_mode(mode);
      atzsl::Overrides extra;
      if (m == atzsl::RunMode::kImages || m == atzsl::RunMode::kAttributes) extra.emplace_back("train.mode", mode);
      const auto r = atzsl::cmd_train(load(train_opts, extra), m);
      const auto& last = r.train_log.epochs.back();
      std::cout << "epochs=" << r.train_log.epochs.size() << " final clean_loss=" << last.clean_loss;
      if (last.adv_loss) std::cout << " adv_loss=" << *last.adv_loss;
      std::cout << "\nwrote " << r.checkpoint << "\nwrote " << r.log << "\n";
    } else if (*ev) {
      const auto r = atzsl::cmd_eval(load(eval_opts), checkpoint, eval_out);
      std::cout << r.text << "wrote " << r.dir << "\n";
    } else if (*rep) {
      const auto r = atzsl::cmd_report(dirs, labels, report_out);
      std::cout << r.text;
    }
  } catch (const atzsl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
