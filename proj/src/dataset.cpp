#include "atzsl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "atzsl/errors.hpp"
#include "atzsl/io.hpp"
#include "atzsl/random.hpp"

namespace atzsl {

std::vector<std::size_t> ZslDataset::train_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows(); ++r) {
    if (sample_split[r] == SampleSplit::kTrain) out.push_back(r);
  }
  return out;
}

std::vector<std::size_t> ZslDataset::test_rows(const std::vector<int>& classes) const {
  const std::set<int> wanted(classes.begin(), classes.end());
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows(); ++r) {
    if (sample_split[r] == SampleSplit::kTest && wanted.count(labels[r])) out.push_back(r);
  }
  return out;
}

Tensor ZslDataset::gather(const std::vector<std::size_t>& rows) const {
  const std::size_t d = feature_dim();
  Tensor out(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = features.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<int> ZslDataset::gather_labels(const std::vector<std::size_t>& rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

void SynthSpec::validate() const {
  if (num_seen < 1) throw ConfigError("dataset.num_seen", "must be >= 1");
  if (num_unseen < 1) throw ConfigError("dataset.num_unseen", "must be >= 1");
  if (attr_dim < 1) throw ConfigError("dataset.attr_dim", "must be >= 1");
  if (feature_dim < 1) throw ConfigError("dataset.feature_dim", "must be >= 1");
  if (seen_samples < 1) throw ConfigError("dataset.seen_samples", "must be >= 1");
  if (unseen_samples < 1) throw ConfigError("dataset.unseen_samples", "must be >= 1");
  if (!(seen_test_fraction >= 0.0 && seen_test_fraction < 1.0)) {
    throw ConfigError("dataset.seen_test_fraction", "must lie in [0, 1)");
  }
  if (!(proto_lo < proto_hi)) throw ConfigError("dataset.proto_lo", "must be below dataset.proto_hi");
  if (!(noise >= 0.0)) throw ConfigError("dataset.noise", "must be >= 0");
  if (!(map_scale > 0.0)) throw ConfigError("dataset.map_scale", "must be positive");
}

namespace {

struct LinearMap {
  Tensor weight;  // [d_x x q]
  std::vector<double> bias;
};

LinearMap make_map(const SynthSpec& spec, std::uint64_t seed) {
  Rng rng(spec.map_seed ? *spec.map_seed : derive_seed(seed, "synthetic.map"));
  LinearMap m{Tensor(Shape{spec.feature_dim, spec.attr_dim}), std::vector<double>(spec.feature_dim)};
  const double sd = spec.map_scale / std::sqrt(static_cast<double>(spec.attr_dim));
  for (double& v : m.weight.data()) v = sd * standard_normal(rng);
  const double centre = 0.5 * (spec.proto_lo + spec.proto_hi);
  for (std::size_t i = 0; i < spec.feature_dim; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < spec.attr_dim; ++k) acc += m.weight.at(i, k) * centre;
    m.bias[i] = -acc;
  }
  return m;
}

PrototypeSet make_prototypes(const SynthSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "synthetic.prototypes"));
  const std::size_t classes = spec.num_seen + spec.num_unseen;
  PrototypeSet protos;
  protos.matrix = Tensor(Shape{classes, spec.attr_dim});
  for (double& v : protos.matrix.data()) v = uniform(rng, spec.proto_lo, spec.proto_hi);
  for (std::size_t c = 0; c < classes; ++c) protos.class_ids.push_back(static_cast<int>(c));
  return protos;
}

Tensor class_means(const SynthSpec& spec, const LinearMap& map, const PrototypeSet& protos) {
  Tensor means(Shape{protos.size(), spec.feature_dim});
  for (std::size_t c = 0; c < protos.size(); ++c) {
    const auto p = protos.matrix.row(c);
    for (std::size_t i = 0; i < spec.feature_dim; ++i) {
      double acc = map.bias[i];
      for (std::size_t k = 0; k < spec.attr_dim; ++k) acc += map.weight.at(i, k) * p[k];
      means.at(c, i) = acc;
    }
  }
  return means;
}

}  // namespace

Tensor synthetic_class_means(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  return class_means(spec, make_map(spec, seed), make_prototypes(spec, seed));
}

ZslDataset generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  ZslDataset ds;
  ds.prototypes = make_prototypes(spec, seed);
  const Tensor means = class_means(spec, make_map(spec, seed), ds.prototypes);
  for (std::size_t c = 0; c < spec.num_seen; ++c) ds.seen_classes.push_back(static_cast<int>(c));
  for (std::size_t c = 0; c < spec.num_unseen; ++c) ds.unseen_classes.push_back(static_cast<int>(spec.num_seen + c));

  const auto seen_test =
      static_cast<std::size_t>(std::llround(spec.seen_test_fraction * static_cast<double>(spec.seen_samples)));
  const std::size_t total = spec.num_seen * spec.seen_samples + spec.num_unseen * spec.unseen_samples;
  std::vector<double> values;
  values.reserve(total * spec.feature_dim);
  Rng noise(derive_seed(seed, "synthetic.noise"));

  for (std::size_t c = 0; c < ds.prototypes.size(); ++c) {
    const bool seen = c < spec.num_seen;
    const std::size_t n = seen ? spec.seen_samples : spec.unseen_samples;
    for (std::size_t s = 0; s < n; ++s) {
      for (double m : means.row(c)) values.push_back(m + spec.noise * standard_normal(noise));
      ds.labels.push_back(static_cast<int>(c));
      const bool test = !seen || s >= n - seen_test;
      ds.sample_split.push_back(test ? SampleSplit::kTest : SampleSplit::kTrain);
    }
  }
  ds.features = Tensor(Shape{total, spec.feature_dim}, std::move(values));
  return ds;
}

std::string to_string(Violation::Kind kind) {
  switch (kind) {
    case Violation::Kind::kShape: return "shape";
    case Violation::Kind::kClassOverlap: return "class_overlap";
    case Violation::Kind::kZeroShotRule: return "zero_shot_rule";
    case Violation::Kind::kMissingPrototype: return "missing_prototype";
    case Violation::Kind::kUnassignedClass: return "unassigned_class";
  }
  return "?";
}

PrototypeSet minmax_scaled(const PrototypeSet& protos) {
  PrototypeSet out = protos;
  const std::size_t rows = protos.size();
  const std::size_t q = protos.dim();
  for (std::size_t k = 0; k < q; ++k) {
    double lo = protos.matrix.at(0, k);
    double hi = lo;
    for (std::size_t j = 1; j < rows; ++j) {
      lo = std::min(lo, protos.matrix.at(j, k));
      hi = std::max(hi, protos.matrix.at(j, k));
    }
    const double range = hi - lo;
    for (std::size_t j = 0; j < rows; ++j) {
      out.matrix.at(j, k) = range > 0.0 ? (protos.matrix.at(j, k) - lo) / range : 0.0;
    }
  }
  return out;
}

ZslDataset with_scaled_prototypes(ZslDataset ds) {
  ds.prototypes = minmax_scaled(ds.prototypes);
  return ds;
}

std::vector<Violation> validate_splits(const ZslDataset& ds) {
  using Kind = Violation::Kind;
  std::vector<Violation> out;
  if (ds.features.rank() != 2 || ds.features.shape()[0] != ds.labels.size()) {
    out.push_back({Kind::kShape, "features " + shape_string(ds.features.shape()) + " for " +
                                     std::to_string(ds.labels.size()) + " labels"});
  }
  if (ds.sample_split.size() != ds.labels.size()) {
    out.push_back({Kind::kShape, std::to_string(ds.sample_split.size()) + " sample splits for " +
                                     std::to_string(ds.labels.size()) + " labels"});
  }
  if (ds.prototypes.matrix.rank() != 2 || ds.prototypes.matrix.shape()[0] != ds.prototypes.class_ids.size()) {
    out.push_back({Kind::kShape, "prototype matrix " + shape_string(ds.prototypes.matrix.shape()) + " for " +
                                     std::to_string(ds.prototypes.class_ids.size()) + " class ids"});
  }

  const std::set<int> seen(ds.seen_classes.begin(), ds.seen_classes.end());
  const std::set<int> unseen(ds.unseen_classes.begin(), ds.unseen_classes.end());
  for (int c : seen) {
    if (unseen.count(c)) out.push_back({Kind::kClassOverlap, "class " + std::to_string(c) + " is both seen and unseen"});
  }
  const std::set<int> with_proto(ds.prototypes.class_ids.begin(), ds.prototypes.class_ids.end());
  for (const auto* group : {&seen, &unseen}) {
    for (int c : *group) {
      if (!with_proto.count(c)) out.push_back({Kind::kMissingPrototype, "class " + std::to_string(c) + " has no prototype"});
    }
  }

  std::set<int> reported;
  const std::size_t n = std::min(ds.labels.size(), ds.sample_split.size());
  for (std::size_t r = 0; r < n; ++r) {
    const int c = ds.labels[r];
    if (!with_proto.count(c) && reported.insert(c).second) {
      out.push_back({Kind::kMissingPrototype, "row " + std::to_string(r) + " label " + std::to_string(c) +
                                                  " has no prototype"});
    }
    if (!seen.count(c) && !unseen.count(c)) {
      out.push_back({Kind::kUnassignedClass, "row " + std::to_string(r) + " label " + std::to_string(c) +
                                                 " is neither seen nor unseen"});
    }
    if (unseen.count(c) && ds.sample_split[r] == SampleSplit::kTrain) {
      out.push_back({Kind::kZeroShotRule, "row " + std::to_string(r) + " is a training sample of unseen class " +
                                              std::to_string(c)});
    }
  }
  return out;
}

namespace {

constexpr std::string_view kFeatureMagic = "ATZF";
constexpr std::uint32_t kFeatureVersion = 1;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line, const std::string& what) {
  throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& s, const std::string& path, std::size_t line) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v)) {
    parse_fail(path, line, "invalid number '" + s + "'");
  }
  return v;
}

long long parse_int(const std::string& s, const std::string& path, std::size_t line) {
  long long v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) parse_fail(path, line, "invalid integer '" + s + "'");
  return v;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::istringstream in(io::read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

void write_features(const Tensor& features, const std::string& path) {
  if (features.rank() != 2) throw DimensionError("features must be a matrix, got " + shape_string(features.shape()));
  io::Writer w;
  w.bytes(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u64(features.shape()[0]);
  w.u64(features.shape()[1]);
  for (double v : features.data()) w.f64(v);
  io::write_file_atomic(path, w.buffer());
}

Tensor read_features(const std::string& path) {
  const std::string bytes = io::read_file(path);
  io::Reader r(bytes, path);
  if (r.bytes(4) != kFeatureMagic) r.fail("bad feature-file magic");
  const std::uint32_t version = r.u32();
  if (version != kFeatureVersion) r.fail("unsupported feature-file version " + std::to_string(version));
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (cols != 0 && rows > (bytes.size() / 8) / cols + 1) r.fail("row count exceeds file size");
  std::vector<double> values(rows * cols);
  for (double& v : values) {
    v = r.f64();
    if (!std::isfinite(v)) r.fail("non-finite feature value");
  }
  if (!r.at_end()) r.fail("trailing bytes after feature matrix");
  return Tensor(Shape{rows, cols}, std::move(values));
}

void save_dataset(const ZslDataset& ds, const std::string& directory) {
  std::filesystem::create_directories(directory);
  const std::filesystem::path dir(directory);
  write_features(ds.features, (dir / "features.bin").string());

  std::string protos = "class_id";
  for (std::size_t k = 0; k < ds.prototypes.dim(); ++k) protos += ",a_" + std::to_string(k);
  protos += '\n';
  for (std::size_t c = 0; c < ds.prototypes.size(); ++c) {
    protos += std::to_string(ds.prototypes.class_ids[c]);
    for (double v : ds.prototypes.matrix.row(c)) protos += "," + io::format_double(v);
    protos += '\n';
  }
  io::write_file_atomic((dir / "prototypes.csv").string(), protos);

  std::string splits = "class_id,class_split\n";
  for (int c : ds.seen_classes) splits += std::to_string(c) + ",seen\n";
  for (int c : ds.unseen_classes) splits += std::to_string(c) + ",unseen\n";
  splits += "row_index,sample_split,class_id\n";
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    splits += std::to_string(r) + (ds.sample_split[r] == SampleSplit::kTrain ? ",train," : ",test,") +
              std::to_string(ds.labels[r]) + "\n";
  }
  io::write_file_atomic((dir / "splits.csv").string(), splits);
}

ZslDataset load_dataset(const std::string& features_path, const std::string& prototypes_path,
                        const std::string& splits_path) {
  ZslDataset ds;
  ds.features = read_features(features_path);

  // prototypes.csv
  {
    const auto lines = read_lines(prototypes_path);
    if (lines.empty()) parse_fail(prototypes_path, 1, "empty file");
    const auto header = split_csv(lines[0]);
    if (header.empty() || header[0] != "class_id") parse_fail(prototypes_path, 1, "expected header 'class_id,a_0,...'");
    for (std::size_t k = 1; k < header.size(); ++k) {
      if (header[k] != "a_" + std::to_string(k - 1)) parse_fail(prototypes_path, 1, "unexpected column '" + header[k] + "'");
    }
    const std::size_t q = header.size() - 1;
    std::vector<double> values;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto fields = split_csv(lines[i]);
      if (fields.size() != q + 1) {
        parse_fail(prototypes_path, i + 1, "expected " + std::to_string(q + 1) + " fields, got " +
                                               std::to_string(fields.size()));
      }
      ds.prototypes.class_ids.push_back(static_cast<int>(parse_int(fields[0], prototypes_path, i + 1)));
      for (std::size_t k = 1; k <= q; ++k) values.push_back(parse_double(fields[k], prototypes_path, i + 1));
    }
    ds.prototypes.matrix = Tensor(Shape{ds.prototypes.class_ids.size(), q}, std::move(values));
  }

  // splits.csv
  {
    const auto lines = read_lines(splits_path);
    if (lines.empty() || lines[0] != "class_id,class_split") {
      parse_fail(splits_path, 1, "expected header 'class_id,class_split'");
    }
    std::size_t i = 1;
    for (; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      if (lines[i].rfind("row_index,", 0) == 0) break;
      const auto fields = split_csv(lines[i]);
      if (fields.size() != 2) parse_fail(splits_path, i + 1, "expected 2 fields in class section");
      const int c = static_cast<int>(parse_int(fields[0], splits_path, i + 1));
      if (fields[1] == "seen") {
        ds.seen_classes.push_back(c);
      } else if (fields[1] == "unseen") {
        ds.unseen_classes.push_back(c);
      } else {
        parse_fail(splits_path, i + 1, "class_split must be seen or unseen, got '" + fields[1] + "'");
      }
    }
    if (i >= lines.size() || lines[i] != "row_index,sample_split,class_id") {
      parse_fail(splits_path, i + 1, "expected section header 'row_index,sample_split,class_id'");
    }
    const std::size_t rows = ds.features.shape()[0];
    std::vector<bool> assigned(rows, false);
    ds.labels.assign(rows, 0);
    ds.sample_split.assign(rows, SampleSplit::kTest);
    for (++i; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto fields = split_csv(lines[i]);
      if (fields.size() != 3) parse_fail(splits_path, i + 1, "expected 3 fields in sample section");
      const long long r = parse_int(fields[0], splits_path, i + 1);
      if (r < 0 || static_cast<std::size_t>(r) >= rows) {
        parse_fail(splits_path, i + 1, "row_index " + fields[0] + " outside feature matrix of " +
                                           std::to_string(rows) + " rows");
      }
      if (assigned[r]) parse_fail(splits_path, i + 1, "row_index " + fields[0] + " listed twice");
      assigned[r] = true;
      if (fields[1] == "train") {
        ds.sample_split[r] = SampleSplit::kTrain;
      } else if (fields[1] != "test") {
        parse_fail(splits_path, i + 1, "sample_split must be train or test, got '" + fields[1] + "'");
      }
      ds.labels[r] = static_cast<int>(parse_int(fields[2], splits_path, i + 1));
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (!assigned[r]) throw DataError(splits_path + ": feature row " + std::to_string(r) + " has no split entry");
    }
  }

  const auto violations = validate_splits(ds);
  if (!violations.empty()) {
    std::string msg = "dataset rejected:";
    for (const auto& v : violations) msg += "\n  [" + to_string(v.kind) + "] " + v.detail;
    throw DataError(msg);
  }
  return ds;
}

}  // namespace atzsl
