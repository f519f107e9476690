#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "atzsl/relnet.hpp"
#include "atzsl/tensor.hpp"

namespace atzsl {

enum class ClassSplit { kSeen, kUnseen };
enum class SampleSplit { kTrain, kTest };

// Features, labels, class prototypes and the seen/unseen + train/test split
// assignments. Class ids are arbitrary ints; rows reference them through labels.
struct ZslDataset {
  Tensor features;  // [rows x d_x]
  std::vector<int> labels;
  PrototypeSet prototypes;  // every class
  std::vector<int> seen_classes;
  std::vector<int> unseen_classes;
  std::vector<SampleSplit> sample_split;

  std::size_t rows() const noexcept { return labels.size(); }
  std::size_t feature_dim() const { return features.rank() == 2 ? features.shape()[1] : 0; }

  // Training rows (seen classes only once validated).
  std::vector<std::size_t> train_rows() const;
  // Test rows whose label is in `classes`.
  std::vector<std::size_t> test_rows(const std::vector<int>& classes) const;
  Tensor gather(const std::vector<std::size_t>& rows) const;
  std::vector<int> gather_labels(const std::vector<std::size_t>& rows) const;

  PrototypeSet seen_prototypes() const { return prototypes.subset(seen_classes); }
  PrototypeSet unseen_prototypes() const { return prototypes.subset(unseen_classes); }

  friend bool operator==(const ZslDataset&, const ZslDataset&) = default;
};

struct SynthSpec {
  std::size_t num_seen = 20;
  std::size_t num_unseen = 5;
  std::size_t attr_dim = 16;
  std::size_t feature_dim = 32;
  std::size_t seen_samples = 250;     // per seen class, train + test
  double seen_test_fraction = 0.2;    // held out for generalized evaluation
  std::size_t unseen_samples = 50;    // per unseen class, all test
  double proto_lo = 0.0;
  double proto_hi = 100.0;
  double noise = 1.0;                 // sigma_x
  double map_scale = 0.1;             // scale of the attribute -> feature map
  std::optional<std::uint64_t> map_seed;

  void validate() const;
};

// Prototypes ~ U[lo, hi]^q. Class means are M p + b with M [d_x x q] Gaussian
// (entries N(0, map_scale^2 / q)) and b = -M c for the box centre c; samples
// are mean + N(0, noise^2) per coordinate. Seen class ids are 0..N_s-1, unseen
// ids follow. Deterministic per (spec, seed).
ZslDataset generate_synthetic(const SynthSpec& spec, std::uint64_t seed);

// True class means of a synthetic dataset (rows in class-id order), used by the
// nearest-mean learnability check.
Tensor synthetic_class_means(const SynthSpec& spec, std::uint64_t seed);

// Per-dimension min-max scaling of every prototype into [0, 1]; constant
// dimensions map to 0.
PrototypeSet minmax_scaled(const PrototypeSet& protos);
ZslDataset with_scaled_prototypes(ZslDataset ds);

struct Violation {
  enum class Kind { kShape, kClassOverlap, kZeroShotRule, kMissingPrototype, kUnassignedClass };
  Kind kind;
  std::string detail;
};

std::string to_string(Violation::Kind kind);

// Empty iff every dataset invariant holds.
std::vector<Violation> validate_splits(const ZslDataset& ds);

// File formats:
//   features.bin   "ATZF", u32 version=1, u64 rows, u64 cols, rows*cols LE f64
//   prototypes.csv class_id,a_0,...,a_{q-1}
//   splits.csv     class_id,class_split   (seen|unseen)
//                  row_index,sample_split,class_id   (train|test)
void write_features(const Tensor& features, const std::string& path);
Tensor read_features(const std::string& path);

void save_dataset(const ZslDataset& ds, const std::string& directory);
// Parses and validates; throws DataError on parse errors (with line or byte
// offset) and on any invariant violation.
ZslDataset load_dataset(const std::string& features_path, const std::string& prototypes_path,
                        const std::string& splits_path);

}  // namespace atzsl
