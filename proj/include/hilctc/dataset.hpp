#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace hilctc {

enum class Label { NonCtc, Ctc };

std::string_view to_string(Label label) noexcept;
Label parse_label(std::string_view text);

struct CellRecord {
  std::string cell_id;
  std::string patient_id;
  std::vector<double> embedding;
  std::optional<Label> label;
  std::optional<bool> noisy;
  std::optional<std::string> image_ref;
  std::optional<std::pair<double, double>> cartridge_xy;
  std::optional<std::string> cartridge_id;

  bool operator==(const CellRecord&) const = default;
};

/// Patient-level partition. Sets are pairwise disjoint.
struct DatasetSplit {
  std::set<std::string> train_patients;
  std::set<std::string> test_patients;
  std::set<std::string> holdout_patients;
  std::uint64_t seed = 0;
};

/// Gaussian-blob generator parameters for desk-scale experiments.
///
/// Within blob k a point is CTC with probability
/// `(1 - class_overlap[k]) * step(x0 > center0 + positive_shift[k]) + class_overlap[k] / 2`,
/// so overlap 0 is separable on the first coordinate and overlap 1 is a fair coin.
struct SyntheticSpec {
  int n_clusters = 2;
  int points_per_cluster = 100;
  int dim = 2;
  std::optional<std::vector<std::vector<double>>> centers;
  std::vector<double> spread;         // one per cluster; a single value broadcasts
  std::vector<double> class_overlap;  // one per cluster; a single value broadcasts
  std::vector<double> positive_shift; // optional, in units of spread
  double center_distance = 10.0;      // used when centers are generated
  int n_patients = 20;
  std::uint64_t seed = 0;
};

// Manifest I/O. One JSON object per line.
std::vector<CellRecord> parse_manifest(std::istream& in);
std::vector<CellRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const std::vector<CellRecord>& records);
void write_manifest(const std::filesystem::path& path,
                    const std::vector<CellRecord>& records);

/// Throws DimensionMismatch or DuplicateId if the records violate dataset invariants.
void validate_records(const std::vector<CellRecord>& records);

std::vector<std::string> distinct_patients(const std::vector<CellRecord>& records);

DatasetSplit split_by_patient(const std::vector<CellRecord>& records, int n_train,
                              int n_test, int n_holdout, std::uint64_t seed);

std::vector<CellRecord> generate_synthetic(const SyntheticSpec& spec);

/// Blob index encoded in a synthetic cell id ("b<k>-<i>"), or -1.
int synthetic_blob_of(std::string_view cell_id);

/// Row-stacked embedding matrix.
Eigen::MatrixXd embedding_matrix(const std::vector<CellRecord>& records);

}  // namespace hilctc
