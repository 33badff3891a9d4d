#include "hilctc/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "hilctc/error.hpp"
#include "hilctc/random.hpp"

namespace hilctc {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Label label) noexcept {
  return label == Label::Ctc ? "CTC" : "NON_CTC";
}

Label parse_label(std::string_view text) {
  if (text == "CTC") return Label::Ctc;
  if (text == "NON_CTC") return Label::NonCtc;
  fail(ErrorKind::Parse, "unknown label '" + std::string(text) + "'");
}

namespace {

template <typename T>
std::optional<T> optional_field(const ordered_json& row, const char* key) {
  auto it = row.find(key);
  if (it == row.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

CellRecord record_from_json(const ordered_json& row) {
  CellRecord rec;
  rec.cell_id = row.at("cell_id").get<std::string>();
  rec.patient_id = row.at("patient_id").get<std::string>();
  rec.embedding = row.at("embedding").get<std::vector<double>>();
  if (auto label = optional_field<std::string>(row, "label")) rec.label = parse_label(*label);
  rec.noisy = optional_field<bool>(row, "noisy");
  rec.image_ref = optional_field<std::string>(row, "image_ref");
  rec.cartridge_id = optional_field<std::string>(row, "cartridge_id");
  if (auto xy = optional_field<std::vector<double>>(row, "cartridge_xy")) {
    if (xy->size() != 2) fail(ErrorKind::Parse, "cartridge_xy must hold two numbers");
    rec.cartridge_xy = std::make_pair((*xy)[0], (*xy)[1]);
  }
  return rec;
}

ordered_json record_to_json(const CellRecord& rec) {
  ordered_json row;
  row["cell_id"] = rec.cell_id;
  row["patient_id"] = rec.patient_id;
  row["embedding"] = rec.embedding;
  row["label"] = rec.label ? ordered_json(std::string(to_string(*rec.label))) : ordered_json(nullptr);
  row["noisy"] = rec.noisy ? ordered_json(*rec.noisy) : ordered_json(nullptr);
  row["image_ref"] = rec.image_ref ? ordered_json(*rec.image_ref) : ordered_json(nullptr);
  row["cartridge_id"] = rec.cartridge_id ? ordered_json(*rec.cartridge_id) : ordered_json(nullptr);
  if (rec.cartridge_xy) {
    row["cartridge_xy"] = {rec.cartridge_xy->first, rec.cartridge_xy->second};
  } else {
    row["cartridge_xy"] = nullptr;
  }
  return row;
}

}  // namespace

std::vector<CellRecord> parse_manifest(std::istream& in) {
  std::vector<CellRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    CellRecord rec;
    try {
      rec = record_from_json(ordered_json::parse(line));
    } catch (const Error& e) {
      fail(ErrorKind::Parse, "row " + std::to_string(row) + ": " + e.what());
    } catch (const std::exception& e) {
      fail(ErrorKind::Parse, "row " + std::to_string(row) + ": " + e.what());
    }
    if (!records.empty() && rec.embedding.size() != records.front().embedding.size()) {
      fail(ErrorKind::DimensionMismatch,
           "cell '" + rec.cell_id + "' has embedding length " +
               std::to_string(rec.embedding.size()) + ", expected " +
               std::to_string(records.front().embedding.size()));
    }
    if (!seen.insert(rec.cell_id).second) {
      fail(ErrorKind::DuplicateId,
           "row " + std::to_string(row) + ": duplicate cell_id '" + rec.cell_id + "'");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<CellRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open manifest " + path.string());
  return parse_manifest(in);
}

void write_manifest(std::ostream& out, const std::vector<CellRecord>& records) {
  for (const auto& rec : records) out << record_to_json(rec).dump() << '\n';
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<CellRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write manifest " + path.string());
  write_manifest(out, records);
}

void validate_records(const std::vector<CellRecord>& records) {
  std::unordered_set<std::string> seen;
  for (const auto& rec : records) {
    if (rec.embedding.size() != records.front().embedding.size()) {
      fail(ErrorKind::DimensionMismatch, "cell '" + rec.cell_id + "' has mismatched embedding length");
    }
    if (!seen.insert(rec.cell_id).second) {
      fail(ErrorKind::DuplicateId, "duplicate cell_id '" + rec.cell_id + "'");
    }
  }
}

std::vector<std::string> distinct_patients(const std::vector<CellRecord>& records) {
  std::set<std::string> patients;
  for (const auto& rec : records) patients.insert(rec.patient_id);
  return {patients.begin(), patients.end()};
}

DatasetSplit split_by_patient(const std::vector<CellRecord>& records, int n_train,
                              int n_test, int n_holdout, std::uint64_t seed) {
  if (n_train < 0 || n_test < 0 || n_holdout < 0) {
    fail(ErrorKind::InvalidSpec, "split sizes must be non-negative");
  }
  auto patients = distinct_patients(records);
  const auto wanted = static_cast<std::size_t>(n_train + n_test + n_holdout);
  if (wanted > patients.size()) {
    fail(ErrorKind::InsufficientPatients,
         "requested " + std::to_string(wanted) + " patients, dataset has " +
             std::to_string(patients.size()));
  }
  Rng rng(seed);
  rng.shuffle(patients);
  DatasetSplit split;
  split.seed = seed;
  auto it = patients.begin();
  split.train_patients.insert(it, it + n_train);
  it += n_train;
  split.test_patients.insert(it, it + n_test);
  it += n_test;
  split.holdout_patients.insert(it, it + n_holdout);
  return split;
}

namespace {

std::vector<double> broadcast(const std::vector<double>& values, int n, double fallback,
                              const char* name) {
  if (values.empty()) return std::vector<double>(static_cast<std::size_t>(n), fallback);
  if (values.size() == 1) return std::vector<double>(static_cast<std::size_t>(n), values[0]);
  if (values.size() != static_cast<std::size_t>(n)) {
    fail(ErrorKind::InvalidSpec, std::string(name) + " must have one entry per cluster");
  }
  return values;
}

std::vector<std::vector<double>> place_centers(const SyntheticSpec& spec, Rng& rng) {
  std::vector<std::vector<double>> centers;
  double half_width = spec.center_distance * std::max(1.0, std::pow(spec.n_clusters, 1.0 / spec.dim));
  int attempts = 0;
  while (static_cast<int>(centers.size()) < spec.n_clusters) {
    std::vector<double> c(static_cast<std::size_t>(spec.dim));
    for (auto& v : c) v = (2.0 * rng.uniform() - 1.0) * half_width;
    bool ok = true;
    for (const auto& other : centers) {
      double d2 = 0.0;
      for (int j = 0; j < spec.dim; ++j) d2 += (c[j] - other[j]) * (c[j] - other[j]);
      if (d2 < spec.center_distance * spec.center_distance) ok = false;
    }
    if (ok) {
      centers.push_back(std::move(c));
    } else if (++attempts % 1000 == 0) {
      half_width *= 1.25;
    }
  }
  return centers;
}

}  // namespace

std::vector<CellRecord> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_clusters < 1 || spec.points_per_cluster < 1 || spec.dim < 1 || spec.n_patients < 1) {
    fail(ErrorKind::InvalidSpec, "cluster, point, dimension and patient counts must be positive");
  }
  const auto spread = broadcast(spec.spread, spec.n_clusters, 1.0, "spread");
  const auto overlap = broadcast(spec.class_overlap, spec.n_clusters, 0.0, "class_overlap");
  const auto shift = broadcast(spec.positive_shift, spec.n_clusters, 0.0, "positive_shift");
  for (int k = 0; k < spec.n_clusters; ++k) {
    if (!(spread[k] > 0.0)) fail(ErrorKind::InvalidSpec, "spread must be positive");
    if (!(overlap[k] >= 0.0 && overlap[k] <= 1.0)) {
      fail(ErrorKind::InvalidSpec, "class_overlap must lie in [0, 1]");
    }
  }
  Rng rng(spec.seed);
  std::vector<std::vector<double>> centers;
  if (spec.centers) {
    centers = *spec.centers;
    if (centers.size() != static_cast<std::size_t>(spec.n_clusters)) {
      fail(ErrorKind::InvalidSpec, "centers must have one entry per cluster");
    }
    for (const auto& c : centers) {
      if (c.size() != static_cast<std::size_t>(spec.dim)) {
        fail(ErrorKind::InvalidSpec, "center dimensionality must equal dim");
      }
    }
  } else {
    centers = place_centers(spec, rng);
  }

  std::vector<CellRecord> records;
  records.reserve(static_cast<std::size_t>(spec.n_clusters) * spec.points_per_cluster);
  char id[48];
  for (int k = 0; k < spec.n_clusters; ++k) {
    for (int i = 0; i < spec.points_per_cluster; ++i) {
      CellRecord rec;
      std::snprintf(id, sizeof id, "b%d-%05d", k, i);
      rec.cell_id = id;
      std::snprintf(id, sizeof id, "P%02d", static_cast<int>(rng.index(spec.n_patients)));
      rec.patient_id = id;
      rec.embedding.resize(static_cast<std::size_t>(spec.dim));
      for (int j = 0; j < spec.dim; ++j) rec.embedding[j] = centers[k][j] + spread[k] * rng.normal();
      const double local = (rec.embedding[0] - centers[k][0]) / spread[k] - shift[k];
      const double p_ctc = (1.0 - overlap[k]) * (local > 0.0 ? 1.0 : 0.0) + 0.5 * overlap[k];
      rec.label = rng.uniform() < p_ctc ? Label::Ctc : Label::NonCtc;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

int synthetic_blob_of(std::string_view cell_id) {
  if (cell_id.size() < 2 || cell_id[0] != 'b') return -1;
  int blob = -1;
  const auto* end = cell_id.data() + cell_id.size();
  auto [ptr, ec] = std::from_chars(cell_id.data() + 1, end, blob);
  if (ec != std::errc() || ptr == end || *ptr != '-') return -1;
  return blob;
}

Eigen::MatrixXd embedding_matrix(const std::vector<CellRecord>& records) {
  if (records.empty()) return {};
  const auto dim = static_cast<Eigen::Index>(records.front().embedding.size());
  Eigen::MatrixXd X(static_cast<Eigen::Index>(records.size()), dim);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (static_cast<Eigen::Index>(records[i].embedding.size()) != dim) {
      fail(ErrorKind::DimensionMismatch, "cell '" + records[i].cell_id + "' has mismatched embedding length");
    }
    X.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(records[i].embedding.data(), dim);
  }
  return X;
}

}  // namespace hilctc
