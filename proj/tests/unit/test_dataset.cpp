#include <doctest.h>

#include <functional>
#include <set>
#include <sstream>

#include "hilctc/classify.hpp"
#include "hilctc/error.hpp"
#include "hilctc/metrics.hpp"
#include "support.hpp"

using namespace hilctc;

namespace {

std::string manifest_row(const std::string& id, const std::string& patient, std::size_t dim, const char* label) {
  std::string emb = "[";
  for (std::size_t i = 0; i < dim; ++i) emb += (i ? ",0.5" : "0.5");
  emb += "]";
  return R"({"cell_id":")" + id + R"(","patient_id":")" + patient + R"(","embedding":)" + emb +
         R"(,"label":)" + label + "}\n";
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("three-row manifest parses labels") {
  std::istringstream in(manifest_row("c1", "p1", 4, "\"CTC\"") + manifest_row("c2", "p1", 4, "\"NON_CTC\"") +
                        manifest_row("c3", "p2", 4, "null"));
  const auto records = parse_manifest(in);
  REQUIRE(records.size() == 3);
  CHECK(records[0].label == Label::Ctc);
  CHECK(records[1].label == Label::NonCtc);
  CHECK_FALSE(records[2].label.has_value());
  CHECK(distinct_patients(records).size() == 2);
}

TEST_CASE("manifest errors name the row or cell") {
  {
    std::istringstream in(manifest_row("a", "p", 128, "null") + manifest_row("b", "p", 127, "null"));
    try {
      parse_manifest(in);
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DimensionMismatch);
      CHECK(std::string(e.what()).find("'b'") != std::string::npos);
    }
  }
  {
    std::istringstream in(manifest_row("a", "p", 2, "null") + manifest_row("a", "p", 2, "null"));
    CHECK(kind_of([&] { parse_manifest(in); }) == ErrorKind::DuplicateId);
  }
  {
    std::istringstream in(manifest_row("a", "p", 2, "null") + "{not json\n");
    try {
      parse_manifest(in);
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Parse);
      CHECK(std::string(e.what()).rfind("row 2", 0) == 0);
    }
  }
}

TEST_CASE("manifest round trip preserves every field") {
  Rng rng(5);
  std::vector<CellRecord> records;
  for (int i = 0; i < 40; ++i) {
    CellRecord r;
    r.cell_id = "cell-" + std::to_string(i);
    r.patient_id = "p" + std::to_string(i % 4);
    for (int d = 0; d < 6; ++d) r.embedding.push_back(rng.normal() * 1e3);
    if (i % 3) r.label = i % 2 ? Label::Ctc : Label::NonCtc;
    if (i % 5 == 0) r.noisy = i % 10 == 0;
    if (i % 4 == 0) r.image_ref = "img/" + r.cell_id + ".png";
    if (i % 2 == 0) {
      r.cartridge_id = "cart-" + std::to_string(i % 3);
      r.cartridge_xy = std::pair{rng.uniform() * 1000, rng.uniform() * 1000};
    }
    records.push_back(r);
  }
  std::ostringstream out;
  write_manifest(out, records);
  std::istringstream in(out.str());
  CHECK(parse_manifest(in) == records);
}

TEST_CASE("patient split is deterministic and disjoint") {
  std::vector<CellRecord> records;
  for (int p = 0; p < 90; ++p) {
    for (int c = 0; c < 3; ++c) {
      records.push_back({"c" + std::to_string(p) + "-" + std::to_string(c), "p" + std::to_string(p), {0.0}, {}, {}, {}, {}, {}});
    }
  }
  const auto a = split_by_patient(records, 10, 10, 10, 1);
  std::set<std::string> all;
  for (const auto* s : {&a.train_patients, &a.test_patients, &a.holdout_patients}) all.insert(s->begin(), s->end());
  CHECK(all.size() == 30);

  std::vector<CellRecord> twenty(records.begin(), records.begin() + 60);
  const auto x = split_by_patient(twenty, 10, 10, 0, 7);
  const auto y = split_by_patient(twenty, 10, 10, 0, 7);
  CHECK(x.train_patients == y.train_patients);
  CHECK(x.test_patients == y.test_patients);
  CHECK(kind_of([&] { split_by_patient(twenty, 10, 10, 5, 7); }) == ErrorKind::InsufficientPatients);
}

TEST_CASE("synthetic generator is deterministic and validates its spec") {
  const auto spec = testing::small_spec();
  CHECK(generate_synthetic(spec) == generate_synthetic(spec));
  auto other = spec;
  other.seed = 4;
  CHECK_FALSE(generate_synthetic(other) == generate_synthetic(spec));

  auto bad = spec;
  bad.class_overlap = {0.1, 1.5, 0.1};
  CHECK(kind_of([&] { generate_synthetic(bad); }) == ErrorKind::InvalidSpec);
  bad = spec;
  bad.spread = {0.0};
  CHECK(kind_of([&] { generate_synthetic(bad); }) == ErrorKind::InvalidSpec);
}

TEST_CASE("separable synthetic clusters are learned perfectly") {
  SyntheticSpec spec;
  spec.n_clusters = 2;
  spec.points_per_cluster = 150;
  spec.dim = 2;
  spec.spread = {1.0};
  spec.class_overlap = {0.0, 0.0};
  spec.center_distance = 20.0;
  spec.seed = 11;
  const auto records = generate_synthetic(spec);
  const Eigen::MatrixXd X = embedding_matrix(records);
  std::vector<Label> y;
  std::vector<int> blob;
  for (const auto& r : records) {
    y.push_back(*r.label);
    blob.push_back(synthetic_blob_of(r.cell_id));
  }
  SvmConfig cfg;
  cfg.C = 1e4;
  cfg.gamma = 0.5;  // kernel width on the scale of one blob
  const auto model = svm_fit(X, y, cfg);
  const auto metrics = per_cluster_metrics(predict(model, X), y, blob);
  CHECK(metrics.per_cluster.at(0).f1 == doctest::Approx(1.0));
  CHECK(metrics.per_cluster.at(1).f1 == doctest::Approx(1.0));
}

TEST_CASE("overlap one makes labels independent of position") {
  // A classifier trained on one seed and scored on another cannot beat the
  // always-CTC baseline by more than noise.
  double gap_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticSpec spec;
    spec.n_clusters = 1;
    spec.points_per_cluster = 400;
    spec.dim = 2;
    spec.spread = {1.0};
    spec.class_overlap = {1.0};
    spec.seed = seed;
    auto train = generate_synthetic(spec);
    spec.seed = seed + 100;
    auto test = generate_synthetic(spec);
    std::vector<Label> ytr, yte;
    for (const auto& r : train) ytr.push_back(*r.label);
    for (const auto& r : test) yte.push_back(*r.label);
    const auto model = svm_fit(embedding_matrix(train), ytr, SvmConfig{});
    const double f1 = f1_score(confusion(predict(model, embedding_matrix(test)), yte));
    const std::vector<Label> all_ctc(yte.size(), Label::Ctc);
    gap_sum += f1 - f1_score(confusion(all_ctc, yte));
  }
  CHECK(gap_sum / 5.0 <= 0.05);
}

TEST_CASE("class overlap degrades the best within-cluster F1") {
  // Labels come from the step rule on the first coordinate, so the oracle
  // predictor x0 > center0 is the Bayes rule; its F1 must fall as overlap rises.
  double previous = 1.1;
  for (double overlap : {0.0, 0.3, 0.6, 0.9}) {
    SyntheticSpec spec;
    spec.n_clusters = 1;
    spec.points_per_cluster = 4000;
    spec.dim = 2;
    spec.spread = {1.0};
    spec.class_overlap = {overlap};
    spec.centers = std::vector<std::vector<double>>{{0.0, 0.0}};
    spec.seed = 9;
    const auto records = generate_synthetic(spec);
    std::vector<Label> pred, truth;
    for (const auto& r : records) {
      pred.push_back(r.embedding[0] > 0.0 ? Label::Ctc : Label::NonCtc);
      truth.push_back(*r.label);
    }
    const double f1 = f1_score(confusion(pred, truth));
    CHECK(f1 < previous);
    previous = f1;
  }
}

}  // TEST_SUITE
