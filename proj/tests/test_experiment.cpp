#include "test_support.hpp"

#include "st3d/error.hpp"
#include "st3d/experiment.hpp"
#include "st3d/synthetic.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

using namespace st3d;

namespace {

std::vector<SampleSummary> summaries(int n) {
  std::vector<SampleSummary> out;
  for (int i = 0; i < n; ++i) out.push_back({"s" + std::to_string(i), {0, 1, 2}});
  return out;
}

std::vector<SampleStack> synthetic_batch(int n, double rho, double jitter, int spots = 30) {
  std::vector<SampleStack> out;
  for (int i = 0; i < n; ++i) {
    SyntheticSpec spec;
    spec.spots_per_layer = spots;
    spec.genes = 6;
    spec.feature_dim = 6;
    spec.rho = rho;
    spec.jitter = jitter;
    spec.seed = 200 + static_cast<std::uint64_t>(i);
    out.push_back(generate_synthetic(spec));
  }
  return out;
}

ExperimentConfig quick(Method m) {
  ExperimentConfig cfg;
  cfg.method = m;
  cfg.n_folds = 2;
  cfg.model.hidden_dim = 8;
  cfg.model.gat_layers = 1;
  cfg.train.steps = 6;
  return cfg;
}

}  // namespace

TEST_CASE("folds partition the samples") {
  for (auto [n, k] : {std::pair{4, 4}, std::pair{9, 3}, std::pair{7, 3}}) {
    const auto folds = make_folds(summaries(n), k, KnownLayerRule::first, 0.2, 5);
    REQUIRE(folds.size() == static_cast<std::size_t>(k));
    std::multiset<std::string> tested;
    for (const auto& f : folds) {
      CHECK(f.test_samples.size() >= static_cast<std::size_t>(n / k));
      for (const auto& t : f.test_samples) {
        tested.insert(t);
        CHECK(std::find(f.train_samples.begin(), f.train_samples.end(), t) == f.train_samples.end());
        CHECK(f.known_layer_index.at(t) == 0);
      }
      CHECK(f.train_samples.size() + f.test_samples.size() == static_cast<std::size_t>(n));
    }
    CHECK(tested.size() == static_cast<std::size_t>(n));
    CHECK(std::set<std::string>(tested.begin(), tested.end()).size() == static_cast<std::size_t>(n));
  }
  const auto a = make_folds(summaries(8), 4, KnownLayerRule::first, 0.2, 1);
  const auto b = make_folds(summaries(8), 4, KnownLayerRule::first, 0.2, 1);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].test_samples == b[i].test_samples);
  CHECK(make_folds(summaries(3), 1, KnownLayerRule::last, 0.2, 0)[0].known_layer_index.at("s0") == 2);
  CHECK_THROWS_AS(make_folds(summaries(3), 4, KnownLayerRule::first, 0.2, 0), UsageError);
}

TEST_CASE("known spot selection") {
  const SampleStack s = synthetic_batch(1, 0.8, 10)[0];
  const Mask m = select_known_spots(s, 0, 0.2, 3);
  CHECK(std::count(m.begin(), m.end(), true) == 18);  // round(0.2 * 90)
  for (std::size_t i = 30; i < m.size(); ++i) CHECK_FALSE(m[i]);
  CHECK(m == select_known_spots(s, 0, 0.2, 3));
  const Mask capped = select_known_spots(s, 0, 0.9, 3);
  CHECK(std::count(capped.begin(), capped.end(), true) == 30);
  const Mask none = select_known_spots(s, 0, 0.0, 3);
  CHECK(std::none_of(none.begin(), none.end(), [](bool b) { return b; }));
}

TEST_CASE("overlap on perfectly correlated aligned data copies labels") {
  const auto data = synthetic_batch(4, 1.0, 0.0);
  ExperimentConfig cfg = quick(Method::overlap);
  cfg.known_ratio = 1.0 / 3.0;  // whole first layer
  const RunReport r = run_experiment(data, cfg);
  for (const auto& f : r.folds) {
    CHECK(f.unreached_spots == 0);
    CHECK(f.pcc == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("similarity with m = 1 copies a feature twin") {
  SampleStack s = synthetic_batch(1, 0.8, 10)[0];
  const Mask known = select_known_spots(s, 0, 0.2, 1);
  const auto first_known = static_cast<Eigen::Index>(std::find(known.begin(), known.end(), true) - known.begin());
  s.features.values.row(45) = s.features.values.row(first_known);
  const auto r = similarity_impute(s.features, s.expression, known, 1);
  CHECK(r.predictions.values.row(45) == s.expression.values.row(first_known));
}

TEST_CASE("report aggregates and leakage tracking") {
  const auto data = synthetic_batch(4, 0.8, 10);
  for (Method m : {Method::asign3d, Method::propagation_only, Method::similarity}) {
    const RunReport r = run_experiment(data, quick(m));
    double mse = 0, pcc = 0;
    for (const auto& f : r.folds) {
      mse += f.mse / static_cast<double>(r.folds.size());
      pcc += f.pcc / static_cast<double>(r.folds.size());
    }
    CHECK(std::abs(r.mse - mse) < 1e-12);
    CHECK(std::abs(r.pcc - pcc) < 1e-12);
    if (m != Method::asign3d) continue;
    for (const auto& f : r.folds) {
      const std::set<std::string> used(f.loss_spot_ids.begin(), f.loss_spot_ids.end());
      for (const auto& p : f.predictions) {
        for (std::size_t i = 0; i < p.spot_ids.size(); ++i) {
          if (p.eval_rows[i]) CHECK(used.count(p.spot_ids[i]) == 0);
        }
      }
      CHECK_FALSE(used.empty());
    }
  }
}

TEST_CASE("reports are deterministic and threads do not change them") {
  const auto data = synthetic_batch(4, 0.8, 10);
  ExperimentConfig cfg = quick(Method::asign3d);
  const std::string one = report_json(run_experiment(data, cfg));
  cfg.jobs = 2;
  const std::string two = report_json(run_experiment(data, cfg));
  CHECK(one == two);
  const auto j = nlohmann::json::parse(one);
  CHECK(j.at("schema_version") == 1);
  CHECK(j.at("pcc_axis") == "per_gene_across_spots");
  CHECK(j.at("folds").size() == 2);
}

TEST_CASE("run outputs") {
  testing::TempDir dir("exp");
  const auto data = synthetic_batch(2, 0.8, 10);
  ExperimentConfig cfg = quick(Method::propagation_only);
  const RunReport r = run_experiment(data, cfg);
  write_run_outputs(r, dir.path());
  CHECK(std::filesystem::exists(dir.path() / "report.json"));
  CHECK(std::filesystem::exists(dir.path() / "timing.json"));
  for (const auto& s : data) {
    CHECK(std::filesystem::exists(dir.path() / "predictions" / (s.sample_id + ".expression.tsv")));
    CHECK(std::filesystem::exists(dir.path() / "predictions" / (s.sample_id + ".provenance.tsv")));
  }
}

TEST_CASE("experiment errors") {
  const auto data = synthetic_batch(2, 0.8, 10);
  ExperimentConfig cfg = quick(Method::overlap);
  cfg.known_ratio = 0.0;
  CHECK_THROWS_AS(run_experiment(data, cfg), UsageError);
  cfg.n_folds = 3;
  CHECK_THROWS_AS(run_experiment(data, cfg), UsageError);
  CHECK_THROWS_AS(method_from_string("bogus"), UsageError);
  for (Method m : {Method::asign3d, Method::asign2d, Method::overlap, Method::similarity, Method::propagation_only}) {
    CHECK(method_from_string(to_string(m)) == m);
  }
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
}
