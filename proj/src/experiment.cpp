#include "st3d/experiment.hpp"

#include "st3d/error.hpp"
#include "st3d/io.hpp"
#include "st3d/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>
#include <unordered_map>

namespace st3d {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

const char* to_string(Method m) {
  switch (m) {
    case Method::asign3d: return "asign3d";
    case Method::asign2d: return "asign2d";
    case Method::overlap: return "overlap";
    case Method::similarity: return "similarity";
    case Method::propagation_only: return "propagation_only";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::asign3d, Method::asign2d, Method::overlap, Method::similarity, Method::propagation_only}) {
    if (s == to_string(m)) return m;
  }
  throw UsageError("unknown method '" + s + "' (expected asign3d, asign2d, overlap, similarity or propagation_only)");
}

const char* to_string(KnownLayerRule r) { return r == KnownLayerRule::first ? "first" : "last"; }

KnownLayerRule known_layer_rule_from_string(const std::string& s) {
  if (s == "first") return KnownLayerRule::first;
  if (s == "last") return KnownLayerRule::last;
  throw UsageError("unknown known-layer rule '" + s + "' (expected first or last)");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<SampleSummary> summarize(const std::vector<SampleStack>& stacks) {
  std::vector<SampleSummary> out;
  for (const auto& s : stacks) {
    SampleSummary sum{s.sample_id, {}};
    for (const auto& l : s.layers) sum.layer_indices.push_back(l.layer_index);
    std::sort(sum.layer_indices.begin(), sum.layer_indices.end());
    out.push_back(std::move(sum));
  }
  return out;
}

int known_layer_for(const SampleSummary& sample, KnownLayerRule rule) {
  if (sample.layer_indices.empty()) throw DataError("sample " + sample.sample_id + " has no layers");
  return rule == KnownLayerRule::first ? sample.layer_indices.front() : sample.layer_indices.back();
}

std::vector<FoldSpec> make_folds(const std::vector<SampleSummary>& samples, int n_folds, KnownLayerRule rule,
                                 double known_ratio, std::uint64_t seed) {
  if (n_folds < 1) throw UsageError("make_folds: need at least one fold");
  if (static_cast<std::size_t>(n_folds) > samples.size()) {
    throw UsageError("make_folds: " + std::to_string(n_folds) + " folds for " + std::to_string(samples.size()) +
                     " samples");
  }
  if (!(known_ratio >= 0.0 && known_ratio <= 1.0)) throw UsageError("make_folds: known ratio must lie in [0, 1]");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  ad::Rng rng(derive_seed(seed, 0xf01d));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<int> fold_of(samples.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) fold_of[order[pos]] = static_cast<int>(pos % n_folds);

  std::vector<FoldSpec> folds(static_cast<std::size_t>(n_folds));
  for (int f = 0; f < n_folds; ++f) {
    auto& fold = folds[static_cast<std::size_t>(f)];
    fold.fold_id = f;
    fold.known_ratio = known_ratio;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (fold_of[i] == f) {
        fold.test_samples.push_back(samples[i].sample_id);
        fold.known_layer_index[samples[i].sample_id] = known_layer_for(samples[i], rule);
      } else {
        fold.train_samples.push_back(samples[i].sample_id);
      }
    }
  }
  return folds;
}

Mask select_known_spots(const SampleStack& stack, int known_layer_index, double known_ratio, std::uint64_t seed) {
  if (!(known_ratio >= 0.0 && known_ratio <= 1.0)) throw UsageError("known ratio must lie in [0, 1]");
  const auto layers = stack.row_layers();
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] == known_layer_index) candidates.push_back(i);
  }
  if (candidates.empty()) {
    throw DataError("sample " + stack.sample_id + " has no spots on known layer " + std::to_string(known_layer_index));
  }
  const auto wanted = static_cast<std::size_t>(std::lround(known_ratio * static_cast<double>(layers.size())));
  const std::size_t count = std::min(wanted, candidates.size());
  ad::Rng rng(seed);
  for (std::size_t i = candidates.size(); i > 1; --i) std::swap(candidates[i - 1], candidates[rng.index(i)]);
  Mask known(layers.size(), false);
  for (std::size_t k = 0; k < count; ++k) known[candidates[k]] = true;
  return known;
}

namespace {

bool any_true(const Mask& m) { return std::any_of(m.begin(), m.end(), [](bool b) { return b; }); }

Mask negate(const Mask& m) {
  Mask out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = !m[i];
  return out;
}

template <typename E>
[[noreturn]] void rethrow_with_context(const E& e, const std::string& context) {
  throw E(context + ": " + e.what());
}

struct Dataset {
  const std::vector<SampleStack>& samples;
  std::unordered_map<std::string, std::size_t> position;

  explicit Dataset(const std::vector<SampleStack>& s) : samples(s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!position.emplace(s[i].sample_id, i).second) throw DataError("duplicate sample id " + s[i].sample_id);
    }
  }

  std::size_t index(const std::string& id) const {
    const auto it = position.find(id);
    if (it == position.end()) throw UsageError("fold refers to unknown sample " + id);
    return it->second;
  }
  const SampleStack& get(const std::string& id) const { return samples[index(id)]; }
};

SpatialGraph graph_for(const SampleStack& stack, const ExperimentConfig& cfg) {
  if (cfg.method == Method::asign2d) return build_2d_graph(stack, cfg.k_2d);
  return build_3d_graph(stack, cfg.k_intra, cfg.k_cross);
}

Mask known_for(const Dataset& data, const std::string& id, int layer, const ExperimentConfig& cfg, double ratio) {
  return select_known_spots(data.get(id), layer, ratio, derive_seed(cfg.seed, 0x10000 + data.index(id)));
}

FoldResult run_fold_impl(const Dataset& data, const FoldSpec& fold, const ExperimentConfig& cfg) {
  if (fold.test_samples.empty()) throw UsageError("fold has no test samples");
  FoldResult out;
  out.spec = fold;

  std::vector<Mask> known;
  std::vector<SpatialGraph> graphs;
  for (const auto& id : fold.test_samples) {
    const auto layer = fold.known_layer_index.find(id);
    if (layer == fold.known_layer_index.end()) throw UsageError("no known layer for test sample " + id);
    known.push_back(known_for(data, id, layer->second, cfg, fold.known_ratio));
    graphs.push_back(graph_for(data.get(id), cfg));
  }

  std::optional<Msagnet> model;
  double alpha = 1.0;
  if (cfg.method == Method::asign3d || cfg.method == Method::asign2d) {
    std::vector<std::string> fit = fold.train_samples;
    if (fit.size() >= 2) {
      out.validation_sample = fit.back();
      fit.pop_back();
    }
    std::vector<TrainingSample> training;
    for (const auto& id : fit) {
      const auto& s = data.get(id);
      training.push_back(make_training_sample(s, graph_for(s, cfg), Mask(s.spot_count(), true)));
    }
    for (std::size_t t = 0; t < fold.test_samples.size(); ++t) {
      if (any_true(known[t])) {
        training.push_back(make_training_sample(data.get(fold.test_samples[t]), graphs[t], known[t]));
      }
    }
    if (training.empty()) throw UsageError("no labeled spots available for training");

    ModelConfig mc = cfg.model;
    const auto& first = data.get(fold.test_samples.front());
    mc.feature_dim = static_cast<int>(first.features.cols());
    mc.gene_count = static_cast<int>(first.expression.cols());
    model.emplace(mc, derive_seed(cfg.seed, 0x20000 + static_cast<std::uint64_t>(fold.fold_id)));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, 0x30000 + static_cast<std::uint64_t>(fold.fold_id));
    const TrainResult tr = train(*model, training, tc);
    out.first_train_loss = tr.trace.front().total;
    out.final_train_loss = tr.trace.back().total;
    out.loss_spot_ids = tr.loss_spot_ids;

    if (cfg.fusion_alpha) {
      alpha = *cfg.fusion_alpha;
    } else if (fold.known_ratio > 0.0 && !fold.train_samples.empty()) {
      const std::string vid = out.validation_sample ? *out.validation_sample : fold.train_samples.front();
      const auto& vs = data.get(vid);
      const int vlayer = known_layer_for(summarize({vs}).front(), cfg.known_layer);
      const Mask vknown = known_for(data, vid, vlayer, cfg, fold.known_ratio);
      if (any_true(vknown)) {
        const SpatialGraph vgraph = graph_for(vs, cfg);
        const Predictions p = model->forward(ModelInputs::from_stack(vs, vgraph));
        const ImputationResult prop = propagate_labels(vgraph, vs.expression, vknown, cfg.propagation);
        alpha = select_fusion_alpha(p.p_s, prop.predictions.values, vs.expression.values, negate(vknown));
      }
    }
    out.fusion_alpha = alpha;
  }

  for (std::size_t t = 0; t < fold.test_samples.size(); ++t) {
    const auto& id = fold.test_samples[t];
    const auto& s = data.get(id);
    const bool has_known = any_true(known[t]);
    if (!has_known && !model) {
      throw UsageError(std::string(to_string(cfg.method)) + " needs known spots; known ratio " +
                       std::to_string(fold.known_ratio) + " selects none in sample " + id);
    }
    SamplePrediction sp;
    sp.sample_id = id;
    sp.spot_ids = s.spot_ids();
    sp.eval_rows = negate(known[t]);
    switch (cfg.method) {
      case Method::asign3d:
      case Method::asign2d:
        sp.result = predict_with_imputation(s, graphs[t], *model, known[t], alpha, cfg.propagation);
        break;
      case Method::overlap: sp.result = overlap_impute(s, s.expression, known[t]); break;
      case Method::similarity: sp.result = similarity_impute(s.features, s.expression, known[t], cfg.similarity_m); break;
      case Method::propagation_only: sp.result = propagate_labels(graphs[t], s.expression, known[t], cfg.propagation); break;
    }
    if (!any_true(sp.eval_rows)) throw UsageError("sample " + id + " has no unknown spots to evaluate");
    const Matrix pred = select_rows(sp.result.predictions.values, sp.eval_rows);
    const Matrix truth = select_rows(s.expression.values, sp.eval_rows);
    const PccSummary pcc = metric_pcc(pred, truth);
    out.mse += metric_mse(pred, truth);
    out.mae += metric_mae(pred, truth);
    out.pcc += pcc.value;
    out.pcc_skipped_genes += pcc.skipped_genes;
    out.eval_spots += static_cast<int>(pred.rows());
    for (std::size_t i = 0; i < sp.eval_rows.size(); ++i) {
      if (sp.eval_rows[i] && sp.result.provenance[i] == Provenance::unreached) ++out.unreached_spots;
    }
    out.predictions.push_back(std::move(sp));
  }
  const auto n = static_cast<double>(fold.test_samples.size());
  out.mse /= n;
  out.mae /= n;
  out.pcc /= n;
  return out;
}

}  // namespace

FoldResult run_fold(const std::vector<SampleStack>& samples, const FoldSpec& fold, const ExperimentConfig& cfg) {
  const Dataset data(samples);
  const std::string context = "fold " + std::to_string(fold.fold_id);
  try {
    return run_fold_impl(data, fold, cfg);
  } catch (const FormatError& e) {
    rethrow_with_context(e, context);
  } catch (const GeometryError& e) {
    rethrow_with_context(e, context);
  } catch (const DegenerateFeatureError& e) {
    rethrow_with_context(e, context);
  } catch (const DataError& e) {
    rethrow_with_context(e, context);
  } catch (const UsageError& e) {
    rethrow_with_context(e, context);
  } catch (const TrainingDivergedError& e) {
    rethrow_with_context(e, context);
  }
}

RunReport run_experiment(const std::vector<SampleStack>& samples, const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  if (cfg.jobs < 1) throw UsageError("jobs must be at least 1");
  for (const auto& s : samples) require_valid(s);
  RunReport report;
  report.config = cfg;
  const auto folds = make_folds(summarize(samples), cfg.n_folds, cfg.known_layer, cfg.known_ratio, cfg.seed);
  report.folds.resize(folds.size());

  std::vector<std::exception_ptr> errors(folds.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    for (std::size_t f = next++; f < folds.size(); f = next++) {
      try {
        report.folds[f] = run_fold(samples, folds[f], cfg);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), folds.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (const auto& f : report.folds) {
    report.mse += f.mse;
    report.mae += f.mae;
    report.pcc += f.pcc;
  }
  const auto n = static_cast<double>(report.folds.size());
  report.mse /= n;
  report.mae /= n;
  report.pcc /= n;
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

ordered_json config_json(const ExperimentConfig& c) {
  ordered_json j;
  j["method"] = to_string(c.method);
  j["n_folds"] = c.n_folds;
  j["known_ratio"] = c.known_ratio;
  j["known_layer"] = to_string(c.known_layer);
  j["seed"] = c.seed;
  j["k_intra"] = c.k_intra;
  j["k_cross"] = c.k_cross;
  j["k_2d"] = c.k_2d;
  j["propagation_iterations"] = c.propagation.iterations;
  j["similarity_m"] = c.similarity_m;
  j["fusion_alpha"] = c.fusion_alpha ? ordered_json(*c.fusion_alpha) : ordered_json(nullptr);
  const auto& m = c.model;
  j["model"] = {{"hidden_dim", m.hidden_dim},
                {"gat_layers", m.gat_layers},
                {"gat_heads", m.gat_heads},
                {"transformer_heads", m.transformer_heads},
                {"use_cross_attention", m.use_cross_attention},
                {"use_gat", m.use_gat},
                {"lambda_s", m.loss.lambda_s},
                {"lambda_r", m.loss.lambda_r},
                {"lambda_g", m.loss.lambda_g},
                {"lambda_1", m.loss.lambda_1},
                {"lambda_2", m.loss.lambda_2},
                {"gamma_1", m.loss.gamma_1},
                {"gamma_2", m.loss.gamma_2}};
  const auto& t = c.train;
  j["train"] = {{"lr0", t.lr0},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"final_lr_fraction", t.final_lr_fraction},
                {"batch_size", t.batch_size},
                {"steps", t.steps}};
  return j;
}

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

}  // namespace

std::string report_json(const RunReport& report) {
  ordered_json j;
  j["schema_version"] = report.schema_version;
  j["method"] = to_string(report.config.method);
  j["pcc_axis"] = "per_gene_across_spots";
  j["evaluated_spots"] = "unknown_spots_of_test_samples";
  j["config"] = config_json(report.config);
  ordered_json folds = ordered_json::array();
  for (const auto& f : report.folds) {
    ordered_json fj;
    fj["fold_id"] = f.spec.fold_id;
    fj["train_samples"] = f.spec.train_samples;
    fj["validation_sample"] = f.validation_sample ? ordered_json(*f.validation_sample) : ordered_json(nullptr);
    fj["test_samples"] = f.spec.test_samples;
    ordered_json layers = ordered_json::object();
    for (const auto& id : f.spec.test_samples) layers[id] = f.spec.known_layer_index.at(id);
    fj["known_layer_index"] = layers;
    fj["known_ratio"] = f.spec.known_ratio;
    fj["fusion_alpha"] = optional_number(f.fusion_alpha);
    fj["mse"] = f.mse;
    fj["mae"] = f.mae;
    fj["pcc"] = f.pcc;
    fj["pcc_skipped_genes"] = f.pcc_skipped_genes;
    fj["eval_spots"] = f.eval_spots;
    fj["unreached_spots"] = f.unreached_spots;
    fj["first_train_loss"] = optional_number(f.first_train_loss);
    fj["final_train_loss"] = optional_number(f.final_train_loss);
    folds.push_back(std::move(fj));
  }
  j["folds"] = folds;
  j["aggregate"] = {{"mse", report.mse}, {"mae", report.mae}, {"pcc", report.pcc}};
  return j.dump(2) + "\n";
}

void write_run_outputs(const RunReport& report, const fs::path& dir) {
  fs::create_directories(dir / "predictions");
  {
    std::ofstream out(dir / "report.json", std::ios::binary);
    out << report_json(report);
    if (!out) throw DataError("failed writing " + (dir / "report.json").string());
  }
  {
    std::ofstream out(dir / "timing.json", std::ios::binary);
    out << ordered_json{{"wall_clock_seconds", report.wall_clock_seconds}}.dump(2) << "\n";
  }
  for (const auto& f : report.folds) {
    for (const auto& p : f.predictions) {
      io::write_expression_tsv(p.result.predictions, p.spot_ids, dir / "predictions" / (p.sample_id + ".expression.tsv"));
      write_provenance_tsv(p.result, p.spot_ids, dir / "predictions" / (p.sample_id + ".provenance.tsv"));
    }
  }
}

}  // namespace st3d
