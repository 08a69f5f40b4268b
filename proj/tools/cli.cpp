#include "cli.hpp"

#include "st3d/error.hpp"
#include "st3d/experiment.hpp"
#include "st3d/graph.hpp"
#include "st3d/heatmap.hpp"
#include "st3d/io.hpp"
#include "st3d/metrics.hpp"
#include "st3d/msagnet.hpp"
#include "st3d/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace st3d::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_file;
  std::string manifest;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool verbose = false;

  // synth
  int samples = 4;
  SyntheticSpec synth;

  // graphs
  std::string graph_mode = "3d";
  std::size_t k_intra = kDefaultIntraK;
  std::size_t k_cross = kDefaultCrossK;
  std::size_t k_2d = kDefault2dK;
  std::string graph_dir;

  // known spots
  double known_ratio = 0.2;
  std::string known_layer = "first";

  // imputation
  std::string impute_method = "propagation";
  int iterations = 10;
  int similarity_m = kDefaultSimilarityNeighbors;

  // model and training
  ModelConfig model = ModelConfig::toy();
  TrainConfig train = TrainConfig::toy();
  bool no_cross_attention = false;
  bool no_gat = false;

  // predict
  std::string model_dir;
  double alpha = 0.5;

  // evaluate
  std::string method = "asign3d";
  int folds = 4;
  int jobs = 1;
  double fixed_alpha = -1.0;

  // heatmap
  std::string sample;
  std::string gene;
  std::string predictions;
};

void add_common(CLI::App* app, Options& o, bool needs_output) {
  app->add_option("--config", o.config_file, "Read key = value defaults from a file; flags override it");
  app->add_option("--seed", o.seed, "Seed for every random choice")->capture_default_str();
  app->add_flag("-v,--verbose", o.verbose, "Print progress to stderr");
  if (needs_output) app->add_option("-o,--output", o.out_dir, "Output directory")->required();
}

void add_manifest(CLI::App* app, Options& o) {
  app->add_option("manifest", o.manifest, "Dataset manifest (JSON)")->required();
}

void add_graph_options(CLI::App* app, Options& o) {
  app->add_option("--graph-mode", o.graph_mode, "3d (intra + cross-layer edges) or 2d (intra-layer only)")
      ->check(CLI::IsMember({"3d", "2d"}))
      ->capture_default_str();
  app->add_option("--k-intra", o.k_intra, "Intra-layer neighbors per spot")->capture_default_str();
  app->add_option("--k-cross", o.k_cross, "Cross-layer neighbors per spot")->capture_default_str();
  app->add_option("--k-2d", o.k_2d, "Neighbors per spot in the 2d graph")->capture_default_str();
}

void add_known_options(CLI::App* app, Options& o) {
  app->add_option("--known-ratio", o.known_ratio,
                  "Fraction of a sample's spots with known labels, used when the spots table marks none")
      ->capture_default_str();
  app->add_option("--known-layer", o.known_layer, "Layer holding the known spots: first or last")
      ->check(CLI::IsMember({"first", "last"}))
      ->capture_default_str();
  app->add_option("--iterations", o.iterations, "Label propagation iterations")->capture_default_str();
}

void add_model_options(CLI::App* app, Options& o) {
  auto& m = o.model;
  auto& t = o.train;
  app->add_option("--hidden-dim", m.hidden_dim, "Hidden width")->capture_default_str();
  app->add_option("--gat-layers", m.gat_layers, "Graph-attention stages")->capture_default_str();
  app->add_option("--gat-heads", m.gat_heads, "Heads per graph-attention layer")->capture_default_str();
  app->add_option("--transformer-heads", m.transformer_heads, "Heads per transformer block")->capture_default_str();
  app->add_flag("--no-cross-attention", o.no_cross_attention, "Drop the region/global cross-attention branch");
  app->add_flag("--no-gat", o.no_gat, "Replace graph attention with self-only attention");
  app->add_option("--lambda-s", m.loss.lambda_s, "PCC loss weight at spot level")->capture_default_str();
  app->add_option("--lambda-r", m.loss.lambda_r, "PCC loss weight at region level")->capture_default_str();
  app->add_option("--lambda-g", m.loss.lambda_g, "PCC loss weight at global level")->capture_default_str();
  app->add_option("--lambda-1", m.loss.lambda_1, "Spot/region consistency weight")->capture_default_str();
  app->add_option("--lambda-2", m.loss.lambda_2, "Spot/global consistency weight")->capture_default_str();
  app->add_option("--gamma-1", m.loss.gamma_1, "Weight of the prediction loss")->capture_default_str();
  app->add_option("--gamma-2", m.loss.gamma_2, "Weight of the consistency loss")->capture_default_str();
  app->add_option("--steps", t.steps, "Optimizer steps")->capture_default_str();
  app->add_option("--lr0", t.lr0, "Initial learning rate")->capture_default_str();
  app->add_option("--momentum", t.momentum, "SGD momentum")->capture_default_str();
  app->add_option("--weight-decay", t.weight_decay, "L2 weight decay")->capture_default_str();
  app->add_option("--batch-size", t.batch_size, "Spots per step (whole samples)")->capture_default_str();
}

class Logger {
 public:
  Logger(bool on, std::ostream& err) : on_(on), err_(err) {}
  template <typename... Args>
  void operator()(const Args&... args) const {
    if (!on_) return;
    (err_ << ... << args) << '\n';
  }

 private:
  bool on_;
  std::ostream& err_;
};

fs::path prepare_output(const Options& o) {
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<SampleStack> load_checked(const Options& o) {
  auto stacks = io::load_dataset(o.manifest);
  for (const auto& s : stacks) require_valid(s);
  if (stacks.empty()) throw DataError(o.manifest + ": manifest lists no samples");
  return stacks;
}

std::vector<SpatialGraph> graphs_for(const std::vector<SampleStack>& stacks, const Options& o) {
  std::vector<SpatialGraph> out;
  for (const auto& s : stacks) {
    if (!o.graph_dir.empty()) {
      const fs::path p = fs::path(o.graph_dir) / (s.sample_id + ".graph.tsv");
      if (!fs::exists(p)) throw DataError("graph file not found: " + p.string());
      out.push_back(read_graph_tsv(p, s.spot_ids()));
    } else if (o.graph_mode == "2d") {
      out.push_back(build_2d_graph(s, o.k_2d));
    } else {
      out.push_back(build_3d_graph(s, o.k_intra, o.k_cross));
    }
  }
  return out;
}

Mask known_for(const SampleStack& s, std::size_t index, const Options& o) {
  Mask known = s.known_mask();
  if (std::any_of(known.begin(), known.end(), [](bool b) { return b; })) return known;
  const auto summary = summarize({s}).front();
  const int layer = known_layer_for(summary, known_layer_rule_from_string(o.known_layer));
  return select_known_spots(s, layer, o.known_ratio, derive_seed(o.seed, 0x10000 + index));
}

ModelConfig model_config(const Options& o, const SampleStack& s) {
  ModelConfig m = o.model;
  m.use_cross_attention = !o.no_cross_attention;
  m.use_gat = !o.no_gat;
  m.feature_dim = static_cast<int>(s.features.cols());
  m.gene_count = static_cast<int>(s.expression.cols());
  m.validate();
  return m;
}

nlohmann::ordered_json model_json(const ModelConfig& m, const std::vector<std::string>& genes) {
  return {{"format_version", 1},
          {"feature_dim", m.feature_dim},
          {"hidden_dim", m.hidden_dim},
          {"gat_layers", m.gat_layers},
          {"gat_heads", m.gat_heads},
          {"transformer_heads", m.transformer_heads},
          {"gene_count", m.gene_count},
          {"use_cross_attention", m.use_cross_attention},
          {"use_gat", m.use_gat},
          {"genes", genes}};
}

ModelConfig read_model_json(const fs::path& path, std::vector<std::string>& genes) {
  std::ifstream in(path);
  if (!in) throw DataError("model description not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    ModelConfig m;
    m.feature_dim = j.at("feature_dim").get<int>();
    m.hidden_dim = j.at("hidden_dim").get<int>();
    m.gat_layers = j.at("gat_layers").get<int>();
    m.gat_heads = j.at("gat_heads").get<int>();
    m.transformer_heads = j.at("transformer_heads").get<int>();
    m.gene_count = j.at("gene_count").get<int>();
    m.use_cross_attention = j.at("use_cross_attention").get<bool>();
    m.use_gat = j.at("use_gat").get<bool>();
    genes = j.at("genes").get<std::vector<std::string>>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_predictions(const fs::path& dir, const SampleStack& s, const ImputationResult& r) {
  fs::create_directories(dir / "predictions");
  const auto ids = s.spot_ids();
  io::write_expression_tsv(r.predictions, ids, dir / "predictions" / (s.sample_id + ".expression.tsv"));
  write_provenance_tsv(r, ids, dir / "predictions" / (s.sample_id + ".provenance.tsv"));
}

void print_scores(std::ostream& out, const SampleStack& s, const ImputationResult& r, const Mask& known) {
  Mask unknown(known.size());
  for (std::size_t i = 0; i < known.size(); ++i) unknown[i] = !known[i];
  if (std::none_of(unknown.begin(), unknown.end(), [](bool b) { return b; })) return;
  const Matrix pred = select_rows(r.predictions.values, unknown);
  const Matrix truth = select_rows(s.expression.values, unknown);
  out << s.sample_id << "\tmse=" << io::format_value(metric_mse(pred, truth))
      << "\tmae=" << io::format_value(metric_mae(pred, truth))
      << "\tpcc=" << io::format_value(metric_pcc(pred, truth).value) << '\n';
}

int cmd_synth(const Options& o, std::ostream& out, const Logger& log) {
  if (o.samples < 1) throw UsageError("--samples must be positive");
  std::vector<SampleStack> stacks;
  for (int i = 0; i < o.samples; ++i) {
    SyntheticSpec spec = o.synth;
    spec.seed = derive_seed(o.seed, static_cast<std::uint64_t>(i));
    char id[32];
    std::snprintf(id, sizeof(id), "sample%02d", i);
    spec.sample_id = id;
    log("generating ", spec.sample_id);
    stacks.push_back(generate_synthetic(spec));
  }
  const fs::path manifest = io::save_dataset(stacks, prepare_output(o));
  out << manifest.string() << '\n';
  return kExitOk;
}

int cmd_validate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto stacks = io::load_dataset(o.manifest);
  int bad = 0;
  for (const auto& s : stacks) {
    const auto violations = validate_stack(s);
    if (violations.empty()) {
      out << s.sample_id << "\tok\tlayers=" << s.layers.size() << "\tspots=" << s.spot_count()
          << "\tgenes=" << s.expression.cols() << '\n';
      continue;
    }
    ++bad;
    for (const auto& v : violations) err << s.sample_id << "\t" << to_string(v.kind) << "\t" << v.message << '\n';
  }
  return bad == 0 ? kExitOk : kExitData;
}

int cmd_build_graph(const Options& o, std::ostream& out, const Logger& log) {
  const auto stacks = load_checked(o);
  Options built = o;
  built.graph_dir.clear();
  const auto graphs = graphs_for(stacks, built);
  const fs::path dir = prepare_output(o);
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const fs::path p = dir / (stacks[i].sample_id + ".graph.tsv");
    write_graph_tsv(graphs[i], stacks[i].spot_ids(), p);
    log("wrote ", p.string());
    out << stacks[i].sample_id << "\tedges=" << graphs[i].edges.size() << '\n';
  }
  return kExitOk;
}

int cmd_impute(const Options& o, std::ostream& out, const Logger& log) {
  if (o.impute_method != "propagation" && o.impute_method != "overlap" && o.impute_method != "similarity") {
    throw UsageError("--method must be propagation, overlap or similarity");
  }
  const auto stacks = load_checked(o);
  const auto graphs = o.impute_method == "propagation" ? graphs_for(stacks, o) : std::vector<SpatialGraph>{};
  const fs::path dir = prepare_output(o);
  PropagationConfig prop;
  prop.iterations = o.iterations;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const auto& s = stacks[i];
    const Mask known = known_for(s, i, o);
    log("imputing ", s.sample_id);
    ImputationResult r;
    if (o.impute_method == "propagation") {
      r = propagate_labels(graphs[i], s.expression, known, prop);
    } else if (o.impute_method == "overlap") {
      r = overlap_impute(s, s.expression, known);
    } else {
      r = similarity_impute(s.features, s.expression, known, o.similarity_m);
    }
    write_predictions(dir, s, r);
    print_scores(out, s, r, known);
  }
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, const Logger& log) {
  const auto stacks = load_checked(o);
  const auto graphs = graphs_for(stacks, o);
  const ModelConfig mc = model_config(o, stacks.front());
  std::vector<TrainingSample> samples;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    if (stacks[i].expression.gene_names != stacks.front().expression.gene_names) {
      throw DataError("sample " + stacks[i].sample_id + " has a different gene list");
    }
    samples.push_back(make_training_sample(stacks[i], graphs[i], Mask(stacks[i].spot_count(), true)));
  }
  Msagnet model(mc, derive_seed(o.seed, 0x20000));
  TrainConfig tc = o.train;
  tc.seed = derive_seed(o.seed, 0x30000);
  log("training ", tc.steps, " steps on ", samples.size(), " samples");
  const TrainResult result = train(model, samples, tc);

  const fs::path dir = prepare_output(o);
  ad::save_checkpoint(model.parameters(), dir / "model.ckpt");
  std::ofstream(dir / "model.json") << model_json(mc, stacks.front().expression.gene_names).dump(2) << '\n';
  write_trace_csv(result.trace, dir / "trace.csv");
  out << "loss\tfirst=" << io::format_value(result.trace.front().total)
      << "\tfinal=" << io::format_value(result.trace.back().total) << '\n';
  return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out, const Logger& log) {
  if (!(o.alpha >= 0.0 && o.alpha <= 1.0)) throw UsageError("--alpha must lie in [0, 1]");
  std::vector<std::string> genes;
  const ModelConfig mc = read_model_json(fs::path(o.model_dir) / "model.json", genes);
  Msagnet model(mc, 0);
  ad::load_checkpoint(model.parameters(), fs::path(o.model_dir) / "model.ckpt");
  const auto stacks = load_checked(o);
  const auto graphs = graphs_for(stacks, o);
  const fs::path dir = prepare_output(o);
  PropagationConfig prop;
  prop.iterations = o.iterations;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const auto& s = stacks[i];
    if (s.expression.gene_names != genes) throw DataError("sample " + s.sample_id + " genes differ from the model's");
    const Mask known = known_for(s, i, o);
    log("predicting ", s.sample_id);
    const ImputationResult r = predict_with_imputation(s, graphs[i], model, known, o.alpha, prop);
    write_predictions(dir, s, r);
    print_scores(out, s, r, known);
  }
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out, const Logger& log) {
  const auto stacks = load_checked(o);
  ExperimentConfig cfg;
  cfg.method = method_from_string(o.method);
  cfg.n_folds = o.folds;
  cfg.known_ratio = o.known_ratio;
  cfg.known_layer = known_layer_rule_from_string(o.known_layer);
  cfg.seed = o.seed;
  cfg.k_intra = o.k_intra;
  cfg.k_cross = o.k_cross;
  cfg.k_2d = o.k_2d;
  cfg.propagation.iterations = o.iterations;
  cfg.similarity_m = o.similarity_m;
  cfg.model = o.model;
  cfg.model.use_cross_attention = !o.no_cross_attention;
  cfg.model.use_gat = !o.no_gat;
  cfg.train = o.train;
  if (o.fixed_alpha >= 0.0) cfg.fusion_alpha = o.fixed_alpha;
  cfg.jobs = o.jobs;
  log("evaluating ", to_string(cfg.method), " with ", cfg.n_folds, " folds");
  const RunReport report = run_experiment(stacks, cfg);
  write_run_outputs(report, prepare_output(o));
  out << "aggregate\tmse=" << io::format_value(report.mse) << "\tmae=" << io::format_value(report.mae)
      << "\tpcc=" << io::format_value(report.pcc) << '\n';
  return kExitOk;
}

int cmd_heatmap(const Options& o, std::ostream& out) {
  const auto stacks = io::load_dataset(o.manifest);
  const auto it = std::find_if(stacks.begin(), stacks.end(), [&](const SampleStack& s) { return s.sample_id == o.sample; });
  if (it == stacks.end()) throw DataError("sample " + o.sample + " not in " + o.manifest);
  const SampleStack& s = *it;
  ExpressionMatrix values = s.expression;
  if (!o.predictions.empty()) {
    const auto table = io::read_expression_tsv(o.predictions);
    if (table.spot_ids != s.spot_ids()) {
      throw DataError(o.predictions + ": spot ids do not match sample " + s.sample_id);
    }
    values = table.expression;
  }
  const auto g = std::find(values.gene_names.begin(), values.gene_names.end(), o.gene);
  if (g == values.gene_names.end()) throw DataError("gene " + o.gene + " not found");
  const Eigen::Index col = g - values.gene_names.begin();
  std::vector<double> column(static_cast<std::size_t>(values.rows()));
  for (Eigen::Index i = 0; i < values.rows(); ++i) column[static_cast<std::size_t>(i)] = values.values(i, col);
  const fs::path path = prepare_output(o) / (s.sample_id + "_" + o.gene + ".svg");
  export_heatmap(s, column, o.gene, path);
  out << path.string() << '\n';
  return kExitOk;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Turns the lines of the subcommand's --config file into flags placed right
// after the subcommand name, ahead of the user's own flags.
std::vector<std::string> expand_config(CLI::App& app, const std::vector<std::string>& args) {
  const auto sub_it = std::find_if(args.begin(), args.end(), [](const std::string& a) { return !a.starts_with("-"); });
  if (sub_it == args.end()) return args;
  CLI::App* sub = app.get_subcommand_no_throw(*sub_it);
  if (sub == nullptr) return args;

  std::string path;
  for (auto it = sub_it + 1; it != args.end(); ++it) {
    if (*it == "--help" || *it == "-h") return args;
    if (*it == "--config" && it + 1 != args.end()) path = *(it + 1);
    if (it->starts_with("--config=")) path = it->substr(9);
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot read config file " + path);
  std::vector<std::string> flags;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    const std::string where = path + ":" + std::to_string(line_no);
    line = trim(line.substr(0, line.find_first_of("#;")));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--config", where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    const CLI::Option* opt = key == "config" ? nullptr : sub->get_option_no_throw("--" + key);
    if (opt == nullptr || key == "help") {
      throw CLI::ValidationError("--config", where + ": unknown key '" + key + "' for " + sub->get_name());
    }
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1" || value == "yes") {
        flags.push_back("--" + key);
      } else if (value != "false" && value != "0" && value != "no") {
        throw CLI::ValidationError("--config", where + ": '" + key + "' takes true or false");
      }
      continue;
    }
    flags.push_back("--" + key);
    flags.push_back(value);
  }
  std::vector<std::string> out(args.begin(), sub_it + 1);
  out.insert(out.end(), flags.begin(), flags.end());
  out.insert(out.end(), sub_it + 1, args.end());
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Spot-level 3D graphs, cross-layer imputation and evaluation for serial-section spatial transcriptomics",
               "st3d"};
  app.require_subcommand(1);
  // Later values win, so command-line flags override config-file defaults.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto* synth = app.add_subcommand("synth", "Generate synthetic multi-layer samples");
  add_common(synth, o, true);
  synth->add_option("--samples", o.samples, "Number of samples")->capture_default_str();
  synth->add_option("--layers", o.synth.layers, "Layers per sample")->capture_default_str();
  synth->add_option("--spots", o.synth.spots_per_layer, "Spots per layer")->capture_default_str();
  synth->add_option("--genes", o.synth.genes, "Genes")->capture_default_str();
  synth->add_option("--rho", o.synth.rho, "Cross-layer correlation of gene fields, in [0, 1]")->capture_default_str();
  synth->add_option("--jitter", o.synth.jitter, "Registration error sd in pixels")->capture_default_str();
  synth->add_option("--length-scale", o.synth.length_scale, "Spatial smoothness in pixels")->capture_default_str();
  synth->add_option("--feature-dim", o.synth.feature_dim, "Feature width")->capture_default_str();
  synth->add_option("--feature-noise", o.synth.feature_noise, "Feature noise sd")->capture_default_str();

  auto* validate = app.add_subcommand("validate", "Check a dataset for structural defects");
  add_common(validate, o, false);
  add_manifest(validate, o);

  auto* build_graph = app.add_subcommand("build-graph", "Write each sample's spot graph as TSV");
  add_common(build_graph, o, true);
  add_manifest(build_graph, o);
  add_graph_options(build_graph, o);

  auto* impute = app.add_subcommand("impute", "Fill unknown spots with a non-learned method");
  add_common(impute, o, true);
  add_manifest(impute, o);
  add_graph_options(impute, o);
  add_known_options(impute, o);
  impute->add_option("--graphs", o.graph_dir, "Directory of graphs from build-graph");
  impute->add_option("--method", o.impute_method, "propagation, overlap or similarity")->capture_default_str();
  impute->add_option("--similarity-m", o.similarity_m, "Neighbors for the similarity method")->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Train the graph-attention model on every spot of every sample");
  add_common(train_cmd, o, true);
  add_manifest(train_cmd, o);
  add_graph_options(train_cmd, o);
  add_model_options(train_cmd, o);
  train_cmd->add_option("--graphs", o.graph_dir, "Directory of graphs from build-graph");

  auto* predict = app.add_subcommand("predict", "Predict expression with a trained model fused with propagation");
  add_common(predict, o, true);
  add_manifest(predict, o);
  add_graph_options(predict, o);
  add_known_options(predict, o);
  predict->add_option("--graphs", o.graph_dir, "Directory of graphs from build-graph");
  predict->add_option("--model", o.model_dir, "Directory written by train")->required();
  predict->add_option("--alpha", o.alpha, "Weight of the model prediction in the fusion")->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "Cross-validated evaluation with a JSON report");
  add_common(evaluate, o, true);
  add_manifest(evaluate, o);
  add_graph_options(evaluate, o);
  add_known_options(evaluate, o);
  add_model_options(evaluate, o);
  evaluate->add_option("--method", o.method, "asign3d, asign2d, overlap, similarity or propagation_only")
      ->capture_default_str();
  evaluate->add_option("--folds", o.folds, "Cross-validation folds")->capture_default_str();
  evaluate->add_option("--jobs", o.jobs, "Folds run in parallel")->capture_default_str();
  evaluate->add_option("--alpha", o.fixed_alpha, "Fixed fusion weight; default picks it on a validation sample");
  evaluate->add_option("--similarity-m", o.similarity_m, "Neighbors for the similarity method")->capture_default_str();

  auto* heatmap = app.add_subcommand("heatmap", "Render one gene of one sample as SVG");
  add_common(heatmap, o, true);
  add_manifest(heatmap, o);
  heatmap->add_option("--sample", o.sample, "Sample id")->required();
  heatmap->add_option("--gene", o.gene, "Gene name")->required();
  heatmap->add_option("--predictions", o.predictions, "Expression TSV to draw instead of the measured values");

  try {
    const std::vector<std::string> expanded = expand_config(app, args);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  const Logger log(o.verbose, err);
  try {
    if (synth->parsed()) return cmd_synth(o, out, log);
    if (validate->parsed()) return cmd_validate(o, out, err);
    if (build_graph->parsed()) return cmd_build_graph(o, out, log);
    if (impute->parsed()) return cmd_impute(o, out, log);
    if (train_cmd->parsed()) return cmd_train(o, out, log);
    if (predict->parsed()) return cmd_predict(o, out, log);
    if (evaluate->parsed()) return cmd_evaluate(o, out, log);
    if (heatmap->parsed()) return cmd_heatmap(o, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace st3d::cli
