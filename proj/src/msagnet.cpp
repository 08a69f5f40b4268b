#include "st3d/msagnet.hpp"

#include "st3d/error.hpp"
#include "st3d/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace st3d {

using ad::Tensor;

void ModelConfig::validate() const {
  if (feature_dim < 1 || hidden_dim < 1 || gene_count < 2 || gat_layers < 1 || gat_heads < 1 ||
      transformer_heads < 1) {
    throw UsageError("model config: sizes must be positive and gene_count at least 2");
  }
  if (hidden_dim % gat_heads != 0 || hidden_dim % transformer_heads != 0) {
    throw UsageError("model config: hidden_dim " + std::to_string(hidden_dim) +
                     " must be divisible by the head counts");
  }
}

ModelConfig ModelConfig::toy() {
  ModelConfig cfg;
  cfg.hidden_dim = 32;
  cfg.gat_heads = 2;
  cfg.transformer_heads = 2;
  return cfg;
}

TrainConfig TrainConfig::toy() {
  TrainConfig cfg;
  cfg.lr0 = 0.02;
  cfg.batch_size = 32;
  cfg.steps = 200;
  return cfg;
}

void TrainConfig::validate() const {
  if (!(lr0 >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0) ||
      !(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0) || batch_size < 1 || steps < 1) {
    throw UsageError("train config: invalid learning-rate, momentum, decay, batch or step settings");
  }
}

double cosine_lr(const TrainConfig& cfg, int step) {
  if (cfg.steps <= 1) return cfg.lr0;
  const double lr_min = cfg.final_lr_fraction * cfg.lr0;
  const double progress = static_cast<double>(std::clamp(step, 0, cfg.steps - 1)) / (cfg.steps - 1);
  return lr_min + 0.5 * (cfg.lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace ad {

Tensor cross_attention_fuse(const Tensor& query, const Tensor& key_value) {
  if (query.cols() != key_value.cols()) {
    throw UsageError("cross_attention_fuse: query width " + std::to_string(query.cols()) +
                     " differs from key width " + std::to_string(key_value.cols()));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.cols()));
  return attention(query, key_value, key_value, inv_sqrt_d);
}

}  // namespace ad

ad::NeighborLists attention_neighbors(const SpatialGraph& graph) {
  const Adjacency adj = symmetrize(graph);
  ad::NeighborLists out(adj.node_count());
  for (std::size_t i = 0; i < adj.node_count(); ++i) {
    auto& list = out[i];
    list.push_back(static_cast<Eigen::Index>(i));
    for (const auto& nb : adj.neighbors[i]) list.push_back(static_cast<Eigen::Index>(nb.index));
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return out;
}

Tensor gat_layer(const Tensor& features, const ad::NeighborLists& neighbors, const std::vector<GatHeadParams>& heads) {
  if (static_cast<Eigen::Index>(neighbors.size()) != features.rows()) {
    throw UsageError("gat_layer: " + std::to_string(neighbors.size()) + " neighbor lists for " +
                     std::to_string(features.rows()) + " nodes");
  }
  std::vector<Tensor> outs;
  outs.reserve(heads.size());
  for (const auto& h : heads) {
    Tensor wh = ad::matmul(features, h.weight);
    outs.push_back(ad::elu(ad::graph_attention(wh, h.attn_src, h.attn_dst, neighbors, 0.2)));
  }
  return outs.size() == 1 ? outs.front() : ad::concat_cols(outs);
}

ModelInputs ModelInputs::from_stack(const SampleStack& stack, const SpatialGraph& graph) {
  const auto n = static_cast<Eigen::Index>(stack.spot_count());
  if (graph.node_count != static_cast<std::size_t>(n)) {
    throw UsageError("graph has " + std::to_string(graph.node_count) + " nodes for " + std::to_string(n) + " spots");
  }
  if (stack.features.rows() != n || stack.region_features.rows() != n || stack.global_features.rows() != n) {
    throw UsageError("sample " + stack.sample_id + " needs spot, region and global features for every spot");
  }
  ModelInputs in;
  in.f_s = stack.features.values;
  in.f_r = stack.region_features.values;
  in.f_g = stack.global_features.values;
  in.neighbors = attention_neighbors(graph);
  return in;
}

Msagnet::Msagnet(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  ad::Rng rng(seed);
  const Eigen::Index fd = cfg_.feature_dim;
  const Eigen::Index d = cfg_.hidden_dim;
  const Eigen::Index genes = cfg_.gene_count;

  in_s_w_ = params_.add_weight("input.spot.weight", fd, d, rng);
  in_s_b_ = params_.add_zeros("input.spot.bias", 1, d);
  in_r_w_ = params_.add_weight("input.region.weight", fd, d, rng);
  in_r_b_ = params_.add_zeros("input.region.bias", 1, d);
  in_g_w_ = params_.add_weight("input.global.weight", fd, d, rng);
  in_g_b_ = params_.add_zeros("input.global.bias", 1, d);

  const Eigen::Index head_dim = d / cfg_.gat_heads;
  for (int l = 0; l < cfg_.gat_layers; ++l) {
    const Eigen::Index in_dim = l == 0 ? (cfg_.use_cross_attention ? 3 * d : d) : d;
    std::vector<GatHeadParams> heads;
    for (int k = 0; k < cfg_.gat_heads; ++k) {
      const std::string prefix = "gat." + std::to_string(l) + ".head." + std::to_string(k);
      GatHeadParams h;
      h.weight = params_.add_weight(prefix + ".weight", in_dim, head_dim, rng);
      h.attn_src = params_.add_weight(prefix + ".attn_src", head_dim, 1, rng);
      h.attn_dst = params_.add_weight(prefix + ".attn_dst", head_dim, 1, rng);
      heads.push_back(std::move(h));
    }
    gat_.push_back(std::move(heads));

    const std::string prefix = "transformer." + std::to_string(l);
    TransformerParams t;
    t.ln1_gain = params_.add_constant(prefix + ".ln1.gain", Matrix::Ones(1, d));
    t.ln1_bias = params_.add_zeros(prefix + ".ln1.bias", 1, d);
    t.wq = params_.add_weight(prefix + ".attn.wq", d, d, rng);
    t.wk = params_.add_weight(prefix + ".attn.wk", d, d, rng);
    t.wv = params_.add_weight(prefix + ".attn.wv", d, d, rng);
    t.wo = params_.add_weight(prefix + ".attn.wo", d, d, rng);
    t.bo = params_.add_zeros(prefix + ".attn.bo", 1, d);
    t.ln2_gain = params_.add_constant(prefix + ".ln2.gain", Matrix::Ones(1, d));
    t.ln2_bias = params_.add_zeros(prefix + ".ln2.bias", 1, d);
    t.ff1 = params_.add_weight(prefix + ".ff1.weight", d, 2 * d, rng);
    t.ff1_bias = params_.add_zeros(prefix + ".ff1.bias", 1, 2 * d);
    t.ff2 = params_.add_weight(prefix + ".ff2.weight", 2 * d, d, rng);
    t.ff2_bias = params_.add_zeros(prefix + ".ff2.bias", 1, d);
    transformers_.push_back(std::move(t));
  }
  stage_logits_ = params_.add_zeros("aggregate.logits", 1, cfg_.gat_layers);

  head_s_w_ = params_.add_weight("head.spot.weight", d, genes, rng);
  head_s_b_ = params_.add_zeros("head.spot.bias", 1, genes);
  head_r_w_ = params_.add_weight("head.region.weight", d, genes, rng);
  head_r_b_ = params_.add_zeros("head.region.bias", 1, genes);
  head_g_w_ = params_.add_weight("head.global.weight", d, genes, rng);
  head_g_b_ = params_.add_zeros("head.global.bias", 1, genes);
}

Tensor Msagnet::project(const Tensor& x, const Tensor& w, const Tensor& b) const {
  return ad::add_row(ad::matmul(x, w), b);
}

Tensor Msagnet::transformer(const Tensor& x, const TransformerParams& p) const {
  const Eigen::Index d = cfg_.hidden_dim;
  const Eigen::Index dh = d / cfg_.transformer_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor h = ad::add_row(ad::mul_row(ad::layer_norm_rows(x), p.ln1_gain), p.ln1_bias);
  Tensor q = ad::matmul(h, p.wq);
  Tensor k = ad::matmul(h, p.wk);
  Tensor v = ad::matmul(h, p.wv);
  std::vector<Tensor> heads;
  for (int i = 0; i < cfg_.transformer_heads; ++i) {
    Tensor qi = ad::slice_cols(q, i * dh, dh);
    Tensor ki = ad::slice_cols(k, i * dh, dh);
    Tensor vi = ad::slice_cols(v, i * dh, dh);
    heads.push_back(ad::attention(qi, ki, vi, inv_sqrt));
  }
  Tensor mixed = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
  Tensor x1 = ad::add(x, project(mixed, p.wo, p.bo));

  Tensor h2 = ad::add_row(ad::mul_row(ad::layer_norm_rows(x1), p.ln2_gain), p.ln2_bias);
  Tensor ff = project(ad::elu(project(h2, p.ff1, p.ff1_bias)), p.ff2, p.ff2_bias);
  return ad::add(x1, ff);
}

Msagnet::Outputs Msagnet::forward_tensors(const ModelInputs& in) const {
  const Eigen::Index n = in.f_s.rows();
  for (const Matrix* f : {&in.f_s, &in.f_r, &in.f_g}) {
    if (f->rows() != n || f->cols() != cfg_.feature_dim) {
      throw UsageError("model expects " + std::to_string(n) + "x" + std::to_string(cfg_.feature_dim) +
                       " features, got " + std::to_string(f->rows()) + "x" + std::to_string(f->cols()));
    }
  }
  if (static_cast<Eigen::Index>(in.neighbors.size()) != n) throw UsageError("graph does not match feature rows");

  Tensor hs = project(Tensor::constant(in.f_s), in_s_w_, in_s_b_);
  Tensor fused = hs;
  if (cfg_.use_cross_attention) {
    Tensor hr = project(Tensor::constant(in.f_r), in_r_w_, in_r_b_);
    Tensor hg = project(Tensor::constant(in.f_g), in_g_w_, in_g_b_);
    fused = ad::concat_cols({hs, ad::cross_attention_fuse(hs, hr), ad::cross_attention_fuse(hs, hg)});
  }

  // Without graph attention every node attends only to itself, which reduces
  // each stage to a per-spot dense layer.
  ad::NeighborLists self_only;
  if (!cfg_.use_gat) {
    for (Eigen::Index i = 0; i < n; ++i) self_only.push_back({i});
  }
  const ad::NeighborLists& neighbors = cfg_.use_gat ? in.neighbors : self_only;

  Tensor x = fused;
  std::vector<Tensor> stages;
  for (int l = 0; l < cfg_.gat_layers; ++l) {
    x = transformer(gat_layer(x, neighbors, gat_[static_cast<std::size_t>(l)]), transformers_[static_cast<std::size_t>(l)]);
    stages.push_back(x);
  }
  Tensor weights = ad::softmax_rows(stage_logits_);
  Tensor z = ad::scale_by(stages[0], ad::slice_cols(weights, 0, 1));
  for (int l = 1; l < cfg_.gat_layers; ++l) {
    z = ad::add(z, ad::scale_by(stages[static_cast<std::size_t>(l)], ad::slice_cols(weights, l, 1)));
  }
  return {project(z, head_s_w_, head_s_b_), project(z, head_r_w_, head_r_b_), project(z, head_g_w_, head_g_b_)};
}

Predictions Msagnet::forward(const ModelInputs& in) const {
  const Outputs out = forward_tensors(in);
  return {out.p_s.value(), out.p_r.value(), out.p_g.value()};
}

Tensor pcc_loss(const Tensor& pred, const Tensor& target) {
  return ad::sub(Tensor::constant(Matrix::Ones(1, 1)), ad::mean(ad::pearson_rows(pred, target)));
}

int constant_rows(const Matrix& pred, const Matrix& target) {
  int count = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const bool flat_p = pred.row(i).maxCoeff() == pred.row(i).minCoeff();
    const bool flat_t = target.row(i).maxCoeff() == target.row(i).minCoeff();
    if (flat_p || flat_t) ++count;
  }
  return count;
}

LossTerms total_loss(const Tensor& p_s, const Tensor& p_r, const Tensor& p_g, const Matrix& y_s, const Matrix& y_r,
                     const Matrix& y_g, const LossWeights& w) {
  const Tensor ys = Tensor::constant(y_s);
  const Tensor yr = Tensor::constant(y_r);
  const Tensor yg = Tensor::constant(y_g);

  const Tensor mse = ad::mean(ad::square(ad::sub(p_s, ys)));
  const Tensor ps = pcc_loss(p_s, ys);
  const Tensor pr = pcc_loss(p_r, yr);
  const Tensor pg = pcc_loss(p_g, yg);
  const Tensor psr = pcc_loss(p_s, p_r);
  const Tensor psg = pcc_loss(p_s, p_g);

  const Tensor l_p = ad::add(ad::add(mse, ad::scale(ps, w.lambda_s)), ad::add(ad::scale(pr, w.lambda_r), ad::scale(pg, w.lambda_g)));
  const Tensor l_c = ad::add(ad::scale(psr, w.lambda_1), ad::scale(psg, w.lambda_2));

  LossTerms out;
  out.total = ad::add(ad::scale(l_p, w.gamma_1), ad::scale(l_c, w.gamma_2));
  out.l_p = l_p.item();
  out.l_c = l_c.item();
  out.mse = mse.item();
  out.p_s = ps.item();
  out.p_r = pr.item();
  out.p_g = pg.item();
  out.p_sr = psr.item();
  out.p_sg = psg.item();
  out.constant_rows = constant_rows(p_s.value(), y_s);
  return out;
}

void SgdMomentum::step(ad::ParameterStore& params, double lr) {
  const auto& ps = params.parameters();
  if (velocity_.empty()) {
    for (const auto& p : ps) velocity_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
  }
  if (velocity_.size() != ps.size()) throw UsageError("optimizer state does not match the parameter list");
  for (std::size_t k = 0; k < ps.size(); ++k) {
    ad::Tensor t = ps[k].tensor;
    Matrix g = t.grad();
    g += weight_decay_ * t.value();
    velocity_[k] = momentum_ * velocity_[k] + g;
    t.mutable_value() -= lr * velocity_[k];
  }
}

TrainingSample make_training_sample(const SampleStack& stack, const SpatialGraph& graph, const Mask& labeled) {
  const auto n = stack.spot_count();
  if (labeled.size() != n) throw UsageError("labeled mask size does not match spot count");
  TrainingSample s;
  s.sample_id = stack.sample_id;
  s.spot_ids = stack.spot_ids();
  s.inputs = ModelInputs::from_stack(stack, graph);
  for (std::size_t i = 0; i < n; ++i) {
    if (labeled[i]) s.labeled_rows.push_back(static_cast<Eigen::Index>(i));
  }
  const Membership region = restrict_membership(patch_membership(stack, kRegionPatchSide), labeled);
  const Membership global = restrict_membership(patch_membership(stack, kGlobalPatchSide), labeled);
  // Unlabeled rows are zeroed so that no hidden label can enter an aggregate.
  Matrix y = stack.expression.values;
  for (std::size_t i = 0; i < n; ++i) {
    if (!labeled[i]) y.row(static_cast<Eigen::Index>(i)).setZero();
  }
  const LevelLabels levels = aggregate_levels(y, region, global);
  s.y_s.resize(static_cast<Eigen::Index>(s.labeled_rows.size()), y.cols());
  s.y_r.resizeLike(s.y_s);
  s.y_g.resizeLike(s.y_s);
  for (std::size_t k = 0; k < s.labeled_rows.size(); ++k) {
    const auto row = s.labeled_rows[k];
    s.y_s.row(static_cast<Eigen::Index>(k)) = y.row(row);
    s.y_r.row(static_cast<Eigen::Index>(k)) = levels.y_r.row(row);
    s.y_g.row(static_cast<Eigen::Index>(k)) = levels.y_g.row(row);
  }
  return s;
}

TrainResult train(Msagnet& model, const std::vector<TrainingSample>& samples, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].labeled_rows.empty()) usable.push_back(i);
  }
  if (usable.empty()) throw UsageError("train: no sample has labeled spots");

  ad::Rng rng(cfg.seed);
  const auto shuffle = [&rng](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
  };
  std::vector<std::size_t> order = usable;
  shuffle(order);
  std::size_t cursor = 0;

  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  TrainResult result;
  std::set<std::string> seen_ids;
  auto& params = model.parameters();

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> batch;
    std::size_t spots = 0;
    while (batch.size() < usable.size() && (batch.empty() || spots < static_cast<std::size_t>(cfg.batch_size))) {
      if (cursor == order.size()) {
        shuffle(order);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      if (std::find(batch.begin(), batch.end(), idx) != batch.end()) continue;
      batch.push_back(idx);
      spots += samples[idx].labeled_rows.size();
    }

    params.zero_grad();
    Tensor total;
    double l_p = 0.0, l_c = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t idx : batch) {
      const TrainingSample& s = samples[idx];
      const auto out = model.forward_tensors(s.inputs);
      const LossTerms terms =
          total_loss(ad::select_rows(out.p_s, s.labeled_rows), ad::select_rows(out.p_r, s.labeled_rows),
                     ad::select_rows(out.p_g, s.labeled_rows), s.y_s, s.y_r, s.y_g, model.config().loss);
      if (!std::isfinite(terms.total.item())) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step + 1 << " on sample " << s.sample_id << ": mse=" << terms.mse
            << " P(s)=" << terms.p_s << " P(r)=" << terms.p_r << " P(g)=" << terms.p_g << " P(s,r)=" << terms.p_sr
            << " P(s,g)=" << terms.p_sg;
        throw TrainingDivergedError(msg.str());
      }
      const Tensor scaled = ad::scale(terms.total, inv);
      total = total.defined() ? ad::add(total, scaled) : scaled;
      l_p += terms.l_p * inv;
      l_c += terms.l_c * inv;
      for (auto row : s.labeled_rows) seen_ids.insert(s.spot_ids[static_cast<std::size_t>(row)]);
    }
    total.backward();
    const double lr = cosine_lr(cfg, step);
    opt.step(params, lr);
    result.trace.push_back({step + 1, lr, total.item(), l_p, l_c});
  }
  result.loss_spot_ids.assign(seen_ids.begin(), seen_ids.end());
  return result;
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "step,lr,L,L_p,L_c\n";
  char buf[160];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", r.step, r.lr, r.total, r.l_p, r.l_c);
    out << buf;
  }
  if (!out) throw DataError("failed writing " + path.string());
}

ImputationResult predict_with_imputation(const SampleStack& stack, const SpatialGraph& graph, const Msagnet& model,
                                         const Mask& known, double alpha, const PropagationConfig& prop) {
  if (known.size() != stack.spot_count()) throw UsageError("known mask size does not match spot count");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("fusion alpha must lie in [0, 1]");
  const Predictions pred = model.forward(ModelInputs::from_stack(stack, graph));
  ExpressionMatrix model_pred{pred.p_s, stack.expression.gene_names};

  ImputationResult result;
  result.fusion_alpha = alpha;
  if (std::none_of(known.begin(), known.end(), [](bool b) { return b; })) {
    result.predictions = std::move(model_pred);
    result.provenance.assign(known.size(), Provenance::model);
    return result;
  }
  const ImputationResult propagated = propagate_labels(graph, stack.expression, known, prop);
  result.predictions = fuse_predictions(model_pred, propagated.predictions, alpha);
  result.provenance.assign(known.size(), Provenance::fused);
  for (std::size_t i = 0; i < known.size(); ++i) {
    if (!known[i]) continue;
    const auto row = static_cast<Eigen::Index>(i);
    result.predictions.values.row(row) = stack.expression.values.row(row);
    result.provenance[i] = Provenance::known;
  }
  result.iterations_run = propagated.iterations_run;
  return result;
}

}  // namespace st3d
